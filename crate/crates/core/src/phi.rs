//! Rule-based PHI de-identification and text normalization.
//!
//! Patterns are frozen and ASCII-only (`\d`, `\b` and classes are
//! interpreted over ASCII, POSIX-style). Overlapping candidates are resolved
//! leftmost first, then longest, then by category order
//! SSN > PHONE > EMAIL > DATE > MRN.

use std::fmt;
use std::sync::LazyLock;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

/// Largest text accepted by [`Scrubber::deidentify`], in bytes.
pub const MAX_TEXT_BYTES: usize = 16 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PhiCategory {
    Ssn,
    Phone,
    Email,
    Date,
    Mrn,
}

impl PhiCategory {
    /// In tie-break priority order.
    pub const ALL: [PhiCategory; 5] = [
        PhiCategory::Ssn,
        PhiCategory::Phone,
        PhiCategory::Email,
        PhiCategory::Date,
        PhiCategory::Mrn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PhiCategory::Ssn => "SSN",
            PhiCategory::Phone => "PHONE",
            PhiCategory::Email => "EMAIL",
            PhiCategory::Date => "DATE",
            PhiCategory::Mrn => "MRN",
        }
    }

    pub fn placeholder(self) -> &'static str {
        match self {
            PhiCategory::Ssn => "[SSN]",
            PhiCategory::Phone => "[PHONE]",
            PhiCategory::Email => "[EMAIL]",
            PhiCategory::Date => "[DATE]",
            PhiCategory::Mrn => "[MRN]",
        }
    }

    /// The frozen pattern source for this category.
    pub fn pattern(self) -> &'static str {
        match self {
            PhiCategory::Ssn => r"\b\d{3}-\d{2}-\d{4}\b",
            PhiCategory::Phone => r"\b(\+1[ -]?)?(\(\d{3}\)|\d{3})[ -]?\d{3}[ -]?\d{4}\b",
            PhiCategory::Email => r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b",
            PhiCategory::Date => r"\b\d{4}-\d{2}-\d{2}\b|\b\d{1,2}/\d{1,2}/\d{2,4}\b",
            PhiCategory::Mrn => r"\bMRN[:# ]?\d{5,10}\b",
        }
    }
}

impl fmt::Display for PhiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct ScrubRule {
    pub category: PhiCategory,
    pub regex: Regex,
}

impl ScrubRule {
    pub fn placeholder(&self) -> &'static str {
        self.category.placeholder()
    }
}

/// A removed region of the original text, as half-open byte offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiSpan {
    pub start: usize,
    pub end: usize,
    pub category: PhiCategory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deidentified {
    pub scrubbed: String,
    pub spans: Vec<PhiSpan>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PhiError {
    #[error("input is not valid UTF-8")]
    InvalidUtf8,
    #[error("input is {0} bytes, limit is {MAX_TEXT_BYTES}")]
    TooLarge(usize),
}

/// Compiled rule table. Cheap to share; all methods take `&self`.
#[derive(Debug, Clone)]
pub struct Scrubber {
    rules: Vec<ScrubRule>,
}

static DEFAULT_SCRUBBER: LazyLock<Scrubber> = LazyLock::new(Scrubber::new);

impl Default for Scrubber {
    fn default() -> Self {
        Self::new()
    }
}

impl Scrubber {
    pub fn new() -> Self {
        let rules = PhiCategory::ALL
            .iter()
            .map(|&category| ScrubRule {
                category,
                regex: RegexBuilder::new(category.pattern())
                    .unicode(false)
                    .build()
                    .expect("frozen PHI pattern compiles"),
            })
            .collect();
        Self { rules }
    }

    /// Process-wide compiled instance.
    pub fn shared() -> &'static Scrubber {
        &DEFAULT_SCRUBBER
    }

    pub fn rules(&self) -> &[ScrubRule] {
        &self.rules
    }

    pub fn deidentify_bytes(&self, bytes: &[u8]) -> Result<Deidentified, PhiError> {
        let text = std::str::from_utf8(bytes).map_err(|_| PhiError::InvalidUtf8)?;
        self.deidentify(text)
    }

    pub fn deidentify(&self, text: &str) -> Result<Deidentified, PhiError> {
        if text.len() > MAX_TEXT_BYTES {
            return Err(PhiError::TooLarge(text.len()));
        }
        let spans = self.find_spans(text);
        let mut scrubbed = String::with_capacity(text.len());
        let mut cursor = 0;
        for span in &spans {
            scrubbed.push_str(&text[cursor..span.start]);
            scrubbed.push_str(span.category.placeholder());
            cursor = span.end;
        }
        scrubbed.push_str(&text[cursor..]);
        Ok(Deidentified { scrubbed, spans })
    }

    /// Non-overlapping spans sorted by start.
    ///
    /// Each step searches every rule from the current position with the full
    /// text as context, so word boundaries see the real neighbours.
    pub fn find_spans(&self, text: &str) -> Vec<PhiSpan> {
        let mut spans = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let mut best: Option<PhiSpan> = None;
            for rule in &self.rules {
                let Some(m) = rule.regex.find_at(text, pos) else {
                    continue;
                };
                let candidate = PhiSpan {
                    start: m.start(),
                    end: m.end(),
                    category: rule.category,
                };
                best = match best {
                    None => Some(candidate),
                    Some(b) => {
                        let cand_len = candidate.end - candidate.start;
                        let best_len = b.end - b.start;
                        // rules iterate in priority order, so ties keep `b`
                        if candidate.start < b.start
                            || (candidate.start == b.start && cand_len > best_len)
                        {
                            Some(candidate)
                        } else {
                            Some(b)
                        }
                    }
                };
            }
            match best {
                Some(span) => {
                    pos = span.end;
                    spans.push(span);
                }
                None => break,
            }
        }
        spans
    }

    /// True if any rule matches anywhere in `text`.
    pub fn has_match(&self, text: &str) -> bool {
        self.rules.iter().any(|r| r.regex.is_match(text))
    }
}

/// Lowercase ASCII tokens ready for the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NormalizedInput {
    tokens: Vec<String>,
    original_length: usize,
}

impl NormalizedInput {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Byte length of the text this input was built from.
    pub fn original_length(&self) -> usize {
        self.original_length
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Re-truncates to a shorter model limit.
    pub fn truncated(mut self, max_seq_len: usize) -> Self {
        self.tokens.truncate(max_seq_len);
        self
    }
}

/// Lowercases, splits on every run of non-alphanumeric characters, drops
/// empty tokens and keeps the first `max_seq_len`.
pub fn normalize(text: &str, max_seq_len: usize) -> NormalizedInput {
    let tokens = text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(max_seq_len)
        .map(str::to_ascii_lowercase)
        .collect();
    NormalizedInput {
        tokens,
        original_length: text.len(),
    }
}
