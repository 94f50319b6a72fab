use std::collections::HashMap;

/// Token polarities, one `token<TAB>integer` pair per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    polarity: HashMap<String, i32>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LexiconError {
    #[error("line {0}: expected `token<TAB>polarity`")]
    Syntax(usize),
    #[error("line {0}: polarity is not an integer")]
    Polarity(usize),
}

impl Lexicon {
    /// Duplicate tokens: the last line wins. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut polarity = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (token, value) = line.split_once('\t').ok_or(LexiconError::Syntax(idx + 1))?;
            let token = token.trim();
            if token.is_empty() {
                return Err(LexiconError::Syntax(idx + 1));
            }
            let value: i32 = value
                .trim()
                .parse()
                .map_err(|_| LexiconError::Polarity(idx + 1))?;
            polarity.insert(token.to_string(), value);
        }
        Ok(Self { polarity })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, i32)>) -> Self {
        Self {
            polarity: pairs.into_iter().map(|(t, p)| (t.to_string(), p)).collect(),
        }
    }

    pub fn polarity(&self, token: &str) -> Option<i32> {
        self.polarity.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.polarity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polarity.is_empty()
    }
}
