use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use super::{
    valid_model_name, CostModel, Lexicon, ModelDescriptor, ModelKind, DEFAULT_MAX_SEQ_LEN,
};
use crate::config::FlatConfig;

/// File inside each `<root>/<name>/<version>/` directory.
pub const CONFIG_FILE: &str = "model.config";

const CONFIG_KEYS: &[&str] = &["kind", "base_ms", "per_item_ms", "max_seq_len", "lexicon"];

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("model registry at {path} is unavailable: {source}")]
    Unavailable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A skipped registry entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryWarning {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LoadOptions {
    /// Replaces every model's configured cost.
    pub cost_override: Option<CostModel>,
}

/// Immutable snapshot of `<root>/<name>/<version>/model.config` entries.
#[derive(Debug, Clone)]
pub struct ModelRegistry {
    root: PathBuf,
    options: LoadOptions,
    entries: BTreeMap<(String, u32), Arc<ModelDescriptor>>,
    latest: BTreeMap<String, u32>,
    warnings: Vec<RegistryWarning>,
}

/// Snapshots compare by content; root and warnings are ignored.
impl PartialEq for ModelRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.latest == other.latest && self.entries == other.entries
    }
}

impl ModelRegistry {
    pub fn empty(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            options: LoadOptions::default(),
            entries: BTreeMap::new(),
            latest: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self, RegistryError> {
        Self::load_with(root, LoadOptions::default())
    }

    pub fn load_with(root: impl AsRef<Path>, options: LoadOptions) -> Result<Self, RegistryError> {
        let root = root.as_ref();
        let unavailable = |source| RegistryError::Unavailable {
            path: root.to_path_buf(),
            source,
        };
        let mut registry = Self::empty(root);
        registry.options = options;

        let mut names: Vec<_> = fs::read_dir(root)
            .map_err(unavailable)?
            .collect::<Result<_, _>>()
            .map_err(unavailable)?;
        names.sort_by_key(|e| e.file_name());

        for name_entry in names {
            let name_path = name_entry.path();
            if !name_path.is_dir() {
                registry.warn(&name_path, "not a model directory");
                continue;
            }
            let Some(name) = name_entry.file_name().to_str().map(str::to_string) else {
                registry.warn(&name_path, "model name is not valid UTF-8");
                continue;
            };
            if !valid_model_name(&name) {
                registry.warn(&name_path, "model name must match [a-z0-9_-]+");
                continue;
            }
            let versions = match fs::read_dir(&name_path) {
                Ok(it) => it.filter_map(Result::ok).collect::<Vec<_>>(),
                Err(e) => {
                    registry.warn(&name_path, &format!("unreadable: {e}"));
                    continue;
                }
            };
            for version_entry in versions {
                let path = version_entry.path();
                let version = version_entry
                    .file_name()
                    .to_str()
                    .and_then(parse_version);
                let Some(version) = version else {
                    registry.warn(&path, "non-numeric version directory");
                    continue;
                };
                if !path.is_dir() {
                    registry.warn(&path, "version entry is not a directory");
                    continue;
                }
                match load_descriptor(&name, version, &path, &registry.options) {
                    Ok(desc) => {
                        registry.entries.insert((name.clone(), version), Arc::new(desc));
                    }
                    Err(message) => registry.warn(&path, &message),
                }
            }
        }
        for (name, version) in registry.entries.keys() {
            let latest = registry.latest.entry(name.clone()).or_insert(*version);
            *latest = (*latest).max(*version);
        }
        for w in &registry.warnings {
            tracing::warn!(path = %w.path.display(), "skipping registry entry: {}", w.message);
        }
        Ok(registry)
    }

    /// Loads a fresh snapshot from `root` with this snapshot's options.
    /// On error the caller keeps serving from `self`.
    pub fn reload(&self, root: impl AsRef<Path>) -> Result<Self, RegistryError> {
        Self::load_with(root, self.options)
    }

    fn warn(&mut self, path: &Path, message: &str) {
        self.warnings.push(RegistryWarning {
            path: path.to_path_buf(),
            message: message.to_string(),
        });
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn options(&self) -> LoadOptions {
        self.options
    }

    pub fn warnings(&self) -> &[RegistryWarning] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latest(&self) -> &BTreeMap<String, u32> {
        &self.latest
    }

    pub fn latest_version(&self, name: &str) -> Option<u32> {
        self.latest.get(name).copied()
    }

    pub fn get(&self, name: &str, version: u32) -> Option<&Arc<ModelDescriptor>> {
        self.entries.get(&(name.to_string(), version))
    }

    /// Explicit version if given, else latest.
    pub fn resolve(&self, name: &str, version: Option<u32>) -> Option<&Arc<ModelDescriptor>> {
        let version = version.or_else(|| self.latest_version(name))?;
        self.get(name, version)
    }

    pub fn entries(&self) -> impl Iterator<Item = &Arc<ModelDescriptor>> {
        self.entries.values()
    }

    pub fn model_names(&self) -> impl Iterator<Item = &str> {
        self.latest.keys().map(String::as_str)
    }
}

fn parse_version(s: &str) -> Option<u32> {
    let v: u32 = s.parse().ok()?;
    (v >= 1 && v.to_string() == s).then_some(v)
}

fn load_descriptor(
    name: &str,
    version: u32,
    dir: &Path,
    options: &LoadOptions,
) -> Result<ModelDescriptor, String> {
    let config_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&config_path)
        .map_err(|e| format!("cannot read {CONFIG_FILE}: {e}"))?;
    let cfg = FlatConfig::parse(&text).map_err(|e| format!("{CONFIG_FILE}: {e}"))?;
    cfg.reject_unknown(CONFIG_KEYS)
        .map_err(|e| format!("{CONFIG_FILE}: {e}"))?;

    let kind: ModelKind = cfg
        .require("kind")
        .map_err(|e| e.to_string())?
        .parse()?;
    let base_ms = cfg.parse_opt::<f64>("base_ms").map_err(|e| e.to_string())?;
    let per_item_ms = cfg.parse_opt::<f64>("per_item_ms").map_err(|e| e.to_string())?;
    let cost = CostModel::new(base_ms.unwrap_or(0.0), per_item_ms.unwrap_or(0.0))?;
    let max_seq_len = cfg
        .parse_opt::<usize>("max_seq_len")
        .map_err(|e| e.to_string())?
        .unwrap_or(DEFAULT_MAX_SEQ_LEN);
    if max_seq_len == 0 {
        return Err("max_seq_len must be positive".into());
    }

    let (lexicon_path, lexicon) = match kind {
        ModelKind::Lexicon => {
            let rel = cfg.require("lexicon").map_err(|e| e.to_string())?;
            let path = dir.join(rel);
            let text = fs::read_to_string(&path)
                .map_err(|e| format!("cannot read lexicon {}: {e}", path.display()))?;
            let lexicon = Lexicon::parse(&text).map_err(|e| format!("lexicon: {e}"))?;
            (Some(path), lexicon)
        }
        ModelKind::SyntheticEcho => (None, Lexicon::default()),
    };

    Ok(ModelDescriptor {
        name: name.to_string(),
        version,
        kind,
        cost: options.cost_override.unwrap_or(cost),
        lexicon_path,
        max_seq_len,
        lexicon: Arc::new(lexicon),
    })
}

/// The single swap point between registry snapshots.
///
/// Readers clone the current `Arc` once per request and use it end to end.
#[derive(Debug)]
pub struct SharedRegistry {
    current: RwLock<Arc<ModelRegistry>>,
}

impl SharedRegistry {
    pub fn new(initial: ModelRegistry) -> Self {
        Self {
            current: RwLock::new(Arc::new(initial)),
        }
    }

    pub fn snapshot(&self) -> Arc<ModelRegistry> {
        self.current.read().expect("registry lock poisoned").clone()
    }

    /// Installs `next` and returns the snapshot it replaced.
    pub fn swap(&self, next: ModelRegistry) -> Arc<ModelRegistry> {
        let mut guard = self.current.write().expect("registry lock poisoned");
        std::mem::replace(&mut *guard, Arc::new(next))
    }
}
