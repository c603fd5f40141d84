//! Service configuration: a flat `key = value` file with `CAPENGINE_*`
//! environment overrides.
//!
//! ```text
//! # comments start with '#'
//! listen = 127.0.0.1:8080
//! store_root = /var/lib/capengine
//! segmenter.endpoint = http://gpu-box:9000
//! refiner.fixture = refiner_script.txt
//! ```
//!
//! Every key `a.b_c` can be overridden by the variable `CAPENGINE_A_B_C`.
//! A backend kind with an endpoint and no explicit mode is remote.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use capengine_core::backends::{BackendConfig, BackendKind, BackendMode};
use capengine_core::chat::{ChatConfig, DEFAULT_MAX_TOOL_CALLS};
use capengine_core::geometry::{NormalizeOptions, DEFAULT_MARGIN_RATIO};
use capengine_core::paragraph::{ParagraphOptions, DEFAULT_MAX_REGIONS, DEFAULT_PARALLELISM};
use capengine_core::pipeline::{NonCotStrategy, PipelineConfig};
use thiserror::Error;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
/// Relative to the config file's directory.
pub const DEFAULT_STORE_ROOT: &str = "capengine-store";
pub const DEFAULT_CACHE_SIZE: usize = 64;
pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 20 * 1024 * 1024;
pub const ENV_PREFIX: &str = "CAPENGINE_";

const GLOBAL_KEYS: &[&str] = &[
    "listen",
    "store_root",
    "cache_size",
    "max_upload_bytes",
    "margin_ratio",
    "max_tool_calls",
    "max_regions",
    "parallelism",
    "forward_hull_box",
    "non_cot_strategy",
];

const BACKEND_KEYS: &[&str] = &[
    "mode",
    "endpoint",
    "timeout_ms",
    "max_attempts",
    "bearer_token",
    "fixture",
    "refusal_markers",
];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {message}")]
    Value { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub store_root: PathBuf,
    pub cache_size: usize,
    pub max_upload_bytes: usize,
    pub margin_ratio: f64,
    pub max_tool_calls: usize,
    pub max_regions: usize,
    pub parallelism: usize,
    pub forward_hull_box: bool,
    pub non_cot_strategy: NonCotStrategy,
    /// One entry per kind, in `BackendKind::ALL` order.
    pub backends: Vec<BackendConfig>,
}

impl ServiceConfig {
    /// All-mock configuration storing under `store_root`.
    pub fn new(store_root: impl Into<PathBuf>) -> Self {
        Self {
            listen: DEFAULT_LISTEN.parse().expect("valid default address"),
            store_root: store_root.into(),
            cache_size: DEFAULT_CACHE_SIZE,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            margin_ratio: DEFAULT_MARGIN_RATIO,
            max_tool_calls: DEFAULT_MAX_TOOL_CALLS,
            max_regions: DEFAULT_MAX_REGIONS,
            parallelism: DEFAULT_PARALLELISM,
            forward_hull_box: true,
            non_cot_strategy: NonCotStrategy::default(),
            backends: BackendKind::ALL.iter().map(|&k| BackendConfig::mock(k)).collect(),
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            margin_ratio: self.margin_ratio,
            normalize: NormalizeOptions { forward_hull_box: self.forward_hull_box, ..Default::default() },
            non_cot_strategy: self.non_cot_strategy,
        }
    }

    pub fn chat_config(&self) -> ChatConfig {
        ChatConfig { max_tool_calls: self.max_tool_calls, margin_ratio: self.margin_ratio, ..Default::default() }
    }

    pub fn paragraph_options(&self) -> ParagraphOptions {
        ParagraphOptions { max_regions: self.max_regions, parallelism: self.parallelism, ..Default::default() }
    }

    pub fn backend(&self, kind: BackendKind) -> &BackendConfig {
        self.backends.iter().find(|b| b.kind == kind).expect("one config per kind")
    }

    /// Reads `path` and applies environment overrides from the process.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_sources(&text, std::env::vars(), base)
    }

    /// Parses file text, then applies `CAPENGINE_*` pairs from `env`. Relative
    /// paths (store root, fixtures) resolve against `base_dir`.
    pub fn from_sources(
        text: &str,
        env: impl IntoIterator<Item = (String, String)>,
        base_dir: &Path,
    ) -> Result<Self, ConfigError> {
        let mut entries = parse_pairs(text)?;
        let env: BTreeMap<String, String> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        for key in known_keys() {
            if let Some(v) = env.get(&env_name(&key)) {
                entries.insert(key, v.clone());
            }
        }
        Self::from_entries(&entries, base_dir)
    }

    fn from_entries(entries: &BTreeMap<String, String>, base_dir: &Path) -> Result<Self, ConfigError> {
        let known = known_keys();
        if let Some(k) = entries.keys().find(|k| !known.contains(k)) {
            return Err(ConfigError::UnknownKey(k.clone()));
        }
        let get = |k: &str| entries.get(k).map(String::as_str);
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() { p } else { base_dir.join(p) }
        };

        let mut cfg = Self::new(resolve(get("store_root").unwrap_or(DEFAULT_STORE_ROOT)));
        if let Some(v) = get("listen") {
            cfg.listen = parse_value("listen", v)?;
        }
        if let Some(v) = get("cache_size") {
            cfg.cache_size = positive("cache_size", v)?;
        }
        if let Some(v) = get("max_upload_bytes") {
            cfg.max_upload_bytes = positive("max_upload_bytes", v)?;
        }
        if let Some(v) = get("margin_ratio") {
            cfg.margin_ratio = parse_value("margin_ratio", v)?;
            if !(cfg.margin_ratio.is_finite() && cfg.margin_ratio >= 0.0) {
                return Err(value_err("margin_ratio", "must be a non-negative number"));
            }
        }
        if let Some(v) = get("max_tool_calls") {
            cfg.max_tool_calls = parse_value("max_tool_calls", v)?;
        }
        if let Some(v) = get("max_regions") {
            cfg.max_regions = positive("max_regions", v)?;
        }
        if let Some(v) = get("parallelism") {
            cfg.parallelism = positive("parallelism", v)?;
        }
        if let Some(v) = get("forward_hull_box") {
            cfg.forward_hull_box = parse_value("forward_hull_box", v)?;
        }
        if let Some(v) = get("non_cot_strategy") {
            cfg.non_cot_strategy = match v {
                "crop" => NonCotStrategy::Crop,
                "whiten" => NonCotStrategy::Whiten,
                _ => return Err(value_err("non_cot_strategy", "expected crop or whiten")),
            };
        }

        for b in &mut cfg.backends {
            let kind = b.kind.as_str();
            let key = |field: &str| format!("{kind}.{field}");
            let get = |field: &str| entries.get(&key(field)).map(String::as_str);
            if let Some(v) = get("endpoint") {
                b.endpoint = Some(v.trim_end_matches('/').to_string());
                b.mode = BackendMode::Remote;
            }
            if let Some(v) = get("mode") {
                b.mode = match v {
                    "mock" => BackendMode::Mock,
                    "remote" => BackendMode::Remote,
                    _ => return Err(value_err(&key("mode"), "expected mock or remote")),
                };
                if b.mode == BackendMode::Mock {
                    b.endpoint = None;
                }
            }
            if let Some(v) = get("timeout_ms") {
                b.timeout_ms = positive(&key("timeout_ms"), v)? as u64;
            }
            if let Some(v) = get("max_attempts") {
                b.max_attempts = positive(&key("max_attempts"), v)? as u32;
            }
            if let Some(v) = get("bearer_token") {
                b.bearer_token = Some(v.to_string());
            }
            if let Some(v) = get("fixture") {
                b.fixture = Some(resolve(v));
            }
            if let Some(v) = get("refusal_markers") {
                b.refusal_markers =
                    v.split('|').map(str::trim).filter(|m| !m.is_empty()).map(String::from).collect();
            }
            b.validate().map_err(|e| value_err(&key("mode"), &e.to_string()))?;
        }
        Ok(cfg)
    }
}

/// `segmenter.timeout_ms` -> `CAPENGINE_SEGMENTER_TIMEOUT_MS`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

fn known_keys() -> Vec<String> {
    let mut keys: Vec<String> = GLOBAL_KEYS.iter().map(|s| s.to_string()).collect();
    for kind in BackendKind::ALL {
        keys.extend(BACKEND_KEYS.iter().map(|f| format!("{}.{f}", kind.as_str())));
    }
    keys
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn value_err(key: &str, message: &str) -> ConfigError {
    ConfigError::Value { key: key.to_string(), message: message.to_string() }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| value_err(key, &e.to_string()))
}

fn positive(key: &str, v: &str) -> Result<usize, ConfigError> {
    match parse_value::<usize>(key, v)? {
        0 => Err(value_err(key, "must be at least 1")),
        n => Ok(n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, env: &[(&str, &str)]) -> Result<ServiceConfig, ConfigError> {
        let env = env.iter().map(|(k, v)| (k.to_string(), v.to_string()));
        ServiceConfig::from_sources(text, env, Path::new("/etc/cap"))
    }

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = load("store_root = data\n", &[]).unwrap();
        assert_eq!(cfg.store_root, PathBuf::from("/etc/cap/data"));
        assert_eq!(cfg.cache_size, 64);
        assert_eq!(cfg.max_upload_bytes, 20 * 1024 * 1024);
        assert!(cfg.backends.iter().all(|b| b.mode == BackendMode::Mock));
    }

    #[test]
    fn file_values_and_env_overrides() {
        let text = "# demo\nstore_root=/srv\nlisten = 0.0.0.0:9000\nsegmenter.endpoint = http://seg:1/\nrefiner.fixture = s.txt\ncache_size = 3\n";
        let cfg = load(text, &[("CAPENGINE_CACHE_SIZE", "5"), ("CAPENGINE_CAPTIONER_ENDPOINT", "http://cap:2")]).unwrap();
        assert_eq!(cfg.listen.port(), 9000);
        assert_eq!(cfg.cache_size, 5);
        let seg = cfg.backend(BackendKind::Segmenter);
        assert_eq!(seg.mode, BackendMode::Remote);
        assert_eq!(seg.endpoint.as_deref(), Some("http://seg:1"));
        assert_eq!(cfg.backend(BackendKind::Captioner).mode, BackendMode::Remote);
        assert_eq!(cfg.backend(BackendKind::Refiner).fixture, Some(PathBuf::from("/etc/cap/s.txt")));
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(load("store_root=/a\nbogus=1", &[]), Err(ConfigError::UnknownKey("bogus".into())));
        assert_eq!(load("store_root=/a\nnot a pair", &[]), Err(ConfigError::Syntax { line: 2 }));
        assert_eq!(load("", &[]).unwrap().store_root, PathBuf::from("/etc/cap/capengine-store"));
        assert!(matches!(load("store_root=/a\ncache_size=0", &[]), Err(ConfigError::Value { .. })));
        assert!(matches!(load("store_root=/a\nvqa.mode=remote", &[]), Err(ConfigError::Value { .. })));
        assert!(matches!(load("store_root=/a\nlisten=nowhere", &[]), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn env_names() {
        assert_eq!(env_name("segmenter.timeout_ms"), "CAPENGINE_SEGMENTER_TIMEOUT_MS");
        assert_eq!(env_name("store_root"), "CAPENGINE_STORE_ROOT");
    }
}
