//! Effective configuration: command-line flags override environment
//! variables, which override the TOML file, which overrides built-in
//! defaults.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use kleio_core::embedder::{EmbedderBackend, EmbedderProfile};
use kleio_core::qa_pipeline::DEFAULT_GROUNDING_THRESHOLD;
use kleio_core::{ChunkingConfig, ModelProfile};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_EMBED_URL: &str = "KLEIO_EMBED_URL";
pub const ENV_EMBED_MODEL: &str = "KLEIO_EMBED_MODEL";
pub const ENV_LLM_URL: &str = "KLEIO_LLM_URL";
pub const ENV_LLM_KEY: &str = "KLEIO_LLM_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub store_dir: PathBuf,
    pub index_dir: PathBuf,
    pub grounding_threshold: f64,
    pub embedder: EmbedderProfile,
    pub model: ModelProfile,
    pub chunking: ChunkingConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            store_dir: PathBuf::from("kleio-data/store"),
            index_dir: PathBuf::from("kleio-data/index"),
            grounding_threshold: DEFAULT_GROUNDING_THRESHOLD,
            embedder: EmbedderProfile::default(),
            model: ModelProfile::default(),
            chunking: ChunkingConfig::default(),
        }
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub store_dir: Option<PathBuf>,
    pub index_dir: Option<PathBuf>,
    pub embed_url: Option<String>,
    pub embed_model: Option<String>,
    pub llm_url: Option<String>,
    pub model_id: Option<String>,
}

/// `~/.config/kleio/config.toml` under `home`.
pub fn default_config_path(home: &Path) -> PathBuf {
    home.join(".config/kleio/config.toml")
}

fn set_embed_url(cfg: &mut CliConfig, url: &str) {
    cfg.embedder.endpoint = Some(url.to_string());
    cfg.embedder.backend = EmbedderBackend::Http;
}

impl CliConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Loads `explicit` if given, else the default file if it exists, else
    /// defaults. A missing explicit file is an error.
    pub fn load_file(explicit: Option<&Path>, home: Option<&Path>) -> Result<Self, ConfigError> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => match home.map(default_config_path) {
                Some(p) if p.exists() => p,
                _ => return Ok(CliConfig::default()),
            },
        };
        let text = fs::read_to_string(&path).map_err(|source| ConfigError::Read {
            path: path.clone(),
            source,
        })?;
        Self::from_toml(&text, &path)
    }

    pub fn apply_env(&mut self, env: &HashMap<String, String>) {
        let get = |k: &str| env.get(k).filter(|v| !v.is_empty());
        if let Some(url) = get(ENV_EMBED_URL) {
            set_embed_url(self, url);
        }
        if let Some(model) = get(ENV_EMBED_MODEL) {
            self.embedder.model = model.clone();
        }
        if let Some(url) = get(ENV_LLM_URL) {
            self.model.endpoint = url.clone();
        }
        if let Some(key) = get(ENV_LLM_KEY) {
            self.model.api_key = Some(key.clone());
        }
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(d) = &o.store_dir {
            self.store_dir = d.clone();
        }
        if let Some(d) = &o.index_dir {
            self.index_dir = d.clone();
        }
        if let Some(url) = &o.embed_url {
            set_embed_url(self, url);
        }
        if let Some(m) = &o.embed_model {
            self.embedder.model = m.clone();
        }
        if let Some(url) = &o.llm_url {
            self.model.endpoint = url.clone();
        }
        if let Some(id) = &o.model_id {
            self.model.model_id = id.clone();
        }
    }

    /// File, then environment, then flags.
    pub fn resolve(
        explicit: Option<&Path>,
        home: Option<&Path>,
        env: &HashMap<String, String>,
        overrides: &Overrides,
    ) -> Result<Self, ConfigError> {
        let mut cfg = Self::load_file(explicit, home)?;
        cfg.apply_env(env);
        cfg.apply_overrides(overrides);
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    const FILE: &str = r#"
store_dir = "/data/store"
[model]
endpoint = "http://file/v1/chat/completions"
model_id = "xgen-7b"
[embedder]
model = "file-embed"
"#;

    #[test]
    fn defaults_without_any_source() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CliConfig::resolve(None, Some(dir.path()), &env(&[]), &Overrides::default()).unwrap();
        assert_eq!(cfg, CliConfig::default());
        assert!(cfg.model.is_mock());
        assert_eq!(cfg.embedder.backend, EmbedderBackend::Deterministic);
    }

    #[test]
    fn flag_beats_env_beats_file_beats_default() {
        let path = Path::new("config.toml");
        let mut cfg = CliConfig::from_toml(FILE, path).unwrap();
        assert_eq!(cfg.model.endpoint, "http://file/v1/chat/completions");
        assert_eq!(cfg.index_dir, CliConfig::default().index_dir);

        cfg.apply_env(&env(&[(ENV_LLM_URL, "http://env/"), (ENV_EMBED_MODEL, "env-embed")]));
        assert_eq!(cfg.model.endpoint, "http://env/");
        assert_eq!(cfg.embedder.model, "env-embed");
        assert_eq!(cfg.model.model_id, "xgen-7b");

        cfg.apply_overrides(&Overrides {
            llm_url: Some("http://flag/".into()),
            ..Default::default()
        });
        assert_eq!(cfg.model.endpoint, "http://flag/");
        assert_eq!(cfg.embedder.model, "env-embed");
        assert_eq!(cfg.store_dir, PathBuf::from("/data/store"));
    }

    #[test]
    fn embed_url_switches_backend_and_key_stays_private() {
        let mut cfg = CliConfig::default();
        cfg.apply_env(&env(&[(ENV_EMBED_URL, "http://embed/"), (ENV_LLM_KEY, "sk-1")]));
        assert_eq!(cfg.embedder.backend, EmbedderBackend::Http);
        assert_eq!(cfg.model.api_key.as_deref(), Some("sk-1"));
        let printed = toml::to_string(&cfg).unwrap();
        assert!(!printed.contains("sk-1"));
    }

    #[test]
    fn empty_env_values_are_ignored() {
        let mut cfg = CliConfig::default();
        cfg.apply_env(&env(&[(ENV_LLM_URL, "")]));
        assert_eq!(cfg.model.endpoint, "mock");
    }

    #[test]
    fn bad_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.toml");
        assert!(matches!(
            CliConfig::load_file(Some(&missing), None),
            Err(ConfigError::Read { .. })
        ));
        let bad = dir.path().join("bad.toml");
        fs::write(&bad, "stor_dir = 3").unwrap();
        assert!(matches!(
            CliConfig::load_file(Some(&bad), None),
            Err(ConfigError::Parse { .. })
        ));
        let home = dir.path();
        fs::create_dir_all(home.join(".config/kleio")).unwrap();
        fs::write(default_config_path(home), "index_dir = \"/x\"").unwrap();
        assert_eq!(CliConfig::load_file(None, Some(home)).unwrap().index_dir, PathBuf::from("/x"));
    }
}
