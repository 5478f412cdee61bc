//! Service configuration: a TOML file, then `DRAMATURG_*` environment
//! overrides, then validation.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use dramaturg_core::gateway::{
    CompletionBackend, GatewayConfig, HttpBackend, HttpBackendConfig, MockBackend, MockEntry,
};
use dramaturg_core::{Engine, EngineConfig, Gateway, PromptLibrary};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {name}: {message}")]
    Env { name: &'static str, message: String },
    #[error("max_concurrent must be at least 1")]
    NoConcurrency,
    #[error("backend must be \"mock\" or an http(s) URL, got {0:?}")]
    Backend(String),
    #[error("cannot load mock script {path}: {message}")]
    MockScript { path: PathBuf, message: String },
    #[error(transparent)]
    Prompt(#[from] dramaturg_core::prompt::PromptError),
}

/// Which completion backend an engine talks to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Mock,
    Http(String),
}

impl BackendChoice {
    pub fn parse(value: &str) -> Result<Self, ConfigError> {
        let value = value.trim();
        if value == "mock" {
            Ok(BackendChoice::Mock)
        } else if value.starts_with("http://") || value.starts_with("https://") {
            Ok(BackendChoice::Http(value.to_string()))
        } else {
            Err(ConfigError::Backend(value.to_string()))
        }
    }
}

/// Everything needed to build an engine, shared by the service and the CLI.
#[derive(Debug, Clone)]
pub struct EngineSetup {
    pub backend: BackendChoice,
    pub api_key: Option<String>,
    /// JSON array of mock entries; only used with the mock backend.
    pub mock_script: Option<PathBuf>,
    /// Extra `*.promptset` files, added to the two shipped sets.
    pub prompt_dir: Option<PathBuf>,
    pub max_in_flight: usize,
    pub parallel: bool,
}

impl Default for EngineSetup {
    fn default() -> Self {
        Self {
            backend: BackendChoice::Mock,
            api_key: None,
            mock_script: None,
            prompt_dir: None,
            max_in_flight: GatewayConfig::default().max_in_flight,
            parallel: true,
        }
    }
}

/// A built engine. `mock` is set when the backend is the mock, so callers can
/// inspect its call counters.
pub struct BuiltEngine {
    pub engine: Engine,
    pub mock: Option<Arc<MockBackend>>,
}

pub fn load_mock_script(path: &Path) -> Result<Vec<MockEntry>, ConfigError> {
    let err = |message: String| ConfigError::MockScript {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

impl EngineSetup {
    pub fn build(&self) -> Result<BuiltEngine, ConfigError> {
        match &self.backend {
            BackendChoice::Mock => {
                let entries = match &self.mock_script {
                    Some(path) => load_mock_script(path)?,
                    None => Vec::new(),
                };
                let mock = Arc::new(MockBackend::scripted(entries));
                let engine = self.build_with_backend(mock.clone())?;
                Ok(BuiltEngine {
                    engine,
                    mock: Some(mock),
                })
            }
            BackendChoice::Http(url) => {
                let mut config = HttpBackendConfig::new(url.clone());
                config.api_key = self.api_key.clone();
                let http = HttpBackend::new(config).map_err(|e| ConfigError::Backend(e.to_string()))?;
                let engine = self.build_with_backend(Arc::new(http))?;
                Ok(BuiltEngine { engine, mock: None })
            }
        }
    }

    /// Builds an engine around a given backend, ignoring `backend` and
    /// `mock_script`.
    pub fn build_with_backend(&self, backend: Arc<dyn CompletionBackend>) -> Result<Engine, ConfigError> {
        if self.max_in_flight == 0 {
            return Err(ConfigError::NoConcurrency);
        }
        let mut prompts = PromptLibrary::builtin();
        if let Some(dir) = &self.prompt_dir {
            prompts.load_dir(dir)?;
        }
        let gateway = Gateway::new(
            backend,
            GatewayConfig {
                max_in_flight: self.max_in_flight,
                ..GatewayConfig::default()
            },
        );
        Ok(Engine::new(Arc::new(gateway), Arc::new(prompts)).with_config(EngineConfig {
            parallel: self.parallel,
            ..EngineConfig::default()
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    bind: String,
    backend: String,
    api_key: Option<String>,
    mock_script: Option<PathBuf>,
    prompt_dir: Option<PathBuf>,
    session_dir: Option<PathBuf>,
    max_concurrent: usize,
    auth_token: Option<String>,
    parallel: bool,
    job_ttl_secs: u64,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            backend: "mock".into(),
            api_key: None,
            mock_script: None,
            prompt_dir: None,
            session_dir: None,
            max_concurrent: 4,
            auth_token: None,
            parallel: true,
            job_ttl_secs: 3600,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: String,
    pub engine: EngineSetup,
    /// Where sessions are persisted; `None` keeps them in memory only.
    pub session_dir: Option<PathBuf>,
    /// Service-wide cap on in-flight generations and gateway calls.
    pub max_concurrent: usize,
    /// When set, every request needs `Authorization: Bearer <token>`.
    pub auth_token: Option<String>,
    /// How long finished jobs stay queryable.
    pub job_ttl: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self::from_file_config(FileConfig::default())
            .expect("default config is valid")
    }
}

impl ServiceConfig {
    fn from_file_config(file: FileConfig) -> Result<Self, ConfigError> {
        let config = Self {
            bind: file.bind,
            engine: EngineSetup {
                backend: BackendChoice::parse(&file.backend)?,
                api_key: file.api_key,
                mock_script: file.mock_script,
                prompt_dir: file.prompt_dir,
                max_in_flight: file.max_concurrent,
                parallel: file.parallel,
            },
            session_dir: file.session_dir,
            max_concurrent: file.max_concurrent,
            auth_token: file.auth_token,
            job_ttl: Duration::from_secs(file.job_ttl_secs),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_file_config(file)
    }

    /// Reads `path` (or starts from defaults) and applies the process
    /// environment on top.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
                Self::from_toml(&text, path)?
            }
            None => Self::default(),
        };
        config.apply_env(|name| std::env::var(name).ok())?;
        Ok(config)
    }

    /// Applies `DRAMATURG_*` overrides; `LMGW_API_KEY` supplies the backend key.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = var("DRAMATURG_BIND") {
            self.bind = v;
        }
        if let Some(v) = var("DRAMATURG_BACKEND") {
            self.engine.backend = BackendChoice::parse(&v)?;
        }
        if let Some(v) = var("LMGW_API_KEY") {
            self.engine.api_key = Some(v);
        }
        if let Some(v) = var("DRAMATURG_MOCK_SCRIPT") {
            self.engine.mock_script = Some(v.into());
        }
        if let Some(v) = var("DRAMATURG_PROMPT_DIR") {
            self.engine.prompt_dir = Some(v.into());
        }
        if let Some(v) = var("DRAMATURG_SESSION_DIR") {
            self.session_dir = Some(v.into());
        }
        if let Some(v) = var("DRAMATURG_MAX_CONCURRENT") {
            let n = v.parse().map_err(|e: std::num::ParseIntError| ConfigError::Env {
                name: "DRAMATURG_MAX_CONCURRENT",
                message: e.to_string(),
            })?;
            self.max_concurrent = n;
            self.engine.max_in_flight = n;
        }
        if let Some(v) = var("DRAMATURG_AUTH_TOKEN") {
            self.auth_token = (!v.is_empty()).then_some(v);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_concurrent == 0 {
            return Err(ConfigError::NoConcurrency);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn defaults() {
        let c = ServiceConfig::default();
        assert_eq!(c.bind, "127.0.0.1:8080");
        assert_eq!(c.engine.backend, BackendChoice::Mock);
        assert_eq!(c.max_concurrent, 4);
        assert_eq!(c.engine.max_in_flight, 4);
        assert!(c.auth_token.is_none());
    }

    #[test]
    fn toml_file() {
        let c = ServiceConfig::from_toml(
            "bind = \"0.0.0.0:9000\"\nbackend = \"http://lm:8000/v1/complete\"\nmax_concurrent = 2\nsession_dir = \"/tmp/s\"\nauth_token = \"t\"\n",
            Path::new("cfg.toml"),
        )
        .unwrap();
        assert_eq!(c.bind, "0.0.0.0:9000");
        assert_eq!(c.engine.backend, BackendChoice::Http("http://lm:8000/v1/complete".into()));
        assert_eq!(c.max_concurrent, 2);
        assert_eq!(c.engine.max_in_flight, 2);
        assert_eq!(c.session_dir, Some(PathBuf::from("/tmp/s")));
        assert_eq!(c.auth_token.as_deref(), Some("t"));
    }

    #[test]
    fn bad_files_are_rejected() {
        let p = Path::new("cfg.toml");
        assert!(matches!(
            ServiceConfig::from_toml("max_concurrent = 0", p),
            Err(ConfigError::NoConcurrency)
        ));
        assert!(matches!(
            ServiceConfig::from_toml("colour = \"red\"", p),
            Err(ConfigError::Parse { .. })
        ));
        assert!(matches!(
            ServiceConfig::from_toml("backend = \"gpt\"", p),
            Err(ConfigError::Backend(_))
        ));
    }

    #[test]
    fn env_overrides_file() {
        let env: HashMap<&str, &str> = [
            ("DRAMATURG_BIND", "127.0.0.1:1"),
            ("DRAMATURG_MAX_CONCURRENT", "7"),
            ("DRAMATURG_AUTH_TOKEN", "secret"),
            ("LMGW_API_KEY", "k"),
        ]
        .into();
        let mut c = ServiceConfig::from_toml("max_concurrent = 2", Path::new("c")).unwrap();
        c.apply_env(|n| env.get(n).map(|v| v.to_string())).unwrap();
        assert_eq!(c.bind, "127.0.0.1:1");
        assert_eq!(c.max_concurrent, 7);
        assert_eq!(c.engine.max_in_flight, 7);
        assert_eq!(c.auth_token.as_deref(), Some("secret"));
        assert_eq!(c.engine.api_key.as_deref(), Some("k"));

        let mut c = ServiceConfig::default();
        let err = c
            .apply_env(|n| (n == "DRAMATURG_MAX_CONCURRENT").then(|| "0".to_string()))
            .unwrap_err();
        assert!(matches!(err, ConfigError::NoConcurrency));
        let err = c
            .apply_env(|n| (n == "DRAMATURG_MAX_CONCURRENT").then(|| "many".to_string()))
            .unwrap_err();
        assert!(matches!(err, ConfigError::Env { .. }));
    }

    #[test]
    fn mock_engine_builds() {
        let built = EngineSetup::default().build().unwrap();
        assert!(built.mock.is_some());
        assert_eq!(built.engine.prompts().names(), vec!["medea", "scifi"]);
        let setup = EngineSetup {
            max_in_flight: 0,
            ..EngineSetup::default()
        };
        assert!(matches!(setup.build(), Err(ConfigError::NoConcurrency)));
    }
}
