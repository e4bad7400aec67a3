use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

/// Service settings, usually read from a TOML file:
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// session_dir = "sessions"
/// backend_config = "backend.toml"
/// strokes_per_turn = 1
/// ```
///
/// Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    pub session_dir: PathBuf,
    /// Backend settings; the bundled mock is used when absent.
    pub backend_config: Option<PathBuf>,
    /// Default strokes per agent turn for new sessions.
    pub strokes_per_turn: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            session_dir: PathBuf::from("sessions"),
            backend_config: None,
            strokes_per_turn: 1,
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.session_dir.is_relative() {
            cfg.session_dir = base.join(&cfg.session_dir);
        }
        if let Some(b) = cfg.backend_config.as_mut().filter(|b| b.is_relative()) {
            *b = base.join(&*b);
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        assert_eq!(ServerConfig::from_toml("").unwrap(), ServerConfig::default());
        let c = ServerConfig::from_toml("listen = \"0.0.0.0:9000\"\nstrokes_per_turn = 2\n").unwrap();
        assert_eq!(c.listen.port(), 9000);
        assert_eq!(c.strokes_per_turn, 2);
        assert!(ServerConfig::from_toml("port = 1").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("serve.toml");
        std::fs::write(&path, "session_dir = \"logs\"\nbackend_config = \"b.toml\"\n").unwrap();
        let c = ServerConfig::load(&path).unwrap();
        assert_eq!(c.session_dir, dir.path().join("logs"));
        assert_eq!(c.backend_config, Some(dir.path().join("b.toml")));
        assert!(matches!(ServerConfig::load(&dir.path().join("missing.toml")), Err(ConfigError::Io { .. })));
    }
}
