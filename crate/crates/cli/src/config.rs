//! `key=value` service configuration.

use std::path::{Path, PathBuf};

use ino_core::oai_provider::DEFAULT_PAGE_SIZE;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    pub data_dir: PathBuf,
    pub port: u16,
    /// Required in `X-INO-Key` by mutating routes. Without one they are refused.
    pub api_key: Option<String>,
    pub ontology_path: Option<PathBuf>,
    pub page_size: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: PathBuf::from("ino-data"),
            port: 8080,
            api_key: None,
            ontology_path: None,
            page_size: DEFAULT_PAGE_SIZE,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        let mut data_dir = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ConfigError::Syntax { line: i + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dataDir" => data_dir = Some(PathBuf::from(value)),
                "port" => cfg.port = value.parse().map_err(|_| err(format!("bad port `{value}`")))?,
                "apiKey" => cfg.api_key = (!value.is_empty()).then(|| value.to_string()),
                "ontologyPath" => cfg.ontology_path = (!value.is_empty()).then(|| PathBuf::from(value)),
                "pageSize" => {
                    cfg.page_size = match value.parse() {
                        Ok(n) if n > 0 => n,
                        _ => return Err(err(format!("bad pageSize `{value}`"))),
                    }
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        cfg.data_dir = data_dir.ok_or(ConfigError::Missing("dataDir"))?;
        Ok(cfg)
    }

    /// Reads a file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Config::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data_dir.is_relative() {
            cfg.data_dir = base.join(&cfg.data_dir);
        }
        if let Some(p) = cfg.ontology_path.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
