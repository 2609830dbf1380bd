//! Daemon and client configuration: a `key = value` file plus flag
//! overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use trilogy_agents::paa::{DEFAULT_BLEND, DEFAULT_THRESHOLD};

pub const ENV_VAR: &str = "TRILOGY_CONFIG";
pub const DEFAULT_FILE: &str = "broker.conf";

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub data_dir: Option<PathBuf>,
    pub listen: Option<String>,
    pub mediators: Vec<String>,
    pub resource_name: Option<String>,
    pub topics: Vec<String>,
    pub keywords: Vec<String>,
    pub max_instances: u32,
    pub profile_blend: f64,
    pub notify_threshold: f64,
    /// Zero disables periodic refresh.
    pub refresh_interval: Duration,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_dir: None,
            listen: None,
            mediators: Vec::new(),
            resource_name: None,
            topics: Vec::new(),
            keywords: Vec::new(),
            max_instances: 1,
            profile_blend: DEFAULT_BLEND,
            notify_threshold: DEFAULT_THRESHOLD,
            refresh_interval: Duration::ZERO,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("{0}")]
    Invalid(String),
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parses `30`, `30s`, `15m`, `2h` or `7d`.
pub fn parse_duration(value: &str) -> Result<Duration, String> {
    let v = value.trim();
    let (digits, unit) = match v.char_indices().find(|(_, c)| !c.is_ascii_digit()) {
        Some((i, _)) => v.split_at(i),
        None => (v, "s"),
    };
    let n: u64 = digits.parse().map_err(|_| format!("bad duration {value:?}"))?;
    let secs = match unit {
        "s" => 1,
        "m" => 60,
        "h" => 3600,
        "d" => 86_400,
        _ => return Err(format!("bad duration unit in {value:?} (use s, m, h or d)")),
    };
    n.checked_mul(secs)
        .map(Duration::from_secs)
        .ok_or_else(|| format!("duration {value:?} is too large"))
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut c = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |reason: String| ConfigError::Line { line, reason };
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "data_dir" => c.data_dir = Some(PathBuf::from(value)),
                "listen" => c.listen = Some(value.to_string()),
                "mediators" => c.mediators = list(value),
                "resource_name" => c.resource_name = Some(value.to_string()),
                "topics" => c.topics = list(value),
                "keywords" => c.keywords = list(value),
                "max_instances" => {
                    c.max_instances = value
                        .parse()
                        .map_err(|_| err(format!("max_instances {value:?} is not a positive integer")))?
                }
                "profile_blend" => {
                    c.profile_blend = value
                        .parse()
                        .map_err(|_| err(format!("profile_blend {value:?} is not a number")))?
                }
                "notify_threshold" => {
                    c.notify_threshold = value
                        .parse()
                        .map_err(|_| err(format!("notify_threshold {value:?} is not a number")))?
                }
                "refresh_interval" => c.refresh_interval = parse_duration(value).map_err(err)?,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_instances == 0 {
            return Err(ConfigError::Invalid("max_instances must be at least 1".into()));
        }
        if !(self.profile_blend > 0.0 && self.profile_blend < 1.0) {
            return Err(ConfigError::Invalid(
                "profile_blend must lie strictly between 0 and 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.notify_threshold) {
            return Err(ConfigError::Invalid("notify_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Config::parse(&text).map_err(|e| ConfigError::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Reads the first of `--config`, `$TRILOGY_CONFIG` and
    /// `<data_dir>/broker.conf`. Only the last may be absent.
    pub fn resolve(flag: Option<&Path>, env: Option<&Path>, data_dir: Option<&Path>) -> Result<Config, ConfigError> {
        if let Some(p) = flag.or(env) {
            return Config::load(p);
        }
        if let Some(dir) = data_dir {
            let p = dir.join(DEFAULT_FILE);
            if p.exists() {
                return Config::load(&p);
            }
        }
        Ok(Config::default())
    }
}
