//! Resolution of run settings: command-line flag, then `--config` file, then
//! built-in default. Every resolved value is recorded for the run log.

use crate::data::parse_key_values;
use crate::error::{Error, Result};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{Display, Write as _};
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Flag,
    Config,
    Default,
}

impl Source {
    fn name(self) -> &'static str {
        match self {
            Source::Flag => "flag",
            Source::Config => "config",
            Source::Default => "default",
        }
    }
}

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    log: Vec<(String, String, Source)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl Settings {
    pub fn load(config: Option<&Path>) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = config {
            let text = crate::data::format::read_text(path)?;
            for (k, v) in parse_key_values(&text, path)? {
                if s.file.insert(normalize(&k), v).is_some() {
                    return Err(Error::format(path, format!("duplicate key {k:?}")));
                }
            }
        }
        Ok(s)
    }

    /// Resolves `key` from the flag value, the config file or `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
    {
        let key = normalize(key);
        self.used.insert(key.clone());
        let (value, source) = if let Some(v) = flag {
            (v, Source::Flag)
        } else if let Some(raw) = self.file.get(&key) {
            let v = raw
                .parse::<T>()
                .map_err(|_| Error::invalid(format!("config value {key}={raw:?} does not parse")))?;
            (v, Source::Config)
        } else {
            (default, Source::Default)
        };
        self.log.push((key, value.to_string(), source));
        Ok(value)
    }

    /// Like [`Settings::get`] for settings without a default.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
    {
        let key = normalize(key);
        self.used.insert(key.clone());
        let value = match (flag, self.file.get(&key)) {
            (Some(v), _) => Some((v, Source::Flag)),
            (None, Some(raw)) => Some((
                raw.parse::<T>()
                    .map_err(|_| Error::invalid(format!("config value {key}={raw:?} does not parse")))?,
                Source::Config,
            )),
            (None, None) => None,
        };
        match value {
            Some((v, source)) => {
                self.log.push((key, v.to_string(), source));
                Ok(Some(v))
            }
            None => {
                self.log.push((key, "none".into(), Source::Default));
                Ok(None)
            }
        }
    }

    /// Rejects config keys that no setting consumed.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "unknown config key(s): {}",
                unknown.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    }

    /// `key=value  # source` lines in resolution order.
    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for (k, v, src) in &self.log {
            let _ = writeln!(s, "{k}={v}  # {}", src.name());
        }
        s
    }
}
