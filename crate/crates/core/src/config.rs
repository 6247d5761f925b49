//! Flat `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored. Keys
//! are case-sensitive. Repeating a key is an error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    origin: Option<PathBuf>,
}

impl KeyValues {
    pub fn parse(text: &str, origin: Option<&Path>) -> Result<Self> {
        let label = origin
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("<config>"));
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(
                    &label,
                    i + 1,
                    format!("expected 'key = value', got '{line}'"),
                ));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(&label, i + 1, "empty key"));
            }
            let value = value.trim().trim_matches('"');
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::parse(
                    &label,
                    i + 1,
                    format!("duplicate key '{key}'"),
                ));
            }
        }
        Ok(KeyValues {
            entries,
            origin: origin.map(Path::to_path_buf),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, Some(path))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::InvalidArgument(format!("cannot parse value '{raw}' for key '{key}'"))
            }),
        }
    }

    /// Resolves a path-valued key relative to the file the settings came from.
    pub fn get_path(&self, key: &str) -> Option<PathBuf> {
        let raw = PathBuf::from(self.get(key)?);
        match (&self.origin, raw.is_relative()) {
            (Some(origin), true) => Some(origin.parent().unwrap_or(Path::new(".")).join(raw)),
            _ => Some(raw),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let kv = KeyValues::parse(
            "# model\nfamily = disc\nK=3 # senses\n\nkappa_phi = 0.25\n",
            None,
        )
        .unwrap();
        assert_eq!(kv.get("family"), Some("disc"));
        assert_eq!(kv.get_parsed::<usize>("K").unwrap(), Some(3));
        assert_eq!(kv.get_parsed::<f64>("kappa_phi").unwrap(), Some(0.25));
        assert_eq!(kv.get_parsed::<f64>("missing").unwrap(), None);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(KeyValues::parse("K = 2\nK = 3\n", None).is_err());
        assert!(KeyValues::parse("just words\n", None).is_err());
        let kv = KeyValues::parse("K = two\n", None).unwrap();
        assert!(kv.get_parsed::<usize>("K").is_err());
    }
}
