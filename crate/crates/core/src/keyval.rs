//! `key = value` text files shared by the dataset spec, augmentation plan and
//! harness config. `#` starts a comment; blank lines are ignored.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    source: String,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::format(format!("{source}:{line_no}"), "expected `key = value`")
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::format(format!("{source}:{line_no}"), "empty key"));
            }
            if entries
                .insert(key.to_string(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::format(
                    format!("{source}:{line_no}"),
                    format!("duplicate key `{key}`"),
                ));
            }
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Entries whose key starts with `prefix.`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> {
        self.entries.iter().filter_map(move |(k, (_, v))| {
            k.strip_prefix(prefix)
                .and_then(|rest| rest.strip_prefix('.'))
                .map(|rest| (rest, v.as_str()))
        })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, value)) => value.parse().map(Some).map_err(|_| {
                Error::format(
                    format!("{}:{line}", self.source),
                    format!("cannot parse `{value}` for key `{key}`"),
                )
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str, value: &str) -> Result<T> {
        value.parse().map_err(|_| {
            let line = self.entries.get(key).map(|(l, _)| *l).unwrap_or(0);
            Error::format(
                format!("{}:{line}", self.source),
                format!("cannot parse `{value}` for key `{key}`"),
            )
        })
    }

    /// Reject keys not matched by `known` (a full key or a `prefix.` family).
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        for (key, (line, _)) in &self.entries {
            let ok = known.iter().any(|k| match k.strip_suffix(".*") {
                Some(prefix) => key
                    .strip_prefix(prefix)
                    .is_some_and(|rest| rest.starts_with('.') && rest.len() > 1),
                None => key == k,
            });
            if !ok {
                return Err(Error::format(
                    format!("{}:{line}", self.source),
                    format!("unknown key `{key}`"),
                ));
            }
        }
        Ok(())
    }
}

/// Parse `a-b` or a single integer `a` into an inclusive range.
pub fn parse_range(text: &str) -> Option<(usize, usize)> {
    let text = text.trim();
    let (lo, hi) = match text.split_once('-') {
        Some((lo, hi)) => (lo.trim().parse().ok()?, hi.trim().parse().ok()?),
        None => {
            let v = text.parse().ok()?;
            (v, v)
        }
    };
    (lo <= hi).then_some((lo, hi))
}
