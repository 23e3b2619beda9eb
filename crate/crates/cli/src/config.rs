//! Plain-text `key = value` run configuration. Flags given on the command
//! line take precedence over file entries.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::exit::{CliError, CliResult};

#[derive(Debug, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::usage(format!("config line {}: expected key = value", no + 1)));
            };
            let key = k.trim().replace('-', "_");
            if key.is_empty() {
                return Err(CliError::usage(format!("config line {}: empty key", no + 1)));
            }
            if entries.insert(key.clone(), (no + 1, v.trim().to_string())).is_some() {
                return Err(CliError::usage(format!("config line {}: duplicate key `{key}`", no + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    /// Removes `key` and returns the flag value if set, else the parsed
    /// file value.
    pub fn pick<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let entry = self.entries.remove(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match entry {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::usage(format!("config line {line}: bad value for `{key}`: {e}"))),
        }
    }

    /// Fails if any entry was never picked.
    pub fn finish(self) -> CliResult<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(CliError::usage(format!("config line {line}: unknown key `{key}`"))),
        }
    }
}
