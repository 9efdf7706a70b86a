//! `key = value` config files with `[section]` headers. Values act as
//! defaults for the matching subcommand's flags; command-line flags override.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    /// (section, key) -> value. Keys outside any section use section "".
    values: BTreeMap<(String, String), String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        ConfigFile::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ConfigFile> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected `key = value`, got {line:?}", idx + 1);
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if values.insert((section.clone(), key.clone()), value).is_some() {
                bail!("config line {}: duplicate key {key:?} in section [{section}]", idx + 1);
            }
        }
        Ok(ConfigFile { values })
    }

    /// Section view with unknown-key tracking. Every key must be consumed.
    pub fn section<'a>(&'a self, name: &str) -> SectionView<'a> {
        let keys = self
            .values
            .iter()
            .filter(|((s, _), _)| s == name || s.is_empty())
            .map(|((s, k), v)| (s.clone(), k.clone(), v.as_str()))
            .collect();
        SectionView { name: name.to_string(), entries: keys, consumed: Vec::new() }
    }
}

pub struct SectionView<'a> {
    name: String,
    entries: Vec<(String, String, &'a str)>,
    consumed: Vec<String>,
}

impl<'a> SectionView<'a> {
    pub fn get(&mut self, key: &str) -> Option<&'a str> {
        self.consumed.push(key.to_string());
        // A sectioned entry wins over a top-level one.
        let mut found = None;
        for (section, k, v) in &self.entries {
            if k == key && (found.is_none() || !section.is_empty()) {
                found = Some(*v);
            }
        }
        found
    }

    pub fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config key {key:?} in [{}]: {e}", self.name)),
        }
    }

    /// Rejects keys that no flag consumed.
    pub fn finish(self) -> Result<()> {
        for (section, key, _) in &self.entries {
            if !self.consumed.contains(key) {
                bail!("unknown config key {key:?} in section [{section}]");
            }
        }
        Ok(())
    }
}
