//! Flat `key = value` configuration with `[section]` headers.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment            (also `;`)
//! [section]            later keys belong to `section`
//! key = value          surrounding whitespace trimmed; value may be empty
//! ```
//!
//! Keys before the first header are global defaults visible to every
//! section. `--set key=value` targets the active command's section;
//! `--set section.key=value` targets any section.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use aiml::Error;

#[derive(Debug, Default, Clone)]
pub struct Config {
    /// `(section, key) -> value`; the global section is `""`.
    entries: BTreeMap<(String, String), String>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, Error> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let at = no + 1;
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .map(str::trim)
                    .filter(|n| valid_name(n))
                    .ok_or_else(|| config_err(format!("line {at}: malformed section header `{line}`")))?;
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {at}: expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if !valid_name(key) {
                return Err(config_err(format!("line {at}: invalid key `{key}`")));
            }
            let slot = (section.clone(), key.to_string());
            if cfg.entries.contains_key(&slot) {
                return Err(config_err(format!("line {at}: duplicate key `{key}`")));
            }
            cfg.entries.insert(slot, value.trim().to_string());
        }
        Ok(cfg)
    }

    /// Applies one `--set` override.
    pub fn set(&mut self, assignment: &str, default_section: &str) -> Result<(), Error> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| config_err(format!("--set expects key=value, got `{assignment}`")))?;
        let path = path.trim();
        let (section, key) = match path.split_once('.') {
            Some((s, k)) => (s, k),
            None => (default_section, path),
        };
        if !valid_name(key) || !(section.is_empty() || valid_name(section)) {
            return Err(config_err(format!("invalid override key `{path}`")));
        }
        self.entries
            .insert((section.to_string(), key.to_string()), value.trim().to_string());
        Ok(())
    }

    /// Values for `section` with globals underneath.
    pub fn section(&self, section: &str) -> Section {
        let mut values = BTreeMap::new();
        let mut own = BTreeSet::new();
        for ((s, k), v) in &self.entries {
            if s.is_empty() {
                values.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
        for ((s, k), v) in &self.entries {
            if s == section {
                values.insert(k.clone(), v.clone());
                own.insert(k.clone());
            }
        }
        Section {
            name: section.to_string(),
            values,
            own,
            effective: BTreeMap::new(),
        }
    }
}

/// Typed access to one section. Every read is recorded, defaults included,
/// so the effective configuration can be written as provenance.
#[derive(Debug)]
pub struct Section {
    name: String,
    values: BTreeMap<String, String>,
    own: BTreeSet<String>,
    effective: BTreeMap<String, String>,
}

impl Section {
    pub fn raw(&mut self, key: &str, default: &str) -> String {
        let v = self.values.get(key).cloned().unwrap_or_else(|| default.to_string());
        self.effective.insert(key.to_string(), v.clone());
        v
    }

    pub fn get<T: FromStr>(&mut self, key: &str, default: &str) -> Result<T, Error> {
        let v = self.raw(key, default);
        v.parse()
            .map_err(|_| config_err(format!("[{}] {key}: cannot parse `{v}`", self.name)))
    }

    pub fn list<T: FromStr>(&mut self, key: &str, default: &str) -> Result<Vec<T>, Error> {
        let v = self.raw(key, default);
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|item| {
                item.parse()
                    .map_err(|_| config_err(format!("[{}] {key}: cannot parse list item `{item}`", self.name)))
            })
            .collect()
    }

    pub fn bool(&mut self, key: &str, default: bool) -> Result<bool, Error> {
        match self.raw(key, if default { "true" } else { "false" }).as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(config_err(format!("[{}] {key}: expected a boolean, got `{other}`", self.name))),
        }
    }

    /// Rejects keys set for this section that no reader asked for.
    pub fn finish(&self) -> Result<(), Error> {
        let unknown: Vec<&str> = self
            .own
            .iter()
            .filter(|k| !self.effective.contains_key(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(config_err(format!("[{}] unknown keys: {}", self.name, unknown.join(", "))))
        }
    }

    pub fn effective(&self) -> &BTreeMap<String, String> {
        &self.effective
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_globals_and_overrides() {
        let text = "seed = 3\n# comment\n[generate]\nm = 40\n; other\nmanifold = torus\n[embed]\nm = 7\n";
        let mut cfg = Config::parse(text).unwrap();
        cfg.set("n=5", "generate").unwrap();
        cfg.set("embed.method = le", "generate").unwrap();
        let mut g = cfg.section("generate");
        assert_eq!(g.get::<usize>("m", "1").unwrap(), 40);
        assert_eq!(g.get::<usize>("n", "1").unwrap(), 5);
        assert_eq!(g.get::<u64>("seed", "0").unwrap(), 3);
        assert_eq!(g.raw("manifold", "x"), "torus");
        assert_eq!(g.get::<f64>("t", "2.5").unwrap(), 2.5);
        g.finish().unwrap();
        assert_eq!(g.effective().get("t").unwrap(), "2.5");
        let mut e = cfg.section("embed");
        assert_eq!(e.raw("method", ""), "le");
        assert!(e.finish().is_err());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(Config::parse("[bad").is_err());
        assert!(Config::parse("novalue").is_err());
        assert!(Config::parse("a = 1\na = 2").is_err());
        assert!(Config::parse("bad key = 1").is_err());
        assert!(Config::default().set("noequals", "x").is_err());
    }

    #[test]
    fn typed_errors() {
        let mut cfg = Config::parse("[s]\nm = abc\nl = 1, 2,x\nb = maybe\n").unwrap();
        cfg.set("s.k=", "s").unwrap();
        let mut s = cfg.section("s");
        assert!(s.get::<usize>("m", "0").is_err());
        assert!(s.list::<usize>("l", "").is_err());
        assert!(s.bool("b", true).is_err());
        assert_eq!(s.list::<usize>("k", "1,2").unwrap(), Vec::<usize>::new());
        assert_eq!(s.list::<usize>("missing", "1, 2").unwrap(), vec![1, 2]);
    }
}
