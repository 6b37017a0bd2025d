//! Plain-text configuration: `key = value` entries grouped under `[section]`
//! headers. Sections may repeat (scene primitives are one section each), and
//! order is preserved. `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Section { name: name.into(), entries: Vec::new() }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("[{}] {} = {:?} is not a number", self.name, key, raw)))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            Some(_) => self.f64(key),
            None => Ok(default),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("[{}] {} = {:?} is not an integer", self.name, key, raw)))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            Some(_) => self.usize(key),
            None => Ok(default),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("[{}] {} = {:?} is not an integer", self.name, key, raw))),
            None => Ok(default),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            Some("true") | Some("on") | Some("1") => Ok(true),
            Some("false") | Some("off") | Some("0") => Ok(false),
            Some(raw) => Err(Error::Config(format!(
                "[{}] {} = {:?} is not a boolean",
                self.name, key, raw
            ))),
            None => Ok(default),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("[{}] missing key {:?}", self.name, key)))
    }

    /// Whitespace-separated list of numbers.
    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.require(key)?;
        parse_f64_list(raw)
            .map_err(|e| Error::Config(format!("[{}] {}: {}", self.name, key, e)))
    }

    /// Exactly `n` whitespace-separated numbers.
    pub fn f64_array<const N: usize>(&self, key: &str) -> Result<[f64; N]> {
        let list = self.f64_list(key)?;
        list.try_into().map_err(|v: Vec<f64>| {
            Error::Config(format!(
                "[{}] {} needs {} numbers, got {}",
                self.name,
                key,
                N,
                v.len()
            ))
        })
    }
}

pub fn parse_f64_list(raw: &str) -> std::result::Result<Vec<f64>, String> {
    raw.split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|_| format!("{:?} is not a number", tok)))
        .collect()
}

/// A parsed config document: ordered list of sections. Keys before the first
/// header land in an implicit section with an empty name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigDoc {
    pub sections: Vec<Section>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<ConfigDoc> {
        let mut doc = ConfigDoc::default();
        let mut current = Section::new("");
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", lineno + 1)))?
                    .trim();
                if !current.entries.is_empty() || !current.name.is_empty() {
                    doc.sections.push(std::mem::replace(&mut current, Section::new(name)));
                } else {
                    current = Section::new(name);
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {:?}", lineno + 1, line)))?;
            current
                .entries
                .push((key.trim().to_string(), value.trim().to_string()));
        }
        if !current.entries.is_empty() || !current.name.is_empty() {
            doc.sections.push(current);
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<ConfigDoc> {
        let text = std::fs::read_to_string(path)?;
        ConfigDoc::parse(&text)
    }

    /// First section with this name, if any.
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn sections_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Section> {
        self.sections.iter().filter(move |s| s.name == name)
    }

    /// Canonical text form; parsing it back yields an equal document.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for section in &self.sections {
            if !section.name.is_empty() {
                let _ = writeln!(out, "[{}]", section.name);
            }
            for (k, v) in &section.entries {
                let _ = writeln!(out, "{} = {}", k, v);
            }
        }
        out
    }

    /// FNV-1a hash of the canonical text; stamped into CSV outputs so a
    /// result file names the configuration that produced it.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\n# comment\nseed = 7\n[camera]\nfx = 100.0\nfy = 100 # trailing\n[plane]\nname = a\n[plane]\nname = b\n";

    #[test]
    fn parses_sections_and_defaults() {
        let doc = ConfigDoc::parse(SAMPLE).unwrap();
        assert_eq!(doc.section("").unwrap().usize_or("seed", 0).unwrap(), 7);
        let cam = doc.section("camera").unwrap();
        assert_eq!(cam.f64("fx").unwrap(), 100.0);
        assert_eq!(cam.f64("fy").unwrap(), 100.0);
        assert_eq!(doc.sections_named("plane").count(), 2);
    }

    #[test]
    fn roundtrips_through_text() {
        let doc = ConfigDoc::parse(SAMPLE).unwrap();
        let again = ConfigDoc::parse(&doc.to_text()).unwrap();
        assert_eq!(doc, again);
        assert_eq!(doc.hash(), again.hash());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(ConfigDoc::parse("[open\n").is_err());
        assert!(ConfigDoc::parse("just words\n").is_err());
    }

    #[test]
    fn list_parsing() {
        let doc = ConfigDoc::parse("[s]\nv = 1 2.5 -3\n").unwrap();
        assert_eq!(doc.section("s").unwrap().f64_list("v").unwrap(), vec![1.0, 2.5, -3.0]);
        let arr: [f64; 3] = doc.section("s").unwrap().f64_array("v").unwrap();
        assert_eq!(arr, [1.0, 2.5, -3.0]);
    }
}
