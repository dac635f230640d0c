//! Bilingual word lexicon and translation-driven embedding transfer.

mod tet;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub use tet::{coverage_report, tet_initialize, CoverageReport, TetMode, TetOptions, TetResult};

use crate::corpus::io_write_file;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LexSource {
    File,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    translation: String,
    source: LexSource,
    line: usize,
}

/// LRL word → single best HRL translation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<String, Entry>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry; a repeated key is a conflict naming both lines.
    pub fn insert(&mut self, lrl: &str, hrl: &str, source: LexSource, line: usize) -> Result<()> {
        if let Some(prev) = self.entries.get(lrl) {
            return Err(Error::Conflict {
                path: format!("{source:?} lexicon"),
                key: lrl.to_string(),
                first: prev.line,
                second: line,
            });
        }
        self.entries.insert(lrl.to_string(), Entry { translation: hrl.to_string(), source, line });
        Ok(())
    }

    pub fn translate(&self, lrl: &str) -> Option<&str> {
        self.entries.get(lrl).map(|e| e.translation.as_str())
    }

    pub fn source(&self, lrl: &str) -> Option<LexSource> {
        self.entries.get(lrl).map(|e| e.source)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), e.translation.as_str()))
    }

    /// Reads `lrl_word<TAB>hrl_word` lines. Lines starting with `#` and blank
    /// lines are skipped; `a|b` or `a,b` alternatives keep the first.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };
        let mut lex = Lexicon::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            if cols.len() != 2 {
                return Err(parse_err(line, format!("expected 2 tab-separated columns, found {}", cols.len())));
            }
            let key = cols[0].trim();
            let value = cols[1].split(['|', ',']).next().unwrap_or("").trim();
            if key.is_empty() || value.is_empty() {
                return Err(parse_err(line, "empty word".into()));
            }
            if key.contains(char::is_whitespace) || value.contains(char::is_whitespace) {
                return Err(parse_err(line, format!("multi-word entry {key:?} → {value:?}")));
            }
            lex.insert(key, value, LexSource::File, line).map_err(|e| match e {
                Error::Conflict { key, first, second, .. } => {
                    Error::Conflict { path: origin.to_string(), key, first, second }
                }
                other => other,
            })?;
        }
        Ok(lex)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (k, v) in self.iter() {
            out.push_str(k);
            out.push('\t');
            out.push_str(v);
            out.push('\n');
        }
        io_write_file(path, out.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry() {
        let lex = Lexicon::parse("antarbhasika\tcross-lingual\n", "t").unwrap();
        assert_eq!(lex.len(), 1);
        assert_eq!(lex.translate("antarbhasika"), Some("cross-lingual"));
        assert_eq!(lex.source("antarbhasika"), Some(LexSource::File));
    }

    #[test]
    fn empty_and_comment_only_files() {
        assert!(Lexicon::parse("", "t").unwrap().is_empty());
        assert!(Lexicon::parse("# header\n\n", "t").unwrap().is_empty());
    }

    #[test]
    fn duplicate_key_names_both_lines() {
        let err = Lexicon::parse("a\tx\n# c\na\ty\n", "lex.tsv").unwrap_err();
        match err {
            Error::Conflict { key, first, second, path } => {
                assert_eq!((key.as_str(), first, second, path.as_str()), ("a", 1, 3, "lex.tsv"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn extra_columns_and_multi_word_values_rejected() {
        assert!(matches!(Lexicon::parse("a\tb\tc\n", "t"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Lexicon::parse("a\tb c\n", "t"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(Lexicon::parse("lonely\n", "t"), Err(Error::Parse { .. })));
    }

    #[test]
    fn alternatives_collapse_to_first() {
        let lex = Lexicon::parse("a\tx|y\nb\tp,q\n", "t").unwrap();
        assert_eq!(lex.translate("a"), Some("x"));
        assert_eq!(lex.translate("b"), Some("p"));
    }

    #[test]
    fn save_load_round_trip() {
        let lex = Lexicon::parse("b\ty\na\tx\n", "t").unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        lex.save(f.path()).unwrap();
        let back = Lexicon::load(f.path()).unwrap();
        assert_eq!(back.iter().collect::<Vec<_>>(), lex.iter().collect::<Vec<_>>());
    }
}
