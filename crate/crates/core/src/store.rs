//! File-backed feature store.
//!
//! ```text
//! #binstyle-store v1
//! @subject	<subject>	<label or ->
//! <subject>	<family>	<descriptor>	<count>
//! ...
//! ```
//!
//! Every `@subject` line indexes a subject and is followed by its records.
//! Subjects and descriptors are escaped with [`escape_field`]. The file is
//! append-only: [`FeatureStore::append`] adds subjects without rewriting
//! existing lines. A relational backend would map to two tables, `subject
//! (name, label)` and `feature (subject, family, descriptor, count)`.
//!
//! Malformed record lines are skipped and reported; a missing or different
//! version header fails the load.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::features::{escape_field, unescape_field, Family, FeatureId, FeatureVector};

pub const STORE_HEADER: &str = "#binstyle-store v1";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store version mismatch: expected `{STORE_HEADER}`, found `{0}`")]
    Version(String),
    #[error("store is empty (no header)")]
    MissingHeader,
    #[error("subject `{0}` stored twice")]
    DuplicateSubject(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredVector {
    pub label: Option<String>,
    pub vector: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureStore {
    pub entries: Vec<StoredVector>,
}

/// A line dropped during loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub store: FeatureStore,
    pub skipped: Vec<SkippedLine>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_entry(out: &mut String, e: &StoredVector) {
    let subject = escape_field(&e.vector.subject);
    let label = e.label.as_deref().map_or("-".to_string(), escape_field);
    out.push_str(&format!("@subject\t{subject}\t{label}\n"));
    for (id, c) in e.vector.iter() {
        out.push_str(&format!("{subject}\t{id}\t{c}\n"));
    }
}

fn parse_record(line: &str) -> Result<(String, FeatureId, u64), String> {
    let fields: Vec<&str> = line.split('\t').collect();
    let [subject, family, descriptor, count] = fields[..] else {
        return Err(format!("expected 4 fields, got {}", fields.len()));
    };
    let subject = unescape_field(subject).ok_or("bad escape in subject")?;
    let family: Family = family.parse().map_err(|_| format!("unknown family `{family}`"))?;
    let descriptor = unescape_field(descriptor).ok_or("bad escape in descriptor")?;
    let count: u64 = count.parse().map_err(|_| format!("bad count `{count}`"))?;
    if count == 0 {
        return Err("zero count".into());
    }
    Ok((subject, FeatureId::new(family, descriptor), count))
}

impl FeatureStore {
    pub fn new(entries: Vec<StoredVector>) -> Self {
        FeatureStore { entries }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{STORE_HEADER}\n");
        for e in &self.entries {
            write_entry(&mut out, e);
        }
        out
    }

    /// Parses store text, skipping malformed lines.
    pub fn parse(text: &str) -> Result<LoadReport, StoreError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            None => return Err(StoreError::MissingHeader),
            Some((_, h)) if h.trim_end_matches('\r') != STORE_HEADER => {
                return Err(StoreError::Version(h.to_string()))
            }
            Some(_) => {}
        }
        let mut report = LoadReport::default();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut skip = |line: usize, reason: String| report.skipped.push(SkippedLine { line: line + 1, reason });
        let mut entries: Vec<StoredVector> = Vec::new();
        for (n, raw) in lines {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("@subject\t") {
                let parsed = rest.split_once('\t').and_then(|(s, l)| {
                    let s = unescape_field(s)?;
                    let l = if l == "-" { None } else { Some(unescape_field(l)?) };
                    Some((s, l))
                });
                match parsed {
                    Some((s, _)) if index.contains_key(&s) => skip(n, format!("subject `{s}` indexed twice")),
                    Some((s, label)) => {
                        index.insert(s.clone(), entries.len());
                        entries.push(StoredVector {
                            label,
                            vector: FeatureVector::new(s),
                        });
                    }
                    None => skip(n, "malformed subject line".into()),
                }
                continue;
            }
            match parse_record(line) {
                Ok((subject, id, count)) => match index.get(&subject) {
                    Some(&i) if entries[i].vector.get(&id) == 0 => entries[i].vector.add(id, count),
                    Some(_) => skip(n, format!("duplicate record for `{id}`")),
                    None => skip(n, format!("record for unindexed subject `{subject}`")),
                },
                Err(reason) => skip(n, reason),
            }
        }
        report.store.entries = entries;
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        fs::write(path, self.to_text()).map_err(io(path))
    }

    pub fn load(path: &Path) -> Result<LoadReport, StoreError> {
        let text = fs::read_to_string(path).map_err(io(path))?;
        Self::parse(&text)
    }

    /// Appends entries to an existing store, creating it when absent.
    pub fn append(path: &Path, entries: &[StoredVector]) -> Result<(), StoreError> {
        let mut out = String::new();
        if path.exists() {
            let existing = Self::load(path)?;
            for e in entries {
                if existing.store.get(&e.vector.subject).is_some() {
                    return Err(StoreError::DuplicateSubject(e.vector.subject.clone()));
                }
            }
        } else {
            out.push_str(STORE_HEADER);
            out.push('\n');
        }
        for e in entries {
            write_entry(&mut out, e);
        }
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io(path))?;
        f.write_all(out.as_bytes()).map_err(io(path))
    }

    pub fn get(&self, subject: &str) -> Option<&StoredVector> {
        self.entries.iter().find(|e| e.vector.subject == subject)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(subject: &str, label: Option<&str>, feats: &[(&str, u64)]) -> StoredVector {
        let mut vector = FeatureVector::new(subject);
        for &(d, c) in feats {
            vector.add(FeatureId::new(Family::Ngram, d), c);
        }
        StoredVector {
            label: label.map(str::to_string),
            vector,
        }
    }

    #[test]
    fn empty_store_is_header_only() {
        let s = FeatureStore::default();
        assert_eq!(s.to_text(), format!("{STORE_HEADER}\n"));
        assert_eq!(FeatureStore::parse(&s.to_text()).unwrap().store, s);
    }

    #[test]
    fn round_trip_with_escapes() {
        let s = FeatureStore::new(vec![
            entry("p::f", Some("alice"), &[("mov|push", 2), ("a\tb%c", 1)]),
            entry("q", None, &[]),
        ]);
        let r = FeatureStore::parse(&s.to_text()).unwrap();
        assert!(r.skipped.is_empty());
        assert_eq!(r.store, s);
    }

    #[test]
    fn corrupted_line_skipped() {
        let s = FeatureStore::new(vec![entry("p", Some("a"), &[("x", 1), ("y", 2)])]);
        let text = s.to_text().replace("\ty\t2", "\ty\tzz");
        let r = FeatureStore::parse(&text).unwrap();
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].line, 4);
        assert_eq!(r.store.entries[0].vector.len(), 1);
    }

    #[test]
    fn version_checked() {
        assert!(matches!(FeatureStore::parse("#binstyle-store v0\n"), Err(StoreError::Version(_))));
        assert!(matches!(FeatureStore::parse(""), Err(StoreError::MissingHeader)));
    }

    #[test]
    fn append_extends_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.store");
        FeatureStore::append(&path, &[entry("a", Some("x"), &[("m", 1)])]).unwrap();
        FeatureStore::append(&path, &[entry("b", Some("y"), &[("n", 3)])]).unwrap();
        let r = FeatureStore::load(&path).unwrap();
        assert_eq!(r.store.len(), 2);
        assert!(FeatureStore::append(&path, &[entry("a", None, &[])]).is_err());
    }
}
