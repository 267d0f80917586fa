//! Corpus manifest: generation parameters plus one row per program.
//!
//! ```text
//! #binstyle-manifest v1
//! @seed 7
//! @authors 10
//! a000-p00	a000	-
//! a000-p01	a000	RR:1,DCI:0.3
//! ```

use super::{ForgeError, ForgeParams};
use crate::model::Program;

const HEADER: &str = "#binstyle-manifest v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub program: String,
    pub author: String,
    pub transforms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    /// Ordered `key value` parameters.
    pub params: Vec<(String, String)>,
    pub entries: Vec<ManifestEntry>,
}

fn err(line: usize, message: impl Into<String>) -> ForgeError {
    ForgeError::Manifest {
        line,
        message: message.into(),
    }
}

impl CorpusManifest {
    pub(crate) fn for_corpus(params: &ForgeParams, authors: usize, programs: &[Program]) -> Self {
        let range = |(lo, hi): (usize, usize)| format!("{lo}-{hi}");
        let mut m = CorpusManifest {
            params: vec![
                ("seed".into(), params.seed.to_string()),
                ("authors".into(), authors.to_string()),
                ("programs_per_author".into(), params.programs_per_author.to_string()),
                ("functions".into(), range(params.functions)),
                ("blocks".into(), range(params.blocks)),
                ("instructions".into(), range(params.instructions)),
                ("unnamed_fraction".into(), params.unnamed_fraction.to_string()),
                ("unnamed_marker".into(), params.unnamed_marker.to_string()),
            ],
            entries: Vec::new(),
        };
        if let Some(t) = params.total_programs {
            m.params.push(("total_programs".into(), t.to_string()));
        }
        m.entries = programs.iter().map(ManifestEntry::of).collect();
        m
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set_param(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.params.iter_mut().find(|(k, _)| k == key) {
            Some((_, v)) => *v = value,
            None => self.params.push((key.to_string(), value)),
        }
    }

    pub fn dump(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (k, v) in &self.params {
            out.push_str(&format!("@{k} {v}\n"));
        }
        for e in &self.entries {
            let t = if e.transforms.is_empty() {
                "-".to_string()
            } else {
                e.transforms.join(",")
            };
            out.push_str(&format!("{}\t{}\t{}\n", e.program, e.author, t));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ForgeError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == HEADER => {}
            _ => return Err(err(1, "missing manifest header")),
        }
        let mut m = CorpusManifest::default();
        for (i, raw) in lines {
            let n = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('@') {
                let (k, v) = rest
                    .split_once(' ')
                    .ok_or_else(|| err(n, "parameter line needs a key and a value"))?;
                if k.is_empty() || v.trim().is_empty() {
                    return Err(err(n, "empty parameter key or value"));
                }
                m.params.push((k.to_string(), v.trim().to_string()));
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [program, author, transforms] = fields[..] else {
                return Err(err(n, format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            if program.is_empty() || author.is_empty() {
                return Err(err(n, "empty program id or author"));
            }
            let transforms = match transforms {
                "-" => Vec::new(),
                t => t.split(',').map(str::to_string).collect(),
            };
            if transforms.iter().any(String::is_empty) {
                return Err(err(n, "empty transform entry"));
            }
            m.entries.push(ManifestEntry {
                program: program.to_string(),
                author: author.to_string(),
                transforms,
            });
        }
        Ok(m)
    }
}

impl ManifestEntry {
    pub fn of(p: &Program) -> Self {
        ManifestEntry {
            program: p.id.clone(),
            author: p.author.clone().unwrap_or_else(|| "-".into()),
            transforms: p.meta.transforms.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let m = CorpusManifest {
            params: vec![("seed".into(), "3".into())],
            entries: vec![
                ManifestEntry {
                    program: "a000-p00".into(),
                    author: "a000".into(),
                    transforms: vec![],
                },
                ManifestEntry {
                    program: "a000-p01".into(),
                    author: "a000".into(),
                    transforms: vec!["RR:1".into(), "DCI:0.3".into()],
                },
            ],
        };
        assert_eq!(CorpusManifest::parse(&m.dump()).unwrap(), m);
        assert_eq!(m.param("seed"), Some("3"));
    }

    #[test]
    fn rejects_malformed() {
        assert!(CorpusManifest::parse("").is_err());
        assert!(CorpusManifest::parse("#binstyle-manifest v1\nx\ty\n").is_err());
        assert!(CorpusManifest::parse("#binstyle-manifest v1\n@seed\n").is_err());
        assert!(CorpusManifest::parse("#binstyle-manifest v1\np\ta\tRR:1,,\n").is_err());
    }
}
