//! Feature ranking by association with author labels.
//!
//! Features are binarized to presence/absence per subject and scored in bits,
//! either as mutual information between presence and author or as the
//! information gain `H(A) - H(A|F)`. For binary presence features the two are
//! the same quantity computed along different routes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::features::{escape_field, FeatureId, FeatureVector};
use crate::model::Provenance;

/// Common top-k feature-set sizes.
pub const TOP_K_PRESETS: [usize; 3] = [4500, 6500, 10000];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RankingError {
    #[error("duplicate subject id `{0}`")]
    DuplicateSubject(String),
    #[error("dataset is empty")]
    Empty,
    #[error("unknown ranking method `{0}`")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub label: String,
    pub vector: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
    authors: BTreeSet<String>,
}

impl LabeledDataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self, RankingError> {
        let mut ids = BTreeSet::new();
        for s in &samples {
            if !ids.insert(s.id.as_str()) {
                return Err(RankingError::DuplicateSubject(s.id.clone()));
            }
        }
        let authors = samples.iter().map(|s| s.label.clone()).collect();
        Ok(LabeledDataset { samples, authors })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn authors(&self) -> &BTreeSet<String> {
        &self.authors
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples whose label is in `authors`, in original order.
    pub fn restrict(&self, authors: &BTreeSet<String>) -> LabeledDataset {
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| authors.contains(&s.label))
            .cloned()
            .collect();
        LabeledDataset::new(samples).expect("subset of unique ids")
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset::new(indices.iter().map(|&i| self.samples[i].clone()).collect())
            .expect("subset of unique ids")
    }

    /// Every feature present in at least one subject.
    pub fn features(&self) -> BTreeSet<FeatureId> {
        self.samples
            .iter()
            .flat_map(|s| s.vector.ids().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankMethod {
    #[default]
    MutualInformation,
    InformationGain,
}

impl RankMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RankMethod::MutualInformation => "mutual-information",
            RankMethod::InformationGain => "information-gain",
        }
    }
}

impl fmt::Display for RankMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RankMethod {
    type Err = RankingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mi" | "mutual-information" => Ok(RankMethod::MutualInformation),
            "ig" | "information-gain" => Ok(RankMethod::InformationGain),
            other => Err(RankingError::UnknownMethod(other.to_string())),
        }
    }
}

/// Contingency of one binary feature against author labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    /// Subjects per author.
    pub totals: Vec<u64>,
    /// Subjects per author in which the feature is present.
    pub present: Vec<u64>,
}

impl Contingency {
    pub fn mutual_information(&self) -> f64 {
        mi_counts(&self.totals, &self.present)
    }

    pub fn information_gain(&self) -> f64 {
        ig_counts(&self.totals, &self.present)
    }
}

fn mi_counts(totals: &[u64], present: &[u64]) -> f64 {
    let n_all: u64 = totals.iter().sum();
    if n_all == 0 {
        return 0.0;
    }
    let n = n_all as f64;
    let n_present: u64 = present.iter().sum();
    let p1 = n_present as f64 / n;
    let p0 = (n_all - n_present) as f64 / n;
    let mut mi = 0.0;
    for (&total, &pres) in totals.iter().zip(present) {
        let pa = total as f64 / n;
        for (joint, pf) in [(pres, p1), (total - pres, p0)] {
            if joint > 0 {
                let pj = joint as f64 / n;
                mi += pj * (pj / (pf * pa)).log2();
            }
        }
    }
    mi.max(0.0)
}

fn ig_counts(totals: &[u64], present: &[u64]) -> f64 {
    let n: u64 = totals.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n_present: u64 = present.iter().sum();
    let absent: Vec<u64> = totals.iter().zip(present).map(|(t, p)| t - p).collect();
    let h_given = (n_present as f64 * entropy(present)
        + (n - n_present) as f64 * entropy(&absent))
        / n as f64;
    (entropy(totals) - h_given).max(0.0)
}

/// Shannon entropy in bits of an empirical count distribution.
pub fn entropy(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

fn author_index(ds: &LabeledDataset) -> BTreeMap<&str, usize> {
    ds.authors()
        .iter()
        .enumerate()
        .map(|(i, a)| (a.as_str(), i))
        .collect()
}

pub fn contingency(ds: &LabeledDataset, feature: &FeatureId) -> Contingency {
    let index = author_index(ds);
    let mut totals = vec![0; index.len()];
    let mut present = vec![0; index.len()];
    for s in ds.samples() {
        let a = index[s.label.as_str()];
        totals[a] += 1;
        if s.vector.get(feature) > 0 {
            present[a] += 1;
        }
    }
    Contingency { totals, present }
}

pub fn mutual_information(ds: &LabeledDataset, feature: &FeatureId) -> f64 {
    contingency(ds, feature).mutual_information()
}

pub fn information_gain(ds: &LabeledDataset, feature: &FeatureId) -> f64 {
    contingency(ds, feature).information_gain()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedFeatureList {
    pub method: RankMethod,
    pub entries: Vec<(FeatureId, f64)>,
}

impl RankedFeatureList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `<rank>\t<score-bits>\t<family>\t<descriptor>` lines, rank from 1.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, (id, score)) in self.entries.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{:.12}\t{}\t{}\n",
                i + 1,
                score,
                id.family,
                escape_field(&id.descriptor)
            ));
        }
        out
    }
}

/// Score descending, then descriptor, then family.
pub(crate) fn rank_order(a: &(FeatureId, f64), b: &(FeatureId, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| a.0.descriptor.cmp(&b.0.descriptor))
        .then_with(|| a.0.family.cmp(&b.0.family))
}

pub fn rank_features(ds: &LabeledDataset, method: RankMethod) -> RankedFeatureList {
    let m = SparseMatrix::from_dataset(ds);
    let rows: Vec<usize> = (0..m.rows.len()).collect();
    let mut entries: Vec<(FeatureId, f64)> = m
        .score_rows(&rows, method)
        .into_iter()
        .map(|(f, s)| (m.features[f as usize].clone(), s))
        .collect();
    entries.sort_by(rank_order);
    RankedFeatureList { method, entries }
}

pub fn select_top_k(ranked: &RankedFeatureList, k: usize) -> Vec<FeatureId> {
    ranked
        .entries
        .iter()
        .take(k)
        .map(|(id, _)| id.clone())
        .collect()
}

/// Dataset with interned feature ids, shared by ranking and training so the
/// cross-validation loop never rebuilds string keys.
#[derive(Debug, Clone)]
pub(crate) struct SparseMatrix {
    pub features: Vec<FeatureId>,
    pub authors: Vec<String>,
    pub labels: Vec<usize>,
    /// Per sample, (feature index, count) sorted by feature index.
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl SparseMatrix {
    pub fn from_dataset(ds: &LabeledDataset) -> Self {
        let features: Vec<FeatureId> = ds.features().into_iter().collect();
        let lookup: HashMap<&FeatureId, u32> = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f, i as u32))
            .collect();
        let index = author_index(ds);
        let rows = ds
            .samples()
            .iter()
            .map(|s| {
                s.vector
                    .iter()
                    .map(|(id, &c)| (lookup[id], c as f64))
                    .collect()
            })
            .collect();
        let labels = ds.samples().iter().map(|s| index[s.label.as_str()]).collect();
        SparseMatrix {
            authors: ds.authors().iter().cloned().collect(),
            features,
            labels,
            rows,
        }
    }

    /// Samples of the given authors only, with author indices renumbered.
    pub fn restrict(&self, authors: &BTreeSet<&str>) -> SparseMatrix {
        let kept: Vec<String> = self
            .authors
            .iter()
            .filter(|a| authors.contains(a.as_str()))
            .cloned()
            .collect();
        let remap: Vec<Option<usize>> = self
            .authors
            .iter()
            .map(|a| kept.iter().position(|k| k == a))
            .collect();
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for (row, &label) in self.rows.iter().zip(&self.labels) {
            if let Some(l) = remap[label] {
                labels.push(l);
                rows.push(row.clone());
            }
        }
        SparseMatrix {
            features: self.features.clone(),
            authors: kept,
            labels,
            rows,
        }
    }

    /// Scores every feature present in at least one of `rows`.
    pub fn score_rows(&self, rows: &[usize], method: RankMethod) -> Vec<(u32, f64)> {
        let n_authors = self.authors.len();
        let mut totals = vec![0u64; n_authors];
        let mut occurrences: Vec<Vec<u32>> = vec![Vec::new(); self.features.len()];
        for &r in rows {
            let a = self.labels[r];
            totals[a] += 1;
            for &(f, _) in &self.rows[r] {
                occurrences[f as usize].push(a as u32);
            }
        }
        let mut scored = Vec::new();
        let mut present = vec![0u64; n_authors];
        for (f, authors) in occurrences.iter().enumerate() {
            if authors.is_empty() {
                continue;
            }
            present.iter_mut().for_each(|p| *p = 0);
            for &a in authors {
                present[a as usize] += 1;
            }
            let score = match method {
                RankMethod::MutualInformation => mi_counts(&totals, &present),
                RankMethod::InformationGain => ig_counts(&totals, &present),
            };
            scored.push((f as u32, score));
        }
        scored
    }

    /// Top `k` feature indices over `rows` in rank order.
    pub fn top_k(&self, rows: &[usize], method: RankMethod, k: usize) -> Vec<u32> {
        let mut scored = self.score_rows(rows, method);
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1).then_with(|| {
                let (fa, fb) = (&self.features[a.0 as usize], &self.features[b.0 as usize]);
                fa.descriptor
                    .cmp(&fb.descriptor)
                    .then_with(|| fa.family.cmp(&fb.family))
            })
        });
        scored.truncate(k);
        scored.into_iter().map(|(f, _)| f).collect()
    }
}

/// Where a feature's occurrences come from, by function provenance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureOrigins {
    mass: BTreeMap<FeatureId, BTreeMap<Provenance, u64>>,
}

impl FeatureOrigins {
    pub fn add(&mut self, provenance: Provenance, vector: &FeatureVector) {
        for (id, &c) in vector.iter() {
            *self
                .mass
                .entry(id.clone())
                .or_default()
                .entry(provenance)
                .or_insert(0) += c;
        }
    }

    /// Fraction of the feature's occurrences that sit in functions of the
    /// given provenance.
    pub fn share(&self, id: &FeatureId, provenance: Provenance) -> f64 {
        let Some(by) = self.mass.get(id) else {
            return 0.0;
        };
        let total: u64 = by.values().sum();
        if total == 0 {
            return 0.0;
        }
        by.get(&provenance).copied().unwrap_or(0) as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub rank: usize,
    pub feature: FeatureId,
    pub score: f64,
    pub unknown_share: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn flagged(&self) -> impl Iterator<Item = &AuditEntry> {
        self.entries.iter().filter(|e| e.flagged)
    }

    /// `<rank>\t<score>\t<unknown-share>\t<flag>\t<family>\t<descriptor>` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{:.12}\t{:.4}\t{}\t{}\t{}\n",
                e.rank,
                e.score,
                e.unknown_share,
                if e.flagged { "misleading" } else { "ok" },
                e.feature.family,
                escape_field(&e.feature.descriptor)
            ));
        }
        out
    }
}

/// Flags top-ranked features that mostly occur in unnamed (`sub_`)
/// functions, whose ranking reflects naming artifacts rather than style.
pub fn audit_misleading(
    ranked: &RankedFeatureList,
    top: usize,
    origins: &FeatureOrigins,
) -> AuditReport {
    let entries = ranked
        .entries
        .iter()
        .take(top)
        .enumerate()
        .map(|(i, (id, score))| {
            let unknown_share = origins.share(id, Provenance::Unknown);
            AuditEntry {
                rank: i + 1,
                feature: id.clone(),
                score: *score,
                unknown_share,
                flagged: unknown_share > 0.5,
            }
        })
        .collect();
    AuditReport { entries }
}
