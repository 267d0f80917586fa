//! Linear authorship attribution, cross-validation and scalability sweeps.

mod svm;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{escape_field, unescape_field, Family, FeatureId, FeatureVector};
use crate::ranking::{LabeledDataset, RankMethod, SparseMatrix};
use svm::{train_binary, BinarySvm, Row, SvmParams};

/// F-measure weighting precision twice as much as recall:
/// `1.25 * P * R / (0.25 * P + R)`. Defined as 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    let denom = 0.25 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        1.25 * precision * recall / denom
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttributionError {
    #[error("author `{author}` has {count} training subjects; at least 2 are required")]
    TooFewSubjects { author: String, count: usize },
    #[error("none of the selected features occur in the training data")]
    NoFeatures,
    #[error("cross-validation needs at least {needed} subjects, found {found}")]
    TooFewForFolds { needed: usize, found: usize },
    #[error("requested {requested} authors but only {available} are available")]
    NotEnoughAuthors { requested: usize, available: usize },
    #[error("author counts must be non-decreasing")]
    UnsortedCounts,
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("model file line {line}: {message}")]
    ModelFormat { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// L2-normalize each subject's count vector before training and scoring.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 1.0,
            max_epochs: 200,
            tolerance: 0.1,
            seed: 0,
            normalize: true,
        }
    }
}

fn to_row(pairs: impl Iterator<Item = (u32, f64)>, normalize: bool) -> Row {
    let mut row: Row = pairs.collect();
    row.sort_unstable_by_key(|&(c, _)| c);
    if normalize {
        let norm = row.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|(_, v)| *v /= norm);
        }
    }
    row
}

/// One-vs-rest linear decision functions over a fixed feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionModel {
    pub features: Vec<FeatureId>,
    /// Sorted author labels; row `i` of `weights` and `bias` belongs to `authors[i]`.
    pub authors: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub config: TrainConfig,
    index: HashMap<FeatureId, u32>,
}

impl AttributionModel {
    fn from_parts(
        features: Vec<FeatureId>,
        authors: Vec<String>,
        svms: Vec<BinarySvm>,
        config: TrainConfig,
    ) -> Self {
        let dim = features.len();
        let (weights, bias) = svms
            .into_iter()
            .map(|m| (m.w[..dim].to_vec(), m.w[dim]))
            .unzip();
        let index = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i as u32))
            .collect();
        AttributionModel {
            features,
            authors,
            weights,
            bias,
            config,
            index,
        }
    }

    fn project(&self, vector: &FeatureVector) -> Row {
        to_row(
            vector
                .iter()
                .filter_map(|(id, &c)| self.index.get(id).map(|&col| (col, c as f64))),
            self.config.normalize,
        )
    }

    /// Per-author decision values in `authors` order.
    pub fn scores(&self, vector: &FeatureVector) -> Vec<f64> {
        let row = self.project(vector);
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| row.iter().map(|&(c, v)| w[c as usize] * v).sum::<f64>() + b)
            .collect()
    }

    pub fn predict(&self, vector: &FeatureVector) -> &str {
        &self.authors[argmax(&self.scores(vector))]
    }

    /// Text serialization: header, features, then one weight line per author.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "#binstyle-model v1").unwrap();
        writeln!(
            out,
            "config\tc={}\tmax_epochs={}\ttolerance={}\tseed={}\tnormalize={}",
            self.config.c, self.config.max_epochs, self.config.tolerance, self.config.seed, self.config.normalize
        )
        .unwrap();
        for f in &self.features {
            writeln!(out, "feature\t{}\t{}", f.family, escape_field(&f.descriptor)).unwrap();
        }
        for ((a, w), b) in self.authors.iter().zip(&self.weights).zip(&self.bias) {
            write!(out, "author\t{}\t{b:e}", escape_field(a)).unwrap();
            for x in w {
                write!(out, "\t{x:e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, AttributionError> {
        let err = |line: usize, message: &str| AttributionError::ModelFormat {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "#binstyle-model v1")) => {}
            _ => return Err(err(1, "missing or unsupported version header")),
        }
        let mut config = None;
        let mut features = Vec::new();
        let mut authors = Vec::new();
        let mut svms = Vec::new();
        for (i, line) in lines {
            let no = i + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            match fields[0] {
                "config" => {
                    let mut cfg = TrainConfig::default();
                    for kv in &fields[1..] {
                        let (k, v) = kv.split_once('=').ok_or_else(|| err(no, "bad config field"))?;
                        let bad = |_| err(no, "bad config value");
                        match k {
                            "c" => cfg.c = v.parse().map_err(|_| err(no, "bad c"))?,
                            "max_epochs" => cfg.max_epochs = v.parse().map_err(|_| err(no, "bad max_epochs"))?,
                            "tolerance" => cfg.tolerance = v.parse().map_err(|_| err(no, "bad tolerance"))?,
                            "seed" => cfg.seed = v.parse().map_err(|_| err(no, "bad seed"))?,
                            "normalize" => cfg.normalize = v.parse().map_err(bad)?,
                            _ => return Err(err(no, "unknown config key")),
                        }
                    }
                    config = Some(cfg);
                }
                "feature" if fields.len() == 3 => {
                    if !authors.is_empty() {
                        return Err(err(no, "feature after author lines"));
                    }
                    let family: Family = fields[1].parse().map_err(|_| err(no, "unknown family"))?;
                    let descriptor = unescape_field(fields[2]).ok_or_else(|| err(no, "bad escape"))?;
                    features.push(FeatureId::new(family, descriptor));
                }
                "author" if fields.len() == features.len() + 3 => {
                    let name = unescape_field(fields[1]).ok_or_else(|| err(no, "bad escape"))?;
                    if authors.last().is_some_and(|prev: &String| prev >= &name) {
                        return Err(err(no, "authors must be strictly sorted"));
                    }
                    let mut w = Vec::with_capacity(features.len() + 1);
                    for x in &fields[3..] {
                        w.push(x.parse::<f64>().map_err(|_| err(no, "bad weight"))?);
                    }
                    w.push(fields[2].parse::<f64>().map_err(|_| err(no, "bad bias"))?);
                    if w.iter().any(|x| !x.is_finite()) {
                        return Err(err(no, "non-finite weight"));
                    }
                    authors.push(name);
                    svms.push(BinarySvm { w });
                }
                "" => {}
                _ => return Err(err(no, "unrecognized line")),
            }
        }
        let config = config.ok_or_else(|| err(1, "missing config line"))?;
        if authors.is_empty() {
            return Err(err(1, "model has no authors"));
        }
        if features.iter().collect::<BTreeSet<_>>().len() != features.len() {
            return Err(err(1, "duplicate feature"));
        }
        Ok(Self::from_parts(features, authors, svms, config))
    }
}

/// Index of the largest score; ties go to the lower index.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Trains over `rows` of the matrix using the global feature indices `feats`.
fn train_rows(
    m: &SparseMatrix,
    rows: &[usize],
    feats: &[u32],
    config: &TrainConfig,
) -> Result<AttributionModel, AttributionError> {
    let mut column = vec![u32::MAX; m.features.len()];
    for (col, &f) in feats.iter().enumerate() {
        column[f as usize] = col as u32;
    }
    let mut per_author: BTreeMap<usize, usize> = BTreeMap::new();
    for &r in rows {
        *per_author.entry(m.labels[r]).or_insert(0) += 1;
    }
    for (&a, &count) in &per_author {
        if count < 2 {
            return Err(AttributionError::TooFewSubjects {
                author: m.authors[a].clone(),
                count,
            });
        }
    }
    let data: Vec<Row> = rows
        .iter()
        .map(|&r| {
            to_row(
                m.rows[r].iter().filter_map(|&(f, v)| {
                    let c = column[f as usize];
                    (c != u32::MAX).then_some((c, v))
                }),
                config.normalize,
            )
        })
        .collect();
    if data.iter().all(Vec::is_empty) {
        return Err(AttributionError::NoFeatures);
    }
    let params = SvmParams {
        c: config.c,
        max_epochs: config.max_epochs,
        tolerance: config.tolerance,
        seed: config.seed,
    };
    let svms = per_author
        .keys()
        .map(|&a| {
            let positive: Vec<bool> = rows.iter().map(|&r| m.labels[r] == a).collect();
            train_binary(&data, &positive, feats.len(), &params)
        })
        .collect();
    let authors = per_author.keys().map(|&a| m.authors[a].clone()).collect();
    let features = feats.iter().map(|&f| m.features[f as usize].clone()).collect();
    Ok(AttributionModel::from_parts(features, authors, svms, config.clone()))
}

/// Trains one-vs-rest decision functions on `features`.
pub fn train(
    ds: &LabeledDataset,
    features: &[FeatureId],
    config: &TrainConfig,
) -> Result<AttributionModel, AttributionError> {
    if features.is_empty() {
        return Err(AttributionError::NoFeatures);
    }
    let m = SparseMatrix::from_dataset(ds);
    let lookup: HashMap<&FeatureId, u32> = m
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| (f, i as u32))
        .collect();
    let wanted: BTreeSet<&FeatureId> = features.iter().collect();
    let feats: Vec<u32> = wanted.iter().filter_map(|f| lookup.get(*f).copied()).collect();
    if feats.is_empty() {
        return Err(AttributionError::NoFeatures);
    }
    let rows: Vec<usize> = (0..m.rows.len()).collect();
    train_rows(&m, &rows, &feats, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuthorScore {
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub repeat: usize,
    pub fold: usize,
    pub per_author: BTreeMap<String, AuthorScore>,
    pub precision: f64,
    pub recall: f64,
    pub f05: f64,
    pub accuracy: f64,
    /// (true author, predicted author) -> count.
    pub confusion: BTreeMap<(String, String), usize>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Scores predictions against ground truth. Labels are the union of true
    /// and predicted authors; undefined ratios count as 0.
    pub fn from_predictions(
        repeat: usize,
        fold: usize,
        pairs: &[(String, String)],
        averaging: Averaging,
    ) -> Self {
        let mut confusion: BTreeMap<(String, String), usize> = BTreeMap::new();
        let mut labels = BTreeSet::new();
        for (t, p) in pairs {
            *confusion.entry((t.clone(), p.clone())).or_insert(0) += 1;
            labels.insert(t.clone());
            labels.insert(p.clone());
        }
        let correct = pairs.iter().filter(|(t, p)| t == p).count();
        let accuracy = if pairs.is_empty() {
            0.0
        } else {
            correct as f64 / pairs.len() as f64
        };
        let mut per_author = BTreeMap::new();
        for a in &labels {
            let tp = confusion.get(&(a.clone(), a.clone())).copied().unwrap_or(0);
            let predicted = pairs.iter().filter(|(_, p)| p == a).count();
            let support = pairs.iter().filter(|(t, _)| t == a).count();
            let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
            per_author.insert(
                a.clone(),
                AuthorScore {
                    precision: ratio(tp, predicted),
                    recall: ratio(tp, support),
                    support,
                },
            );
        }
        let (precision, recall) = match averaging {
            Averaging::Micro => (accuracy, accuracy),
            Averaging::Macro if per_author.is_empty() => (0.0, 0.0),
            Averaging::Macro => {
                let n = per_author.len() as f64;
                (
                    per_author.values().map(|s| s.precision).sum::<f64>() / n,
                    per_author.values().map(|s| s.recall).sum::<f64>() / n,
                )
            }
        };
        EvalReport {
            repeat,
            fold,
            per_author,
            precision,
            recall,
            f05: f_measure(precision, recall),
            accuracy,
            confusion,
            warnings: Vec::new(),
        }
    }

    pub fn test_authors(&self) -> usize {
        self.per_author.values().filter(|s| s.support > 0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub repeats: usize,
    pub top_k: usize,
    pub method: RankMethod,
    pub averaging: Averaging,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 10,
            repeats: 15,
            top_k: 4500,
            method: RankMethod::MutualInformation,
            averaging: Averaging::Macro,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSummary {
    pub reports: Vec<EvalReport>,
    pub mean_f05: f64,
    pub std_f05: f64,
    pub mean_accuracy: f64,
}

impl CvSummary {
    /// `repeat\tfold\tauthors\tP\tR\tF0.5` lines followed by a summary line.
    pub fn dump(&self) -> String {
        let mut out = String::from("repeat\tfold\tauthors\tP\tR\tF0.5\n");
        for r in &self.reports {
            writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                r.repeat,
                r.fold,
                r.test_authors(),
                r.precision,
                r.recall,
                r.f05
            )
            .unwrap();
        }
        writeln!(
            out,
            "# mean_f0.5={:.6}\tstd_f0.5={:.6}\tmean_accuracy={:.6}",
            self.mean_f05, self.std_f05, self.mean_accuracy
        )
        .unwrap();
        for w in self.reports.iter().flat_map(|r| &r.warnings).collect::<BTreeSet<_>>() {
            writeln!(out, "# warning: {w}").unwrap();
        }
        out
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Stratified fold assignment: each author's subjects are shuffled and dealt
/// round-robin, continuing where the previous author stopped.
pub fn stratified_folds(labels: &[usize], folds: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut by_author: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &a) in labels.iter().enumerate() {
        by_author.entry(a).or_default().push(i);
    }
    let mut assignment = vec![0; labels.len()];
    let mut next = rng.gen_range(0..folds);
    for members in by_author.values_mut() {
        members.shuffle(rng);
        for &i in members.iter() {
            assignment[i] = next;
            next = (next + 1) % folds;
        }
    }
    assignment
}

fn cv_matrix(m: &SparseMatrix, config: &CvConfig) -> Result<CvSummary, AttributionError> {
    if config.folds < 2 || config.repeats == 0 || config.top_k == 0 {
        return Err(AttributionError::Parameter(
            "folds >= 2, repeats >= 1 and top_k >= 1 are required".into(),
        ));
    }
    let n = m.rows.len();
    let needed = config.folds.max(10);
    if n < needed {
        return Err(AttributionError::TooFewForFolds { needed, found: n });
    }
    let per_fold = n / config.folds;
    let mut warnings = Vec::new();
    if m.authors.len() > per_fold {
        warnings.push(format!(
            "{} authors exceed the {per_fold} subjects per fold; some folds miss authors",
            m.authors.len()
        ));
    }
    let mut reports = Vec::new();
    for repeat in 0..config.repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (repeat as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let assignment = stratified_folds(&m.labels, config.folds, &mut rng);
        for fold in 0..config.folds {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&i| assignment[i] == fold);
            if test.is_empty() {
                continue;
            }
            let feats = m.top_k(&train, config.method, config.top_k);
            let mut tcfg = config.train.clone();
            tcfg.seed = config.train.seed.wrapping_add((repeat * config.folds + fold) as u64);
            let model = train_rows(m, &train, &feats, &tcfg)?;
            let column: HashMap<u32, u32> = feats
                .iter()
                .enumerate()
                .map(|(c, &f)| (f, c as u32))
                .collect();
            let pairs: Vec<(String, String)> = test
                .iter()
                .map(|&r| {
                    let row = to_row(
                        m.rows[r]
                            .iter()
                            .filter_map(|&(f, v)| column.get(&f).map(|&c| (c, v))),
                        tcfg.normalize,
                    );
                    let scores: Vec<f64> = model
                        .weights
                        .iter()
                        .zip(&model.bias)
                        .map(|(w, b)| row.iter().map(|&(c, v)| w[c as usize] * v).sum::<f64>() + b)
                        .collect();
                    (m.authors[m.labels[r]].clone(), model.authors[argmax(&scores)].clone())
                })
                .collect();
            let mut report = EvalReport::from_predictions(repeat, fold, &pairs, config.averaging);
            report.warnings = warnings.clone();
            reports.push(report);
        }
    }
    reports.sort_by_key(|r| (r.repeat, r.fold));
    let f: Vec<f64> = reports.iter().map(|r| r.f05).collect();
    let (mean_f05, std_f05) = mean_std(&f);
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    Ok(CvSummary {
        mean_f05,
        std_f05,
        mean_accuracy: mean_std(&acc).0,
        reports,
    })
}

/// Repeated stratified k-fold evaluation. Ranking and top-k selection see
/// only the training folds of each split.
pub fn cross_validate(ds: &LabeledDataset, config: &CvConfig) -> Result<CvSummary, AttributionError> {
    cv_matrix(&SparseMatrix::from_dataset(ds), config)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub authors: usize,
    pub mean_f05: f64,
    pub std_f05: f64,
}

/// `authors\tmeanF0.5\tstddev` lines.
pub fn dump_curve(curve: &[CurvePoint]) -> String {
    let mut out = String::from("authors\tmeanF0.5\tstddev\n");
    for p in curve {
        writeln!(out, "{}\t{:.6}\t{:.6}", p.authors, p.mean_f05, p.std_f05).unwrap();
    }
    out
}

/// Upper bound on author draws averaged per sweep point.
pub const MAX_SWEEP_DRAWS: usize = 20;

/// Mean F0.5 as a function of the number of candidate authors. A point with
/// `count` authors averages `universe / count` independent author draws,
/// between 1 and [`MAX_SWEEP_DRAWS`].
pub fn scalability_sweep(
    ds: &LabeledDataset,
    author_counts: &[usize],
    config: &CvConfig,
) -> Result<Vec<CurvePoint>, AttributionError> {
    if author_counts.windows(2).any(|w| w[1] < w[0]) {
        return Err(AttributionError::UnsortedCounts);
    }
    let universe: Vec<&String> = ds.authors().iter().collect();
    let matrix = SparseMatrix::from_dataset(ds);
    let mut curve = Vec::new();
    for &count in author_counts {
        if count > universe.len() {
            return Err(AttributionError::NotEnoughAuthors {
                requested: count,
                available: universe.len(),
            });
        }
        let draws = (universe.len() / count.max(1)).clamp(1, MAX_SWEEP_DRAWS);
        let mut scores = Vec::new();
        for draw in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(
                config.seed.wrapping_add(count as u64).wrapping_add((draw as u64) << 32),
            );
            let mut pool = universe.clone();
            pool.shuffle(&mut rng);
            let chosen: BTreeSet<&str> = pool.into_iter().take(count).map(String::as_str).collect();
            let summary = cv_matrix(&matrix.restrict(&chosen), config)?;
            scores.extend(summary.reports.iter().map(|r| r.f05));
        }
        let (mean_f05, std_f05) = mean_std(&scores);
        curve.push(CurvePoint {
            authors: count,
            mean_f05,
            std_f05,
        });
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::Sample;

    fn sample(id: &str, label: &str, feats: &[(&str, u64)]) -> Sample {
        let mut vector = FeatureVector::new(id);
        for &(f, c) in feats {
            vector.add(FeatureId::new(Family::Opcode, f), c);
        }
        Sample {
            id: id.into(),
            label: label.into(),
            vector,
        }
    }

    fn separable() -> LabeledDataset {
        let mut s = Vec::new();
        for i in 0..6 {
            s.push(sample(&format!("a{i}"), "alice", &[("x", 3 + i), ("c", 1)]));
            s.push(sample(&format!("b{i}"), "bob", &[("y", 2 + i), ("c", 1)]));
        }
        LabeledDataset::new(s).unwrap()
    }

    fn fid(d: &str) -> FeatureId {
        FeatureId::new(Family::Opcode, d)
    }

    #[test]
    fn f_measure_values() {
        assert_eq!(f_measure(1.0, 1.0), 1.0);
        assert!((f_measure(0.6, 0.6) - 0.6).abs() < 1e-15);
        assert!((f_measure(0.8, 0.5) - 0.714286).abs() < 1e-6);
        assert_eq!(f_measure(0.0, 0.0), 0.0);
    }

    #[test]
    fn separable_training_accuracy() {
        let ds = separable();
        let model = train(&ds, &[fid("x"), fid("y"), fid("c")], &TrainConfig::default()).unwrap();
        for s in ds.samples() {
            assert_eq!(model.predict(&s.vector), s.label);
        }
    }

    #[test]
    fn too_few_subjects() {
        let mut s = separable().samples().to_vec();
        s.push(sample("z", "zed", &[("x", 1)]));
        let ds = LabeledDataset::new(s).unwrap();
        let err = train(&ds, &[fid("x")], &TrainConfig::default()).unwrap_err();
        assert_eq!(
            err,
            AttributionError::TooFewSubjects {
                author: "zed".into(),
                count: 1
            }
        );
    }

    #[test]
    fn empty_feature_intersection() {
        let err = train(&separable(), &[fid("nope")], &TrainConfig::default()).unwrap_err();
        assert_eq!(err, AttributionError::NoFeatures);
        assert_eq!(
            train(&separable(), &[], &TrainConfig::default()).unwrap_err(),
            AttributionError::NoFeatures
        );
    }

    #[test]
    fn tie_goes_to_first_author() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn model_text_round_trip() {
        let model = train(&separable(), &[fid("x"), fid("y"), fid("c")], &TrainConfig::default()).unwrap();
        let again = AttributionModel::from_text(&model.to_text()).unwrap();
        assert_eq!(model.features, again.features);
        assert_eq!(model.authors, again.authors);
        for s in separable().samples() {
            assert_eq!(model.predict(&s.vector), again.predict(&s.vector));
        }
        assert!(AttributionModel::from_text("garbage").is_err());
    }

    #[test]
    fn report_confusion_and_macro() {
        let pairs = vec![
            ("a".to_string(), "a".to_string()),
            ("a".to_string(), "b".to_string()),
            ("b".to_string(), "b".to_string()),
            ("b".to_string(), "b".to_string()),
        ];
        let r = EvalReport::from_predictions(0, 0, &pairs, Averaging::Macro);
        assert_eq!(r.accuracy, 0.75);
        // a: P=1, R=0.5; b: P=2/3, R=1
        assert!((r.precision - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((r.recall - 0.75).abs() < 1e-12);
        let micro = EvalReport::from_predictions(0, 0, &pairs, Averaging::Micro);
        assert_eq!(micro.precision, 0.75);
        let trace: usize = r
            .confusion
            .iter()
            .filter(|((t, p), _)| t == p)
            .map(|(_, c)| c)
            .sum();
        assert_eq!(trace as f64 / pairs.len() as f64, r.accuracy);
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = stratified_folds(&labels, 10, &mut rng);
        for fold in 0..10 {
            let size = a.iter().filter(|&&f| f == fold).count();
            assert_eq!(size, 4);
        }
        for author in 0..4 {
            let folds: BTreeSet<usize> = (0..40).filter(|&i| labels[i] == author).map(|i| a[i]).collect();
            assert_eq!(folds.len(), 10);
        }
    }

    #[test]
    fn cv_too_small() {
        let ds = LabeledDataset::new(separable().samples()[..8].to_vec()).unwrap();
        assert_eq!(
            cross_validate(&ds, &CvConfig::default()).unwrap_err(),
            AttributionError::TooFewForFolds { needed: 10, found: 8 }
        );
    }

    #[test]
    fn sweep_rejects_bad_counts() {
        let ds = separable();
        let cfg = CvConfig::default();
        assert_eq!(
            scalability_sweep(&ds, &[2, 1], &cfg).unwrap_err(),
            AttributionError::UnsortedCounts
        );
        assert!(matches!(
            scalability_sweep(&ds, &[3], &cfg).unwrap_err(),
            AttributionError::NotEnoughAuthors { requested: 3, available: 2 }
        ));
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
