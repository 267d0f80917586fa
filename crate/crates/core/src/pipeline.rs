//! End-to-end workflow: ingest, filter, extract, store, rank, train,
//! evaluate and optionally cluster, writing one artifact per stage.
//!
//! | artifact | content |
//! |----------|---------|
//! | `features.store` | program-level vectors with author labels |
//! | `functions.store` | function-level vectors (only when clustering) |
//! | `ranked.tsv` | ranked feature list |
//! | `model.txt` | attribution model trained on every labeled program |
//! | `eval.tsv` | cross-validation report |
//! | `clusters.tsv` | clustering report (only when clustering) |
//!
//! Ranking and everything after it read the feature store back from disk
//! rather than the in-memory programs. When a stage fails after artifacts
//! were written, a `PARTIAL` file lists them together with the failing stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::attribution::{cross_validate, train, CvConfig};
use crate::clustering::{evaluate_clusters, kmeans_vectors, ClusterReport, KMeansConfig, PurityThresholds};
use crate::features::{extract_all, FeatureConfig, FeatureId, FeatureVector, Filtration};
use crate::model::{classify_provenance, parse_listings, Program, SignatureSet};
use crate::ranking::{
    audit_misleading, rank_features, select_top_k, AuditReport, FeatureOrigins, LabeledDataset, RankMethod, Sample,
};
use crate::store::{FeatureStore, StoredVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Filter,
    Extract,
    Store,
    Rank,
    Train,
    Eval,
    Cluster,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Filter => "filter",
            Stage::Extract => "extract",
            Stage::Store => "store",
            Stage::Rank => "rank",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Cluster => "cluster",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or input data.
    Data,
    /// Failure writing artifacts or another environment problem.
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("stage `{stage}` failed: {cause}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub cause: String,
    /// Artifacts written before the failure.
    pub partial: Vec<PathBuf>,
}

impl PipelineError {
    pub fn data(stage: Stage, cause: impl fmt::Display) -> Self {
        PipelineError {
            stage,
            kind: ErrorKind::Data,
            cause: cause.to_string(),
            partial: Vec::new(),
        }
    }

    pub fn internal(stage: Stage, cause: impl fmt::Display) -> Self {
        PipelineError {
            kind: ErrorKind::Internal,
            ..Self::data(stage, cause)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOptions {
    pub k: usize,
    pub thresholds: PurityThresholds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Listing files or directories of listing files.
    pub inputs: Vec<PathBuf>,
    /// Signature file; the built-in set when absent.
    pub signatures: Option<PathBuf>,
    pub features: FeatureConfig,
    /// Ranking method, top-k, folds, repeats and seed.
    pub cv: CvConfig,
    pub cluster: Option<ClusterOptions>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Artifacts {
    pub store: PathBuf,
    pub functions_store: Option<PathBuf>,
    pub ranked: PathBuf,
    pub model: PathBuf,
    pub eval: PathBuf,
    pub clusters: Option<PathBuf>,
}

impl Artifacts {
    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![self.store.as_path()];
        v.extend(self.functions_store.as_deref());
        v.extend([self.ranked.as_path(), self.model.as_path(), self.eval.as_path()]);
        v.extend(self.clusters.as_deref());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub artifacts: Artifacts,
    pub programs: usize,
    pub mean_f05: f64,
    pub cluster: Option<ClusterReport>,
}

pub const PARTIAL_MARKER: &str = "PARTIAL";

/// Files under `paths`. Directories are expanded one level deep to their
/// `.lst` files, sorted by name; files named explicitly are always kept.
pub fn input_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| PipelineError::data(Stage::Ingest, format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "lst"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            return Err(PipelineError::data(Stage::Config, format!("input `{}` does not exist", p.display())));
        }
    }
    Ok(files)
}

/// Parses every listing file, keeping the listed program order.
pub fn read_programs(paths: &[PathBuf]) -> Result<Vec<Program>, PipelineError> {
    let mut programs = Vec::new();
    let mut ids = BTreeSet::new();
    for f in input_files(paths)? {
        let text = fs::read_to_string(&f).map_err(|e| PipelineError::data(Stage::Ingest, format!("{}: {e}", f.display())))?;
        let parsed = parse_listings(&text).map_err(|e| PipelineError::data(Stage::Ingest, format!("{}: {e}", f.display())))?;
        for p in parsed {
            if !ids.insert(p.id.clone()) {
                return Err(PipelineError::data(Stage::Ingest, format!("program `{}` appears twice", p.id)));
            }
            programs.push(p);
        }
    }
    if programs.is_empty() {
        return Err(PipelineError::data(Stage::Ingest, "no programs found in the inputs"));
    }
    Ok(programs)
}

pub fn load_signatures(path: Option<&Path>) -> Result<SignatureSet, PipelineError> {
    match path {
        None => Ok(SignatureSet::default_set()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| PipelineError::data(Stage::Config, format!("signature file `{}`: {e}", p.display())))?;
            SignatureSet::parse(&text)
                .map_err(|e| PipelineError::data(Stage::Filter, format!("signature file `{}`: {e}", p.display())))
        }
    }
}

/// Program-level and function-level stores for already classified programs.
pub fn extract_stores(programs: &[Program], config: &FeatureConfig) -> (FeatureStore, FeatureStore) {
    let mut program_entries = Vec::with_capacity(programs.len());
    let mut function_entries = Vec::new();
    for p in programs {
        let pf = extract_all(p, config);
        for f in pf.functions {
            function_entries.push(StoredVector {
                label: p.author.clone(),
                vector: f.vector,
            });
        }
        program_entries.push(StoredVector {
            label: p.author.clone(),
            vector: pf.merged,
        });
    }
    (FeatureStore::new(program_entries), FeatureStore::new(function_entries))
}

/// Labeled entries of a store as a dataset; unlabeled entries are ignored.
pub fn dataset_from_store(store: &FeatureStore) -> Result<LabeledDataset, PipelineError> {
    let samples = store
        .entries
        .iter()
        .filter_map(|e| {
            e.label.as_ref().map(|label| Sample {
                id: e.vector.subject.clone(),
                label: label.clone(),
                vector: e.vector.clone(),
            })
        })
        .collect();
    LabeledDataset::new(samples).map_err(|e| PipelineError::data(Stage::Rank, e))
}

/// Vector restricted to `keep`.
pub fn restrict_vector(v: &FeatureVector, keep: &BTreeSet<&FeatureId>) -> FeatureVector {
    let mut out: FeatureVector = v.iter().filter(|(id, _)| keep.contains(id)).map(|(id, &c)| (id.clone(), c)).collect();
    out.subject = v.subject.clone();
    out
}

/// Ranks features over programs whose merged vectors include unknown
/// (`sub_`-named) functions and reports which top features come mostly
/// from those functions.
pub fn audit_programs(
    programs: &[Program],
    sigs: &SignatureSet,
    config: &FeatureConfig,
    method: RankMethod,
    top: usize,
) -> Result<AuditReport, PipelineError> {
    let config = FeatureConfig {
        filtration: Filtration::DropLibraryCompiler,
        ..config.clone()
    };
    let mut origins = FeatureOrigins::default();
    let mut samples = Vec::new();
    for p in programs {
        let p = classify_provenance(p.clone(), sigs);
        let pf = extract_all(&p, &config);
        for (f, ff) in p.functions.iter().filter(|f| config.filtration.keeps(f.provenance)).zip(&pf.functions) {
            origins.add(f.provenance, &ff.vector);
        }
        if let Some(label) = &p.author {
            samples.push(Sample {
                id: p.id.clone(),
                label: label.clone(),
                vector: pf.merged,
            });
        }
    }
    let ds = LabeledDataset::new(samples).map_err(|e| PipelineError::data(Stage::Rank, e))?;
    let ranked = rank_features(&ds, method);
    Ok(audit_misleading(&ranked, top, &origins))
}

struct Writer {
    written: Vec<PathBuf>,
    output: PathBuf,
}

impl Writer {
    fn write(&mut self, stage: Stage, name: &str, content: &str) -> Result<PathBuf, PipelineError> {
        let path = self.output.join(name);
        fs::write(&path, content).map_err(|e| self.fail(PipelineError::internal(stage, format!("{}: {e}", path.display()))))?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// Flags the written artifacts as partial and attaches them to `err`.
    fn fail(&self, mut err: PipelineError) -> PipelineError {
        if !self.written.is_empty() {
            let mut note = format!("failed stage: {}\ncause: {}\n", err.stage, err.cause);
            for p in &self.written {
                note.push_str(&format!("partial: {}\n", p.display()));
            }
            let _ = fs::write(self.output.join(PARTIAL_MARKER), note);
        }
        err.partial = self.written.clone();
        err
    }
}

fn check_config(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let bad = |m: String| PipelineError::data(Stage::Config, m);
    if cfg.inputs.is_empty() {
        return Err(bad("no input paths given".into()));
    }
    for p in &cfg.inputs {
        if !p.exists() {
            return Err(bad(format!("input `{}` does not exist", p.display())));
        }
    }
    if let Some(s) = &cfg.signatures {
        if !s.is_file() {
            return Err(bad(format!("signature file `{}` does not exist", s.display())));
        }
    }
    cfg.features.validate().map_err(|e| bad(e.to_string()))?;
    if cfg.cv.folds < 2 || cfg.cv.repeats == 0 || cfg.cv.top_k == 0 {
        return Err(bad("folds must be at least 2, repeats and top-k positive".into()));
    }
    if let Some(c) = &cfg.cluster {
        if c.k == 0 {
            return Err(bad("cluster count must be positive".into()));
        }
        let t = c.thresholds;
        if !(0.0..=1.0).contains(&t.correct) || !(0.0..=1.0).contains(&t.wrong) || t.wrong > t.correct {
            return Err(bad("purity thresholds must satisfy 0 <= wrong <= correct <= 1".into()));
        }
    }
    Ok(())
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    check_config(cfg)?;
    let sigs = load_signatures(cfg.signatures.as_deref())?;
    let programs = read_programs(&cfg.inputs)?;
    let programs: Vec<Program> = programs.into_iter().map(|p| classify_provenance(p, &sigs)).collect();

    fs::create_dir_all(&cfg.output)
        .map_err(|e| PipelineError::internal(Stage::Store, format!("{}: {e}", cfg.output.display())))?;
    let _ = fs::remove_file(cfg.output.join(PARTIAL_MARKER));
    let mut w = Writer {
        written: Vec::new(),
        output: cfg.output.clone(),
    };
    let mut artifacts = Artifacts::default();

    let (program_store, function_store) = extract_stores(&programs, &cfg.features);
    artifacts.store = w.write(Stage::Store, "features.store", &program_store.to_text())?;
    if cfg.cluster.is_some() {
        artifacts.functions_store = Some(w.write(Stage::Store, "functions.store", &function_store.to_text())?);
    }
    drop(program_store);

    let loaded = FeatureStore::load(&artifacts.store).map_err(|e| w.fail(PipelineError::internal(Stage::Rank, e)))?;
    if !loaded.skipped.is_empty() {
        return Err(w.fail(PipelineError::internal(
            Stage::Rank,
            format!("feature store has {} unreadable lines", loaded.skipped.len()),
        )));
    }
    let ds = dataset_from_store(&loaded.store).map_err(|e| w.fail(e))?;
    if ds.authors().len() < 2 {
        return Err(w.fail(PipelineError::data(Stage::Rank, "at least two labeled authors are required")));
    }
    let ranked = rank_features(&ds, cfg.cv.method);
    artifacts.ranked = w.write(Stage::Rank, "ranked.tsv", &ranked.dump())?;

    let top = select_top_k(&ranked, cfg.cv.top_k);
    let model = train(&ds, &top, &cfg.cv.train).map_err(|e| w.fail(PipelineError::data(Stage::Train, e)))?;
    artifacts.model = w.write(Stage::Train, "model.txt", &model.to_text())?;

    let summary = cross_validate(&ds, &cfg.cv).map_err(|e| w.fail(PipelineError::data(Stage::Eval, e)))?;
    artifacts.eval = w.write(Stage::Eval, "eval.tsv", &summary.dump())?;

    let mut cluster = None;
    if let (Some(opts), Some(path)) = (&cfg.cluster, &artifacts.functions_store) {
        let loaded = FeatureStore::load(path).map_err(|e| w.fail(PipelineError::internal(Stage::Cluster, e)))?;
        let keep: BTreeSet<&FeatureId> = top.iter().collect();
        let mut truth = BTreeMap::new();
        let mut vectors = Vec::new();
        for e in &loaded.store.entries {
            if let Some(label) = &e.label {
                truth.insert(e.vector.subject.clone(), label.clone());
                vectors.push(restrict_vector(&e.vector, &keep));
            }
        }
        let result = kmeans_vectors(&vectors, &KMeansConfig::new(opts.k, cfg.cv.seed))
            .map_err(|e| w.fail(PipelineError::data(Stage::Cluster, e)))?;
        let report = evaluate_clusters(&result, &truth, opts.thresholds)
            .map_err(|e| w.fail(PipelineError::data(Stage::Cluster, e)))?;
        let text = format!("{}\nsubject\tcluster\n{}", report.dump(), result.dump());
        artifacts.clusters = Some(w.write(Stage::Cluster, "clusters.tsv", &text)?);
        cluster = Some(report);
    }

    Ok(PipelineOutcome {
        artifacts,
        programs: programs.len(),
        mean_f05: summary.mean_f05,
        cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{forge_profiles, generate_corpus, ForgeParams};
    use crate::model::write_listing;

    fn fixture(dir: &Path) -> PathBuf {
        let corpus = generate_corpus(
            &forge_profiles(2, 0.9, 4),
            &ForgeParams {
                programs_per_author: 5,
                seed: 4,
                ..ForgeParams::default()
            },
        )
        .unwrap();
        let input = dir.join("in");
        fs::create_dir_all(&input).unwrap();
        for p in &corpus.programs {
            fs::write(input.join(format!("{}.lst", p.id)), write_listing(p)).unwrap();
        }
        input
    }

    fn config(dir: &Path, input: PathBuf) -> PipelineConfig {
        PipelineConfig {
            inputs: vec![input],
            signatures: None,
            features: FeatureConfig::default(),
            cv: CvConfig {
                folds: 2,
                repeats: 2,
                top_k: 500,
                seed: 1,
                ..CvConfig::default()
            },
            cluster: Some(ClusterOptions {
                k: 2,
                thresholds: PurityThresholds::default(),
            }),
            output: dir.join("out"),
        }
    }

    #[test]
    fn end_to_end_and_rerun_identical() {
        let dir = tempfile::tempdir().unwrap();
        let input = fixture(dir.path());
        let cfg = config(dir.path(), input);
        let a = run_pipeline(&cfg).unwrap();
        assert_eq!(a.programs, 10);
        let first: Vec<Vec<u8>> = a.artifacts.all().iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(first.len(), 6);
        let b = run_pipeline(&cfg).unwrap();
        let second: Vec<Vec<u8>> = b.artifacts.all().iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
        assert!(!cfg.output.join(PARTIAL_MARKER).exists());
    }

    #[test]
    fn missing_signature_file_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let input = fixture(dir.path());
        let mut cfg = config(dir.path(), input);
        cfg.signatures = Some(dir.path().join("nope.sig"));
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Config);
        assert!(err.cause.contains("nope.sig"));
        assert!(!cfg.output.exists());
    }

    #[test]
    fn failing_stage_flags_partial_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let input = fixture(dir.path());
        let mut cfg = config(dir.path(), input);
        cfg.cluster.as_mut().unwrap().k = 1000;
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Cluster);
        assert_eq!(err.partial.len(), 5);
        let note = fs::read_to_string(cfg.output.join(PARTIAL_MARKER)).unwrap();
        assert!(note.contains("failed stage: cluster"));
    }
}
