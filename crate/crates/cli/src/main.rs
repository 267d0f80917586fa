use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use binstyle_core::attribution::{
    cross_validate, dump_curve, scalability_sweep, train, CvConfig, TrainConfig,
};
use binstyle_core::clustering::{evaluate_clusters, kmeans_vectors, KMeansConfig, PurityThresholds};
use binstyle_core::features::{Family, FeatureConfig, Filtration, IdiomPolicy};
use binstyle_core::forge::{
    apply_compiler_profile, apply_transform, forge_profiles, generate_corpus, CompilerProfile, ForgeParams, ManifestEntry, Transform,
};
use binstyle_core::model::{classify_provenance, parse_listing, write_listing, Provenance};
use binstyle_core::pipeline::{
    audit_programs, dataset_from_store, extract_stores, load_signatures, read_programs, run_pipeline, ClusterOptions,
    ErrorKind, PipelineConfig, PipelineError,
};
use binstyle_core::ranking::{rank_features, select_top_k, RankMethod};
use binstyle_core::store::FeatureStore;

/// Binary code authorship attribution toolkit.
#[derive(Parser)]
#[command(name = "binstyle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and classify listings, printing a provenance summary.
    Ingest(IngestArgs),
    /// Extract feature vectors into a store.
    Extract(ExtractArgs),
    /// Rank the features of a store.
    Rank(RankArgs),
    /// Train an attribution model on a store.
    Train(TrainArgs),
    /// Cross-validate attribution on a store.
    Eval(EvalArgs),
    /// Mean F0.5 as a function of the number of authors.
    Sweep(SweepArgs),
    /// Cluster function vectors and grade clusters by purity.
    Cluster(ClusterArgs),
    /// Generate a synthetic author-styled corpus.
    Forge(ForgeArgs),
    /// Apply an evasion transform or a compiler profile to a listing.
    Transform(TransformArgs),
    /// Report top-ranked features that come mostly from unnamed functions.
    Audit(AuditArgs),
    /// Run the whole workflow and write every artifact.
    Run(RunArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Listing files or directories of listings.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Signature file (defaults to the built-in set).
    #[arg(long)]
    signatures: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct FeatureArgs {
    /// Comma-separated families (default: all).
    #[arg(long, value_delimiter = ',')]
    families: Vec<Family>,
    #[arg(long, default_value_t = 4)]
    ngram_n: usize,
    #[arg(long, default_value_t = 3)]
    graphlet_k: usize,
    #[arg(long, default_value_t = 4)]
    rfg_window: usize,
    /// Emit only concrete idioms.
    #[arg(long)]
    concrete_idioms: bool,
    /// Which functions contribute: user, no-lib, all.
    #[arg(long, default_value = "user", value_parser = parse_filtration)]
    filtration: Filtration,
}

impl FeatureArgs {
    fn config(&self) -> FeatureConfig {
        let mut c = FeatureConfig::default();
        if !self.families.is_empty() {
            c.families = self.families.iter().copied().collect();
        }
        c.ngram_n = self.ngram_n;
        c.graphlet_k = self.graphlet_k;
        c.rfg_window = self.rfg_window;
        if self.concrete_idioms {
            c.idiom_policy = IdiomPolicy::ConcreteOnly;
        }
        c.filtration = self.filtration;
        c
    }
}

fn parse_filtration(s: &str) -> Result<Filtration, String> {
    match s {
        "user" => Ok(Filtration::UserOnly),
        "no-lib" => Ok(Filtration::DropLibraryCompiler),
        "all" | "off" => Ok(Filtration::Off),
        _ => Err(format!("unknown filtration `{s}` (user, no-lib, all)")),
    }
}

fn parse_method(s: &str) -> Result<RankMethod, String> {
    s.parse().map_err(|e: binstyle_core::ranking::RankingError| e.to_string())
}

#[derive(Args, Clone)]
struct CvArgs {
    #[arg(long, default_value = "mi", value_parser = parse_method)]
    rank_method: RankMethod,
    #[arg(long, default_value_t = 4500)]
    top_k: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 15)]
    repeats: usize,
    /// SVM regularization constant.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    seed: u64,
}

impl CvArgs {
    fn config(&self) -> CvConfig {
        CvConfig {
            folds: self.folds,
            repeats: self.repeats,
            top_k: self.top_k,
            method: self.rank_method,
            train: TrainConfig {
                c: self.c,
                seed: self.seed,
                ..TrainConfig::default()
            },
            seed: self.seed,
            ..CvConfig::default()
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Write the classified listings to this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    features: FeatureArgs,
    /// Program-level store to write.
    #[arg(long)]
    out: PathBuf,
    /// Function-level store to write.
    #[arg(long)]
    functions_out: Option<PathBuf>,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value = "mi", value_parser = parse_method)]
    rank_method: RankMethod,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    store: PathBuf,
    #[command(flatten)]
    cv: CvArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    store: PathBuf,
    #[command(flatten)]
    cv: CvArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    store: PathBuf,
    /// Ascending author counts.
    #[arg(long, value_delimiter = ',', required = true)]
    authors: Vec<usize>,
    #[command(flatten)]
    cv: CvArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Function-level store.
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.75)]
    theta_correct: f64,
    #[arg(long, default_value_t = 0.5)]
    theta_wrong: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ForgeArgs {
    #[arg(long, default_value_t = 10)]
    authors: usize,
    #[arg(long, default_value_t = 8)]
    programs_per_author: usize,
    #[arg(long)]
    total_programs: Option<usize>,
    #[arg(long, default_value_t = 0.8)]
    style_strength: f64,
    #[arg(long, default_value_t = 0.0)]
    unnamed_fraction: f64,
    /// Plant an author marker in unnamed functions.
    #[arg(long)]
    unnamed_marker: bool,
    /// Use the 179-author / 736-program corpus shape.
    #[arg(long)]
    large_scale: bool,
    #[arg(long)]
    seed: u64,
    /// Output directory for listings and `manifest.tsv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TransformArgs {
    /// Listing file.
    input: PathBuf,
    /// Transform specs such as `RR:1` or `DCI:0.3`, applied in order.
    #[arg(long = "apply", value_parser = parse_transform)]
    transforms: Vec<Transform>,
    /// Compiler profile tag applied before the transforms.
    #[arg(long)]
    compiler_profile: Option<String>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_transform(s: &str) -> Result<Transform, String> {
    s.parse().map_err(|e: binstyle_core::forge::ForgeError| e.to_string())
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long, default_value = "mi", value_parser = parse_method)]
    rank_method: RankMethod,
    #[arg(long, default_value_t = 50)]
    top: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    cv: CvArgs,
    /// Also cluster function vectors into this many clusters.
    #[arg(long)]
    cluster_k: Option<usize>,
    #[arg(long, default_value_t = 0.75)]
    theta_correct: f64,
    #[arg(long, default_value_t = 0.5)]
    theta_wrong: f64,
    #[arg(long)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome = Result<(), Failure>;

fn data(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

fn internal(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 3,
        error: error.into(),
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e.kind {
            ErrorKind::Data => data(e),
            ErrorKind::Internal => internal(e),
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => fs::write(p, text)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(internal),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_store(path: &Path) -> Result<FeatureStore, Failure> {
    let report = FeatureStore::load(path).map_err(data)?;
    for s in &report.skipped {
        eprintln!("warning: {}:{}: skipped ({})", path.display(), s.line, s.reason);
    }
    Ok(report.store)
}

fn ingest(a: IngestArgs) -> Outcome {
    let sigs = load_signatures(a.input.signatures.as_deref())?;
    let programs = read_programs(&a.input.inputs)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(internal)?;
    }
    println!("program\tauthor\tfunctions\tuser\tlibrary\tcompiler\tunknown");
    for p in programs {
        let p = classify_provenance(p, &sigs);
        let count = |k: Provenance| p.functions.iter().filter(|f| f.provenance == k).count();
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.id,
            p.author.as_deref().unwrap_or("-"),
            p.functions.len(),
            count(Provenance::User),
            count(Provenance::Library),
            count(Provenance::Compiler),
            count(Provenance::Unknown)
        );
        if let Some(dir) = &a.out {
            emit(Some(&dir.join(format!("{}.lst", p.id))), &write_listing(&p))?;
        }
    }
    Ok(())
}

fn extract(a: ExtractArgs) -> Outcome {
    let config = a.features.config();
    config.validate().map_err(data)?;
    let sigs = load_signatures(a.input.signatures.as_deref())?;
    let programs: Vec<_> = read_programs(&a.input.inputs)?
        .into_iter()
        .map(|p| classify_provenance(p, &sigs))
        .collect();
    let (programs, functions) = extract_stores(&programs, &config);
    programs.save(&a.out).map_err(internal)?;
    if let Some(f) = &a.functions_out {
        functions.save(f).map_err(internal)?;
    }
    eprintln!("{} program vectors, {} function vectors", programs.len(), functions.len());
    Ok(())
}

fn rank(a: RankArgs) -> Outcome {
    let ds = dataset_from_store(&load_store(&a.store)?)?;
    emit(a.out.as_deref(), &rank_features(&ds, a.rank_method).dump())
}

fn train_cmd(a: TrainArgs) -> Outcome {
    let ds = dataset_from_store(&load_store(&a.store)?)?;
    let cfg = a.cv.config();
    let top = select_top_k(&rank_features(&ds, cfg.method), cfg.top_k);
    let model = train(&ds, &top, &cfg.train).map_err(data)?;
    emit(Some(&a.out), &model.to_text())
}

fn eval(a: EvalArgs) -> Outcome {
    let ds = dataset_from_store(&load_store(&a.store)?)?;
    let summary = cross_validate(&ds, &a.cv.config()).map_err(data)?;
    emit(a.out.as_deref(), &summary.dump())
}

fn sweep(a: SweepArgs) -> Outcome {
    let ds = dataset_from_store(&load_store(&a.store)?)?;
    let curve = scalability_sweep(&ds, &a.authors, &a.cv.config()).map_err(data)?;
    emit(a.out.as_deref(), &dump_curve(&curve))
}

fn cluster(a: ClusterArgs) -> Outcome {
    let store = load_store(&a.store)?;
    let mut truth = BTreeMap::new();
    let mut vectors = Vec::new();
    for e in store.entries {
        let label = e
            .label
            .ok_or_else(|| data(anyhow!("subject `{}` has no label", e.vector.subject)))?;
        truth.insert(e.vector.subject.clone(), label);
        vectors.push(e.vector);
    }
    let result = kmeans_vectors(&vectors, &KMeansConfig::new(a.k, a.seed)).map_err(data)?;
    let thresholds = PurityThresholds {
        correct: a.theta_correct,
        wrong: a.theta_wrong,
    };
    let report = evaluate_clusters(&result, &truth, thresholds).map_err(data)?;
    emit(
        a.out.as_deref(),
        &format!("{}\nsubject\tcluster\n{}", report.dump(), result.dump()),
    )
}

fn forge(a: ForgeArgs) -> Outcome {
    let (authors, mut params) = if a.large_scale {
        ForgeParams::large_scale(a.seed)
    } else {
        (
            a.authors,
            ForgeParams {
                programs_per_author: a.programs_per_author,
                total_programs: a.total_programs,
                seed: a.seed,
                ..ForgeParams::default()
            },
        )
    };
    params.unnamed_fraction = a.unnamed_fraction;
    params.unnamed_marker = a.unnamed_marker;
    let corpus = generate_corpus(&forge_profiles(authors, a.style_strength, a.seed), &params).map_err(data)?;
    fs::create_dir_all(&a.out).map_err(internal)?;
    for p in &corpus.programs {
        emit(Some(&a.out.join(format!("{}.lst", p.id))), &write_listing(p))?;
    }
    let mut manifest = corpus.manifest;
    manifest.set_param("style_strength", a.style_strength);
    emit(Some(&a.out.join("manifest.tsv")), &manifest.dump())?;
    let functions: usize = corpus.programs.iter().map(|p| p.functions.len()).sum();
    eprintln!("{} authors, {} programs, {} functions", authors, corpus.programs.len(), functions);
    Ok(())
}

fn transform(a: TransformArgs) -> Outcome {
    let text = fs::read_to_string(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))
        .map_err(data)?;
    let mut p = parse_listing(&text).map_err(data)?;
    if let Some(tag) = &a.compiler_profile {
        let cp = CompilerProfile::preset(tag).map_err(data)?;
        p = apply_compiler_profile(&p, &cp, a.seed);
    }
    for t in &a.transforms {
        p = apply_transform(&p, t, a.seed).map_err(data)?;
    }
    emit(a.out.as_deref(), &write_listing(&p))?;
    let entry = ManifestEntry::of(&p);
    eprintln!("{}\t{}\t{}", entry.program, entry.author, entry.transforms.join(","));
    Ok(())
}

fn audit(a: AuditArgs) -> Outcome {
    let config = a.features.config();
    config.validate().map_err(data)?;
    let sigs = load_signatures(a.input.signatures.as_deref())?;
    let programs = read_programs(&a.input.inputs)?;
    let report = audit_programs(&programs, &sigs, &config, a.rank_method, a.top)?;
    emit(a.out.as_deref(), &report.dump())
}

fn run(a: RunArgs) -> Outcome {
    let cfg = PipelineConfig {
        inputs: a.input.inputs,
        signatures: a.input.signatures,
        features: a.features.config(),
        cv: a.cv.config(),
        cluster: a.cluster_k.map(|k| ClusterOptions {
            k,
            thresholds: PurityThresholds {
                correct: a.theta_correct,
                wrong: a.theta_wrong,
            },
        }),
        output: a.out,
    };
    let outcome = run_pipeline(&cfg)?;
    println!("programs\t{}", outcome.programs);
    println!("mean_f05\t{:.6}", outcome.mean_f05);
    if let Some(c) = &outcome.cluster {
        println!("clusters\t{}\tCC\t{:.2}\tWC\t{:.2}", c.total, c.correct_pct, c.wrong_pct);
    }
    for p in outcome.artifacts.all() {
        println!("artifact\t{}", p.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Extract(a) => extract(a),
        Command::Rank(a) => rank(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Cluster(a) => cluster(a),
        Command::Forge(a) => forge(a),
        Command::Transform(a) => transform(a),
        Command::Audit(a) => audit(a),
        Command::Run(a) => run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
