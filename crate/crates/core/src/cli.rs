//! The `gem` command line.
//!
//! Results go to files and to stdout as `key<TAB>value` lines. Usage errors
//! exit with 2, data and I/O errors with 1.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::distill::{build_pseudo_labeled, evaluate_student, train_student, FeatureSpec, PseudoLabeledSet, StudentModel, TrainConfig, DEFAULT_BUCKETS};
use crate::error::{GemError, Result};
use crate::geometry::EmbeddingSet;
use crate::gis::{export_taxonomy_prompts, select_representatives, GisConfig};
use crate::inference::{assign, fit, GemConfig};
use crate::io::{
    read_assignments, read_documents, read_embeddings, read_labels, write_assignments, write_atomic, write_documents,
    write_embeddings, write_labels, ModelFile,
};
use crate::metrics::{cluster_metrics, collapse_report, HardPartition};
use crate::objective::{empirical_mass, LogJoint, Responsibilities};
use crate::synth::{anisotropic_corpus, separated_mixture, topic_texts, AnisotropicConfig, TextCorpusConfig};

#[derive(Debug, Parser)]
#[command(name = "gem", version, about = "Balance-regularized vMF clustering of text embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with known labels
    Synth(SynthArgs),
    /// Fit the mixture to an embedding file
    Fit(FitArgs),
    /// Posterior responsibilities of every point under a fitted model
    Assign(AssignArgs),
    /// Select representatives and write taxonomy prompts
    Gis(GisArgs),
    /// Train a text classifier on GIS-selected pseudo-labels
    Distill(DistillArgs),
    /// Score a partition or a trained classifier
    Eval(EvalArgs),
    /// Fit over a grid of K and lambda and report metrics per cell
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    /// Equal-weight components with orthogonal means
    Vmf,
    /// One large cap and several small ones inside a narrow cone
    Anisotropic,
    /// Topic documents with bag-of-word-vector embeddings
    Text,
}

#[derive(Debug, Args)]
pub struct Threads {
    /// Run single-threaded
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "vmf")]
    pub kind: SynthKind,
    /// Embedding file to write
    #[arg(long)]
    pub output: PathBuf,
    /// Ground-truth labels file to write
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Documents file to write (placeholder text for non-text kinds)
    #[arg(long)]
    pub docs: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub components: usize,
    #[arg(long, default_value_t = 100.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 3000)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub threads: Threads,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    /// Absolute objective change that stops the loop [default: 1e-4 * N]
    #[arg(long)]
    pub stop_tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa_init: f64,
    #[arg(long, default_value_t = 3)]
    pub estep_sweeps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub estep_step: f64,
    /// Fit on a seeded random fraction of the rows
    #[arg(long, default_value_t = 1.0)]
    pub seed_fraction: f64,
}

impl SolverArgs {
    fn config(&self, k: usize, lambda: f64) -> GemConfig {
        GemConfig {
            k,
            lambda,
            max_iters: self.max_iters,
            stop_tol: self.stop_tol,
            kappa_init: self.kappa_init,
            estep_sweeps: self.estep_sweeps,
            estep_step: self.estep_step,
            seed: self.seed,
            ..GemConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Model file to write
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 24)]
    pub k: usize,
    #[arg(long, default_value_t = 5000.0)]
    pub lambda: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Objective trace CSV [default: <output>.trace.csv]
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Responsibilities TSV from the final E-step
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    #[command(flatten)]
    pub threads: Threads,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Responsibilities TSV to write
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub threads: Threads,
}

#[derive(Debug, Args)]
pub struct GisArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub docs: PathBuf,
    /// Directory for prompt files and the representatives table
    #[arg(long)]
    pub output: PathBuf,
    /// Responsibilities from `fit --assignments` [default: posterior under the model]
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub gis_beta: f64,
    #[arg(long, default_value_t = 16)]
    pub gis_m: usize,
    #[arg(long, default_value_t = 5)]
    pub gis_s: usize,
    #[command(flatten)]
    pub threads: Threads,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub docs: PathBuf,
    /// Student model file to write
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub assignments: Option<PathBuf>,
    /// Pseudo-labeled documents kept per cluster
    #[arg(long, default_value_t = 5000)]
    pub distill_m: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_BUCKETS)]
    pub buckets: u32,
    #[arg(long, default_value_t = 1.0)]
    pub gis_beta: f64,
    #[arg(long, default_value_t = 16)]
    pub gis_m: usize,
    /// Also write train/val/test TSV files here
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    #[command(flatten)]
    pub threads: Threads,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Embedding file, used with --model
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Predicted labels file
    #[arg(long, conflicts_with = "model")]
    pub pred: Option<PathBuf>,
    /// Ground-truth labels file
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Student model to score on --dataset
    #[arg(long, conflicts_with_all = ["model", "pred"])]
    pub student: Option<PathBuf>,
    #[arg(long, requires = "student")]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub threads: Threads,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Metrics TSV to write [default: stdout only]
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "12,24,36,48")]
    pub ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1000,5000,10000")]
    pub lambdas: Vec<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub threads: Threads,
}

/// Derives an independent seed for one subsystem of a command.
pub fn sub_seed(master: u64, tag: &str) -> u64 {
    xxh3_64_with_seed(tag.as_bytes(), master)
}

fn kv(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}\t{value}");
}

fn subsample(x: EmbeddingSet, fraction: f64, seed: u64) -> Result<EmbeddingSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(GemError::InvalidConfig("seed fraction must be in (0, 1]".into()));
    }
    if fraction == 1.0 {
        return Ok(x);
    }
    let keep = ((x.n() as f64 * fraction).round() as usize).max(1);
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(sub_seed(seed, "subsample")), x.n(), keep).into_vec();
    idx.sort_unstable();
    x.subset(&idx)
}

fn load_model(path: &Path, x: Option<&EmbeddingSet>) -> Result<ModelFile> {
    let m = ModelFile::read(path)?;
    if let Some(x) = x {
        m.theta.check_dim(x.d())?;
    }
    Ok(m)
}

fn responsibilities(model: &ModelFile, x: &EmbeddingSet, path: Option<&Path>) -> Result<Responsibilities> {
    match path {
        Some(p) => {
            let g = read_assignments(p)?;
            if g.n() != x.n() || g.k() != model.k {
                return Err(GemError::SizeMismatch {
                    left: g.n() * g.k(),
                    right: x.n() * model.k,
                });
            }
            Ok(g)
        }
        None => Ok(LogJoint::compute(&model.theta, x)?.posterior()),
    }
}

fn trace_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".trace.csv");
    PathBuf::from(s)
}

fn echo_config(out: &mut String, cfg: &GemConfig, n: usize, d: usize) {
    kv(out, "n", n);
    kv(out, "d", d);
    kv(out, "k", cfg.k);
    kv(out, "lambda", cfg.lambda);
    kv(out, "max_iters", cfg.max_iters);
    kv(out, "stop_tol", cfg.stop_tol_for(n));
    kv(out, "eps", cfg.eps);
    kv(out, "kappa_init", cfg.kappa_init);
    kv(out, "estep_sweeps", cfg.estep_sweeps);
    kv(out, "estep_step", cfg.estep_step);
    kv(out, "seed", cfg.seed);
}

fn cmd_synth(a: &SynthArgs, out: &mut String) -> Result<()> {
    let (x, labels, docs) = match a.kind {
        SynthKind::Vmf => {
            let (x, l) = separated_mixture(a.components, a.d, a.kappa, a.n, a.seed)?;
            (x, l, None)
        }
        SynthKind::Anisotropic => {
            if a.components < 2 {
                return Err(GemError::InvalidConfig("anisotropic corpus needs >= 2 components".into()));
            }
            let cfg = AnisotropicConfig {
                n: a.n,
                d: a.d,
                small_caps: a.components - 1,
                giant_kappa: a.kappa,
                small_kappa: a.kappa,
                ..AnisotropicConfig::default()
            };
            let (x, l) = anisotropic_corpus(&cfg, a.seed)?;
            (x, l, None)
        }
        SynthKind::Text => {
            if a.components == 0 {
                return Err(GemError::InvalidConfig("text corpus needs >= 1 topic".into()));
            }
            let cfg = TextCorpusConfig {
                topics: a.components,
                docs_per_topic: (a.n / a.components).max(1),
                d: a.d,
                ..TextCorpusConfig::default()
            };
            let c = topic_texts(&cfg, a.seed)?;
            (c.embeddings, c.topics, Some(c.docs))
        }
    };
    write_embeddings(&x, &a.output)?;
    if let Some(p) = &a.labels {
        write_labels(&labels, p)?;
    }
    if let Some(p) = &a.docs {
        let docs = docs.unwrap_or_else(|| labels.iter().enumerate().map(|(i, l)| format!("sample {i} component {l}")).collect());
        write_documents(&docs, p)?;
    }
    kv(out, "n", x.n());
    kv(out, "d", x.d());
    kv(out, "components", labels.iter().max().map_or(0, |m| m + 1));
    Ok(())
}

fn cmd_fit(a: &FitArgs, out: &mut String) -> Result<()> {
    let cfg = a.solver.config(a.k, a.lambda);
    cfg.validate()?;
    let x = subsample(read_embeddings(&a.input)?, a.solver.seed_fraction, a.solver.seed)?;
    echo_config(out, &cfg, x.n(), x.d());
    let res = fit(&x, &cfg)?;
    let mut csv = String::from("iteration,objective\n");
    for (t, f) in res.objective_trace.iter().enumerate() {
        let _ = writeln!(csv, "{t},{f}");
    }
    let model = ModelFile::new(&res, &cfg);
    model.write(&a.output)?;
    write_atomic(&a.trace.clone().unwrap_or_else(|| trace_path(&a.output)), csv.as_bytes())?;
    if let Some(p) = &a.assignments {
        write_assignments(&res.gamma, p)?;
    }
    kv(out, "iters_run", res.iters_run);
    kv(out, "converged", res.converged);
    kv(out, "final_objective", res.final_objective());
    kv(out, "mass_l2", empirical_mass(&res.gamma).distance_to_uniform());
    Ok(())
}

fn cmd_assign(a: &AssignArgs, out: &mut String) -> Result<()> {
    let x = read_embeddings(&a.input)?;
    let model = load_model(&a.model, Some(&x))?;
    let mut data = Vec::with_capacity(x.n() * model.k);
    for row in x.rows() {
        data.extend(assign(&model.theta, row)?.0);
    }
    let g = Responsibilities::from_flat(x.n(), model.k, data)?;
    write_assignments(&g, &a.output)?;
    let report = collapse_report(&HardPartition::new(g.hard_labels(), model.k)?);
    kv(out, "n", x.n());
    kv(out, "k", model.k);
    kv(out, "balance_l2", report.balance_l2);
    kv(out, "max_share", report.max_share);
    Ok(())
}

fn cmd_gis(a: &GisArgs, out: &mut String) -> Result<()> {
    let x = read_embeddings(&a.input)?;
    let model = load_model(&a.model, Some(&x))?;
    let docs = read_documents(&a.docs)?;
    let gamma = responsibilities(&model, &x, a.assignments.as_deref())?;
    let cfg = GisConfig {
        beta: a.gis_beta,
        m: a.gis_m,
        s: a.gis_s,
        ..GisConfig::default()
    };
    let reps = select_representatives(&x, &gamma, &model.theta, &cfg)?;
    let written = export_taxonomy_prompts(&reps, &docs, &a.output)?;
    let mut table = String::from("cluster\trank\tsample\tscore\n");
    for (k, list) in reps.per_cluster.iter().enumerate() {
        for (r, (i, s)) in list.iter().enumerate() {
            let _ = writeln!(table, "{k}\t{r}\t{i}\t{s}");
        }
    }
    write_atomic(&a.output.join("representatives.tsv"), table.as_bytes())?;
    kv(out, "clusters", reps.k());
    kv(out, "empty_clusters", reps.empty.len());
    kv(out, "prompts_written", written.len());
    Ok(())
}

fn cmd_distill(a: &DistillArgs, out: &mut String) -> Result<()> {
    let x = read_embeddings(&a.input)?;
    let model = load_model(&a.model, Some(&x))?;
    let docs = read_documents(&a.docs)?;
    let gamma = responsibilities(&model, &x, a.assignments.as_deref())?;
    let gis = GisConfig {
        beta: a.gis_beta,
        m: a.gis_m,
        ..GisConfig::default()
    };
    let ds = build_pseudo_labeled(&model.theta, &gamma, &x, &docs, a.distill_m, &gis, sub_seed(a.seed, "shuffle"))?;
    let (train, val, test) = ds.split([8, 1, 1]);
    if let Some(dir) = &a.dataset_dir {
        std::fs::create_dir_all(dir).map_err(|e| GemError::io(dir, e))?;
        train.write_tsv(&dir.join("train.tsv"))?;
        val.write_tsv(&dir.join("val.tsv"))?;
        test.write_tsv(&dir.join("test.tsv"))?;
    }
    let spec = FeatureSpec {
        buckets: a.buckets,
        ..FeatureSpec::default()
    };
    let tcfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        seed: sub_seed(a.seed, "sgd"),
    };
    let (student, report) = train_student(&train, spec, &tcfg)?;
    student.save(&a.output)?;
    kv(out, "records", ds.len());
    kv(out, "train", train.len());
    kv(out, "val", val.len());
    kv(out, "test", test.len());
    kv(out, "final_loss", report.final_loss());
    for (name, part) in [("val_accuracy", &val), ("test_accuracy", &test)] {
        match evaluate_student(&student, part) {
            Ok(e) => kv(out, name, e.accuracy),
            Err(GemError::EmptySet) => kv(out, name, "nan"),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut String) -> Result<()> {
    if let Some(sp) = &a.student {
        let ds_path = a
            .dataset
            .as_ref()
            .ok_or_else(|| GemError::InvalidConfig("--student needs --dataset".into()))?;
        let student = StudentModel::load(sp)?;
        let ds = PseudoLabeledSet::read_tsv(ds_path, Some(student.k))?;
        let e = evaluate_student(&student, &ds)?;
        kv(out, "accuracy", e.accuracy);
        for (k, row) in e.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            kv(out, &format!("confusion_{k}"), cells.join(","));
        }
        return Ok(());
    }
    let pred = match (&a.pred, &a.model, &a.input) {
        (Some(p), _, _) => HardPartition::from_labels(read_labels(p)?)?,
        (None, Some(m), Some(i)) => {
            let x = read_embeddings(i)?;
            let model = load_model(m, Some(&x))?;
            let g = LogJoint::compute(&model.theta, &x)?.posterior();
            HardPartition::new(g.hard_labels(), model.k)?
        }
        _ => return Err(GemError::InvalidConfig("eval needs --pred, --model with --input, or --student".into())),
    };
    match &a.truth {
        Some(t) => {
            let truth = HardPartition::from_labels(read_labels(t)?)?;
            let m = cluster_metrics(&pred, &truth)?;
            kv(out, "nmi", m.nmi);
            kv(out, "matched_accuracy", m.matched_accuracy);
            kv(out, "balance_l2", m.balance_l2);
            kv(out, "max_share", m.max_share);
        }
        None => {
            let r = collapse_report(&pred);
            kv(out, "balance_l2", r.balance_l2);
            kv(out, "max_share", r.max_share);
        }
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, out: &mut String) -> Result<()> {
    if a.ks.is_empty() || a.lambdas.is_empty() {
        return Err(GemError::InvalidConfig("sweep needs at least one K and one lambda".into()));
    }
    let x = subsample(read_embeddings(&a.input)?, a.solver.seed_fraction, a.solver.seed)?;
    let truth = match &a.truth {
        Some(t) if a.solver.seed_fraction == 1.0 => Some(HardPartition::from_labels(read_labels(t)?)?),
        Some(_) => return Err(GemError::InvalidConfig("--truth cannot be combined with --seed-fraction".into())),
        None => None,
    };
    let mut table =
        String::from("k\tlambda\titers\tconverged\tfinal_objective\tbalance_l2\tmass_l2\tmax_share\tnmi\tmatched_accuracy\n");
    for &k in &a.ks {
        for &lambda in &a.lambdas {
            let cfg = a.solver.config(k, lambda);
            let res = fit(&x, &cfg)?;
            let pred = HardPartition::new(res.gamma.hard_labels(), k)?;
            let rep = collapse_report(&pred);
            let (nmi, acc) = match &truth {
                Some(t) => {
                    let m = cluster_metrics(&pred, t)?;
                    (m.nmi.to_string(), m.matched_accuracy.to_string())
                }
                None => ("nan".into(), "nan".into()),
            };
            let _ = writeln!(
                table,
                "{k}\t{lambda}\t{}\t{}\t{}\t{}\t{}\t{}\t{nmi}\t{acc}",
                res.iters_run,
                res.converged,
                res.final_objective(),
                rep.balance_l2,
                empirical_mass(&res.gamma).distance_to_uniform(),
                rep.max_share
            );
        }
    }
    if let Some(p) = &a.output {
        write_atomic(p, table.as_bytes())?;
    }
    out.push_str(&table);
    Ok(())
}

impl Command {
    fn deterministic(&self) -> bool {
        match self {
            Command::Synth(a) => a.threads.deterministic,
            Command::Fit(a) => a.threads.deterministic,
            Command::Assign(a) => a.threads.deterministic,
            Command::Gis(a) => a.threads.deterministic,
            Command::Distill(a) => a.threads.deterministic,
            Command::Eval(a) => a.threads.deterministic,
            Command::Sweep(a) => a.threads.deterministic,
        }
    }

    /// Runs the command, returning its stdout text.
    pub fn execute(&self) -> Result<String> {
        let mut out = String::new();
        match self {
            Command::Synth(a) => cmd_synth(a, &mut out)?,
            Command::Fit(a) => cmd_fit(a, &mut out)?,
            Command::Assign(a) => cmd_assign(a, &mut out)?,
            Command::Gis(a) => cmd_gis(a, &mut out)?,
            Command::Distill(a) => cmd_distill(a, &mut out)?,
            Command::Eval(a) => cmd_eval(a, &mut out)?,
            Command::Sweep(a) => cmd_sweep(a, &mut out)?,
        }
        Ok(out)
    }
}

fn worker_count(deterministic: bool) -> usize {
    if deterministic {
        return 1;
    }
    let default = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("GEM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap >= 1 => cap.min(default),
        _ => default,
    }
}

fn category(e: &GemError) -> (&'static str, i32) {
    match e {
        GemError::InvalidConfig(_) => ("usage", 2),
        GemError::Io { .. } => ("io", 1),
        GemError::BadMagic(_) | GemError::TruncatedPayload { .. } | GemError::NormFlagViolation { .. } | GemError::Parse(_) => {
            ("format", 1)
        }
        _ => ("data", 1),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(cli.command.deterministic()))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: io: cannot start worker threads: {e}");
            return 1;
        }
    };
    match pool.install(|| cli.command.execute()) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            let (cat, code) = category(&e);
            eprintln!("error: {cat}: {e}");
            code
        }
    }
}
