//! The `moskit` command line. [`run`] parses arguments, dispatches to the
//! core library and returns the process exit code: 0 success, 1 usage
//! error, 2 data error, 3 I/O error.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use moskit_core::analysis::{unseen_report, AnalysisError, DEFAULT_ALPHA};
use moskit_core::audio::{attach_synthetic_audio, augment_corpus, AudioError, AugmentKind, AugmentationSpec};
use moskit_core::baseline::{BaselineError, BaselineKind, BaselineModel};
use moskit_core::corpus::{export_corpus, generate_synthetic, load_manifest, validate_corpus, Corpus, CorpusError, SyntheticSpec};
use moskit_core::metrics::{evaluate, system_points, utterance_pairs, EvaluateError, Level, PredictionSet};
use moskit_core::splitter::{
    check_constraints, read_split, search_best_split, write_split, Category, SplitAssignment,
    SplitConfig, SplitError, SplitProvenance, Subset, UnseenCounts,
};
use moskit_core::stats::{integer_edges, score_histogram, system_means, utterance_stats, SplitObjectiveConfig, StatsError};

pub mod plot;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "moskit", version, about = "Rated listening-test corpora: splits, statistics and evaluation")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores). Outputs do
    /// not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic rated corpus (optionally with audio).
    Synth(SynthArgs),
    /// Load and validate a corpus, then write it in canonical form.
    Ingest(IngestArgs),
    /// Check a corpus and report every violation.
    Validate(ValidateArgs),
    /// Per-system means, per-utterance statistics and score histograms.
    Stats(StatsArgs),
    /// Search for a train/dev/test split with held-out entities.
    Split(SplitArgs),
    /// Write speed-perturbed and silence-edited copies of every clip.
    Augment(AugmentArgs),
    /// Fit a reference predictor on train and predict a subset.
    Baseline(BaselineArgs),
    /// Score predictions against the reference MOS.
    Evaluate(EvaluateArgs),
    /// Compare errors on seen and held-out speakers, systems, texts, listeners.
    AnalyzeUnseen(AnalyzeArgs),
    /// Scatter plot of true vs predicted MOS (SVG plus CSV sidecar).
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct ManifestArg {
    /// Corpus manifest (manifest.json).
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictionArgs {
    #[command(flatten)]
    pub manifest: ManifestArg,
    /// Split file written by `split`.
    #[arg(long)]
    pub split: PathBuf,
    /// Subset to score.
    #[arg(long, default_value = "test")]
    pub subset: Subset,
    /// Predictions CSV with header `utterance_id,prediction`.
    #[arg(long)]
    pub predictions: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Small,
    /// 187 systems x 38 utterances, 27 speakers, 8 ratings each.
    Bvcc,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for manifest.json, utterances.csv and ratings.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "small")]
    pub preset: Preset,
    #[arg(long)]
    pub systems: Option<usize>,
    #[arg(long)]
    pub speakers: Option<usize>,
    #[arg(long)]
    pub texts: Option<usize>,
    #[arg(long)]
    pub listeners: Option<usize>,
    #[arg(long)]
    pub utterances_per_system: Option<usize>,
    #[arg(long)]
    pub ratings_per_utterance: Option<usize>,
    /// Keep fractional scores instead of rounding to whole points.
    #[arg(long)]
    pub continuous: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write a synthetic WAV clip per utterance under OUT_DIR/wav.
    #[arg(long)]
    pub audio: bool,
    #[arg(long, default_value_t = 1.0)]
    pub audio_seconds: f64,
    #[arg(long, default_value_t = 16_000)]
    pub sample_rate: u32,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub manifest: ManifestArg,
    /// Output directory for the canonical (1-5 scale) copy.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub manifest: ManifestArg,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub manifest: ManifestArg,
    /// Also report per-subset histograms for this split.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub manifest: ManifestArg,
    /// Train, dev and test shares.
    #[arg(long, default_value = "0.7,0.15,0.15", value_parser = parse_proportions)]
    pub proportions: [f64; 3],
    /// Held-out entities per subset, e.g. `test:spk=1,sys=6,lis=8,txt=5`.
    /// Repeat for dev and test.
    #[arg(long, value_parser = parse_unseen)]
    pub unseen: Vec<(Subset, UnseenCounts)>,
    #[arg(long, default_value_t = 1000)]
    pub candidates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Drop the rating-spread terms from the objective.
    #[arg(long)]
    pub no_stddev_term: bool,
    /// Split CSV path; metadata is written next to it as <stem>.meta.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Write the per-candidate search log (JSON) here.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub manifest: ManifestArg,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// `all` or a comma list of speed_up, speed_down, trim_silence, pad_silence.
    #[arg(long, default_value = "all", value_parser = parse_kinds)]
    pub kinds: KindList,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Resample every clip to this rate first.
    #[arg(long)]
    pub target_rate: Option<u32>,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub manifest: ManifestArg,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value = "global_mean")]
    pub kind: BaselineKind,
    /// Subset to predict; the model is always fitted on train.
    #[arg(long, default_value = "test")]
    pub subset: Subset,
    /// Predictions CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the fitted model parameters (JSON).
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Utterance,
    System,
    Both,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub input: PredictionArgs,
    #[arg(long, value_enum, default_value = "both")]
    pub level: LevelArg,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: PredictionArgs,
    /// Categories to analyse; listener needs single-rater data.
    #[arg(long, value_delimiter = ',', default_value = "speaker,system,text")]
    pub categories: Vec<Category>,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotLevel {
    Utterance,
    System,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[command(flatten)]
    pub input: PredictionArgs,
    #[arg(long, value_enum, default_value = "system")]
    pub level: PlotLevel,
    /// SVG path; the points are also written to <stem>.csv.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_proportions(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected three comma-separated shares".to_string())
}

fn parse_unseen(s: &str) -> Result<(Subset, UnseenCounts), String> {
    let (subset, rest) = s
        .split_once(':')
        .ok_or_else(|| "expected <dev|test>:<category>=<n>,...".to_string())?;
    let subset: Subset = subset.trim().parse()?;
    if subset == Subset::Train {
        return Err("unseen entities can only be held out for dev or test".into());
    }
    let mut counts = UnseenCounts::default();
    for item in rest.split(',').filter(|i| !i.trim().is_empty()) {
        let (cat, n) = item
            .split_once('=')
            .ok_or_else(|| format!("`{item}` should look like spk=1"))?;
        let category: Category = cat.trim().parse()?;
        let n: usize = n.trim().parse().map_err(|_| format!("`{n}` is not a count"))?;
        counts.set(category, n);
    }
    Ok((subset, counts))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KindList(pub Vec<AugmentKind>);

fn parse_kinds(s: &str) -> Result<KindList, String> {
    if s.trim() == "all" {
        return Ok(KindList(AugmentKind::ALL.to_vec()));
    }
    s.split(',').map(|k| k.trim().parse()).collect::<Result<_, _>>().map(KindList)
}

/// A failed command: message for stderr and the exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    fn new(code: i32, message: impl fmt::Display) -> Self {
        CliError {
            code,
            message: message.to_string(),
        }
    }

    fn data(message: impl fmt::Display) -> Self {
        Self::new(EXIT_DATA, message)
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(EXIT_IO, format!("cannot write {}: {e}", path.display()))
    }
}

macro_rules! classify {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                let code = if e.is_io() { EXIT_IO } else { EXIT_DATA };
                CliError::new(code, e)
            }
        }
    )*};
}

classify!(CorpusError, AudioError, BaselineError, EvaluateError);

impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        let code = match &e {
            SplitError::Io { .. } => EXIT_IO,
            SplitError::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError::new(code, e)
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        let code = match &e {
            AnalysisError::BadAlpha(_) => EXIT_USAGE,
            AnalysisError::Evaluate(inner) if inner.is_io() => EXIT_IO,
            _ => EXIT_DATA,
        };
        CliError::new(code, e)
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        CliError::data(e)
    }
}

type CmdResult = Result<(), CliError>;

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn write_file(path: &Path, body: &str) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| CliError::io(path, e))
}

/// Write JSON to `out`, or to stdout when absent.
fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> CmdResult {
    let body = to_json(value);
    match out {
        Some(path) => write_file(path, &body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn load(manifest: &ManifestArg) -> Result<Corpus, CliError> {
    Ok(load_manifest(&manifest.manifest)?)
}

fn load_split(path: &Path, corpus: &Corpus) -> Result<SplitAssignment, CliError> {
    let (assignment, meta) = read_split(path, corpus)?;
    if meta.is_none() {
        eprintln!(
            "warning: no metadata next to {}; no ratings are treated as dropped",
            path.display()
        );
    }
    Ok(assignment)
}

fn cmd_synth(a: &SynthArgs) -> CmdResult {
    let mut spec = match a.preset {
        Preset::Small => SyntheticSpec::default(),
        Preset::Bvcc => SyntheticSpec::bvcc_like(a.seed),
    };
    spec.seed = a.seed;
    let overrides = [
        (&mut spec.systems, a.systems),
        (&mut spec.speakers, a.speakers),
        (&mut spec.texts, a.texts),
        (&mut spec.listeners, a.listeners),
        (&mut spec.utterances_per_system, a.utterances_per_system),
        (&mut spec.ratings_per_utterance, a.ratings_per_utterance),
    ];
    for (field, value) in overrides {
        if let Some(v) = value {
            *field = v;
        }
    }
    if a.continuous {
        spec.integer_scores = false;
    }
    let mut corpus = generate_synthetic(&spec)?;
    if a.audio {
        if !(a.audio_seconds > 0.0) || a.sample_rate == 0 {
            return Err(CliError::new(EXIT_USAGE, "audio length and sample rate must be positive"));
        }
        attach_synthetic_audio(&mut corpus, &a.out_dir.join("wav"), a.audio_seconds, a.sample_rate, a.seed)?;
    }
    let manifest = export_corpus(&corpus, &a.out_dir)?;
    println!("{}", manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct CorpusSummary<'a> {
    name: &'a str,
    utterances: usize,
    ratings: usize,
    manifest: Option<String>,
}

fn cmd_ingest(a: &IngestArgs) -> CmdResult {
    let corpus = load(&a.manifest)?;
    let manifest = export_corpus(&corpus, &a.out_dir)?;
    emit(
        None,
        &CorpusSummary {
            name: &corpus.name,
            utterances: corpus.utterances.len(),
            ratings: corpus.ratings.len(),
            manifest: Some(manifest.display().to_string()),
        },
    )
}

fn cmd_validate(a: &ValidateArgs) -> CmdResult {
    let corpus = load(&a.manifest)?;
    let report = validate_corpus(&corpus);
    emit(a.out.as_deref(), &report)?;
    if report.is_empty() {
        Ok(())
    } else {
        Err(CliError::data(format!("{} violation(s)", report.violations.len())))
    }
}

#[derive(Serialize)]
struct SubsetStats {
    subset: Subset,
    utterances: usize,
    ratings: usize,
    histogram: moskit_core::stats::Histogram,
}

#[derive(Serialize)]
struct StatsReport {
    corpus: String,
    utterances: usize,
    ratings: usize,
    listeners: usize,
    histogram: moskit_core::stats::Histogram,
    systems: Vec<moskit_core::stats::SystemMean>,
    utterance_stats: Vec<moskit_core::stats::UtteranceStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subsets: Option<Vec<SubsetStats>>,
}

fn cmd_stats(a: &StatsArgs) -> CmdResult {
    let corpus = load(&a.manifest)?;
    let edges = integer_edges();
    let scores: Vec<f64> = corpus.ratings.iter().map(|r| r.score).collect();
    let histogram = score_histogram(&scores, &edges)?;
    let per_utt = utterance_stats(&corpus);
    let systems = system_means(&corpus, &per_utt);
    let listeners: std::collections::BTreeSet<&str> =
        corpus.ratings.iter().map(|r| r.listener_id.as_str()).collect();
    let subsets = match &a.split {
        None => None,
        Some(path) => {
            let assignment = load_split(path, &corpus)?;
            let retained = assignment.retained(&corpus);
            let mut out = Vec::new();
            for subset in Subset::ALL {
                let scores: Vec<f64> = retained
                    .ratings
                    .iter()
                    .filter(|r| assignment.subset_of.get(&r.utterance_id) == Some(&subset))
                    .map(|r| r.score)
                    .collect();
                out.push(SubsetStats {
                    subset,
                    utterances: assignment.members(subset).len(),
                    ratings: scores.len(),
                    histogram: score_histogram(&scores, &edges)?,
                });
            }
            Some(out)
        }
    };
    emit(
        a.out.as_deref(),
        &StatsReport {
            corpus: corpus.name.clone(),
            utterances: corpus.utterances.len(),
            ratings: corpus.ratings.len(),
            listeners: listeners.len(),
            histogram,
            systems,
            utterance_stats: per_utt,
            subsets,
        },
    )
}

#[derive(Serialize)]
struct SplitSummary {
    split: String,
    meta: String,
    sizes: [usize; 3],
    objective: f64,
    winning_seed: u64,
    valid_candidates: usize,
    candidates: usize,
    dropped_ratings: usize,
}

fn cmd_split(a: &SplitArgs) -> CmdResult {
    let corpus = load(&a.manifest)?;
    let mut cfg = SplitConfig {
        proportions: a.proportions,
        objective: SplitObjectiveConfig {
            include_stddev_term: !a.no_stddev_term,
        },
        n_candidates: a.candidates,
        master_seed: a.seed,
        ..Default::default()
    };
    for (subset, counts) in &a.unseen {
        match subset {
            Subset::Dev => cfg.unseen_dev = *counts,
            Subset::Test => cfg.unseen_test = *counts,
            Subset::Train => unreachable!("rejected while parsing"),
        }
    }
    let outcome = search_best_split(&corpus, &cfg)?;
    let report = check_constraints(&corpus, &outcome.assignment, &cfg);
    if !report.is_empty() {
        return Err(CliError::data(format!(
            "internal error: winning split violates constraints: {:?}",
            report.violations
        )));
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let meta = write_split(
        &a.out,
        &outcome.assignment,
        &SplitProvenance {
            objective: Some(outcome.objective),
            winning_seed: Some(outcome.winning_seed),
            config: Some(cfg.clone()),
        },
    )?;
    if let Some(log) = &a.log {
        write_file(log, &to_json(&outcome.log))?;
    }
    emit(
        None,
        &SplitSummary {
            split: a.out.display().to_string(),
            meta: meta.display().to_string(),
            sizes: outcome.assignment.sizes(),
            objective: outcome.objective,
            winning_seed: outcome.winning_seed,
            valid_candidates: outcome.log.candidates.iter().filter(|c| c.valid).count(),
            candidates: outcome.log.candidates.len(),
            dropped_ratings: outcome.assignment.dropped_ratings.len(),
        },
    )
}

#[derive(Serialize)]
struct AugmentSummary {
    manifest: String,
    utterances: usize,
    ratings: usize,
    failures: Vec<Failure>,
}

#[derive(Serialize)]
struct Failure {
    utterance_id: String,
    error: String,
}

fn cmd_augment(a: &AugmentArgs) -> CmdResult {
    let corpus = load(&a.manifest)?;
    let spec = AugmentationSpec {
        kinds: a.kinds.0.clone(),
        seed: a.seed,
        target_rate: a.target_rate,
        ..Default::default()
    };
    let outcome = augment_corpus(&corpus, &spec, &a.out_dir)?;
    for (utt, err) in &outcome.failures {
        eprintln!("warning: skipped {utt}: {err}");
    }
    emit(
        None,
        &AugmentSummary {
            manifest: outcome.manifest_path.display().to_string(),
            utterances: outcome.corpus.utterances.len(),
            ratings: outcome.corpus.ratings.len(),
            failures: outcome
                .failures
                .iter()
                .map(|(u, e)| Failure {
                    utterance_id: u.clone(),
                    error: e.clone(),
                })
                .collect(),
        },
    )
}

fn cmd_baseline(a: &BaselineArgs) -> CmdResult {
    let corpus = load(&a.manifest)?;
    let assignment = load_split(&a.split, &corpus)?;
    let retained = assignment.retained(&corpus);
    let model = BaselineModel::fit(&retained, &assignment.members(Subset::Train), a.kind)?;
    let predictions = model.predict(&retained, &assignment.members(a.subset))?;
    if let Some(path) = &a.model_out {
        write_file(path, &to_json(&model))?;
    }
    predictions.write_csv(&a.out)?;
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> CmdResult {
    let corpus = load(&a.input.manifest)?;
    let assignment = load_split(&a.input.split, &corpus)?;
    let pred = PredictionSet::read_csv(&a.input.predictions)?;
    let run = |level| evaluate(&corpus, &assignment, a.input.subset, &pred, level);
    match a.level {
        LevelArg::Utterance => emit(a.out.as_deref(), &run(Level::Utterance)?),
        LevelArg::System => emit(a.out.as_deref(), &run(Level::System)?),
        LevelArg::Both => emit(
            a.out.as_deref(),
            &[run(Level::Utterance)?, run(Level::System)?],
        ),
    }
}

fn cmd_analyze(a: &AnalyzeArgs) -> CmdResult {
    let corpus = load(&a.input.manifest)?;
    let assignment = load_split(&a.input.split, &corpus)?;
    let pred = PredictionSet::read_csv(&a.input.predictions)?;
    let report = unseen_report(&corpus, &assignment, a.input.subset, &pred, &a.categories, a.alpha)?;
    emit(a.out.as_deref(), &report)
}

fn cmd_plot(a: &PlotArgs) -> CmdResult {
    let corpus = load(&a.input.manifest)?;
    let assignment = load_split(&a.input.split, &corpus)?;
    let pred = PredictionSet::read_csv(&a.input.predictions)?;
    let points: Vec<plot::Point> = match a.level {
        PlotLevel::System => system_points(&corpus, &assignment, a.input.subset, &pred)?
            .into_iter()
            .map(|p| plot::Point {
                id: p.system_id,
                true_mos: p.true_mos,
                predicted_mos: p.predicted_mos,
            })
            .collect(),
        PlotLevel::Utterance => {
            let retained = assignment.retained(&corpus);
            let (truth, values) = utterance_pairs(&retained, &assignment, a.input.subset, &pred)?;
            pred.0
                .keys()
                .zip(truth.into_iter().zip(values))
                .map(|(id, (t, p))| plot::Point {
                    id: id.clone(),
                    true_mos: t,
                    predicted_mos: p,
                })
                .collect()
        }
    };
    let title = format!(
        "{} {}, {} level",
        corpus.name,
        a.input.subset,
        match a.level {
            PlotLevel::System => "system",
            PlotLevel::Utterance => "utterance",
        }
    );
    write_file(&a.out, &plot::scatter_svg(&points, &title))?;
    write_file(&a.out.with_extension("csv"), &plot::scatter_csv(&points))
}

fn dispatch(command: &Command) -> CmdResult {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Split(a) => cmd_split(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::AnalyzeUnseen(a) => cmd_analyze(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

/// Run the command line and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(CliError::new(EXIT_USAGE, "--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command)),
            Err(e) => Err(CliError::new(EXIT_USAGE, e)),
        },
        None => dispatch(&cli.command),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unseen_flag_parses() {
        let (subset, counts) = parse_unseen("dev:spk=1,sys=6,lis=8,txt=5").unwrap();
        assert_eq!(subset, Subset::Dev);
        assert_eq!(
            counts,
            UnseenCounts {
                speaker: 1,
                system: 6,
                text: 5,
                listener: 8
            }
        );
        assert!(parse_unseen("train:spk=1").is_err());
        assert!(parse_unseen("test:foo=1").is_err());
        assert!(parse_unseen("test").is_err());
    }

    #[test]
    fn proportions_and_kinds_parse() {
        assert_eq!(parse_proportions("0.8,0.1,0.1").unwrap(), [0.8, 0.1, 0.1]);
        assert!(parse_proportions("0.8,0.2").is_err());
        assert_eq!(parse_kinds("all").unwrap().0.len(), 4);
        assert_eq!(
            parse_kinds("speed_up,pad_silence").unwrap().0,
            vec![AugmentKind::SpeedUp, AugmentKind::PadSilence]
        );
        assert!(parse_kinds("echo").is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["moskit", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["moskit", "stats", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["moskit", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("nope.json");
        assert_eq!(run(["moskit".as_ref(), "stats".as_ref(), "--manifest".as_ref(), m.as_os_str()]), EXIT_IO);
    }
}
