//! Rated listening-test corpora.
//!
//! A corpus is a list of utterances (each tagged with the system, speaker and
//! text that produced it) plus individual listener ratings. Scores are held
//! on the 1-5 scale after loading; corpora rated on any other linear scale are
//! mapped onto it with [`normalize_scale`].

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound of the standard MOS scale.
pub const MOS_MIN: f64 = 1.0;
/// Upper bound of the standard MOS scale.
pub const MOS_MAX: f64 = 5.0;

pub const UTTERANCES_HEADER: [&str; 5] =
    ["utterance_id", "system_id", "speaker_id", "text_id", "audio_path"];
pub const RATINGS_HEADER: [&str; 3] = ["utterance_id", "listener_id", "score"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("invalid scale [{lo}, {hi}]: lower bound must be below upper bound")]
    InvalidScale { lo: f64, hi: f64 },
    #[error("score {score} outside scale [{lo}, {hi}]")]
    ScoreOutOfRange { score: f64, lo: f64, hi: f64 },
    #[error("corpus failed validation: {0}")]
    Invalid(String),
    #[error("unrealizable synthetic corpus: {0}")]
    Unrealizable(String),
}

impl CorpusError {
    pub fn is_io(&self) -> bool {
        matches!(self, CorpusError::Io { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub lo: f64,
    pub hi: f64,
}

impl ScaleSpec {
    pub const MOS: ScaleSpec = ScaleSpec {
        lo: MOS_MIN,
        hi: MOS_MAX,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self, CorpusError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CorpusError::InvalidScale { lo, hi });
        }
        Ok(ScaleSpec { lo, hi })
    }

    pub fn contains(&self, score: f64) -> bool {
        score >= self.lo && score <= self.hi
    }
}

/// Map a raw score on `scale` onto the 1-5 MOS scale with the affine map
/// taking `lo` to 1 and `hi` to 5.
pub fn normalize_scale(score: f64, scale: ScaleSpec) -> Result<f64, CorpusError> {
    if !scale.contains(score) {
        return Err(CorpusError::ScoreOutOfRange {
            score,
            lo: scale.lo,
            hi: scale.hi,
        });
    }
    if scale == ScaleSpec::MOS {
        return Ok(score);
    }
    let mapped = MOS_MIN + (MOS_MAX - MOS_MIN) * (score - scale.lo) / (scale.hi - scale.lo);
    Ok(mapped.clamp(MOS_MIN, MOS_MAX))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub utterance_id: String,
    pub listener_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub system_id: String,
    pub speaker_id: String,
    pub text_id: String,
    pub audio_path: Option<String>,
}

/// A loaded corpus. Rating scores are on the 1-5 scale; `scale` records the
/// raw scale the ratings were collected on.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub scale: ScaleSpec,
    pub utterances: Vec<Utterance>,
    pub ratings: Vec<Rating>,
    pub sample_rate: Option<u32>,
    pub wav_dir: Option<PathBuf>,
}

impl Corpus {
    /// Utterance id to position in `utterances`.
    pub fn utterance_index(&self) -> HashMap<&str, usize> {
        self.utterances
            .iter()
            .enumerate()
            .map(|(i, u)| (u.utterance_id.as_str(), i))
            .collect()
    }

    /// Rating scores grouped per utterance, in utterance order. Ratings keep
    /// their relative order from `ratings`.
    pub fn scores_by_utterance(&self) -> Vec<Vec<f64>> {
        let index = self.utterance_index();
        let mut grouped = vec![Vec::new(); self.utterances.len()];
        for r in &self.ratings {
            if let Some(&i) = index.get(r.utterance_id.as_str()) {
                grouped[i].push(r.score);
            }
        }
        grouped
    }

    pub fn system_of(&self) -> HashMap<&str, &str> {
        self.utterances
            .iter()
            .map(|u| (u.utterance_id.as_str(), u.system_id.as_str()))
            .collect()
    }

    /// Resolved location of an utterance's audio file, if it has one.
    pub fn audio_file(&self, utterance: &Utterance) -> Option<PathBuf> {
        let rel = utterance.audio_path.as_deref()?;
        Some(match &self.wav_dir {
            Some(dir) => dir.join(rel),
            None => PathBuf::from(rel),
        })
    }

    /// Copy of the corpus without the given (utterance, listener) ratings.
    pub fn without_ratings<'a, I>(&self, dropped: I) -> Corpus
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let dropped: HashSet<(&str, &str)> = dropped.into_iter().collect();
        if dropped.is_empty() {
            return self.clone();
        }
        let mut out = self.clone();
        out.ratings.retain(|r| {
            !dropped.contains(&(r.utterance_id.as_str(), r.listener_id.as_str()))
        });
        out
    }
}

/// On-disk manifest describing a corpus. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub scale: ScaleSpec,
    pub ratings_csv: PathBuf,
    pub utterances_csv: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyIdentifier { utterance_id: String, field: String },
    DuplicateUtterance { utterance_id: String },
    DanglingRating { utterance_id: String, listener_id: String },
    DuplicateRating { utterance_id: String, listener_id: String },
    UnratedUtterance { utterance_id: String },
    ScoreOutOfRange { utterance_id: String, listener_id: String, score: f64 },
}

impl Violation {
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::EmptyIdentifier { .. } => "empty identifier",
            Violation::DuplicateUtterance { .. } => "duplicate utterance",
            Violation::DanglingRating { .. } => "dangling rating",
            Violation::DuplicateRating { .. } => "duplicate rating",
            Violation::UnratedUtterance { .. } => "unrated utterance",
            Violation::ScoreOutOfRange { .. } => "score out of range",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// List every invariant violation in `corpus`. Normalized scores must lie in
/// [1, 5].
pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for u in &corpus.utterances {
        for (field, value) in [
            ("utterance_id", &u.utterance_id),
            ("system_id", &u.system_id),
            ("speaker_id", &u.speaker_id),
            ("text_id", &u.text_id),
        ] {
            if value.is_empty() {
                violations.push(Violation::EmptyIdentifier {
                    utterance_id: u.utterance_id.clone(),
                    field: field.to_string(),
                });
            }
        }
        if !seen.insert(u.utterance_id.as_str()) {
            violations.push(Violation::DuplicateUtterance {
                utterance_id: u.utterance_id.clone(),
            });
        }
    }

    let mut rated = HashSet::new();
    let mut pairs = HashSet::new();
    for r in &corpus.ratings {
        if r.listener_id.is_empty() {
            violations.push(Violation::EmptyIdentifier {
                utterance_id: r.utterance_id.clone(),
                field: "listener_id".to_string(),
            });
        }
        if !seen.contains(r.utterance_id.as_str()) {
            violations.push(Violation::DanglingRating {
                utterance_id: r.utterance_id.clone(),
                listener_id: r.listener_id.clone(),
            });
        }
        if !pairs.insert((r.utterance_id.as_str(), r.listener_id.as_str())) {
            violations.push(Violation::DuplicateRating {
                utterance_id: r.utterance_id.clone(),
                listener_id: r.listener_id.clone(),
            });
        }
        if !(r.score >= MOS_MIN && r.score <= MOS_MAX) {
            violations.push(Violation::ScoreOutOfRange {
                utterance_id: r.utterance_id.clone(),
                listener_id: r.listener_id.clone(),
                score: r.score,
            });
        }
        rated.insert(r.utterance_id.as_str());
    }
    for u in &corpus.utterances {
        if !rated.contains(u.utterance_id.as_str()) {
            violations.push(Violation::UnratedUtterance {
                utterance_id: u.utterance_id.clone(),
            });
        }
    }
    ValidationReport { violations }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, line: u64, message: impl Into<String>) -> CorpusError {
    CorpusError::Row {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<fs::File>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let found = reader
        .headers()
        .map_err(|e| csv_err(path, 1, e.to_string()))?
        .clone();
    if found.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(csv_err(
            path,
            1,
            format!("expected header `{}`", header.join(",")),
        ));
    }
    Ok(reader)
}

fn read_rows(
    path: &Path,
    header: &[&str],
) -> Result<Vec<(u64, Vec<String>)>, CorpusError> {
    let mut reader = open_csv(path, header)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            csv_err(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, record.iter().map(|f| f.trim().to_string()).collect()));
    }
    Ok(rows)
}

/// Load and validate a corpus from a manifest file, normalizing scores to
/// the 1-5 scale.
pub fn load_manifest(manifest_path: &Path) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
    let scale = ScaleSpec::new(manifest.scale.lo, manifest.scale.hi)?;
    if manifest.sample_rate == Some(0) {
        return Err(CorpusError::Manifest {
            path: manifest_path.to_path_buf(),
            message: "sample_rate must be positive".into(),
        });
    }
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let utterances_path = base.join(&manifest.utterances_csv);
    let ratings_path = base.join(&manifest.ratings_csv);

    let mut utterances = Vec::new();
    let mut ids: HashSet<String> = HashSet::new();
    for (line, row) in read_rows(&utterances_path, &UTTERANCES_HEADER)? {
        for (field, value) in UTTERANCES_HEADER.iter().zip(&row).take(4) {
            if value.is_empty() {
                return Err(csv_err(&utterances_path, line, format!("empty {field}")));
            }
        }
        if !ids.insert(row[0].clone()) {
            return Err(csv_err(
                &utterances_path,
                line,
                format!("duplicate utterance_id {}", row[0]),
            ));
        }
        let mut row = row.into_iter();
        let mut next = || row.next().unwrap_or_default();
        utterances.push(Utterance {
            utterance_id: next(),
            system_id: next(),
            speaker_id: next(),
            text_id: next(),
            audio_path: Some(next()).filter(|p| !p.is_empty()),
        });
    }

    let mut ratings = Vec::new();
    let mut pairs: HashSet<(String, String)> = HashSet::new();
    for (line, row) in read_rows(&ratings_path, &RATINGS_HEADER)? {
        let (utt, listener, raw) = (&row[0], &row[1], &row[2]);
        if utt.is_empty() || listener.is_empty() {
            return Err(csv_err(&ratings_path, line, "empty identifier"));
        }
        if !ids.contains(utt) {
            return Err(csv_err(
                &ratings_path,
                line,
                format!("rating references unknown utterance_id {utt}"),
            ));
        }
        let score: f64 = raw
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| csv_err(&ratings_path, line, format!("invalid score `{raw}`")))?;
        let score = normalize_scale(score, scale)
            .map_err(|e| csv_err(&ratings_path, line, e.to_string()))?;
        if !pairs.insert((utt.clone(), listener.clone())) {
            return Err(csv_err(
                &ratings_path,
                line,
                format!("duplicate rating of {utt} by {listener}"),
            ));
        }
        ratings.push(Rating {
            utterance_id: utt.clone(),
            listener_id: listener.clone(),
            score,
        });
    }

    let corpus = Corpus {
        name: manifest.name,
        scale,
        utterances,
        ratings,
        sample_rate: manifest.sample_rate,
        wav_dir: manifest.wav_dir.map(|d| base.join(d)),
    };
    let report = validate_corpus(&corpus);
    if let Some(v) = report.violations.first() {
        return Err(CorpusError::Invalid(format!(
            "{} violation(s), first: {} ({:?})",
            report.violations.len(),
            v.kind(),
            v
        )));
    }
    Ok(corpus)
}

/// Write `corpus` as `manifest.json`, `utterances.csv` and `ratings.csv` in
/// `dir`, with scores on the 1-5 scale. Returns the manifest path.
pub fn export_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf, CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let utterances_path = dir.join("utterances.csv");
    let ratings_path = dir.join("ratings.csv");
    let write_err = |path: &Path, e: csv::Error| csv_err(path, 0, e.to_string());

    let mut w = csv::Writer::from_path(&utterances_path)
        .map_err(|e| write_err(&utterances_path, e))?;
    w.write_record(UTTERANCES_HEADER)
        .map_err(|e| write_err(&utterances_path, e))?;
    for u in &corpus.utterances {
        w.write_record([
            u.utterance_id.as_str(),
            &u.system_id,
            &u.speaker_id,
            &u.text_id,
            u.audio_path.as_deref().unwrap_or(""),
        ])
        .map_err(|e| write_err(&utterances_path, e))?;
    }
    w.flush().map_err(io_err(&utterances_path))?;

    let mut w =
        csv::Writer::from_path(&ratings_path).map_err(|e| write_err(&ratings_path, e))?;
    w.write_record(RATINGS_HEADER)
        .map_err(|e| write_err(&ratings_path, e))?;
    for r in &corpus.ratings {
        w.write_record([
            r.utterance_id.as_str(),
            &r.listener_id,
            &r.score.to_string(),
        ])
        .map_err(|e| write_err(&ratings_path, e))?;
    }
    w.flush().map_err(io_err(&ratings_path))?;

    let manifest = Manifest {
        name: corpus.name.clone(),
        scale: ScaleSpec::MOS,
        ratings_csv: "ratings.csv".into(),
        utterances_csv: "utterances.csv".into(),
        wav_dir: corpus.wav_dir.as_ref().map(|d| relative_to(d, dir)),
        sample_rate: corpus.sample_rate,
    };
    let manifest_path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, body + "\n").map_err(io_err(&manifest_path))?;
    Ok(manifest_path)
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    match path.strip_prefix(base) {
        Ok(rel) if rel.as_os_str().is_empty() => PathBuf::from("."),
        Ok(rel) => rel.to_path_buf(),
        Err(_) if path.is_absolute() => path.to_path_buf(),
        Err(_) => std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf()),
    }
}

/// Parameters for [`generate_synthetic`].
///
/// Every system is tied to one speaker (`system % speakers`) and each text
/// to one speaker (`text % speakers`), so unseen-speaker, -system and -text
/// constraints only collide when the drawn entities share a speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub systems: usize,
    pub speakers: usize,
    pub texts: usize,
    pub listeners: usize,
    pub utterances_per_system: usize,
    pub ratings_per_utterance: usize,
    /// Per-system mean MOS; drawn uniformly from [1.5, 4.5] when absent.
    pub system_means: Option<Vec<f64>>,
    /// Standard deviation of per-utterance quality around the system mean.
    pub utterance_spread: f64,
    /// Standard deviation of individual ratings around the utterance quality.
    pub rating_spread: f64,
    /// Round individual ratings to whole scale points.
    pub integer_scores: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            name: "synthetic".into(),
            systems: 10,
            speakers: 4,
            texts: 20,
            listeners: 40,
            utterances_per_system: 10,
            ratings_per_utterance: 8,
            system_means: None,
            utterance_spread: 0.3,
            rating_spread: 0.7,
            integer_scores: true,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// A corpus with the shape of the large in-domain test: 187 systems x 38
    /// utterances = 7106 utterances, 27 speakers, 8 ratings each.
    pub fn bvcc_like(seed: u64) -> Self {
        SyntheticSpec {
            name: "bvcc-like".into(),
            systems: 187,
            speakers: 27,
            texts: 540,
            listeners: 300,
            utterances_per_system: 38,
            ratings_per_utterance: 8,
            system_means: None,
            utterance_spread: 0.4,
            rating_spread: 0.8,
            integer_scores: true,
            seed,
        }
    }
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len().max(3)
}

/// Generate a deterministic synthetic corpus (metadata and ratings only).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus, CorpusError> {
    let counts = [
        ("systems", spec.systems),
        ("speakers", spec.speakers),
        ("texts", spec.texts),
        ("listeners", spec.listeners),
        ("utterances_per_system", spec.utterances_per_system),
        ("ratings_per_utterance", spec.ratings_per_utterance),
    ];
    for (name, n) in counts {
        if n == 0 {
            return Err(CorpusError::Unrealizable(format!("{name} must be at least 1")));
        }
    }
    if spec.ratings_per_utterance > spec.listeners {
        return Err(CorpusError::Unrealizable(format!(
            "{} ratings per utterance need at least as many listeners, got {}",
            spec.ratings_per_utterance, spec.listeners
        )));
    }
    if let Some(means) = &spec.system_means {
        if means.len() != spec.systems {
            return Err(CorpusError::Unrealizable(format!(
                "{} system means given for {} systems",
                means.len(),
                spec.systems
            )));
        }
    }
    if !(spec.utterance_spread >= 0.0 && spec.rating_spread >= 0.0) {
        return Err(CorpusError::Unrealizable("spreads must be non-negative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<f64> = match &spec.system_means {
        Some(m) => m.clone(),
        None => (0..spec.systems).map(|_| rng.random_range(1.5..=4.5)).collect(),
    };
    let utt_noise = Normal::new(0.0, spec.utterance_spread).expect("finite spread");
    let rating_noise = Normal::new(0.0, spec.rating_spread).expect("finite spread");

    let (ws, wk, wt, wl) = (
        width(spec.systems),
        width(spec.speakers),
        width(spec.texts),
        width(spec.listeners),
    );
    let wu = width(spec.systems * spec.utterances_per_system);
    // texts owned by each speaker; speakers without texts draw from all texts
    let mut texts_of: Vec<Vec<usize>> = vec![Vec::new(); spec.speakers];
    for t in 0..spec.texts {
        texts_of[t % spec.speakers].push(t);
    }

    let mut utterances = Vec::with_capacity(spec.systems * spec.utterances_per_system);
    let mut ratings =
        Vec::with_capacity(spec.systems * spec.utterances_per_system * spec.ratings_per_utterance);
    for (s, &mean) in means.iter().enumerate() {
        let speaker = s % spec.speakers;
        for _ in 0..spec.utterances_per_system {
            let text = if texts_of[speaker].is_empty() {
                rng.random_range(0..spec.texts)
            } else {
                texts_of[speaker][rng.random_range(0..texts_of[speaker].len())]
            };
            let utterance_id = format!("utt{:0wu$}", utterances.len());
            let quality = mean + utt_noise.sample(&mut rng);
            let panel = index::sample(&mut rng, spec.listeners, spec.ratings_per_utterance);
            let mut panel = panel.into_vec();
            panel.sort_unstable();
            for listener in panel {
                let mut score = quality + rating_noise.sample(&mut rng);
                if spec.integer_scores {
                    score = score.round();
                }
                ratings.push(Rating {
                    utterance_id: utterance_id.clone(),
                    listener_id: format!("lis{listener:0wl$}"),
                    score: score.clamp(MOS_MIN, MOS_MAX),
                });
            }
            utterances.push(Utterance {
                utterance_id,
                system_id: format!("sys{s:0ws$}"),
                speaker_id: format!("spk{speaker:0wk$}"),
                text_id: format!("txt{text:0wt$}"),
                audio_path: None,
            });
        }
    }

    Ok(Corpus {
        name: spec.name.clone(),
        scale: ScaleSpec::MOS,
        utterances,
        ratings,
        sample_rate: None,
        wav_dir: None,
    })
}
