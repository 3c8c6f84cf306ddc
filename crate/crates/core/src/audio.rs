//! Mono PCM clips, windowed-sinc resampling, speed perturbation, silence
//! trimming/padding and the corpus augmentation driver.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{export_corpus, Corpus, CorpusError, Rating, Utterance};

/// Allowed speed perturbation factors.
pub const SPEED_RANGE: (f64, f64) = (0.95, 1.05);
/// Default range of trimmed/added silence, in seconds.
pub const SILENCE_RANGE: (f64, f64) = (0.05, 0.25);

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported encoding ({detail}); expected 16-bit PCM")]
    Unsupported { path: PathBuf, detail: String },
    #[error("{path}: truncated or malformed WAV ({detail})")]
    Truncated { path: PathBuf, detail: String },
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("speed factor {factor} outside [{lo}, {hi}]")]
    FactorOutOfRange { factor: f64, lo: f64, hi: f64 },
    #[error("cannot trim {samples} samples per edge from a {len}-sample clip")]
    OverTrim { samples: usize, len: usize },
    #[error("invalid augmentation spec: {0}")]
    Spec(String),
    #[error("utterance {0} has no audio")]
    NoAudio(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl AudioError {
    pub fn is_io(&self) -> bool {
        match self {
            AudioError::Io { .. } => true,
            AudioError::Corpus(e) => e.is_io(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::InvalidClip("no samples".into()));
        }
        if sample_rate == 0 {
            return Err(AudioError::InvalidClip("sample rate must be positive".into()));
        }
        if let Some(s) = samples.iter().find(|s| !(s.abs() <= 1.0)) {
            return Err(AudioError::InvalidClip(format!("sample {s} outside [-1, 1]")));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn map_hound(path: &Path, e: hound::Error) -> AudioError {
    let path = path.to_path_buf();
    match e {
        hound::Error::IoError(source) if source.kind() == std::io::ErrorKind::UnexpectedEof => {
            AudioError::Truncated {
                path,
                detail: source.to_string(),
            }
        }
        hound::Error::IoError(source) => AudioError::Io { path, source },
        hound::Error::Unsupported | hound::Error::InvalidSampleFormat => AudioError::Unsupported {
            path,
            detail: e.to_string(),
        },
        other => AudioError::Truncated {
            path,
            detail: other.to_string(),
        },
    }
}

/// Read a 16-bit PCM WAV file, averaging channels to mono. Samples are
/// scaled by 1/32768.
pub fn read_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::Unsupported {
            path: path.to_path_buf(),
            detail: format!("{:?} {}-bit", spec.sample_format, spec.bits_per_sample),
        });
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<Result<_, _>>()
        .map_err(|e| match e {
            // the header was readable, so a short read means the data chunk is cut off
            hound::Error::IoError(source) => AudioError::Truncated {
                path: path.to_path_buf(),
                detail: source.to_string(),
            },
            other => map_hound(path, other),
        })?;
    if !raw.len().is_multiple_of(channels) {
        return Err(AudioError::Truncated {
            path: path.to_path_buf(),
            detail: "partial frame".into(),
        });
    }
    let samples: Vec<f32> = raw
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&s| s as f64).sum();
            (sum / channels as f64 / 32768.0) as f32
        })
        .collect();
    AudioClip::new(samples, spec.sample_rate).map_err(|e| AudioError::Truncated {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Write a clip as mono 16-bit PCM.
pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &clip.samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

/// Zero-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc, tabulated over zero-crossing units.
struct SincTable {
    zeros: usize,
    per_zero: usize,
    table: Vec<f64>,
}

impl SincTable {
    const ZEROS: usize = 64;
    const PER_ZERO: usize = 512;
    const BETA: f64 = 8.0;

    fn new() -> Self {
        let (zeros, per_zero) = (Self::ZEROS, Self::PER_ZERO);
        let n = zeros * per_zero;
        let norm = bessel_i0(Self::BETA);
        let table = (0..=n + 1)
            .map(|k| {
                let u = k as f64 / per_zero as f64;
                if u >= zeros as f64 {
                    return 0.0;
                }
                let sinc = if k == 0 {
                    1.0
                } else {
                    (std::f64::consts::PI * u).sin() / (std::f64::consts::PI * u)
                };
                let r = u / zeros as f64;
                sinc * bessel_i0(Self::BETA * (1.0 - r * r).sqrt()) / norm
            })
            .collect();
        SincTable {
            zeros,
            per_zero,
            table,
        }
    }

    /// Kernel value at |u| zero crossings from the centre.
    fn at(&self, u: f64) -> f64 {
        let pos = u.abs() * self.per_zero as f64;
        let i = pos as usize;
        if i >= self.zeros * self.per_zero {
            return 0.0;
        }
        let frac = pos - i as f64;
        self.table[i] * (1.0 - frac) + self.table[i + 1] * frac
    }
}

/// Cutoff relative to the lower Nyquist frequency.
const ROLLOFF: f64 = 0.96;

/// Band-limited interpolation of `samples` at positions `j * step`,
/// `j < out_len`, low-passed at `ROLLOFF` times the lower of the two Nyquist
/// frequencies.
fn interpolate(samples: &[f32], step: f64, out_len: usize) -> Vec<f32> {
    let table = SincTable::new();
    let cutoff = 0.5 * ROLLOFF * (1.0 / step).min(1.0); // cycles per input sample
    let scale = 2.0 * cutoff;
    let half = table.zeros as f64 / scale;
    let last = samples.len() as isize - 1;
    (0..out_len)
        .into_par_iter()
        .map(|j| {
            let t = j as f64 * step;
            let lo = ((t - half).ceil() as isize).max(0);
            let hi = ((t + half).floor() as isize).min(last);
            let mut acc = 0.0;
            for k in lo..=hi {
                acc += samples[k as usize] as f64 * table.at((t - k as f64) * scale);
            }
            (acc * scale).clamp(-1.0, 1.0) as f32
        })
        .collect()
}

/// Resample to `target_rate`. The output has
/// `round(len * target_rate / sample_rate)` samples.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::InvalidClip("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = ((clip.len() as f64 * ratio).round() as usize).max(1);
    let samples = interpolate(&clip.samples, 1.0 / ratio, out_len);
    AudioClip::new(samples, target_rate)
}

/// Resampling-based speed change: pitch and tempo scale together and the
/// output has `round(len / factor)` samples at the same nominal rate.
pub fn speed_perturb(clip: &AudioClip, factor: f64) -> Result<AudioClip, AudioError> {
    let (lo, hi) = SPEED_RANGE;
    if !(factor >= lo && factor <= hi) {
        return Err(AudioError::FactorOutOfRange { factor, lo, hi });
    }
    if factor == 1.0 {
        return Ok(clip.clone());
    }
    let out_len = ((clip.len() as f64 / factor).round() as usize).max(1);
    let samples = interpolate(&clip.samples, factor, out_len);
    AudioClip::new(samples, clip.sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SilenceMode {
    Trim,
    Pad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Leading,
    Trailing,
    Both,
}

impl Edge {
    fn sides(self) -> (bool, bool) {
        match self {
            Edge::Leading => (true, false),
            Edge::Trailing => (false, true),
            Edge::Both => (true, true),
        }
    }
}

/// Trim or pad `round(amount_seconds * rate)` samples at the chosen edges.
/// Padding inserts exact zeros.
pub fn adjust_silence(
    clip: &AudioClip,
    mode: SilenceMode,
    amount_seconds: f64,
    edge: Edge,
) -> Result<AudioClip, AudioError> {
    if !(amount_seconds >= 0.0 && amount_seconds.is_finite()) {
        return Err(AudioError::InvalidClip(format!(
            "silence amount {amount_seconds} must be non-negative"
        )));
    }
    let n = (amount_seconds * clip.sample_rate as f64).round() as usize;
    let (lead, trail) = edge.sides();
    let len = clip.len();
    let samples = match mode {
        SilenceMode::Pad => {
            let mut out = Vec::with_capacity(len + 2 * n);
            if lead {
                out.resize(n, 0.0);
            }
            out.extend_from_slice(&clip.samples);
            if trail {
                out.resize(out.len() + n, 0.0);
            }
            out
        }
        SilenceMode::Trim => {
            if 2 * n >= len && n > 0 {
                return Err(AudioError::OverTrim { samples: n, len });
            }
            let start = if lead { n } else { 0 };
            let end = if trail { len - n } else { len };
            clip.samples[start..end].to_vec()
        }
    };
    AudioClip::new(samples, clip.sample_rate)
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    SpeedUp,
    SpeedDown,
    TrimSilence,
    PadSilence,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 4] = [
        AugmentKind::SpeedUp,
        AugmentKind::SpeedDown,
        AugmentKind::TrimSilence,
        AugmentKind::PadSilence,
    ];

    /// Suffix appended to the utterance id of a variant.
    pub fn suffix(self) -> &'static str {
        match self {
            AugmentKind::SpeedUp => "speedup",
            AugmentKind::SpeedDown => "slowdown",
            AugmentKind::TrimSilence => "trim",
            AugmentKind::PadSilence => "pad",
        }
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentKind::SpeedUp => "speed_up",
            AugmentKind::SpeedDown => "speed_down",
            AugmentKind::TrimSilence => "trim_silence",
            AugmentKind::PadSilence => "pad_silence",
        })
    }
}

impl FromStr for AugmentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "speed_up" | "speedup" => Ok(AugmentKind::SpeedUp),
            "speed_down" | "slowdown" => Ok(AugmentKind::SpeedDown),
            "trim_silence" | "trim" => Ok(AugmentKind::TrimSilence),
            "pad_silence" | "pad" => Ok(AugmentKind::PadSilence),
            other => Err(format!(
                "unknown augmentation `{other}` (speed_up, speed_down, trim_silence, pad_silence)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub kinds: Vec<AugmentKind>,
    pub speed_range: (f64, f64),
    pub silence_range_seconds: (f64, f64),
    pub seed: u64,
    /// Resample every clip (originals included) to this rate first.
    pub target_rate: Option<u32>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            kinds: AugmentKind::ALL.to_vec(),
            speed_range: SPEED_RANGE,
            silence_range_seconds: SILENCE_RANGE,
            seed: 0,
            target_rate: None,
        }
    }
}

impl AugmentationSpec {
    fn validate(&self) -> Result<(), AudioError> {
        let (lo, hi) = self.speed_range;
        if !(SPEED_RANGE.0 <= lo && lo < 1.0 && 1.0 < hi && hi <= SPEED_RANGE.1) {
            return Err(AudioError::Spec(format!(
                "speed range [{lo}, {hi}] must straddle 1 within [{}, {}]",
                SPEED_RANGE.0, SPEED_RANGE.1
            )));
        }
        let (slo, shi) = self.silence_range_seconds;
        if !(slo >= 0.0 && slo <= shi && shi.is_finite()) {
            return Err(AudioError::Spec(format!("silence range [{slo}, {shi}] is invalid")));
        }
        if self.target_rate == Some(0) {
            return Err(AudioError::Spec("target rate must be positive".into()));
        }
        Ok(())
    }
}

/// Random parameters for one utterance's variants. All are drawn whether or
/// not the corresponding kind is enabled, so enabling a kind never changes
/// the others.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariantDraw {
    pub speed_up: f64,
    pub speed_down: f64,
    pub trim_seconds: f64,
    pub trim_edge: Edge,
    pub pad_seconds: f64,
    pub pad_edge: Edge,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Per-utterance draw from `seed` and a hash of the utterance id.
pub fn draw_variants(spec: &AugmentationSpec, utterance_id: &str) -> VariantDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(fnv1a(utterance_id)));
    let (lo, hi) = spec.speed_range;
    let (slo, shi) = spec.silence_range_seconds;
    let edges = [Edge::Leading, Edge::Trailing, Edge::Both];
    let u_up: f64 = rng.random();
    let u_down: f64 = rng.random();
    let trim_seconds = slo + (shi - slo) * rng.random::<f64>();
    let trim_edge = edges[rng.random_range(0..3)];
    let pad_seconds = slo + (shi - slo) * rng.random::<f64>();
    let pad_edge = edges[rng.random_range(0..3)];
    VariantDraw {
        // (1, hi] and [lo, 1)
        speed_up: 1.0 + (hi - 1.0) * (1.0 - u_up),
        speed_down: lo + (1.0 - lo) * u_down,
        trim_seconds,
        trim_edge,
        pad_seconds,
        pad_edge,
    }
}

fn apply_variant(
    clip: &AudioClip,
    kind: AugmentKind,
    draw: &VariantDraw,
) -> Result<AudioClip, AudioError> {
    match kind {
        AugmentKind::SpeedUp => speed_perturb(clip, draw.speed_up),
        AugmentKind::SpeedDown => speed_perturb(clip, draw.speed_down),
        AugmentKind::TrimSilence => {
            // keep at least half of the clip
            let per_edge = if draw.trim_edge == Edge::Both { 4.0 } else { 2.0 };
            let max = ((clip.len() as f64 / per_edge).floor() - 1.0).max(0.0)
                / clip.sample_rate as f64;
            adjust_silence(clip, SilenceMode::Trim, draw.trim_seconds.min(max), draw.trim_edge)
        }
        AugmentKind::PadSilence => {
            adjust_silence(clip, SilenceMode::Pad, draw.pad_seconds, draw.pad_edge)
        }
    }
}

fn file_stem(utterance_id: &str) -> String {
    utterance_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub manifest_path: PathBuf,
    pub corpus: Corpus,
    /// Utterances whose audio could not be processed, with the reason. They
    /// and their variants are left out of the augmented corpus.
    pub failures: Vec<(String, String)>,
}

struct Produced {
    original: Utterance,
    variants: Vec<(AugmentKind, Utterance)>,
}

/// Write each utterance's audio plus one variant per enabled kind to
/// `out_dir/wav`, and an augmented manifest to `out_dir`. Variants inherit
/// the original's entity ids and ratings; their ids get a `#<kind>` suffix.
/// Source files are never modified.
pub fn augment_corpus(
    corpus: &Corpus,
    spec: &AugmentationSpec,
    out_dir: &Path,
) -> Result<AugmentOutcome, AudioError> {
    spec.validate()?;
    if let Some(u) = corpus.utterances.iter().find(|u| u.audio_path.is_none()) {
        return Err(AudioError::NoAudio(u.utterance_id.clone()));
    }
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|source| AudioError::Io {
        path: wav_dir.clone(),
        source,
    })?;
    let mut kinds = spec.kinds.clone();
    kinds.sort();
    kinds.dedup();

    let process = |u: &Utterance| -> Result<Produced, AudioError> {
        let src = corpus
            .audio_file(u)
            .ok_or_else(|| AudioError::NoAudio(u.utterance_id.clone()))?;
        let mut clip = read_wav(&src)?;
        let stem = file_stem(&u.utterance_id);
        let original_name = format!("{stem}.wav");
        let original_path = wav_dir.join(&original_name);
        match spec.target_rate {
            Some(rate) if rate != clip.sample_rate => {
                clip = resample(&clip, rate)?;
                write_wav(&clip, &original_path)?;
            }
            _ => {
                fs::copy(&src, &original_path).map_err(|source| AudioError::Io {
                    path: original_path.clone(),
                    source,
                })?;
            }
        }
        let draw = draw_variants(spec, &u.utterance_id);
        let mut variants = Vec::with_capacity(kinds.len());
        for &kind in &kinds {
            let out = apply_variant(&clip, kind, &draw)?;
            let name = format!("{stem}__{}.wav", kind.suffix());
            write_wav(&out, &wav_dir.join(&name))?;
            variants.push((
                kind,
                Utterance {
                    utterance_id: format!("{}#{}", u.utterance_id, kind.suffix()),
                    audio_path: Some(name),
                    ..u.clone()
                },
            ));
        }
        Ok(Produced {
            original: Utterance {
                audio_path: Some(original_name),
                ..u.clone()
            },
            variants,
        })
    };

    let results: Vec<Result<Produced, AudioError>> =
        corpus.utterances.par_iter().map(process).collect();

    let mut ratings_of: HashMap<&str, Vec<&Rating>> = HashMap::new();
    for r in &corpus.ratings {
        ratings_of.entry(r.utterance_id.as_str()).or_default().push(r);
    }
    let mut utterances = Vec::new();
    let mut ratings = Vec::new();
    let mut failures = Vec::new();
    for (u, result) in corpus.utterances.iter().zip(results) {
        let produced = match result {
            Ok(p) => p,
            Err(e) => {
                failures.push((u.utterance_id.clone(), e.to_string()));
                continue;
            }
        };
        let source_ratings = ratings_of.get(u.utterance_id.as_str()).cloned().unwrap_or_default();
        let entries = std::iter::once(produced.original)
            .chain(produced.variants.into_iter().map(|(_, v)| v));
        for entry in entries {
            for r in &source_ratings {
                ratings.push(Rating {
                    utterance_id: entry.utterance_id.clone(),
                    ..(*r).clone()
                });
            }
            utterances.push(entry);
        }
    }

    let sample_rate = spec.target_rate.or(corpus.sample_rate);
    let augmented = Corpus {
        name: format!("{}-augmented", corpus.name),
        scale: crate::corpus::ScaleSpec::MOS,
        utterances,
        ratings,
        sample_rate,
        wav_dir: Some(wav_dir),
    };
    let manifest_path = export_corpus(&augmented, out_dir)?;
    Ok(AugmentOutcome {
        manifest_path,
        corpus: augmented,
        failures,
    })
}

/// A deterministic speech-like test signal: a two-partial tone with an
/// amplitude envelope, framed by leading and trailing silence.
pub fn synthetic_clip(seed: u64, seconds: f64, sample_rate: u32) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ((seconds * sample_rate as f64).round() as usize).max(1);
    let f0: f64 = rng.random_range(90.0..400.0);
    let amp: f64 = rng.random_range(0.1..0.8);
    let lead = (n as f64 * rng.random_range(0.02..0.15)) as usize;
    let trail = (n as f64 * rng.random_range(0.02..0.15)) as usize;
    let voiced = n.saturating_sub(lead + trail).max(1);
    let rate = sample_rate as f64;
    let samples = (0..n)
        .map(|i| {
            if i < lead || i >= lead + voiced {
                return 0.0;
            }
            let k = (i - lead) as f64;
            let env = (std::f64::consts::PI * k / voiced as f64).sin();
            let t = i as f64 / rate;
            let tau = std::f64::consts::TAU;
            let s = 0.7 * (tau * f0 * t).sin() + 0.3 * (tau * 2.0 * f0 * t).sin();
            (amp * env * s) as f32
        })
        .collect();
    AudioClip {
        samples,
        sample_rate,
    }
}

/// Write a [`synthetic_clip`] for every utterance into `dir` and point the
/// corpus at them.
pub fn attach_synthetic_audio(
    corpus: &mut Corpus,
    dir: &Path,
    seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<(), AudioError> {
    fs::create_dir_all(dir).map_err(|source| AudioError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    corpus
        .utterances
        .par_iter_mut()
        .try_for_each(|u| -> Result<(), AudioError> {
            let name = format!("{}.wav", file_stem(&u.utterance_id));
            let clip = synthetic_clip(seed.wrapping_add(fnv1a(&u.utterance_id)), seconds, sample_rate);
            write_wav(&clip, &dir.join(&name))?;
            u.audio_path = Some(name);
            Ok(())
        })?;
    corpus.wav_dir = Some(dir.to_path_buf());
    corpus.sample_rate = Some(sample_rate);
    Ok(())
}
