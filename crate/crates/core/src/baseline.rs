//! Non-neural reference predictors: the training mean, and a ridge
//! regression on three signal features.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{read_wav, AudioClip, AudioError};
use crate::corpus::{Corpus, Utterance, MOS_MAX, MOS_MIN};
use crate::metrics::PredictionSet;
use crate::stats::utterance_stats;

pub const FEATURE_NAMES: [&str; 3] = ["log_duration", "log_rms", "zero_crossing_rate"];
pub const FEATURE_VERSION: u32 = 1;
pub const RIDGE_LAMBDA: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("utterance {0} is not in the corpus")]
    UnknownUtterance(String),
    #[error("training utterance {0} has no ratings")]
    Unrated(String),
    #[error("utterance {0} has no audio; linear_features needs audio")]
    MissingAudio(String),
    #[error("{utterance}: {source}")]
    Audio {
        utterance: String,
        #[source]
        source: AudioError,
    },
    #[error("model was fitted with feature version {found}, expected {FEATURE_VERSION}")]
    FeatureVersion { found: u32 },
    #[error("least-squares system is singular")]
    Singular,
    #[error("model parameters are not finite")]
    NonFinite,
}

impl BaselineError {
    pub fn is_io(&self) -> bool {
        matches!(self, BaselineError::Audio { source, .. } if source.is_io())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    GlobalMean,
    LinearFeatures,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::GlobalMean => "global_mean",
            BaselineKind::LinearFeatures => "linear_features",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global_mean" => Ok(BaselineKind::GlobalMean),
            "linear_features" => Ok(BaselineKind::LinearFeatures),
            other => Err(format!(
                "unknown baseline `{other}` (global_mean, linear_features)"
            )),
        }
    }
}

/// Log duration in seconds, log RMS energy and the fraction of adjacent
/// sample pairs that change sign.
pub fn features(clip: &AudioClip) -> [f64; 3] {
    let n = clip.samples.len();
    let energy: f64 = clip.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
    let rms = (energy / n as f64).sqrt();
    let crossings = clip
        .samples
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count();
    let zcr = if n > 1 {
        crossings as f64 / (n - 1) as f64
    } else {
        0.0
    };
    [clip.duration().ln(), (rms + 1e-10).ln(), zcr]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    pub feature_version: u32,
    /// One weight per entry of [`FEATURE_NAMES`]; empty for the global mean.
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn utterance_features(corpus: &Corpus, u: &Utterance) -> Result<[f64; 3], BaselineError> {
    let path = corpus
        .audio_file(u)
        .ok_or_else(|| BaselineError::MissingAudio(u.utterance_id.clone()))?;
    let clip = read_wav(&path).map_err(|source| BaselineError::Audio {
        utterance: u.utterance_id.clone(),
        source,
    })?;
    Ok(features(&clip))
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, BaselineError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[pivot][col].abs() < 1e-300 {
            return Err(BaselineError::Singular);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Ridge regression with an unpenalised intercept, solved on centred
/// features.
fn ridge(rows: &[[f64; 3]], targets: &[f64], lambda: f64) -> Result<(Vec<f64>, f64), BaselineError> {
    let n = rows.len() as f64;
    let mut x_mean = [0.0; 3];
    for r in rows {
        for (m, v) in x_mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let y_mean = targets.iter().sum::<f64>() / n;
    let mut a = vec![vec![0.0; 3]; 3];
    let mut b = vec![0.0; 3];
    for (r, &y) in rows.iter().zip(targets) {
        let c: Vec<f64> = (0..3).map(|i| r[i] - x_mean[i]).collect();
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += c[i] * c[j];
            }
            b[i] += c[i] * (y - y_mean);
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += lambda;
    }
    let w = solve(a, b)?;
    let bias = y_mean - w.iter().zip(&x_mean).map(|(w, x)| w * x).sum::<f64>();
    Ok((w, bias))
}

impl BaselineModel {
    /// Fit on the utterances in `train`, using their mean ratings in
    /// `corpus` as targets.
    pub fn fit(corpus: &Corpus, train: &BTreeSet<&str>, kind: BaselineKind) -> Result<Self, BaselineError> {
        if train.is_empty() {
            return Err(BaselineError::EmptyTrain);
        }
        let mos: HashMap<String, f64> = utterance_stats(corpus)
            .into_iter()
            .map(|s| (s.utterance_id, s.mean_score))
            .collect();
        let by_id: HashMap<&str, &Utterance> = corpus
            .utterances
            .iter()
            .map(|u| (u.utterance_id.as_str(), u))
            .collect();
        let mut utts = Vec::with_capacity(train.len());
        let mut targets = Vec::with_capacity(train.len());
        for &id in train {
            let u = by_id
                .get(id)
                .ok_or_else(|| BaselineError::UnknownUtterance(id.to_string()))?;
            let y = mos
                .get(id)
                .ok_or_else(|| BaselineError::Unrated(id.to_string()))?;
            utts.push(*u);
            targets.push(*y);
        }
        let model = match kind {
            BaselineKind::GlobalMean => BaselineModel {
                kind,
                feature_version: FEATURE_VERSION,
                weights: Vec::new(),
                bias: targets.iter().sum::<f64>() / targets.len() as f64,
            },
            BaselineKind::LinearFeatures => {
                let rows = utts
                    .iter()
                    .map(|u| utterance_features(corpus, u))
                    .collect::<Result<Vec<_>, _>>()?;
                let (weights, bias) = ridge(&rows, &targets, RIDGE_LAMBDA)?;
                BaselineModel {
                    kind,
                    feature_version: FEATURE_VERSION,
                    weights,
                    bias,
                }
            }
        };
        if !model.bias.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(BaselineError::NonFinite);
        }
        Ok(model)
    }

    /// Raw (unclamped) model output for a feature vector.
    pub fn raw(&self, features: &[f64; 3]) -> f64 {
        self.bias + self.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>()
    }

    /// Predictions for the utterances in `ids`, clamped to the MOS range.
    pub fn predict(&self, corpus: &Corpus, ids: &BTreeSet<&str>) -> Result<PredictionSet, BaselineError> {
        if self.feature_version != FEATURE_VERSION {
            return Err(BaselineError::FeatureVersion {
                found: self.feature_version,
            });
        }
        let by_id: HashMap<&str, &Utterance> = corpus
            .utterances
            .iter()
            .map(|u| (u.utterance_id.as_str(), u))
            .collect();
        let ids: Vec<&str> = ids.iter().copied().collect();
        let values = ids
            .par_iter()
            .map(|&id| {
                let u = by_id
                    .get(id)
                    .ok_or_else(|| BaselineError::UnknownUtterance(id.to_string()))?;
                let raw = match self.kind {
                    BaselineKind::GlobalMean => self.bias,
                    BaselineKind::LinearFeatures => self.raw(&utterance_features(corpus, u)?),
                };
                Ok((id.to_string(), raw.clamp(MOS_MIN, MOS_MAX)))
            })
            .collect::<Result<Vec<_>, BaselineError>>()?;
        Ok(values.into_iter().collect())
    }
}
