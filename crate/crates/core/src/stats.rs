//! Rating aggregation, score histograms, the 1-D earth mover's distance and
//! the split-balance objective built from it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::splitter::{SplitAssignment, Subset};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("bin edges must be strictly increasing with at least two edges")]
    BadEdges,
    #[error("score {0} outside histogram range")]
    OutOfRange(f64),
    #[error("{0} subset is empty")]
    EmptySubset(Subset),
    #[error("utterance {0} is not covered by the split")]
    Uncovered(String),
    #[error("utterance {0} has no retained ratings")]
    Unrated(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceStats {
    pub utterance_id: String,
    pub mean_score: f64,
    pub stddev: f64,
    pub rating_count: usize,
}

/// Arithmetic mean and sample (n - 1) standard deviation; the deviation of a
/// single value is 0.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Per-utterance statistics in corpus order. Utterances without ratings are
/// skipped.
pub fn utterance_stats(corpus: &Corpus) -> Vec<UtteranceStats> {
    corpus
        .utterances
        .iter()
        .zip(corpus.scores_by_utterance())
        .filter(|(_, scores)| !scores.is_empty())
        .map(|(u, scores)| {
            let (mean, sd) = mean_and_std(&scores);
            UtteranceStats {
                utterance_id: u.utterance_id.clone(),
                mean_score: mean,
                stddev: sd,
                rating_count: scores.len(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMean {
    pub system_id: String,
    pub mean_mos: f64,
    pub utterances: usize,
}

/// Per-system MOS: unweighted mean of the system's per-utterance means,
/// ordered by system id.
pub fn system_means(corpus: &Corpus, stats: &[UtteranceStats]) -> Vec<SystemMean> {
    let system_of = corpus.system_of();
    let mut acc: std::collections::BTreeMap<&str, (f64, usize)> = Default::default();
    for s in stats {
        if let Some(sys) = system_of.get(s.utterance_id.as_str()) {
            let e = acc.entry(sys).or_default();
            e.0 += s.mean_score;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .map(|(sys, (sum, n))| SystemMean {
            system_id: sys.to_string(),
            mean_mos: sum / n as f64,
            utterances: n,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Edges centred on the integers 1..=5, so binning rounds to the nearest
/// scale point.
pub fn integer_edges() -> Vec<f64> {
    vec![0.5, 1.5, 2.5, 3.5, 4.5, 5.5]
}

/// Count scores into half-open bins `[e_i, e_{i+1})`; the last bin is
/// closed.
pub fn score_histogram(scores: &[f64], bin_edges: &[f64]) -> Result<Histogram, StatsError> {
    if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(StatsError::BadEdges);
    }
    let bins = bin_edges.len() - 1;
    let (first, last) = (bin_edges[0], bin_edges[bins]);
    let mut counts = vec![0u64; bins];
    for &s in scores {
        if !(s >= first && s <= last) {
            return Err(StatsError::OutOfRange(s));
        }
        // first edge strictly greater than s, minus one
        let upper = bin_edges.partition_point(|&e| e <= s);
        counts[(upper - 1).min(bins - 1)] += 1;
    }
    Ok(Histogram {
        bin_edges: bin_edges.to_vec(),
        counts,
    })
}

/// 1-Wasserstein distance between the empirical distributions of two
/// samples, as the exact integral of |F_a - F_b|.
pub fn emd(sample_a: &[f64], sample_b: &[f64]) -> Result<f64, StatsError> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut a = sample_a.to_vec();
    let mut b = sample_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(emd_sorted(&a, &b))
}

/// [`emd`] for samples already sorted ascending. Both must be non-empty.
pub fn emd_sorted(a: &[f64], b: &[f64]) -> f64 {
    debug_assert!(!a.is_empty() && !b.is_empty());
    let (n, m) = (a.len() as u64, b.len() as u64);
    let scale = (n as f64) * (m as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        // F_a = i/n and F_b = j/m on [prev, next)
        let gap = (i as u64 * m).abs_diff(j as u64 * n);
        if gap != 0 {
            total += gap as f64 / scale * (next - prev);
        }
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitObjectiveConfig {
    pub include_stddev_term: bool,
}

impl Default for SplitObjectiveConfig {
    fn default() -> Self {
        SplitObjectiveConfig {
            include_stddev_term: true,
        }
    }
}

/// Pre-sorted per-subset and full-corpus samples feeding the objective.
#[derive(Debug, Default)]
pub(crate) struct ObjectiveSamples {
    pub scores: [Vec<f64>; 3],
    pub all_scores: Vec<f64>,
    pub stddevs: [Vec<f64>; 3],
    pub all_stddevs: Vec<f64>,
}

impl ObjectiveSamples {
    pub(crate) fn sort(&mut self) {
        for v in self
            .scores
            .iter_mut()
            .chain(self.stddevs.iter_mut())
            .chain([&mut self.all_scores, &mut self.all_stddevs])
        {
            v.sort_by(f64::total_cmp);
        }
    }

    pub(crate) fn objective(&self, cfg: SplitObjectiveConfig) -> Result<f64, StatsError> {
        for s in Subset::ALL {
            if self.scores[s.index()].is_empty() {
                return Err(StatsError::EmptySubset(s));
            }
        }
        let mut total = 0.0;
        for s in Subset::ALL {
            total += emd_sorted(&self.scores[s.index()], &self.all_scores);
        }
        if cfg.include_stddev_term {
            for s in Subset::ALL {
                total += emd_sorted(&self.stddevs[s.index()], &self.all_stddevs);
            }
        }
        Ok(total)
    }
}

/// Sum over train/dev/test of the EMD between the subset's individual
/// ratings and all ratings, plus (optionally) the same for per-utterance
/// rating standard deviations. Ratings listed in the assignment's
/// `dropped_ratings` are excluded everywhere.
pub fn split_objective(
    corpus: &Corpus,
    assignment: &SplitAssignment,
    cfg: SplitObjectiveConfig,
) -> Result<f64, StatsError> {
    let retained = corpus.without_ratings(
        assignment
            .dropped_ratings
            .iter()
            .map(|(u, l)| (u.as_str(), l.as_str())),
    );
    let mut samples = ObjectiveSamples::default();
    let grouped = retained.scores_by_utterance();
    for (u, scores) in retained.utterances.iter().zip(&grouped) {
        let subset = *assignment
            .subset_of
            .get(&u.utterance_id)
            .ok_or_else(|| StatsError::Uncovered(u.utterance_id.clone()))?;
        if scores.is_empty() {
            return Err(StatsError::Unrated(u.utterance_id.clone()));
        }
        let (_, sd) = mean_and_std(scores);
        samples.stddevs[subset.index()].push(sd);
        samples.all_stddevs.push(sd);
        samples.scores[subset.index()].extend_from_slice(scores);
        samples.all_scores.extend_from_slice(scores);
    }
    samples.sort();
    samples.objective(cfg)
}
