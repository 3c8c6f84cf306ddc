//! MSE and the three correlation measures (linear, Spearman rank and Kendall
//! tau-b) at utterance and system level.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::splitter::{SplitAssignment, Subset};
use crate::stats::{utterance_stats, UtteranceStats};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("need at least two pairs, got {0}")]
    TooShort(usize),
    #[error("degenerate input: correlation undefined for constant values")]
    Degenerate,
    #[error("non-finite value")]
    NonFinite,
}

/// A correlation coefficient, or the marker for inputs on which it is
/// undefined (constant vectors, fewer than two points).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    Value(f64),
    Degenerate,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Value(v) => Some(v),
            Correlation::Degenerate => None,
        }
    }

    fn from_result(r: Result<f64, MetricError>) -> Result<Self, MetricError> {
        match r {
            Ok(v) => Ok(Correlation::Value(v)),
            Err(MetricError::Degenerate | MetricError::TooShort(_)) => Ok(Correlation::Degenerate),
            Err(e) => Err(e),
        }
    }
}

impl fmt::Display for Correlation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Correlation::Value(v) => write!(f, "{v:.3}"),
            Correlation::Degenerate => f.write_str("degenerate"),
        }
    }
}

impl Serialize for Correlation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Correlation::Value(v) => s.serialize_f64(*v),
            Correlation::Degenerate => s.serialize_str("degenerate"),
        }
    }
}

impl<'de> Deserialize<'de> for Correlation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Correlation::Value(v)),
            Repr::Tag(t) if t == "degenerate" => Ok(Correlation::Degenerate),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!("unexpected `{t}`"))),
        }
    }
}

fn check_pair(truth: &[f64], pred: &[f64]) -> Result<(), MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    if truth.iter().chain(pred).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

fn check_correlation_input(truth: &[f64], pred: &[f64]) -> Result<(), MetricError> {
    check_pair(truth, pred)?;
    if truth.len() < 2 {
        return Err(MetricError::TooShort(truth.len()));
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(truth) || constant(pred) {
        return Err(MetricError::Degenerate);
    }
    Ok(())
}

pub fn mse(truth: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    check_pair(truth, pred)?;
    let sum: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(sum / truth.len() as f64)
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Sample Pearson correlation (LCC).
pub fn pearson(truth: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    check_correlation_input(truth, pred)?;
    Ok(pearson_unchecked(truth, pred))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation (SRCC): Pearson correlation of average ranks.
pub fn spearman(truth: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    check_correlation_input(truth, pred)?;
    Ok(pearson_unchecked(&average_ranks(truth), &average_ranks(pred)))
}

/// Number of pairs within runs of equal adjacent values.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut last: Option<T> = None;
    for v in sorted {
        if last.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run.saturating_sub(1)) / 2;
            run = 1;
        }
        last = Some(v);
    }
    total + run * run.saturating_sub(1) / 2
}

/// Sort `v` ascending with a merge sort, returning the number of inversions
/// (swaps of strictly-out-of-order pairs).
fn merge_sort_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_sort_count(&mut v[..mid], &mut buf[..mid])
        + merge_sort_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall rank correlation, tau-b variant:
/// `(C - D) / sqrt((C + D + T_x) (C + D + T_y))` with `T_x`/`T_y` the pairs
/// tied only in x/y. O(n log n).
pub fn kendall_tau(truth: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    check_correlation_input(truth, pred)?;
    let n = truth.len() as u64;
    let mut pairs: Vec<(f64, f64)> = truth.iter().copied().zip(pred.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = n * (n - 1) / 2;
    let tied_x = tied_pairs(pairs.iter().map(|p| p.0));
    let tied_xy = tied_pairs(pairs.iter().map(|p| (p.0, p.1)));
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = merge_sort_count(&mut ys, &mut buf);
    let tied_y = tied_pairs(ys.iter().copied());

    let denom_x = n0 - tied_x;
    let denom_y = n0 - tied_y;
    if denom_x == 0 || denom_y == 0 {
        return Err(MetricError::Degenerate);
    }
    // C - D = n0 - tx - ty + txy - 2 D
    let numer = n0 as i128 - tied_x as i128 - tied_y as i128 + tied_xy as i128
        - 2 * discordant as i128;
    let tau = numer as f64 / ((denom_x as f64) * (denom_y as f64)).sqrt();
    Ok(tau.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Utterance,
    System,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Utterance => "utterance",
            Level::System => "system",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub level: Level,
    pub n: usize,
    pub mse: f64,
    pub lcc: Correlation,
    pub srcc: Correlation,
    pub ktau: Correlation,
}

impl EvaluationReport {
    pub fn from_pairs(level: Level, truth: &[f64], pred: &[f64]) -> Result<Self, MetricError> {
        Ok(EvaluationReport {
            level,
            n: truth.len(),
            mse: mse(truth, pred)?,
            lcc: Correlation::from_result(pearson(truth, pred))?,
            srcc: Correlation::from_result(spearman(truth, pred))?,
            ktau: Correlation::from_result(kendall_tau(truth, pred))?,
        })
    }
}

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("predictions missing for {} utterance(s): {}", .0.len(), .0.join(", "))]
    Missing(Vec<String>),
    #[error("predictions for {} utterance(s) outside the subset: {}", .0.len(), .0.join(", "))]
    Extra(Vec<String>),
    #[error("prediction for unknown utterance {0}")]
    Unknown(String),
    #[error("utterance {0} has no ratings")]
    Unrated(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: u64,
        message: String,
    },
}

impl EvaluateError {
    pub fn is_io(&self) -> bool {
        matches!(self, EvaluateError::Io { .. })
    }
}

/// Predicted MOS per utterance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet(pub BTreeMap<String, f64>);

impl PredictionSet {
    pub fn get(&self, utterance_id: &str) -> Option<f64> {
        self.0.get(utterance_id).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Read `utterance_id,prediction` rows.
    pub fn read_csv(path: &Path) -> Result<Self, EvaluateError> {
        let format = |line: u64, message: String| EvaluateError::Format {
            path: path.to_path_buf(),
            line,
            message,
        };
        let file = fs::File::open(path).map_err(|source| EvaluateError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let header = reader.headers().map_err(|e| format(1, e.to_string()))?.clone();
        if header.iter().map(str::trim).ne(["utterance_id", "prediction"]) {
            return Err(format(1, "expected header `utterance_id,prediction`".into()));
        }
        let mut map = BTreeMap::new();
        for record in reader.records() {
            let record = record
                .map_err(|e| format(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let id = record[0].trim().to_string();
            let value: f64 = record[1]
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| format(line, format!("invalid prediction `{}`", &record[1])))?;
            if map.insert(id.clone(), value).is_some() {
                return Err(format(line, format!("duplicate utterance_id {id}")));
            }
        }
        Ok(PredictionSet(map))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvaluateError> {
        let mut body = String::from("utterance_id,prediction\n");
        for (id, v) in &self.0 {
            body.push_str(&format!("{id},{v}\n"));
        }
        fs::write(path, body).map_err(|source| EvaluateError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl FromIterator<(String, f64)> for PredictionSet {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        PredictionSet(iter.into_iter().collect())
    }
}

/// A per-system (true MOS, predicted MOS) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemPoint {
    pub system_id: String,
    pub true_mos: f64,
    pub predicted_mos: f64,
    pub utterances: usize,
}

/// Average true per-utterance means and predictions per system, over the
/// predicted utterances. Systems are ordered by id.
pub fn system_aggregate(
    stats: &[UtteranceStats],
    pred: &PredictionSet,
    system_of: &HashMap<&str, &str>,
) -> Result<Vec<SystemPoint>, EvaluateError> {
    let truth: HashMap<&str, f64> = stats
        .iter()
        .map(|s| (s.utterance_id.as_str(), s.mean_score))
        .collect();
    // means are taken as offsets from the first value, so a system whose
    // values are all equal averages to exactly that value
    let mut acc: BTreeMap<&str, ([f64; 2], [f64; 2], usize)> = BTreeMap::new();
    for (utt, &p) in &pred.0 {
        let (Some(&t), Some(&sys)) = (truth.get(utt.as_str()), system_of.get(utt.as_str())) else {
            return Err(EvaluateError::Unknown(utt.clone()));
        };
        let e = acc.entry(sys).or_insert(([t, p], [0.0; 2], 0));
        e.1[0] += t - e.0[0];
        e.1[1] += p - e.0[1];
        e.2 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(sys, (first, offsets, n))| SystemPoint {
            system_id: sys.to_string(),
            true_mos: first[0] + offsets[0] / n as f64,
            predicted_mos: first[1] + offsets[1] / n as f64,
            utterances: n,
        })
        .collect())
}

/// Check that `pred` covers exactly the utterances of `subset`.
pub fn check_coverage(
    assignment: &SplitAssignment,
    subset: Subset,
    pred: &PredictionSet,
) -> Result<(), EvaluateError> {
    let members = assignment.members(subset);
    let missing: Vec<String> = members
        .iter()
        .filter(|u| !pred.0.contains_key(**u))
        .map(|u| u.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(EvaluateError::Missing(missing));
    }
    let extra: Vec<String> = pred
        .0
        .keys()
        .filter(|u| !members.contains(u.as_str()))
        .cloned()
        .collect();
    if !extra.is_empty() {
        return Err(EvaluateError::Extra(extra));
    }
    Ok(())
}

/// Paired (truth, prediction) vectors for one subset at utterance level,
/// ordered by utterance id. `corpus` should already have the split's
/// dropped ratings removed.
pub fn utterance_pairs(
    corpus: &Corpus,
    assignment: &SplitAssignment,
    subset: Subset,
    pred: &PredictionSet,
) -> Result<(Vec<f64>, Vec<f64>), EvaluateError> {
    check_coverage(assignment, subset, pred)?;
    let stats: HashMap<String, f64> = utterance_stats(corpus)
        .into_iter()
        .map(|s| (s.utterance_id, s.mean_score))
        .collect();
    let mut truth = Vec::with_capacity(pred.len());
    let mut p = Vec::with_capacity(pred.len());
    for (utt, &v) in &pred.0 {
        let t = *stats
            .get(utt)
            .ok_or_else(|| EvaluateError::Unrated(utt.clone()))?;
        truth.push(t);
        p.push(v);
    }
    Ok((truth, p))
}

/// Score predictions for one split subset. The split's dropped ratings are
/// excluded from the reference MOS.
pub fn evaluate(
    corpus: &Corpus,
    assignment: &SplitAssignment,
    subset: Subset,
    pred: &PredictionSet,
    level: Level,
) -> Result<EvaluationReport, EvaluateError> {
    let retained = assignment.retained(corpus);
    match level {
        Level::Utterance => {
            let (truth, p) = utterance_pairs(&retained, assignment, subset, pred)?;
            Ok(EvaluationReport::from_pairs(level, &truth, &p)?)
        }
        Level::System => {
            check_coverage(assignment, subset, pred)?;
            let points = system_aggregate(&utterance_stats(&retained), pred, &retained.system_of())?;
            let truth: Vec<f64> = points.iter().map(|p| p.true_mos).collect();
            let p: Vec<f64> = points.iter().map(|p| p.predicted_mos).collect();
            Ok(EvaluationReport::from_pairs(level, &truth, &p)?)
        }
    }
}

/// Per-system points for scatter plots of one subset.
pub fn system_points(
    corpus: &Corpus,
    assignment: &SplitAssignment,
    subset: Subset,
    pred: &PredictionSet,
) -> Result<Vec<SystemPoint>, EvaluateError> {
    check_coverage(assignment, subset, pred)?;
    let retained = assignment.retained(corpus);
    system_aggregate(&utterance_stats(&retained), pred, &retained.system_of())
}
