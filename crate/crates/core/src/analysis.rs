//! Seen vs unseen error analysis: utterance-level squared errors are split
//! by whether the utterance's speaker, system, text or listener was held out
//! for the evaluated subset, and the two groups compared with Welch's
//! two-sided t-test.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::metrics::{check_coverage, EvaluateError, PredictionSet};
use crate::special::student_t_two_sided;
use crate::splitter::{Category, SplitAssignment, Subset};
use crate::stats::{mean_and_std, utterance_stats};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("t-test needs at least two values per sample, got {0} and {1}")]
    SampleTooSmall(usize, usize),
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("listener analysis needs exactly one retained rating per utterance; {utterance_id} has {count}")]
    MultiRater { utterance_id: String, count: usize },
    #[error("{category}: {source}")]
    Category {
        category: Category,
        #[source]
        source: Box<AnalysisError>,
    },
    #[error(transparent)]
    Evaluate(#[from] EvaluateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub mean_a: f64,
    pub mean_b: f64,
    pub std_a: f64,
    pub std_b: f64,
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    pub significant: bool,
    pub alpha: f64,
    /// Set when both samples are constant, leaving t undefined or infinite.
    #[serde(default)]
    pub degenerate: bool,
}

/// Welch's unequal-variance two-sided t-test. Significance is `p <= alpha`.
pub fn welch_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult, AnalysisError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AnalysisError::BadAlpha(alpha));
    }
    if a.len() < 2 || b.len() < 2 {
        return Err(AnalysisError::SampleTooSmall(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let (mean_a, std_a) = mean_and_std(a);
    let (mean_b, std_b) = mean_and_std(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let va = std_a * std_a / na;
    let vb = std_b * std_b / nb;
    let se2 = va + vb;

    if se2 == 0.0 {
        // both samples constant
        let diff = mean_a - mean_b;
        let (t, p) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTestResult {
            mean_a,
            mean_b,
            std_a,
            std_b,
            t_statistic: t,
            degrees_of_freedom: na + nb - 2.0,
            p_value: p,
            significant: p <= alpha,
            alpha,
            degenerate: true,
        });
    }

    let t = (mean_a - mean_b) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let p = student_t_two_sided(t, df);
    Ok(TTestResult {
        mean_a,
        mean_b,
        std_a,
        std_b,
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
        significant: p <= alpha,
        alpha,
        degenerate: false,
    })
}

/// Squared errors of the predicted utterances in `subset`, partitioned into
/// (seen, unseen) with respect to `category`.
///
/// For speakers, systems and texts an utterance is unseen when its entity is
/// held out for `subset`. Listener analysis requires every analyzed
/// utterance to keep exactly one rating, and classifies by that sole rater.
pub fn squared_errors_by_category(
    corpus: &Corpus,
    assignment: &SplitAssignment,
    subset: Subset,
    pred: &PredictionSet,
    category: Category,
) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    check_coverage(assignment, subset, pred)?;
    let retained = assignment.retained(corpus);
    let stats: HashMap<String, (f64, usize)> = utterance_stats(&retained)
        .into_iter()
        .map(|s| (s.utterance_id, (s.mean_score, s.rating_count)))
        .collect();
    let designated = assignment.designated(subset);
    let held_out = |id: &str| designated.is_some_and(|d| d.contains(category, id));
    let utterances: HashMap<&str, &crate::corpus::Utterance> = retained
        .utterances
        .iter()
        .map(|u| (u.utterance_id.as_str(), u))
        .collect();
    let sole_rater: HashMap<&str, &str> = if category == Category::Listener {
        retained
            .ratings
            .iter()
            .map(|r| (r.utterance_id.as_str(), r.listener_id.as_str()))
            .collect()
    } else {
        HashMap::new()
    };

    let (mut seen, mut unseen) = (Vec::new(), Vec::new());
    for (utt, &p) in &pred.0 {
        let &(truth, count) = stats
            .get(utt)
            .ok_or_else(|| EvaluateError::Unrated(utt.clone()))?;
        let u = utterances[utt.as_str()];
        let is_unseen = match category {
            Category::Speaker => held_out(&u.speaker_id),
            Category::System => held_out(&u.system_id),
            Category::Text => held_out(&u.text_id),
            Category::Listener => {
                if count != 1 {
                    return Err(AnalysisError::MultiRater {
                        utterance_id: utt.clone(),
                        count,
                    });
                }
                held_out(sole_rater[utt.as_str()])
            }
        };
        let err = (p - truth) * (p - truth);
        if is_unseen {
            unseen.push(err);
        } else {
            seen.push(err);
        }
    }
    Ok((seen, unseen))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl ErrorSummary {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_and_std(values);
        ErrorSummary {
            mean,
            std,
            count: values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAnalysis {
    pub category: Category,
    pub seen: ErrorSummary,
    pub unseen: ErrorSummary,
    /// Test of unseen (a) against seen (b) errors.
    pub t_test: TTestResult,
    /// Unseen errors are higher on average and the difference is significant.
    pub unseen_harder: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenAnalysis {
    pub subset: Subset,
    pub alpha: f64,
    pub categories: Vec<CategoryAnalysis>,
}

pub fn unseen_report(
    corpus: &Corpus,
    assignment: &SplitAssignment,
    subset: Subset,
    pred: &PredictionSet,
    categories: &[Category],
    alpha: f64,
) -> Result<UnseenAnalysis, AnalysisError> {
    let wrap = |category: Category| {
        move |e: AnalysisError| AnalysisError::Category {
            category,
            source: Box::new(e),
        }
    };
    let mut out = Vec::with_capacity(categories.len());
    for &category in categories {
        let (seen, unseen) =
            squared_errors_by_category(corpus, assignment, subset, pred, category)
                .map_err(wrap(category))?;
        let t_test = welch_t_test(&unseen, &seen, alpha).map_err(wrap(category))?;
        let unseen_harder = t_test.mean_a > t_test.mean_b && t_test.significant;
        out.push(CategoryAnalysis {
            category,
            seen: ErrorSummary::of(&seen),
            unseen: ErrorSummary::of(&unseen),
            t_test,
            unseen_harder,
        });
    }
    Ok(UnseenAnalysis {
        subset,
        alpha,
        categories: out,
    })
}
