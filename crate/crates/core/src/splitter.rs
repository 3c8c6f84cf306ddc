//! Train/dev/test split search.
//!
//! A candidate split first draws, without replacement, the speakers,
//! systems, texts and listeners that must be unseen in the test set and then
//! those unseen in the dev set. Utterances of test-unseen speakers, systems
//! and texts are forced into test and those of dev-unseen entities into dev;
//! the remaining capacity of each subset is filled uniformly at random.
//! Unseen listeners are enforced per rating: a listener designated for a
//! subset loses every rating outside that subset. Candidates are scored with
//! [`split_objective`](crate::stats::split_objective) and the best of a
//! seeded batch is kept.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::stats::{mean_and_std, ObjectiveSamples, SplitObjectiveConfig, StatsError};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Dev,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Dev, Subset::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Dev => "dev",
            Subset::Test => "test",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Subset::Train),
            "dev" => Ok(Subset::Dev),
            "test" => Ok(Subset::Test),
            other => Err(format!("subset must be train|dev|test, got `{other}`")),
        }
    }
}

/// Entity axes along which dev/test data can be held out.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Speaker,
    System,
    Text,
    Listener,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Speaker,
        Category::System,
        Category::Text,
        Category::Listener,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Speaker => "speaker",
            Category::System => "system",
            Category::Text => "text",
            Category::Listener => "listener",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "speaker" | "spk" => Ok(Category::Speaker),
            "system" | "sys" => Ok(Category::System),
            "text" | "txt" => Ok(Category::Text),
            "listener" | "lis" => Ok(Category::Listener),
            other => Err(format!(
                "category must be speaker|system|text|listener, got `{other}`"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnseenCounts {
    pub speaker: usize,
    pub system: usize,
    pub text: usize,
    pub listener: usize,
}

impl UnseenCounts {
    pub fn get(&self, category: Category) -> usize {
        match category {
            Category::Speaker => self.speaker,
            Category::System => self.system,
            Category::Text => self.text,
            Category::Listener => self.listener,
        }
    }

    pub fn set(&mut self, category: Category, n: usize) {
        match category {
            Category::Speaker => self.speaker = n,
            Category::System => self.system = n,
            Category::Text => self.text = n,
            Category::Listener => self.listener = n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Train, dev and test shares of the utterances.
    pub proportions: [f64; 3],
    pub unseen_dev: UnseenCounts,
    pub unseen_test: UnseenCounts,
    pub objective: SplitObjectiveConfig,
    pub n_candidates: usize,
    pub master_seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            proportions: [0.7, 0.15, 0.15],
            unseen_dev: UnseenCounts::default(),
            unseen_test: UnseenCounts::default(),
            objective: SplitObjectiveConfig::default(),
            n_candidates: 1000,
            master_seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn unseen(&self, subset: Subset) -> Option<&UnseenCounts> {
        match subset {
            Subset::Train => None,
            Subset::Dev => Some(&self.unseen_dev),
            Subset::Test => Some(&self.unseen_test),
        }
    }

    /// Target sizes for `n` utterances: dev and test get
    /// `round(proportion * n)`, train the remainder.
    pub fn targets(&self, n: usize) -> [usize; 3] {
        let dev = (self.proportions[1] * n as f64).round() as usize;
        let test = (self.proportions[2] * n as f64).round() as usize;
        [n.saturating_sub(dev + test), dev, test]
    }

    pub fn validate(&self, n_utterances: usize) -> Result<(), SplitError> {
        if self.proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(SplitError::Config("proportions must be non-negative".into()));
        }
        let sum: f64 = self.proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplitError::Config(format!(
                "proportions must sum to 1, got {sum}"
            )));
        }
        if self.n_candidates == 0 {
            return Err(SplitError::Config("n_candidates must be at least 1".into()));
        }
        let targets = self.targets(n_utterances);
        if targets[1] + targets[2] > n_utterances {
            return Err(SplitError::Config(
                "dev and test targets exceed the corpus".into(),
            ));
        }
        for s in Subset::ALL {
            if targets[s.index()] == 0 {
                return Err(SplitError::Config(format!(
                    "{s} subset would be empty for {n_utterances} utterances"
                )));
            }
        }
        Ok(())
    }
}

/// Entities held out for one subset, each list sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignatedUnseen {
    pub speaker: Vec<String>,
    pub system: Vec<String>,
    pub text: Vec<String>,
    pub listener: Vec<String>,
}

impl DesignatedUnseen {
    pub fn get(&self, category: Category) -> &[String] {
        match category {
            Category::Speaker => &self.speaker,
            Category::System => &self.system,
            Category::Text => &self.text,
            Category::Listener => &self.listener,
        }
    }

    fn get_mut(&mut self, category: Category) -> &mut Vec<String> {
        match category {
            Category::Speaker => &mut self.speaker,
            Category::System => &mut self.system,
            Category::Text => &mut self.text,
            Category::Listener => &mut self.listener,
        }
    }

    pub fn contains(&self, category: Category, id: &str) -> bool {
        self.get(category).iter().any(|e| e == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub subset_of: BTreeMap<String, Subset>,
    pub dev_unseen: DesignatedUnseen,
    pub test_unseen: DesignatedUnseen,
    /// (utterance_id, listener_id) ratings excluded to keep listeners unseen.
    pub dropped_ratings: BTreeSet<(String, String)>,
}

impl SplitAssignment {
    pub fn designated(&self, subset: Subset) -> Option<&DesignatedUnseen> {
        match subset {
            Subset::Train => None,
            Subset::Dev => Some(&self.dev_unseen),
            Subset::Test => Some(&self.test_unseen),
        }
    }

    /// The corpus as used downstream of this split: dropped ratings removed.
    pub fn retained(&self, corpus: &Corpus) -> Corpus {
        corpus.without_ratings(
            self.dropped_ratings
                .iter()
                .map(|(u, l)| (u.as_str(), l.as_str())),
        )
    }

    pub fn members(&self, subset: Subset) -> BTreeSet<&str> {
        self.subset_of
            .iter()
            .filter(|(_, &s)| s == subset)
            .map(|(u, _)| u.as_str())
            .collect()
    }

    pub fn sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for s in self.subset_of.values() {
            sizes[s.index()] += 1;
        }
        sizes
    }
}

/// Why a candidate was discarded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InvalidReason {
    /// An utterance belongs to both a test-unseen and a dev-unseen entity.
    Conflict { utterance_id: String },
    /// Forced assignments exceed a subset's target size.
    Overfull {
        subset: Subset,
        forced: usize,
        target: usize,
    },
    /// Unseen-listener drops removed every rating of an utterance.
    Unrated { utterance_id: String },
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvalidReason::Conflict { utterance_id } => {
                write!(f, "utterance {utterance_id} forced into both dev and test")
            }
            InvalidReason::Overfull {
                subset,
                forced,
                target,
            } => write!(f, "{forced} utterances forced into {subset}, target {target}"),
            InvalidReason::Unrated { utterance_id } => {
                write!(f, "utterance {utterance_id} lost all ratings")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Candidate {
    Valid(SplitAssignment),
    Invalid(InvalidReason),
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("invalid split configuration: {0}")]
    Config(String),
    #[error("requested {requested} unseen {category}s but the corpus has {available}")]
    NotEnoughEntities {
        category: Category,
        requested: usize,
        available: usize,
    },
    #[error("all {} candidates were invalid; first: {}", .reasons.len(), first_reason(.reasons))]
    NoValidCandidate {
        reasons: Vec<(usize, InvalidReason)>,
    },
    #[error(transparent)]
    Objective(#[from] StatsError),
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
    #[error("split does not cover {} utterance(s), e.g. {}", .missing.len(), .missing.first().map(String::as_str).unwrap_or(""))]
    Coverage { missing: Vec<String> },
}

impl SplitError {
    pub fn is_io(&self) -> bool {
        matches!(self, SplitError::Io { .. })
    }
}

fn first_reason(reasons: &[(usize, InvalidReason)]) -> String {
    reasons
        .first()
        .map(|(i, r)| format!("candidate {i}: {r}"))
        .unwrap_or_default()
}

/// Interned view of a corpus for repeated candidate generation.
struct SplitProblem<'a> {
    corpus: &'a Corpus,
    cfg: &'a SplitConfig,
    /// Sorted entity names per category.
    entities: [Vec<&'a str>; 4],
    /// Utterances of each speaker/system/text entity.
    members: [Vec<Vec<u32>>; 3],
    /// Per utterance: (listener index, score) in corpus rating order.
    ratings: Vec<Vec<(u32, f64)>>,
    targets: [usize; 3],
}

struct Draft {
    subset: Vec<Subset>,
    /// `designated[0]` for dev, `designated[1]` for test, per category.
    designated: [[Vec<u32>; 4]; 2],
    listener_subset: Vec<Option<Subset>>,
}

impl Draft {
    fn keeps(&self, utterance: usize, listener: u32) -> bool {
        self.listener_subset[listener as usize].is_none_or(|s| s == self.subset[utterance])
    }
}

fn intern<'a>(names: impl Iterator<Item = &'a str>) -> (Vec<&'a str>, HashMap<&'a str, u32>) {
    let sorted: BTreeSet<&str> = names.collect();
    let list: Vec<&str> = sorted.into_iter().collect();
    let map = list.iter().enumerate().map(|(i, &n)| (n, i as u32)).collect();
    (list, map)
}

impl<'a> SplitProblem<'a> {
    fn new(corpus: &'a Corpus, cfg: &'a SplitConfig) -> Result<Self, SplitError> {
        let n = corpus.utterances.len();
        cfg.validate(n)?;
        let utts = &corpus.utterances;
        let (speakers, spk_ix) = intern(utts.iter().map(|u| u.speaker_id.as_str()));
        let (systems, sys_ix) = intern(utts.iter().map(|u| u.system_id.as_str()));
        let (texts, txt_ix) = intern(utts.iter().map(|u| u.text_id.as_str()));
        let (listeners, lis_ix) =
            intern(corpus.ratings.iter().map(|r| r.listener_id.as_str()));

        let mut members = [
            vec![Vec::new(); speakers.len()],
            vec![Vec::new(); systems.len()],
            vec![Vec::new(); texts.len()],
        ];
        for (i, u) in utts.iter().enumerate() {
            members[0][spk_ix[u.speaker_id.as_str()] as usize].push(i as u32);
            members[1][sys_ix[u.system_id.as_str()] as usize].push(i as u32);
            members[2][txt_ix[u.text_id.as_str()] as usize].push(i as u32);
        }
        let utt_ix = corpus.utterance_index();
        let mut ratings = vec![Vec::new(); n];
        for r in &corpus.ratings {
            if let Some(&u) = utt_ix.get(r.utterance_id.as_str()) {
                ratings[u].push((lis_ix[r.listener_id.as_str()], r.score));
            }
        }

        let entities = [speakers, systems, texts, listeners];
        for (c, category) in Category::ALL.into_iter().enumerate() {
            let requested = cfg.unseen_dev.get(category) + cfg.unseen_test.get(category);
            if requested > entities[c].len() {
                return Err(SplitError::NotEnoughEntities {
                    category,
                    requested,
                    available: entities[c].len(),
                });
            }
        }
        Ok(SplitProblem {
            corpus,
            cfg,
            entities,
            members,
            ratings,
            targets: cfg.targets(n),
        })
    }

    fn draft(&self, seed: u64) -> Result<Draft, InvalidReason> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut designated: [[Vec<u32>; 4]; 2] = Default::default();
        for (c, category) in Category::ALL.into_iter().enumerate() {
            let n_test = self.cfg.unseen_test.get(category);
            let n_dev = self.cfg.unseen_dev.get(category);
            let picked = index::sample(&mut rng, self.entities[c].len(), n_test + n_dev);
            let picked: Vec<u32> = picked.iter().map(|i| i as u32).collect();
            let (test, dev) = picked.split_at(n_test);
            designated[1][c] = test.to_vec();
            designated[0][c] = dev.to_vec();
            designated[1][c].sort_unstable();
            designated[0][c].sort_unstable();
        }

        let n = self.corpus.utterances.len();
        let mut forced: Vec<Option<Subset>> = vec![None; n];
        for (slot, subset) in [(1, Subset::Test), (0, Subset::Dev)] {
            for c in 0..3 {
                for &entity in &designated[slot][c] {
                    for &u in &self.members[c][entity as usize] {
                        match forced[u as usize] {
                            Some(prev) if prev != subset => {
                                return Err(InvalidReason::Conflict {
                                    utterance_id: self.corpus.utterances[u as usize]
                                        .utterance_id
                                        .clone(),
                                })
                            }
                            _ => forced[u as usize] = Some(subset),
                        }
                    }
                }
            }
        }

        let mut counts = [0usize; 3];
        for s in forced.iter().flatten() {
            counts[s.index()] += 1;
        }
        for subset in [Subset::Test, Subset::Dev] {
            let (forced_n, target) = (counts[subset.index()], self.targets[subset.index()]);
            if forced_n > target {
                return Err(InvalidReason::Overfull {
                    subset,
                    forced: forced_n,
                    target,
                });
            }
        }

        let mut pool: Vec<usize> = (0..n).filter(|&u| forced[u].is_none()).collect();
        pool.shuffle(&mut rng);
        let need_test = self.targets[2] - counts[2];
        let need_dev = self.targets[1] - counts[1];
        let mut subset: Vec<Subset> = forced
            .iter()
            .map(|f| f.unwrap_or(Subset::Train))
            .collect();
        for (k, &u) in pool.iter().enumerate() {
            subset[u] = if k < need_test {
                Subset::Test
            } else if k < need_test + need_dev {
                Subset::Dev
            } else {
                Subset::Train
            };
        }

        let mut listener_subset = vec![None; self.entities[3].len()];
        for (slot, s) in [(0, Subset::Dev), (1, Subset::Test)] {
            for &l in &designated[slot][3] {
                listener_subset[l as usize] = Some(s);
            }
        }
        let draft = Draft {
            subset,
            designated,
            listener_subset,
        };
        for (u, ratings) in self.ratings.iter().enumerate() {
            if !ratings.iter().any(|&(l, _)| draft.keeps(u, l)) {
                return Err(InvalidReason::Unrated {
                    utterance_id: self.corpus.utterances[u].utterance_id.clone(),
                });
            }
        }
        Ok(draft)
    }

    fn objective(&self, draft: &Draft) -> Result<f64, StatsError> {
        let mut samples = ObjectiveSamples::default();
        let mut kept = Vec::new();
        for (u, ratings) in self.ratings.iter().enumerate() {
            kept.clear();
            kept.extend(
                ratings
                    .iter()
                    .filter(|&&(l, _)| draft.keeps(u, l))
                    .map(|&(_, s)| s),
            );
            let s = draft.subset[u].index();
            let (_, sd) = mean_and_std(&kept);
            samples.stddevs[s].push(sd);
            samples.all_stddevs.push(sd);
            samples.scores[s].extend_from_slice(&kept);
            samples.all_scores.extend_from_slice(&kept);
        }
        samples.sort();
        samples.objective(self.cfg.objective)
    }

    fn assignment(&self, draft: &Draft) -> SplitAssignment {
        let utts = &self.corpus.utterances;
        let subset_of = utts
            .iter()
            .zip(&draft.subset)
            .map(|(u, &s)| (u.utterance_id.clone(), s))
            .collect();
        let mut designated = [DesignatedUnseen::default(), DesignatedUnseen::default()];
        for (slot, d) in designated.iter_mut().enumerate() {
            for (c, category) in Category::ALL.into_iter().enumerate() {
                *d.get_mut(category) = draft.designated[slot][c]
                    .iter()
                    .map(|&e| self.entities[c][e as usize].to_string())
                    .collect();
            }
        }
        let mut dropped_ratings = BTreeSet::new();
        for (u, ratings) in self.ratings.iter().enumerate() {
            for &(l, _) in ratings {
                if !draft.keeps(u, l) {
                    dropped_ratings.insert((
                        utts[u].utterance_id.clone(),
                        self.entities[3][l as usize].to_string(),
                    ));
                }
            }
        }
        let [dev_unseen, test_unseen] = designated;
        SplitAssignment {
            subset_of,
            dev_unseen,
            test_unseen,
            dropped_ratings,
        }
    }
}

/// Draw one candidate split from `seed`. Hard errors (bad configuration,
/// more unseen entities than exist) are `Err`; constraint failures of this
/// particular draw are [`Candidate::Invalid`].
pub fn propose_candidate(
    corpus: &Corpus,
    cfg: &SplitConfig,
    seed: u64,
) -> Result<Candidate, SplitError> {
    let problem = SplitProblem::new(corpus, cfg)?;
    Ok(match problem.draft(seed) {
        Ok(draft) => Candidate::Valid(problem.assignment(&draft)),
        Err(reason) => Candidate::Invalid(reason),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub index: usize,
    pub seed: u64,
    pub valid: bool,
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_reason: Option<InvalidReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLog {
    pub candidates: Vec<CandidateRecord>,
    pub winner: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub assignment: SplitAssignment,
    pub objective: f64,
    pub winning_seed: u64,
    pub log: SearchLog,
}

/// Seed of candidate `index`.
pub fn candidate_seed(master_seed: u64, index: usize) -> u64 {
    master_seed.wrapping_add(index as u64)
}

/// Evaluate `cfg.n_candidates` seeded candidates (in parallel) and return
/// the valid one with the lowest objective; ties go to the lowest index.
pub fn search_best_split(corpus: &Corpus, cfg: &SplitConfig) -> Result<SearchOutcome, SplitError> {
    let problem = SplitProblem::new(corpus, cfg)?;
    let candidates: Vec<CandidateRecord> = (0..cfg.n_candidates)
        .into_par_iter()
        .map(|index| {
            let seed = candidate_seed(cfg.master_seed, index);
            let record = match problem.draft(seed) {
                Ok(draft) => CandidateRecord {
                    index,
                    seed,
                    valid: true,
                    objective: Some(problem.objective(&draft)?),
                    invalid_reason: None,
                },
                Err(reason) => CandidateRecord {
                    index,
                    seed,
                    valid: false,
                    objective: None,
                    invalid_reason: Some(reason),
                },
            };
            Ok(record)
        })
        .collect::<Result<_, StatsError>>()?;

    let mut best: Option<(usize, f64)> = None;
    for c in &candidates {
        if let Some(v) = c.objective {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((c.index, v));
            }
        }
    }
    let Some((winner, objective)) = best else {
        return Err(SplitError::NoValidCandidate {
            reasons: candidates
                .into_iter()
                .filter_map(|c| c.invalid_reason.map(|r| (c.index, r)))
                .collect(),
        });
    };
    let winning_seed = candidates[winner].seed;
    let draft = problem
        .draft(winning_seed)
        .expect("winning candidate redraws identically");
    Ok(SearchOutcome {
        assignment: problem.assignment(&draft),
        objective,
        winning_seed,
        log: SearchLog { candidates, winner },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintViolation {
    Uncovered {
        utterance_id: String,
    },
    UnknownUtterance {
        utterance_id: String,
    },
    /// An utterance of an entity held out for `designated_for` sits in a
    /// subset the entity must be unseen from.
    EntityLeak {
        category: Category,
        entity: String,
        designated_for: Subset,
        utterance_id: String,
        found_in: Subset,
    },
    OverlappingDesignation {
        category: Category,
        entity: String,
    },
    ListenerLeak {
        listener_id: String,
        designated_for: Subset,
        utterance_id: String,
        found_in: Subset,
    },
    SizeMismatch {
        subset: Subset,
        size: usize,
        target: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub violations: Vec<ConstraintViolation>,
}

impl ConstraintReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check an assignment against the unseen-entity guarantees and target
/// sizes (within one utterance).
pub fn check_constraints(
    corpus: &Corpus,
    assignment: &SplitAssignment,
    cfg: &SplitConfig,
) -> ConstraintReport {
    let mut violations = Vec::new();
    let index = corpus.utterance_index();
    for u in &corpus.utterances {
        if !assignment.subset_of.contains_key(&u.utterance_id) {
            violations.push(ConstraintViolation::Uncovered {
                utterance_id: u.utterance_id.clone(),
            });
        }
    }
    for id in assignment.subset_of.keys() {
        if !index.contains_key(id.as_str()) {
            violations.push(ConstraintViolation::UnknownUtterance {
                utterance_id: id.clone(),
            });
        }
    }

    for category in Category::ALL {
        let dev: BTreeSet<&String> = assignment.dev_unseen.get(category).iter().collect();
        for e in assignment.test_unseen.get(category) {
            if dev.contains(e) {
                violations.push(ConstraintViolation::OverlappingDesignation {
                    category,
                    entity: e.clone(),
                });
            }
        }
    }

    // test-unseen entities must be absent from train and dev; dev-unseen
    // entities from train
    for u in &corpus.utterances {
        let Some(&found_in) = assignment.subset_of.get(&u.utterance_id) else {
            continue;
        };
        for (category, entity) in [
            (Category::Speaker, &u.speaker_id),
            (Category::System, &u.system_id),
            (Category::Text, &u.text_id),
        ] {
            for (designated_for, allowed) in [
                (Subset::Test, &[Subset::Test][..]),
                (Subset::Dev, &[Subset::Dev, Subset::Test][..]),
            ] {
                let held = assignment
                    .designated(designated_for)
                    .is_some_and(|d| d.contains(category, entity));
                if held && !allowed.contains(&found_in) {
                    violations.push(ConstraintViolation::EntityLeak {
                        category,
                        entity: entity.clone(),
                        designated_for,
                        utterance_id: u.utterance_id.clone(),
                        found_in,
                    });
                }
            }
        }
    }

    let mut listener_home: HashMap<&str, Subset> = HashMap::new();
    for s in [Subset::Dev, Subset::Test] {
        for l in assignment.designated(s).map(|d| d.listener.as_slice()).unwrap_or(&[]) {
            listener_home.insert(l.as_str(), s);
        }
    }
    for r in &corpus.ratings {
        let Some(&home) = listener_home.get(r.listener_id.as_str()) else {
            continue;
        };
        let Some(&found_in) = assignment.subset_of.get(&r.utterance_id) else {
            continue;
        };
        let dropped = assignment
            .dropped_ratings
            .contains(&(r.utterance_id.clone(), r.listener_id.clone()));
        if found_in != home && !dropped {
            violations.push(ConstraintViolation::ListenerLeak {
                listener_id: r.listener_id.clone(),
                designated_for: home,
                utterance_id: r.utterance_id.clone(),
                found_in,
            });
        }
    }

    let sizes = assignment.sizes();
    let targets = cfg.targets(corpus.utterances.len());
    for s in Subset::ALL {
        if sizes[s.index()].abs_diff(targets[s.index()]) > 1 {
            violations.push(ConstraintViolation::SizeMismatch {
                subset: s,
                size: sizes[s.index()],
                target: targets[s.index()],
            });
        }
    }
    ConstraintReport { violations }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRating {
    pub utterance_id: String,
    pub listener_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignatedPair {
    pub dev: DesignatedUnseen,
    pub test: DesignatedUnseen,
}

/// Companion metadata stored next to `split.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub designated_unseen: DesignatedPair,
    pub dropped_ratings: Vec<DroppedRating>,
    #[serde(default)]
    pub objective: Option<f64>,
    #[serde(default)]
    pub winning_seed: Option<u64>,
    #[serde(default)]
    pub config: Option<SplitConfig>,
}

/// Provenance recorded in the metadata file alongside the assignment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitProvenance {
    pub objective: Option<f64>,
    pub winning_seed: Option<u64>,
    pub config: Option<SplitConfig>,
}

/// `split.csv` -> `split.meta.json`.
pub fn meta_path_for(split_path: &Path) -> PathBuf {
    let stem = split_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "split".into());
    split_path.with_file_name(format!("{stem}.meta.json"))
}

/// Write `utterance_id,subset` rows plus the metadata companion file.
pub fn write_split(
    path: &Path,
    assignment: &SplitAssignment,
    provenance: &SplitProvenance,
) -> Result<PathBuf, SplitError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| SplitError::Io { path: p, source }
    };
    let mut body = String::from("utterance_id,subset\n");
    for (u, s) in &assignment.subset_of {
        body.push_str(u);
        body.push(',');
        body.push_str(s.as_str());
        body.push('\n');
    }
    fs::write(path, body).map_err(io(path))?;

    let meta = SplitMeta {
        designated_unseen: DesignatedPair {
            dev: assignment.dev_unseen.clone(),
            test: assignment.test_unseen.clone(),
        },
        dropped_ratings: assignment
            .dropped_ratings
            .iter()
            .map(|(u, l)| DroppedRating {
                utterance_id: u.clone(),
                listener_id: l.clone(),
            })
            .collect(),
        objective: provenance.objective,
        winning_seed: provenance.winning_seed,
        config: provenance.config.clone(),
    };
    let meta_path = meta_path_for(path);
    let json = serde_json::to_string_pretty(&meta).expect("split metadata serializes");
    fs::write(&meta_path, json + "\n").map_err(io(&meta_path))?;
    Ok(meta_path)
}

/// Read a split file (and its metadata companion when present), checking it
/// against `corpus`.
pub fn read_split(
    path: &Path,
    corpus: &Corpus,
) -> Result<(SplitAssignment, Option<SplitMeta>), SplitError> {
    let format = |line: u64, message: String| SplitError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = fs::File::open(path).map_err(|source| SplitError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| format(1, e.to_string()))?
        .clone();
    if header.iter().map(str::trim).ne(["utterance_id", "subset"]) {
        return Err(format(1, "expected header `utterance_id,subset`".into()));
    }
    let known = corpus.utterance_index();
    let mut subset_of = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            format(e.position().map(|p| p.line()).unwrap_or(0), e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let utt = record[0].trim();
        let subset: Subset = record[1].trim().parse().map_err(|e| format(line, e))?;
        if !known.contains_key(utt) {
            return Err(format(line, format!("unknown utterance_id {utt}")));
        }
        if subset_of.insert(utt.to_string(), subset).is_some() {
            return Err(format(line, format!("duplicate utterance_id {utt}")));
        }
    }
    let missing: Vec<String> = corpus
        .utterances
        .iter()
        .filter(|u| !subset_of.contains_key(&u.utterance_id))
        .map(|u| u.utterance_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(SplitError::Coverage { missing });
    }

    let meta_path = meta_path_for(path);
    let meta: Option<SplitMeta> = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|source| SplitError::Io {
            path: meta_path.clone(),
            source,
        })?;
        Some(serde_json::from_str(&text).map_err(|e| SplitError::Format {
            path: meta_path.clone(),
            line: e.line() as u64,
            message: e.to_string(),
        })?)
    } else {
        None
    };
    let mut assignment = SplitAssignment {
        subset_of,
        dev_unseen: DesignatedUnseen::default(),
        test_unseen: DesignatedUnseen::default(),
        dropped_ratings: BTreeSet::new(),
    };
    if let Some(m) = &meta {
        assignment.dev_unseen = m.designated_unseen.dev.clone();
        assignment.test_unseen = m.designated_unseen.test.clone();
        for d in &m.dropped_ratings {
            if !known.contains_key(d.utterance_id.as_str()) {
                return Err(SplitError::Format {
                    path: meta_path.clone(),
                    line: 0,
                    message: format!("dropped rating for unknown utterance_id {}", d.utterance_id),
                });
            }
            assignment
                .dropped_ratings
                .insert((d.utterance_id.clone(), d.listener_id.clone()));
        }
    }
    Ok((assignment, meta))
}
