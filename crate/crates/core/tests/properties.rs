use std::collections::BTreeSet;

use moskit_core::analysis::welch_t_test;
use moskit_core::audio::{adjust_silence, resample, speed_perturb, AudioClip, Edge, SilenceMode};
use moskit_core::corpus::{export_corpus, generate_synthetic, load_manifest, validate_corpus, SyntheticSpec};
use moskit_core::metrics::{average_ranks, pearson, spearman};
use moskit_core::splitter::{
    check_constraints, propose_candidate, search_best_split, Candidate, SplitConfig, Subset, UnseenCounts,
};
use moskit_core::stats::{split_objective, SplitObjectiveConfig};
use proptest::prelude::*;

fn small_spec() -> impl Strategy<Value = SyntheticSpec> {
    (1usize..6, 1usize..4, 1usize..6, 2usize..6, 1usize..4, any::<bool>(), any::<u64>()).prop_map(
        |(systems, speakers, per_system, listeners, ratings, integer, seed)| SyntheticSpec {
            systems,
            speakers,
            texts: speakers * 2,
            listeners,
            utterances_per_system: per_system,
            ratings_per_utterance: ratings.min(listeners),
            integer_scores: integer,
            seed,
            ..Default::default()
        },
    )
}

fn split_corpus() -> moskit_core::Corpus {
    generate_synthetic(&SyntheticSpec {
        systems: 20,
        speakers: 20,
        texts: 60,
        listeners: 40,
        utterances_per_system: 10,
        ratings_per_utterance: 4,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

fn unseen_cfg(seed: u64, candidates: usize) -> SplitConfig {
    let u = UnseenCounts {
        speaker: 1,
        system: 1,
        text: 1,
        listener: 2,
    };
    SplitConfig {
        unseen_dev: u,
        unseen_test: u,
        n_candidates: candidates,
        master_seed: seed,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn export_then_load_is_identity_and_valid(spec in small_spec()) {
        let corpus = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_corpus(&corpus, dir.path()).unwrap();
        let back = load_manifest(&manifest).unwrap();
        prop_assert_eq!(&back.utterances, &corpus.utterances);
        prop_assert_eq!(&back.ratings, &corpus.ratings);
        prop_assert!(validate_corpus(&back).is_empty());
    }

    #[test]
    fn valid_candidates_partition_and_satisfy_constraints(seed in any::<u64>()) {
        let corpus = split_corpus();
        let cfg = unseen_cfg(0, 1);
        if let Candidate::Valid(a) = propose_candidate(&corpus, &cfg, seed).unwrap() {
            let ids: BTreeSet<&str> = corpus.utterances.iter().map(|u| u.utterance_id.as_str()).collect();
            let covered: BTreeSet<&str> = a.subset_of.keys().map(String::as_str).collect();
            prop_assert_eq!(ids, covered);
            let total: usize = Subset::ALL.iter().map(|&s| a.members(s).len()).sum();
            prop_assert_eq!(total, corpus.utterances.len());
            let report = check_constraints(&corpus, &a, &cfg);
            prop_assert!(report.is_empty(), "{:?}", report.violations);
            prop_assert!(split_objective(&corpus, &a, SplitObjectiveConfig::default()).unwrap() >= 0.0);
        }
    }

    #[test]
    fn spearman_is_pearson_on_ranks(
        x in prop::collection::vec(0u8..6, 2..40),
        y in prop::collection::vec(0u8..6, 2..40),
    ) {
        let n = x.len().min(y.len());
        let x: Vec<f64> = x[..n].iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = y[..n].iter().map(|&v| v as f64).collect();
        if let Ok(s) = spearman(&x, &y) {
            let p = pearson(&average_ranks(&x), &average_ranks(&y)).unwrap();
            prop_assert!((s - p).abs() <= 1e-12);
        }
    }

    #[test]
    fn welch_translation_and_scale_invariant(
        a in prop::collection::vec(0.0f64..10.0, 2..20),
        b in prop::collection::vec(0.0f64..10.0, 2..20),
        shift in -100.0f64..100.0,
        scale in 0.01f64..100.0,
    ) {
        let base = welch_t_test(&a, &b, 0.05).unwrap();
        for (m, c) in [(1.0, shift), (scale, 0.0)] {
            let ta: Vec<f64> = a.iter().map(|v| v * m + c).collect();
            let tb: Vec<f64> = b.iter().map(|v| v * m + c).collect();
            let r = welch_t_test(&ta, &tb, 0.05).unwrap();
            prop_assert!((r.t_statistic - base.t_statistic).abs() <= 1e-8 * base.t_statistic.abs().max(1.0));
            prop_assert!((r.degrees_of_freedom - base.degrees_of_freedom).abs() <= 1e-8 * base.degrees_of_freedom);
            prop_assert!((r.p_value - base.p_value).abs() <= 1e-8);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }

    #[test]
    fn resample_length_formula(rate in 4000u32..16_000, ratio_milli in 1000u32..=6000, n in 1usize..2000, up in any::<bool>()) {
        let other = (rate as u64 * ratio_milli as u64 / 1000) as u32;
        let (from, to) = if up { (rate, other) } else { (other, rate) };
        let clip = AudioClip::new((0..n).map(|i| ((i % 17) as f32 - 8.0) / 10.0).collect(), from).unwrap();
        let out = resample(&clip, to).unwrap();
        prop_assert_eq!(out.len(), ((n as f64 * to as f64 / from as f64).round() as usize).max(1));
        prop_assert_eq!(out.sample_rate, to);
    }

    #[test]
    fn speed_perturb_scales_duration(f in 0.95f64..=1.05, n in 100usize..5000) {
        let clip = AudioClip::new((0..n).map(|i| (i as f32 * 0.01).sin() * 0.5).collect(), 16_000).unwrap();
        let out = speed_perturb(&clip, f).unwrap();
        prop_assert!((out.len() as f64 * f - n as f64).abs() <= f);
    }

    #[test]
    fn pad_then_trim_restores(secs in 0.0f64..0.3, n in 10usize..4000, edge in 0usize..3) {
        let edge = [Edge::Leading, Edge::Trailing, Edge::Both][edge];
        let clip = AudioClip::new((0..n).map(|i| ((i % 5) as f32 - 2.0) / 4.0).collect(), 8000).unwrap();
        let padded = adjust_silence(&clip, SilenceMode::Pad, secs, edge).unwrap();
        let per_edge = (secs * 8000.0).round() as usize;
        prop_assume!(per_edge == 0 || 2 * per_edge < padded.len());
        let back = adjust_silence(&padded, SilenceMode::Trim, secs, edge).unwrap();
        prop_assert_eq!(back, clip);
    }
}

#[test]
fn search_winner_bounds_every_candidate_and_is_monotone() {
    let corpus = split_corpus();
    let mut previous = f64::INFINITY;
    for candidates in [5, 20, 80] {
        let out = search_best_split(&corpus, &unseen_cfg(17, candidates)).unwrap();
        for c in &out.log.candidates {
            if let Some(v) = c.objective {
                assert!(out.objective <= v);
            }
        }
        assert!(out.objective <= previous);
        previous = out.objective;
    }
}
