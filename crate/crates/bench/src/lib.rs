//! Shared inputs for the benchmarks.

use moskit_core::audio::AudioClip;
use moskit_core::corpus::{generate_synthetic, Corpus, SyntheticSpec};
use moskit_core::splitter::{SplitConfig, UnseenCounts};

/// Deterministic pseudo-random scores in [1, 5] (SplitMix64).
pub fn scores(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed;
    (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^= z >> 31;
            1.0 + 4.0 * (z >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

/// 7106 utterances with 8 ratings each.
pub fn large_corpus() -> Corpus {
    generate_synthetic(&SyntheticSpec::bvcc_like(1)).expect("preset is realizable")
}

/// The held-out counts used for the large in-domain split, for both dev
/// and test.
pub fn large_split_config(n_candidates: usize) -> SplitConfig {
    let u = UnseenCounts {
        speaker: 1,
        system: 6,
        text: 5,
        listener: 8,
    };
    SplitConfig {
        unseen_dev: u,
        unseen_test: u,
        n_candidates,
        master_seed: 1,
        ..Default::default()
    }
}

pub fn tone(freq: f64, rate: u32, seconds: f64) -> AudioClip {
    let n = (seconds * rate as f64) as usize;
    let samples = (0..n)
        .map(|i| (0.5 * (std::f64::consts::TAU * freq * i as f64 / rate as f64).sin()) as f32)
        .collect();
    AudioClip::new(samples, rate).expect("tone is a valid clip")
}
