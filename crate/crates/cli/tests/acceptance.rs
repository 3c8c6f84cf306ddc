//! Acceptance suite. Each test checks one criterion and prints a single
//! PASS/FAIL line for it.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use moskit_cli::run;
use moskit_core::analysis::{welch_t_test, UnseenAnalysis};
use moskit_core::audio::{read_wav, resample, speed_perturb, AudioClip};
use moskit_core::corpus::{export_corpus, load_manifest, Corpus, Rating, ScaleSpec, Utterance};
use moskit_core::metrics::{kendall_tau, pearson, spearman, EvaluationReport, PredictionSet};
use moskit_core::splitter::{
    candidate_seed, check_constraints, propose_candidate, read_split, write_split, Candidate,
    DesignatedUnseen, SearchLog, SplitAssignment, SplitProvenance, Subset,
};
use moskit_core::stats::{emd, split_objective, utterance_stats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn report(n: u32, name: &str, outcome: Check) {
    use std::io::Write;
    let line = match &outcome {
        Ok(detail) => format!("criterion {n} [{name}]: PASS ({detail})"),
        Err(why) => format!("criterion {n} [{name}]: FAIL ({why})"),
    };
    // written to the raw handle so the line survives output capture
    let _ = writeln!(std::io::stderr().lock(), "{line}");
    if let Err(why) = outcome {
        panic!("criterion {n} failed: {why}");
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn cli(args: &[&dyn AsRef<std::ffi::OsStr>]) -> i32 {
    let argv: Vec<OsString> = std::iter::once(OsString::from("moskit"))
        .chain(args.iter().map(|a| a.as_ref().to_os_string()))
        .collect();
    run(argv)
}

fn ok(code: i32, what: &str) -> Result<(), String> {
    if code == 0 {
        Ok(())
    } else {
        Err(format!("`{what}` exited with {code}"))
    }
}

// ---------------------------------------------------------------- 1

fn split_at_scale() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus_dir = dir.path().join("corpus");
    let manifest = corpus_dir.join("manifest.json");
    let split = dir.path().join("split.csv");
    let log = dir.path().join("search.json");
    ok(cli(&[&"synth", &"--preset", &"bvcc", &"--seed", &"2024", &"--out-dir", &corpus_dir]), "synth")?;
    let corpus = load_manifest(&manifest).map_err(|e| e.to_string())?;
    ensure!(corpus.utterances.len() == 7106, "corpus has {} utterances", corpus.utterances.len());
    ensure!(corpus.ratings.len() == 7106 * 8, "corpus has {} ratings", corpus.ratings.len());

    let start = Instant::now();
    ok(
        cli(&[
            &"split", &"--manifest", &manifest,
            &"--proportions", &"0.7,0.15,0.15",
            &"--unseen", &"dev:spk=1,sys=6,lis=8,txt=5",
            &"--unseen", &"test:spk=1,sys=6,lis=8,txt=5",
            &"--candidates", &"1000", &"--seed", &"1",
            &"--out", &split, &"--log", &log,
        ]),
        "split",
    )?;
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(300), "split took {elapsed:?}");

    let (assignment, meta) = read_split(&split, &corpus).map_err(|e| e.to_string())?;
    let meta = meta.ok_or("split metadata missing")?;
    let cfg = meta.config.clone().ok_or("config missing from metadata")?;
    let train = assignment.sizes()[0];
    ensure!((4973..=4975).contains(&train), "train size {train}");
    let violations = check_constraints(&corpus, &assignment, &cfg);
    ensure!(violations.is_empty(), "constraint violations: {:?}", violations.violations);

    let log: SearchLog = serde_json::from_str(&fs::read_to_string(&log).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure!(log.candidates.len() == 1000, "{} logged candidates", log.candidates.len());
    let mut min = f64::INFINITY;
    let mut valid = 0;
    for (i, rec) in log.candidates.iter().enumerate() {
        ensure!(rec.index == i && rec.seed == candidate_seed(cfg.master_seed, i), "log entry {i} mislabelled");
        let candidate = propose_candidate(&corpus, &cfg, rec.seed).map_err(|e| e.to_string())?;
        match (candidate, rec.objective) {
            (Candidate::Valid(a), Some(logged)) => {
                let again = split_objective(&corpus, &a, cfg.objective).map_err(|e| e.to_string())?;
                ensure!(again == logged, "candidate {i}: logged {logged}, re-evaluated {again}");
                ensure!(check_constraints(&corpus, &a, &cfg).is_empty(), "candidate {i} violates constraints");
                min = min.min(again);
                valid += 1;
            }
            (Candidate::Invalid(_), None) => {}
            (_, logged) => return Err(format!("candidate {i}: validity disagrees with log ({logged:?})")),
        }
    }
    let objective = meta.objective.ok_or("objective missing")?;
    ensure!(objective == min, "winner {objective} but minimum {min}");
    ensure!(log.candidates[log.winner].objective == Some(min), "log winner is not the minimum");
    let winner_again = split_objective(&corpus, &assignment, cfg.objective).map_err(|e| e.to_string())?;
    ensure!(winner_again == objective, "written split re-evaluates to {winner_again}");
    Ok(format!(
        "{:.2}s, train {train}, {valid} valid candidates, objective {objective:.6}",
        elapsed.as_secs_f64()
    ))
}

#[test]
fn criterion_1_split_at_full_scale() {
    report(1, "split search at full corpus scale", split_at_scale());
}

// ---------------------------------------------------------------- 2

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials).
fn hungarian(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[p[j] - 1][j - 1]).sum()
}

/// Optimal transport between two empirical distributions: each point of `a`
/// carries |b| unit masses and each point of `b` carries |a|, so the
/// transport polytope's vertices are permutations.
fn transport_oracle(a: &[f64], b: &[f64]) -> f64 {
    let left: Vec<f64> = a.iter().flat_map(|&x| std::iter::repeat_n(x, b.len())).collect();
    let right: Vec<f64> = b.iter().flat_map(|&y| std::iter::repeat_n(y, a.len())).collect();
    let cost: Vec<Vec<f64>> = left
        .iter()
        .map(|x| right.iter().map(|y| (x - y).abs()).collect())
        .collect();
    hungarian(&cost) / (a.len() * b.len()) as f64
}

fn random_sample(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<f64> {
    let n = rng.random_range(1..=max_len);
    (0..n).map(|_| rng.random_range(1.0..=5.0)).collect()
}

fn emd_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let (a, b) = (random_sample(&mut rng, 8), random_sample(&mut rng, 8));
        // every fourth pair uses scale points only, so ties are exercised
        let (a, b) = if i % 4 == 0 {
            (a.iter().map(|x| x.round()).collect(), b.iter().map(|x| x.round()).collect())
        } else {
            (a, b)
        };
        let got = emd(&a, &b).map_err(|e| e.to_string())?;
        let want = transport_oracle(&a, &b);
        worst = worst.max((got - want).abs());
        ensure!((got - want).abs() <= 1e-9, "pair {i}: emd {got} vs oracle {want} for {a:?} / {b:?}");
    }
    for i in 0..1000 {
        let (a, b, c) = (
            random_sample(&mut rng, 8),
            random_sample(&mut rng, 8),
            random_sample(&mut rng, 8),
        );
        let d = |x: &[f64], y: &[f64]| emd(x, y).unwrap();
        ensure!((d(&a, &b) - d(&b, &a)).abs() <= 1e-12, "triple {i}: asymmetric");
        ensure!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12, "triple {i}: triangle inequality fails");
        ensure!(d(&a, &a) == 0.0, "triple {i}: self-distance nonzero");
    }
    Ok(format!("200 pairs, max |emd - oracle| = {worst:.2e}; 1000 triples"))
}

#[test]
fn criterion_2_emd_oracle() {
    report(2, "EMD oracle equivalence", emd_oracle());
}

// ---------------------------------------------------------------- 3

fn kendall_pairs(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = (x[i] - x[j]).signum() * if x[i] == x[j] { 0.0 } else { 1.0 };
            let dy = (y[i] - y[j]).signum() * if y[i] == y[j] { 0.0 } else { 1.0 };
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            if dx * dy > 0.0 {
                c += 1;
            } else if dx * dy < 0.0 {
                d += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    if n0 == tx || n0 == ty {
        return None;
    }
    Some((c - d) as f64 / (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt())
}

fn counting_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

fn correlation_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let (mut checked, mut degenerate) = (0, 0);
    let (mut worst_k, mut worst_s): (f64, f64) = (0.0, 0.0);
    for i in 0..1000 {
        let n = rng.random_range(2..=60);
        let levels = rng.random_range(2..=12);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = if i % 3 == 0 {
            (0..n).map(|_| rng.random_range(1.0..5.0)).collect()
        } else {
            (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect()
        };
        match (kendall_pairs(&x, &y), kendall_tau(&x, &y)) {
            (Some(want), Ok(got)) => {
                worst_k = worst_k.max((got - want).abs());
                ensure!((got - want).abs() <= 1e-12, "vector {i}: kendall {got} vs {want}");
                checked += 1;
            }
            (None, Err(_)) => degenerate += 1,
            (want, got) => return Err(format!("vector {i}: oracle {want:?}, kendall_tau {got:?}")),
        }
        let (rx, ry) = (counting_ranks(&x), counting_ranks(&y));
        if let Ok(s) = spearman(&x, &y) {
            let on_ranks = pearson(&rx, &ry).map_err(|e| e.to_string())?;
            let independent = two_pass_pearson(&rx, &ry);
            worst_s = worst_s.max((s - on_ranks).abs()).max((s - independent).abs());
            ensure!((s - on_ranks).abs() <= 1e-12, "vector {i}: spearman {s} vs pearson on ranks {on_ranks}");
            ensure!((s - independent).abs() <= 1e-12, "vector {i}: spearman {s} vs two-pass {independent}");
        }
    }
    let (t, p) = ([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]);
    let lcc = pearson(&t, &p).map_err(|e| e.to_string())?;
    let srcc = spearman(&t, &p).map_err(|e| e.to_string())?;
    let ktau = kendall_tau(&t, &p).map_err(|e| e.to_string())?;
    ensure!(lcc == 0.5, "LCC {lcc}");
    ensure!(srcc == 0.5, "SRCC {srcc}");
    ensure!(ktau == 1.0 / 3.0, "KTAU {ktau}");
    Ok(format!(
        "{checked} kendall checks (max err {worst_k:.1e}), {degenerate} degenerate agreed, spearman max err {worst_s:.1e}, worked example exact"
    ))
}

#[test]
fn criterion_3_correlation_oracles() {
    report(3, "correlation oracles", correlation_oracles());
}

// ---------------------------------------------------------------- 4

fn t_test_checks() -> Check {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    let r = welch_t_test(&a, &b, 0.05).map_err(|e| e.to_string())?;
    ensure!(r.t_statistic == -1.0, "t = {}", r.t_statistic);
    ensure!(r.degrees_of_freedom == 8.0, "df = {}", r.degrees_of_freedom);
    let oracle = 2.0 * StudentsT::new(0.0, 1.0, 8.0).unwrap().cdf(-1.0);
    ensure!((r.p_value - oracle).abs() <= 1e-4, "p = {} vs oracle {oracle}", r.p_value);
    ensure!((r.p_value - 0.34659).abs() <= 1e-4, "p = {}", r.p_value);
    ensure!(!r.significant, "flagged significant");

    let same = welch_t_test(&a, &a, 0.05).map_err(|e| e.to_string())?;
    ensure!(same.p_value == 1.0, "identical samples give p = {}", same.p_value);

    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let x: Vec<f64> = (0..rng.random_range(2..25)).map(|_| rng.random_range(0.0..10.0)).collect();
        let y: Vec<f64> = (0..rng.random_range(2..25)).map(|_| rng.random_range(0.0..10.0)).collect();
        let base = welch_t_test(&x, &y, 0.05).map_err(|e| e.to_string())?;
        let shift = rng.random_range(-50.0..50.0);
        let scale = rng.random_range(0.1..10.0);
        for (label, f) in [("translation", (1.0, shift)), ("scaling", (scale, 0.0))] {
            let tx: Vec<f64> = x.iter().map(|v| v * f.0 + f.1).collect();
            let ty: Vec<f64> = y.iter().map(|v| v * f.0 + f.1).collect();
            let moved = welch_t_test(&tx, &ty, 0.05).map_err(|e| e.to_string())?;
            let dt = (moved.t_statistic - base.t_statistic).abs() / base.t_statistic.abs().max(1.0);
            let dp = (moved.p_value - base.p_value).abs();
            let ddf = (moved.degrees_of_freedom - base.degrees_of_freedom).abs() / base.degrees_of_freedom;
            worst = worst.max(dt).max(dp).max(ddf);
            ensure!(dt <= 1e-9 && dp <= 1e-9 && ddf <= 1e-9, "pair {i}: {label} changed the test ({base:?} vs {moved:?})");
        }
    }
    Ok(format!("p = {:.7} (oracle {oracle:.7}), 500 invariance pairs, max drift {worst:.1e}", r.p_value))
}

#[test]
fn criterion_4_t_test() {
    report(4, "t-test correctness", t_test_checks());
}

// ---------------------------------------------------------------- 5

fn tone(freq: f64, rate: u32, n: usize, amp: f64) -> AudioClip {
    let samples = (0..n)
        .map(|i| (amp * (std::f64::consts::TAU * freq * i as f64 / rate as f64).sin()) as f32)
        .collect();
    AudioClip::new(samples, rate).unwrap()
}

/// Amplitude of the `freq` component over `samples` (single-bin DFT).
fn tone_amplitude(samples: &[f32], freq: f64, rate: u32) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &s) in samples.iter().enumerate() {
        let w = std::f64::consts::TAU * freq * i as f64 / rate as f64;
        re += s as f64 * w.cos();
        im -= s as f64 * w.sin();
    }
    2.0 * (re * re + im * im).sqrt() / samples.len() as f64
}

fn augmentation_contract() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let src = dir.path().join("src");
    let out = dir.path().join("aug");
    ok(
        cli(&[
            &"synth", &"--out-dir", &src, &"--systems", &"2", &"--utterances-per-system", &"5",
            &"--speakers", &"2", &"--texts", &"4", &"--audio", &"--audio-seconds", &"0.6", &"--seed", &"5",
        ]),
        "synth",
    )?;
    let original = load_manifest(&src.join("manifest.json")).map_err(|e| e.to_string())?;
    ensure!(original.utterances.len() == 10, "{} source files", original.utterances.len());
    ok(cli(&[&"augment", &"--manifest", &src.join("manifest.json"), &"--out-dir", &out, &"--kinds", &"all", &"--seed", &"9"]), "augment")?;
    let augmented = load_manifest(&out.join("manifest.json")).map_err(|e| e.to_string())?;
    ensure!(augmented.utterances.len() == 50, "{} manifest entries", augmented.utterances.len());
    for u in &augmented.utterances {
        let path = augmented.audio_file(u).ok_or("entry without audio")?;
        read_wav(&path).map_err(|e| format!("{}: {e}", u.utterance_id))?;
    }

    let clip = tone(440.0, 16_000, 16_000, 0.5);
    let fast = speed_perturb(&clip, 1.05).map_err(|e| e.to_string())?;
    ensure!(fast.len() == 15_238, "speed 1.05 gives {} samples", fast.len());

    let hi = tone(1000.0, 48_000, 48_000, 0.5);
    let lo = resample(&hi, 16_000).map_err(|e| e.to_string())?;
    ensure!(lo.len() * 3 == hi.len(), "resampled to {} samples", lo.len());
    // steady-state window of whole periods, away from the edges
    let amp = tone_amplitude(&lo.samples[4000..12_000], 1000.0, 16_000);
    let db = 20.0 * (amp / 0.5).log10();
    ensure!(db.abs() <= 0.5, "1 kHz tone deviates by {db:.3} dB");
    Ok(format!("50 entries, 15238 samples, 1/3 length, tone deviation {db:.4} dB"))
}

#[test]
fn criterion_5_augmentation() {
    report(5, "augmentation contract", augmentation_contract());
}

// ---------------------------------------------------------------- 6

/// Per-utterance squared errors `0.2 + 0.1 z` for seen systems and the same
/// plus `shift` for held-out systems, 30 utterances per side.
fn shift_fixture(dir: &Path, shift: f64) -> Result<(PathBuf, PathBuf, PathBuf), String> {
    let mut utterances = Vec::new();
    let mut ratings = Vec::new();
    let mut subset_of = BTreeMap::new();
    let mut pred = BTreeMap::new();
    let mut add = |id: String, system: String, subset: Subset, err: Option<f64>| {
        utterances.push(Utterance {
            utterance_id: id.clone(),
            system_id: system,
            speaker_id: "spk".into(),
            text_id: format!("txt_{id}"),
            audio_path: None,
        });
        ratings.push(Rating {
            utterance_id: id.clone(),
            listener_id: format!("lis_{id}"),
            score: 3.0,
        });
        subset_of.insert(id.clone(), subset);
        if let Some(e) = err {
            pred.insert(id, 3.0 + f64::sqrt(e));
        }
    };
    for k in 0..30 {
        let z = ((k * 7) % 30) as f64 / 29.0 * 2.0 - 1.0;
        let seen = 0.2 + 0.1 * z;
        add(format!("seen{k:02}"), format!("S{}", k % 3), Subset::Test, Some(seen));
        add(format!("unseen{k:02}"), format!("U{}", k % 3), Subset::Test, Some(seen + shift));
        add(format!("train{k:02}"), format!("S{}", k % 3), Subset::Train, None);
    }
    for k in 0..6 {
        add(format!("dev{k}"), format!("S{}", k % 3), Subset::Dev, None);
    }
    let corpus = Corpus {
        name: "shift".into(),
        scale: ScaleSpec::MOS,
        utterances,
        ratings,
        sample_rate: None,
        wav_dir: None,
    };
    let assignment = SplitAssignment {
        subset_of,
        dev_unseen: DesignatedUnseen::default(),
        test_unseen: DesignatedUnseen {
            system: vec!["U0".into(), "U1".into(), "U2".into()],
            ..Default::default()
        },
        dropped_ratings: Default::default(),
    };
    let manifest = export_corpus(&corpus, &dir.join("corpus")).map_err(|e| e.to_string())?;
    let split = dir.join("split.csv");
    write_split(&split, &assignment, &SplitProvenance::default()).map_err(|e| e.to_string())?;
    let preds = dir.join("preds.csv");
    PredictionSet(pred).write_csv(&preds).map_err(|e| e.to_string())?;
    Ok((manifest, split, preds))
}

fn analyze_fixture(shift: f64) -> Result<UnseenAnalysis, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (manifest, split, preds) = shift_fixture(dir.path(), shift)?;
    let out = dir.path().join("unseen.json");
    ok(
        cli(&[
            &"analyze-unseen", &"--manifest", &manifest, &"--split", &split, &"--subset", &"test",
            &"--predictions", &preds, &"--categories", &"system", &"--alpha", &"0.05", &"--out", &out,
        ]),
        "analyze-unseen",
    )?;
    serde_json::from_str(&fs::read_to_string(&out).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name);
    let manifest = p("corpus/manifest.json");
    ok(cli(&[&"synth", &"--out-dir", &p("corpus"), &"--speakers", &"10", &"--seed", &"11"]), "synth")?;
    ok(
        cli(&[
            &"split", &"--manifest", &manifest, &"--unseen", &"test:spk=1,sys=1,lis=2,txt=1",
            &"--unseen", &"dev:sys=1", &"--candidates", &"200", &"--seed", &"3", &"--out", &p("split.csv"),
        ]),
        "split",
    )?;
    ok(
        cli(&[&"baseline", &"--manifest", &manifest, &"--split", &p("split.csv"), &"--kind", &"global_mean", &"--out", &p("preds.csv")]),
        "baseline",
    )?;
    ok(
        cli(&[
            &"evaluate", &"--manifest", &manifest, &"--split", &p("split.csv"), &"--subset", &"test",
            &"--predictions", &p("preds.csv"), &"--level", &"both", &"--out", &p("report.json"),
        ]),
        "evaluate",
    )?;
    let baseline_reports: Vec<EvaluationReport> =
        serde_json::from_str(&fs::read_to_string(p("report.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(
        baseline_reports.iter().all(|r| r.lcc.value().is_none()),
        "constant predictor should give degenerate correlations"
    );
    ok(
        cli(&[
            &"analyze-unseen", &"--manifest", &manifest, &"--split", &p("split.csv"), &"--predictions", &p("preds.csv"),
            &"--out", &p("unseen.json"),
        ]),
        "analyze-unseen",
    )?;

    // perfect predictions: the retained per-utterance means themselves
    let corpus = load_manifest(&manifest).map_err(|e| e.to_string())?;
    let (assignment, _) = read_split(&p("split.csv"), &corpus).map_err(|e| e.to_string())?;
    let test = assignment.members(Subset::Test);
    let perfect: PredictionSet = utterance_stats(&assignment.retained(&corpus))
        .into_iter()
        .filter(|s| test.contains(s.utterance_id.as_str()))
        .map(|s| (s.utterance_id, s.mean_score))
        .collect();
    perfect.write_csv(&p("perfect.csv")).map_err(|e| e.to_string())?;
    ok(
        cli(&[
            &"evaluate", &"--manifest", &manifest, &"--split", &p("split.csv"), &"--predictions", &p("perfect.csv"),
            &"--level", &"both", &"--out", &p("perfect.json"),
        ]),
        "evaluate perfect",
    )?;
    let reports: Vec<EvaluationReport> =
        serde_json::from_str(&fs::read_to_string(p("perfect.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(reports.len() == 2, "expected two levels");
    for r in &reports {
        ensure!(r.mse == 0.0, "{:?} MSE {}", r.level, r.mse);
        for (name, c) in [("lcc", r.lcc), ("srcc", r.srcc), ("ktau", r.ktau)] {
            let v = c.value().ok_or(format!("{:?} {name} degenerate", r.level))?;
            ensure!((v - 1.0).abs() <= 1e-12, "{:?} {name} = {v}", r.level);
        }
    }

    let planted = analyze_fixture(1.0)?;
    let sys = &planted.categories[0];
    ensure!(sys.t_test.significant && sys.unseen_harder, "planted shift not flagged (p = {})", sys.t_test.p_value);
    let equal = analyze_fixture(0.0)?;
    let eq = &equal.categories[0];
    ensure!(!eq.t_test.significant && !eq.unseen_harder, "equal errors flagged (p = {})", eq.t_test.p_value);
    Ok(format!(
        "pipeline exit 0, perfect predictions exact at {} test utterances / {} systems, planted p = {:.1e}, equal p = {}",
        reports[0].n, reports[1].n, sys.t_test.p_value, eq.t_test.p_value
    ))
}

#[test]
fn criterion_6_end_to_end() {
    report(6, "end-to-end pipeline", end_to_end());
}

// ---------------------------------------------------------------- 7

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Every command of the pipeline, writing all outputs under `root`.
fn pipeline(root: &Path, threads: &str) -> Result<(), String> {
    let p = |name: &str| root.join(name);
    let t: &[&dyn AsRef<std::ffi::OsStr>] = &[&"--threads", &threads];
    let with = |args: &[&dyn AsRef<std::ffi::OsStr>]| -> i32 {
        let mut all: Vec<&dyn AsRef<std::ffi::OsStr>> = args.to_vec();
        all.extend_from_slice(t);
        cli(&all)
    };
    let manifest = p("corpus/manifest.json");
    ok(with(&[&"synth", &"--out-dir", &p("corpus"), &"--speakers", &"10", &"--audio", &"--audio-seconds", &"0.3", &"--seed", &"21"]), "synth")?;
    ok(
        with(&[
            &"split", &"--manifest", &manifest, &"--unseen", &"test:spk=1,sys=1,lis=2,txt=1", &"--unseen", &"dev:sys=1",
            &"--candidates", &"300", &"--seed", &"8", &"--out", &p("split/split.csv"), &"--log", &p("split/log.json"),
        ]),
        "split",
    )?;
    ok(with(&[&"augment", &"--manifest", &manifest, &"--out-dir", &p("aug"), &"--seed", &"4"]), "augment")?;
    ok(
        with(&[
            &"baseline", &"--manifest", &manifest, &"--split", &p("split/split.csv"), &"--kind", &"linear_features",
            &"--out", &p("preds.csv"), &"--model-out", &p("model.json"),
        ]),
        "baseline",
    )?;
    ok(with(&[&"stats", &"--manifest", &manifest, &"--split", &p("split/split.csv"), &"--out", &p("stats.json")]), "stats")?;
    let input: [&dyn AsRef<std::ffi::OsStr>; 6] =
        [&"--manifest", &manifest, &"--split", &p("split/split.csv"), &"--predictions", &p("preds.csv")];
    let mut args: Vec<&dyn AsRef<std::ffi::OsStr>> = vec![&"evaluate"];
    args.extend_from_slice(&input);
    let eval_out = p("eval.json");
    args.extend_from_slice(&[&"--out", &eval_out]);
    ok(with(&args), "evaluate")?;
    let mut args: Vec<&dyn AsRef<std::ffi::OsStr>> = vec![&"analyze-unseen"];
    args.extend_from_slice(&input);
    let unseen_out = p("unseen.json");
    args.extend_from_slice(&[&"--out", &unseen_out]);
    ok(with(&args), "analyze-unseen")?;
    let mut args: Vec<&dyn AsRef<std::ffi::OsStr>> = vec![&"plot"];
    args.extend_from_slice(&input);
    let plot_out = p("plot/scatter.svg");
    args.extend_from_slice(&[&"--out", &plot_out]);
    ok(with(&args), "plot")
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut snapshots = Vec::new();
    for (run, threads) in [(0, "1"), (1, "4"), (2, "4"), (3, "2")] {
        let root = dir.path().join(format!("run{run}"));
        pipeline(&root, threads)?;
        snapshots.push((threads, snapshot(&root)));
    }
    let (_, first) = &snapshots[0];
    ensure!(first.len() > 500, "only {} output files", first.len());
    for (threads, snap) in &snapshots[1..] {
        ensure!(snap.keys().eq(first.keys()), "file sets differ with {threads} threads");
        for (name, bytes) in snap {
            ensure!(first[name] == *bytes, "{name} differs with {threads} threads");
        }
    }
    Ok(format!("{} files byte-identical across 4 runs with 1, 2 and 4 threads", first.len()))
}

#[test]
fn criterion_7_determinism() {
    report(7, "determinism", determinism());
}
