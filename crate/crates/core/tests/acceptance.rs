//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Tolerances and budgets are pinned in the constants below.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regbank::descriptor::{extract_bor, DEFAULT_PAD_FACTOR};
use regbank::harness::pipeline::{sweep_segment_size, PipelineOutcome};
use regbank::harness::{run_systems, synth_dataset, AudioDataset, Dataset, PipelineConfig, SynthSpec, System};
use regbank::matcher::{train_matcher_on_events, MatcherConfig, MatcherModel};
use regbank::regforest::{sample_test_pool, select_best_test, train_forest, ForestConfig, RegressorForest, TrainingSegment};
use regbank::svm::{
    channel_scales, kernel_eval, kernel_matrix, ovo_train, smo_train_binary, Channel, KernelSpec, Sample, SmoParams,
};
use regbank::SegmentFeatures;

const ORACLE_INSTANCES: usize = 120;
const ORACLE_TOL: f64 = 1e-9;
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const SPLIT_NODES: usize = 150;
const AVERAGING_TOL: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-9;
const KERNEL_TOL: f64 = 1e-12;
const SMO_ANALYTIC_TOL: f64 = 1e-6;
const KKT_TOL: f64 = 1e-3;
const SYNTH_MIN_ACCURACY: f64 = 0.90;
const SYNTH_MIN_MARGIN_OVER_BOW: f64 = 0.10;
const SYNTH_BUDGET: Duration = Duration::from_secs(300);
const FUSION_SLACK: f64 = 0.01;
const SWEEP_MAX_SPREAD: f64 = 0.10;
const SWEEP_SIZES: [f64; 8] = [30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0];

type Verdict = (bool, String);

fn seq(rows: &[Vec<f64>]) -> Vec<SegmentFeatures> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| SegmentFeatures {
            values: r.clone(),
            segment_index: i,
        })
        .collect()
}

fn random_event<R: Rng>(rng: &mut R, n: usize, dim: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..dim).map(|d| shift * (d as f64 + 1.0) + 0.1 * i as f64 + rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// A small trained bank and matcher on random data.
fn random_models<R: Rng>(rng: &mut R, seed: u64) -> (Vec<RegressorForest>, MatcherModel, usize) {
    let classes = rng.random_range(2..=4usize);
    let trees = rng.random_range(1..=3usize);
    let dim = 3;
    let cfg = ForestConfig {
        n_trees: trees,
        max_depth: 4,
        min_samples: 3,
        tests_per_node: 40,
        subsample: 0.7,
        var_floor: 1.0,
    };
    let mut all: Vec<Vec<SegmentFeatures>> = Vec::new();
    let mut labels = Vec::new();
    let mut bank = Vec::new();
    for c in 0..classes {
        let events: Vec<Vec<SegmentFeatures>> = (0..3)
            .map(|_| {
                let n = rng.random_range(4..=14);
                seq(&random_event(rng, n, dim, c as f64))
            })
            .collect();
        bank.push(train_forest(&events, c, &cfg, seed ^ c as u64).unwrap());
        labels.extend(std::iter::repeat_n(c, events.len()));
        all.extend(events);
    }
    let refs: Vec<&[SegmentFeatures]> = all.iter().map(Vec::as_slice).collect();
    let mcfg = MatcherConfig {
        n_trees: 4,
        ..Default::default()
    };
    let matcher = train_matcher_on_events(&refs, &labels, classes, &mcfg, seed).unwrap();
    (bank, matcher, dim)
}

fn criterion_descriptor_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for inst in 0..ORACLE_INSTANCES {
        let (bank, matcher, dim) = random_models(&mut rng, inst as u64);
        let n = rng.random_range(1..=20);
        let shift = rng.random_range(0.0..3.0);
        let event = random_event(&mut rng, n, dim, shift);
        let got = extract_bor(&bank, &matcher, &seq(&event), DEFAULT_PAD_FACTOR).unwrap();
        let want = common::oracle_phi(&bank, &matcher, &event);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs() / w.abs().max(1.0));
        }
    }
    let took = start.elapsed();
    (
        worst <= ORACLE_TOL && took < ORACLE_BUDGET,
        format!("{ORACLE_INSTANCES} instances, max deviation {worst:.2e} (tol {ORACLE_TOL:e}), {:.1}s", took.as_secs_f64()),
    )
}

fn criterion_split_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst, mut checked, mut disagreements) = (0.0f64, 0, 0);
    for _ in 0..SPLIT_NODES {
        let n = rng.random_range(2..=50);
        let dim = rng.random_range(1..=4);
        let data: Vec<TrainingSegment> = (0..n)
            .map(|_| {
                // Coarse values force ties between tests and between samples.
                let x = (0..dim).map(|_| rng.random_range(0..6) as f64).collect();
                TrainingSegment {
                    x,
                    d_plus: rng.random_range(0..30) as f64,
                    d_minus: rng.random_range(0..30) as f64,
                    class_label: 0,
                }
            })
            .collect();
        let refs: Vec<&TrainingSegment> = data.iter().collect();
        let rows: Vec<&[f64]> = data.iter().map(|s| s.x.as_slice()).collect();
        let size = rng.random_range(1..=200);
        let pool = sample_test_pool(&mut rng, dim, &rows, size);
        let got = select_best_test(&pool, &refs).ok();
        let want = common::oracle_best_split(&pool, &refs);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some((wi, wc))) => {
                checked += 1;
                let chosen = common::oracle_split_cost(&refs, &pool[g.pool_index]).unwrap_or(f64::INFINITY);
                let dev = (chosen - wc).abs() / wc.abs().max(1.0);
                worst = worst.max(dev);
                if g.pool_index != wi && dev > ORACLE_TOL {
                    disagreements += 1;
                }
            }
            _ => disagreements += 1,
        }
    }
    let took = start.elapsed();
    (
        disagreements == 0 && worst <= ORACLE_TOL && checked >= 100 && took < ORACLE_BUDGET,
        format!(
            "{SPLIT_NODES} nodes ({checked} splittable), {disagreements} disagreements, max cost deviation {worst:.2e}, {:.1}s",
            took.as_secs_f64()
        ),
    )
}

fn criterion_forest_averaging() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst, mut points) = (0.0f64, 0usize);
    for inst in 0..40 {
        let (bank, _, dim) = random_models(&mut rng, 1000 + inst);
        for forest in &bank {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..5.0)).collect();
            let n_prime = rng.random_range(0..60) as f64;
            let est = forest.estimate(&x, n_prime);
            for g in 0..100 {
                let n = g as f64;
                let (mut on, mut off) = (0.0, 0.0);
                for tree in &forest.trees {
                    let (a, b) = common::tree_densities(tree, &x, n_prime, n);
                    on += a;
                    off += b;
                }
                let t = forest.trees.len() as f64;
                worst = worst.max((est.onset(n) - on / t).abs()).max((est.offset(n) - off / t).abs());
                points += 1;
            }
        }
    }
    (worst <= AVERAGING_TOL, format!("{points} grid points, max deviation {worst:.2e} (tol {AVERAGING_TOL:e})"))
}

fn simplex_error(v: &[f64]) -> f64 {
    let neg = v.iter().fold(0.0f64, |m, &x| m.max(-x));
    neg.max((v.iter().sum::<f64>() - 1.0).abs())
}

fn criterion_normalization(out: &PipelineOutcome, data: &Dataset) -> Verdict {
    let d = &out.descriptors;
    let mut worst = 0.0f64;
    let mut negatives = 0;
    for (raw, phi) in d.raw.iter().zip(&d.phi) {
        negatives += raw.iter().chain(phi).filter(|&&v| v < 0.0).count();
        if phi.iter().any(|&v| v > 0.0) {
            worst = worst.max(simplex_error(phi));
        }
    }
    for h in &d.phi_hat {
        worst = worst.max(simplex_error(h));
    }
    let matcher = out.bundle.matcher.as_ref().expect("bank system keeps its matcher");
    let mut segments = 0;
    for e in &data.test {
        for s in &e.features {
            worst = worst.max(simplex_error(&matcher.posterior(&s.values)));
            segments += 1;
        }
    }
    (
        negatives == 0 && worst <= SIMPLEX_TOL,
        format!(
            "{} events, {segments} segment posteriors, {negatives} negative entries, max simplex error {worst:.2e}",
            d.len()
        ),
    )
}

fn criterion_kernel_svm() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let hist = |rng: &mut ChaCha8Rng, k: usize| {
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let samples: Vec<Sample> = (0..30).map(|_| Sample::with_aux(hist(&mut rng, 5), hist(&mut rng, 5))).collect();
    let scales = channel_scales(&samples, &[Channel::Main, Channel::Aux]).unwrap();
    let eg = KernelSpec::ExtendedGaussian { scales, gamma: 1.0 };
    let mut kernel_dev = 0.0f64;
    for a in &samples {
        kernel_dev = kernel_dev.max((kernel_eval(&eg, a, a).unwrap() - 1.0).abs());
        for b in &samples {
            kernel_dev = kernel_dev.max((kernel_eval(&eg, a, b).unwrap() - kernel_eval(&eg, b, a).unwrap()).abs());
        }
    }

    let two = [Sample::new(vec![-1.0]), Sample::new(vec![1.0])];
    let k2 = kernel_matrix(&KernelSpec::Linear, &two).unwrap();
    let sol = smo_train_binary(&k2, &[-1.0, 1.0], &SmoParams { c_reg: 1e6, ..Default::default() }).unwrap();
    let analytic = (sol.alpha[0] - 0.5).abs().max((sol.alpha[1] - 0.5).abs()).max(sol.bias.abs());

    let mut kkt = 0.0f64;
    for _ in 0..25 {
        let n = rng.random_range(6..40);
        let mut pts = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            pts.push(Sample::new(vec![label * 1.2 + rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)]));
            y.push(label);
        }
        let c_reg = [0.1, 1.0, 10.0][rng.random_range(0..3)];
        let k = kernel_matrix(&KernelSpec::Linear, &pts).unwrap();
        let s = smo_train_binary(&k, &y, &SmoParams { c_reg, ..Default::default() }).unwrap();
        kkt = kkt.max(s.kkt_violation(&k, &y, c_reg));
    }

    let xor: Vec<Sample> = [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]].iter().map(|p| Sample::new(p.to_vec())).collect();
    let labels = [0, 0, 1, 1];
    let model = ovo_train(&xor, &labels, &KernelSpec::Rbf { gamma: 1.0 }, &SmoParams { c_reg: 10.0, ..Default::default() }).unwrap();
    let correct = xor.iter().zip(&labels).filter(|(s, &l)| model.predict(s).unwrap() == l).count();
    let xor_acc = correct as f64 / 4.0;

    (
        kernel_dev <= KERNEL_TOL && analytic <= SMO_ANALYTIC_TOL && kkt <= KKT_TOL && xor_acc == 1.0,
        format!("kernel dev {kernel_dev:.1e}, 2-point dev {analytic:.1e}, max KKT violation {kkt:.1e}, XOR accuracy {xor_acc}"),
    )
}

/// Reduced matcher size keeps the synthetic runs inside the time budget on few cores.
fn synth_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.apply_overrides(&["seed=7", "matcher.trees=20"]).unwrap();
    cfg
}

fn accuracy_of(outs: &[PipelineOutcome], s: System) -> f64 {
    outs.iter().find(|o| o.bundle.config.system == s).unwrap().report.accuracy
}

fn criterion_dir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn cli_pipeline(out: &Path) -> std::io::Result<std::process::Output> {
    Command::new(env!("CARGO_BIN_EXE_regbank"))
        .args(["pipeline", "--synth", "--classes", "3", "--events-per-class", "12", "--units", "3", "--out"])
        .arg(out)
        .args([
            "--set",
            "system=bor_plus",
            "--set",
            "forest.trees=4",
            "--set",
            "forest.tests_per_node=500",
            "--set",
            "matcher.trees=10",
            "--set",
            "matcher.folds=4",
            "--set",
            "svm.cv=kfold:3",
            "--set",
            "workers=2",
        ])
        .env_remove("REGBANK_SEED")
        .output()
}

fn criterion_determinism() -> Verdict {
    let dir = criterion_dir();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        match cli_pipeline(d) {
            Ok(o) if o.status.success() => {}
            Ok(o) => return (false, format!("pipeline failed: {}", String::from_utf8_lossy(&o.stderr))),
            Err(e) => return (false, format!("cannot run binary: {e}")),
        }
    }
    let same = |f: &str| std::fs::read(a.join(f)).ok().zip(std::fs::read(b.join(f)).ok()).is_some_and(|(x, y)| x == y);
    let (report, bundle, preds) = (same("report.txt"), same("bundle.rgb"), same("predictions.csv"));
    (
        report && bundle && preds,
        format!("report identical: {report}, bundle identical: {bundle}, predictions identical: {preds}"),
    )
}

fn criterion_sweep() -> Verdict {
    let start = Instant::now();
    let spec = SynthSpec {
        events_per_class: 40,
        ..Default::default()
    };
    let audio = AudioDataset::from_synth(&synth_dataset(&spec, 11).unwrap());
    let mut cfg = synth_config();
    cfg.apply_overrides(&["system=bor_linear", "forest.tests_per_node=2000", "matcher.folds=5"]).unwrap();
    let rows = sweep_segment_size(&cfg, &audio, &SWEEP_SIZES);
    let accs: Vec<f64> = rows.iter().filter_map(|r| r.accuracy).collect();
    let failed = rows.len() - accs.len();
    let lo = accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("{}ms={}", r.win_ms, r.accuracy.map_or("failed".into(), |a| format!("{a:.3}"))))
        .collect();
    (
        failed == 0 && hi - lo <= SWEEP_MAX_SPREAD,
        format!("{} ; spread {:.3} (max {SWEEP_MAX_SPREAD}), {:.0}s", table.join(" "), hi - lo, start.elapsed().as_secs_f64()),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        (false, format!("panicked: {msg}"))
    })
}

fn report(results: &mut Vec<bool>, id: u32, name: &str, v: Verdict) {
    println!("[{}] {id:>2} {name}: {}", if v.0 { "PASS" } else { "FAIL" }, v.1);
    results.push(v.0);
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: u32| filter.is_empty() || filter.iter().any(|f| f == &id.to_string());
    let mut results = Vec::new();

    if wanted(1) {
        report(&mut results, 1, "descriptor oracle", guarded(criterion_descriptor_oracle));
    }
    if wanted(2) {
        report(&mut results, 2, "split oracle", guarded(criterion_split_oracle));
    }
    if wanted(3) {
        report(&mut results, 3, "forest averaging", guarded(criterion_forest_averaging));
    }
    if wanted(5) {
        report(&mut results, 5, "kernel and SMO", guarded(criterion_kernel_svm));
    }

    if [4, 6, 7, 8].into_iter().any(wanted) {
        let start = Instant::now();
        let run = catch_unwind(|| {
            let ds = synth_dataset(&SynthSpec::default(), 7).unwrap();
            let cfg = synth_config();
            let data = Dataset::from_audio(&AudioDataset::from_synth(&ds), &cfg.features).unwrap();
            let systems = [System::BorLinear, System::BorChi2, System::BorPlus, System::PhiHat, System::MaxVoting, System::Bow];
            let outs = run_systems(&cfg, &data, &systems).unwrap();
            (data, outs)
        });
        let took = start.elapsed();
        match run {
            Ok((data, outs)) => {
                let acc = |s| accuracy_of(&outs, s);
                let bor_out = outs.iter().find(|o| o.bundle.config.system == System::BorLinear).unwrap();
                if wanted(4) {
                    report(&mut results, 4, "normalization invariants", guarded(|| criterion_normalization(bor_out, &data)));
                }
                let (lin, bow) = (acc(System::BorLinear), acc(System::Bow));
                if wanted(6) {
                    report(
                        &mut results,
                        6,
                        "synthetic structure vs histogram",
                        (
                            lin >= SYNTH_MIN_ACCURACY && lin - bow >= SYNTH_MIN_MARGIN_OVER_BOW && took < SYNTH_BUDGET,
                            format!(
                                "BoR-linear {lin:.3} (min {SYNTH_MIN_ACCURACY}), BoW {bow:.3}, margin {:.3} (min {SYNTH_MIN_MARGIN_OVER_BOW}), {:.0}s for {} test events",
                                lin - bow,
                                took.as_secs_f64(),
                                data.test.len()
                            ),
                        ),
                    );
                }
                let (chi2, plus, hat, mv) = (acc(System::BorChi2), acc(System::BorPlus), acc(System::PhiHat), acc(System::MaxVoting));
                if wanted(7) {
                    let best_svm = lin.max(chi2);
                    report(
                        &mut results,
                        7,
                        "max-voting dominance",
                        (best_svm >= mv, format!("BoR-SVM (linear {lin:.3}, chi2 {chi2:.3}) vs max voting {mv:.3}")),
                    );
                }
                if wanted(8) {
                    let floor = chi2.max(hat) - FUSION_SLACK;
                    report(
                        &mut results,
                        8,
                        "fusion sanity",
                        (plus >= floor, format!("BoR+ {plus:.3} vs BoR-chi2 {chi2:.3}, phi-hat {hat:.3} (floor {floor:.3})")),
                    );
                }
            }
            Err(_) => {
                for (id, name) in [(4, "normalization invariants"), (6, "synthetic structure vs histogram"), (7, "max-voting dominance"), (8, "fusion sanity")] {
                    if wanted(id) {
                        report(&mut results, id, name, (false, "synthetic pipeline panicked".into()));
                    }
                }
            }
        }
    }

    if wanted(9) {
        report(&mut results, 9, "determinism", guarded(criterion_determinism));
    }
    if wanted(10) {
        report(&mut results, 10, "segment-size sweep", guarded(criterion_sweep));
    }

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
