//! Acceptance report: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use modenorm::data::{idx_labels, idx_parse};
use modenorm::gating::SampleGatingParams;
use modenorm::gradcheck::{run_suite, SuiteOptions, Target};
use modenorm::norm::{Gating, NormConfig, NormKind, NormLayer, Phase};
use modenorm::{Rng, Tensor};
use modenorm_cli::checkpoint::Checkpoint;
use modenorm_cli::commands::{cmd_eval, Split};
use modenorm_cli::sweep::{median, run_sweep, SweepGrid};
use modenorm_cli::train::{cmd_train, CHECKPOINT_FILE, METRICS_FILE};
use modenorm_cli::RunConfig;

type Outcome = (bool, String);

fn layer(kind: NormKind, c: usize, modes: usize, groups: usize) -> NormLayer {
    NormLayer::new(NormConfig::new(kind, c).with_modes(modes).with_groups(groups)).unwrap()
}

fn equivalence_lattice() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    let mut worst = [0.0f64; 4];
    for _ in 0..100 {
        let (h, w) = (1 + rng.below(3), 1 + rng.below(3));
        let n = (1 + rng.below(8)).max(if h * w == 1 { 2 } else { 1 });
        let c = 1 + rng.below(4);
        let x = Tensor::randn(&[n, c, h, w], &mut rng).unwrap().map(|v| 2.0 * v - 0.5);
        let pairs = [
            (layer(NormKind::Mode, c, 1, 1), layer(NormKind::Batch, c, 1, 1)),
            (layer(NormKind::Mode, c, 1 + rng.below(4), 1), layer(NormKind::Batch, c, 1, 1)),
            (layer(NormKind::Group, c, 1, 1), layer(NormKind::Layer, c, 1, 1)),
            (layer(NormKind::Group, c, 1, c), layer(NormKind::Instance, c, 1, 1)),
        ];
        for (slot, (mut a, mut b)) in pairs.into_iter().enumerate() {
            let d = a.forward(&x).unwrap().max_abs_diff(&b.forward(&x).unwrap()).unwrap();
            worst[slot] = worst[slot].max(d);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst.iter().all(|&d| d < 1e-10) && secs < 5.0;
    (
        ok,
        format!(
            "max |diff| MN1~BN {:.1e}, MN0gate~BN {:.1e}, GN1~LN {:.1e}, GNC~IN {:.1e}; {secs:.2}s",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn weighted_moments() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(7);
    let (mut first, mut second) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (n, c, h, w, k) = (2 + rng.below(7), 1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(4));
        let x = Tensor::randn(&[n, c, h, w], &mut rng).unwrap().map(|v| 1.5 * v + 0.5);
        let mut l = layer(NormKind::Mode, c, k, 1);
        l.perturb_gating(1.0, &mut rng).unwrap();
        l.forward(&x).unwrap();
        let g = l.last_gates().unwrap().clone();
        let st = l.stats().unwrap();
        let eps = l.config().eps;
        let s = h * w;
        for j in 0..k {
            let nk = st.counts.data()[j];
            for ch in 0..c {
                let mu = st.batch_m1.data()[j * c + ch];
                let var = st.batch_m2.data()[j * c + ch] - mu * mu;
                let (mut m1, mut m2) = (0.0, 0.0);
                for i in 0..n {
                    for t in 0..s {
                        let z = (x.data()[(i * c + ch) * s + t] - mu) / (var + eps).sqrt();
                        m1 += g.get(i, j) * z;
                        m2 += g.get(i, j) * z * z;
                    }
                }
                let norm = nk * s as f64;
                first = first.max((m1 / norm).abs());
                second = second.max((m2 / norm - var / (var + eps)).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        first <= 1e-8 && second <= 1e-6 && secs < 5.0,
        format!("max |first moment| {first:.1e}, max second-moment deviation {second:.1e}; {secs:.2}s"),
    )
}

fn gradient_certification() -> Outcome {
    let start = Instant::now();
    let results = run_suite(&Target::ALL, 0, 20, &SuiteOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut parts = Vec::new();
    let mut ok = secs < 120.0;
    for t in Target::ALL {
        let mine: Vec<_> = results.iter().filter(|r| r.target == t).collect();
        let failed = mine.iter().filter(|r| !r.report.passed()).count();
        ok &= failed == 0 && mine.len() >= 20;
        parts.push(format!("{t} {}/{}", mine.len() - failed, mine.len()));
    }
    (ok, format!("{}; {secs:.1}s", parts.join(", ")))
}

fn mode_group_phase_identity() -> Outcome {
    let mut rng = Rng::new(11);
    let mut identical = 0;
    for _ in 0..100 {
        let (n, c, h, w) = (1 + rng.below(6), 1 + rng.below(5), 1 + rng.below(4), 1 + rng.below(4));
        let mut l = layer(NormKind::ModeGroup, c, 1 + rng.below(4), 1);
        l.perturb_gating(1.0, &mut rng).unwrap();
        l.affine.beta = Tensor::randn(&[c], &mut rng).unwrap();
        let x = Tensor::randn(&[n, c, h, w], &mut rng).unwrap();
        let train = l.forward(&x).unwrap();
        l.set_phase(Phase::Eval);
        let eval = l.forward(&x).unwrap();
        identical += usize::from(train.data() == eval.data());
    }
    (identical == 100, format!("{identical}/100 instances bit-identical across phases"))
}

fn hash_file(path: &Path) -> u64 {
    let mut h = DefaultHasher::new();
    std::fs::read(path).unwrap().hash(&mut h);
    h.finish()
}

fn full_memory_eval(dir: &Path) -> Outcome {
    let mut rng = Rng::new(5);
    let mut worst = 0.0f64;
    let mut mutated = false;
    for _ in 0..20 {
        let c = 1 + rng.below(4);
        let mut l = NormLayer::new(NormConfig::new(NormKind::Mode, c).with_modes(1 + rng.below(3)).with_lambda(1.0)).unwrap();
        l.perturb_gating(1.0, &mut rng).unwrap();
        let x = Tensor::randn(&[2 + rng.below(7), c, 1 + rng.below(3), 1 + rng.below(3)], &mut rng).unwrap();
        let train = l.forward(&x).unwrap();
        l.set_phase(Phase::Eval);
        let state = l.named_state();
        worst = worst.max(train.max_abs_diff(&l.forward(&x).unwrap()).unwrap());
        mutated |= state != l.named_state();
    }
    let cfg = RunConfig { epochs: 1, out: dir.join("c5"), ..RunConfig::default() };
    cmd_train(&cfg).unwrap();
    let ckpt = cfg.out.join(CHECKPOINT_FILE);
    let before = hash_file(&ckpt);
    cmd_eval(&ckpt, None, Split::Test).unwrap();
    cmd_eval(&ckpt, None, Split::Train).unwrap();
    let after = hash_file(&ckpt);
    (
        worst <= 1e-12 && !mutated && before == after,
        format!("max |eval - train| {worst:.1e}; running stats unchanged: {}; checkpoint hash {before:016x} -> {after:016x}", !mutated),
    )
}

fn heterogeneity_benchmark(dir: &Path) -> Outcome {
    let mut mn_err = Vec::new();
    let mut bn_err = Vec::new();
    let mut purity = Vec::new();
    let mut slowest = 0.0f64;
    for seed in 0..5 {
        for (norm, modes) in [(NormKind::Mode, 2), (NormKind::Batch, 1)] {
            let cfg = RunConfig {
                norm,
                modes,
                seed,
                out: dir.join(format!("c6_{norm}_{seed}")),
                ..RunConfig::default()
            };
            let start = Instant::now();
            let out = cmd_train(&cfg).unwrap();
            slowest = slowest.max(start.elapsed().as_secs_f64());
            if norm == NormKind::Mode {
                mn_err.push(out.final_test_error());
                purity.push(out.purity.unwrap());
            } else {
                bn_err.push(out.final_test_error());
            }
        }
    }
    let (mn, bn, p) = (median(&mn_err), median(&bn_err), median(&purity));
    (
        mn <= bn && p >= 0.9 && slowest < 120.0,
        format!(
            "median test error MN(K=2) {mn:.4} vs BN {bn:.4}; median purity {p:.3}; slowest run {slowest:.1}s; \
             per-seed MN {mn_err:?} BN {bn_err:?}"
        ),
    )
}

fn sweep(dir: &Path) -> Outcome {
    let start = Instant::now();
    let base = RunConfig { out: dir.join("c7"), ..RunConfig::default() };
    let grid = SweepGrid::default();
    let out = run_sweep(&base, &grid).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let trend = out.trend_report();
    print!("{trend}");
    let single = out.median_of(512, 1).unwrap();
    let best = out.best_multi_mode(512).unwrap();
    let complete = out.rows.len() == 60 && out.rows.iter().all(|r| r.test_error.is_finite());
    (
        complete && best.median <= single && secs < 1800.0,
        format!(
            "{} runs; N=512 best K>1 (K={}) median {:.4} vs K=1 {:.4}; {secs:.0}s",
            out.rows.len(),
            best.modes,
            best.median,
            single
        ),
    )
}

fn running_estimates() -> Outcome {
    let (n, c, hw) = (256, 2, 8);
    let mut l = layer(NormKind::Mode, c, 2, 1);
    l.gating = Gating::Sample(SampleGatingParams {
        weight: Tensor::new(&[2, c], vec![1e4, 0.0, -1e4, 0.0]).unwrap(),
        bias: Tensor::zeros(&[2]).unwrap(),
    });
    let means = [[3.0, -1.0], [-3.0, 2.0]];
    let mut rng = Rng::new(8);
    for _ in 0..1000 {
        let mut x = vec![0.0; n * c * hw * hw];
        for i in 0..n {
            for ch in 0..c {
                for v in &mut x[(i * c + ch) * hw * hw..(i * c + ch + 1) * hw * hw] {
                    *v = means[i % 2][ch] + rng.normal();
                }
            }
        }
        l.forward(&Tensor::new(&[n, c, hw, hw], x).unwrap()).unwrap();
    }
    let run = &l.stats().unwrap().run_m1;
    let mut worst = 0.0f64;
    for k in 0..2 {
        for ch in 0..c {
            worst = worst.max((run.data()[k * c + ch] - means[k][ch]).abs());
        }
    }
    (worst < 1e-2, format!("max |running mean - true mean| {worst:.2e} after 1000 batches"))
}

fn persistence(dir: &Path) -> Outcome {
    let cfg = RunConfig { epochs: 1, out: dir.join("c9"), ..RunConfig::default() };
    cmd_train(&cfg).unwrap();
    let bytes = std::fs::read(cfg.out.join(CHECKPOINT_FILE)).unwrap();
    let resaved = Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap();
    let round_trip = resaved == bytes;

    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 3];
    images.extend((0..18u8).map(|i| i * 15));
    let labels = [0u8, 0, 8, 1, 0, 0, 0, 2, 7, 3];
    let parsed = idx_parse(&images).unwrap();
    let expected: Vec<f64> = (0..18).map(|i| (i * 15) as f64 / 255.0).collect();
    let images_ok = parsed.shape() == [2, 1, 3, 3] && parsed.data() == expected.as_slice();
    let labels_ok = idx_labels(&labels).unwrap() == vec![7, 3];

    let idx_dir = dir.join("c9_idx");
    std::fs::create_dir_all(&idx_dir).unwrap();
    let mut bad = images.clone();
    bad[3] = 0x04;
    bad[0] = 0x12;
    for name in ["train-images-idx3-ubyte", "t10k-images-idx3-ubyte"] {
        std::fs::write(idx_dir.join(name), &bad).unwrap();
    }
    for name in ["train-labels-idx1-ubyte", "t10k-labels-idx1-ubyte"] {
        std::fs::write(idx_dir.join(name), labels).unwrap();
    }
    let status = Command::new(env!("CARGO_BIN_EXE_modenorm"))
        .args(["train", "--epochs", "1", "--data", "idx"])
        .arg("--data-dir")
        .arg(&idx_dir)
        .arg("--out")
        .arg(dir.join("c9_out"))
        .output()
        .unwrap()
        .status
        .code();
    (
        round_trip && images_ok && labels_ok && status == Some(1),
        format!(
            "checkpoint re-save byte-identical: {round_trip}; 2x3x3 image fixture exact: {images_ok}; \
             label fixture exact: {labels_ok}; bad magic exit code {status:?}"
        ),
    )
}

fn determinism(dir: &Path) -> Outcome {
    let run = |sub: &str| {
        let cfg = RunConfig { epochs: 3, seed: 4, out: dir.join(sub), ..RunConfig::default() };
        cmd_train(&cfg).unwrap();
        std::fs::read(cfg.out.join(METRICS_FILE)).unwrap()
    };
    let (a, b) = (run("c10_a"), run("c10_b"));
    (a == b, format!("metrics CSVs of {} bytes identical: {}", a.len(), a == b))
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 equivalence lattice", Box::new(equivalence_lattice)),
        ("2 weighted-moment invariants", Box::new(weighted_moments)),
        ("3 gradient certification", Box::new(gradient_certification)),
        ("4 mode group train/eval identity", Box::new(mode_group_phase_identity)),
        ("5 full-memory eval semantics", Box::new(|| full_memory_eval(dir.path()))),
        ("6 heterogeneity benchmark", Box::new(|| heterogeneity_benchmark(dir.path()))),
        ("7 batch-size x K sweep", Box::new(|| sweep(dir.path()))),
        ("8 running-estimate convergence", Box::new(running_estimates)),
        ("9 persistence and ingestion", Box::new(|| persistence(dir.path()))),
        ("10 determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let (ok, detail) = check();
        failed += usize::from(!ok);
        println!("{} criterion {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
