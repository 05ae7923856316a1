//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use genrenet_core::data_io::{
    gaussian_clusters, merge_manifests, stratified_split, write_dataset, ClusterSpec, EmbeddingDataset, Manifest,
    SplitFractions,
};
use genrenet_core::losses::{
    contrastive, cross_entropy, triplet, ContrastiveParams, PairBatch, TripletBatch, TripletParams,
};
use genrenet_core::network::{Activation, NetworkConfig};
use genrenet_core::report::{multitask_weight_grid, run_sweep, Setting, SweepSpec};
use genrenet_core::sampler::{add_noise, NoiseConfig};
use genrenet_core::tensor::{Matrix, Rng};
use genrenet_core::trainer::{grad_check, gradient_suite, train, TrainConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn gradient_suite_criterion() -> Outcome {
    let start = Instant::now();
    let suite = gradient_suite();
    let activations: BTreeSet<String> = suite.iter().map(|c| c.activation.to_string()).collect();
    ensure(activations.len() == Activation::ALL.len(), "suite misses an activation")?;
    ensure(
        suite.len() == Activation::ALL.len() * 2 * 4 * 5,
        format!("{} cases", suite.len()),
    )?;
    let mut rng = Rng::new(0);
    let mut worst = 0.0f64;
    for case in &suite {
        let report = grad_check(&case.arch(), &case.loss, &mut rng, 1e-4).map_err(e)?;
        worst = worst.max(report.max_relative_error);
        ensure(report.passed, format!("{}: {:?}", case.label(), report.worst()))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} cases, worst relative error {worst:.2e}, {:.1}s",
        suite.len(),
        elapsed.as_secs_f64()
    ))
}

/// Deterministic small values drawn from a fixed palette.
fn palette_matrix(rows: usize, cols: usize, counter: &mut usize) -> Matrix {
    const VALUES: [f64; 7] = [-1.5, -0.75, -0.25, 0.0, 0.5, 1.25, 2.0];
    let data = (0..rows * cols)
        .map(|_| {
            *counter = counter.wrapping_mul(31).wrapping_add(17);
            VALUES[*counter % VALUES.len()]
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn close(got: f64, want: f64) -> bool {
    (got - want).abs() <= 1e-10 * want.abs().max(1.0)
}

fn direct_distance(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]).powi(2);
    }
    (s + eps).sqrt()
}

fn loss_oracle_criterion() -> Outcome {
    let mut counter = 1usize;
    let mut checked = 0usize;
    let cp = ContrastiveParams {
        margin: 1.0,
        ..ContrastiveParams::default()
    };
    let tp = TripletParams {
        margin: 0.2,
        ..TripletParams::default()
    };
    for n in 1..=4usize {
        for d in 1..=3usize {
            for variant in 0..(1usize << n) {
                // Cross-entropy: labels enumerate over the variant bits.
                let logits = palette_matrix(n, 3, &mut counter);
                let labels: Vec<usize> = (0..n).map(|i| ((variant >> i) & 1) + (i % 2)).collect();
                let (got, _) = cross_entropy(&logits, &labels).map_err(e)?;
                let mut want = 0.0;
                for i in 0..n {
                    let row = logits.row(i);
                    let denom: f64 = row.iter().map(|v| v.exp()).sum();
                    want += -(row[labels[i]].exp() / denom).ln();
                }
                want /= n as f64;
                ensure(close(got, want), format!("ce n={n} variant={variant}: {got} vs {want}"))?;

                // Contrastive: every similarity pattern of n pairs.
                let z1 = palette_matrix(n, d, &mut counter);
                let z2 = palette_matrix(n, d, &mut counter);
                let y: Vec<u8> = (0..n).map(|i| ((variant >> i) & 1) as u8).collect();
                let batch = PairBatch::new(z1.clone(), z2.clone(), y.clone()).map_err(e)?;
                let (got, _) = contrastive(&batch, &cp).map_err(e)?;
                let mut want = 0.0;
                for i in 0..n {
                    let dist = direct_distance(z1.row(i), z2.row(i), cp.epsilon);
                    let yi = y[i] as f64;
                    want += (1.0 - yi) * dist * dist + yi * f64::max(0.0, cp.margin - dist).powi(2);
                }
                want /= n as f64;
                ensure(
                    close(got, want),
                    format!("contrastive n={n} d={d} y={y:?}: {got} vs {want}"),
                )?;

                // Triplet.
                let a = palette_matrix(n, d, &mut counter);
                let p = palette_matrix(n, d, &mut counter);
                let q = palette_matrix(n, d, &mut counter);
                let batch = TripletBatch::new(a.clone(), p.clone(), q.clone()).map_err(e)?;
                let (got, _) = triplet(&batch, &tp).map_err(e)?;
                let mut want = 0.0;
                for i in 0..n {
                    let gap = direct_distance(a.row(i), p.row(i), tp.epsilon)
                        - direct_distance(a.row(i), q.row(i), tp.epsilon);
                    want += f64::max(0.0, gap + tp.margin);
                }
                want /= n as f64;
                ensure(close(got, want), format!("triplet n={n} d={d}: {got} vs {want}"))?;
                checked += 3;
            }
        }
    }
    Ok(format!("{checked} hand batches agree to 1e-10"))
}

fn nearest_centroid(train: &EmbeddingDataset, test: &EmbeddingDataset) -> f64 {
    let k = train.num_classes();
    let mut sums = vec![vec![0.0; train.dim()]; k];
    let mut counts = vec![0.0; k];
    for (row, &y) in train.embeddings().row_iter().zip(train.labels()) {
        counts[y] += 1.0;
        for (s, v) in sums[y].iter_mut().zip(row) {
            *s += v;
        }
    }
    let mut correct = 0;
    for (row, &y) in test.embeddings().row_iter().zip(test.labels()) {
        let sq = |c: usize| -> f64 { sums[c].iter().zip(row).map(|(s, v)| (s / counts[c] - v).powi(2)).sum() };
        let best = (0..k).min_by(|&a, &b| sq(a).total_cmp(&sq(b))).unwrap();
        correct += usize::from(best == y);
    }
    correct as f64 / test.len() as f64
}

fn convergence_criterion() -> Outcome {
    let start = Instant::now();
    let spec = ClusterSpec {
        classes: 10,
        per_class: 200,
        dim: 64,
        separation: 6.0,
        sigma: 1.0,
        seed: 0,
    };
    let ds = gaussian_clusters(&spec).map_err(e)?;
    let fractions = SplitFractions::new(0.8, 0.1, 0.1).map_err(e)?;
    let splits = stratified_split(&ds, fractions, 0).materialize(&ds).map_err(e)?;
    let oracle = nearest_centroid(&splits.train, &splits.test);
    let cfg = TrainConfig::default();
    ensure(
        cfg.epochs == 50 && cfg.batch_size == 64 && cfg.learning_rate == 5e-4,
        "defaults drifted",
    )?;
    let net = NetworkConfig::baseline(64, 10);
    let out = train(&splits, &net, &cfg).map_err(e)?;
    let acc = out.report.evaluation.accuracy;
    let elapsed = start.elapsed();
    ensure(oracle >= 0.99, format!("nearest-centroid oracle {oracle}"))?;
    ensure(acc >= 0.98, format!("test accuracy {acc}"))?;
    ensure(elapsed < Duration::from_secs(120), format!("took {elapsed:?}"))?;
    Ok(format!(
        "test accuracy {:.1}%, oracle {:.1}%, {:.1}s",
        acc * 100.0,
        oracle * 100.0,
        elapsed.as_secs_f64()
    ))
}

fn degeneracy_criterion() -> Outcome {
    let spec = ClusterSpec {
        classes: 4,
        per_class: 40,
        dim: 16,
        seed: 3,
        ..ClusterSpec::default()
    };
    let ds = gaussian_clusters(&spec).map_err(e)?;
    let splits = stratified_split(&ds, SplitFractions::default(), 3)
        .materialize(&ds)
        .map_err(e)?;
    let net = NetworkConfig::baseline(16, 4);
    let plain = TrainConfig {
        epochs: 8,
        batch_size: 16,
        seed: 11,
        ..TrainConfig::default()
    };
    let weighted = plain.clone().with_multitask("ce:1".parse().map_err(e)?);
    let a = train(&splits, &net, &plain).map_err(e)?;
    let b = train(&splits, &net, &weighted).map_err(e)?;
    ensure(a.state.steps.len() == b.state.steps.len(), "step counts differ")?;
    for (x, y) in a.state.steps.iter().zip(&b.state.steps) {
        ensure(
            x.total.to_bits() == y.total.to_bits(),
            format!("losses diverge at epoch {}", x.epoch),
        )?;
    }
    ensure(a.network.to_bytes() == b.network.to_bytes(), "final weights differ")?;
    Ok(format!("{} steps bit-identical", a.state.steps.len()))
}

fn noise_criterion() -> Outcome {
    let mut rng = Rng::new(7);
    let (rows, dim) = (10_000, 64);
    let raw = Matrix::gaussian(&mut rng, rows, dim, 0.0, 1.0).map_err(e)?;
    let mut unit = Vec::with_capacity(rows * dim);
    for row in raw.row_iter() {
        let scale = (row.iter().map(|v| v * v).sum::<f64>() / dim as f64).sqrt();
        unit.extend(row.iter().map(|v| v / scale));
    }
    let x = Matrix::from_vec(rows, dim, unit).map_err(e)?;
    let cfg = NoiseConfig {
        snr_db: 20.0,
        window_start: 0.0,
        active_fraction: 1.0,
    };
    let noisy = add_noise(&x, &cfg, 0, 1, &mut rng).map_err(e)?;
    let signal: f64 = x.as_slice().iter().map(|v| v * v).sum();
    let noise: f64 = noisy
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let snr = 10.0 * (signal / noise).log10();
    ensure((snr - 20.0).abs() <= 0.5, format!("measured {snr:.3} dB"))?;
    Ok(format!("measured {snr:.3} dB"))
}

fn label_union_criterion(dir: &Path) -> Outcome {
    let make = |name: &str, classes: usize, seed: u64| -> Result<Manifest, String> {
        let spec = ClusterSpec {
            classes,
            per_class: 5,
            dim: 8,
            seed,
            ..ClusterSpec::default()
        };
        let ds = gaussian_clusters(&spec).map_err(e)?;
        let names: Vec<String> = (0..classes).map(|c| format!("genre{c}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let ds = EmbeddingDataset::with_class_names(ds.embeddings().clone(), ds.labels().to_vec(), &names, name)
            .map_err(e)?;
        write_dataset(dir.join(format!("{name}.manifest")), &ds, "byol-a-test", None).map_err(e)
    };
    let a = make("gtzan", 10, 1)?;
    let b = make("fma", 8, 2)?;
    let merged = merge_manifests(&a, &b, dir.join("union.manifest")).map_err(e)?;
    let union = Manifest::load(dir.join("union.manifest"))
        .map_err(e)?
        .load_dataset()
        .map_err(e)?
        .dataset;
    ensure(merged.name == union.source(), "manifest name mismatch")?;
    ensure(union.num_classes() == 18, format!("{} classes", union.num_classes()))?;

    let mut image = HashMap::new();
    for label in 0..18 {
        let (src, orig) = union.origin_of(label).ok_or("label without origin")?;
        ensure(
            image.insert((src.to_string(), orig), label).is_none(),
            "two labels share an origin",
        )?;
    }
    let expected: BTreeSet<(String, usize)> = (0..10)
        .map(|l| ("gtzan".to_string(), l))
        .chain((0..8).map(|l| ("fma".to_string(), l)))
        .collect();
    ensure(
        image.keys().cloned().collect::<BTreeSet<_>>() == expected,
        "origins do not cover both label sets",
    )?;

    let da = a.load_dataset().map_err(e)?.dataset;
    let db = b.load_dataset().map_err(e)?.dataset;
    ensure(union.len() == da.len() + db.len(), "row count")?;
    let rows = da
        .labels()
        .iter()
        .map(|&l| ("gtzan", l))
        .chain(db.labels().iter().map(|&l| ("fma", l)));
    for (i, (src, orig)) in rows.enumerate() {
        let got = union.origin_of(union.labels()[i]).ok_or("label without origin")?;
        ensure(got == (src, orig), format!("row {i}: {got:?} vs ({src}, {orig})"))?;
    }
    Ok("18 classes, bijection to (source, label) verified".into())
}

fn run(bin: &str, args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin).args(args).output().map_err(e)?;
    ensure(
        out.status.success(),
        format!(
            "{args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ),
    )
}

fn determinism_criterion(dir: &Path) -> Outcome {
    let bin = env!("CARGO_BIN_EXE_genrenet");
    let manifest = dir.join("data/synth.manifest");
    let manifest = manifest.to_str().ok_or("non-UTF-8 temp path")?;
    run(
        bin,
        &[
            "synth",
            "--out",
            manifest,
            "--classes",
            "5",
            "--per-class",
            "60",
            "--dim",
            "24",
            "--seed",
            "4",
        ],
    )?;
    let mut outs = Vec::new();
    for run_dir in ["run_a", "run_b"] {
        let out = dir.join(run_dir);
        let out = out.to_str().ok_or("non-UTF-8 temp path")?.to_string();
        run(
            bin,
            &[
                "train",
                "--manifest",
                manifest,
                "--epochs",
                "6",
                "--seed",
                "9",
                "--weights",
                "ce:0.35,ce:0.35,contrastive:0.3",
                "--snr",
                "20",
                "--out",
                &out,
            ],
        )?;
        outs.push(out);
    }
    let files = ["model.emtn", "report.json", "report.txt", "train.log"];
    for f in files {
        let a = std::fs::read(Path::new(&outs[0]).join(f)).map_err(e)?;
        let b = std::fs::read(Path::new(&outs[1]).join(f)).map_err(e)?;
        ensure(!a.is_empty() && a == b, format!("{f} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical", files.len()))
}

fn weight_grid_criterion() -> Outcome {
    let grid = multitask_weight_grid();
    let mut by_heads = [0usize; 5];
    for cfg in &grid {
        by_heads[cfg.terms().len()] += 1;
    }
    ensure(
        grid.len() == 17 && by_heads[2..] == [2, 14, 1],
        format!("shape {by_heads:?}"),
    )?;

    let spec = ClusterSpec {
        classes: 4,
        per_class: 30,
        dim: 12,
        seed: 5,
        ..ClusterSpec::default()
    };
    let ds = gaussian_clusters(&spec).map_err(e)?;
    let splits = stratified_split(&ds, SplitFractions::default(), 5)
        .materialize(&ds)
        .map_err(e)?;
    let arch = NetworkConfig {
        hidden_sizes: vec![32, 16],
        ..NetworkConfig::baseline(12, 4)
    };
    let base = TrainConfig {
        epochs: 3,
        batch_size: 16,
        projection_dim: 8,
        ..TrainConfig::default()
    };
    let sweep = SweepSpec::new(vec![grid.into_iter().map(Setting::Weights).collect()]);
    let rows = run_sweep(&arch, &base, &sweep, &splits, 4).map_err(e)?;
    ensure(rows.len() == 17, format!("{} rows", rows.len()))?;
    for row in &rows {
        if let Err(err) = &row.outcome {
            return Err(format!("{}: {err}", row.point.key()));
        }
    }
    Ok("17 configurations (2/14/1 heads) trained and scored".into())
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("gradient-check suite", Box::new(gradient_suite_criterion)),
        ("loss oracles", Box::new(loss_oracle_criterion)),
        ("synthetic convergence", Box::new(convergence_criterion)),
        ("multitask degeneracy", Box::new(degeneracy_criterion)),
        ("noise calibration", Box::new(noise_criterion)),
        ("label union", Box::new(|| label_union_criterion(dir.path()))),
        ("determinism", Box::new(|| determinism_criterion(dir.path()))),
        ("weight grid", Box::new(weight_grid_criterion)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
