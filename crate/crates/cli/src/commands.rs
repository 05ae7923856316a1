use std::fs;
use std::io::Write as _;
use std::path::Path;

use genrenet_core::data_io::{
    gaussian_clusters, merge_manifests, read_header, stratified_split, write_dataset, ClusterSpec, EmbeddingDataset,
    LoadedDataset, Manifest, SplitFractions, SplitIndices, SplitPart, Splits,
};
use genrenet_core::losses::{ContrastiveParams, MultitaskConfig, TripletParams};
use genrenet_core::network::{Activation, Network, NetworkConfig};
use genrenet_core::report::{
    emit_plot_data, emit_table, evaluate, multitask_weight_grid, percent, render_report, run_sweep, ComparisonTable,
    Setting, SweepSpec, TableFormat,
};
use genrenet_core::sampler::NoiseConfig;
use genrenet_core::tensor::Rng;
use genrenet_core::trainer::{grad_check, gradient_suite, train_with, EpochRecord, TrainConfig};
use genrenet_core::{Error, Result};

use crate::args::{
    DataArgs, EvalArgs, GradcheckArgs, InspectArgs, MergeArgs, ModelArgs, SweepArgs, SynthArgs, TrainArgs,
};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn load_splits(data: &DataArgs) -> Result<(LoadedDataset, SplitIndices)> {
    let manifest = Manifest::load(&data.manifest)?;
    let loaded = manifest.load_dataset()?;
    let indices = match &loaded.splits {
        Some(s) => s.clone(),
        None => {
            let fractions: SplitFractions = data.split.parse()?;
            stratified_split(&loaded.dataset, fractions, data.split_seed)
        }
    };
    Ok((loaded, indices))
}

fn train_config(m: &ModelArgs) -> Result<(NetworkConfig, TrainConfig)> {
    let arch = NetworkConfig {
        input_dim: 0,
        hidden_sizes: m.hidden.clone(),
        activation: m.activation,
        dropout_rate: m.dropout,
        batch_norm: !m.no_batch_norm,
        heads: Vec::new(),
    };
    let multitask = m.weights.as_deref().map(str::parse::<MultitaskConfig>).transpose()?;
    let noise = m.snr.map(|snr_db| NoiseConfig {
        snr_db,
        window_start: m.noise_start,
        active_fraction: m.noise_fraction,
    });
    let cfg = TrainConfig {
        learning_rate: m.lr,
        batch_size: m.batch,
        epochs: m.epochs,
        optimizer: m.optimizer,
        seed: m.seed,
        noise,
        eval_every: m.eval_every,
        projection_dim: m.projection_dim,
        ..TrainConfig::default()
    }
    .with_margins(
        ContrastiveParams {
            margin: m.contrastive_margin,
            epsilon: m.distance_epsilon,
            convention: m.convention(),
        },
        TripletParams {
            margin: m.triplet_margin,
            hinge: !m.triplet_no_hinge,
            epsilon: m.distance_epsilon,
        },
    );
    let cfg = match multitask {
        Some(mt) => cfg.with_multitask(mt),
        None => cfg,
    };
    cfg.validate()?;
    Ok((arch, cfg))
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let (arch, cfg) = train_config(&args.model)?;
    let (loaded, indices) = load_splits(&args.data)?;
    let splits = indices.materialize(&loaded.dataset)?;
    let net = cfg.network_config(&arch, loaded.dataset.dim(), loaded.dataset.num_classes());
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;

    let mut log = format!("{}\n", EpochRecord::tsv_header(&cfg.losses.term_names()));
    let outcome = train_with(&splits, &net, &cfg, &mut |record| {
        log::info!("{}", record.tsv_line());
        log.push_str(&record.tsv_line());
        log.push('\n');
    })?;
    outcome.network.save(args.out.join("model.emtn"))?;
    write_file(&args.out.join("train.log"), &log)?;
    write_file(&args.out.join("report.json"), &outcome.report.to_json())?;
    let text = render_report(&outcome.report);
    write_file(&args.out.join("report.txt"), &text)?;
    print!("{text}");
    eprintln!("trained in {:.1}s", outcome.report.runtime_seconds);
    Ok(())
}

fn part_dataset(splits: Splits, indices_all: &EmbeddingDataset, part: &str) -> Result<EmbeddingDataset> {
    if part == "all" {
        return Ok(indices_all.clone());
    }
    match part.parse::<SplitPart>()? {
        SplitPart::Train => Ok(splits.train),
        SplitPart::Test => Ok(splits.test),
        SplitPart::Val => splits
            .val
            .ok_or_else(|| Error::Data("the dataset has no validation split".into())),
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let network = Network::load(&args.model)?;
    let (loaded, indices) = load_splits(&args.data)?;
    let splits = indices.materialize(&loaded.dataset)?;
    let data = part_dataset(splits, &loaded.dataset, &args.part)?;
    let e = evaluate(&network, &data)?;
    match args.format.as_str() {
        "json" => {
            let json = format!(
                "{{\"part\":\"{}\",\"accuracy\":{},\"correct\":{},\"total\":{}}}",
                args.part, e.accuracy, e.correct, e.total
            );
            println!("{json}");
        }
        "text" => {
            println!(
                "{} accuracy {} % ({}/{})",
                args.part,
                percent(e.accuracy),
                e.correct,
                e.total
            );
            if e.per_source_accuracy.len() > 1 {
                let mut table = ComparisonTable::new("source", &["acc"]);
                for (s, a) in &e.per_source_accuracy {
                    table.push(s, vec![Some(*a)])?;
                }
                print!("{}", table.render(TableFormat::Text)?);
            }
        }
        other => return Err(Error::Config(format!("unknown format {other:?}"))),
    }
    Ok(())
}

fn parse_axis(spec: &str) -> Result<Vec<Setting>> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("axis {spec:?} is not name=values")))?;
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("axis {name}: {v:?} is not a number")))
    };
    let list = || values.split(',').filter(|v| !v.trim().is_empty());
    let settings = match name.trim() {
        "depth" => list()
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map(Setting::Depth)
                    .map_err(|_| Error::Config(format!("depth {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?,
        "width" => list()
            .map(|v| num(v).map(Setting::WidthMultiplier))
            .collect::<Result<_>>()?,
        "dropout" => list().map(|v| num(v).map(Setting::Dropout)).collect::<Result<_>>()?,
        "snr_db" | "snr" => list().map(|v| num(v).map(Setting::SnrDb)).collect::<Result<_>>()?,
        "activation" => list()
            .map(|v| v.trim().parse::<Activation>().map(Setting::Activation))
            .collect::<Result<_>>()?,
        "batch_norm" => list()
            .map(|v| match v.trim() {
                "on" | "true" | "1" => Ok(Setting::BatchNorm(true)),
                "off" | "false" | "0" => Ok(Setting::BatchNorm(false)),
                other => Err(Error::Config(format!("batch_norm {other:?}"))),
            })
            .collect::<Result<_>>()?,
        "noise_window" => list()
            .map(|v| {
                let (s, l) = v
                    .split_once('+')
                    .ok_or_else(|| Error::Config(format!("noise window {v:?} is not start+length")))?;
                Ok(Setting::NoiseWindow(num(s)?, num(l)?))
            })
            .collect::<Result<_>>()?,
        "weights" if values.trim() == "grid" => multitask_weight_grid().into_iter().map(Setting::Weights).collect(),
        "weights" => values
            .split(';')
            .filter(|v| !v.trim().is_empty())
            .map(|v| v.parse::<MultitaskConfig>().map(Setting::Weights))
            .collect::<Result<_>>()?,
        other => return Err(Error::Config(format!("unknown sweep axis {other:?}"))),
    };
    Ok(settings)
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let (arch, cfg) = train_config(&args.model)?;
    let mut axes = args.axes.iter().map(|a| parse_axis(a)).collect::<Result<Vec<_>>>()?;
    if args.weight_grid {
        axes.push(multitask_weight_grid().into_iter().map(Setting::Weights).collect());
    }
    let spec = SweepSpec {
        axes,
        max_points: args.max_points,
    };
    spec.validate()?;
    let format: TableFormat = args.format.parse()?;
    let (loaded, indices) = load_splits(&args.data)?;
    let splits = indices.materialize(&loaded.dataset)?;
    let rows = run_sweep(&arch, &cfg, &spec, &splits, args.jobs)?;
    let table = emit_table(&rows, format)?;
    match &args.out {
        Some(path) => write_file(path, &table)?,
        None => print!("{table}"),
    }
    if let (Some(axis), Some(path)) = (&args.plot, &args.plot_out) {
        write_file(path, &emit_plot_data(&rows, axis)?)?;
    }
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} of {} sweep points failed", rows.len());
    }
    Ok(())
}

/// Returns whether every case passed.
pub fn gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let mut rng = Rng::new(args.seed);
    let suite = gradient_suite();
    let mut failures = 0;
    let mut worst = 0.0f64;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for case in &suite {
        let report = grad_check(&case.arch(), &case.loss, &mut rng, args.tolerance)?;
        worst = worst.max(report.max_relative_error);
        if !report.passed {
            failures += 1;
        }
        if args.verbose || !report.passed {
            let block = report.worst().map_or("-", |b| b.name.as_str());
            let status = if report.passed { "ok  " } else { "FAIL" };
            writeln!(
                out,
                "{status} {:<60} max rel err {:.3e} ({block})",
                case.label(),
                report.max_relative_error
            )
            .map_err(|e| Error::Data(format!("stdout: {e}")))?;
        }
    }
    writeln!(
        out,
        "{} of {} cases passed, worst relative error {worst:.3e}, tolerance {:e}",
        suite.len() - failures,
        suite.len(),
        args.tolerance
    )
    .map_err(|e| Error::Data(format!("stdout: {e}")))?;
    Ok(failures == 0)
}

pub fn merge_labels(args: &MergeArgs) -> Result<()> {
    let a = Manifest::load(&args.a)?;
    let b = Manifest::load(&args.b)?;
    let merged = merge_manifests(&a, &b, &args.out)?;
    let loaded = merged.load_dataset()?;
    println!(
        "{}: {} samples, {} classes ({} from {}, {} from {})",
        args.out.display(),
        loaded.dataset.len(),
        loaded.dataset.num_classes(),
        loaded.dataset.label_map().iter().filter(|e| e.source == a.name).count(),
        a.name,
        loaded.dataset.label_map().iter().filter(|e| e.source == b.name).count(),
        b.name,
    );
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let spec = ClusterSpec {
        classes: args.classes,
        per_class: args.per_class,
        dim: args.dim,
        separation: args.separation,
        sigma: args.sigma,
        seed: args.seed,
    };
    let generated = gaussian_clusters(&spec)?;
    let dataset = EmbeddingDataset::new(
        generated.embeddings().clone(),
        generated.labels().to_vec(),
        generated
            .label_map()
            .iter()
            .cloned()
            .map(|mut e| {
                e.source = args.name.clone();
                e
            })
            .collect(),
        args.name.clone(),
    )?;
    let splits = match &args.split {
        Some(s) => Some(stratified_split(&dataset, s.parse()?, args.split_seed)),
        None => None,
    };
    write_dataset(&args.out, &dataset, "synthetic", splits.as_ref())?;
    println!(
        "{}: {} samples, {} classes, dim {}",
        args.out.display(),
        dataset.len(),
        dataset.num_classes(),
        dataset.dim()
    );
    Ok(())
}

pub fn inspect(args: &InspectArgs) -> Result<()> {
    for path in &args.paths {
        let emb = if path.extension().is_some_and(|e| e == "emb") {
            path.clone()
        } else {
            let m = Manifest::load(path)?;
            println!("{}: manifest name={} extractor={}", path.display(), m.name, m.extractor);
            m.embeddings
        };
        let (header, len) = read_header(&emb)?;
        let expected = 16 + header.payload_len();
        let status = if len == expected {
            "ok".to_string()
        } else {
            format!("size mismatch, expected {expected}")
        };
        println!(
            "{}: EMB1 v{} rows={} dim={} bytes={} {status}",
            emb.display(),
            header.version,
            header.rows,
            header.dim,
            len
        );
    }
    Ok(())
}
