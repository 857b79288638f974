use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use euda_core::feature_store::{load_csv, load_dataset, save_dataset, synth_shifted_gaussians};
use euda_core::network::{load_checkpoint, save_checkpoint, BottleneckConfig, ModelShape};
use euda_core::trainer::{evaluate, grad_check, train_with, FlatConfig, TrainConfig};
use euda_core::{BatchPair, DomainDataset, EudaError, FileFormat, Result, SynthSpec};
use log::info;

use crate::manifest::{io_error, Artifacts, Datasets, FileDigest, RunManifest};
use crate::{
    ConvertArgs, EvalArgs, GradcheckArgs, GradcheckPreset, KernelArg, Overrides, ParamsArgs, SynthArgs,
    TrainArgs, EXIT_CHECK_FAILED,
};

const CHECKPOINT_FILE: &str = "model.eudm";
const METRICS_FILE: &str = "metrics.jsonl";
const MANIFEST_FILE: &str = "manifest.json";

fn kernel_name(k: KernelArg) -> String {
    match k {
        KernelArg::Rbf => "rbf".into(),
        KernelArg::Linear => "linear".into(),
    }
}

impl Overrides {
    fn to_flat(&self) -> FlatConfig {
        FlatConfig {
            seed: self.seed,
            lambda: self.lambda,
            epochs: self.epochs,
            batch_size: self.batch_size,
            bottleneck: self.bottleneck.clone(),
            kernel: self.kernel.map(kernel_name),
            estimator: self.estimator.map(Into::into),
            ..Default::default()
        }
    }
}

fn read_config_file(path: &Path) -> Result<FlatConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        let field = e.to_string();
        EudaError::config("config", format!("{}: {field}", path.display()))
    })
}

fn load(path: &Path) -> Result<DomainDataset> {
    load_dataset(path, FileFormat::from_path(path))
}

pub fn train(args: TrainArgs) -> Result<u8> {
    let file_flat = match &args.config {
        Some(p) => read_config_file(p)?,
        None => FlatConfig::default(),
    };
    let flat = file_flat.merged_with(&args.overrides.to_flat());
    let cfg = TrainConfig::default().apply(&flat)?;
    if args.checkpoint_every == Some(0) {
        return Err(EudaError::config("checkpoint_every", "must be positive"));
    }

    let source = load(&args.source)?;
    let target = load(&args.target)?;
    if !source.is_labeled() {
        return Err(EudaError::Data(format!("{} carries no labels", args.source.display())));
    }
    let datasets = Datasets {
        source: FileDigest::of(&args.source)?,
        target: FileDigest::of(&args.target)?,
    };

    let out = &args.out_dir;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let metrics_path = out.join(METRICS_FILE);
    let file = File::create(&metrics_path).map_err(|e| io_error(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let mut periodic = Vec::new();

    let outcome = train_with(&source, &target, &cfg, |report| {
        for r in report.records {
            let line = serde_json::to_string(r).expect("metrics serialize");
            writeln!(metrics, "{line}").map_err(|e| io_error(&metrics_path, e))?;
        }
        metrics.flush().map_err(|e| io_error(&metrics_path, e))?;
        if let Some(k) = args.checkpoint_every {
            if (report.epoch + 1) % k == 0 {
                let path = out.join(format!("model-epoch{:03}.eudm", report.epoch + 1));
                save_checkpoint(report.params, &path)?;
                periodic.push(fs::canonicalize(&path).map_err(|e| io_error(&path, e))?);
            }
        }
        Ok(())
    });
    let outcome = outcome?;

    let checkpoint_path = out.join(CHECKPOINT_FILE);
    save_checkpoint(&outcome.params, &checkpoint_path)?;
    let final_acc = outcome.metrics.iter().rev().find_map(|r| r.target_accuracy);
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.to_flat(),
        datasets,
        artifacts: Artifacts {
            checkpoint: FileDigest::of(&checkpoint_path)?,
            metrics: fs::canonicalize(&metrics_path).map_err(|e| io_error(&metrics_path, e))?,
            periodic_checkpoints: periodic,
        },
        final_target_accuracy: final_acc,
    };
    let manifest_path = out.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;
    info!("wrote {}", manifest_path.display());

    match final_acc {
        Some(acc) => println!("final target accuracy: {acc:.4}"),
        None => println!("target is unlabeled; no accuracy reported"),
    }
    Ok(0)
}

pub fn synth(args: SynthArgs) -> Result<u8> {
    let spec = SynthSpec {
        num_classes: args.classes,
        feature_dim: args.dim,
        samples_per_class: args.per_class,
        class_separation: args.radius,
        shift_magnitude: if args.zero_shift { 0.0 } else { args.shift },
        noise_std: args.noise,
    };
    let (source, target) = synth_shifted_gaussians(&spec, args.seed)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| io_error(&args.out_dir, e))?;
    for (ds, name) in [(&source, "source.eudf"), (&target, "target.eudf")] {
        let path = args.out_dir.join(name);
        save_dataset(ds, &path, FileFormat::Binary)?;
        println!("{}", path.display());
    }
    Ok(0)
}

pub fn eval(args: EvalArgs) -> Result<u8> {
    if let Some(manifest_path) = &args.manifest {
        let manifest = RunManifest::load_verified(manifest_path)?;
        let params = load_checkpoint(&manifest.artifacts.checkpoint.path)?;
        for (name, digest) in [("source", &manifest.datasets.source), ("target", &manifest.datasets.target)] {
            let ds = load(&digest.path)?;
            if ds.is_labeled() {
                println!("{name} accuracy: {:.4}", evaluate(&params, &ds)?);
            }
        }
        return Ok(0);
    }
    let (checkpoint, data) = (
        args.checkpoint.as_deref().expect("required by clap"),
        args.data.as_deref().expect("required by clap"),
    );
    let params = load_checkpoint(checkpoint)?;
    let ds = load(data)?;
    if !ds.is_labeled() {
        return Err(EudaError::Data(format!("{} carries no labels", data.display())));
    }
    params.check_input_dim(ds.dim())?;
    println!("accuracy: {:.4}", evaluate(&params, &ds)?);
    Ok(0)
}

fn tiny_batch(seed: u64) -> Result<BatchPair> {
    let spec = SynthSpec {
        num_classes: 3,
        feature_dim: 6,
        samples_per_class: 8,
        class_separation: 4.0,
        shift_magnitude: 1.5,
        noise_std: 1.0,
    };
    let (source, target) = synth_shifted_gaussians(&spec, seed)?;
    let rows: Vec<usize> = (0..8).map(|i| 3 * i).collect();
    let labels = source.labels().expect("synthetic source is labeled");
    let ys = rows.iter().map(|&r| labels[r]).collect();
    BatchPair::new(source.gather_rows(&rows), ys, target.gather_rows(&rows))
}

pub fn gradcheck(args: GradcheckArgs) -> Result<u8> {
    let GradcheckPreset::Tiny = args.preset;
    let flat = FlatConfig {
        seed: args.seed,
        lambda: args.lambda,
        kernel: args.kernel.map(kernel_name),
        estimator: args.estimator.map(Into::into),
        ..Default::default()
    };
    let mut cfg = TrainConfig::default().apply(&flat)?;
    cfg.bottleneck = BottleneckConfig::new(vec![8, 4])?;
    if !(args.epsilon > 0.0 && args.epsilon.is_finite()) {
        return Err(EudaError::config("epsilon", "must be positive"));
    }
    let batch = tiny_batch(cfg.seed)?;
    let report = grad_check(&cfg, &batch, 3, args.epsilon)?;
    println!(
        "max relative error: {:e} ({} parameters checked, {} skipped at ReLU kinks)",
        report.max_relative_error, report.checked, report.skipped_at_kink
    );
    if report.max_relative_error < args.tolerance {
        Ok(0)
    } else {
        println!("FAILED: tolerance {:e}", args.tolerance);
        Ok(EXIT_CHECK_FAILED)
    }
}

pub fn params(args: ParamsArgs) -> Result<u8> {
    let bottleneck: BottleneckConfig = args.bottleneck.parse()?;
    if args.input_dim == 0 {
        return Err(EudaError::config("input_dim", "must be positive"));
    }
    if args.classes < 2 {
        return Err(EudaError::config("classes", "must be at least 2"));
    }
    let shape = ModelShape::new(args.input_dim, &bottleneck, args.classes);
    for (name, count) in shape.breakdown() {
        println!("{name:<12} {count:>12}");
    }
    println!("{:<12} {:>12}", "total", shape.count_trainable());
    Ok(0)
}

pub fn convert(args: ConvertArgs) -> Result<u8> {
    let ds = match (FileFormat::from_path(&args.input), args.classes) {
        (FileFormat::Csv, classes) => load_csv(&args.input, classes)?,
        (FileFormat::Binary, None) => load_dataset(&args.input, FileFormat::Binary)?,
        (FileFormat::Binary, Some(_)) => {
            return Err(EudaError::config("classes", "only applies to CSV input"));
        }
    };
    save_dataset(&ds, &args.out, FileFormat::from_path(&args.out))?;
    println!("{} rows x {} features -> {}", ds.len(), ds.dim(), args.out.display());
    Ok(0)
}
