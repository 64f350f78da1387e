use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rcnr_core::checkpoint::{load_checkpoint, save_checkpoint};
use rcnr_core::config::PipelineConfig;
use rcnr_core::dataset::{build_dataset, deserialize, serialize};
use rcnr_core::diagnostics::gradcheck_suite;
use rcnr_core::network::{build_network, Variant};
use rcnr_core::train::{evaluate_rmse, export_metrics, train};

/// RIS-aided mmWave fingerprint positioning with a residual CNN regressor.
#[derive(Parser)]
#[command(name = "rcnr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a fingerprint dataset from a scene configuration.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on a generated dataset.
    Train(TrainArgs),
    /// Print the test-set RMSE (meters) of a checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Network variant: rcnr or cnn.
    #[arg(long, value_name = "rcnr|cnn")]
    spec: Variant,
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: PathBuf,
    /// Optional configuration supplying [network] and [train] settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

fn generate(config: &Path, out: &Path) -> Result<()> {
    let cfg = PipelineConfig::from_file(config)?;
    let data = build_dataset(&cfg.scene, &cfg.grid, cfg.dataset.split_fraction, cfg.dataset.seed)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    serialize(&data, out)?;
    eprintln!(
        "wrote {} samples ({} train, {} test) to {}; grid-center SNR {:.2} dB",
        data.manifest.sample_count,
        data.manifest.train_count,
        data.manifest.test_count,
        out.display(),
        data.manifest.grid_center_snr_db
    );
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    let mut tc = cfg.train.clone();
    tc.epochs = args.epochs.unwrap_or(tc.epochs);
    tc.batch_size = args.batch_size.unwrap_or(tc.batch_size);
    tc.learning_rate = args.lr.unwrap_or(tc.learning_rate);
    tc.seed = args.seed.unwrap_or(tc.seed);
    tc.validate()?;

    let data = deserialize(&args.data).with_context(|| format!("loading dataset {}", args.data.display()))?;
    let spec = cfg.network.spec(args.spec, args.blocks, data.manifest.input_shape)?;
    let mut model = build_network::<f32>(&spec, tc.seed)?;
    let history = train(&mut model, &data, &tc, |r| {
        if !args.quiet {
            eprintln!(
                "epoch {:>3}/{}  train {:.5}  test {:.5}  rmse {:.3} m",
                r.epoch, tc.epochs, r.train_loss, r.test_loss, r.test_rmse_m
            );
        }
    })?;
    save_checkpoint(&mut model, Some(&tc), &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    export_metrics(&history, &args.metrics).with_context(|| format!("writing {}", args.metrics.display()))?;
    Ok(())
}

fn eval(data: &Path, ckpt: &Path) -> Result<()> {
    let data = deserialize(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let (mut model, _) = load_checkpoint::<f32>(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    if model.spec().input_shape != data.manifest.input_shape {
        bail!(
            "checkpoint expects inputs {:?} but the dataset holds {:?}",
            model.spec().input_shape,
            data.manifest.input_shape
        );
    }
    println!("{}", evaluate_rmse(&mut model, &data.test, &data.manifest.label_map)?);
    Ok(())
}

fn run_gradcheck(seed: u64) -> Result<()> {
    let suite = gradcheck_suite(seed)?;
    let mut failed = Vec::new();
    for e in &suite {
        let verdict = if e.passed() { "ok" } else { "FAIL" };
        println!(
            "{verdict:<4} {:<24} max rel error {:.3e} (tol {:.0e}, {} coords, {} kinks skipped)",
            e.name, e.report.max_rel_error, e.tolerance, e.report.checked, e.report.skipped_kinks
        );
        if !e.passed() {
            failed.push(e.name);
        }
    }
    if !failed.is_empty() {
        bail!("gradient check exceeded tolerance for: {}", failed.join(", "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { config, out } => generate(config, out),
        Command::Train(args) => run_train(args),
        Command::Eval { data, ckpt } => eval(data, ckpt),
        Command::Gradcheck { seed } => run_gradcheck(*seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
