use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

use lowrank_core::data::{generate_synthetic, load_idx, write_idx, Split};
use lowrank_core::train::{train, LayerSpec, TrainConfig, TrainReport};
use lowrank_core::Dataset;

use crate::analyze::{analyze, parse_k_grid, parse_shape, write_analyze_csv};
use crate::csvio::{ktraj_rows, report_rows, write_ktraj_csv, write_ledger_csv, write_report_csv};
use crate::error::{CliError, Result};
use crate::verify::{format_table, run_suites, Suite};

pub const TRAIN_IMAGES: &str = "train-images.idx";
pub const TRAIN_LABELS: &str = "train-labels.idx";
pub const VAL_IMAGES: &str = "val-images.idx";
pub const VAL_LABELS: &str = "val-labels.idx";

/// Samples per class and image size used by `--data synthetic`.
pub const SYNTHETIC_TRAIN_PER_CLASS: usize = 200;
pub const SYNTHETIC_VAL_PER_CLASS: usize = 50;
pub const SYNTHETIC_SIZE: usize = 16;

#[derive(Debug, Parser)]
#[command(name = "lowrank", version, about = "Low-rank activation compression for memory-frugal training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate compression ratio, speedup and SNR over a grid of ranks.
    Analyze {
        /// Layer shape `B,C,Cp,H,W,Hp,Wp,D`.
        #[arg(long)]
        shape: String,
        /// Per-mode ranks `K1,K2,K3,K4`, each `n`, `a-b` or `a-b:step`.
        #[arg(long)]
        k_grid: String,
        /// Explained-variance threshold for the SNR column.
        #[arg(long, default_value_t = 0.8)]
        epsilon: f64,
        /// Output CSV path, or `-` for stdout.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network and write report.csv, ktraj.csv and ledger.csv.
    Train {
        /// JSON training configuration.
        #[arg(long)]
        config: PathBuf,
        /// Directory holding an IDX train/val pair, or `synthetic`.
        #[arg(long)]
        data: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in correctness suites.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
    /// Write a synthetic dataset as IDX train and validation pairs.
    GenData {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        seed: u64,
        /// Validation samples per class; defaults to a quarter of `per_class`.
        #[arg(long)]
        val_per_class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Sizes the global rayon pool from `LOWRANK_THREADS` (default 1).
pub fn configure_threads() -> Result<usize> {
    let threads = match std::env::var("LOWRANK_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("LOWRANK_THREADS must be a positive integer, got {v:?}")))?,
        Err(_) => 1,
    };
    // A pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(threads)
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Analyze { shape, k_grid, epsilon, out } => run_analyze(&shape, &k_grid, epsilon, &out, stdout),
        Command::Train { config, data, out } => run_train(&config, &data, &out).map(|_| ()),
        Command::Verify { suite } => run_verify(suite, stdout),
        Command::GenData { classes, per_class, size, seed, val_per_class, out } => {
            let val = val_per_class.unwrap_or((per_class / 4).max(1));
            run_gen_data(classes, per_class, val, size, seed, &out)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

pub fn run_analyze(shape: &str, k_grid: &str, epsilon: f64, out: &Path, stdout: &mut dyn Write) -> Result<()> {
    let shape = parse_shape(shape)?;
    let grid = parse_k_grid(k_grid, &shape)?;
    let rows = analyze(&shape, &grid, epsilon)?;
    if out == Path::new("-") {
        write_analyze_csv(&rows, stdout)
    } else {
        write_analyze_csv(&rows, create(out)?)?;
        info!("wrote {} rows to {}", rows.len(), out.display());
        Ok(())
    }
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let config: TrainConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

fn output_classes(config: &TrainConfig) -> Result<usize> {
    config
        .architecture
        .iter()
        .rev()
        .find_map(|l| match l {
            LayerSpec::Linear { out_features } => Some(*out_features),
            _ => None,
        })
        .ok_or_else(|| CliError::Usage("architecture has no linear output layer".into()))
}

/// Loads `(train, validation)` for `--data`.
pub fn load_data(data: &str, config: &TrainConfig) -> Result<(Dataset, Dataset)> {
    if data == "synthetic" {
        let classes = output_classes(config)?;
        let tr = generate_synthetic(classes, SYNTHETIC_TRAIN_PER_CLASS, SYNTHETIC_SIZE, config.seed)?;
        let mut va = generate_synthetic(classes, SYNTHETIC_VAL_PER_CLASS, SYNTHETIC_SIZE, config.seed.wrapping_add(1))?;
        va.split = Split::Validation;
        return Ok((tr, va));
    }
    let dir = Path::new(data);
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("--data must be `synthetic` or a directory, got {data:?}")));
    }
    let tr = load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?;
    let mut va = load_idx(&dir.join(VAL_IMAGES), &dir.join(VAL_LABELS))?;
    va.split = Split::Validation;
    Ok((tr, va))
}

pub fn run_train(config_path: &Path, data: &str, out: &Path) -> Result<TrainReport> {
    let config = read_config(config_path)?;
    let (tr, va) = load_data(data, &config)?;
    let report = train(&config, &tr, &va)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    write_report_csv(&report_rows(&report), create(&out.join("report.csv"))?)?;
    write_ktraj_csv(&ktraj_rows(&report), create(&out.join("ktraj.csv"))?)?;
    write_ledger_csv(&report.ledger.records, create(&out.join("ledger.csv"))?)?;
    info!("best validation accuracy {:.4}", report.best_val_accuracy);
    Ok(report)
}

pub fn run_verify(suite: Suite, stdout: &mut dyn Write) -> Result<()> {
    let results = run_suites(suite);
    stdout.write_all(format_table(&results).as_bytes()).map_err(|e| CliError::io("writing output", e))?;
    let failed: Vec<&str> = results.iter().filter(|r| !r.all_passed()).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(format!("failing suites: {}", failed.join(", "))))
    }
}

pub fn run_gen_data(classes: usize, per_class: usize, val_per_class: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    let tr = generate_synthetic(classes, per_class, size, seed)?;
    let va = generate_synthetic(classes, val_per_class, size, seed.wrapping_add(1))?;
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    write_idx(&tr, &out.join(TRAIN_IMAGES), &out.join(TRAIN_LABELS))?;
    write_idx(&va, &out.join(VAL_IMAGES), &out.join(VAL_LABELS))?;
    Ok(())
}
