use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fruitcount::config::PipelineConfig;
use fruitcount::pipeline::{run_pipeline, Dataset};
use fruitcount::report::emit_reports;
use fruitcount::simulate::{generate, write_dataset};
use fruitcount::Error;

#[derive(Parser)]
#[command(name = "fruitcount", version, about = "Count fruit in image sequences and simulate orchard scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scan with ground truth from the `[scene]` section.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `scene.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track, localize and correct counts for a dataset, then write reports.
    Count {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory holding `manifest.json`; falls back to `pipeline.dataset`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Report directory; falls back to `pipeline.out`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_correction: bool,
        /// Recorded in the summary.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: &Path) -> Result<PipelineConfig, Error> {
    PipelineConfig::load(path).map_err(|e| e.in_stage("config"))
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Error> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.scene.seed = s;
    }
    let sim = generate(&cfg.scene).map_err(|e| e.in_stage("simulate"))?;
    let manifest = write_dataset(&sim, out).map_err(|e| e.in_stage("simulate"))?;
    println!(
        "wrote {} frames, {} target fruit to {}",
        manifest.frame_count(),
        sim.truth.target_count(),
        out.display()
    );
    Ok(())
}

fn count(
    config: &Path,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    no_correction: bool,
    seed: Option<u64>,
) -> Result<(), Error> {
    let mut cfg = load_config(config)?;
    if no_correction {
        cfg.pipeline.enable_correction = false;
    }
    if seed.is_some() {
        cfg.pipeline.seed = seed;
    }
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let dataset = dataset
        .or_else(|| cfg.pipeline.dataset.clone())
        .ok_or_else(|| Error::Config("no dataset given (--dataset or pipeline.dataset)".into()).in_stage("config"))?;
    let out = out
        .or_else(|| cfg.pipeline.out.clone())
        .ok_or_else(|| Error::Config("no output directory given (--out or pipeline.out)".into()).in_stage("config"))?;

    let data = Dataset::load_dir(&dataset).map_err(|e| e.in_stage("ingest"))?;
    let result = run_pipeline(&data, &cfg)?;
    emit_reports(&result, &out).map_err(|e| e.in_stage("report"))?;

    let s = &result.summary;
    match s.total_truth {
        Some(t) => println!("raw {} corrected {} truth {}", s.total_raw, s.total_corrected, t),
        None => println!("raw {} corrected {}", s.total_raw, s.total_corrected),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out, seed } => simulate(&config, &out, seed),
        Command::Count {
            config,
            dataset,
            out,
            no_correction,
            seed,
        } => count(&config, dataset, out, no_correction, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
