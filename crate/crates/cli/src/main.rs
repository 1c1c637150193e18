//! Experiment runner: checksum-protected MIMO detection studies at desk
//! scale, with structured config, CSV emission and optional SVG plots.
//!
//! Exit codes: 0 on success, 1 on validation or runtime errors, 2 when an
//! undervolt sweep hit the emulated device's crash voltage (the partial
//! CSV is kept, ending in a crash marker row).

mod config;
mod experiments;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use config::Config;

#[derive(Debug, Parser)]
#[command(name = "mimo-abft", version, about = "Experiment runner for checksum-protected MIMO detection on an emulated undervolted accelerator")]
struct Cli {
    /// TOML configuration file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Experiment to run: overhead-sweep, undervolt-sweep, ber-snr or
    /// cost-table.
    #[arg(long)]
    experiment: Option<String>,

    /// Root RNG seed; sweep points derive independent substreams from it.
    #[arg(long)]
    seed: Option<u64>,

    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Also render SVG line charts next to the CSV.
    #[arg(long)]
    plot: bool,

    /// Worker threads for sweep points.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage/parse problems are validation errors.
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str::<Config>(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => Config::default(),
    };
    if let Some(kind) = cli.experiment {
        config.experiment.kind = kind;
    }
    if let Some(seed) = cli.seed {
        config.experiment.seed = seed;
    }
    if let Some(out) = cli.out {
        config.experiment.out = out;
    }
    config.validate().map_err(|e| anyhow::anyhow!(e.to_string()))?;

    if cli.threads < 1 {
        anyhow::bail!("invalid config at `--threads`: need at least one thread");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .context("building worker pool")?;
    let output = pool.install(|| experiments::run(&config))?;

    let csv = experiments::render_csv(&config, &output);
    let out = &config.experiment.out;
    fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "{}: wrote {} rows to {}",
        config.experiment.kind,
        output.rows.len(),
        out.display()
    );

    if cli.plot {
        for chart in &output.charts {
            let path = chart_path(out, &chart.name);
            fs::write(&path, svg::render(chart))
                .with_context(|| format!("writing {}", path.display()))?;
            eprintln!("plot: {}", path.display());
        }
    }

    if output.crashed {
        eprintln!("emulated device crashed mid-sweep; partial CSV retained");
        return Ok(2);
    }
    Ok(0)
}

fn chart_path(csv: &Path, name: &str) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("chart");
    csv.with_file_name(format!("{stem}_{name}.svg"))
}
