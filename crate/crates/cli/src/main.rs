//! `codesign`: validate configs, estimate and simulate design points, and run
//! co-design searches.
//!
//! Exit status: 0 on success, 1 when an input fails validation, 2 on any
//! other error.

use anyhow::Result;
use clap::{Parser, Subcommand};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use codesign::accuracy::ProxyDataset;
use codesign::config::{ConfigError, LoadedConfig};
use codesign::oracle;
use codesign::run::{self, RunError, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "codesign", version, about = "Joint DNN / accelerator co-design search")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace the config's seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Write outputs here instead of the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a config, its space file and every cross-reference.
    Validate { config: PathBuf },
    /// Analytical performance report for one design point.
    Estimate { config: PathBuf, point: PathBuf },
    /// Run the cycle oracle on a design point and compare with the model.
    Simulate {
        config: PathBuf,
        point: PathBuf,
        /// Relative error above which an op is flagged.
        #[arg(long, default_value_t = run::DEFAULT_CROSSCHECK_TOLERANCE)]
        tolerance: f64,
    },
    /// Score every bundle and write the resource/accuracy front.
    SelectBundles { config: PathBuf },
    /// Run the configured search strategy.
    Search { config: PathBuf },
    /// Build plot-ready CSVs from a finished run directory.
    Report { run_dir: PathBuf },
    /// Write the synthetic blob dataset used by the proxy evaluator.
    GenDataset {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        rows_per_class: usize,
        #[arg(long, default_value_t = 4)]
        dims: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
    },
}

/// Marks an error as a validation failure.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn load(path: &Path) -> Result<LoadedConfig> {
    LoadedConfig::load(path).map_err(|e| match e {
        ConfigError::Io { .. } => anyhow::Error::new(e),
        _ => anyhow::Error::new(Invalid(format!("{}: {e}", path.display()))),
    })
}

fn runtime(e: RunError) -> anyhow::Error {
    if e.is_validation() {
        anyhow::Error::new(Invalid(e.to_string()))
    } else {
        anyhow::Error::new(e)
    }
}

fn options(cli: &Cli) -> RunOptions {
    RunOptions { seed_override: cli.seed_override, out_dir: cli.out.clone() }
}

fn execute(cli: &Cli, stdout: &mut String) -> Result<()> {
    let opts = options(cli);
    match &cli.command {
        Command::Validate { config } => {
            let c = load(config)?;
            writeln!(
                stdout,
                "ok: {} strategy, {} bundle(s), {} points, config sha256 {}",
                c.config.strategy.name(),
                c.space.bundles.len(),
                c.space.cardinality(),
                c.config_hash
            )?;
        }
        Command::Estimate { config, point } => {
            let c = load(config)?;
            let p = run::load_point(&c, point).map_err(runtime)?;
            let report = run::estimate(&c, &p).map_err(runtime)?;
            let json = run::to_json_pretty(&report).map_err(runtime)?;
            run::write_file(&opts.out_dir(&c), run::PERF_REPORT_FILE, json.as_bytes()).map_err(runtime)?;
            stdout.push_str(&json);
        }
        Command::Simulate { config, point, tolerance } => {
            let c = load(config)?;
            let p = run::load_point(&c, point).map_err(runtime)?;
            let (report, sims) = run::simulate(&c, &p, *tolerance).map_err(runtime)?;
            let dir = opts.out_dir(&c);
            let json = run::to_json_pretty(&report).map_err(runtime)?;
            run::write_file(&dir, run::CROSSCHECK_FILE, json.as_bytes()).map_err(runtime)?;
            let mut tiles = Vec::new();
            oracle::write_tile_csv(&sims, &mut tiles).map_err(|e| runtime(e.into()))?;
            run::write_file(&dir, run::TILES_FILE, &tiles).map_err(runtime)?;
            stdout.push_str(&json);
        }
        Command::SelectBundles { config } => {
            let c = load(config)?;
            let sel = run::select_bundles(&c, opts.seed(&c)).map_err(runtime)?;
            let path = run::write_bundle_scores(&opts.out_dir(&c), &sel).map_err(runtime)?;
            writeln!(stdout, "front: {}", sel.front.join(", "))?;
            writeln!(stdout, "wrote {}", path.display())?;
        }
        Command::Search { config } => {
            let c = load(config)?;
            let out = run::search(&c, &opts).map_err(runtime)?;
            run::verify_summary(&c, &out.summary).map_err(runtime)?;
            let written = run::write_search(&opts.out_dir(&c), &out).map_err(runtime)?;
            let s = &out.summary;
            writeln!(
                stdout,
                "{}: objective {:.6} (acc_loss {:.6}, perf_loss {:.6}, penalty {:.6}), feasible {}, {} evaluations",
                s.strategy, s.objective.total, s.objective.acc_loss, s.objective.perf_loss, s.objective.penalty,
                s.feasible, s.evaluations
            )?;
            for p in written {
                writeln!(stdout, "wrote {}", p.display())?;
            }
        }
        Command::Report { run_dir } => {
            let dir = cli.out.as_deref().unwrap_or(run_dir);
            let (trace, written) = run::report(run_dir, dir).map_err(runtime)?;
            writeln!(stdout, "{} records from a {} run", trace.records.len(), trace.header.strategy)?;
            for p in written {
                writeln!(stdout, "wrote {}", p.display())?;
            }
        }
        Command::GenDataset { seed, rows_per_class, dims, classes } => {
            let dir = cli.out.as_deref().ok_or_else(|| Invalid("gen-dataset needs --out <dir>".into()))?;
            let data = ProxyDataset::synthetic_blobs(*seed, *rows_per_class, *dims, *classes)
                .map_err(|e| Invalid(e.to_string()))?;
            let path = run::write_file(dir, "dataset.csv", data.to_csv_string().as_bytes()).map_err(runtime)?;
            writeln!(stdout, "wrote {}", path.display())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    let mut out = String::new();
    let result = pool.install(|| execute(&cli, &mut out));
    // a closed pipe on stdout is not an error worth reporting
    let _ = std::io::stdout().lock().write_all(out.as_bytes());
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
