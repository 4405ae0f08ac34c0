//! Orchestration behind the command-line tool: runs a configured search,
//! writes its artifacts, and re-reads them.
//!
//! Artifacts written into the output directory:
//!
//! | file                  | producer         |
//! |-----------------------|------------------|
//! | `trace.jsonl`         | `search`         |
//! | `summary.json`        | `search`         |
//! | `best_point.json`     | `search`         |
//! | `relaxed_state.json`  | `search` (edd)   |
//! | `bundle_scores.csv`   | `select-bundles`, `search` with selection |
//! | `perf_report.json`    | `estimate`       |
//! | `crosscheck.json`     | `simulate`       |
//! | `tiles.csv`           | `simulate`       |
//! | `curve.csv`           | `report`         |
//! | `pareto.csv`          | `report`         |

use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::accuracy::AccuracyEvaluator;
use crate::config::{ConfigError, EvaluatorConfig, LoadedConfig, StrategyConfig};
use crate::oracle::{self, CrosscheckReport, OracleError, SimResult};
use crate::pareto::{self, BundleSelection, ParetoError};
use crate::perf::{self, PerfError, PerfReport};
use crate::search::edd::{self, RelaxedState};
use crate::search::{evaluate_point, pso, scd, SearchError};
use crate::space::{DesignPoint, SpaceError};
use crate::trace::{self, Summary, Trace, TraceError, TraceHeader, TraceLine, TOOL_VERSION};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BEST_POINT_FILE: &str = "best_point.json";
pub const STATE_FILE: &str = "relaxed_state.json";
pub const BUNDLE_SCORES_FILE: &str = "bundle_scores.csv";
pub const PERF_REPORT_FILE: &str = "perf_report.json";
pub const CROSSCHECK_FILE: &str = "crosscheck.json";
pub const TILES_FILE: &str = "tiles.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const PARETO_FILE: &str = "pareto.csv";

/// Tolerance for a summary to match its re-evaluation.
pub const SUMMARY_TOLERANCE: f64 = 1e-9;

/// Default relative-error tolerance for oracle crosschecks.
pub const DEFAULT_CROSSCHECK_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum RunError {
    /// The inputs are malformed or violate an invariant.
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid design point: {0}")]
    InvalidPoint(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Pareto(#[from] ParetoError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("summary does not match re-evaluation: {0}")]
    SummaryMismatch(String),
}

impl RunError {
    /// Validation failures (exit status 1) as opposed to runtime errors.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            RunError::Config(_)
                | RunError::InvalidPoint(_)
                | RunError::Search(SearchError::InvalidConfig(_))
                | RunError::Search(SearchError::Space(_))
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(path)
}

pub fn read_file(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed_override: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

impl RunOptions {
    pub fn seed(&self, loaded: &LoadedConfig) -> u64 {
        self.seed_override.unwrap_or(loaded.config.seed)
    }

    pub fn out_dir(&self, loaded: &LoadedConfig) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| loaded.output_dir())
    }
}

/// Reads a design point and checks it against the config's space.
pub fn load_point(loaded: &LoadedConfig, path: &Path) -> Result<DesignPoint, RunError> {
    let text = read_file(path)?;
    let point = DesignPoint::from_json_str(&text).map_err(|e| RunError::InvalidPoint(e.to_string()))?;
    check_point(loaded, &point)?;
    Ok(point)
}

pub fn check_point(loaded: &LoadedConfig, point: &DesignPoint) -> Result<(), RunError> {
    match loaded.space.validate(point) {
        crate::space::Validity::Valid => Ok(()),
        crate::space::Validity::Invalid(why) => Err(RunError::InvalidPoint(why)),
    }
}

pub fn estimate(loaded: &LoadedConfig, point: &DesignPoint) -> Result<PerfReport, RunError> {
    check_point(loaded, point)?;
    Ok(perf::evaluate(point, &loaded.space, &loaded.config.platform)?)
}

pub fn simulate(
    loaded: &LoadedConfig,
    point: &DesignPoint,
    tolerance: f64,
) -> Result<(CrosscheckReport, Vec<SimResult>), RunError> {
    check_point(loaded, point)?;
    Ok(oracle::crosscheck(
        point,
        &loaded.space,
        &loaded.config.platform,
        &loaded.schedule_policy(),
        tolerance,
    )?)
}

/// Scores the bundles with the configured (or default) selection settings.
pub fn select_bundles(loaded: &LoadedConfig, seed: u64) -> Result<BundleSelection, RunError> {
    let sel = loaded.config.selection.clone().unwrap_or_default();
    let evaluator = loaded.evaluator()?;
    Ok(pareto::score_bundles(
        &loaded.space,
        &loaded.config.platform,
        evaluator.as_ref(),
        &sel.weights,
        sel.trials_per_bundle,
        crate::seed::derive_seed(seed, "bundle-selection", 0),
    )?)
}

pub fn write_bundle_scores(dir: &Path, sel: &BundleSelection) -> Result<PathBuf, RunError> {
    let mut buf = Vec::new();
    pareto::write_bundle_scores(sel, &mut buf)?;
    write_file(dir, BUNDLE_SCORES_FILE, &buf)
}

/// Everything a search run produces, before it is written.
#[derive(Debug, Clone)]
pub struct SearchRun {
    pub summary: Summary,
    pub trace: Trace,
    pub state: Option<RelaxedState>,
    pub selection: Option<BundleSelection>,
}

/// Runs the configured strategy (after bundle selection, when configured).
pub fn search(loaded: &LoadedConfig, opts: &RunOptions) -> Result<SearchRun, RunError> {
    let seed = opts.seed(loaded);
    let cfg = &loaded.config;
    let (space, platform, objective) = (&loaded.space, &cfg.platform, &cfg.objective);
    let evaluator = loaded.evaluator()?;
    let mut strategy = loaded.strategy();
    strategy.set_seed(seed);

    let selection = match &cfg.selection {
        Some(sel) if !matches!(strategy, StrategyConfig::Edd(_)) => {
            let s = select_bundles(loaded, seed)?;
            if sel.restrict_to_front {
                strategy.restrict_bundles(s.front.clone());
            }
            Some(s)
        }
        _ => None,
    };
    let selected_bundles = match (&selection, &cfg.selection) {
        (Some(s), Some(sel)) if sel.restrict_to_front => Some(s.front.clone()),
        _ => None,
    };

    let (best, score, records, state) = match &strategy {
        StrategyConfig::Scd(c) => {
            let out = scd::scd_search(space, platform, evaluator.as_ref(), objective, c)?;
            let recs = out.records.into_iter().map(TraceLine::Scd).collect();
            (out.best, out.best_objective, recs, None)
        }
        StrategyConfig::Pso(c) => {
            let out = pso::pso_search(space, platform, evaluator.as_ref(), objective, c)?;
            let recs = out.records.into_iter().map(TraceLine::Pso).collect();
            (out.best, out.best_fitness, recs, None)
        }
        StrategyConfig::Edd(c) => {
            let EvaluatorConfig::Surrogate(sur) = &cfg.evaluator else {
                return Err(ConfigError::Invalid("the edd strategy needs the surrogate evaluator".into()).into());
            };
            let out = edd::edd_search(space, platform, sur, objective, c)?;
            let recs = out.records.into_iter().map(TraceLine::Edd).collect();
            (out.best, out.best_terms.total, recs, Some(out.state))
        }
    };

    let eval = evaluate_point(&best, space, platform, evaluator.as_ref(), objective)?;
    let header = TraceHeader {
        config_hash: loaded.config_hash.clone(),
        seed,
        tool_version: TOOL_VERSION.to_string(),
        strategy: strategy.name().to_string(),
    };
    let trace = Trace { header, records };
    let summary = Summary {
        config_hash: loaded.config_hash.clone(),
        seed,
        tool_version: TOOL_VERSION.to_string(),
        strategy: strategy.name().to_string(),
        best_point: best,
        objective: eval.terms,
        accuracy: eval.accuracy,
        feasible: eval.feasible,
        perf: eval.perf,
        strategy_score: score,
        evaluations: trace.records.len(),
        selected_bundles,
    };
    Ok(SearchRun { summary, trace, state, selection })
}

/// Writes a search run's artifacts into `dir`.
pub fn write_search(dir: &Path, run: &SearchRun) -> Result<Vec<PathBuf>, RunError> {
    let mut written = vec![
        write_file(dir, TRACE_FILE, run.trace.to_jsonl().as_bytes())?,
        write_file(dir, SUMMARY_FILE, run.summary.to_json_pretty().as_bytes())?,
        write_file(dir, BEST_POINT_FILE, run.summary.best_point.to_json_pretty().as_bytes())?,
    ];
    if let Some(state) = &run.state {
        let mut json = serde_json::to_string_pretty(state).map_err(TraceError::from)?;
        json.push('\n');
        written.push(write_file(dir, STATE_FILE, json.as_bytes())?);
    }
    if let Some(sel) = &run.selection {
        written.push(write_bundle_scores(dir, sel)?);
    }
    Ok(written)
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= SUMMARY_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Re-evaluates a summary's best point under `loaded` and checks every
/// recorded number against it.
pub fn verify_summary(loaded: &LoadedConfig, summary: &Summary) -> Result<(), RunError> {
    if summary.config_hash != loaded.config_hash {
        return Err(RunError::SummaryMismatch("config hash differs".into()));
    }
    check_point(loaded, &summary.best_point)?;
    let cfg = &loaded.config;
    let evaluator: Box<dyn AccuracyEvaluator> = loaded.evaluator()?;
    let e = evaluate_point(&summary.best_point, &loaded.space, &cfg.platform, evaluator.as_ref(), &cfg.objective)?;
    let score = match summary.strategy.as_str() {
        "scd" => e.acc_loss(),
        "pso" => {
            let lambda = match &cfg.strategy {
                StrategyConfig::Pso(p) => p.fitness_lambda,
                _ => return Err(RunError::SummaryMismatch("strategy differs from config".into())),
            };
            pso::fitness(e.accuracy, &e.perf, &cfg.platform, &cfg.objective, lambda)
        }
        "edd" => e.terms.total,
        other => return Err(RunError::SummaryMismatch(format!("unknown strategy `{other}`"))),
    };
    let checks = [
        ("objective.acc_loss", summary.objective.acc_loss, e.terms.acc_loss),
        ("objective.perf_loss", summary.objective.perf_loss, e.terms.perf_loss),
        ("objective.penalty", summary.objective.penalty, e.terms.penalty),
        ("objective.total", summary.objective.total, e.terms.total),
        ("accuracy", summary.accuracy, e.accuracy),
        ("perf.latency_ms", summary.perf.latency_ms, e.perf.latency_ms),
        ("strategy_score", summary.strategy_score, score),
    ];
    for (name, recorded, fresh) in checks {
        if !close(recorded, fresh) {
            return Err(RunError::SummaryMismatch(format!("{name}: recorded {recorded}, re-evaluated {fresh}")));
        }
    }
    if summary.perf.total_cycles != e.perf.total_cycles || summary.feasible != e.feasible {
        return Err(RunError::SummaryMismatch("cycle count or feasibility differs".into()));
    }
    Ok(())
}

/// Reads `trace.jsonl` from a run directory and writes `curve.csv` and
/// `pareto.csv` into `out_dir`.
pub fn report(run_dir: &Path, out_dir: &Path) -> Result<(Trace, Vec<PathBuf>), RunError> {
    let path = run_dir.join(TRACE_FILE);
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let trace = Trace::read(std::io::BufReader::new(file))?;
    let mut curve = Vec::new();
    trace::write_csv(&trace.curve(), &mut curve)?;
    let mut front = Vec::new();
    trace::write_csv(&trace.pareto_rows(), &mut front)?;
    let written = vec![
        write_file(out_dir, CURVE_FILE, &curve)?,
        write_file(out_dir, PARETO_FILE, &front)?,
    ];
    Ok((trace, written))
}

/// Serializes a value as pretty JSON with a trailing newline.
pub fn to_json_pretty<T: serde::Serialize>(value: &T) -> Result<String, RunError> {
    let mut s = serde_json::to_string_pretty(value).map_err(TraceError::from)?;
    s.push('\n');
    Ok(s)
}

impl From<SpaceError> for RunError {
    fn from(e: SpaceError) -> Self {
        RunError::InvalidPoint(e.to_string())
    }
}
