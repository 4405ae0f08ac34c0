//! Persisted run artifacts: the JSON-lines search trace and the JSON summary.
//!
//! A trace file starts with one header line followed by one record per
//! evaluated candidate, each tagged with `"type"`:
//!
//! ```text
//! {"type":"header","config_hash":"…","seed":11,"tool_version":"0.1.0","strategy":"scd"}
//! {"type":"scd","restart":0,"iter":0,"coord":null,…}
//! ```

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

use crate::pareto;
use crate::perf::PerfReport;
use crate::search::edd::EddRecord;
use crate::search::pso::PsoRecord;
use crate::search::scd::ScdRecord;
use crate::search::ObjectiveTerms;
use crate::space::DesignPoint;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("trace is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub strategy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    Scd(ScdRecord),
    Pso(PsoRecord),
    Edd(EddRecord),
}

impl TraceLine {
    fn strategy(&self) -> Option<&'static str> {
        match self {
            TraceLine::Header(_) => None,
            TraceLine::Scd(_) => Some("scd"),
            TraceLine::Pso(_) => Some("pso"),
            TraceLine::Edd(_) => Some("edd"),
        }
    }
}

/// A parsed trace: its header and records in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceLine>,
}

impl Trace {
    pub fn write<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        serde_json::to_writer(&mut out, &TraceLine::Header(self.header.clone()))?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Parses a trace, requiring a single leading header and records that
    /// all belong to the header's strategy. Blank lines are ignored.
    pub fn read<R: BufRead>(input: R) -> Result<Self, TraceError> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| TraceError::Malformed { line: i + 1, msg };
            let parsed: TraceLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            match (&header, parsed) {
                (None, TraceLine::Header(h)) => header = Some(h),
                (None, _) => return Err(bad("first line must be the header".into())),
                (Some(_), TraceLine::Header(_)) => return Err(bad("duplicate header".into())),
                (Some(h), rec) => {
                    if rec.strategy() != Some(h.strategy.as_str()) {
                        return Err(bad(format!("record does not belong to strategy `{}`", h.strategy)));
                    }
                    records.push(rec);
                }
            }
        }
        Ok(Trace { header: header.ok_or(TraceError::Empty)?, records })
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        Self::read(text.as_bytes())
    }

    /// Best-so-far curve, one row per record.
    ///
    /// * SCD: one series per restart; value is the proposal's objective,
    ///   best is the lowest accepted objective so far.
    /// * PSO: one series; value is the particle's fitness, best is gbest.
    /// * EDD: one series; value is the relaxed loss, best is the lowest
    ///   discrete objective of a derived point that fits the budget.
    pub fn curve(&self) -> Vec<CurvePoint> {
        let mut out = Vec::with_capacity(self.records.len());
        let mut scd_best: Vec<f64> = Vec::new();
        let mut best = f64::NAN;
        for (step, r) in self.records.iter().enumerate() {
            match r {
                TraceLine::Scd(s) => {
                    if scd_best.len() <= s.restart {
                        scd_best.resize(s.restart + 1, f64::INFINITY);
                    }
                    if s.accepted {
                        scd_best[s.restart] = scd_best[s.restart].min(s.objective);
                    }
                    out.push(CurvePoint {
                        series: format!("restart-{}", s.restart),
                        step: s.iter,
                        value: s.objective,
                        best: scd_best[s.restart],
                    });
                }
                TraceLine::Pso(p) => {
                    if !(best >= p.fitness) {
                        best = p.fitness;
                    }
                    out.push(CurvePoint { series: "swarm".into(), step, value: p.fitness, best });
                }
                TraceLine::Edd(e) => {
                    if e.derived_fits && !(best <= e.derived_objective) {
                        best = e.derived_objective;
                    }
                    out.push(CurvePoint { series: "epochs".into(), step: e.epoch, value: e.loss, best });
                }
                TraceLine::Header(_) => {}
            }
        }
        out
    }

    /// Every record as a (resource_scalar, accuracy) candidate, with its
    /// Pareto-front membership.
    pub fn pareto_rows(&self) -> Vec<ParetoRow> {
        let mut rows: Vec<ParetoRow> = self
            .records
            .iter()
            .enumerate()
            .filter_map(|(index, r)| {
                let (resource_scalar, accuracy, latency_ms, feasible) = match r {
                    TraceLine::Scd(s) => (s.resource_scalar, s.accuracy, s.latency_ms, s.feasible),
                    TraceLine::Pso(p) => (p.resource_scalar, p.accuracy, p.latency_ms, p.feasible),
                    TraceLine::Edd(e) => (e.derived_resource_scalar, e.derived_accuracy, e.derived_latency_ms, e.derived_fits),
                    TraceLine::Header(_) => return None,
                };
                Some(ParetoRow { index, resource_scalar, accuracy, latency_ms, feasible, on_front: false })
            })
            .collect();
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.resource_scalar, r.accuracy)).collect();
        for i in pareto::pareto_front(&pts) {
            rows[i].on_front = true;
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub series: String,
    pub step: usize,
    pub value: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    /// Record index in the trace, header excluded.
    pub index: usize,
    pub resource_scalar: f64,
    pub accuracy: f64,
    pub latency_ms: f64,
    pub feasible: bool,
    pub on_front: bool,
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), TraceError> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>, R: std::io::Read>(input: R) -> Result<Vec<T>, TraceError> {
    let mut rdr = csv::Reader::from_reader(input);
    Ok(rdr.deserialize().collect::<Result<Vec<T>, _>>()?)
}

/// The final result of a search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub strategy: String,
    pub best_point: DesignPoint,
    /// Discrete objective of `best_point`.
    pub objective: ObjectiveTerms,
    pub accuracy: f64,
    /// Within `RES_ub` and the latency target.
    pub feasible: bool,
    pub perf: PerfReport,
    /// The quantity the strategy itself optimized: accuracy loss for SCD,
    /// fitness for PSO, discrete objective for EDD.
    pub strategy_score: f64,
    pub evaluations: usize,
    /// Bundles the search was restricted to, when bundle selection ran.
    #[serde(default)]
    pub selected_bundles: Option<Vec<String>>,
}

impl Summary {
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self, TraceError> {
        Ok(serde_json::from_str(text)?)
    }
}
