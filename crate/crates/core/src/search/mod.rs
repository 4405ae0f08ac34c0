//! Search strategies over the joint design space.
//!
//! * [`scd`]: stochastic coordinate descent with hard constraints;
//! * [`pso`]: particle swarm with per-bundle groups and a soft-penalty fitness;
//! * [`edd`]: gradient descent on a Gumbel-Softmax relaxation of the space.
//!
//! All three share one [`Objective`]: the latency target, the resource upper
//! bound and the penalty parameters of
//! `L = Acc_loss * Perf_loss + beta * C^(RES - RES_ub)`.

pub mod edd;
pub mod pso;
pub mod scd;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accuracy::{AccuracyError, AccuracyEvaluator};
use crate::autodiff::AutodiffError;
use crate::perf::{self, PerfError, PerfReport, PlatformModel, ResourceWeights, Resources};
use crate::space::{DesignPoint, SearchSpace, SpaceError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("no feasible initial point after {attempts} samples")]
    Infeasible { attempts: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    NonFinite {
        epoch: usize,
        last_state: Box<edd::RelaxedState>,
    },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error(transparent)]
    Accuracy(#[from] AccuracyError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// What `Perf_loss` measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerfMode {
    /// End-to-end latency in milliseconds.
    #[default]
    LatencySum,
    /// Bottleneck stage time in milliseconds (inverse throughput).
    ThroughputMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Penalty base `C`, must exceed 1.
    #[serde(default = "default_base")]
    pub penalty_base: f64,
    /// Per-resource upper bound; the platform budget when absent.
    #[serde(default)]
    pub res_ub: Option<Resources>,
    pub latency_target_ms: f64,
    #[serde(default)]
    pub perf_mode: PerfMode,
}

fn default_beta() -> f64 {
    1.0
}

fn default_base() -> f64 {
    std::f64::consts::E
}

/// The three terms of the discrete objective and their combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub acc_loss: f64,
    pub perf_loss: f64,
    pub penalty: f64,
    pub total: f64,
}

impl Objective {
    pub fn new(latency_target_ms: f64) -> Self {
        Objective {
            beta: default_beta(),
            penalty_base: default_base(),
            res_ub: None,
            latency_target_ms,
            perf_mode: PerfMode::LatencySum,
        }
    }

    pub fn check(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidConfig(m.to_string()));
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta must be finite and >= 0");
        }
        if !(self.penalty_base.is_finite() && self.penalty_base > 1.0) {
            return bad("penalty_base must be > 1");
        }
        if !(self.latency_target_ms.is_finite() && self.latency_target_ms > 0.0) {
            return bad("latency_target_ms must be positive");
        }
        if let Some(ub) = &self.res_ub {
            if ub.as_array().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad("res_ub entries must be positive");
            }
        }
        Ok(())
    }

    pub fn res_ub(&self, platform: &PlatformModel) -> Resources {
        self.res_ub.unwrap_or_else(|| platform.budget())
    }

    /// `Perf_loss` of a concrete design, in milliseconds.
    pub fn perf_loss(&self, report: &PerfReport, platform: &PlatformModel) -> f64 {
        match self.perf_mode {
            PerfMode::LatencySum => report.latency_ms,
            PerfMode::ThroughputMax => report.max_op_cycles as f64 / (platform.clock_mhz * 1e3),
        }
    }

    /// Sum of fractional over-use per resource, clamped below at zero.
    pub fn overshoot(&self, used: &Resources, platform: &PlatformModel) -> f64 {
        let ub = self.res_ub(platform).as_array();
        used.as_array()
            .iter()
            .zip(ub)
            .map(|(u, b)| ((u - b) / b).max(0.0))
            .sum()
    }

    /// `beta * C^overshoot`; exactly `beta` at or under the bound.
    pub fn penalty(&self, used: &Resources, platform: &PlatformModel) -> f64 {
        self.beta * self.penalty_base.powf(self.overshoot(used, platform))
    }

    pub fn terms(&self, acc_loss: f64, report: &PerfReport, platform: &PlatformModel) -> ObjectiveTerms {
        let perf_loss = self.perf_loss(report, platform);
        let penalty = self.penalty(&report.resources, platform);
        ObjectiveTerms {
            acc_loss,
            perf_loss,
            penalty,
            total: acc_loss * perf_loss + penalty,
        }
    }

    /// Resources within the bound and latency within the target.
    pub fn feasible(&self, report: &PerfReport, platform: &PlatformModel) -> bool {
        report.resources.fits_within(&self.res_ub(platform)) && report.latency_ms <= self.latency_target_ms
    }
}

/// Everything the discrete searches need to know about one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEval {
    pub perf: PerfReport,
    pub accuracy: f64,
    pub terms: ObjectiveTerms,
    pub resource_scalar: f64,
    pub feasible: bool,
}

impl PointEval {
    pub fn acc_loss(&self) -> f64 {
        self.terms.acc_loss
    }
}

pub fn evaluate_point(
    point: &DesignPoint,
    space: &SearchSpace,
    platform: &PlatformModel,
    evaluator: &dyn AccuracyEvaluator,
    objective: &Objective,
) -> Result<PointEval, SearchError> {
    let perf = perf::evaluate(point, space, platform)?;
    let acc_loss = evaluator.acc_loss(space, point)?;
    let accuracy = evaluator.accuracy(space, point)?;
    Ok(PointEval {
        feasible: objective.feasible(&perf, platform),
        resource_scalar: ResourceWeights::default().scalar(&perf.resources, platform),
        terms: objective.terms(acc_loss, &perf, platform),
        perf,
        accuracy,
    })
}

/// Every listed bundle id must exist.
pub(crate) fn check_bundles(space: &SearchSpace, bundles: &Option<Vec<String>>) -> Result<(), SearchError> {
    if let Some(ids) = bundles {
        if ids.is_empty() {
            return Err(SearchError::InvalidConfig("bundle list is empty".into()));
        }
        if let Some(id) = ids.iter().find(|id| space.bundle(id).is_none()) {
            return Err(SpaceError::UnknownBundle(id.clone()).into());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perf::tests::platform;
    use crate::perf::AccelMode;

    fn report(latency_ms: f64, resources: Resources) -> PerfReport {
        PerfReport {
            mode: AccelMode::Recursive,
            per_op_cycles: vec![],
            per_op_bound: vec![],
            total_cycles: 0,
            max_op_cycles: 0,
            latency_ms,
            throughput_fps: None,
            resources,
        }
    }

    #[test]
    fn penalty_at_the_bound_is_beta() {
        let p = platform(8.0, 0, AccelMode::Recursive);
        let mut obj = Objective::new(1.0);
        obj.beta = 0.7;
        assert_eq!(obj.penalty(&p.budget(), &p), 0.7);
    }

    #[test]
    fn penalty_grows_with_overshoot() {
        let p = platform(8.0, 0, AccelMode::Recursive);
        let obj = Objective::new(1.0);
        let mut r = p.budget();
        r.dsp *= 1.5;
        assert!((obj.penalty(&r, &p) - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_beta_leaves_product() {
        let p = platform(8.0, 0, AccelMode::Recursive);
        let mut obj = Objective::new(1.0);
        obj.beta = 0.0;
        let t = obj.terms(0.3, &report(2.0, p.budget()), &p);
        assert_eq!(t.total, 0.3 * 2.0);
    }

    #[test]
    fn base_must_exceed_one() {
        let mut obj = Objective::new(1.0);
        obj.penalty_base = 1.0;
        assert!(obj.check().is_err());
    }
}
