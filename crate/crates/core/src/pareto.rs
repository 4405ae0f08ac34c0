//! Bundle scoring and resource/accuracy Pareto selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

use crate::accuracy::{AccuracyError, AccuracyEvaluator};
use crate::perf::{self, PerfError, PlatformModel, ResourceWeights};
use crate::seed;
use crate::space::{DesignPoint, SearchSpace, SpaceError};

#[derive(Debug, Error)]
pub enum ParetoError {
    #[error("trials_per_bundle must be >= 1")]
    NoTrials,
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error(transparent)]
    Accuracy(#[from] AccuracyError),
    #[error("bundle scores csv: {0}")]
    Csv(String),
}

/// Indices of the non-dominated points of `(cost, value)` pairs, where lower
/// cost and higher value are better. Of several identical points only the
/// first survives. The result is ordered by ascending cost.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .total_cmp(&points[b].0)
            .then(points[b].1.total_cmp(&points[a].1))
            .then(a.cmp(&b))
    });
    let mut front = Vec::new();
    let mut best_value = f64::NEG_INFINITY;
    for i in order {
        // anything with equal-or-lower cost already seen has value >= best_value
        if front.is_empty() || points[i].1 > best_value {
            best_value = points[i].1;
            front.push(i);
        }
    }
    front
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleScore {
    pub bundle_id: String,
    pub resource_scalar: f64,
    pub accuracy: f64,
    pub points_evaluated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSelection {
    pub scores: Vec<BundleScore>,
    /// Bundle ids on the front, by ascending resource.
    pub front: Vec<String>,
}

impl BundleSelection {
    pub fn from_scores(scores: Vec<BundleScore>) -> Self {
        let pts: Vec<(f64, f64)> = scores.iter().map(|s| (s.resource_scalar, s.accuracy)).collect();
        let front = pareto_front(&pts)
            .into_iter()
            .map(|i| scores[i].bundle_id.clone())
            .collect();
        BundleSelection { scores, front }
    }

    pub fn on_front(&self, id: &str) -> bool {
        self.front.iter().any(|f| f == id)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Template point for one bundle trial: the bundle replicated the maximum
/// number of times with the first channel choice and no pooling; ops (other
/// than identity), bitwidths and pf are drawn at random.
pub fn template_point(space: &SearchSpace, bundle_id: &str, seed: u64, index: u64) -> Result<DesignPoint, SpaceError> {
    let mut rng = seed::rng_for(seed, "bundle-trial", index);
    let cands = space.candidates(bundle_id)?;
    let compute = cands.len().saturating_sub(1).max(1);
    let n = *space
        .replications
        .last()
        .ok_or_else(|| SpaceError::EmptyChoices("replications".into()))?;
    let mut p = DesignPoint {
        bundle_id: bundle_id.to_string(),
        replications: n,
        op_choice: Vec::with_capacity(n),
        channels: Vec::with_capacity(n),
        pools: Default::default(),
        quant_bits: Vec::with_capacity(n),
        pf: Vec::with_capacity(n),
    };
    use rand::Rng;
    for i in 0..n {
        let m = rng.gen_range(0..compute);
        let op = &cands[m];
        p.op_choice.push(m);
        p.channels.push(space.channel_choices[i][0]);
        p.quant_bits
            .push(op.allowed_quant_bits[rng.gen_range(0..op.allowed_quant_bits.len())]);
        p.pf.push(rng.gen_range(op.pf_range.min..=op.pf_range.max));
    }
    Ok(p)
}

/// Scores every bundle by median resource usage and median accuracy over
/// `trials` template points, then keeps the Pareto front.
pub fn score_bundles(
    space: &SearchSpace,
    platform: &PlatformModel,
    evaluator: &dyn AccuracyEvaluator,
    weights: &ResourceWeights,
    trials: usize,
    seed: u64,
) -> Result<BundleSelection, ParetoError> {
    if trials == 0 {
        return Err(ParetoError::NoTrials);
    }
    let mut scores = Vec::with_capacity(space.bundles.len());
    for (b, bundle) in space.bundles.iter().enumerate() {
        let results: Vec<Result<(f64, f64), ParetoError>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let p = template_point(space, &bundle.id, seed, (b * trials + t) as u64)?;
                let report = perf::evaluate(&p, space, platform)?;
                let acc = evaluator.accuracy(space, &p)?;
                Ok((weights.scalar(&report.resources, platform), acc))
            })
            .collect();
        let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        scores.push(BundleScore {
            bundle_id: bundle.id.clone(),
            resource_scalar: median(results.iter().map(|r| r.0).collect()),
            accuracy: median(results.iter().map(|r| r.1).collect()),
            points_evaluated: trials,
        });
    }
    Ok(BundleSelection::from_scores(scores))
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    bundle_id: String,
    resource_scalar: f64,
    accuracy: f64,
    on_front: bool,
}

/// `bundle_id,resource_scalar,accuracy,on_front`
pub fn write_bundle_scores<W: Write>(sel: &BundleSelection, out: W) -> Result<(), ParetoError> {
    let mut wtr = csv::Writer::from_writer(out);
    for s in &sel.scores {
        wtr.serialize(CsvRow {
            bundle_id: s.bundle_id.clone(),
            resource_scalar: s.resource_scalar,
            accuracy: s.accuracy,
            on_front: sel.on_front(&s.bundle_id),
        })
        .map_err(|e| ParetoError::Csv(e.to_string()))?;
    }
    wtr.flush().map_err(|e| ParetoError::Csv(e.to_string()))
}

/// Reads a `bundle_scores.csv`; returns the scores and the stored front flags.
pub fn read_bundle_scores<R: Read>(input: R) -> Result<(Vec<BundleScore>, Vec<bool>), ParetoError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut scores = Vec::new();
    let mut flags = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row.map_err(|e| ParetoError::Csv(e.to_string()))?;
        if !(row.resource_scalar.is_finite() && row.accuracy.is_finite()) {
            return Err(ParetoError::Csv(format!("non-finite score for `{}`", row.bundle_id)));
        }
        flags.push(row.on_front);
        scores.push(BundleScore {
            bundle_id: row.bundle_id,
            resource_scalar: row.resource_scalar,
            accuracy: row.accuracy,
            points_evaluated: 0,
        });
    }
    Ok((scores, flags))
}
