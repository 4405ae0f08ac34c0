//! Differentiable co-search.
//!
//! The network skeleton (bundle, slot count, channels, pools) is fixed; each
//! slot `i` holds op logits `theta[i][m]`, quantization logits
//! `phi[i][m][q]` and a continuous parallel-factor exponent `pf_cont[i][m]`.
//! Every epoch draws Gumbel-Softmax samples of the logits, builds the relaxed
//! loss on a fresh tape and takes one gradient step per parameter family.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use super::{evaluate_point, Objective, ObjectiveTerms, PerfMode, SearchError};
use crate::accuracy::{self, AccuracyEvaluator, SurrogateParams};
use crate::autodiff::{self, GumbelConfig, NodeId, Tape, VarId};
use crate::perf::{self, PlatformModel};
use crate::seed;
use crate::space::{DesignPoint, OpCandidate, OpKind, SearchSpace, SlotShape, Validity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EddConfig {
    pub epochs: usize,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub lr_pf: f64,
    #[serde(default)]
    pub gumbel: GumbelConfig,
    /// Sharpness of the softplus clamp on the penalty exponent.
    #[serde(default = "default_kappa")]
    pub penalty_sharpness: f64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Skeleton: bundle (first bundle when absent), per-slot channels (first
    /// choice when absent) and pooled slots. The slot count is always `N`.
    #[serde(default)]
    pub bundle: Option<String>,
    #[serde(default)]
    pub channels: Option<Vec<u32>>,
    #[serde(default)]
    pub pools: BTreeSet<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_kappa() -> f64 {
    0.02
}

impl EddConfig {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> Self {
        EddConfig {
            epochs,
            lr_theta: lr,
            lr_phi: lr,
            lr_pf: lr,
            gumbel: GumbelConfig::default(),
            penalty_sharpness: default_kappa(),
            grad_clip: None,
            bundle: None,
            channels: None,
            pools: BTreeSet::new(),
            seed,
        }
    }

    pub fn check(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidConfig(m.to_string()));
        if [self.lr_theta, self.lr_phi, self.lr_pf]
            .iter()
            .any(|lr| !(lr.is_finite() && *lr >= 0.0))
        {
            return bad("learning rates must be finite and >= 0");
        }
        if !(self.penalty_sharpness.is_finite() && self.penalty_sharpness > 0.0) {
            return bad("penalty_sharpness must be positive");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        self.gumbel.check().map_err(SearchError::InvalidConfig)
    }
}

/// Continuous search state plus the fixed skeleton it lives on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedState {
    pub bundle_id: String,
    pub channels: Vec<u32>,
    pub pools: BTreeSet<usize>,
    /// N x M op logits.
    pub theta: Vec<Vec<f64>>,
    /// N x M x Q quantization logits.
    pub phi: Vec<Vec<Vec<f64>>>,
    /// N x M continuous parallel-factor exponents.
    pub pf_cont: Vec<Vec<f64>>,
}

impl RelaxedState {
    /// Zero logits and mid-range parallel factors on the configured skeleton.
    pub fn init(space: &SearchSpace, cfg: &EddConfig) -> Result<Self, SearchError> {
        let bundle_id = cfg
            .bundle
            .clone()
            .unwrap_or_else(|| space.bundles[0].id.clone());
        let cands = space.candidates(&bundle_id)?;
        let n = space.num_blocks;
        let channels = match &cfg.channels {
            Some(c) => c.clone(),
            None => space.channel_choices.iter().map(|c| c[0]).collect(),
        };
        let state = RelaxedState {
            bundle_id,
            channels,
            pools: cfg.pools.clone(),
            theta: vec![vec![0.0; cands.len()]; n],
            phi: vec![vec![vec![0.0; space.quant_choices]; cands.len()]; n],
            pf_cont: (0..n)
                .map(|_| cands.iter().map(|c| 0.5 * (c.pf_range.min + c.pf_range.max) as f64).collect())
                .collect(),
        };
        if let Validity::Invalid(msg) = space.validate(&state.skeleton_point(space)?) {
            return Err(SearchError::InvalidConfig(format!("edd skeleton: {msg}")));
        }
        Ok(state)
    }

    fn check_shapes(&self, space: &SearchSpace) -> Result<(), SearchError> {
        let (n, m, q) = (space.num_blocks, space.ops_per_block, space.quant_choices);
        let ok = self.theta.len() == n
            && self.phi.len() == n
            && self.pf_cont.len() == n
            && self.channels.len() == n
            && self.theta.iter().all(|r| r.len() == m)
            && self.pf_cont.iter().all(|r| r.len() == m)
            && self.phi.iter().all(|r| r.len() == m && r.iter().all(|s| s.len() == q));
        if ok {
            Ok(())
        } else {
            Err(SearchError::InvalidConfig(format!(
                "relaxed state does not match the space shape ({n}, {m}, {q})"
            )))
        }
    }

    /// Skeleton with the first candidate in every slot.
    fn skeleton_point(&self, space: &SearchSpace) -> Result<DesignPoint, SearchError> {
        let cands = space.candidates(&self.bundle_id)?;
        let n = space.num_blocks;
        Ok(DesignPoint {
            bundle_id: self.bundle_id.clone(),
            replications: n,
            op_choice: vec![0; n],
            channels: self.channels.clone(),
            pools: self.pools.clone(),
            quant_bits: vec![cands[0].allowed_quant_bits[0]; n],
            pf: vec![cands[0].pf_range.min; n],
        })
    }

    fn num_vars(&self) -> usize {
        let nm = self.theta.len() * self.theta.first().map_or(0, |r| r.len());
        nm * (2 + self.phi.first().and_then(|r| r.first()).map_or(0, |s| s.len()))
    }

    pub fn theta_var(&self, i: usize, m: usize) -> VarId {
        VarId((i * self.theta[0].len() + m) as u64)
    }

    pub fn phi_var(&self, i: usize, m: usize, q: usize) -> VarId {
        let (n, mm, qq) = (self.theta.len(), self.theta[0].len(), self.phi[0][0].len());
        VarId((n * mm + (i * mm + m) * qq + q) as u64)
    }

    pub fn pf_var(&self, i: usize, m: usize) -> VarId {
        let (n, mm, qq) = (self.theta.len(), self.theta[0].len(), self.phi[0][0].len());
        VarId((n * mm * (1 + qq) + i * mm + m) as u64)
    }

    pub fn get(&self, v: VarId) -> f64 {
        let (n, mm, qq) = (self.theta.len(), self.theta[0].len(), self.phi[0][0].len());
        let k = v.0 as usize;
        if k < n * mm {
            self.theta[k / mm][k % mm]
        } else if k < n * mm * (1 + qq) {
            let r = k - n * mm;
            self.phi[r / (mm * qq)][(r / qq) % mm][r % qq]
        } else {
            let r = k - n * mm * (1 + qq);
            self.pf_cont[r / mm][r % mm]
        }
    }

    pub fn set(&mut self, v: VarId, value: f64) {
        let (n, mm, qq) = (self.theta.len(), self.theta[0].len(), self.phi[0][0].len());
        let k = v.0 as usize;
        if k < n * mm {
            self.theta[k / mm][k % mm] = value;
        } else if k < n * mm * (1 + qq) {
            let r = k - n * mm;
            self.phi[r / (mm * qq)][(r / qq) % mm][r % qq] = value;
        } else {
            let r = k - n * mm * (1 + qq);
            self.pf_cont[r / mm][r % mm] = value;
        }
    }

    pub fn all_vars(&self) -> Vec<VarId> {
        (0..self.num_vars() as u64).map(VarId).collect()
    }

    /// Clamps every `pf_cont[i][m]` into candidate `m`'s range.
    pub fn clamp_pf(&mut self, cands: &[OpCandidate]) {
        for row in &mut self.pf_cont {
            for (x, c) in row.iter_mut().zip(cands) {
                *x = x.clamp(c.pf_range.min as f64, c.pf_range.max as f64);
            }
        }
    }
}

/// Loss node plus its named parts.
#[derive(Debug, Clone, Copy)]
pub struct RelaxedLoss {
    pub loss: NodeId,
    pub acc_loss: NodeId,
    pub perf_loss: NodeId,
    pub penalty: NodeId,
    /// Expected (dsp, bram_kbit, lut).
    pub res: [NodeId; 3],
}

/// Records the relaxed objective on `tape`. The Gumbel noise is drawn from
/// `rng` slot by slot: the op row first, then each candidate's quant row.
#[allow(clippy::too_many_arguments)]
pub fn build_relaxed_loss<R: Rng + ?Sized>(
    state: &RelaxedState,
    space: &SearchSpace,
    platform: &PlatformModel,
    surrogate: &SurrogateParams,
    objective: &Objective,
    cfg: &EddConfig,
    tau: f64,
    tape: &mut Tape,
    rng: &mut R,
) -> Result<RelaxedLoss, SearchError> {
    state.check_shapes(space)?;
    let cands = space.candidates(&state.bundle_id)?;
    let shapes: Vec<SlotShape> = space.shapes(&state.skeleton_point(space)?)?;
    let n = space.num_blocks;

    let mut block_cycles = Vec::with_capacity(n);
    let mut res_terms: [Vec<NodeId>; 3] = Default::default();
    let mut weight_terms = Vec::new();
    let mut depth_terms = Vec::new();
    let mut pen_terms = Vec::new();

    for (i, shape) in shapes.iter().enumerate() {
        let logits: Vec<NodeId> = (0..cands.len())
            .map(|m| tape.var(state.theta_var(i, m), state.theta[i][m]))
            .collect();
        let g = autodiff::gumbel_softmax(tape, &logits, tau, rng);
        let mut cyc = Vec::with_capacity(cands.len());
        for (m, op) in cands.iter().enumerate() {
            let qlogits: Vec<NodeId> = (0..op.allowed_quant_bits.len())
                .map(|q| tape.var(state.phi_var(i, m, q), state.phi[i][m][q]))
                .collect();
            let qs = autodiff::gumbel_softmax(tape, &qlogits, tau, rng);
            let pf = tape.var(state.pf_var(i, m), state.pf_cont[i][m]);
            let mut op_cyc = Vec::with_capacity(qs.len());
            let mut op_res: [Vec<NodeId>; 3] = Default::default();
            let mut op_pen = Vec::with_capacity(qs.len());
            for (q, &w) in qs.iter().enumerate() {
                let bits = op.allowed_quant_bits[q];
                let c = perf::op_cycles_smooth_node(tape, op, shape, bits, pf, platform);
                op_cyc.push(tape.mul(w, c));
                let r = perf::op_resources_node(tape, op, shape, bits, pf, platform)?;
                for (k, node) in r.into_iter().enumerate() {
                    op_res[k].push(tape.mul(w, node));
                }
                op_pen.push(tape.scale(w, surrogate.penalty(bits)?));
            }
            let op_cyc = tape.sum(&op_cyc);
            cyc.push(tape.mul(g[m], op_cyc));
            for k in 0..3 {
                let s = tape.sum(&op_res[k]);
                res_terms[k].push(tape.mul(g[m], s));
            }
            if op.kind != OpKind::Identity {
                let weights = perf::op_weight_count(op, shape) as f64;
                weight_terms.push(tape.scale(g[m], weights));
                depth_terms.push(g[m]);
                let p = tape.sum(&op_pen);
                pen_terms.push(tape.mul(g[m], p));
            }
        }
        block_cycles.push(tape.sum(&cyc));
    }

    // accuracy surrogate over expected descriptors
    let weights = tape.sum(&weight_terms);
    let weights = tape.add_const(weights, 1.0);
    let log_params = tape.log(weights);
    let depth = tape.sum(&depth_terms);
    let pen = tape.sum(&pen_terms);
    let pen = tape.scale(pen, 1.0 / n.max(1) as f64);
    let acc_loss = accuracy::surrogate_acc_loss_node(tape, surrogate, log_params, depth, pen);

    let ms_per_cycle = 1.0 / (platform.clock_mhz * 1e3);
    let perf_loss = match objective.perf_mode {
        PerfMode::LatencySum => {
            let total = tape.sum(&block_cycles);
            tape.scale(total, ms_per_cycle)
        }
        PerfMode::ThroughputMax => {
            let mut m = block_cycles[0];
            for &c in &block_cycles[1..] {
                m = tape.smooth_max(m, c, platform.smooth_sharpness);
            }
            tape.scale(m, ms_per_cycle)
        }
    };

    let ub = objective.res_ub(platform).as_array();
    let res = [0, 1, 2].map(|k| tape.sum(&res_terms[k]));
    let over: Vec<NodeId> = (0..3)
        .map(|k| {
            let shifted = tape.add_const(res[k], -ub[k]);
            let frac = tape.scale(shifted, 1.0 / ub[k]);
            tape.softplus(frac, cfg.penalty_sharpness)
        })
        .collect();
    let exponent = tape.sum(&over);
    let powered = tape.exp_base(objective.penalty_base, exponent);
    let penalty = tape.scale(powered, objective.beta);
    let product = tape.mul(acc_loss, perf_loss);
    let loss = if objective.beta == 0.0 {
        product
    } else {
        tape.add(product, penalty)
    };
    Ok(RelaxedLoss { loss, acc_loss, perf_loss, penalty, res })
}

/// Index of the largest entry; the lowest index wins ties.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Discrete point from a relaxed state: argmax op, argmax bitwidth at that op,
/// and the op's `pf_cont` rounded half-up into its range.
pub fn derive_discrete(state: &RelaxedState, space: &SearchSpace) -> Result<DesignPoint, SearchError> {
    state.check_shapes(space)?;
    let cands = space.candidates(&state.bundle_id)?;
    let mut p = state.skeleton_point(space)?;
    for i in 0..space.num_blocks {
        let m = argmax(&state.theta[i]);
        let op = &cands[m];
        let q = argmax(&state.phi[i][m]);
        let r = op.pf_range;
        let pf = (state.pf_cont[i][m] + 0.5)
            .floor()
            .clamp(r.min as f64, r.max as f64) as u32;
        p.op_choice[i] = m;
        p.quant_bits[i] = op.allowed_quant_bits[q];
        p.pf[i] = pf;
    }
    Ok(p)
}

/// The discrete objective with the surrogate evaluator, the hard clamp on the
/// penalty exponent, and whether resources fit under `RES_ub`.
pub fn discrete_objective(
    point: &DesignPoint,
    space: &SearchSpace,
    platform: &PlatformModel,
    surrogate: &SurrogateParams,
    objective: &Objective,
) -> Result<(ObjectiveTerms, bool), SearchError> {
    let report = perf::evaluate(point, space, platform)?;
    let acc = surrogate.acc_loss(space, point)?;
    let fits = report.resources.fits_within(&objective.res_ub(platform));
    Ok((objective.terms(acc, &report, platform), fits))
}

/// Uniform sample on the state's skeleton: only ops, bitwidths and pf vary.
pub fn sample_on_skeleton<R: Rng + ?Sized>(
    state: &RelaxedState,
    space: &SearchSpace,
    rng: &mut R,
) -> Result<DesignPoint, SearchError> {
    let cands = space.candidates(&state.bundle_id)?;
    let mut p = state.skeleton_point(space)?;
    for i in 0..space.num_blocks {
        let m = rng.gen_range(0..cands.len());
        let op = &cands[m];
        p.op_choice[i] = m;
        p.quant_bits[i] = op.allowed_quant_bits[rng.gen_range(0..op.allowed_quant_bits.len())];
        p.pf[i] = rng.gen_range(op.pf_range.min..=op.pf_range.max);
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EddRecord {
    pub epoch: usize,
    pub loss: f64,
    pub acc_loss: f64,
    pub perf_loss: f64,
    pub penalty: f64,
    pub tau: f64,
    /// Discrete objective of the point derived before this epoch's step.
    pub derived_objective: f64,
    pub derived_fits: bool,
    pub derived_accuracy: f64,
    pub derived_latency_ms: f64,
    pub derived_resource_scalar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EddOutcome {
    /// Best point derived along the run (including after the last step).
    pub best: DesignPoint,
    pub best_terms: ObjectiveTerms,
    pub best_fits: bool,
    /// Epoch whose pre-step state produced `best`; `epochs` for the final state.
    pub best_epoch: usize,
    pub state: RelaxedState,
    pub records: Vec<EddRecord>,
}

fn step_family(
    state: &mut RelaxedState,
    vars: &[VarId],
    grads: &BTreeMap<VarId, f64>,
    lr: f64,
    clip: Option<f64>,
) -> Result<(), SearchError> {
    if lr == 0.0 || vars.is_empty() {
        return Ok(());
    }
    let mut params: BTreeMap<VarId, f64> = vars.iter().map(|&v| (v, state.get(v))).collect();
    let g: BTreeMap<VarId, f64> = vars.iter().map(|&v| (v, grads.get(&v).copied().unwrap_or(0.0))).collect();
    autodiff::sgd_step(&mut params, &g, lr, clip)?;
    for (v, x) in params {
        state.set(v, x);
    }
    Ok(())
}

pub fn edd_search(
    space: &SearchSpace,
    platform: &PlatformModel,
    surrogate: &SurrogateParams,
    objective: &Objective,
    cfg: &EddConfig,
) -> Result<EddOutcome, SearchError> {
    cfg.check()?;
    objective.check()?;
    surrogate.check_for(space)?;
    let mut state = RelaxedState::init(space, cfg)?;
    let cands = space.candidates(&state.bundle_id)?;
    let (n, m, q) = (space.num_blocks, cands.len(), space.quant_choices);
    let theta_vars: Vec<VarId> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| state.theta_var(i, j)).collect();
    let phi_vars: Vec<VarId> = (0..n)
        .flat_map(|i| (0..m).flat_map(move |j| (0..q).map(move |k| (i, j, k))))
        .map(|(i, j, k)| state.phi_var(i, j, k))
        .collect();
    let pf_vars: Vec<VarId> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| state.pf_var(i, j)).collect();

    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Derived> = None;
    for epoch in 0..cfg.epochs {
        let tau = cfg.gumbel.tau_at(epoch);
        let mut tape = Tape::new();
        let mut rng = seed::rng_for(cfg.seed, "edd-gumbel", epoch as u64);
        let parts = build_relaxed_loss(&state, space, platform, surrogate, objective, cfg, tau, &mut tape, &mut rng)?;
        let loss = tape.value(parts.loss);
        if !loss.is_finite() {
            return Err(SearchError::NonFinite { epoch, last_state: Box::new(state) });
        }
        let grads = tape.grad_all(parts.loss)?;
        let derived = derive_discrete(&state, space)?;
        let e = evaluate_point(&derived, space, platform, surrogate, objective)?;
        let fits = e.perf.resources.fits_within(&objective.res_ub(platform));
        keep_better(&mut best, Derived { point: derived, terms: e.terms, fits, epoch });
        records.push(EddRecord {
            epoch,
            loss,
            acc_loss: tape.value(parts.acc_loss),
            perf_loss: tape.value(parts.perf_loss),
            penalty: if objective.beta == 0.0 { 0.0 } else { tape.value(parts.penalty) },
            tau,
            derived_objective: e.terms.total,
            derived_fits: fits,
            derived_accuracy: e.accuracy,
            derived_latency_ms: e.perf.latency_ms,
            derived_resource_scalar: e.resource_scalar,
        });
        step_family(&mut state, &theta_vars, &grads, cfg.lr_theta, cfg.grad_clip)?;
        step_family(&mut state, &phi_vars, &grads, cfg.lr_phi, cfg.grad_clip)?;
        step_family(&mut state, &pf_vars, &grads, cfg.lr_pf, cfg.grad_clip)?;
        state.clamp_pf(&cands);
    }
    let last = derive_discrete(&state, space)?;
    let (terms, fits) = discrete_objective(&last, space, platform, surrogate, objective)?;
    keep_better(&mut best, Derived { point: last, terms, fits, epoch: cfg.epochs });
    let best = best.expect("final point considered");
    Ok(EddOutcome {
        best: best.point,
        best_terms: best.terms,
        best_fits: best.fits,
        best_epoch: best.epoch,
        state,
        records,
    })
}

struct Derived {
    point: DesignPoint,
    terms: ObjectiveTerms,
    fits: bool,
    epoch: usize,
}

/// Fitting points beat non-fitting ones, then lower objective wins; the
/// earlier point is kept on ties.
fn keep_better(best: &mut Option<Derived>, cand: Derived) {
    let better = match best {
        None => true,
        Some(b) => (cand.fits && !b.fits) || (cand.fits == b.fits && cand.terms.total < b.terms.total),
    };
    if better {
        *best = Some(cand);
    }
}
