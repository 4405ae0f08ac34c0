//! Stochastic coordinate descent.
//!
//! Each iteration picks one coordinate uniformly, proposes a neighbouring value
//! for it, and accepts the proposal only if it satisfies every hard constraint
//! (resources within budget, latency within target) and strictly lowers the
//! accuracy loss. Restarts run in parallel from independent initial points.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::{check_bundles, evaluate_point, Objective, PointEval, SearchError};
use crate::accuracy::AccuracyEvaluator;
use crate::perf::PlatformModel;
use crate::seed;
use crate::space::{DesignPoint, SearchSpace, Validity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coord {
    Replications,
    Pools,
    Channels,
    /// Candidate op per slot (extension of the macro knobs).
    Ops,
    Quant,
    Pf,
}

impl Coord {
    pub const ALL: [Coord; 6] = [
        Coord::Replications,
        Coord::Pools,
        Coord::Channels,
        Coord::Ops,
        Coord::Quant,
        Coord::Pf,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScdConfig {
    pub max_iters: usize,
    pub coords: Vec<Coord>,
    /// Max steps in the ordered choice list, per coordinate (default 1).
    #[serde(default)]
    pub proposal_radius: BTreeMap<Coord, usize>,
    /// Stop a restart after this many consecutive rejections.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_init_attempts")]
    pub init_attempts: usize,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Restrict to these bundles (e.g. the selected Pareto front).
    #[serde(default)]
    pub bundles: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
}

/// What to do with a feasible proposal whose objective equals the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Reject it: accepted objectives strictly decrease.
    None,
    /// Accept it if latency strictly drops. Knobs that leave the accuracy
    /// loss unchanged (pools, pf) can then still move toward cheaper designs.
    #[default]
    Latency,
}

fn default_restarts() -> usize {
    1
}

fn default_init_attempts() -> usize {
    1000
}

impl ScdConfig {
    pub fn check(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidConfig(m.to_string()));
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1");
        }
        if self.coords.is_empty() {
            return bad("coords must not be empty");
        }
        if self.restarts == 0 {
            return bad("restarts must be >= 1");
        }
        if self.init_attempts == 0 {
            return bad("init_attempts must be >= 1");
        }
        if self.proposal_radius.values().any(|&r| r == 0) {
            return bad("proposal_radius entries must be >= 1");
        }
        Ok(())
    }

    fn radius(&self, c: Coord) -> usize {
        self.proposal_radius.get(&c).copied().unwrap_or(1)
    }
}

/// One line of the SCD trace. `coord` is `None` for a restart's initial point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScdRecord {
    pub restart: usize,
    pub iter: usize,
    pub coord: Option<Coord>,
    pub proposal: DesignPoint,
    pub feasible: bool,
    pub objective: f64,
    pub accepted: bool,
    pub accuracy: f64,
    pub latency_ms: f64,
    pub resource_scalar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScdOutcome {
    pub best: DesignPoint,
    pub best_objective: f64,
    pub best_restart: usize,
    pub restart_bests: Vec<f64>,
    pub records: Vec<ScdRecord>,
}

/// Moves index `i` in `0..len` to a different index at most `radius` away,
/// uniformly among those inside the range.
fn step_index(rng: &mut ChaCha8Rng, i: usize, len: usize, radius: usize) -> usize {
    if len <= 1 {
        return i;
    }
    let lo = i.saturating_sub(radius);
    let hi = (i + radius).min(len - 1);
    let j = rng.gen_range(lo..hi);
    if j >= i {
        j + 1
    } else {
        j
    }
}

/// Proposes a neighbour of `p` along `coord`. The result is always valid.
pub fn propose(
    space: &SearchSpace,
    p: &DesignPoint,
    coord: Coord,
    radius: usize,
    rng: &mut ChaCha8Rng,
) -> DesignPoint {
    let mut q = p.clone();
    let n = p.replications;
    let cands = space
        .candidates(&p.bundle_id)
        .expect("point bundle exists in space");
    match coord {
        Coord::Replications => {
            let cur = space.replications.iter().position(|&r| r == n).unwrap_or(0);
            let next = space.replications[step_index(rng, cur, space.replications.len(), radius)];
            q.replications = next;
            if next < n {
                q.op_choice.truncate(next);
                q.channels.truncate(next);
                q.quant_bits.truncate(next);
                q.pf.truncate(next);
                q.pools.retain(|&pos| pos < next);
            } else {
                for i in n..next {
                    let last = i - 1;
                    q.op_choice.push(q.op_choice[last]);
                    q.quant_bits.push(q.quant_bits[last]);
                    q.pf.push(q.pf[last]);
                    let c = q.channels[last];
                    let choices = &space.channel_choices[i];
                    q.channels.push(if choices.contains(&c) { c } else { choices[0] });
                }
            }
        }
        Coord::Pools => {
            let capable = space.bundle(&p.bundle_id).is_some_and(|b| b.downsample_capable);
            let allowed: Vec<usize> = space.pool_positions.iter().copied().filter(|&x| x < n).collect();
            if capable && !allowed.is_empty() {
                let pos = allowed[rng.gen_range(0..allowed.len())];
                if !q.pools.remove(&pos) {
                    q.pools.insert(pos);
                }
            }
        }
        Coord::Channels => {
            let i = rng.gen_range(0..n);
            let choices = &space.channel_choices[i];
            let cur = choices.iter().position(|&c| c == p.channels[i]).unwrap_or(0);
            q.channels[i] = choices[step_index(rng, cur, choices.len(), radius)];
        }
        Coord::Ops => {
            let i = rng.gen_range(0..n);
            let m = step_index(rng, p.op_choice[i], cands.len(), radius);
            let old = &cands[p.op_choice[i]];
            let new = &cands[m];
            q.op_choice[i] = m;
            // bitwidths belong to the op, so a new op draws its own
            let _ = old;
            q.quant_bits[i] = new.allowed_quant_bits[rng.gen_range(0..new.allowed_quant_bits.len())];
            q.pf[i] = new.pf_range.clamp(p.pf[i]);
        }
        Coord::Quant => {
            let i = rng.gen_range(0..n);
            let bits = &cands[p.op_choice[i]].allowed_quant_bits;
            let cur = bits.iter().position(|&b| b == p.quant_bits[i]).unwrap_or(0);
            q.quant_bits[i] = bits[step_index(rng, cur, bits.len(), radius)];
        }
        Coord::Pf => {
            let i = rng.gen_range(0..n);
            let r = cands[p.op_choice[i]].pf_range;
            let cur = (p.pf[i] - r.min) as usize;
            q.pf[i] = r.min + step_index(rng, cur, r.len(), radius) as u32;
        }
    }
    debug_assert_eq!(space.validate(&q), Validity::Valid);
    q
}

fn record(restart: usize, iter: usize, coord: Option<Coord>, p: &DesignPoint, e: &PointEval, accepted: bool) -> ScdRecord {
    ScdRecord {
        restart,
        iter,
        coord,
        proposal: p.clone(),
        feasible: e.feasible,
        objective: e.acc_loss(),
        accepted,
        accuracy: e.accuracy,
        latency_ms: e.perf.latency_ms,
        resource_scalar: e.resource_scalar,
    }
}

fn initial_point(
    space: &SearchSpace,
    platform: &PlatformModel,
    evaluator: &dyn AccuracyEvaluator,
    objective: &Objective,
    cfg: &ScdConfig,
    restart: usize,
) -> Result<(DesignPoint, PointEval), SearchError> {
    for attempt in 0..cfg.init_attempts {
        let mut rng = seed::rng_for(cfg.seed, "scd-init", (restart * cfg.init_attempts + attempt) as u64);
        let bundle = cfg
            .bundles
            .as_ref()
            .map(|ids| ids[rng.gen_range(0..ids.len())].clone());
        let p = space.sample_with(&mut rng, bundle.as_deref())?;
        let e = evaluate_point(&p, space, platform, evaluator, objective)?;
        if e.feasible {
            return Ok((p, e));
        }
    }
    Err(SearchError::Infeasible { attempts: cfg.init_attempts })
}

/// One restart: returns its records, best point and objective.
pub fn scd_restart(
    space: &SearchSpace,
    platform: &PlatformModel,
    evaluator: &dyn AccuracyEvaluator,
    objective: &Objective,
    cfg: &ScdConfig,
    restart: usize,
) -> Result<(DesignPoint, f64, Vec<ScdRecord>), SearchError> {
    let (mut current, eval) = initial_point(space, platform, evaluator, objective, cfg, restart)?;
    let mut best = eval.acc_loss();
    let mut latency = eval.perf.latency_ms;
    let mut records = vec![record(restart, 0, None, &current, &eval, true)];
    let mut rng = seed::rng_for(cfg.seed, "scd-walk", restart as u64);
    let mut rejections = 0usize;
    for iter in 1..=cfg.max_iters {
        let coord = cfg.coords[rng.gen_range(0..cfg.coords.len())];
        let proposal = propose(space, &current, coord, cfg.radius(coord), &mut rng);
        let e = evaluate_point(&proposal, space, platform, evaluator, objective)?;
        let tie = cfg.tie_break == TieBreak::Latency && e.acc_loss() == best && e.perf.latency_ms < latency;
        let accepted = e.feasible && (e.acc_loss() < best || tie);
        records.push(record(restart, iter, Some(coord), &proposal, &e, accepted));
        if accepted {
            current = proposal;
            best = e.acc_loss();
            latency = e.perf.latency_ms;
            rejections = 0;
        } else {
            rejections += 1;
            if cfg.patience.is_some_and(|p| rejections >= p) {
                break;
            }
        }
    }
    Ok((current, best, records))
}

/// Runs `cfg.restarts` independent descents and keeps the best.
pub fn scd_search(
    space: &SearchSpace,
    platform: &PlatformModel,
    evaluator: &dyn AccuracyEvaluator,
    objective: &Objective,
    cfg: &ScdConfig,
) -> Result<ScdOutcome, SearchError> {
    cfg.check()?;
    objective.check()?;
    check_bundles(space, &cfg.bundles)?;
    let runs: Vec<Result<(DesignPoint, f64, Vec<ScdRecord>), SearchError>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| scd_restart(space, platform, evaluator, objective, cfg, r))
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut best_restart = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.1 < runs[best_restart].1 {
            best_restart = r;
        }
    }
    let restart_bests = runs.iter().map(|r| r.1).collect();
    let best = runs[best_restart].0.clone();
    let best_objective = runs[best_restart].1;
    let records = runs.into_iter().flat_map(|r| r.2).collect();
    Ok(ScdOutcome { best, best_objective, best_restart, restart_bests, records })
}
