//! Particle swarm co-search.
//!
//! Each particle is a real vector that decodes to a design point of one fixed
//! bundle; particles of the same bundle form a group. Velocities follow
//! `v = w*v + c1*r1*(pbest - x) + c2*r2*(gbest - x) + c3*r3*(groupbest - x)`.
//!
//! Position layout for a space with `N` slots and `P` pool positions:
//!
//! ```text
//! [rep_idx, (op, channel_idx, quant_rank, pf) x N, pool_on x P]
//! ```
//!
//! Decoding clamps every coordinate into its range and rounds to the nearest
//! choice index. Slots past the decoded replication count are ignored.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_bundles, evaluate_point, Objective, PointEval, SearchError};
use crate::accuracy::AccuracyEvaluator;
use crate::perf::{PerfReport, PlatformModel};
use crate::seed;
use crate::space::{DesignPoint, OpCandidate, SearchSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub iters: usize,
    #[serde(default = "default_w")]
    pub inertia: f64,
    #[serde(default = "default_c")]
    pub cognitive: f64,
    #[serde(default = "default_c")]
    pub social: f64,
    #[serde(default = "default_c3")]
    pub group_social: f64,
    #[serde(default = "default_lambda")]
    pub fitness_lambda: f64,
    #[serde(default)]
    pub bundles: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_w() -> f64 {
    0.7
}

fn default_c() -> f64 {
    1.4
}

fn default_c3() -> f64 {
    0.7
}

fn default_lambda() -> f64 {
    1.0
}

impl PsoConfig {
    pub fn new(swarm_size: usize, iters: usize, seed: u64) -> Self {
        PsoConfig {
            swarm_size,
            iters,
            inertia: default_w(),
            cognitive: default_c(),
            social: default_c(),
            group_social: default_c3(),
            fitness_lambda: default_lambda(),
            bundles: None,
            seed,
        }
    }

    pub fn check(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidConfig(m.to_string()));
        if self.swarm_size == 0 {
            return bad("swarm_size must be >= 1");
        }
        let coeffs = [self.inertia, self.cognitive, self.social, self.group_social, self.fitness_lambda];
        if coeffs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return bad("inertia, cognitive, social, group_social and fitness_lambda must be finite and >= 0");
        }
        Ok(())
    }
}

/// `accuracy - lambda * (latency hinge + summed resource hinges)`, each hinge
/// normalized by its target.
pub fn fitness(
    accuracy: f64,
    perf: &PerfReport,
    platform: &PlatformModel,
    objective: &Objective,
    lambda: f64,
) -> f64 {
    let target = objective.latency_target_ms;
    let latency = ((perf.latency_ms - target) / target).max(0.0);
    accuracy - lambda * latency - lambda * objective.overshoot(&perf.resources, platform)
}

/// Coordinate bounds and decoding for one bundle.
#[derive(Debug, Clone)]
pub struct Encoding {
    bundle_id: String,
    cands: Vec<OpCandidate>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    num_blocks: usize,
}

const SLOT_DIMS: usize = 4;

impl Encoding {
    pub fn new(space: &SearchSpace, bundle_id: &str) -> Result<Self, SearchError> {
        let cands = space.candidates(bundle_id)?;
        let n = space.num_blocks;
        let pf_lo = cands.iter().map(|c| c.pf_range.min).min().unwrap_or(0) as f64;
        let pf_hi = cands.iter().map(|c| c.pf_range.max).max().unwrap_or(0) as f64;
        let mut lo = vec![0.0];
        let mut hi = vec![(space.replications.len() - 1) as f64];
        for i in 0..n {
            lo.extend([0.0, 0.0, 0.0, pf_lo]);
            hi.extend([
                (cands.len() - 1) as f64,
                (space.channel_choices[i].len() - 1) as f64,
                (space.quant_choices - 1) as f64,
                pf_hi,
            ]);
        }
        let capable = space.bundle(bundle_id).is_some_and(|b| b.downsample_capable);
        for _ in &space.pool_positions {
            lo.push(0.0);
            hi.push(if capable { 1.0 } else { 0.0 });
        }
        Ok(Encoding { bundle_id: bundle_id.to_string(), cands, lo, hi, num_blocks: n })
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    fn index(x: f64, len: usize) -> usize {
        (x.round().max(0.0) as usize).min(len.saturating_sub(1))
    }

    pub fn decode(&self, space: &SearchSpace, x: &[f64]) -> DesignPoint {
        let n = space.replications[Self::index(x[0], space.replications.len())];
        let mut p = DesignPoint {
            bundle_id: self.bundle_id.clone(),
            replications: n,
            op_choice: Vec::with_capacity(n),
            channels: Vec::with_capacity(n),
            pools: Default::default(),
            quant_bits: Vec::with_capacity(n),
            pf: Vec::with_capacity(n),
        };
        for i in 0..n {
            let s = &x[1 + SLOT_DIMS * i..1 + SLOT_DIMS * (i + 1)];
            let m = Self::index(s[0], self.cands.len());
            let op = &self.cands[m];
            let ch = &space.channel_choices[i];
            p.op_choice.push(m);
            p.channels.push(ch[Self::index(s[1], ch.len())]);
            p.quant_bits
                .push(op.allowed_quant_bits[Self::index(s[2], op.allowed_quant_bits.len())]);
            let pf = s[3].round().max(0.0) as u32;
            p.pf.push(op.pf_range.clamp(pf));
        }
        let base = 1 + SLOT_DIMS * self.num_blocks;
        for (k, &pos) in space.pool_positions.iter().enumerate() {
            if pos < n && self.hi[base + k] > 0.0 && x[base + k] >= 0.5 {
                p.pools.insert(pos);
            }
        }
        p
    }

    pub fn encode(&self, space: &SearchSpace, p: &DesignPoint) -> Vec<f64> {
        let mut x = self.lo.clone();
        x[0] = space
            .replications
            .iter()
            .position(|&r| r == p.replications)
            .unwrap_or(0) as f64;
        for i in 0..self.num_blocks {
            // slots past n copy the last active slot
            let j = i.min(p.replications - 1);
            let m = p.op_choice[j];
            let op = &self.cands[m];
            let ch = &space.channel_choices[i];
            let s = 1 + SLOT_DIMS * i;
            x[s] = m as f64;
            x[s + 1] = ch.iter().position(|&c| c == p.channels[j]).unwrap_or(0) as f64;
            x[s + 2] = op
                .allowed_quant_bits
                .iter()
                .position(|&b| b == p.quant_bits[j])
                .unwrap_or(0) as f64;
            x[s + 3] = p.pf[j] as f64;
        }
        let base = 1 + SLOT_DIMS * self.num_blocks;
        for (k, pos) in space.pool_positions.iter().enumerate() {
            x[base + k] = if p.pools.contains(pos) { 1.0 } else { 0.0 };
        }
        x
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    /// Index into the run's group list.
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoRecord {
    pub iter: usize,
    pub particle: usize,
    pub fitness: f64,
    pub feasible: bool,
    pub is_new_gbest: bool,
    pub accuracy: f64,
    pub latency_ms: f64,
    pub resource_scalar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBest {
    pub bundle_id: String,
    pub particle: Option<usize>,
    pub fitness: f64,
    pub point: Option<DesignPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoOutcome {
    pub best: DesignPoint,
    pub best_fitness: f64,
    pub best_particle: usize,
    /// gbest fitness after each iteration, starting with the initial swarm.
    pub gbest_history: Vec<f64>,
    pub groups: Vec<GroupBest>,
    pub records: Vec<PsoRecord>,
}

struct Best {
    position: Vec<f64>,
    fitness: f64,
    particle: usize,
}

fn evaluate_swarm(
    space: &SearchSpace,
    platform: &PlatformModel,
    evaluator: &dyn AccuracyEvaluator,
    objective: &Objective,
    encodings: &[Encoding],
    swarm: &[Particle],
) -> Result<Vec<PointEval>, SearchError> {
    let evals: Vec<Result<PointEval, SearchError>> = swarm
        .par_iter()
        .map(|pt| {
            let p = encodings[pt.group].decode(space, &pt.position);
            evaluate_point(&p, space, platform, evaluator, objective)
        })
        .collect();
    evals.into_iter().collect()
}

pub fn pso_search(
    space: &SearchSpace,
    platform: &PlatformModel,
    evaluator: &dyn AccuracyEvaluator,
    objective: &Objective,
    cfg: &PsoConfig,
) -> Result<PsoOutcome, SearchError> {
    cfg.check()?;
    objective.check()?;
    check_bundles(space, &cfg.bundles)?;
    let ids: Vec<String> = match &cfg.bundles {
        Some(ids) => ids.clone(),
        None => space.bundles.iter().map(|b| b.id.clone()).collect(),
    };
    let encodings = ids
        .iter()
        .map(|id| Encoding::new(space, id))
        .collect::<Result<Vec<_>, _>>()?;

    let mut swarm = Vec::with_capacity(cfg.swarm_size);
    for k in 0..cfg.swarm_size {
        let group = k % ids.len();
        let mut rng = seed::rng_for(cfg.seed, "pso-init", k as u64);
        let p = space.sample_with(&mut rng, Some(&ids[group]))?;
        let x = encodings[group].encode(space, &p);
        swarm.push(Particle {
            velocity: vec![0.0; x.len()],
            best_position: x.clone(),
            position: x,
            best_fitness: f64::NEG_INFINITY,
            group,
        });
    }

    let mut groups: Vec<Option<Best>> = (0..ids.len()).map(|_| None).collect();
    let mut global: Option<Best> = None;
    let mut records = Vec::new();
    let mut gbest_history = Vec::with_capacity(cfg.iters + 1);

    for iter in 0..=cfg.iters {
        if iter > 0 {
            let g = global.as_ref().expect("global best set after iteration 0");
            for (k, pt) in swarm.iter_mut().enumerate() {
                let gb = groups[pt.group].as_ref().expect("group best set");
                let enc = &encodings[pt.group];
                let (lo, hi) = enc.bounds();
                let mut rng = seed::rng_for(cfg.seed, "pso-move", (iter * cfg.swarm_size + k) as u64);
                for d in 0..pt.position.len() {
                    let (r1, r2, r3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
                    let x = pt.position[d];
                    // the global best may belong to another bundle; its
                    // coordinates are clamped into this particle's bounds
                    let gx = g.position.get(d).copied().unwrap_or(x).clamp(lo[d], hi[d]);
                    let v = cfg.inertia * pt.velocity[d]
                        + cfg.cognitive * r1 * (pt.best_position[d] - x)
                        + cfg.social * r2 * (gx - x)
                        + cfg.group_social * r3 * (gb.position[d] - x);
                    let vmax = hi[d] - lo[d];
                    pt.velocity[d] = v.clamp(-vmax, vmax);
                    pt.position[d] = x + pt.velocity[d];
                }
                enc.clamp(&mut pt.position);
            }
        }
        let evals = evaluate_swarm(space, platform, evaluator, objective, &encodings, &swarm)?;
        for (k, (pt, e)) in swarm.iter_mut().zip(&evals).enumerate() {
            let f = fitness(e.accuracy, &e.perf, platform, objective, cfg.fitness_lambda);
            if f > pt.best_fitness {
                pt.best_fitness = f;
                pt.best_position = pt.position.clone();
            }
            let gb = &mut groups[pt.group];
            if gb.as_ref().is_none_or(|b| f > b.fitness) {
                *gb = Some(Best { position: pt.position.clone(), fitness: f, particle: k });
            }
            let is_new_gbest = global.as_ref().is_none_or(|b| f > b.fitness);
            if is_new_gbest {
                global = Some(Best { position: pt.position.clone(), fitness: f, particle: k });
            }
            records.push(PsoRecord {
                iter,
                particle: k,
                fitness: f,
                feasible: e.feasible,
                is_new_gbest,
                accuracy: e.accuracy,
                latency_ms: e.perf.latency_ms,
                resource_scalar: e.resource_scalar,
            });
        }
        let g = global.as_ref().expect("swarm is non-empty");
        debug_assert!(gbest_history.last().is_none_or(|&h| g.fitness >= h));
        gbest_history.push(g.fitness);
    }

    let g = global.expect("swarm is non-empty");
    let best = encodings[swarm[g.particle].group].decode(space, &g.position);
    let groups = groups
        .into_iter()
        .zip(&ids)
        .enumerate()
        .map(|(gi, (b, id))| GroupBest {
            bundle_id: id.clone(),
            particle: b.as_ref().map(|b| b.particle),
            fitness: b.as_ref().map_or(f64::NEG_INFINITY, |b| b.fitness),
            point: b.as_ref().map(|b| encodings[gi].decode(space, &b.position)),
        })
        .collect();
    Ok(PsoOutcome {
        best,
        best_fitness: g.fitness,
        best_particle: g.particle,
        gbest_history,
        groups,
        records,
    })
}
