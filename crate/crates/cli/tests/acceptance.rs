//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use codesign::accuracy::{proxy_train_eval, ProxyDataset};
use codesign::autodiff::{self, NodeId, Tape, VarId};
use codesign::config::{EvaluatorConfig, LoadedConfig, StrategyConfig};
use codesign::oracle::{self, SchedulePolicy, TileSchedule};
use codesign::pareto::pareto_front;
use codesign::perf::{self, AccelMode, PlatformModel, Resources};
use codesign::search::{edd, evaluate_point, pso, scd};
use codesign::seed::rng_for;
use codesign::space::{OpCandidate, OpKind, PfRange, SlotShape};

const RANDOM_CONFIGS: usize = 1000;
const DIVISIBLE_MIN: usize = 200;
const ORACLE_REL_TOL: f64 = 0.05;
/// Smaller on-chip buffers force many tiny tiles, and per-tile ceilings then
/// dominate the oracle's total.
const MIN_BUFFER_KBIT: f64 = 64.0;
const GRAD_CASES: usize = 100;
const PRIMITIVE_REL_TOL: f64 = 1e-4;
const RELAXED_REL_TOL: f64 = 1e-3;
const PARETO_INSTANCES: usize = 500;
const SCD_MIN_HITS: usize = 15;
const PSO_SEEDS: u64 = 10;
const EDD_SEEDS: u64 = 10;
const EDD_BASELINES: usize = 100;
const EDD_MIN_WINS: usize = 9;
const GUMBEL_SAMPLES: usize = 100_000;
const GUMBEL_MEAN_TOL: f64 = 0.01;
const GUMBEL_DRAWS: usize = 10_000;
const GUMBEL_CONCENTRATION: f64 = 0.999;
const GUMBEL_MIN_SHARE: f64 = 0.99;
const PROXY_MIN_ACC: f64 = 0.9;
const PROXY_LOSS_TOL: f64 = 1e-6;

type Outcome = Result<String, String>;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> LoadedConfig {
    LoadedConfig::load(&configs().join(name)).expect("shipped config loads")
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn test_platform(bw: f64, overhead: u64) -> PlatformModel {
    PlatformModel {
        clock_mhz: 100.0,
        dsp_budget: 360,
        bram_budget_kbit: 4320,
        lut_budget: 70_000,
        bw_bytes_per_cycle: bw,
        dsp_per_lane: BTreeMap::from([(4, 0.25), (8, 0.5), (16, 1.0)]),
        lut_per_lane: 40.0,
        overhead_cycles_per_op: overhead,
        accel_mode: AccelMode::Recursive,
        smooth_sharpness: 2.0,
        buffer_kbit: 512.0,
    }
}

fn candidate(kind: OpKind, k: u32, e: f64) -> OpCandidate {
    OpCandidate {
        kind,
        kernel_size: k,
        expansion_ratio: e,
        allowed_quant_bits: vec![4, 8, 16],
        pf_range: PfRange::new(0, 7),
    }
}

fn random_candidate(rng: &mut ChaCha8Rng) -> OpCandidate {
    match rng.gen_range(0..4) {
        0 => candidate(OpKind::Conv1x1, 1, 1.0),
        1 => candidate(OpKind::DwConv, [3, 5, 7][rng.gen_range(0..3)], 1.0),
        2 => candidate(OpKind::MbConv, [3, 5, 7][rng.gen_range(0..3)], [1.0, 3.0, 6.0][rng.gen_range(0..3)]),
        _ => candidate(OpKind::Identity, 1, 1.0),
    }
}

// 1. analytical cycles vs the tile oracle

/// Whether every tile of `s` carries an equal, exactly divisible share, in
/// which case per-tile ceilings cannot add up to more than the whole-op ones.
fn evenly_divisible(op: &OpCandidate, sh: &SlotShape, bits: u32, s: &TileSchedule, bw: u64) -> bool {
    let ct = oracle::tiled_channels(op, sh) as u64;
    let (h, w) = (sh.h as u64, sh.w as u64);
    let (th, tw, tc) = (s.tile_h as u64, s.tile_w as u64, s.tile_c as u64);
    if h % th != 0 || w % tw != 0 || ct % tc != 0 {
        return false;
    }
    let tiles = (h / th) * (w / tw) * (ct / tc);
    let macs = perf::op_macs(op, sh);
    let traffic = perf::op_traffic_bits(op, sh, bits);
    let (_, _, weights) = perf::op_traffic_elems(op, sh);
    let weight_bits = weights * bits as u64;
    if macs % tiles != 0 || traffic % tiles != 0 || weight_bits % tiles != 0 {
        return false;
    }
    (macs / tiles) % s.lanes == 0 && (traffic / tiles) % (8 * bw) == 0
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut exact = 0usize;
    let mut attempts = 0usize;
    while exact < DIVISIBLE_MIN {
        attempts += 1;
        if attempts > 200_000 {
            return Err(format!("only {exact} divisible configurations found"));
        }
        let op = random_candidate(&mut rng);
        let side = [4, 8, 16, 32][rng.gen_range(0..4)];
        let sh = SlotShape::new(side, side, [8, 16, 32][rng.gen_range(0..3)], [8, 16, 32, 64][rng.gen_range(0..4)]);
        let bits = [4, 8, 16][rng.gen_range(0..3)];
        let pf = rng.gen_range(0..=5);
        let bw = [1u64, 2, 4][rng.gen_range(0..3)];
        let p = test_platform(bw as f64, rng.gen_range(0..20));
        let ct = oracle::tiled_channels(&op, &sh);
        let s = TileSchedule {
            tile_h: side >> rng.gen_range(0..=2),
            tile_w: side >> rng.gen_range(0..=2),
            tile_c: (ct >> rng.gen_range(0..=2)).max(1),
            lanes: perf::lanes(pf, bits),
        };
        if !evenly_divisible(&op, &sh, bits, &s, bw) {
            continue;
        }
        let a = perf::op_cycles_discrete(&op, &sh, bits, pf, &p).map_err(|e| e.to_string())?.cycles;
        let sim = oracle::simulate_op(&op, &sh, bits, &s, &p).map_err(|e| e.to_string())?;
        if a != sim.cycles {
            return Err(format!("divisible {op:?} {sh:?} q{bits} pf{pf} {s:?}: analytical {a} vs simulated {}", sim.cycles));
        }
        exact += 1;
    }

    let mut worst = 0.0f64;
    for i in 0..RANDOM_CONFIGS {
        let op = random_candidate(&mut rng);
        // every fourth configuration is a 7x7 map at pf 5
        let sh = if i % 4 == 0 {
            SlotShape::new(7, 7, rng.gen_range(1..=96), rng.gen_range(1..=96))
        } else {
            SlotShape::new(rng.gen_range(1..=56), rng.gen_range(1..=56), rng.gen_range(1..=96), rng.gen_range(1..=96))
        };
        let bits = [4, 8, 16][rng.gen_range(0..3)];
        let pf = if i % 4 == 0 { 5 } else { rng.gen_range(0..=7) };
        let mut p = test_platform(rng.gen_range(0.5..16.0), rng.gen_range(0..200));
        p.buffer_kbit = rng.gen_range(MIN_BUFFER_KBIT..1024.0);
        let s = SchedulePolicy::from_platform(&p).schedule(&op, &sh, bits, pf);
        let a = perf::op_cycles_discrete(&op, &sh, bits, pf, &p).map_err(|e| e.to_string())?.cycles;
        let sim = oracle::simulate_op(&op, &sh, bits, &s, &p).map_err(|e| e.to_string())?;
        let err = oracle::relative_error(a, sim.cycles);
        if err > worst {
            worst = err;
        }
        if err > ORACLE_REL_TOL {
            return Err(format!("{op:?} {sh:?} q{bits} pf{pf}: analytical {a} vs simulated {} ({err:.4})", sim.cycles));
        }
    }
    Ok(format!("{exact} divisible exact; worst random rel error {worst:.4} over {RANDOM_CONFIGS}"))
}

// 2. gradients

fn primitive_case(kind: usize, x: &[f64], tape: &mut Tape) -> NodeId {
    let v: Vec<NodeId> = x.iter().enumerate().map(|(i, &xi)| tape.var(VarId(i as u64), xi)).collect();
    match kind {
        0 => {
            let a = tape.mul(v[0], v[1]);
            tape.add(a, v[2])
        }
        1 => {
            let a = tape.sub(v[0], v[2]);
            tape.div(a, v[1])
        }
        2 => {
            let e = tape.exp(v[0]);
            let l = tape.log(v[1]);
            tape.mul(e, l)
        }
        3 => {
            let p = tape.pow(v[1], 2.5);
            tape.mul(p, v[2])
        }
        4 => tape.logsumexp(v[0], v[2]),
        5 => {
            let s = tape.softmax(&v);
            let a = tape.scale(s[0], 3.0);
            tape.add(a, s[2])
        }
        6 => tape.smooth_max(v[0], v[2], 1.5),
        7 => tape.softplus(v[0], 0.3),
        8 => tape.exp_base(2.5, v[0]),
        _ => {
            let n = tape.neg(v[0]);
            let s = tape.sum(&[n, v[1], v[2]]);
            tape.add_const(s, 1.5)
        }
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let h = 1e-6;
    for case in 0..GRAD_CASES {
        let kind = case % 10;
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(0.3..3.0), rng.gen_range(-2.0..2.0)];
        let mut tape = Tape::new();
        let y = primitive_case(kind, &x, &mut tape);
        let g = tape.grad_all(y).map_err(|e| e.to_string())?;
        for i in 0..3 {
            let eval = |d: f64| {
                let mut xs = x;
                xs[i] += d;
                let mut t = Tape::new();
                let y = primitive_case(kind, &xs, &mut t);
                t.value(y)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = g.get(&VarId(i as u64)).copied().unwrap_or(0.0);
            if rel(an, fd, 1e-6) > PRIMITIVE_REL_TOL {
                return Err(format!("primitive {kind} var {i}: {an} vs {fd}"));
            }
        }
    }

    let p = test_platform(4.0, 0);
    for case in 0..GRAD_CASES {
        let op = random_candidate(&mut rng);
        let sh = SlotShape::new(rng.gen_range(1..=32), rng.gen_range(1..=32), rng.gen_range(1..=64), rng.gen_range(1..=64));
        let bits = [4, 8, 16][rng.gen_range(0..3)];
        let pf = rng.gen_range(0.2..6.8);
        let mut tape = Tape::new();
        let x = tape.var(VarId(0), pf);
        let y = perf::op_cycles_smooth_node(&mut tape, &op, &sh, bits, x, &p);
        let an = tape.grad(y, &[VarId(0)]).map_err(|e| e.to_string())?[&VarId(0)];
        let hp = 1e-5;
        let fd = (perf::op_cycles_smooth(&op, &sh, bits, pf + hp, &p) - perf::op_cycles_smooth(&op, &sh, bits, pf - hp, &p)) / (2.0 * hp);
        if rel(an, fd, 1e-6) > PRIMITIVE_REL_TOL {
            return Err(format!("smooth cycles case {case}: {an} vs {fd}"));
        }
    }

    let c = load("toy_edd.toml");
    let sur = match &c.config.evaluator {
        EvaluatorConfig::Surrogate(s) => s.clone(),
        _ => return Err("toy_edd.toml must use the surrogate".into()),
    };
    let cfg = match c.strategy() {
        StrategyConfig::Edd(e) => e,
        _ => return Err("toy_edd.toml must run EDD".into()),
    };
    let mut worst = 0.0f64;
    for case in 0..GRAD_CASES as u64 {
        let mut state = edd::RelaxedState::init(&c.space, &cfg).map_err(|e| e.to_string())?;
        let vars = state.all_vars();
        for &v in &vars {
            let cur = state.get(v);
            state.set(v, cur + rng.gen_range(-1.0..1.0));
        }
        let tau = rng.gen_range(0.5..3.0);
        let loss_at = |s: &edd::RelaxedState| -> Result<(f64, Option<BTreeMap<VarId, f64>>), String> {
            let mut tape = Tape::new();
            let mut noise = rng_for(case, "frozen-gumbel", 0);
            let l = edd::build_relaxed_loss(s, &c.space, &c.config.platform, &sur, &c.config.objective, &cfg, tau, &mut tape, &mut noise)
                .map_err(|e| e.to_string())?;
            Ok((tape.value(l.loss), Some(tape.grad_all(l.loss).map_err(|e| e.to_string())?)))
        };
        let (_, grads) = loss_at(&state)?;
        let grads = grads.unwrap_or_default();
        let v = vars[rng.gen_range(0..vars.len())];
        let x0 = state.get(v);
        let hv = 1e-5 * x0.abs().max(1.0);
        let mut up = state.clone();
        up.set(v, x0 + hv);
        let mut down = state.clone();
        down.set(v, x0 - hv);
        let fd = (loss_at(&up)?.0 - loss_at(&down)?.0) / (2.0 * hv);
        let an = grads.get(&v).copied().unwrap_or(0.0);
        let err = rel(an, fd, 1e-6);
        worst = worst.max(err);
        if err > RELAXED_REL_TOL {
            return Err(format!("relaxed loss case {case} var {v:?}: {an} vs {fd}"));
        }
    }
    Ok(format!(
        "{GRAD_CASES} primitive, {GRAD_CASES} smooth-cycle and {GRAD_CASES} relaxed-loss cases; worst relaxed rel error {worst:.2e}"
    ))
}

// 3. penalty boundary

fn criterion_3() -> Outcome {
    let c = load("toy_scd.toml");
    let p = &c.config.platform;
    let mut obj = c.config.objective.clone();
    for beta in [0.5, 1.0, 3.0] {
        obj.beta = beta;
        let at_ub = obj.penalty(&obj.res_ub(p), p);
        if at_ub != beta {
            return Err(format!("penalty at RES_ub is {at_ub}, expected {beta}"));
        }
        let explicit = Resources { dsp: 10.0, bram_kbit: 20.0, lut: 30.0 };
        obj.res_ub = Some(explicit);
        let v = obj.penalty(&explicit, p);
        obj.res_ub = None;
        if v != beta {
            return Err(format!("penalty at explicit RES_ub is {v}, expected {beta}"));
        }
    }
    obj.beta = 0.0;
    let ev = c.evaluator().map_err(|e| e.to_string())?;
    for seed in 0..200 {
        let pt = c.space.sample_uniform(seed).map_err(|e| e.to_string())?;
        let e = evaluate_point(&pt, &c.space, p, ev.as_ref(), &obj).map_err(|e| e.to_string())?;
        if e.terms.total != e.terms.acc_loss * e.terms.perf_loss {
            return Err(format!("beta = 0 total {} differs from product", e.terms.total));
        }
    }
    Ok("penalty = beta at RES_ub; beta = 0 gives the bare product on 200 points".into())
}

// 4. Pareto front

/// Non-dominated points; of identical points only the first counts.
fn dominance_oracle(pts: &[(f64, f64)]) -> Vec<usize> {
    (0..pts.len())
        .filter(|&i| {
            let p = pts[i];
            !pts.iter().enumerate().any(|(j, &q)| {
                let dominates = q.0 <= p.0 && q.1 >= p.1 && (q.0 < p.0 || q.1 > p.1);
                dominates || (j < i && q == p)
            })
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);
    for inst in 0..PARETO_INSTANCES {
        let n = rng.gen_range(1..=64);
        // a coarse grid forces ties and duplicates
        let coarse = inst % 2 == 0;
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                if coarse {
                    (rng.gen_range(0..6) as f64, rng.gen_range(0..6) as f64)
                } else {
                    (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0))
                }
            })
            .collect();
        let mut got = pareto_front(&pts);
        got.sort_unstable();
        let want = dominance_oracle(&pts);
        if got != want {
            return Err(format!("instance {inst}: {got:?} vs {want:?}"));
        }
    }
    Ok(format!("{PARETO_INSTANCES} instances match the brute-force oracle"))
}

// 5. SCD

fn criterion_5() -> Outcome {
    let c = load("toy_scd.toml");
    let ev = c.evaluator().map_err(|e| e.to_string())?;
    let (space, p, obj) = (&c.space, &c.config.platform, &c.config.objective);
    let pts = space.enumerate(10_000).map_err(|e| e.to_string())?;
    let mut optimum = f64::INFINITY;
    for pt in &pts {
        let e = evaluate_point(pt, space, p, ev.as_ref(), obj).map_err(|e| e.to_string())?;
        if e.feasible {
            optimum = optimum.min(e.acc_loss());
        }
    }
    let StrategyConfig::Scd(mut cfg) = c.strategy() else {
        return Err("toy_scd.toml must run SCD".into());
    };
    let mut checked = 0;
    let mut hits = 0;
    for tie in [scd::TieBreak::Latency, scd::TieBreak::None] {
        cfg.tie_break = tie;
        let out = scd::scd_search(space, p, ev.as_ref(), obj, &cfg).map_err(|e| e.to_string())?;
        for r in 0..cfg.restarts {
            let acc: Vec<_> = out.records.iter().filter(|x| x.restart == r && x.accepted).collect();
            if let Some(bad) = acc.iter().find(|x| !x.feasible) {
                return Err(format!("{tie:?} restart {r}: accepted infeasible iterate {}", bad.iter));
            }
            for w in acc.windows(2) {
                let (a, b) = (w[0], w[1]);
                let improves = match tie {
                    scd::TieBreak::None => b.objective < a.objective,
                    scd::TieBreak::Latency => {
                        b.objective < a.objective || (b.objective == a.objective && b.latency_ms < a.latency_ms)
                    }
                };
                if !improves {
                    return Err(format!("{tie:?} restart {r}: iterate {} does not improve on {}", b.iter, a.iter));
                }
            }
            checked += acc.len();
        }
        if tie == scd::TieBreak::Latency {
            hits = out.restart_bests.iter().filter(|&&b| (b - optimum).abs() <= 1e-12).count();
        }
    }
    let msg = format!(
        "{hits}/{} restarts reach the optimum of {} enumerated points; {checked} accepted iterates feasible and improving",
        cfg.restarts,
        pts.len()
    );
    if hits >= SCD_MIN_HITS {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 6. PSO

fn criterion_6() -> Outcome {
    let c = load("toy_pso.toml");
    let ev = c.evaluator().map_err(|e| e.to_string())?;
    let (space, p, obj) = (&c.space, &c.config.platform, &c.config.objective);
    let StrategyConfig::Pso(cfg) = c.strategy() else {
        return Err("toy_pso.toml must run PSO".into());
    };
    let mut fits = Vec::new();
    for pt in space.enumerate(10_000).map_err(|e| e.to_string())? {
        let e = evaluate_point(&pt, space, p, ev.as_ref(), obj).map_err(|e| e.to_string())?;
        fits.push(pso::fitness(e.accuracy, &e.perf, p, obj, cfg.fitness_lambda));
    }
    fits.sort_by(f64::total_cmp);
    let p95 = fits[(0.95 * (fits.len() - 1) as f64).round() as usize];
    let mut best = Vec::new();
    for seed in 0..PSO_SEEDS {
        let mut s = cfg.clone();
        s.seed = seed;
        let out = pso::pso_search(space, p, ev.as_ref(), obj, &s).map_err(|e| e.to_string())?;
        if let Some(i) = out.gbest_history.windows(2).position(|w| w[1] < w[0]) {
            return Err(format!("seed {seed}: gbest dropped after iteration {i}"));
        }
        best.push(out.best_fitness);
    }
    best.sort_by(f64::total_cmp);
    let median = (best[4] + best[5]) / 2.0;
    if median < p95 {
        return Err(format!("median gbest {median:.5} < enumeration p95 {p95:.5}"));
    }
    Ok(format!("gbest monotone; median gbest {median:.5} >= enumeration p95 {p95:.5}"))
}

// 7. EDD

fn criterion_7() -> Outcome {
    let c = load("toy_edd.toml");
    let EvaluatorConfig::Surrogate(sur) = &c.config.evaluator else {
        return Err("toy_edd.toml must use the surrogate".into());
    };
    let StrategyConfig::Edd(cfg) = c.strategy() else {
        return Err("toy_edd.toml must run EDD".into());
    };
    let (space, p, obj) = (&c.space, &c.config.platform, &c.config.objective);
    let (mut wins, mut feasible) = (0, 0);
    for seed in 0..EDD_SEEDS {
        let mut s = cfg.clone();
        s.seed = seed;
        let out = edd::edd_search(space, p, sur, obj, &s).map_err(|e| e.to_string())?;
        let mut rng = rng_for(seed, "baseline", 0);
        let mut base = Vec::with_capacity(EDD_BASELINES);
        let mut draws = 0;
        while base.len() < EDD_BASELINES {
            draws += 1;
            if draws > 100_000 {
                return Err("too few feasible baselines".into());
            }
            let pt = edd::sample_on_skeleton(&out.state, space, &mut rng).map_err(|e| e.to_string())?;
            let (t, fits) = edd::discrete_objective(&pt, space, p, sur, obj).map_err(|e| e.to_string())?;
            if fits {
                base.push(t.total);
            }
        }
        base.sort_by(f64::total_cmp);
        let median = (base[EDD_BASELINES / 2 - 1] + base[EDD_BASELINES / 2]) / 2.0;
        let report = perf::evaluate(&out.best, space, p).map_err(|e| e.to_string())?;
        let hard = report.resources.fits_within(&obj.res_ub(p));
        wins += (out.best_terms.total < median) as usize;
        feasible += hard as usize;
    }
    let msg = format!("beats baseline median in {wins}/{EDD_SEEDS}, feasible in {feasible}/{EDD_SEEDS}");
    if wins >= EDD_MIN_WINS && feasible >= EDD_MIN_WINS {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// 8. Gumbel-Softmax

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);
    let k = 5;
    let mut mean = vec![0.0; k];
    for _ in 0..GUMBEL_SAMPLES {
        for (m, y) in mean.iter_mut().zip(autodiff::gumbel_softmax_values(&vec![0.7; k], 1.0, &mut rng)) {
            *m += y;
        }
    }
    let dev = mean
        .iter()
        .map(|m| (m / GUMBEL_SAMPLES as f64 - 1.0 / k as f64).abs())
        .fold(0.0, f64::max);
    if dev > GUMBEL_MEAN_TOL {
        return Err(format!("equal-logit mean deviates by {dev:.4}"));
    }
    // the max logit leads the rest by at least 7, so a perturbation flips the
    // winner with probability below 4 / (e^7 + 4) ~ 0.0036
    let logits = [2.0, -5.0, -6.0, -5.5, -7.0];
    let mut concentrated = 0;
    for _ in 0..GUMBEL_DRAWS {
        let y = autodiff::gumbel_softmax_values(&logits, 0.01, &mut rng);
        if y[0] >= GUMBEL_CONCENTRATION {
            concentrated += 1;
        }
    }
    let share = concentrated as f64 / GUMBEL_DRAWS as f64;
    if share < GUMBEL_MIN_SHARE {
        return Err(format!("tau 0.01 concentration in only {share:.4} of draws"));
    }
    Ok(format!("max mean deviation {dev:.4}; concentration share {share:.4}"))
}

// 9. determinism across thread counts

fn run_search(config: &Path, threads: usize, out: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_codesign"))
        .arg("--threads")
        .arg(threads.to_string())
        .arg("--out")
        .arg(out)
        .arg("search")
        .arg(config)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("{} failed: {}", config.display(), String::from_utf8_lossy(&status.stderr)));
    }
    let read = |f: &str| std::fs::read(out.join(f)).map_err(|e| e.to_string());
    Ok((read("summary.json")?, read("trace.jsonl")?))
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = 0;
    for name in ["toy_scd.toml", "toy_pso.toml", "toy_edd.toml", "mixed_proxy_pso.toml"] {
        let cfg = configs().join(name);
        let mut first: Option<(Vec<u8>, Vec<u8>)> = None;
        for threads in [1, 4, 1] {
            let out = tmp.path().join(format!("{name}-{runs}"));
            runs += 1;
            let got = run_search(&cfg, threads, &out)?;
            match &first {
                None => first = Some(got),
                Some(f) if *f == got => {}
                Some(_) => return Err(format!("{name}: output differs with --threads {threads}")),
            }
        }
    }
    Ok(format!("{runs} search runs byte-identical per config"))
}

// 10. proxy trainer

fn criterion_10() -> Outcome {
    let c = load("mixed_proxy_pso.toml");
    let EvaluatorConfig::Proxy(sec) = &c.config.evaluator else {
        return Err("mixed_proxy_pso.toml must use the proxy".into());
    };
    let path = configs().join(sec.dataset.as_ref().ok_or("no dataset path")?);
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let data = ProxyDataset::from_csv_str(&text, sec.val_fraction, c.config.seed).map_err(|e| e.to_string())?;
    let point = c.space.default_point();
    let out = proxy_train_eval(&point, &data, &sec.train, c.config.seed).map_err(|e| e.to_string())?;
    if sec.train.epochs > 50 {
        return Err(format!("trained for {} epochs", sec.train.epochs));
    }
    if let Some(i) = out.train_losses.windows(2).position(|w| w[1] > w[0] + PROXY_LOSS_TOL) {
        return Err(format!("training loss rose at epoch {i}: {:?}", &out.train_losses[i..i + 2]));
    }
    if out.val_accuracy <= PROXY_MIN_ACC {
        return Err(format!("validation accuracy {:.4}", out.val_accuracy));
    }
    Ok(format!(
        "validation accuracy {:.4} after {} epochs; loss {:.4} -> {:.4}",
        out.val_accuracy,
        sec.train.epochs,
        out.train_losses[0],
        out.train_losses[out.train_losses.len() - 1]
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("model/oracle exactness", criterion_1),
        ("gradient checks", criterion_2),
        ("penalty boundary", criterion_3),
        ("pareto correctness", criterion_4),
        ("SCD soundness", criterion_5),
        ("PSO soundness", criterion_6),
        ("EDD effectiveness", criterion_7),
        ("gumbel statistics", criterion_8),
        ("determinism", criterion_9),
        ("proxy trainer", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = f();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("PASS {:>2} {name}: {msg} ({secs:.1}s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg} ({secs:.1}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
