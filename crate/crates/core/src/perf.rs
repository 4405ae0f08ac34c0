//! Analytical latency and resource model for the template accelerator.
//!
//! Each slot runs on an IP with `2^pf` multiplier lanes. A lane packs
//! `16 / q` low-precision multiplies, so an op needs `macs / (2^pf * 16/q)`
//! compute cycles. The op also moves its input, output and weights once at
//! `bw_bytes_per_cycle`. The op's cost is the roofline max of the two, plus a
//! fixed per-op overhead.
//!
//! The discrete form uses integer ceilings and is what the cycle oracle
//! reproduces. The smooth form drops the ceilings and swaps `max` for a
//! log-sum-exp so it can be differentiated with respect to `pf`.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::autodiff::{NodeId, Tape};
use crate::serde_util::bits_map;
use crate::space::{DesignPoint, OpCandidate, OpKind, SearchSpace, SlotShape, SpaceError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerfError {
    #[error("pf {pf} outside [{min}, {max}] for {kind}")]
    PfOutOfRange { kind: OpKind, pf: u32, min: u32, max: u32 },
    #[error("bitwidth {bits} not allowed for {kind}")]
    BitsNotAllowed { kind: OpKind, bits: u32 },
    #[error("platform has no dsp_per_lane entry for {0}-bit")]
    MissingLaneCost(u32),
    #[error("invalid platform: {0}")]
    InvalidPlatform(String),
    #[error("invalid design point: {0}")]
    InvalidPoint(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelMode {
    /// One folded engine per op kind, reused layer after layer.
    Recursive,
    /// One stage per layer, all streaming concurrently.
    Pipelined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Compute,
    Memory,
}

fn default_sharpness() -> f64 {
    2.0
}

fn default_buffer_kbit() -> f64 {
    512.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformModel {
    pub clock_mhz: f64,
    pub dsp_budget: u64,
    pub bram_budget_kbit: u64,
    pub lut_budget: u64,
    pub bw_bytes_per_cycle: f64,
    #[serde(with = "bits_map")]
    pub dsp_per_lane: BTreeMap<u32, f64>,
    pub lut_per_lane: f64,
    #[serde(default)]
    pub overhead_cycles_per_op: u64,
    pub accel_mode: AccelMode,
    /// Smooth-max sharpness `s`, in cycles.
    #[serde(default = "default_sharpness")]
    pub smooth_sharpness: f64,
    /// On-chip activation buffer used by the oracle's tiling policy.
    #[serde(default = "default_buffer_kbit")]
    pub buffer_kbit: f64,
}

impl PlatformModel {
    pub fn check(&self) -> Result<(), PerfError> {
        let bad = |m: &str| Err(PerfError::InvalidPlatform(m.to_string()));
        if !(self.clock_mhz.is_finite() && self.clock_mhz > 0.0) {
            return bad("clock_mhz must be positive");
        }
        if self.dsp_budget == 0 || self.bram_budget_kbit == 0 || self.lut_budget == 0 {
            return bad("resource budgets must be positive");
        }
        if !(self.bw_bytes_per_cycle.is_finite() && self.bw_bytes_per_cycle > 0.0) {
            return bad("bw_bytes_per_cycle must be positive");
        }
        if self
            .dsp_per_lane
            .values()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("dsp_per_lane entries must be finite and nonnegative");
        }
        if !(self.lut_per_lane.is_finite() && self.lut_per_lane >= 0.0) {
            return bad("lut_per_lane must be finite and nonnegative");
        }
        if !(self.smooth_sharpness.is_finite() && self.smooth_sharpness > 0.0) {
            return bad("smooth_sharpness must be positive");
        }
        if !(self.buffer_kbit.is_finite() && self.buffer_kbit > 0.0) {
            return bad("buffer_kbit must be positive");
        }
        Ok(())
    }

    /// Platform checks plus lane costs for every bitwidth the space uses.
    pub fn check_for(&self, space: &SearchSpace) -> Result<(), PerfError> {
        self.check()?;
        let mut bits: BTreeSet<u32> = space.quant_bits.iter().copied().collect();
        for b in &space.bundles {
            for op in &b.ops {
                bits.extend(op.allowed_quant_bits.iter().copied());
            }
        }
        match bits.into_iter().find(|b| !self.dsp_per_lane.contains_key(b)) {
            Some(b) => Err(PerfError::MissingLaneCost(b)),
            None => Ok(()),
        }
    }

    pub fn lane_cost(&self, bits: u32) -> Result<f64, PerfError> {
        self.dsp_per_lane
            .get(&bits)
            .copied()
            .ok_or(PerfError::MissingLaneCost(bits))
    }

    pub fn budget(&self) -> Resources {
        Resources {
            dsp: self.dsp_budget as f64,
            bram_kbit: self.bram_budget_kbit as f64,
            lut: self.lut_budget as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Resources {
    pub dsp: f64,
    pub bram_kbit: f64,
    pub lut: f64,
}

impl Resources {
    pub fn as_array(&self) -> [f64; 3] {
        [self.dsp, self.bram_kbit, self.lut]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Resources { dsp: a[0], bram_kbit: a[1], lut: a[2] }
    }

    pub fn fits_within(&self, budget: &Resources) -> bool {
        self.dsp <= budget.dsp && self.bram_kbit <= budget.bram_kbit && self.lut <= budget.lut
    }

    pub fn max(&self, other: &Resources) -> Resources {
        Resources {
            dsp: self.dsp.max(other.dsp),
            bram_kbit: self.bram_kbit.max(other.bram_kbit),
            lut: self.lut.max(other.lut),
        }
    }
}

impl std::ops::Add for Resources {
    type Output = Resources;
    fn add(self, o: Resources) -> Resources {
        Resources {
            dsp: self.dsp + o.dsp,
            bram_kbit: self.bram_kbit + o.bram_kbit,
            lut: self.lut + o.lut,
        }
    }
}

/// Multiply-accumulates of `op` on `shape`.
pub fn op_macs(op: &OpCandidate, shape: &SlotShape) -> u64 {
    macs_per_pixel(op, shape) * shape.area()
}

/// MACs per output pixel; every op is linear in H*W.
pub fn macs_per_pixel(op: &OpCandidate, shape: &SlotShape) -> u64 {
    let (c_in, c_out) = (shape.c_in as u64, shape.c_out as u64);
    let k2 = (op.kernel_size as u64).pow(2);
    match op.kind {
        OpKind::Conv1x1 => c_in * c_out,
        OpKind::DwConv => c_in * k2,
        OpKind::MbConv => {
            let e = op.expanded_channels(shape.c_in);
            c_in * e + e * k2 + e * c_out
        }
        OpKind::Pool2x2 | OpKind::Identity => 0,
    }
}

/// Weight elements of `op` on `shape`.
pub fn op_weight_count(op: &OpCandidate, shape: &SlotShape) -> u64 {
    let (c_in, c_out) = (shape.c_in as u64, shape.c_out as u64);
    let k2 = (op.kernel_size as u64).pow(2);
    match op.kind {
        OpKind::Conv1x1 => c_in * c_out,
        OpKind::DwConv => c_in * k2,
        OpKind::MbConv => {
            let e = op.expanded_channels(shape.c_in);
            c_in * e + e * k2 + e * c_out
        }
        OpKind::Pool2x2 | OpKind::Identity => 0,
    }
}

/// Element counts (input, output, weights) that cross the memory interface.
/// Identity is fused into its neighbours and moves nothing.
pub fn op_traffic_elems(op: &OpCandidate, shape: &SlotShape) -> (u64, u64, u64) {
    match op.kind {
        OpKind::Identity => (0, 0, 0),
        OpKind::Pool2x2 => (shape.area() * shape.c_in as u64, shape.area() * shape.c_out as u64, 0),
        _ => (
            shape.area() * shape.c_in as u64,
            shape.area() * shape.c_out as u64,
            op_weight_count(op, shape),
        ),
    }
}

/// Bits moved by `op` at `bits` precision.
pub fn op_traffic_bits(op: &OpCandidate, shape: &SlotShape, bits: u32) -> u64 {
    let (i, o, w) = op_traffic_elems(op, shape);
    (i + o + w) * bits as u64
}

/// Values packed per lane at `bits` precision.
pub fn pack(bits: u32) -> u64 {
    (16 / bits.max(1)).max(1) as u64
}

/// Concurrent multiplies: `2^pf * 16/q`.
pub fn lanes(pf: u32, bits: u32) -> u64 {
    (1u64 << pf) * pack(bits)
}

/// Cycles needed to move `bits` over the memory interface.
pub fn memory_cycles(bits: u64, bw_bytes_per_cycle: f64) -> u64 {
    if bits == 0 {
        0
    } else {
        (bits as f64 / (8.0 * bw_bytes_per_cycle)).ceil() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCycles {
    pub cycles: u64,
    pub compute: u64,
    pub memory: u64,
    pub bound: BoundKind,
}

fn check_impl(op: &OpCandidate, bits: u32, pf: u32) -> Result<(), PerfError> {
    if !op.pf_range.contains(pf) {
        return Err(PerfError::PfOutOfRange {
            kind: op.kind,
            pf,
            min: op.pf_range.min,
            max: op.pf_range.max,
        });
    }
    if !op.allowed_quant_bits.contains(&bits) {
        return Err(PerfError::BitsNotAllowed { kind: op.kind, bits });
    }
    Ok(())
}

/// Exact cycle count with integer ceilings.
pub fn op_cycles_discrete(
    op: &OpCandidate,
    shape: &SlotShape,
    bits: u32,
    pf: u32,
    platform: &PlatformModel,
) -> Result<OpCycles, PerfError> {
    check_impl(op, bits, pf)?;
    let macs = op_macs(op, shape);
    let compute = macs.div_ceil(lanes(pf, bits));
    let memory = memory_cycles(op_traffic_bits(op, shape, bits), platform.bw_bytes_per_cycle);
    let bound = if memory > compute { BoundKind::Memory } else { BoundKind::Compute };
    Ok(OpCycles {
        cycles: compute.max(memory) + platform.overhead_cycles_per_op,
        compute,
        memory,
        bound,
    })
}

/// `s * ln(exp(a/s) + exp(b/s))` evaluated without overflow.
pub fn smooth_max(a: f64, b: f64, sharpness: f64) -> f64 {
    let m = a.max(b);
    m + sharpness * (-(a - b).abs() / sharpness).exp().ln_1p()
}

/// Real-valued compute and memory terms for a continuous `pf`.
pub fn smooth_terms(op: &OpCandidate, shape: &SlotShape, bits: u32, pf: f64, platform: &PlatformModel) -> (f64, f64) {
    let compute = op_macs(op, shape) as f64 / (pf.exp2() * pack(bits) as f64);
    let memory = op_traffic_bits(op, shape, bits) as f64 / (8.0 * platform.bw_bytes_per_cycle);
    (compute, memory)
}

/// Differentiable cycle estimate. Ops with no work cost exactly the overhead.
pub fn op_cycles_smooth(op: &OpCandidate, shape: &SlotShape, bits: u32, pf: f64, platform: &PlatformModel) -> f64 {
    let (compute, memory) = smooth_terms(op, shape, bits, pf, platform);
    let overhead = platform.overhead_cycles_per_op as f64;
    if compute == 0.0 && memory == 0.0 {
        return overhead;
    }
    smooth_max(compute, memory, platform.smooth_sharpness) + overhead
}

/// [`op_cycles_smooth`] recorded on a tape with `pf` as a node.
pub fn op_cycles_smooth_node(
    tape: &mut Tape,
    op: &OpCandidate,
    shape: &SlotShape,
    bits: u32,
    pf: NodeId,
    platform: &PlatformModel,
) -> NodeId {
    let macs = op_macs(op, shape) as f64;
    let traffic = op_traffic_bits(op, shape, bits) as f64;
    let overhead = platform.overhead_cycles_per_op as f64;
    if macs == 0.0 && traffic == 0.0 {
        return tape.constant(overhead);
    }
    // macs / pack * 2^-pf
    let neg_pf = tape.neg(pf);
    let inv_par = tape.exp_base(2.0, neg_pf);
    let compute = tape.scale(inv_par, macs / pack(bits) as f64);
    let memory = tape.constant(traffic / (8.0 * platform.bw_bytes_per_cycle));
    let m = tape.smooth_max(compute, memory, platform.smooth_sharpness);
    tape.add_const(m, overhead)
}

/// Resource cost of one IP instance for `op` at (`bits`, `pf`). `pf` may be
/// fractional for the relaxed search.
pub fn op_resources(
    op: &OpCandidate,
    shape: &SlotShape,
    bits: u32,
    pf: f64,
    platform: &PlatformModel,
) -> Result<Resources, PerfError> {
    if matches!(op.kind, OpKind::Identity | OpKind::Pool2x2) {
        return Ok(Resources::default());
    }
    let par = pf.exp2();
    Ok(Resources {
        dsp: par * platform.lane_cost(bits)?,
        bram_kbit: bram_kbit(op, shape, bits),
        lut: par * platform.lut_per_lane,
    })
}

/// Weight storage plus a (k-1)-row line buffer.
pub fn bram_kbit(op: &OpCandidate, shape: &SlotShape, bits: u32) -> f64 {
    if matches!(op.kind, OpKind::Identity | OpKind::Pool2x2) {
        return 0.0;
    }
    let weight_bits = op_weight_count(op, shape) * bits as u64;
    let line_bits = (op.kernel_size as u64 - 1) * shape.w as u64 * shape.c_in as u64 * bits as u64;
    (weight_bits + line_bits) as f64 / 1024.0
}

/// Resource nodes (dsp, bram, lut) for a continuous `pf` node.
pub fn op_resources_node(
    tape: &mut Tape,
    op: &OpCandidate,
    shape: &SlotShape,
    bits: u32,
    pf: NodeId,
    platform: &PlatformModel,
) -> Result<[NodeId; 3], PerfError> {
    if matches!(op.kind, OpKind::Identity | OpKind::Pool2x2) {
        let z = tape.constant(0.0);
        return Ok([z, z, z]);
    }
    let par = tape.exp_base(2.0, pf);
    let dsp = tape.scale(par, platform.lane_cost(bits)?);
    let bram = tape.constant(bram_kbit(op, shape, bits));
    let lut = tape.scale(par, platform.lut_per_lane);
    Ok([dsp, bram, lut])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub mode: AccelMode,
    pub per_op_cycles: Vec<u64>,
    pub per_op_bound: Vec<BoundKind>,
    pub total_cycles: u64,
    pub max_op_cycles: u64,
    pub latency_ms: f64,
    /// `None` when the network does no work at all (zero latency).
    pub throughput_fps: Option<f64>,
    pub resources: Resources,
}

impl PerfReport {
    pub fn feasible(&self, platform: &PlatformModel, latency_target_ms: f64) -> bool {
        self.resources.fits_within(&platform.budget()) && self.latency_ms <= latency_target_ms
    }
}

/// Per-slot (candidate, shape, bits, pf) for a point, checked against the space.
pub fn slot_ops(
    point: &DesignPoint,
    space: &SearchSpace,
) -> Result<Vec<(usize, OpCandidate, SlotShape, u32, u32)>, PerfError> {
    if let crate::space::Validity::Invalid(msg) = space.validate(point) {
        return Err(PerfError::InvalidPoint(msg));
    }
    let cands = space.candidates(&point.bundle_id)?;
    let shapes = space.shapes(point)?;
    Ok(shapes
        .into_iter()
        .enumerate()
        .map(|(i, sh)| {
            let m = point.op_choice[i];
            (m, cands[m].clone(), sh, point.quant_bits[i], point.pf[i])
        })
        .collect())
}

/// Aggregates per-op latency and resources for a whole point.
pub fn evaluate(point: &DesignPoint, space: &SearchSpace, platform: &PlatformModel) -> Result<PerfReport, PerfError> {
    let slots = slot_ops(point, space)?;
    let mut per_op_cycles = Vec::with_capacity(slots.len());
    let mut per_op_bound = Vec::with_capacity(slots.len());
    let mut shared: BTreeMap<usize, Resources> = BTreeMap::new();
    let mut summed = Resources::default();
    for (m, op, shape, bits, pf) in &slots {
        let c = op_cycles_discrete(op, shape, *bits, *pf, platform)?;
        per_op_cycles.push(c.cycles);
        per_op_bound.push(c.bound);
        let r = op_resources(op, shape, *bits, *pf as f64, platform)?;
        summed = summed + r;
        let e = shared.entry(*m).or_default();
        *e = e.max(&r);
    }
    let total_cycles: u64 = per_op_cycles.iter().sum();
    let max_op_cycles = per_op_cycles.iter().copied().max().unwrap_or(0);
    let latency_ms = total_cycles as f64 / (platform.clock_mhz * 1e3);
    let (throughput_fps, resources) = match platform.accel_mode {
        AccelMode::Recursive => {
            let tp = (latency_ms > 0.0).then(|| 1000.0 / latency_ms);
            let r = shared.values().fold(Resources::default(), |acc, r| acc + *r);
            (tp, r)
        }
        AccelMode::Pipelined => {
            let tp = (max_op_cycles > 0).then(|| platform.clock_mhz * 1e6 / max_op_cycles as f64);
            (tp, summed)
        }
    };
    Ok(PerfReport {
        mode: platform.accel_mode,
        per_op_cycles,
        per_op_bound,
        total_cycles,
        max_op_cycles,
        latency_ms,
        throughput_fps,
        resources,
    })
}

/// Weighted, budget-normalized resource usage collapsed to one number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceWeights {
    pub dsp: f64,
    pub bram: f64,
    pub lut: f64,
}

impl Default for ResourceWeights {
    fn default() -> Self {
        ResourceWeights { dsp: 0.5, bram: 0.3, lut: 0.2 }
    }
}

impl ResourceWeights {
    pub fn scalar(&self, used: &Resources, platform: &PlatformModel) -> f64 {
        self.dsp * used.dsp / platform.dsp_budget as f64
            + self.bram * used.bram_kbit / platform.bram_budget_kbit as f64
            + self.lut * used.lut / platform.lut_budget as f64
    }
}
