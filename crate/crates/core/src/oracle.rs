//! Tile-level simulator of the template accelerator.
//!
//! The simulator walks the output tiles of an op: spatial tiles in row-major
//! order, with channel tiles inside each one. Each tile's work and traffic are
//! integer shares of the op's totals, allocated with cumulative floors so the
//! shares add up exactly:
//!
//! * MACs, input and output bits of a spatial tile are split across its
//!   channel tiles in proportion to channel width;
//! * weight bits are streamed across all tiles in proportion to tile volume.
//!
//! A tile costs `max(ceil(macs / lanes), ceil(bits / (8 * bw)))` cycles
//! (compute overlaps IO through double buffering). The op costs the sum over
//! tiles plus the platform's per-op overhead.

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::perf::{self, PerfError, PlatformModel};
use crate::space::{DesignPoint, OpCandidate, OpKind, SearchSpace, SlotShape};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid tile schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSchedule {
    pub tile_h: u32,
    pub tile_w: u32,
    pub tile_c: u32,
    /// Concurrent multiplies, `2^pf * 16/q`.
    pub lanes: u64,
}

impl TileSchedule {
    pub fn check(&self) -> Result<(), OracleError> {
        if self.tile_h == 0 || self.tile_w == 0 || self.tile_c == 0 {
            return Err(OracleError::InvalidSchedule("tile dimensions must be >= 1".into()));
        }
        if self.lanes == 0 {
            return Err(OracleError::InvalidSchedule("lanes must be >= 1".into()));
        }
        Ok(())
    }
}

/// How the oracle picks tile sizes for each op.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum SchedulePolicy {
    /// Largest tile whose activations fit `buffer_kbit`, found by repeatedly
    /// halving the largest tile dimension.
    LargestFit { buffer_kbit: f64 },
    /// Fixed tile sizes for every op (clipped to the shape).
    Fixed { tile_h: u32, tile_w: u32, tile_c: u32 },
}

impl SchedulePolicy {
    pub fn from_platform(platform: &PlatformModel) -> Self {
        SchedulePolicy::LargestFit { buffer_kbit: platform.buffer_kbit }
    }

    pub fn schedule(&self, op: &OpCandidate, shape: &SlotShape, bits: u32, pf: u32) -> TileSchedule {
        let lanes = perf::lanes(pf, bits);
        let ct = tiled_channels(op, shape);
        match *self {
            SchedulePolicy::Fixed { tile_h, tile_w, tile_c } => TileSchedule {
                tile_h: tile_h.max(1),
                tile_w: tile_w.max(1),
                tile_c: tile_c.max(1),
                lanes,
            },
            SchedulePolicy::LargestFit { buffer_kbit } => {
                let budget = buffer_kbit * 1024.0;
                let (mut th, mut tw, mut tc) = (shape.h.max(1), shape.w.max(1), ct.max(1));
                let footprint = |th: u32, tw: u32, tc: u32| {
                    let px = th as f64 * tw as f64;
                    let mut elems = px * shape.c_in as f64 + px * tc as f64;
                    if op.kind == OpKind::MbConv {
                        elems += px * op.expanded_channels(shape.c_in) as f64;
                    }
                    elems * bits as f64
                };
                while footprint(th, tw, tc) > budget && (th > 1 || tw > 1 || tc > 1) {
                    if tc >= th && tc >= tw && tc > 1 {
                        tc = tc.div_ceil(2);
                    } else if th >= tw && th > 1 {
                        th = th.div_ceil(2);
                    } else {
                        tw = tw.div_ceil(2);
                    }
                }
                TileSchedule { tile_h: th, tile_w: tw, tile_c: tc, lanes }
            }
        }
    }
}

/// Channel dimension the oracle tiles over for `op`.
pub fn tiled_channels(op: &OpCandidate, shape: &SlotShape) -> u32 {
    match op.kind {
        OpKind::DwConv | OpKind::Pool2x2 => shape.c_in,
        _ => shape.c_out,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileEvent {
    pub index: u64,
    pub h0: u32,
    pub w0: u32,
    pub c0: u32,
    pub th: u32,
    pub tw: u32,
    pub tc: u32,
    pub macs: u64,
    pub bits: u64,
    pub weight_bits: u64,
    pub compute_cycles: u64,
    pub io_cycles: u64,
    pub cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub cycles: u64,
    pub macs_executed: u64,
    pub bits_moved: u64,
    pub weight_bits_moved: u64,
    pub tiles: Vec<TileEvent>,
}

impl SimResult {
    pub fn bytes_moved(&self) -> f64 {
        self.bits_moved as f64 / 8.0
    }
}

/// Share of `total` assigned to the interval `[lo, hi)` of `whole`.
fn share(total: u64, lo: u64, hi: u64, whole: u64) -> u64 {
    if whole == 0 {
        return 0;
    }
    let t = total as u128;
    let w = whole as u128;
    ((t * hi as u128) / w - (t * lo as u128) / w) as u64
}

/// Runs the tile loop for one op at `bits` precision.
pub fn simulate_op(
    op: &OpCandidate,
    shape: &SlotShape,
    bits: u32,
    schedule: &TileSchedule,
    platform: &PlatformModel,
) -> Result<SimResult, OracleError> {
    schedule.check()?;
    let (h, w) = (shape.h, shape.w);
    let ct = tiled_channels(op, shape);
    let th = schedule.tile_h.min(h.max(1));
    let tw = schedule.tile_w.min(w.max(1));
    let tc = schedule.tile_c.min(ct.max(1));
    let mpp = perf::macs_per_pixel(op, shape);
    let (in_elems, out_elems, weight_elems) = perf::op_traffic_elems(op, shape);
    let area = shape.area();
    let q = bits as u64;
    // per-pixel input/output bits (exact: traffic is area * channels)
    let in_bits_pp = in_elems.checked_div(area).unwrap_or(0) * q;
    let out_bits_pp = out_elems.checked_div(area).unwrap_or(0) * q;
    let weight_bits = weight_elems * q;
    let volume = area * ct as u64;

    let mut res = SimResult {
        cycles: 0,
        macs_executed: 0,
        bits_moved: 0,
        weight_bits_moved: 0,
        tiles: Vec::new(),
    };
    let mut vol_before = 0u64;
    let mut index = 0u64;
    let mut h0 = 0;
    while h0 < h {
        let eh = th.min(h - h0);
        let mut w0 = 0;
        while w0 < w {
            let ew = tw.min(w - w0);
            let px = eh as u64 * ew as u64;
            let mut c0 = 0;
            while c0 < ct {
                let ec = tc.min(ct - c0);
                let (lo, hi) = (c0 as u64, (c0 + ec) as u64);
                let macs = share(px * mpp, lo, hi, ct as u64);
                let act_bits = share(px * in_bits_pp, lo, hi, ct as u64)
                    + share(px * out_bits_pp, lo, hi, ct as u64);
                let v = px * ec as u64;
                let wbits = share(weight_bits, vol_before, vol_before + v, volume);
                vol_before += v;
                let tile_bits = act_bits + wbits;
                let compute_cycles = macs.div_ceil(schedule.lanes);
                let io_cycles = perf::memory_cycles(tile_bits, platform.bw_bytes_per_cycle);
                let cycles = compute_cycles.max(io_cycles);
                res.cycles += cycles;
                res.macs_executed += macs;
                res.bits_moved += tile_bits;
                res.weight_bits_moved += wbits;
                res.tiles.push(TileEvent {
                    index,
                    h0,
                    w0,
                    c0,
                    th: eh,
                    tw: ew,
                    tc: ec,
                    macs,
                    bits: tile_bits,
                    weight_bits: wbits,
                    compute_cycles,
                    io_cycles,
                    cycles,
                });
                index += 1;
                c0 += ec;
            }
            w0 += ew;
        }
        h0 += eh;
    }
    res.cycles += platform.overhead_cycles_per_op;
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCheck {
    pub slot: usize,
    pub kind: OpKind,
    pub analytical: u64,
    pub simulated: u64,
    pub rel_error: f64,
    pub flagged: bool,
    pub schedule: TileSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckReport {
    pub tolerance: f64,
    pub ops: Vec<OpCheck>,
    pub analytical_total: u64,
    pub simulated_total: u64,
    pub max_rel_error: f64,
    pub flagged: usize,
}

/// `|a - s| / max(s, 1)`
pub fn relative_error(analytical: u64, simulated: u64) -> f64 {
    (analytical as f64 - simulated as f64).abs() / (simulated.max(1) as f64)
}

/// Runs the analytical model and the simulator on every slot of `point`.
/// Returns the report and the per-slot simulations (for tile traces).
pub fn crosscheck(
    point: &DesignPoint,
    space: &SearchSpace,
    platform: &PlatformModel,
    policy: &SchedulePolicy,
    tolerance: f64,
) -> Result<(CrosscheckReport, Vec<SimResult>), OracleError> {
    let slots = perf::slot_ops(point, space)?;
    let mut ops = Vec::with_capacity(slots.len());
    let mut sims = Vec::with_capacity(slots.len());
    for (slot, (_, op, shape, bits, pf)) in slots.iter().enumerate() {
        let analytical = perf::op_cycles_discrete(op, shape, *bits, *pf, platform)?.cycles;
        let schedule = policy.schedule(op, shape, *bits, *pf);
        let sim = simulate_op(op, shape, *bits, &schedule, platform)?;
        let rel_error = relative_error(analytical, sim.cycles);
        ops.push(OpCheck {
            slot,
            kind: op.kind,
            analytical,
            simulated: sim.cycles,
            rel_error,
            flagged: rel_error > tolerance,
            schedule,
        });
        sims.push(sim);
    }
    let report = CrosscheckReport {
        tolerance,
        analytical_total: ops.iter().map(|o| o.analytical).sum(),
        simulated_total: ops.iter().map(|o| o.simulated).sum(),
        max_rel_error: ops.iter().map(|o| o.rel_error).fold(0.0, f64::max),
        flagged: ops.iter().filter(|o| o.flagged).count(),
        ops,
    };
    Ok((report, sims))
}

/// Writes the per-tile event trace of every slot as CSV.
pub fn write_tile_csv<W: Write>(sims: &[SimResult], out: W) -> Result<(), OracleError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "slot", "tile", "h0", "w0", "c0", "th", "tw", "tc", "macs", "bits", "weight_bits",
        "compute_cycles", "io_cycles", "cycles",
    ])
    .map_err(csv_io)?;
    for (slot, sim) in sims.iter().enumerate() {
        for t in &sim.tiles {
            wtr.write_record(&[
                slot.to_string(),
                t.index.to_string(),
                t.h0.to_string(),
                t.w0.to_string(),
                t.c0.to_string(),
                t.th.to_string(),
                t.tw.to_string(),
                t.tc.to_string(),
                t.macs.to_string(),
                t.bits.to_string(),
                t.weight_bits.to_string(),
                t.compute_cycles.to_string(),
                t.io_cycles.to_string(),
                t.cycles.to_string(),
            ])
            .map_err(csv_io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> OracleError {
    OracleError::Io(std::io::Error::other(e.to_string()))
}
