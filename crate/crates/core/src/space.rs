//! The joint architecture/implementation design space.
//!
//! A [`SearchSpace`] describes a single-path network of up to `num_blocks`
//! slots. Every slot picks one of `ops_per_block` candidate operations from the
//! chosen [`Bundle`] (the bundle's compute ops followed by `Identity`), a
//! channel count, a quantization bitwidth and a parallel-factor exponent. A
//! [`DesignPoint`] is one concrete assignment of all of these knobs.
//!
//! Downsampling is controlled only by [`DesignPoint::pools`]: a pool at
//! position `p` halves H and W (floor) for every slot after `p`. Candidate
//! ops never change the spatial shape, so any candidate can replace any other
//! in a slot without touching the rest of the network.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use thiserror::Error;

use crate::seed;

/// Supported fixed-point bitwidths. Lower widths pack `16 / q` values per lane.
pub const SUPPORTED_BITS: [u32; 5] = [1, 2, 4, 8, 16];

const MAX_DIM: u32 = 4096;
const MAX_CHANNELS: u32 = 4096;
const MAX_BLOCKS: usize = 64;
const MAX_PF: u32 = 24;
const MAX_EXPANSION: f64 = 16.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("knob `{0}` has no choices")]
    EmptyChoices(String),
    #[error("feature map collapses to zero at slot {slot} ({h}x{w} before pooling)")]
    ShapeCollapse { slot: usize, h: u32, w: u32 },
    #[error("unknown bundle `{0}`")]
    UnknownBundle(String),
    #[error("invalid design point: {0}")]
    InvalidPoint(String),
    #[error("space has {count} points, more than the enumeration limit {limit}")]
    TooLarge { count: u128, limit: u128 },
    #[error("failed to parse space: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv1x1,
    DwConv,
    MbConv,
    Pool2x2,
    Identity,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv1x1 => "conv1x1",
            OpKind::DwConv => "dw_conv",
            OpKind::MbConv => "mb_conv",
            OpKind::Pool2x2 => "pool2x2",
            OpKind::Identity => "identity",
        }
    }

    /// Ops that can occupy a slot (everything except the downsampling IP).
    pub fn is_slot_candidate(self) -> bool {
        !matches!(self, OpKind::Pool2x2)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Inclusive range of the parallel-factor exponent: `2^pf` multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct PfRange {
    pub min: u32,
    pub max: u32,
}

impl PfRange {
    pub fn new(min: u32, max: u32) -> Self {
        PfRange { min, max }
    }

    pub fn contains(&self, pf: u32) -> bool {
        (self.min..=self.max).contains(&pf)
    }

    pub fn len(&self) -> usize {
        (self.max.saturating_sub(self.min) + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.max < self.min
    }

    pub fn clamp(&self, pf: u32) -> u32 {
        pf.clamp(self.min, self.max)
    }
}

impl From<[u32; 2]> for PfRange {
    fn from(v: [u32; 2]) -> Self {
        PfRange { min: v[0], max: v[1] }
    }
}

impl From<PfRange> for [u32; 2] {
    fn from(r: PfRange) -> Self {
        [r.min, r.max]
    }
}

fn default_kernel() -> u32 {
    1
}

fn default_expansion() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCandidate {
    pub kind: OpKind,
    #[serde(default = "default_kernel")]
    pub kernel_size: u32,
    #[serde(default = "default_expansion")]
    pub expansion_ratio: f64,
    pub allowed_quant_bits: Vec<u32>,
    pub pf_range: PfRange,
}

impl OpCandidate {
    /// The pass-through candidate appended to every bundle's op list.
    pub fn identity(quant_bits: &[u32]) -> Self {
        OpCandidate {
            kind: OpKind::Identity,
            kernel_size: 1,
            expansion_ratio: 1.0,
            allowed_quant_bits: quant_bits.to_vec(),
            pf_range: PfRange::new(0, 0),
        }
    }

    /// Internal channel count of an MBConv block fed with `c_in` channels.
    pub fn expanded_channels(&self, c_in: u32) -> u64 {
        ((self.expansion_ratio * c_in as f64).round() as u64).max(1)
    }

    fn check(&self) -> Result<(), String> {
        if ![1, 3, 5, 7].contains(&self.kernel_size) {
            return Err(format!("kernel_size {} not in {{1,3,5,7}}", self.kernel_size));
        }
        if matches!(self.kind, OpKind::Conv1x1 | OpKind::Identity) && self.kernel_size != 1 {
            return Err(format!("{} must have kernel_size 1", self.kind));
        }
        if !(self.expansion_ratio.is_finite()
            && self.expansion_ratio > 0.0
            && self.expansion_ratio <= MAX_EXPANSION)
        {
            return Err(format!(
                "expansion_ratio {} must be in (0, {MAX_EXPANSION}]",
                self.expansion_ratio
            ));
        }
        if self.allowed_quant_bits.is_empty() {
            return Err("allowed_quant_bits is empty".into());
        }
        if self.allowed_quant_bits.windows(2).any(|w| w[0] >= w[1]) {
            return Err("allowed_quant_bits must be strictly increasing".into());
        }
        if let Some(b) = self
            .allowed_quant_bits
            .iter()
            .find(|b| !SUPPORTED_BITS.contains(b))
        {
            return Err(format!("bitwidth {b} not supported (use 1, 2, 4, 8 or 16)"));
        }
        if self.pf_range.is_empty() || self.pf_range.max > MAX_PF {
            return Err(format!(
                "pf_range [{}, {}] must satisfy 0 <= min <= max <= {MAX_PF}",
                self.pf_range.min, self.pf_range.max
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub id: String,
    pub ops: Vec<OpCandidate>,
    #[serde(default)]
    pub downsample_capable: bool,
}

impl Bundle {
    /// Slot candidates: compute ops in declaration order, then `Identity`.
    pub fn candidates(&self, quant_bits: &[u32]) -> Vec<OpCandidate> {
        let mut out: Vec<OpCandidate> = self
            .ops
            .iter()
            .filter(|op| op.kind.is_slot_candidate() && op.kind != OpKind::Identity)
            .cloned()
            .collect();
        out.push(OpCandidate::identity(quant_bits));
        out
    }
}

/// Spatial and channel shape seen by one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotShape {
    pub h: u32,
    pub w: u32,
    pub c_in: u32,
    pub c_out: u32,
}

impl SlotShape {
    pub fn new(h: u32, w: u32, c_in: u32, c_out: u32) -> Self {
        SlotShape { h, w, c_in, c_out }
    }

    pub fn area(&self) -> u64 {
        self.h as u64 * self.w as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub bundles: Vec<Bundle>,
    /// N: number of block slots.
    pub num_blocks: usize,
    /// M: candidate operations per slot.
    pub ops_per_block: usize,
    /// Q: quantization choices per candidate.
    pub quant_choices: usize,
    /// Bitwidths available to `Identity` slots (length Q).
    pub quant_bits: Vec<u32>,
    /// Allowed replication counts `n` (active slots), each in 1..=N.
    pub replications: Vec<usize>,
    pub channel_choices: Vec<Vec<u32>>,
    #[serde(default)]
    pub pool_positions: Vec<usize>,
    /// (H, W, C)
    pub input_shape: [u32; 3],
    pub num_classes: u32,
}

/// Outcome of [`SearchSpace::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid(String),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub bundle_id: String,
    pub replications: usize,
    pub op_choice: Vec<usize>,
    pub channels: Vec<u32>,
    #[serde(default)]
    pub pools: BTreeSet<usize>,
    pub quant_bits: Vec<u32>,
    pub pf: Vec<u32>,
}

impl DesignPoint {
    pub fn from_json_str(text: &str) -> Result<Self, SpaceError> {
        serde_json::from_str(text).map_err(|e| SpaceError::Parse(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("design point serializes")
    }
}

#[derive(Deserialize)]
struct SpaceFile {
    space: SearchSpace,
}

/// Parses a space file (`[space]` table) from TOML, or JSON when `json` is set.
pub fn parse_space_str(text: &str, json: bool) -> Result<SearchSpace, SpaceError> {
    let file: SpaceFile = if json {
        serde_json::from_str(text).map_err(|e| SpaceError::Parse(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| SpaceError::Parse(e.to_string()))?
    };
    file.space.check()?;
    Ok(file.space)
}

pub fn load_space(path: &Path) -> Result<SearchSpace, SpaceError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SpaceError::Parse(format!("{}: {e}", path.display())))?;
    let json = path.extension().is_some_and(|e| e == "json");
    parse_space_str(&text, json)
}

impl SearchSpace {
    /// Checks the space's own invariants.
    pub fn check(&self) -> Result<(), SpaceError> {
        let bad = |msg: String| Err(SpaceError::InvalidSpace(msg));
        if self.num_blocks == 0 || self.num_blocks > MAX_BLOCKS {
            return bad(format!("num_blocks must be in 1..={MAX_BLOCKS}"));
        }
        if self.ops_per_block == 0 {
            return bad("ops_per_block must be >= 1".into());
        }
        if self.quant_choices == 0 {
            return bad("quant_choices must be >= 1".into());
        }
        if self.quant_bits.len() != self.quant_choices {
            return bad(format!(
                "quant_bits has {} entries, expected quant_choices = {}",
                self.quant_bits.len(),
                self.quant_choices
            ));
        }
        if let Err(e) = OpCandidate::identity(&self.quant_bits).check() {
            return bad(format!("quant_bits: {e}"));
        }
        if self.bundles.is_empty() {
            return Err(SpaceError::EmptyChoices("bundles".into()));
        }
        let mut ids = BTreeSet::new();
        for b in &self.bundles {
            if !ids.insert(b.id.as_str()) {
                return bad(format!("duplicate bundle id `{}`", b.id));
            }
            if b.ops.is_empty() {
                return bad(format!("bundle `{}` has no ops", b.id));
            }
            let pools = b.ops.iter().filter(|o| o.kind == OpKind::Pool2x2).count();
            if pools > 1 {
                return bad(format!("bundle `{}` has more than one downsampling op", b.id));
            }
            if pools == 1 && !b.downsample_capable {
                return bad(format!(
                    "bundle `{}` has a pool op but is not downsample_capable",
                    b.id
                ));
            }
            for (i, op) in b.ops.iter().enumerate() {
                if let Err(e) = op.check() {
                    return bad(format!("bundle `{}` op {i}: {e}", b.id));
                }
                if op.kind.is_slot_candidate() && op.allowed_quant_bits.len() != self.quant_choices
                {
                    return bad(format!(
                        "bundle `{}` op {i} has {} quantization choices, expected {}",
                        b.id,
                        op.allowed_quant_bits.len(),
                        self.quant_choices
                    ));
                }
            }
            let m = b.candidates(&self.quant_bits).len();
            if m != self.ops_per_block {
                return bad(format!(
                    "bundle `{}` yields {m} slot candidates (compute ops + identity), expected ops_per_block = {}",
                    b.id, self.ops_per_block
                ));
            }
        }
        if self.replications.is_empty() {
            return Err(SpaceError::EmptyChoices("replications".into()));
        }
        if self.replications.windows(2).any(|w| w[0] >= w[1]) {
            return bad("replications must be strictly increasing".into());
        }
        if self
            .replications
            .iter()
            .any(|&n| n == 0 || n > self.num_blocks)
        {
            return bad(format!("replications must lie in 1..={}", self.num_blocks));
        }
        if self.channel_choices.len() != self.num_blocks {
            return bad(format!(
                "channel_choices has {} slots, expected num_blocks = {}",
                self.channel_choices.len(),
                self.num_blocks
            ));
        }
        for (i, ch) in self.channel_choices.iter().enumerate() {
            if ch.is_empty() {
                return Err(SpaceError::EmptyChoices(format!("channels[{i}]")));
            }
            if ch.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("channel_choices[{i}] must be strictly increasing"));
            }
            if ch.iter().any(|&c| c == 0 || c > MAX_CHANNELS) {
                return bad(format!("channel_choices[{i}] entries must lie in 1..={MAX_CHANNELS}"));
            }
        }
        if self.pool_positions.windows(2).any(|w| w[0] >= w[1]) {
            return bad("pool_positions must be strictly increasing".into());
        }
        if self.pool_positions.iter().any(|&p| p >= self.num_blocks) {
            return bad(format!("pool_positions must lie in 0..{}", self.num_blocks));
        }
        let [h, w, c] = self.input_shape;
        if h == 0 || w == 0 || c == 0 || h > MAX_DIM || w > MAX_DIM || c > MAX_CHANNELS {
            return bad("input_shape entries must be positive and within limits".into());
        }
        // Every pool subset must leave at least a 1x1 map.
        let k = self.pool_positions.len() as u32;
        if self.bundles.iter().any(|b| b.downsample_capable) && k > 0 {
            let need = 1u64 << k.min(40);
            if (h as u64) < need || (w as u64) < need {
                return bad(format!(
                    "input {h}x{w} cannot absorb {k} halvings from pool_positions"
                ));
            }
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        Ok(())
    }

    pub fn bundle(&self, id: &str) -> Option<&Bundle> {
        self.bundles.iter().find(|b| b.id == id)
    }

    pub fn bundle_index(&self, id: &str) -> Option<usize> {
        self.bundles.iter().position(|b| b.id == id)
    }

    pub fn candidates(&self, bundle_id: &str) -> Result<Vec<OpCandidate>, SpaceError> {
        self.bundle(bundle_id)
            .map(|b| b.candidates(&self.quant_bits))
            .ok_or_else(|| SpaceError::UnknownBundle(bundle_id.to_string()))
    }

    /// Index of the `Identity` candidate within every slot's candidate list.
    pub fn identity_index(&self) -> usize {
        self.ops_per_block - 1
    }

    /// The deterministic seed point: first bundle, most replications, first
    /// candidate and channel choice everywhere, widest bitwidth, smallest pf.
    pub fn default_point(&self) -> DesignPoint {
        let bundle = &self.bundles[0];
        let cands = bundle.candidates(&self.quant_bits);
        let n = *self.replications.last().expect("replications nonempty");
        let op = &cands[0];
        DesignPoint {
            bundle_id: bundle.id.clone(),
            replications: n,
            op_choice: vec![0; n],
            channels: (0..n).map(|i| self.channel_choices[i][0]).collect(),
            pools: BTreeSet::new(),
            quant_bits: vec![*op.allowed_quant_bits.last().unwrap(); n],
            pf: vec![op.pf_range.min; n],
        }
    }

    /// Checks `point` against this space. The first violated invariant wins.
    pub fn validate(&self, point: &DesignPoint) -> Validity {
        match self.check_point(point) {
            Ok(()) => Validity::Valid,
            Err(msg) => Validity::Invalid(msg),
        }
    }

    fn check_point(&self, p: &DesignPoint) -> Result<(), String> {
        let bundle = self
            .bundle(&p.bundle_id)
            .ok_or_else(|| format!("bundle_id `{}` not in space", p.bundle_id))?;
        if !self.replications.contains(&p.replications) {
            return Err(format!(
                "replications {} not in {:?}",
                p.replications, self.replications
            ));
        }
        let n = p.replications;
        for (name, len) in [
            ("op_choice", p.op_choice.len()),
            ("channels", p.channels.len()),
            ("quant_bits", p.quant_bits.len()),
            ("pf", p.pf.len()),
        ] {
            if len != n {
                return Err(format!("{name} has {len} entries, expected replications = {n}"));
            }
        }
        let cands = bundle.candidates(&self.quant_bits);
        for i in 0..n {
            let m = p.op_choice[i];
            if m >= cands.len() {
                return Err(format!("op_choice[{i}] = {m} not in 0..{}", cands.len()));
            }
            if !self.channel_choices[i].contains(&p.channels[i]) {
                return Err(format!(
                    "channels[{i}] = {} not in {:?}",
                    p.channels[i], self.channel_choices[i]
                ));
            }
            let op = &cands[m];
            if !op.allowed_quant_bits.contains(&p.quant_bits[i]) {
                return Err(format!(
                    "quant_bits[{i}] = {} not allowed for {} ({:?})",
                    p.quant_bits[i], op.kind, op.allowed_quant_bits
                ));
            }
            if !op.pf_range.contains(p.pf[i]) {
                return Err(format!(
                    "pf[{i}] = {} outside [{}, {}]",
                    p.pf[i], op.pf_range.min, op.pf_range.max
                ));
            }
        }
        if !p.pools.is_empty() && !bundle.downsample_capable {
            return Err(format!("pools set but bundle `{}` cannot downsample", bundle.id));
        }
        for &pos in &p.pools {
            if !self.pool_positions.contains(&pos) {
                return Err(format!("pools contains {pos}, not an allowed position"));
            }
            if pos >= n {
                return Err(format!("pools contains {pos} >= replications {n}"));
            }
        }
        self.shapes(p).map_err(|e| e.to_string())?;
        Ok(())
    }

    /// Propagates `input_shape` through the active slots.
    pub fn shapes(&self, p: &DesignPoint) -> Result<Vec<SlotShape>, SpaceError> {
        let [mut h, mut w, c0] = self.input_shape;
        let mut c_in = c0;
        let n = p.replications.min(p.channels.len());
        let mut out = Vec::with_capacity(n);
        for slot in 0..n {
            let c_out = p.channels[slot];
            out.push(SlotShape::new(h, w, c_in, c_out));
            if p.pools.contains(&slot) {
                let (nh, nw) = (h / 2, w / 2);
                if nh == 0 || nw == 0 {
                    return Err(SpaceError::ShapeCollapse { slot, h, w });
                }
                h = nh;
                w = nw;
            }
            c_in = c_out;
        }
        Ok(out)
    }

    /// Draws one point with an independent uniform choice per knob.
    pub fn sample_uniform(&self, seed: u64) -> Result<DesignPoint, SpaceError> {
        let mut rng = seed::rng_for(seed, "sample-uniform", 0);
        self.sample_with(&mut rng, None)
    }

    /// Uniform sample, optionally pinned to one bundle.
    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        bundle_id: Option<&str>,
    ) -> Result<DesignPoint, SpaceError> {
        if self.bundles.is_empty() {
            return Err(SpaceError::EmptyChoices("bundles".into()));
        }
        if self.replications.is_empty() {
            return Err(SpaceError::EmptyChoices("replications".into()));
        }
        let bundle = match bundle_id {
            Some(id) => self
                .bundle(id)
                .ok_or_else(|| SpaceError::UnknownBundle(id.to_string()))?,
            None => &self.bundles[rng.gen_range(0..self.bundles.len())],
        };
        let cands = bundle.candidates(&self.quant_bits);
        let n = self.replications[rng.gen_range(0..self.replications.len())];
        let mut point = DesignPoint {
            bundle_id: bundle.id.clone(),
            replications: n,
            op_choice: Vec::with_capacity(n),
            channels: Vec::with_capacity(n),
            pools: BTreeSet::new(),
            quant_bits: Vec::with_capacity(n),
            pf: Vec::with_capacity(n),
        };
        for i in 0..n {
            let m = rng.gen_range(0..cands.len());
            let op = &cands[m];
            let ch = self
                .channel_choices
                .get(i)
                .filter(|c| !c.is_empty())
                .ok_or_else(|| SpaceError::EmptyChoices(format!("channels[{i}]")))?;
            if op.allowed_quant_bits.is_empty() {
                return Err(SpaceError::EmptyChoices(format!("quant_bits[{i}]")));
            }
            point.op_choice.push(m);
            point.channels.push(ch[rng.gen_range(0..ch.len())]);
            point
                .quant_bits
                .push(op.allowed_quant_bits[rng.gen_range(0..op.allowed_quant_bits.len())]);
            point
                .pf
                .push(rng.gen_range(op.pf_range.min..=op.pf_range.max));
        }
        if bundle.downsample_capable {
            for &pos in &self.pool_positions {
                if pos < n && rng.gen_bool(0.5) {
                    point.pools.insert(pos);
                }
            }
        }
        Ok(point)
    }

    /// Number of distinct points, saturating.
    pub fn cardinality(&self) -> u128 {
        let mut total: u128 = 0;
        for b in &self.bundles {
            let cands = b.candidates(&self.quant_bits);
            for &n in &self.replications {
                let mut count: u128 = 1;
                for i in 0..n {
                    let per_op: u128 = cands
                        .iter()
                        .map(|op| (op.allowed_quant_bits.len() * op.pf_range.len()) as u128)
                        .sum();
                    count = count
                        .saturating_mul(per_op)
                        .saturating_mul(self.channel_choices[i].len() as u128);
                }
                if b.downsample_capable {
                    let k = self.pool_positions.iter().filter(|&&p| p < n).count() as u32;
                    count = count.saturating_mul(1u128 << k.min(100));
                }
                total = total.saturating_add(count);
            }
        }
        total
    }

    /// Every point of a small space, in a fixed order.
    pub fn enumerate(&self, limit: u128) -> Result<Vec<DesignPoint>, SpaceError> {
        let count = self.cardinality();
        if count > limit {
            return Err(SpaceError::TooLarge { count, limit });
        }
        let mut out = Vec::with_capacity(count as usize);
        for b in &self.bundles {
            let cands = b.candidates(&self.quant_bits);
            // (op index, bits, pf) options per slot
            let slot_opts: Vec<(usize, u32, u32)> = cands
                .iter()
                .enumerate()
                .flat_map(|(m, op)| {
                    op.allowed_quant_bits.iter().flat_map(move |&q| {
                        (op.pf_range.min..=op.pf_range.max).map(move |pf| (m, q, pf))
                    })
                })
                .collect();
            for &n in &self.replications {
                let positions: Vec<usize> = if b.downsample_capable {
                    self.pool_positions.iter().copied().filter(|&p| p < n).collect()
                } else {
                    Vec::new()
                };
                let radices: Vec<usize> = (0..n)
                    .flat_map(|i| [slot_opts.len(), self.channel_choices[i].len()])
                    .collect();
                let mut digits = vec![0usize; radices.len()];
                loop {
                    for mask in 0..(1usize << positions.len()) {
                        let pools = positions
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| mask & (1 << j) != 0)
                            .map(|(_, &p)| p)
                            .collect();
                        let mut p = DesignPoint {
                            bundle_id: b.id.clone(),
                            replications: n,
                            op_choice: Vec::with_capacity(n),
                            channels: Vec::with_capacity(n),
                            pools,
                            quant_bits: Vec::with_capacity(n),
                            pf: Vec::with_capacity(n),
                        };
                        for i in 0..n {
                            let (m, q, pf) = slot_opts[digits[2 * i]];
                            p.op_choice.push(m);
                            p.quant_bits.push(q);
                            p.pf.push(pf);
                            p.channels.push(self.channel_choices[i][digits[2 * i + 1]]);
                        }
                        out.push(p);
                    }
                    // odometer increment
                    let mut k = 0;
                    loop {
                        if k == digits.len() {
                            break;
                        }
                        digits[k] += 1;
                        if digits[k] < radices[k] {
                            break;
                        }
                        digits[k] = 0;
                        k += 1;
                    }
                    if k == digits.len() {
                        break;
                    }
                }
            }
        }
        Ok(out)
    }
}
