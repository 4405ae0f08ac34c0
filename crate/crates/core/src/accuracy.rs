//! Accuracy-loss evaluators.
//!
//! Two evaluators implement [`AccuracyEvaluator`]:
//!
//! * [`SurrogateParams`]: a closed-form, differentiable stand-in:
//!   `acc_loss = eps + exp(-a * ln(1 + params) - b * depth + quant_penalty)`.
//!   Its constants are synthetic; it only encodes "bigger, deeper and wider
//!   bitwidth is more accurate".
//! * [`ProxyEvaluator`]: trains a small MLP whose hidden widths follow the
//!   point's channel counts (scaled) and whose depth is the replication count,
//!   on a tabular dataset, and reports held-out accuracy.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;
use thiserror::Error;

use crate::autodiff::{self, AutodiffError, NodeId, Tape, VarId};
use crate::perf;
use crate::seed;
use crate::serde_util::bits_map;
use crate::space::{DesignPoint, OpKind, SearchSpace, SpaceError};

#[derive(Debug, Error)]
pub enum AccuracyError {
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("invalid evaluator settings: {0}")]
    InvalidConfig(String),
    #[error("no quantization penalty for {0}-bit")]
    MissingPenalty(u32),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid design point: {0}")]
    InvalidPoint(String),
}

/// Something that scores a design point's accuracy.
pub trait AccuracyEvaluator: Sync {
    /// Strictly positive accuracy loss.
    fn acc_loss(&self, space: &SearchSpace, point: &DesignPoint) -> Result<f64, AccuracyError>;
    /// Accuracy in [0, 1].
    fn accuracy(&self, space: &SearchSpace, point: &DesignPoint) -> Result<f64, AccuracyError>;
    fn is_differentiable(&self) -> bool;
}

/// Architecture summary the surrogate consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptors {
    pub log_param_count: f64,
    pub effective_depth: f64,
    pub quant_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateParams {
    #[serde(default = "SurrogateParams::default_a")]
    pub capacity_weight: f64,
    #[serde(default = "SurrogateParams::default_b")]
    pub depth_weight: f64,
    #[serde(with = "bits_map", default = "SurrogateParams::default_penalty")]
    pub quant_penalty: BTreeMap<u32, f64>,
    #[serde(default = "SurrogateParams::default_floor")]
    pub floor: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams {
            capacity_weight: Self::default_a(),
            depth_weight: Self::default_b(),
            quant_penalty: Self::default_penalty(),
            floor: Self::default_floor(),
        }
    }
}

impl SurrogateParams {
    fn default_a() -> f64 {
        0.15
    }
    fn default_b() -> f64 {
        0.05
    }
    fn default_floor() -> f64 {
        0.05
    }
    fn default_penalty() -> BTreeMap<u32, f64> {
        BTreeMap::from([(4, 0.25), (8, 0.05), (16, 0.0)])
    }

    pub fn check(&self) -> Result<(), AccuracyError> {
        let bad = |m: &str| Err(AccuracyError::InvalidConfig(m.to_string()));
        if !(self.capacity_weight >= 0.0 && self.depth_weight >= 0.0) {
            return bad("surrogate weights must be nonnegative");
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return bad("surrogate floor must be positive");
        }
        if self.quant_penalty.values().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("quant penalties must be finite and nonnegative");
        }
        let vals: Vec<f64> = self.quant_penalty.values().copied().collect();
        if vals.windows(2).any(|w| w[1] > w[0]) {
            return bad("quant penalty must be non-increasing in bitwidth");
        }
        Ok(())
    }

    pub fn penalty(&self, bits: u32) -> Result<f64, AccuracyError> {
        self.quant_penalty
            .get(&bits)
            .copied()
            .ok_or(AccuracyError::MissingPenalty(bits))
    }

    /// Every bitwidth used by `space` needs a penalty entry.
    pub fn check_for(&self, space: &SearchSpace) -> Result<(), AccuracyError> {
        self.check()?;
        let mut bits: BTreeSet<u32> = space.quant_bits.iter().copied().collect();
        for b in &space.bundles {
            for op in &b.ops {
                bits.extend(op.allowed_quant_bits.iter().copied());
            }
        }
        for b in bits {
            self.penalty(b)?;
        }
        Ok(())
    }
}

pub fn surrogate_acc_loss(params: &SurrogateParams, d: &Descriptors) -> f64 {
    params.floor
        + (-params.capacity_weight * d.log_param_count - params.depth_weight * d.effective_depth
            + d.quant_penalty)
            .exp()
}

/// [`surrogate_acc_loss`] on the tape.
pub fn surrogate_acc_loss_node(
    tape: &mut Tape,
    params: &SurrogateParams,
    log_param_count: NodeId,
    effective_depth: NodeId,
    quant_penalty: NodeId,
) -> NodeId {
    let a = tape.scale(log_param_count, -params.capacity_weight);
    let b = tape.scale(effective_depth, -params.depth_weight);
    let s = tape.add(a, b);
    let s = tape.add(s, quant_penalty);
    let e = tape.exp(s);
    tape.add_const(e, params.floor)
}

/// Descriptors of a concrete point: `ln(1 + weights)`, the number of
/// non-identity slots, and the per-slot mean quantization penalty.
pub fn descriptors(
    params: &SurrogateParams,
    space: &SearchSpace,
    point: &DesignPoint,
) -> Result<Descriptors, AccuracyError> {
    let slots = perf::slot_ops(point, space).map_err(|e| AccuracyError::InvalidPoint(e.to_string()))?;
    let n = slots.len().max(1) as f64;
    let mut weights = 0u64;
    let mut depth = 0.0;
    let mut pen = 0.0;
    for (_, op, shape, bits, _) in &slots {
        if op.kind == OpKind::Identity {
            continue;
        }
        weights += perf::op_weight_count(op, shape);
        depth += 1.0;
        pen += params.penalty(*bits)?;
    }
    Ok(Descriptors {
        log_param_count: (1.0 + weights as f64).ln(),
        effective_depth: depth,
        quant_penalty: pen / n,
    })
}

impl AccuracyEvaluator for SurrogateParams {
    fn acc_loss(&self, space: &SearchSpace, point: &DesignPoint) -> Result<f64, AccuracyError> {
        Ok(surrogate_acc_loss(self, &descriptors(self, space, point)?))
    }

    /// `exp(-acc_loss)`, a monotone map into (0, 1).
    fn accuracy(&self, space: &SearchSpace, point: &DesignPoint) -> Result<f64, AccuracyError> {
        Ok((-self.acc_loss(space, point)?).exp())
    }

    fn is_differentiable(&self) -> bool {
        true
    }
}

/// Tabular classification data with a fixed train/validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub seed: u64,
}

impl ProxyDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, val_fraction: f64, seed: u64) -> Result<Self, AccuracyError> {
        let bad = |m: String| Err(AccuracyError::Dataset(m));
        if features.len() != labels.len() {
            return bad("feature and label counts differ".into());
        }
        if features.len() < 2 {
            return bad("need at least two rows".into());
        }
        let d = features[0].len();
        if d == 0 {
            return bad("rows have no features".into());
        }
        if let Some(i) = features.iter().position(|r| r.len() != d) {
            return bad(format!("row {i} has {} features, expected {d}", features[i].len()));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite feature value".into());
        }
        let classes: BTreeSet<usize> = labels.iter().copied().collect();
        if classes.len() < 2 {
            return bad("need at least two classes".into());
        }
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return bad("val_fraction must be in (0, 1)".into());
        }
        let rows = features.len();
        let n_val = ((rows as f64 * val_fraction).round() as usize).clamp(1, rows - 1);
        let mut idx: Vec<usize> = (0..rows).collect();
        idx.shuffle(&mut seed::rng_for(seed, "proxy-split", 0));
        let mut val = idx[..n_val].to_vec();
        let mut train = idx[n_val..].to_vec();
        val.sort_unstable();
        train.sort_unstable();
        Ok(ProxyDataset { features, labels, train, val, seed })
    }

    pub fn dims(&self) -> usize {
        self.features[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Header row, then one row per sample; the last column is the label.
    pub fn from_csv_str(text: &str, val_fraction: f64, seed: u64) -> Result<Self, AccuracyError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| AccuracyError::Dataset(e.to_string()))?;
            if rec.len() < 2 {
                return Err(AccuracyError::Dataset(format!("row {} has fewer than 2 columns", i + 1)));
            }
            let mut row = Vec::with_capacity(rec.len() - 1);
            for field in rec.iter().take(rec.len() - 1) {
                row.push(field.parse::<f64>().map_err(|_| {
                    AccuracyError::Dataset(format!("row {}: `{field}` is not a number", i + 1))
                })?);
            }
            let label = &rec[rec.len() - 1];
            labels.push(label.parse::<usize>().map_err(|_| {
                AccuracyError::Dataset(format!("row {}: label `{label}` is not a class index", i + 1))
            })?);
            features.push(row);
        }
        if labels.iter().any(|&l| l > 1 << 16) {
            return Err(AccuracyError::Dataset("class index too large".into()));
        }
        Self::new(features, labels, val_fraction, seed)
    }

    pub fn to_csv_string(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (0..self.dims()).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        wtr.write_record(&header).expect("in-memory write");
        for (row, label) in self.features.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            rec.push(label.to_string());
            wtr.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("flush")).expect("utf8")
    }

    /// Gaussian blobs around centers spread on a circle (first two dims) of
    /// radius 3; remaining dims are pure noise.
    pub fn synthetic_blobs(seed: u64, rows_per_class: usize, dims: usize, classes: usize) -> Result<Self, AccuracyError> {
        if classes < 2 || dims < 2 || rows_per_class == 0 {
            return Err(AccuracyError::Dataset("blobs need >= 2 classes, >= 2 dims, >= 1 row".into()));
        }
        let mut rng = seed::rng_for(seed, "blobs", 0);
        let mut features = Vec::with_capacity(classes * rows_per_class);
        let mut labels = Vec::with_capacity(classes * rows_per_class);
        for c in 0..classes {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            for _ in 0..rows_per_class {
                let mut row: Vec<f64> = (0..dims).map(|_| standard_normal(&mut rng)).collect();
                row[0] += 3.0 * angle.cos();
                row[1] += 3.0 * angle.sin();
                features.push(row);
                labels.push(c);
            }
        }
        Self::new(features, labels, 0.25, seed)
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    #[serde(default = "ProxyConfig::default_epochs")]
    pub epochs: usize,
    /// Hidden width = round(channels * width_scale), at least 1.
    #[serde(default = "ProxyConfig::default_width_scale")]
    pub width_scale: f64,
    #[serde(default = "ProxyConfig::default_lr")]
    pub lr: f64,
    /// Added to `1 - accuracy` so the loss stays strictly positive.
    #[serde(default = "ProxyConfig::default_floor")]
    pub floor: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            epochs: Self::default_epochs(),
            width_scale: Self::default_width_scale(),
            lr: Self::default_lr(),
            floor: Self::default_floor(),
        }
    }
}

impl ProxyConfig {
    fn default_epochs() -> usize {
        50
    }
    fn default_width_scale() -> f64 {
        0.5
    }
    fn default_lr() -> f64 {
        0.08
    }
    fn default_floor() -> f64 {
        0.05
    }

    pub fn check(&self) -> Result<(), AccuracyError> {
        if self.epochs == 0 {
            return Err(AccuracyError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return Err(AccuracyError::InvalidConfig("width_scale must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(AccuracyError::InvalidConfig("lr must be positive".into()));
        }
        if !(self.floor > 0.0) {
            return Err(AccuracyError::InvalidConfig("floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyOutcome {
    pub val_accuracy: f64,
    /// Mean training cross-entropy at the start of each epoch, then after the last.
    pub train_losses: Vec<f64>,
    pub widths: Vec<usize>,
}

struct Mlp {
    /// Layer sizes including input and output.
    sizes: Vec<usize>,
    /// Per layer: (weight var offset, bias var offset).
    offsets: Vec<(u64, u64)>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Mlp {
    fn new(dims: usize, widths: &[usize], classes: usize, data: &ProxyDataset) -> Self {
        let mut sizes = vec![dims];
        sizes.extend_from_slice(widths);
        sizes.push(classes);
        let mut offsets = Vec::new();
        let mut next = 0u64;
        for l in 0..sizes.len() - 1 {
            let w = next;
            next += (sizes[l] * sizes[l + 1]) as u64;
            let b = next;
            next += sizes[l + 1] as u64;
            offsets.push((w, b));
        }
        let n = data.train.len() as f64;
        let mean: Vec<f64> = (0..dims)
            .map(|j| data.train.iter().map(|&i| data.features[i][j]).sum::<f64>() / n)
            .collect();
        let std: Vec<f64> = (0..dims)
            .map(|j| {
                let var = data
                    .train
                    .iter()
                    .map(|&i| (data.features[i][j] - mean[j]).powi(2))
                    .sum::<f64>()
                    / n;
                var.sqrt().max(1e-8)
            })
            .collect();
        Mlp { sizes, offsets, mean, std }
    }

    fn init(&self, seed: u64) -> BTreeMap<VarId, f64> {
        let mut rng = seed::rng_for(seed, "proxy-init", 0);
        let mut params = BTreeMap::new();
        for (l, &(w, b)) in self.offsets.iter().enumerate() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for k in 0..(fan_in * fan_out) as u64 {
                params.insert(VarId(w + k), rng.gen_range(-bound..bound));
            }
            for k in 0..fan_out as u64 {
                params.insert(VarId(b + k), 0.0);
            }
        }
        params
    }

    fn scaled(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    fn logits_plain(&self, params: &BTreeMap<VarId, f64>, row: &[f64]) -> Vec<f64> {
        let mut act = self.scaled(row);
        let last = self.offsets.len() - 1;
        for (l, &(w, b)) in self.offsets.iter().enumerate() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            act = (0..fo)
                .map(|o| {
                    let z = params[&VarId(b + o as u64)]
                        + (0..fi)
                            .map(|i| params[&VarId(w + (o * fi + i) as u64)] * act[i])
                            .sum::<f64>();
                    if l == last {
                        z
                    } else {
                        softplus(z)
                    }
                })
                .collect();
        }
        act
    }

    /// Mean cross-entropy over the training rows, on the tape.
    fn loss_node(&self, tape: &mut Tape, params: &BTreeMap<VarId, f64>, data: &ProxyDataset) -> NodeId {
        let vars: BTreeMap<VarId, NodeId> = params.iter().map(|(&id, &v)| (id, tape.var(id, v))).collect();
        let last = self.offsets.len() - 1;
        let mut terms = Vec::with_capacity(data.train.len());
        for &r in &data.train {
            let mut act: Vec<NodeId> = self
                .scaled(&data.features[r])
                .into_iter()
                .map(|x| tape.constant(x))
                .collect();
            for (l, &(w, b)) in self.offsets.iter().enumerate() {
                let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
                act = (0..fo)
                    .map(|o| {
                        let mut z = vars[&VarId(b + o as u64)];
                        for (i, &a) in act.iter().enumerate().take(fi) {
                            let p = tape.mul(vars[&VarId(w + (o * fi + i) as u64)], a);
                            z = tape.add(z, p);
                        }
                        if l == last {
                            z
                        } else {
                            tape.softplus(z, 1.0)
                        }
                    })
                    .collect();
            }
            let lse = act[1..].iter().fold(act[0], |acc, &z| tape.logsumexp(acc, z));
            let target = act[data.labels[r]];
            terms.push(tape.sub(lse, target));
        }
        let total = tape.sum(&terms);
        tape.scale(total, 1.0 / data.train.len() as f64)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Hidden widths of the proxy network for `point`.
pub fn proxy_widths(point: &DesignPoint, width_scale: f64) -> Vec<usize> {
    point
        .channels
        .iter()
        .take(point.replications)
        .map(|&c| ((c as f64 * width_scale).round() as usize).max(1))
        .collect()
}

/// Trains the proxy MLP for `point` and returns held-out accuracy.
pub fn proxy_train_eval(
    point: &DesignPoint,
    data: &ProxyDataset,
    cfg: &ProxyConfig,
    seed: u64,
) -> Result<ProxyOutcome, AccuracyError> {
    cfg.check()?;
    let classes = data.num_classes();
    if data.labels.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(AccuracyError::Dataset("need at least two classes".into()));
    }
    let widths = proxy_widths(point, cfg.width_scale);
    let mlp = Mlp::new(data.dims(), &widths, classes, data);
    let mut params = mlp.init(seed);
    let mut train_losses = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let loss = mlp.loss_node(&mut tape, &params, data);
        train_losses.push(tape.value(loss));
        let grads = tape.grad_all(loss)?;
        autodiff::sgd_step(&mut params, &grads, cfg.lr, None)?;
    }
    let mut tape = Tape::new();
    let loss = mlp.loss_node(&mut tape, &params, data);
    train_losses.push(tape.value(loss));
    let correct = data
        .val
        .iter()
        .filter(|&&r| {
            let z = mlp.logits_plain(&params, &data.features[r]);
            let pred = z
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            pred == data.labels[r]
        })
        .count();
    Ok(ProxyOutcome {
        val_accuracy: correct as f64 / data.val.len() as f64,
        train_losses,
        widths,
    })
}

/// Proxy training behind the evaluator interface, memoized per point.
pub struct ProxyEvaluator {
    pub dataset: ProxyDataset,
    pub config: ProxyConfig,
    pub seed: u64,
    cache: Mutex<BTreeMap<(Vec<u32>, usize), f64>>,
}

impl ProxyEvaluator {
    pub fn new(dataset: ProxyDataset, config: ProxyConfig, seed: u64) -> Result<Self, AccuracyError> {
        config.check()?;
        Ok(ProxyEvaluator { dataset, config, seed, cache: Mutex::new(BTreeMap::new()) })
    }
}

impl AccuracyEvaluator for ProxyEvaluator {
    fn acc_loss(&self, space: &SearchSpace, point: &DesignPoint) -> Result<f64, AccuracyError> {
        Ok(self.config.floor + 1.0 - self.accuracy(space, point)?)
    }

    fn accuracy(&self, space: &SearchSpace, point: &DesignPoint) -> Result<f64, AccuracyError> {
        if let crate::space::Validity::Invalid(msg) = space.validate(point) {
            return Err(AccuracyError::InvalidPoint(msg));
        }
        // the proxy only sees widths and depth
        let key = (point.channels.clone(), point.replications);
        if let Some(&acc) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(acc);
        }
        let acc = proxy_train_eval(point, &self.dataset, &self.config, self.seed)?.val_accuracy;
        self.cache.lock().expect("cache lock").insert(key, acc);
        Ok(acc)
    }

    fn is_differentiable(&self) -> bool {
        false
    }
}
