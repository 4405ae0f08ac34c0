//! Reverse-mode automatic differentiation over a scalar tape.
//!
//! Nodes are evaluated eagerly when they are pushed, so every node's value is
//! available immediately. Domain violations (log of a nonpositive number,
//! division by zero) do not abort construction; the first one is remembered
//! and reported by [`Tape::grad`].
//!
//! ```
//! use codesign::autodiff::{Tape, VarId};
//!
//! let mut tape = Tape::new();
//! let x = tape.var(VarId(0), 3.0);
//! let y = tape.var(VarId(1), 4.0);
//! let f = tape.mul(x, y);
//! let g = tape.grad(f, &[VarId(0), VarId(1)]).unwrap();
//! assert_eq!(g[&VarId(0)], 4.0);
//! assert_eq!(g[&VarId(1)], 3.0);
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("domain error at node {node} ({op}): argument {arg}")]
    Domain { node: usize, op: &'static str, arg: f64 },
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
    #[error("non-finite gradient {value} for variable {var:?}")]
    NonFiniteGradient { var: VarId, value: f64 },
    #[error("learning rate must be positive, got {0}")]
    InvalidLearningRate(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Const,
    Var(VarId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Log(NodeId),
    /// `base^exponent` with a constant exponent.
    Pow(NodeId, f64),
    /// `log(exp(a) + exp(b))`
    LogSumExp(NodeId, NodeId),
    /// Component `index` of the softmax over group `group`.
    Softmax { group: usize, index: usize },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: f64,
}

#[derive(Debug, Clone)]
struct SoftmaxGroup {
    inputs: Vec<NodeId>,
    probs: Vec<f64>,
    outputs: Vec<NodeId>,
}

/// Append-only expression tape. Inputs always precede outputs.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    groups: Vec<SoftmaxGroup>,
    first_domain_error: Option<AutodiffError>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: NodeId) -> f64 {
        self.nodes[node.0].value
    }

    pub fn domain_error(&self) -> Option<&AutodiffError> {
        self.first_domain_error.as_ref()
    }

    fn push(&mut self, op: Op, value: f64) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn flag(&mut self, op: &'static str, arg: f64) {
        if self.first_domain_error.is_none() {
            self.first_domain_error = Some(AutodiffError::Domain {
                node: self.nodes.len(),
                op,
                arg,
            });
        }
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(Op::Const, value)
    }

    /// Registers a differentiable input under an external id. Registering the
    /// same id twice makes both nodes contribute to that id's gradient.
    pub fn var(&mut self, id: VarId, value: f64) -> NodeId {
        self.push(Op::Var(id), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) * self.value(b);
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.value(b);
        if d == 0.0 {
            self.flag("div", d);
        }
        let v = self.value(a) / d;
        self.push(Op::Div(a, b), v)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = -self.value(a);
        self.push(Op::Neg(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).exp();
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        if x <= 0.0 {
            self.flag("log", x);
        }
        self.push(Op::Log(a), x.ln())
    }

    pub fn pow(&mut self, a: NodeId, exponent: f64) -> NodeId {
        let x = self.value(a);
        if (x < 0.0 && exponent.fract() != 0.0) || (x == 0.0 && exponent < 1.0) {
            self.flag("pow", x);
        }
        self.push(Op::Pow(a, exponent), x.powf(exponent))
    }

    pub fn logsumexp(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        let m = x.max(y);
        let v = if m == f64::NEG_INFINITY {
            m
        } else {
            m + ((x - m).exp() + (y - m).exp()).ln()
        };
        self.push(Op::LogSumExp(a, b), v)
    }

    /// Softmax over `inputs`; one output node per input.
    pub fn softmax(&mut self, inputs: &[NodeId]) -> Vec<NodeId> {
        let xs: Vec<f64> = inputs.iter().map(|&n| self.value(n)).collect();
        let probs = softmax_values(&xs);
        let group = self.groups.len();
        self.groups.push(SoftmaxGroup {
            inputs: inputs.to_vec(),
            probs: probs.clone(),
            outputs: Vec::with_capacity(inputs.len()),
        });
        let outs: Vec<NodeId> = probs
            .iter()
            .enumerate()
            .map(|(index, &p)| self.push(Op::Softmax { group, index }, p))
            .collect();
        self.groups[group].outputs = outs.clone();
        outs
    }

    // Convenience compositions.

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = self.constant(c);
        self.add(a, k)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = self.constant(c);
        self.mul(a, k)
    }

    pub fn sum(&mut self, terms: &[NodeId]) -> NodeId {
        match terms.split_first() {
            None => self.constant(0.0),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| self.add(acc, t)),
        }
    }

    /// `base^x` for a constant positive base.
    pub fn exp_base(&mut self, base: f64, x: NodeId) -> NodeId {
        let scaled = self.scale(x, base.ln());
        self.exp(scaled)
    }

    /// `s * log(exp(a/s) + exp(b/s))`, an upper bound on `max(a, b)` that
    /// exceeds it by at most `s * ln 2`.
    pub fn smooth_max(&mut self, a: NodeId, b: NodeId, sharpness: f64) -> NodeId {
        let inv = 1.0 / sharpness;
        let sa = self.scale(a, inv);
        let sb = self.scale(b, inv);
        let l = self.logsumexp(sa, sb);
        self.scale(l, sharpness)
    }

    /// `s * log(1 + exp(x/s))`, a smooth stand-in for `max(0, x)`.
    pub fn softplus(&mut self, x: NodeId, sharpness: f64) -> NodeId {
        let zero = self.constant(0.0);
        self.smooth_max(zero, x, sharpness)
    }

    /// Reverse sweep from `output`. Variables that `output` does not depend
    /// on get a zero entry.
    pub fn grad(&self, output: NodeId, wrt: &[VarId]) -> Result<BTreeMap<VarId, f64>, AutodiffError> {
        let all = self.grad_all(output)?;
        Ok(wrt
            .iter()
            .map(|id| (*id, all.get(id).copied().unwrap_or(0.0)))
            .collect())
    }

    /// Gradient with respect to every registered variable.
    pub fn grad_all(&self, output: NodeId) -> Result<BTreeMap<VarId, f64>, AutodiffError> {
        if output.0 >= self.nodes.len() {
            return Err(AutodiffError::UnknownNode(output.0));
        }
        if let Some(err) = &self.first_domain_error {
            if let AutodiffError::Domain { node, .. } = err {
                if *node <= output.0 {
                    return Err(err.clone());
                }
            }
        }
        let mut adj = vec![0.0f64; output.0 + 1];
        adj[output.0] = 1.0;
        let mut out = BTreeMap::new();
        // groups whose adjoints were already distributed
        let mut group_done = vec![false; self.groups.len()];
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if let Op::Var(id) = node.op {
                *out.entry(id).or_insert(0.0) += adj[i];
                continue;
            }
            if let Op::Softmax { group, .. } = node.op {
                // Outputs of a group are contiguous; handle the whole group
                // once its lowest output index is reached so every output
                // adjoint has been accumulated.
                let g = &self.groups[group];
                if group_done[group] || g.outputs[0].0 != i {
                    continue;
                }
                group_done[group] = true;
                let dot: f64 = g
                    .outputs
                    .iter()
                    .zip(&g.probs)
                    .map(|(o, p)| adj.get(o.0).copied().unwrap_or(0.0) * p)
                    .sum();
                for ((o, p), inp) in g.outputs.iter().zip(&g.probs).zip(&g.inputs) {
                    let a = adj.get(o.0).copied().unwrap_or(0.0);
                    adj[inp.0] += p * (a - dot);
                }
                continue;
            }
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            match node.op {
                Op::Const | Op::Var(_) | Op::Softmax { .. } => {}
                Op::Add(x, y) => {
                    adj[x.0] += a;
                    adj[y.0] += a;
                }
                Op::Mul(x, y) => {
                    let (vx, vy) = (self.nodes[x.0].value, self.nodes[y.0].value);
                    adj[x.0] += a * vy;
                    adj[y.0] += a * vx;
                }
                Op::Div(x, y) => {
                    let vy = self.nodes[y.0].value;
                    adj[x.0] += a / vy;
                    adj[y.0] -= a * node.value / vy;
                }
                Op::Neg(x) => adj[x.0] -= a,
                Op::Exp(x) => adj[x.0] += a * node.value,
                Op::Log(x) => adj[x.0] += a / self.nodes[x.0].value,
                Op::Pow(x, e) => {
                    let vx = self.nodes[x.0].value;
                    adj[x.0] += a * e * vx.powf(e - 1.0);
                }
                Op::LogSumExp(x, y) => {
                    let (vx, vy) = (self.nodes[x.0].value, self.nodes[y.0].value);
                    adj[x.0] += a * (vx - node.value).exp();
                    adj[y.0] += a * (vy - node.value).exp();
                }
            }
        }
        Ok(out)
    }

    /// One node per line: `index op inputs = value`. Debug aid only.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let desc = match &n.op {
                Op::Const => "const".to_string(),
                Op::Var(id) => format!("var #{}", id.0),
                Op::Add(a, b) => format!("add {} {}", a.0, b.0),
                Op::Mul(a, b) => format!("mul {} {}", a.0, b.0),
                Op::Div(a, b) => format!("div {} {}", a.0, b.0),
                Op::Neg(a) => format!("neg {}", a.0),
                Op::Exp(a) => format!("exp {}", a.0),
                Op::Log(a) => format!("log {}", a.0),
                Op::Pow(a, e) => format!("pow {} {e}", a.0),
                Op::LogSumExp(a, b) => format!("lse {} {}", a.0, b.0),
                Op::Softmax { group, index } => {
                    let ins: Vec<String> = self.groups[*group]
                        .inputs
                        .iter()
                        .map(|n| n.0.to_string())
                        .collect();
                    format!("softmax[{index}] {}", ins.join(" "))
                }
            };
            let _ = writeln!(s, "{i} {desc} = {}", n.value);
        }
        s
    }
}

/// Numerically stable softmax of plain values.
pub fn softmax_values(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Temperature schedule and seed for Gumbel-Softmax sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GumbelConfig {
    #[serde(default = "GumbelConfig::default_tau_start")]
    pub tau_start: f64,
    #[serde(default = "GumbelConfig::default_tau_end")]
    pub tau_end: f64,
    /// Multiplicative decay per epoch.
    #[serde(default = "GumbelConfig::default_decay")]
    pub decay: f64,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        GumbelConfig {
            tau_start: Self::default_tau_start(),
            tau_end: Self::default_tau_end(),
            decay: Self::default_decay(),
        }
    }
}

impl GumbelConfig {
    fn default_tau_start() -> f64 {
        5.0
    }
    fn default_tau_end() -> f64 {
        0.1
    }
    fn default_decay() -> f64 {
        0.99
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.tau_start > 0.0 && self.tau_end > 0.0) {
            return Err("gumbel temperatures must be positive".into());
        }
        if self.tau_end > self.tau_start {
            return Err("gumbel tau_end must not exceed tau_start".into());
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err("gumbel decay must be in (0, 1]".into());
        }
        Ok(())
    }

    /// Temperature at `epoch`: exponential decay floored at `tau_end`.
    pub fn tau_at(&self, epoch: usize) -> f64 {
        (self.tau_start * self.decay.powi(epoch.min(i32::MAX as usize) as i32)).max(self.tau_end)
    }
}

/// Standard Gumbel noise `-ln(-ln u)` with `u` drawn from the open interval (0, 1).
pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return -(-u.ln()).ln();
        }
    }
}

/// Gumbel-Softmax relaxation recorded on the tape, so gradients reach `logits`.
pub fn gumbel_softmax<R: Rng + ?Sized>(
    tape: &mut Tape,
    logits: &[NodeId],
    tau: f64,
    rng: &mut R,
) -> Vec<NodeId> {
    let inv_tau = 1.0 / tau;
    let perturbed: Vec<NodeId> = logits
        .iter()
        .map(|&l| {
            let g = gumbel_noise(rng);
            let shifted = tape.add_const(l, g);
            tape.scale(shifted, inv_tau)
        })
        .collect();
    tape.softmax(&perturbed)
}

/// The same sample as [`gumbel_softmax`] for plain values, drawing noise in
/// the same order.
pub fn gumbel_softmax_values<R: Rng + ?Sized>(logits: &[f64], tau: f64, rng: &mut R) -> Vec<f64> {
    let z: Vec<f64> = logits
        .iter()
        .map(|l| (l + gumbel_noise(rng)) / tau)
        .collect();
    softmax_values(&z)
}

/// `p <- p - lr * clip(g)`. Nothing is updated if any gradient is non-finite.
pub fn sgd_step(
    params: &mut BTreeMap<VarId, f64>,
    grads: &BTreeMap<VarId, f64>,
    lr: f64,
    clip: Option<f64>,
) -> Result<(), AutodiffError> {
    if !(lr > 0.0) {
        return Err(AutodiffError::InvalidLearningRate(lr));
    }
    if let Some((var, value)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(AutodiffError::NonFiniteGradient { var: *var, value: *value });
    }
    for (id, p) in params.iter_mut() {
        let mut g = grads.get(id).copied().unwrap_or(0.0);
        if let Some(c) = clip {
            g = g.clamp(-c, c);
        }
        *p -= lr * g;
    }
    Ok(())
}
