//! Joint search over DNN architecture and accelerator implementation knobs.
//!
//! The crate is organized bottom-up:
//!
//! * [`space`]: the joint design space and concrete design points;
//! * [`perf`] and [`oracle`]: the analytical latency/resource model and the
//!   tile-level simulator that checks it;
//! * [`autodiff`]: a scalar reverse-mode tape with Gumbel-Softmax sampling;
//! * [`accuracy`]: accuracy-loss evaluators (closed-form surrogate and a
//!   small trainable proxy network);
//! * [`pareto`]: bundle scoring and resource/accuracy Pareto selection;
//! * [`search`]: stochastic coordinate descent, particle swarm and
//!   differentiable co-search;
//! * [`config`], [`trace`] and [`run`]: run configuration, persisted
//!   artifacts and orchestration used by the command-line tool.

pub mod accuracy;
pub mod autodiff;
pub mod config;
pub mod oracle;
pub mod pareto;
pub mod perf;
pub mod run;
pub mod search;
pub mod seed;
mod serde_util;
pub mod space;
pub mod trace;
