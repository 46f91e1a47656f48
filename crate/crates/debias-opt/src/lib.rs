//! Desk-scale debiased-learning toolkit.
//!
//! Three interlinked procedures, each runnable on seeded synthetic
//! group-structured benchmarks:
//!
//! * [`saddle`]: multi-label linear classifiers trained to minimize
//!   privileged-label hinge losses subject to slack constraints on the
//!   remaining labels, solved by primal-dual saddle-point iteration.
//! * [`minmax`]: loss-mixture weights learned by one-step-lookahead
//!   hypergradients so the worst validation loss shrinks, with an optional
//!   Gumbel-softmax relaxation of the worst-task argmax.
//! * [`dedier`]: confidence-weighted distillation: an auxiliary early
//!   readout on the student flags likely bias-conflicting instances and
//!   scales their distillation loss.
//!
//! Supporting layers: [`nn`] (dense MLPs with manual backprop and a
//! finite-difference gradient oracle), [`data`] (seeded generators with
//! explicit group structure), [`harness`] (ERM / plain KD / JTT-lite /
//! GroupDRO-lite baselines, metrics, sweeps), and [`cli`] (the `debias-opt`
//! binary: subcommands `saddle`, `minmax`, `dedier`, `probe`, `sweep`,
//! `gradcheck`).
//!
//! Every run is a pure function of `(seed, config, data)`; see [`rng`] for
//! the generator contract. Start with the runnable examples:
//!
//! ```text
//! cargo run --release --example gradient_check
//! cargo run --release --example saddle_constraints
//! cargo run --release --example minmax_weights
//! cargo run --release --example gumbel_vs_hard
//! cargo run --release --example early_readout_probe
//! cargo run --release --example weighting_curve
//! cargo run --release --example dedier_vs_kd
//! cargo run --release --example baseline_sweep
//! ```

pub mod cli;
pub mod data;
pub mod dedier;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod minmax;
pub mod nn;
pub mod rng;
pub mod saddle;

pub use error::{Error, Result};
