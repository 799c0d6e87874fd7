//! Safety-critical receding-horizon control with learned parameters.
//!
//! This crate implements a parameterized model-predictive controller whose
//! safety constraints are high-order control barrier functions (HOCBFs), a
//! dense SQP/QP solver for the resulting nonlinear programs, a from-scratch
//! soft actor-critic loop that learns the controller parameters, and a
//! connected-vehicle highway on-ramp merging benchmark that measures travel
//! time, energy, fuel, and constraint infeasibility.
//!
//! The pieces compose bottom-up:
//!
//! * [`dynamics`] — kinematic bicycle model, RK4 discretization, analytic
//!   step Jacobians.
//! * [`barrier`] — barrier/Lyapunov families, Lie derivatives, and the
//!   affine-in-control HOCBF/CLF rows.
//! * [`qp`] / [`nlp`] — dense dual active-set QP solver and the SQP loop with
//!   an l1 merit line search and an elastic feasibility fallback.
//! * [`controller`] — horizon transcription, parameter vector layout, warm
//!   starts, and the receding-horizon `compute_control` entry point.
//! * [`sim`] — the merging scenario: arrivals, conflict structure, stepping,
//!   logging, metrics.
//! * [`rl`] — replay buffer, hand-rolled MLPs with verified gradients, the
//!   SAC update, observation/action maps, and the training loop.
//! * [`config`] / [`cli`] — configuration files, checkpoints, run manifests,
//!   and the five CLI subcommands (`simulate`, `train`, `evaluate`, `sweep`,
//!   `export-table`).
//!
//! # Runnable examples
//!
//! Each major capability has a standalone example:
//!
//! ```text
//! cargo run --example dynamics_rollout    # integrate the bicycle model
//! cargo run --example barrier_rows        # inspect HOCBF/CLF rows
//! cargo run --example qp_solve            # solve a small QP, print KKT residual
//! cargo run --example mpc_step            # one receding-horizon solve
//! cargo run --example merge_episode       # a short merging episode + metrics
//! cargo run --example train_toy           # SAC on a one-action bandit
//! cargo run --example sweep_presets       # compare fixed parameter presets
//! ```

pub mod barrier;
pub mod cli;
pub mod config;
pub mod controller;
pub mod dynamics;
pub mod geometry;
pub mod nlp;
pub mod qp;
pub mod rl;
pub mod sim;

pub use barrier::{BarrierKind, BarrierSpec, ClfSpec};
pub use controller::{ControllerTheta, MpcController, NeighborModel};
pub use dynamics::{ControlBounds, ControlInput, VehicleParams, VehicleState};
