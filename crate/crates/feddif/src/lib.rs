//! Deterministic simulator and library for diffusion-based federated learning
//! (FedDif) over device-to-device wireless links.
//!
//! Local models hop between participating users (PUEs) before each global
//! aggregation so that every model accumulates a near-uniform mixture of the
//! users' non-IID class distributions. The hop schedule is decided by an
//! auction: users bid the expected decrease of their model's distance to the
//! uniform distribution, the base station weighs bids against the bandwidth
//! each transmission would cost, and a maximum-weight matching picks the
//! winners.
//!
//! The crate is organized around that pipeline:
//!
//! - [`dist`] — class-distribution algebra: DSI/DoL vectors, distance to
//!   uniform, the optimal-DSI solution and its feasibility bound, and
//!   Dirichlet non-IID partitioning.
//! - [`channel`] — pathloss, Rayleigh fading, spectral efficiency, bandwidth
//!   cost per model transmission, sub-frame accounting and QoS/outage gating.
//! - [`auction`] — bids, constraint-filtered edge weights, Kuhn–Munkres
//!   matching and first-come-first-served bandwidth allocation.
//! - [`learn`] — logistic regression, linear SVM and a small MLP trained with
//!   mini-batch SGD, FedAvg aggregation, a pooled-data training oracle and
//!   weight-divergence measurement.
//! - [`sim`] — the communication-round protocol: deployment, broadcast,
//!   diffusion loop with stop condition, aggregation and metrics.
//! - [`config`] / [`output`] / [`runner`] — experiment specs, sweeps, CSV/JSON
//!   persistence and summaries for the `feddif` binary.
//!
//! Everything is a pure function of its inputs plus an explicitly passed,
//! seeded random stream; a whole experiment is reproducible byte-for-byte
//! from its config.

pub mod auction;
pub mod channel;
pub mod config;
pub mod dist;
pub mod learn;
pub mod output;
pub mod rng;
pub mod runner;
pub mod sim;

pub use config::{ExperimentSpec, Mode, SimConfig};
pub use dist::{DiffusionChain, DistanceMetric, Dol, Dsi, PueId};
pub use learn::{LocalModel, ModelKind, ModelParams};
pub use sim::{ExperimentResult, RoundMetrics, Simulation};
