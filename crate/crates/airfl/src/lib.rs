//! Seeded simulator of Byzantine-resilient federated learning over an
//! analog multiple-access channel.
//!
//! Devices train a shared model; each round they transmit analog-precoded
//! gradients that superpose per cluster on orthogonal resource blocks. The
//! server inverts the fading per cluster, filters cluster aggregates by
//! cosine similarity against a trusted reference gradient, tracks per-device
//! reputations and fairness queues, and plans the next round's aggregation
//! weights and clustering with a penalized successive-convexification solver.
//!
//! Top-level layout:
//! - [`learning`]: models, datasets, gradients, the synthetic quadratic task
//! - [`channel`]: Rayleigh fading, truncation, power-feasible precoding
//! - [`adversary`]: Byzantine gradient attacks
//! - [`aircomp`]: per-cluster analog aggregation with additive noise
//! - [`filtering`]: reference gradient, cosine filter, model update
//! - [`reputation`]: reputations, exclusion penalties, fairness queues
//! - [`planning`]: contributions, clustering, weighting optimization, QP solver
//! - [`analysis`]: convergence-bound evaluation and constants estimation
//! - [`experiment`]: round loop, schemes, metrics, sweeps
//! - [`oracle`]: solver check suites against exhaustive and analytic references

pub mod adversary;
pub mod aircomp;
pub mod analysis;
pub mod channel;
pub mod config;
pub mod experiment;
pub mod filtering;
pub mod learning;
pub mod oracle;
pub mod planning;
pub mod reputation;
pub mod rng;
pub mod util;
