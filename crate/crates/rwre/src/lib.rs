//! Simulation laboratory for nearest-neighbor random walks in i.i.d. random
//! environments on Z^d.
//!
//! The crate provides:
//! - deterministic quenched environments backed by a counter-based per-site
//!   RNG ([`environment`]),
//! - walk simulation with exact absorbing-chain exit solvers ([`walker`]),
//! - box geometry for directional exit statistics ([`lattice`]),
//! - regeneration-time detection and renewal statistics ([`regeneration`]),
//! - heavy-tail exponent estimators ([`tails`]),
//! - feasibility of divergence-constrained flows on finite directed graphs,
//!   constructive box-to-box unit flows with verifiable certificates, and
//!   path decompositions ([`flows`]),
//! - ellipticity/ballisticity condition checkers ([`conditions`]).
//!
//! Everything is reproducible: all randomness flows through explicit 64-bit
//! seeds, and parallel batteries assign per-task seeds so results do not
//! depend on scheduling.

pub mod conditions;
pub mod environment;
pub mod flows;
pub mod lattice;
pub mod linsolve;
pub mod regeneration;
pub mod rng;
pub mod stats;
pub mod tails;
pub mod walker;
