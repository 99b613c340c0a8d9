//! Competitive-equilibrium computation for peer-to-peer energy trading
//! communities.
//!
//! A community of prosumers negotiates bilateral trades by dual
//! decomposition: each participant best-responds to posted trade prices, and
//! prices move along the pairwise imbalance. Three negotiation loops are
//! provided — the fully synchronous baseline, an edge-activated variant where
//! a coordinator enables a subset of links per round, and a node-activated
//! variant where each prosumer unilaterally picks whom to push proposals to.
//! Activation strategies (round-robin, random, greedy imbalance-based) are
//! pluggable, and the library ships the convergence monitors and the
//! centralized reference solver used to validate runs numerically.

pub mod local;
pub mod model;
pub mod qp;
pub mod select;
