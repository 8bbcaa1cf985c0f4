//! Robust expected utility maximization on finite scenario lattices.

pub mod ambiguity;
pub mod arbitrage;
pub mod lattice;
pub mod lp;
pub mod solver;
pub mod transport;
pub mod utility;
