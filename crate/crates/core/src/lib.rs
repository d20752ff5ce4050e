//! Hermite-coefficient solvers for a finite-dimensional SDE driven by
//! Brownian motion and Poisson random measures, and for the associated SPDE
//! on the Hermite-Sobolev scale obtained by translating an initial
//! distribution along the SDE solution.

pub mod cli;
pub mod coefficients;
pub mod config;
pub mod error;
pub mod hermite;
pub mod inequalities;
pub mod noise;
pub mod operators;
pub mod quadrature;
pub mod sde;
pub mod sobolev;
pub mod spde;

pub use error::{Error, Result};
pub use hermite::{Basis, MultiIndex};
pub use operators::{CoeffOperator, SpaceOperators, Translator};
pub use sobolev::HermiteRep;
