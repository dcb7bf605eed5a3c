//! Finite-volume numerics for a tracer particle hopping on a disordered
//! lattice while coupled to local harmonic oscillators.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod gauge;
pub mod krylov;
pub mod metric;
pub mod model;
pub mod resolvent;
pub mod rng;
pub mod sparse;
pub mod spectral;
pub mod state_space;

pub use error::{Error, Result};
pub use metric::{upsilon, LabeledState};
pub use model::{DisorderRealization, Model, ModelParams};
pub use sparse::SparseOperator;
pub use spectral::{diagonalize, BandSet, EigenSystem, SpectralMeasure};
pub use state_space::{BasisIndex, Config, Lattice, StateSpace};
