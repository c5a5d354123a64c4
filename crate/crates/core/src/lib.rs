//! Ergodic and singular-perturbation numerics for the Grushin-type
//! Ornstein-Uhlenbeck process.
//!
//! The fast variable `Y` solves `dY = -alpha Y dt + sqrt(2) sigma_rho dW` with
//! `sigma_rho sigma_rho^T = diag(1, y1^2 + rho^2)`. The crate provides
//! Monte Carlo simulation, monotone finite differences for the generator,
//! ergodic constants and correctors, effective Hamiltonians for a catalog of
//! control problems, and a two-scale solver for the singularly perturbed
//! Hamilton-Jacobi-Bellman equation.

// Parameter checks are written `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod ergodic;
pub mod error;
pub mod grid;
pub mod grid_pde;
pub mod linalg;
pub mod perturb;
pub mod simulate;

pub use dynamics::{DynamicsSpec, Jet2, Point2, Sym2};
pub use error::{Error, Result};
pub use grid::{Field, Grid2D};
pub use grid_pde::{DiscreteGenerator, Stencil};
