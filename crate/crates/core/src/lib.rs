//! Numerical toolkit for anisotropic mixed-smoothness variational problems:
//! discrete a-gradients on tensor grids, A-quasiconvex envelopes, coercivity
//! estimates, direct-method solvers and empirical a-Young measures.

pub mod coercivity;
pub mod container;
pub mod energy;
pub mod envelope;
pub mod error;
pub mod grid;
pub mod integrand;
pub mod optim;
pub mod solver;
pub mod smoothness;
pub mod youngmeasure;

pub use error::{Error, Result};
pub use grid::{AGradientField, Grid, GridField};
pub use integrand::{builtin, Growth, Integrand, IntegrandSpec};
pub use smoothness::{MultiIndex, SmoothnessVector};
