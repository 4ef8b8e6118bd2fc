//! Sparse generalized additive models with spike-and-slab group lasso
//! selection. Each covariate gets a centered B-spline expansion; an EM
//! algorithm alternates slab-probability updates with an adaptively
//! weighted group lasso solved by IRLS plus block coordinate descent.

pub mod basis;
pub mod cli;
pub mod cv;
pub mod em;
pub mod error;
pub mod family;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod prostate;
pub mod sim;
pub mod solver;
pub mod ssgl;

pub use error::{Error, Result};
pub use family::Family;
