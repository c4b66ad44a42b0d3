//! Distributionally robust regret-optimal control of finite-horizon linear
//! systems under Gelbrich-type mean/covariance ambiguity.

pub mod ambiguity;
pub mod dual_solver;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod inner_qp;
pub mod io;
pub mod lifting;
pub mod linalg;
pub mod projections;
pub mod sdp_export;

pub use error::{Error, Result};
