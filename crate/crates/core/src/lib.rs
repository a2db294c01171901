//! Safe trajectory gradient flow (STGF) control of a grid-interfacing
//! voltage-source inverter.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: dq-frame inverter dynamics, powers, current limit and costs.
//! * [`trajopt`]: the finite-horizon trajectory NLP stacked from the model.
//! * [`qp`]: a small dense active-set QP solver with KKT diagnostics.
//! * [`sgf`]: the safe gradient flow engine over any [`sgf::NlpFunctions`].
//! * [`controller`]: the rolling-horizon STGF controller, a droop baseline
//!   and the optimal-equilibrium solver.
//! * [`sim`]: closed-loop simulation with an RK4 plant.
//! * [`check`]: independent oracles and property suites used by the
//!   self-check command and the test suites.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod controller;
mod error;
pub mod model;
pub mod qp;
pub mod sgf;
pub mod sim;
pub mod trajopt;

pub use error::{Error, Result};
