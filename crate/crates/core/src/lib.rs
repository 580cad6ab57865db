//! All-at-once identification of an unknown reaction term, the state and a
//! source in the 1-D parabolic problem
//!
//! ```text
//! u̇ − ∇·(a∇u) + c u = φ + f(u)   in (0, T) × Ω,   u = 0 on ∂Ω,
//! ```
//!
//! where `f` is represented by a small `tanh` network (or a polynomial /
//! trigonometric baseline) and learned jointly with `u` from snapshot data.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod model;
pub mod neural;
pub mod par;
pub mod solvers;
pub mod surrogate;

pub use error::{Error, Result};
pub use grid::{Field, Grid};
pub use neural::NetParams;
pub use surrogate::{Nonlinearity, Surrogate};
