//! Dense matrix arithmetic, reverse-mode differentiation and the
//! finite-difference oracle used to verify it.

mod gradcheck;
mod matrix;
mod sparse;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradRecord, REL_ERR_FLOOR};
pub use matrix::{matmul_threads, softmax_rows, Matrix};
pub use sparse::CsrMatrix;
pub use tape::{sigmoid, softplus, Gradients, ScalarFn, Tape, Var, LN_EPS};
