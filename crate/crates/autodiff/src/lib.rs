//! Define-by-run reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation as it executes. Leaves are created with
//! [`Tape::param`] (differentiated) or [`Tape::constant`] (not), and every
//! operation on a [`Var`] appends a node holding its forward value. Calling
//! [`Tape::backward`] on a 1x1 result sweeps the tape in reverse and returns
//! the gradient of each parameter leaf.
//!
//! Only scalar-to-array broadcasting is supported; everything else must be
//! shape-exact and is rejected with the offending shapes otherwise.
//!
//! ```
//! use autodiff::Tape;
//! use ndarray::array;
//!
//! let tape = Tape::new();
//! let x = tape.param(array![[3.0]]);
//! let y = x.mul(x).unwrap().sum();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x)[[0, 0]], 6.0);
//! ```

mod backward;
mod error;
mod gradcheck;
pub mod linalg;
mod tape;

pub use backward::Gradients;
pub use error::{AdError, Shape};
pub use gradcheck::{grad_check, GradCheckError, GradCheckReport};
pub use tape::{Array, Axis, Tape, Var};
