//! Dense tensors and reverse-mode automatic differentiation.
//!
//! The tape records every operation applied to [`Var`] handles during a
//! forward pass. [`Tape::backward`] then walks the record in reverse and
//! accumulates adjoints for every leaf created with [`Tape::leaf`].
//!
//! ```
//! use treat_autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
//! let y = tape.l2_norm_sq(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```
//!
//! Only scalar-tensor broadcasting exists. Everything else (bias rows,
//! per-row weights) goes through explicit [`Tape::repeat_rows`] and
//! [`Tape::repeat_cols`].

mod error;
mod gradcheck;
mod tape;
mod tensor;

pub use error::AutodiffError;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
