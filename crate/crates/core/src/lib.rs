//! Simulation and numerical analysis of planar shot noise fields
//! `f(x) = Σ Y_i g(x − p_i)` and the percolation of their excursion sets.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod density;
pub mod error;
pub mod experiments;
pub mod fft2;
pub mod field;
pub mod inequalities;
pub mod kernels;
pub mod marks;
pub mod percolation;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use kernels::{Kernel, KernelFamily, NormTarget, Norms, TruncationMode};
pub use marks::MarkDistribution;
