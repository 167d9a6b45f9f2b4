//! Differentiation machinery.
//!
//! Input derivatives (`du/dx`, `du/dt`, `d2u/dx2`) are propagated in forward
//! mode; parameter gradients come from reverse mode. Two independent routes
//! exist:
//!
//! - [`tape`] + [`dual`]: a scalar tape with forward-mode carriers built from
//!   taped scalars, so that gradients of PDE residuals with respect to every
//!   parameter fall out of one reverse sweep. Used as the reference.
//! - [`batch`]: the same computation fused per layer over a whole point set,
//!   with a hand-derived reverse pass. Used for training.

pub mod batch;
pub mod dual;
pub mod tape;

use std::ops::{Add, Div, Mul, Neg, Sub};

pub use batch::{batch_forward, BatchForward};
pub use dual::{forward_generic, forward_with_input_derivs, DerivOrder, DualValue};
pub use tape::{loss_gradient, ParamTape, Var};

/// Arithmetic shared by plain `f64` and taped scalars.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(&self) -> f64;
    /// A constant living in the same context as `self`.
    fn constant_like(&self, v: f64) -> Self;
    fn tanh(self) -> Self;
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }

    fn constant_like(&self, v: f64) -> Self {
        v
    }

    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}
