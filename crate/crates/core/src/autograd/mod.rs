//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.

mod conv;
mod gradcheck;
mod ops;
mod tape;

pub use conv::Conv2dParams;
pub use gradcheck::{gradcheck, gradcheck_with, GradcheckOptions, GradcheckReport, GRADCHECK_STEP};
pub(crate) use ops::sigmoid_f32;
pub use tape::{Gradients, Tape, Var};

#[cfg(test)]
mod tests;
