//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradReport, InputError, REL_FLOOR};
pub use tape::{AttrValue, Attrs, Gradients, Primitive, Tape, Var};
pub use tensor::Tensor;

