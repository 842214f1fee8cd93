//! Dense tensors with reverse-mode automatic differentiation.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport, ParamCheck};
pub use tape::{Gradients, ParamId, ParamStore, Parameter, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softplus;
