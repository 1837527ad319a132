//! Dense tensors and reverse-mode automatic differentiation.

mod gradcheck;
mod tape;
mod value;

pub use gradcheck::finite_difference_check;
pub use tape::{Backward, Tape, Var};
pub use value::{channel_stats, Tensor};
