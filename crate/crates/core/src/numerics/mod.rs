//! Dense `f64` arrays, reverse-mode gradients, a finite-difference gradient
//! oracle and the Adam optimizer.

mod adam;
mod array;
mod gradcheck;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use array::{
    dot, layer_norm, layer_norm_rows, matmul, matmul_at, matmul_bt, mean, norm, softmax_rows,
    variance, DenseArray,
};
pub use gradcheck::{finite_diff_grad, max_relative_error, RELATIVE_ERROR_FLOOR};
pub use tape::{gelu, NodeId, Tape};
