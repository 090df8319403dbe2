//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.
//!
//! Every op returns a new [`Var`]. A `Var` built only from constants carries
//! no graph, which is how inference runs without retaining intermediates.

mod elementwise;
pub mod gradcheck;
mod linalg;
mod structural;
mod var;

pub use elementwise::{
    add, add_const, div_rows_floored, glu, ln, mul, prelu, relu, scale, scale_const, sigmoid, softmax_rows, sqrt,
    sub, swish,
};
pub use linalg::{
    add_row, concat_cols, concat_rows, matmul, matmul_at, matmul_bt, reshape, slice_cols, slice_rows, sum, sum_rows,
    sum_sq, transpose,
};
pub use structural::{
    channel_affine, depthwise_conv1d, dropout, frame, normalize_columns, normalize_rows, overlap_add, ColumnStats,
    Framing,
};
pub use var::Var;

#[cfg(test)]
mod tests;
