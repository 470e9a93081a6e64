//! Forward operations over tensors, each recording its backward rule on
//! the active [`Graph`](crate::graph::Graph).
//!
//! Convolutions and pools are written as restructured direct loops:
//! contiguous inner rows, frame-parallel where a frame's outputs are
//! disjoint. Every output element is produced by exactly one task with a
//! fixed inner reduction order, so results are bitwise deterministic
//! regardless of thread count. Naive reference loops live in the test
//! suite and the two paths must agree to 1e-6 relative.

mod conv;
mod linear;
mod loss;
mod pointwise;
mod pool;
mod reduce;

pub use conv::{conv1d_temporal, conv2d_per_frame, conv3d};
pub use linear::linear;
pub use loss::bce_multilabel_loss;
pub use pointwise::{add, mul, relu, sigmoid};
pub use pool::{avgpool3d, maxpool2d_per_frame, maxpool3d, PoolGeom};
pub use reduce::{spatial_avgpool, sum};

use crate::tensor::Scalar;

/// Work threshold below which frame-parallel dispatch is not worth it.
const PAR_MIN_WORK: u64 = 1 << 15;

pub(crate) fn frame_parallel(frames: usize, work: u64) -> bool {
    frames > 1 && work >= PAR_MIN_WORK && rayon::current_num_threads() > 1
}

/// Expect a 4-D [T, C, H, W] tensor and return its extents.
pub(crate) fn dims4<T: Scalar>(
    op: &'static str,
    x: &crate::tensor::Tensor<T>,
) -> crate::error::Result<(usize, usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(crate::error::TanError::shape(
            op,
            format!("expected 4-D [T,C,H,W] input, got {s:?}"),
        ));
    }
    Ok((s[0], s[1], s[2], s[3]))
}
