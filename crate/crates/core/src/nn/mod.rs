//! Neural-network layers on top of the autodiff core.

pub mod check;
mod ctx;
pub mod functional;
mod layers;
mod params;

pub use ctx::{Ctx, Mode, Updates};
pub use functional::{batch_norm, dense, instance_norm, layer_norm, BatchNormState, BATCH_NORM_MOMENTUM, NORM_EPS};
pub use layers::{dropout, Affine, BatchNorm, Dense, DepthwiseConv, Init, InstanceNorm, LayerNorm, PRelu, Scale};
pub use params::{ParamId, ParamStore, Parameter};
