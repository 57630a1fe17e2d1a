//! Minimal differentiable building blocks: tape, convolution, normalization,
//! parameter storage.

pub mod conv;
pub mod gemm;
pub mod layers;
pub mod norm;
pub mod ops;
pub mod params;
pub mod tape;

pub use conv::{conv2d, conv2d_forward, ConvGeom};
pub use layers::{BatchNorm2d, Conv2d, ConvBn};
pub use params::{Mode, ParamGroup, ParamId, ParamKind, ParamStore, Session};
pub use tape::{Backward, GradSink, Gradients, Tape, Var};
