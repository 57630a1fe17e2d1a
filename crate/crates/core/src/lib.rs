//! Siamese region-proposal tracking with depthwise correlation and
//! layer-wise aggregation, sized to train on a CPU.

pub mod backbone;
pub mod bias_lab;
pub mod checkpoint;
pub mod correlation;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod image;
pub mod model;
pub mod nn;
pub mod rpn_head;
pub mod sampling;
pub mod tensor;
pub mod tracker;
pub mod training;

pub use error::{Error, Result};
