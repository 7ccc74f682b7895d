//! Geometry and numerics of a grid-anchor, skipped-feature-pyramid object
//! detector: anchor assignment, box coding, CIoU losses with analytic
//! gradients, FPN/SFPN/PAN topologies at toy scale, post-processing and
//! COCO-style evaluation.

pub mod boxcodec;
pub mod boxgeom;
pub mod datasets;
pub mod error;
pub mod evalkit;
pub mod gridanchor;
pub mod lossfn;
pub mod postproc;
pub mod pyramid;
pub mod rng;

pub use boxcodec::{CodedBox, HeadLogits};
pub use boxgeom::PixelBox;
pub use error::{Error, Result};
pub use gridanchor::{Anchor, Assignment, GridSpec, STRIDES};
pub use postproc::Detection;
pub use pyramid::{FeatureMap, PyramidMode, TopologyGraph};
