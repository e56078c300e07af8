//! Runtime for rigged 3D Gaussian head avatars.
//!
//! The pipeline is split into a cold part that runs once per identity and a
//! hot part that runs every frame:
//!
//! * [`rig`] holds the parametric head rig (template, blendshape bases,
//!   joint regressor, skinning weights) and its reference math.
//! * [`subdivision`] densifies the rig mesh together with every per-vertex
//!   animation attribute.
//! * [`asset`] bakes a [`CanonicalGaussianAvatar`] and reads/writes it as a
//!   section-table binary file.
//! * [`animator`] applies pose/expression correctives and linear blend
//!   skinning to the baked avatar without allocating.
//! * [`render`] is a deterministic tile-based Gaussian splatting rasterizer
//!   with a brute-force oracle and an analytic color gradient.
//! * [`reconstructor`] is a small point-query transformer that predicts
//!   Gaussian attributes from image features.
//! * [`losses`] and [`metrics`] cover training losses and image metrics.

// `!(x > y)` is used on purpose so NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod animator;
pub mod asset;
pub mod container;
pub mod driving;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod reconstructor;
pub mod render;
pub mod rig;
pub mod subdivision;
pub mod synthetic;

pub use animator::{animate, animate_sequence, animate_serial, AnimateError, PosedGaussianSet, SequenceStats};
pub use asset::{bake, CanonicalGaussianAvatar, GaussianAttributes, ValidationReport};
pub use driving::{CameraSpec, DrivingFrame};
pub use render::{render, render_oracle, Camera, Rasterizer, RenderTarget, SplatView};
pub use rig::{ExprParams, PoseParams, RigTemplate, ShapeParams};
pub use subdivision::{subdivide, subdivide_once, AttributedMesh};
