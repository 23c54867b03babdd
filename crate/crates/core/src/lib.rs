//! Pose-centered affordance learning at desk scale.
//!
//! Two halves make up the crate. The curation half turns demonstration
//! records into training labels: a palm-plane / finger-pair analysis maps a
//! hand skeleton to a gripper contact orientation, and tracked object points
//! inside the inter-finger region are fitted with a Gaussian mixture whose
//! mean-of-means is the contact point. The learning half is a conditional
//! denoising diffusion model over (contact point, contact orientation) pairs,
//! conditioned on an RGB-D frame, an object mask, and an instruction id.

pub mod autograd;
pub mod config;
pub mod contact;
pub mod denoiser;
pub mod diffusion;
pub mod eval;
pub mod geometry;
pub mod grip;
pub mod harness;
pub mod synth;

pub use geometry::{
    CameraIntrinsics, DepthMap, PixelPoint, Point3, Pose6DoF, PoseCenteredAffordance, Quaternion,
    Rot6D,
};
