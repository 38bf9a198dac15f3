//! Keypoint-aware attention analysis for Vision Transformers.
//!
//! SIFT keypoints mark which image patches carry local structure; the
//! analysis then measures how each attention head distributes weight
//! between keypoint and non-keypoint patches, and the masking module turns
//! those scores into mask plans.

pub mod analysis;
pub mod bundle;
pub mod image;
pub mod patch;
pub mod sift;
pub mod tensor;
pub mod vit;
pub mod masking;
pub mod report;
