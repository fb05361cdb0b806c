//! Wrist gesture recognition from IMU and PPG streams: data loading,
//! segmentation, augmentation, feature tokenization, the two-branch
//! Mix-Token classifier and evaluation.

pub mod augmentation;
pub mod config;
pub mod dataio;
pub mod domain;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod filter;
pub mod mixtoken;
pub mod pipeline;
pub mod segmentation;

pub use error::{Error, Result};
