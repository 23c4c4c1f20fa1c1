//! Deterministic, permutation-invariant point cloud down-sampling with the
//! Critical Points Layer, plus the pieces needed to train a small CP-Net
//! classifier around it.
//!
//! * [`pcio`]: mesh and point cloud files, sampling, normalization, augmentation
//! * [`cpl`]: critical point selection and baseline samplers
//! * [`nn`]: reverse-mode autodiff and network layers
//! * [`cpnet`]: network assembly, synthetic data, training, checkpoints, ablations
//! * [`bench`]: timing harness for the samplers

pub mod bench;
pub mod cpl;
pub mod cpnet;
pub mod nn;
pub mod pcio;
