//! Gold-prospectivity pipeline over multispectral image cubes.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! - [`datacube`] — the cube data model, on-disk `.mscube` format, the
//!   8×8×3 spectral–spatial tokenizer, and RGB composite export.
//! - [`numerics`] — dense tensors with reverse-mode automatic
//!   differentiation, an Adam optimizer, and a fixed, documented RNG.
//! - [`mae`] — the masked-autoencoder foundation model: masking,
//!   transformer encoder/decoder, training loop, checkpoints, and
//!   frozen-encoder feature extraction.
//! - [`quality`] — reconstruction metrics (MSE, PSNR, SSIM, SAM, ERGAS)
//!   and corpus-level reporting.
//! - [`gbdt`] — a second-order gradient-boosted tree binary classifier
//!   with exact greedy split finding.
//! - [`evalkit`] — image-level splits, patch/image metrics, ROC/AUC,
//!   majority voting, and experiment orchestration.
//! - [`sampler`] — acquisition planning and the synthetic scene
//!   generator used for tests and demos.

pub mod datacube;
pub mod error;
pub mod evalkit;
pub mod gbdt;
pub mod mae;
pub mod numerics;
pub mod quality;
pub mod sampler;

pub use error::{Error, Result};
