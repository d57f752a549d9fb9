//! Masked-autoencoder foundation model: token embedding, 3-axis
//! sinusoidal positional codes, random masking, a transformer encoder, a
//! deep transformer decoder, the reconstruction training loop,
//! checkpointing, and frozen-encoder feature extraction.

mod checkpoint;
mod features;
mod model;
mod train;

pub use checkpoint::MaeCheckpoint;
pub use features::{extract_features, EmbeddingMatrix, FeatureMode};
pub use model::{init_params, pos_matrix, section_specs, ParamSet};
pub use train::{pretrain, EpochStats};

use serde::{Deserialize, Serialize};

use crate::datacube::{detokenize, SpectralCube, TokenGrid, TOKEN_LEN};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Flattened token width: 8·8·3.
pub const TOKEN_DIM: usize = TOKEN_LEN;

/// Which tokens the reconstruction loss covers. The default scores the
/// full cube; `MaskedOnly` is retained as an ablation switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    AllTokens,
    MaskedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeConfig {
    pub embed_dim: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub mask_ratio: f64,
    pub loss_scope: LossScope,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MaeConfig {
    fn default() -> Self {
        MaeConfig {
            embed_dim: 64,
            encoder_depth: 4,
            decoder_depth: 6,
            heads: 4,
            mlp_ratio: 4.0,
            mask_ratio: 0.40,
            loss_scope: LossScope::AllTokens,
            epochs: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl MaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Parameter(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.embed_dim % 2 != 0 || self.embed_dim < 6 {
            return Err(Error::Parameter(format!(
                "embed_dim {} must be even and at least 6 for the 3-axis positional code",
                self.embed_dim
            )));
        }
        if self.encoder_depth == 0 || self.decoder_depth == 0 {
            return Err(Error::Parameter("depths must be at least 1".into()));
        }
        if self.decoder_depth < self.encoder_depth {
            return Err(Error::Parameter(format!(
                "deep-decoder profile requires decoder_depth {} >= encoder_depth {}",
                self.decoder_depth, self.encoder_depth
            )));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Parameter(format!(
                "mask_ratio {} outside (0, 1)",
                self.mask_ratio
            )));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(Error::Parameter("mlp_ratio must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Parameter("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

/// The random token partition for one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    masked: Vec<usize>,
    visible: Vec<usize>,
    total: usize,
}

impl MaskPlan {
    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn visible(&self) -> &[usize] {
        &self.visible
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Uniform random subset of round(mask_ratio · total) token positions
/// (round half up). Deterministic under the caller's RNG state.
pub fn make_mask(total_tokens: usize, mask_ratio: f64, rng: &mut Rng) -> Result<MaskPlan> {
    if total_tokens == 0 {
        return Err(Error::Parameter("make_mask over zero tokens".into()));
    }
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(Error::Parameter(format!(
            "mask_ratio {mask_ratio} outside (0, 1)"
        )));
    }
    let count = (mask_ratio * total_tokens as f64 + 0.5).floor() as usize;
    let mut masked = rng.choice_without_replacement(total_tokens, count)?;
    masked.sort_unstable();
    let mut in_mask = vec![false; total_tokens];
    for &i in &masked {
        in_mask[i] = true;
    }
    let visible = (0..total_tokens).filter(|&i| !in_mask[i]).collect();
    Ok(MaskPlan {
        masked,
        visible,
        total: total_tokens,
    })
}

/// Embeds the grid's tokens with the frozen checkpoint. With a mask,
/// only visible tokens are processed (training mode); without one, all
/// tokens are (inference mode). Rows come back in token enumeration
/// order as an [n, embed_dim] tensor.
pub fn encode(
    grid: &TokenGrid,
    checkpoint: &MaeCheckpoint,
    mask: Option<&MaskPlan>,
) -> Result<Tensor> {
    checkpoint.config.validate()?;
    let n = grid.token_count();
    if let Some(m) = mask {
        if m.total() != n {
            return Err(Error::Contract(format!(
                "mask covers {} tokens, grid has {n}",
                m.total()
            )));
        }
    }
    let rows: Option<&[usize]> = mask.map(|m| m.visible());
    let tokens = model::token_tensor(grid, rows);
    let pos = model::pos_matrix_subset(grid, checkpoint.config.embed_dim, rows);
    let mut fwd = model::Forward::new(&checkpoint.params, &checkpoint.config, false);
    let out = fwd.encode(&tokens, &pos)?;
    Ok(fwd.graph.value_tensor(out))
}

/// Runs the decoder over visible embeddings plus the learned mask token
/// and scores the reconstruction against the target grid. Returns the
/// reconstructed grid and the scalar loss under the checkpoint's
/// configured loss scope.
pub fn decode_and_loss(
    embeddings: &Tensor,
    mask: &MaskPlan,
    target: &TokenGrid,
    checkpoint: &MaeCheckpoint,
) -> Result<(TokenGrid, f64)> {
    checkpoint.config.validate()?;
    let n = target.token_count();
    if mask.total() != n {
        return Err(Error::Contract(format!(
            "mask covers {} tokens, target grid has {n}",
            mask.total()
        )));
    }
    let (rows, cols) = embeddings
        .dims2()
        .map_err(|_| Error::Shape("embeddings must be rank-2".into()))?;
    if rows != mask.visible().len() || cols != checkpoint.config.embed_dim {
        return Err(Error::Contract(format!(
            "embeddings [{rows}, {cols}] inconsistent with {} visible tokens × {}",
            mask.visible().len(),
            checkpoint.config.embed_dim
        )));
    }
    let mut fwd = model::Forward::new(&checkpoint.params, &checkpoint.config, false);
    let enc = fwd.graph.input(embeddings.clone());
    let pos_full = model::pos_matrix_subset(target, checkpoint.config.embed_dim, None);
    let recon = fwd.decode(enc, mask, &pos_full)?;
    let target_tensor = model::token_tensor(target, None);
    let loss = fwd.reconstruction_loss(recon, &target_tensor, mask, checkpoint.config.loss_scope)?;
    let loss_value = fwd.graph.values(loss)[0];

    let recon_values: Vec<f32> = fwd.graph.values(recon).iter().map(|&v| v as f32).collect();
    let grid = TokenGrid::from_tokens(
        recon_values,
        target.spatial_rows(),
        target.spatial_cols(),
        target.spectral_groups(),
        target.band_names().to_vec(),
        target.scale_note().to_string(),
    )?;
    Ok((grid, loss_value))
}

/// Full reconstruction of one grid under a mask: encode the visible
/// tokens, decode, and detokenize back to a cube.
pub fn reconstruct_cube(
    grid: &TokenGrid,
    checkpoint: &MaeCheckpoint,
    mask: &MaskPlan,
) -> Result<(SpectralCube, f64)> {
    let emb = encode(grid, checkpoint, Some(mask))?;
    let (recon_grid, loss) = decode_and_loss(&emb, mask, grid, checkpoint)?;
    Ok((detokenize(&recon_grid)?, loss))
}
