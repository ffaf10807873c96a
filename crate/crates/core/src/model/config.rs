//! Model hyperparameters and architecture variants.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsanError};

/// Architecture variants for ablation runs: each removes one structural
/// component from the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArchVariant {
    #[default]
    Full,
    /// Fusion attends over the spatial token alone.
    NoTemporal,
    /// Fusion attends over the temporal token alone.
    NoSpatial,
    /// Concatenate the two projected tokens straight into the combined
    /// dense layer; no fusion attention.
    NoCrossAttention,
}

/// Hyperparameters of the detection model. Defaults reproduce the
/// reference configuration; `f` is the encoded NSL-KDD feature width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Temporal window length.
    pub w: usize,
    /// Encoded feature width per record.
    pub f: usize,
    /// Temporal feature dimension after the input projection.
    pub d_model: usize,
    pub n_heads_temporal: usize,
    pub n_transformer_layers: usize,
    /// Channels of the successive conv blocks.
    pub conv_filters: Vec<usize>,
    pub conv_kernel: usize,
    /// Max-pooling window of each conv block.
    pub pool: usize,
    /// Dropout rate inside the conv blocks.
    pub dropout: f64,
    /// Width of the spatial feature vector.
    pub d_spat: usize,
    /// Common projection width for fusion.
    pub d_common: usize,
    pub n_heads_fusion: usize,
    /// Width of the combined representation feeding the heads.
    pub d_combined: usize,
    /// Number of protocol classes for the auxiliary head.
    pub n_protocol: usize,
    /// Decision threshold on the main-head probability.
    pub threshold: f64,
    pub variant: ArchVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            w: 5,
            f: 122,
            d_model: 128,
            n_heads_temporal: 2,
            n_transformer_layers: 1,
            conv_filters: vec![32, 64],
            conv_kernel: 3,
            pool: 2,
            dropout: 0.3,
            d_spat: 128,
            d_common: 64,
            n_heads_fusion: 2,
            d_combined: 64,
            n_protocol: 3,
            threshold: 0.5,
            variant: ArchVariant::Full,
        }
    }
}

impl ModelConfig {
    /// Hidden width of the transformer feed-forward network. Not an
    /// independent hyperparameter: fixed at the conventional 4x d_model.
    pub fn ffn_hidden(&self) -> usize {
        4 * self.d_model
    }

    /// Sequence lengths after each conv block applied to the `f`-long
    /// spatial input: valid convolution then pooling.
    pub fn spatial_lengths(&self) -> Result<Vec<usize>> {
        let mut l = self.f;
        let mut out = Vec::with_capacity(self.conv_filters.len());
        for (i, _) in self.conv_filters.iter().enumerate() {
            if l < self.conv_kernel {
                return Err(TsanError::config(format!(
                    "spatial input too short: block {i} sees length {l} < kernel {}",
                    self.conv_kernel
                )));
            }
            l = (l - self.conv_kernel + 1) / self.pool;
            if l == 0 {
                return Err(TsanError::config(format!(
                    "spatial input too short: block {i} pools to length 0"
                )));
            }
            out.push(l);
        }
        Ok(out)
    }

    /// Flattened width after the conv trunk.
    pub fn spatial_flat_width(&self) -> Result<usize> {
        let lengths = self.spatial_lengths()?;
        Ok(lengths.last().unwrap() * self.conv_filters.last().unwrap())
    }

    /// Input width of the combined dense layer, which depends on whether
    /// fusion attends or concatenates.
    pub fn combined_input_width(&self) -> usize {
        match self.variant {
            ArchVariant::NoCrossAttention => 2 * self.d_common,
            _ => self.d_common,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w < 1 {
            return Err(TsanError::config("window length must be >= 1".to_string()));
        }
        if self.n_transformer_layers < 1 {
            return Err(TsanError::config(
                "need at least one transformer layer".to_string(),
            ));
        }
        if self.n_heads_temporal == 0 || self.d_model % self.n_heads_temporal != 0 {
            return Err(TsanError::config(format!(
                "d_model {} must be divisible by n_heads_temporal {}",
                self.d_model, self.n_heads_temporal
            )));
        }
        if self.n_heads_fusion == 0 || self.d_common % self.n_heads_fusion != 0 {
            return Err(TsanError::config(format!(
                "d_common {} must be divisible by n_heads_fusion {}",
                self.d_common, self.n_heads_fusion
            )));
        }
        if self.conv_filters.is_empty() {
            return Err(TsanError::config(
                "conv_filters must name at least one block".to_string(),
            ));
        }
        if self.conv_kernel < 1 || self.pool < 1 {
            return Err(TsanError::config(
                "conv_kernel and pool must be >= 1".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TsanError::config(format!(
                "dropout {} must be in [0, 1)",
                self.dropout
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(TsanError::config(format!(
                "threshold {} must be in [0, 1]",
                self.threshold
            )));
        }
        if self.n_protocol < 1 {
            return Err(TsanError::config(
                "need at least one protocol class".to_string(),
            ));
        }
        self.spatial_lengths()?;
        Ok(())
    }
}
