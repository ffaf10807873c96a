//! Seeded parameter initialization.
//!
//! All draws happen in f64 from a single ChaCha8 stream in a fixed
//! declaration order, so a given seed yields the same weights regardless
//! of the scalar type the model later runs in.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamSet, Scalar, Tensor};
use crate::error::Result;

use super::config::ModelConfig;

struct Init<'a, F: Scalar> {
    rng: &'a mut ChaCha8Rng,
    params: &'a mut ParamSet<F>,
}

impl<F: Scalar> Init<'_, F> {
    fn glorot(&mut self, path: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<()> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(path, shape, limit)
    }

    fn uniform(&mut self, path: &str, shape: &[usize], limit: f64) -> Result<()> {
        let n: usize = shape.iter().product();
        let data: Vec<F> = (0..n)
            .map(|_| F::from_f64(self.rng.gen_range(-limit..limit)))
            .collect();
        self.params
            .insert(path, Tensor::new(shape.to_vec(), data)?, true)
    }

    fn filled(&mut self, path: &str, shape: &[usize], value: f64, trainable: bool) -> Result<()> {
        self.params
            .insert(path, Tensor::full(shape.to_vec(), F::from_f64(value)), trainable)
    }

    fn dense(&mut self, prefix: &str, d_in: usize, d_out: usize) -> Result<()> {
        self.glorot(&format!("{prefix}.w"), &[d_in, d_out], d_in, d_out)?;
        self.filled(&format!("{prefix}.b"), &[d_out], 0.0, true)
    }

    /// Per-head Q/K/V projections plus the output projection; no biases.
    fn attention(&mut self, prefix: &str, d: usize, n_heads: usize) -> Result<()> {
        let dk = d / n_heads;
        for h in 0..n_heads {
            for name in ["wq", "wk", "wv"] {
                self.glorot(&format!("{prefix}.h{h}.{name}"), &[d, dk], d, dk)?;
            }
        }
        self.glorot(&format!("{prefix}.wo"), &[d, d], d, d)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Result<()> {
        self.filled(&format!("{prefix}.gamma"), &[d], 1.0, true)?;
        self.filled(&format!("{prefix}.beta"), &[d], 0.0, true)
    }
}

/// Build the full parameter set for `config`. Batch-norm running
/// statistics are stored as non-trainable parameters.
pub fn init_params<F: Scalar>(config: &ModelConfig, seed: u64) -> Result<ParamSet<F>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let mut init = Init {
        rng: &mut rng,
        params: &mut params,
    };

    init.dense("temporal.proj", config.f, config.d_model)?;
    init.uniform("temporal.pos", &[config.w, config.d_model], 0.05)?;
    for layer in 0..config.n_transformer_layers {
        let p = format!("temporal.block{layer}");
        init.attention(&format!("{p}.attn"), config.d_model, config.n_heads_temporal)?;
        init.norm(&format!("{p}.ln1"), config.d_model)?;
        init.dense(&format!("{p}.ffn.l1"), config.d_model, config.ffn_hidden())?;
        init.dense(&format!("{p}.ffn.l2"), config.ffn_hidden(), config.d_model)?;
        init.norm(&format!("{p}.ln2"), config.d_model)?;
    }

    let mut c_in = 1usize;
    for (i, &c_out) in config.conv_filters.iter().enumerate() {
        let p = format!("spatial.block{i}");
        let k = config.conv_kernel;
        init.glorot(&format!("{p}.conv.w"), &[k, c_in, c_out], k * c_in, k * c_out)?;
        init.filled(&format!("{p}.conv.b"), &[c_out], 0.0, true)?;
        init.norm(&format!("{p}.bn"), c_out)?;
        init.filled(&format!("{p}.bn.running_mean"), &[c_out], 0.0, false)?;
        init.filled(&format!("{p}.bn.running_var"), &[c_out], 1.0, false)?;
        c_in = c_out;
    }
    init.dense("spatial.dense", config.spatial_flat_width()?, config.d_spat)?;

    init.dense("fusion.proj_temporal", config.d_model, config.d_common)?;
    init.dense("fusion.proj_spatial", config.d_spat, config.d_common)?;
    init.attention("fusion.attn", config.d_common, config.n_heads_fusion)?;
    init.dense("fusion.dense", config.combined_input_width(), config.d_combined)?;

    init.dense("head.main", config.d_combined, 1)?;
    init.dense("head.traffic", config.d_combined, 1)?;
    init.dense("head.protocol", config.d_combined, config.n_protocol)?;
    init.dense("head.consistency", config.d_combined, 1)?;

    Ok(params)
}
