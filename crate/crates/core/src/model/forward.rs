//! Model assembly and forward pass.
//!
//! The model couples a transformer-style temporal encoder over record
//! windows with a 1-D convolutional spatial encoder over the latest
//! record, fuses both through attention over a two-token sequence, and
//! feeds the fused vector to four output heads (attack probability,
//! traffic volume, protocol class, consistency probability).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BnUpdate, Mode, ParamSet, Scalar, Tape, Tensor, Var};
use crate::error::{Result, TsanError};

use super::config::{ArchVariant, ModelConfig};
use super::init::init_params;

/// Epsilon inside layer-norm and batch-norm denominators.
pub const NORM_EPS: f64 = 1e-5;
/// EMA weight given to the current batch when updating running stats.
pub const BN_MOMENTUM: f64 = 0.1;

/// Binary decision at a threshold: attack iff the score strictly
/// exceeds it, so a tie maps to the benign class.
pub fn threshold_decision(score: f64, threshold: f64) -> u8 {
    if score > threshold {
        1
    } else {
        0
    }
}

pub struct Model<F: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<F>,
}

impl<F: Scalar> std::fmt::Debug for Model<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("params", &self.params.len())
            .finish()
    }
}

/// Everything a single forward pass produces: head variables still on
/// the tape (for loss construction), detached intermediate values, and
/// the attention matrices for introspection.
pub struct ForwardPass<F: Scalar> {
    pub y_main: Var,
    pub y_traffic: Var,
    pub y_protocol: Var,
    pub y_consistency: Var,
    pub h_temp: Option<Var>,
    pub h_spat: Option<Var>,
    pub h_combined: Var,
    /// Per transformer layer, per head: (B, w, w) softmax weights.
    pub attn_temporal: Vec<Vec<Tensor<F>>>,
    /// Per fusion head: (B, T, T) softmax weights, T in {1, 2}.
    pub attn_fusion: Vec<Tensor<F>>,
    /// Batch statistics to fold into running stats, keyed by the
    /// batch-norm parameter prefix. Empty in eval mode.
    pub bn_updates: Vec<(String, BnUpdate<F>)>,
}

/// Plain head values read back off the tape.
#[derive(Debug, Clone)]
pub struct HeadOutputs {
    pub y_main: Vec<f32>,
    pub y_traffic: Vec<f32>,
    /// Row-major (B, n_protocol) class probabilities.
    pub y_protocol: Vec<f32>,
    pub n_protocol: usize,
    pub y_consistency: Vec<f32>,
}

impl<F: Scalar> ForwardPass<F> {
    pub fn head_outputs(&self, tape: &Tape<F>) -> HeadOutputs {
        let protocol = tape.value(self.y_protocol);
        HeadOutputs {
            y_main: tape.value(self.y_main).to_f32_vec(),
            y_traffic: tape.value(self.y_traffic).to_f32_vec(),
            y_protocol: protocol.to_f32_vec(),
            n_protocol: *protocol.shape().last().unwrap(),
            y_consistency: tape.value(self.y_consistency).to_f32_vec(),
        }
    }
}

impl<F: Scalar> Model<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Linear layer `x W + b` with parameters under `prefix`.
    pub(crate) fn dense(&self, tape: &mut Tape<F>, x: Var, prefix: &str) -> Result<Var> {
        let w = self.params.leaf(tape, &format!("{prefix}.w"))?;
        let b = self.params.leaf(tape, &format!("{prefix}.b"))?;
        let xw = tape.matmul(x, w)?;
        tape.add_broadcast(xw, b)
    }

    /// Multi-head self-attention over `x` of shape (B, T, D). Returns
    /// the attended sequence and the per-head softmax matrices.
    fn attention(
        &self,
        tape: &mut Tape<F>,
        x: Var,
        prefix: &str,
        n_heads: usize,
    ) -> Result<(Var, Vec<Tensor<F>>)> {
        let shape = tape.value(x).shape().to_vec();
        let (b, t, d) = (shape[0], shape[1], shape[2]);
        let dk = d / n_heads;
        let scale = F::from_f64(1.0 / (dk as f64).sqrt());
        let flat = tape.reshape(x, vec![b * t, d])?;
        let mut heads = Vec::with_capacity(n_heads);
        let mut mats = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let proj = |tape: &mut Tape<F>, name: &str| -> Result<Var> {
                let w = self.params.leaf(tape, &format!("{prefix}.h{h}.{name}"))?;
                let p = tape.matmul(flat, w)?;
                tape.reshape(p, vec![b, t, dk])
            };
            let q = proj(tape, "wq")?;
            let k = proj(tape, "wk")?;
            let v = proj(tape, "wv")?;
            let kt = tape.transpose_last2(k)?;
            let scores = tape.bmm(q, kt)?;
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_last(scaled)?;
            mats.push(tape.value(attn).clone());
            heads.push(tape.bmm(attn, v)?);
        }
        let cat = tape.concat_last(&heads)?;
        let cat_flat = tape.reshape(cat, vec![b * t, d])?;
        let wo = self.params.leaf(tape, &format!("{prefix}.wo"))?;
        let out = tape.matmul(cat_flat, wo)?;
        Ok((tape.reshape(out, vec![b, t, d])?, mats))
    }

    /// Temporal encoder: projection + positions, transformer layers,
    /// mean pooling over the window. Returns (B, d_model) features and
    /// the attention matrices per layer.
    pub fn encode_temporal(
        &self,
        tape: &mut Tape<F>,
        x_temporal: Var,
        _mode: Mode,
    ) -> Result<(Var, Vec<Vec<Tensor<F>>>)> {
        let c = &self.config;
        let shape = tape.value(x_temporal).shape().to_vec();
        let (b, w, f) = (shape[0], shape[1], shape[2]);
        let eps = F::from_f64(NORM_EPS);

        let flat = tape.reshape(x_temporal, vec![b * w, f])?;
        let proj = self.dense(tape, flat, "temporal.proj")?;
        let mut h = tape.reshape(proj, vec![b, w, c.d_model])?;
        let pos = self.params.leaf(tape, "temporal.pos")?;
        h = tape.add_broadcast(h, pos)?;

        let mut all_mats = Vec::with_capacity(c.n_transformer_layers);
        for layer in 0..c.n_transformer_layers {
            let p = format!("temporal.block{layer}");
            let (att, mats) = self.attention(tape, h, &format!("{p}.attn"), c.n_heads_temporal)?;
            all_mats.push(mats);
            let res = tape.add(h, att)?;
            let g1 = self.params.leaf(tape, &format!("{p}.ln1.gamma"))?;
            let b1 = self.params.leaf(tape, &format!("{p}.ln1.beta"))?;
            h = tape.layernorm(res, g1, b1, eps)?;

            let hf = tape.reshape(h, vec![b * w, c.d_model])?;
            let mid = self.dense(tape, hf, &format!("{p}.ffn.l1"))?;
            let act = tape.relu(mid);
            let out = self.dense(tape, act, &format!("{p}.ffn.l2"))?;
            let ff = tape.reshape(out, vec![b, w, c.d_model])?;
            let res2 = tape.add(h, ff)?;
            let g2 = self.params.leaf(tape, &format!("{p}.ln2.gamma"))?;
            let b2 = self.params.leaf(tape, &format!("{p}.ln2.beta"))?;
            h = tape.layernorm(res2, g2, b2, eps)?;
        }
        let pooled = tape.mean_axis1(h)?;
        Ok((pooled, all_mats))
    }

    /// Spatial encoder: conv blocks (conv, max-pool, batch-norm,
    /// dropout) over the single-record features treated as a length-f
    /// sequence with one channel, then flatten and a ReLU dense layer.
    pub fn encode_spatial<R: Rng>(
        &self,
        tape: &mut Tape<F>,
        x_spatial: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Vec<(String, BnUpdate<F>)>)> {
        let c = &self.config;
        let shape = tape.value(x_spatial).shape().to_vec();
        let (b, f) = (shape[0], shape[1]);
        let eps = F::from_f64(NORM_EPS);
        let momentum = F::from_f64(BN_MOMENTUM);

        let mut h = tape.reshape(x_spatial, vec![b, f, 1])?;
        let mut updates = Vec::new();
        for (i, _) in c.conv_filters.iter().enumerate() {
            let p = format!("spatial.block{i}");
            let w = self.params.leaf(tape, &format!("{p}.conv.w"))?;
            let bias = self.params.leaf(tape, &format!("{p}.conv.b"))?;
            h = tape.conv1d(h, w, bias)?;
            h = tape.maxpool1d(h, c.pool)?;
            let gamma = self.params.leaf(tape, &format!("{p}.bn.gamma"))?;
            let beta = self.params.leaf(tape, &format!("{p}.bn.beta"))?;
            let rm = self.params.tensor(&format!("{p}.bn.running_mean"))?;
            let rv = self.params.tensor(&format!("{p}.bn.running_var"))?;
            let (out, update) =
                tape.batchnorm(h, gamma, beta, rm.data(), rv.data(), mode, momentum, eps)?;
            h = out;
            if let Some(u) = update {
                updates.push((format!("{p}.bn"), u));
            }
            h = tape.dropout(h, c.dropout, mode, rng)?;
        }
        let flat_w = c.spatial_flat_width()?;
        let flat = tape.reshape(h, vec![b, flat_w])?;
        let dense = self.dense(tape, flat, "spatial.dense")?;
        Ok((tape.relu(dense), updates))
    }

    /// Fuse the encoder outputs into the combined representation.
    /// Both inputs are optional so ablation variants can drop one side.
    fn fuse(
        &self,
        tape: &mut Tape<F>,
        h_temp: Option<Var>,
        h_spat: Option<Var>,
    ) -> Result<(Var, Vec<Tensor<F>>)> {
        let c = &self.config;
        let z_t = match h_temp {
            Some(h) => Some(self.dense(tape, h, "fusion.proj_temporal")?),
            None => None,
        };
        let z_s = match h_spat {
            Some(h) => Some(self.dense(tape, h, "fusion.proj_spatial")?),
            None => None,
        };
        let tokens: Vec<Var> = [z_t, z_s].into_iter().flatten().collect();
        let b = tape.value(tokens[0]).shape()[0];

        if c.variant == ArchVariant::NoCrossAttention {
            let cat = tape.concat_last(&tokens)?;
            let dense = self.dense(tape, cat, "fusion.dense")?;
            return Ok((tape.relu(dense), Vec::new()));
        }

        let cat = tape.concat_last(&tokens)?;
        let seq = tape.reshape(cat, vec![b, tokens.len(), c.d_common])?;
        let (att, mats) = self.attention(tape, seq, "fusion.attn", c.n_heads_fusion)?;
        let pooled = tape.mean_axis1(att)?;
        let dense = self.dense(tape, pooled, "fusion.dense")?;
        Ok((tape.relu(dense), mats))
    }

    /// Full forward pass over a batch. `x_temporal` is (B, w, f) and
    /// `x_spatial` is (B, f); `rng` drives dropout in train mode.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape<F>,
        x_temporal: &Tensor<F>,
        x_spatial: &Tensor<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardPass<F>> {
        let c = &self.config;
        if x_temporal.shape().len() != 3
            || x_temporal.shape()[1] != c.w
            || x_temporal.shape()[2] != c.f
        {
            return Err(TsanError::shape(format!(
                "temporal input {:?} does not match (B, {}, {})",
                x_temporal.shape(),
                c.w,
                c.f
            )));
        }
        if x_spatial.shape().len() != 2
            || x_spatial.shape()[0] != x_temporal.shape()[0]
            || x_spatial.shape()[1] != c.f
        {
            return Err(TsanError::shape(format!(
                "spatial input {:?} does not match (B, {})",
                x_spatial.shape(),
                c.f
            )));
        }

        let xt = tape.constant(x_temporal.clone());
        let xs = tape.constant(x_spatial.clone());

        let mut attn_temporal = Vec::new();
        let mut bn_updates = Vec::new();
        let h_temp = if c.variant == ArchVariant::NoTemporal {
            None
        } else {
            let (h, mats) = self.encode_temporal(tape, xt, mode)?;
            attn_temporal = mats;
            Some(h)
        };
        let h_spat = if c.variant == ArchVariant::NoSpatial {
            None
        } else {
            let (h, updates) = self.encode_spatial(tape, xs, mode, rng)?;
            bn_updates = updates;
            Some(h)
        };

        let (h_combined, attn_fusion) = self.fuse(tape, h_temp, h_spat)?;

        let main_logit = self.dense(tape, h_combined, "head.main")?;
        let y_main = tape.sigmoid(main_logit);
        let y_traffic = self.dense(tape, h_combined, "head.traffic")?;
        let protocol_logit = self.dense(tape, h_combined, "head.protocol")?;
        let y_protocol = tape.softmax_last(protocol_logit)?;
        let cons_logit = self.dense(tape, h_combined, "head.consistency")?;
        let y_consistency = tape.sigmoid(cons_logit);

        Ok(ForwardPass {
            y_main,
            y_traffic,
            y_protocol,
            y_consistency,
            h_temp,
            h_spat,
            h_combined,
            attn_temporal,
            attn_fusion,
            bn_updates,
        })
    }

    /// Eval-mode forward returning plain head values.
    pub fn predict(&self, x_temporal: &Tensor<F>, x_spatial: &Tensor<F>) -> Result<HeadOutputs> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = self.forward(&mut tape, x_temporal, x_spatial, Mode::Eval, &mut rng)?;
        Ok(pass.head_outputs(&tape))
    }

    /// Fold batch statistics from a training forward pass into the
    /// stored running mean and variance.
    pub fn apply_bn_updates(&mut self, updates: &[(String, BnUpdate<F>)]) -> Result<()> {
        for (prefix, update) in updates {
            self.params
                .set_value(&format!("{prefix}.running_mean"), &update.mean)?;
            self.params
                .set_value(&format!("{prefix}.running_var"), &update.var)?;
        }
        Ok(())
    }
}
