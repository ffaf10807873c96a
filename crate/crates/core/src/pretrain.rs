//! Self-supervised pretraining of the two encoders and weight transfer
//! into a fresh model.
//!
//! The temporal encoder learns next-record prediction: from a window it
//! must regress the encoded row that follows it, so only windows with a
//! successor participate. The spatial encoder learns to reconstruct its
//! own input record. Both phases bolt a small dense head onto the
//! encoder output; the heads are dropped at transfer time and only
//! `temporal.*` and `spatial.*` parameters move.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, Mode, Scalar, Tape, Tensor};
use crate::data::WindowedDataset;
use crate::error::{Result, TsanError};
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 3,
            lr: 1e-3,
            batch: 128,
            seed: 42,
        }
    }
}

/// Which encoder parameters a transfer copied, in path order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferManifest {
    pub copied: Vec<String>,
}

/// Mean losses per epoch for both phases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainReport {
    pub temporal_losses: Vec<f64>,
    pub spatial_losses: Vec<f64>,
    /// Windows that had a successor and so fed the temporal phase.
    pub n_next_windows: usize,
}

/// Add the two pretraining heads if they are not present yet.
pub fn add_pretrain_heads<F: Scalar>(model: &mut Model<F>, seed: u64) -> Result<()> {
    if model.params.get("pretrain.next.w").is_ok() {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70726574);
    let f = model.config.f;
    for (prefix, d_in) in [
        ("pretrain.next", model.config.d_model),
        ("pretrain.recon", model.config.d_spat),
    ] {
        let limit = (6.0 / (d_in + f) as f64).sqrt();
        let w: Vec<F> = (0..d_in * f)
            .map(|_| F::from_f64(rng.gen_range(-limit..limit)))
            .collect();
        model
            .params
            .insert(&format!("{prefix}.w"), Tensor::new(vec![d_in, f], w)?, true)?;
        model.params.insert(
            &format!("{prefix}.b"),
            Tensor::full(vec![f], F::zero()),
            true,
        )?;
    }
    Ok(())
}

fn epoch_batches<R: Rng>(indices: &[usize], batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}

/// Run both pretraining phases in place. With `epochs == 0` the model
/// is left exactly as initialized.
pub fn pretrain<F: Scalar>(
    model: &mut Model<F>,
    data: &WindowedDataset,
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    if data.is_empty() {
        return Err(TsanError::contract(
            "cannot pretrain on an empty dataset".to_string(),
        ));
    }
    let next_indices: Vec<usize> = (0..data.len())
        .filter(|&i| data.next_valid[i] == 1.0)
        .collect();
    let mut report = PretrainReport {
        temporal_losses: Vec::new(),
        spatial_losses: Vec::new(),
        n_next_windows: next_indices.len(),
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if next_indices.is_empty() {
        return Err(TsanError::contract(
            "no window has a successor record; stream too short for next-step pretraining"
                .to_string(),
        ));
    }

    add_pretrain_heads(model, cfg.seed)?;
    let adam = AdamConfig {
        learning_rate: cfg.lr,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for _ in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for idxs in epoch_batches(&next_indices, cfg.batch, &mut rng) {
            let b = data.batch(&idxs)?;
            let mut tape = Tape::new();
            let xt = tape.constant(Tensor::from_f32_slice(
                vec![b.n, b.w, b.width],
                &b.x_temporal,
            )?);
            let (h, _) = model.encode_temporal(&mut tape, xt, Mode::Train)?;
            let pred = model.dense(&mut tape, h, "pretrain.next")?;
            let target = tape.constant(Tensor::from_f32_slice(vec![b.n, b.width], &b.next_row)?);
            let loss = tape.mse_loss(pred, target)?;
            loss_sum += tape.value(loss).item()?.to_f64_() * b.n as f64;
            let grads = tape.backward(loss)?;
            model.params.apply_gradients(&grads)?;
            adam_step(&mut model.params, &adam)?;
        }
        report
            .temporal_losses
            .push(loss_sum / next_indices.len() as f64);
    }

    let all: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        for idxs in epoch_batches(&all, cfg.batch, &mut rng) {
            let b = data.batch(&idxs)?;
            let mut tape = Tape::new();
            let xs = tape.constant(Tensor::from_f32_slice(vec![b.n, b.width], &b.x_spatial)?);
            let (h, updates) = model.encode_spatial(&mut tape, xs, Mode::Train, &mut rng)?;
            let pred = model.dense(&mut tape, h, "pretrain.recon")?;
            let target = tape.constant(Tensor::from_f32_slice(vec![b.n, b.width], &b.x_spatial)?);
            let loss = tape.mse_loss(pred, target)?;
            loss_sum += tape.value(loss).item()?.to_f64_() * b.n as f64;
            let grads = tape.backward(loss)?;
            model.params.apply_gradients(&grads)?;
            adam_step(&mut model.params, &adam)?;
            model.apply_bn_updates(&updates)?;
        }
        report.spatial_losses.push(loss_sum / all.len() as f64);
    }
    Ok(report)
}

/// Drop the throwaway decoder heads added by [`pretrain`] so the model
/// carries exactly its architecture's parameters again (checkpoint
/// loading rejects extras). Returns how many parameters were removed.
pub fn strip_pretrain_heads<F: Scalar>(model: &mut Model<F>) -> usize {
    model.params.remove_prefix("pretrain.")
}

/// Copy every `temporal.*` and `spatial.*` parameter from `from` into
/// `to`. Fusion, head, and pretraining parameters never move.
pub fn transfer_weights<F: Scalar>(from: &Model<F>, to: &mut Model<F>) -> Result<TransferManifest> {
    let encoder_paths: Vec<String> = to
        .params
        .paths()
        .filter(|p| p.starts_with("temporal.") || p.starts_with("spatial."))
        .cloned()
        .collect();
    let mut copied = Vec::with_capacity(encoder_paths.len());
    for path in encoder_paths {
        let source = from.params.tensor(&path).map_err(|_| {
            TsanError::contract(format!(
                "pretrained model is missing encoder parameter {path:?}"
            ))
        })?;
        let want = to.params.tensor(&path)?.shape();
        if source.shape() != want {
            return Err(TsanError::shape(format!(
                "encoder parameter {path:?} has shape {:?} in the source, {:?} in the target",
                source.shape(),
                want
            )));
        }
        let data = source.data().to_vec();
        to.params.set_value(&path, &data)?;
        copied.push(path);
    }
    Ok(TransferManifest { copied })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_windows, WindowSource};
    use crate::model::ModelConfig;

    fn small_config() -> ModelConfig {
        ModelConfig {
            w: 3,
            f: 16,
            d_model: 8,
            conv_filters: vec![4, 8],
            d_spat: 8,
            d_common: 4,
            d_combined: 4,
            ..ModelConfig::default()
        }
    }

    /// A stream of identical rows: the next-step target is constant.
    fn constant_dataset(n: usize, width: usize, w: usize) -> WindowedDataset {
        let mut row = vec![0.0f32; width];
        row[0] = 1.0;
        row[3] = -0.5;
        let rows: Vec<Vec<f32>> = vec![row; n];
        let class = vec![0.0f32; n];
        let protocol = vec![Some(0usize); n];
        let traffic = vec![0.3f32; n];
        build_windows(
            &WindowSource {
                rows: &rows,
                class: &class,
                protocol: &protocol,
                traffic: &traffic,
            },
            w,
            1,
        )
        .unwrap()
    }

    #[test]
    fn constant_stream_drives_both_losses_near_zero() {
        let data = constant_dataset(40, 16, 3);
        let mut model: Model<f32> = Model::new(small_config(), 3).unwrap();
        let cfg = PretrainConfig {
            epochs: 50,
            lr: 0.05,
            batch: 16,
            seed: 7,
        };
        let report = pretrain(&mut model, &data, &cfg).unwrap();
        let last_t = *report.temporal_losses.last().unwrap();
        let last_s = *report.spatial_losses.last().unwrap();
        assert!(last_t < 1e-3, "temporal loss stuck at {last_t}");
        assert!(last_s < 1e-2, "spatial loss stuck at {last_s}");
        assert!(report.temporal_losses[0] > last_t);
    }

    #[test]
    fn zero_epochs_leaves_the_model_untouched() {
        let data = constant_dataset(20, 16, 3);
        let fresh: Model<f32> = Model::new(small_config(), 5).unwrap();
        let mut model: Model<f32> = Model::new(small_config(), 5).unwrap();
        let cfg = PretrainConfig {
            epochs: 0,
            ..PretrainConfig::default()
        };
        pretrain(&mut model, &data, &cfg).unwrap();
        for (path, param) in fresh.params.iter() {
            assert_eq!(
                param.tensor().data(),
                model.params.tensor(path).unwrap().data(),
                "{path} changed"
            );
        }
        assert!(model.params.get("pretrain.next.w").is_err());
    }

    #[test]
    fn pretraining_is_deterministic_in_the_seed() {
        let data = constant_dataset(24, 16, 3);
        let run = || {
            let mut model: Model<f32> = Model::new(small_config(), 5).unwrap();
            let cfg = PretrainConfig {
                epochs: 2,
                batch: 8,
                ..PretrainConfig::default()
            };
            pretrain(&mut model, &data, &cfg).unwrap();
            model
        };
        let a = run();
        let b = run();
        for (path, param) in a.params.iter() {
            assert_eq!(
                param.tensor().data(),
                b.params.tensor(path).unwrap().data(),
                "{path} differs between identical runs"
            );
        }
    }

    #[test]
    fn stream_without_successors_is_an_error() {
        // n == w: exactly one window and nothing after it.
        let data = constant_dataset(3, 16, 3);
        assert_eq!(data.len(), 1);
        assert_eq!(data.next_valid, vec![0.0]);
        let mut model: Model<f32> = Model::new(small_config(), 5).unwrap();
        let err = pretrain(&mut model, &data, &PretrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("successor"), "{err}");
    }

    #[test]
    fn transfer_moves_exactly_the_encoder_params() {
        let data = constant_dataset(20, 16, 3);
        let mut source: Model<f32> = Model::new(small_config(), 5).unwrap();
        let cfg = PretrainConfig {
            epochs: 1,
            batch: 8,
            ..PretrainConfig::default()
        };
        pretrain(&mut source, &data, &cfg).unwrap();

        let mut target: Model<f32> = Model::new(small_config(), 99).unwrap();
        let before: Vec<(String, Vec<f32>)> = target
            .params
            .iter()
            .map(|(p, v)| (p.clone(), v.tensor().to_f32_vec()))
            .collect();
        let manifest = transfer_weights(&source, &mut target).unwrap();

        for (path, old) in before {
            let now = target.params.tensor(&path).unwrap().to_f32_vec();
            if path.starts_with("temporal.") || path.starts_with("spatial.") {
                assert!(manifest.copied.contains(&path));
                assert_eq!(now, source.params.tensor(&path).unwrap().to_f32_vec());
            } else {
                assert_eq!(now, old, "{path} must not move in a transfer");
                assert!(!manifest.copied.contains(&path));
            }
        }
        assert!(!target.params.get("pretrain.next.w").is_ok());
    }

    #[test]
    fn manifest_covers_32_paths_at_default_shapes() {
        let data = constant_dataset(20, 16, 3);
        let mut source: Model<f32> = Model::new(small_config(), 5).unwrap();
        let cfg = PretrainConfig {
            epochs: 1,
            batch: 16,
            ..PretrainConfig::default()
        };
        pretrain(&mut source, &data, &cfg).unwrap();
        let mut target: Model<f32> = Model::new(small_config(), 1).unwrap();
        let manifest = transfer_weights(&source, &mut target).unwrap();
        assert_eq!(manifest.copied.len(), 32);
    }

    #[test]
    fn stripping_heads_restores_the_architecture_param_set() {
        let data = constant_dataset(20, 16, 3);
        let mut model: Model<f32> = Model::new(small_config(), 5).unwrap();
        let n_before = model.params.len();
        let cfg = PretrainConfig {
            epochs: 1,
            batch: 16,
            ..PretrainConfig::default()
        };
        pretrain(&mut model, &data, &cfg).unwrap();
        assert_eq!(model.params.len(), n_before + 4);
        assert_eq!(strip_pretrain_heads(&mut model), 4);
        assert_eq!(model.params.len(), n_before);
        assert!(model.params.get("pretrain.next.w").is_err());
        assert_eq!(strip_pretrain_heads(&mut model), 0);
    }

    #[test]
    fn shape_mismatch_between_models_is_rejected() {
        let source: Model<f32> = Model::new(small_config(), 5).unwrap();
        let mut other = small_config();
        other.d_model = 16;
        let mut target: Model<f32> = Model::new(other, 1).unwrap();
        assert!(transfer_weights(&source, &mut target).is_err());
    }
}
