//! Supervised training loop, early stopping, ablation runs, and the
//! end-to-end gradient check.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adam_step, gradcheck, AdamConfig, Mode, Scalar, Tape, Tensor,
};
use crate::data::WindowedDataset;
use crate::error::{Result, TsanError};
use crate::model::{threshold_decision, ArchVariant, Model, ModelConfig};
use crate::objective::{
    build_targets, compute_losses, shuffle_augment, LossWeights, SHUFFLE_FRACTION,
};
use crate::pretrain::{pretrain, transfer_weights, PretrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy improvement before training
    /// stops; 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    pub loss: LossWeights,
    /// Decision threshold used for validation accuracy.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 128,
            max_epochs: 5,
            patience: 2,
            seed: 42,
            loss: LossWeights::default(),
            threshold: 0.5,
        }
    }
}

/// One history row; loss values are epoch means weighted by batch size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_main: f64,
    pub l_traffic: f64,
    pub l_protocol: f64,
    pub l_consistency: f64,
    pub l_total: f64,
    /// NaN when no validation set was given.
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    /// 1-based epoch whose weights the model ends up carrying.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// Training history as CSV with the fixed column set.
    pub fn history_csv(&self) -> String {
        let mut out =
            String::from("epoch,l_main,l_traffic,l_protocol,l_consistency,l_total,val_accuracy\n");
        for row in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.epoch,
                row.l_main,
                row.l_traffic,
                row.l_protocol,
                row.l_consistency,
                row.l_total,
                row.val_accuracy
            ));
        }
        out
    }
}

/// Patience-based stopping on validation accuracy. An epoch improves
/// when its accuracy strictly exceeds the best seen so far; after
/// `patience` consecutive non-improving epochs training stops.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Record an epoch's accuracy; returns (improved, stop).
    pub fn observe(&mut self, epoch: usize, accuracy: f64) -> (bool, bool) {
        if accuracy > self.best {
            self.best = accuracy;
            self.best_epoch = epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.patience > 0 && self.stale >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Main-head probability for every window, in dataset order.
pub fn dataset_scores<F: Scalar>(model: &Model<F>, data: &WindowedDataset) -> Result<Vec<f32>> {
    let mut scores = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(256) {
        let b = data.batch(chunk)?;
        let xt = Tensor::from_f32_slice(vec![b.n, b.w, b.width], &b.x_temporal)?;
        let xs = Tensor::from_f32_slice(vec![b.n, b.width], &b.x_spatial)?;
        let out = model.predict(&xt, &xs)?;
        scores.extend(out.y_main);
    }
    Ok(scores)
}

/// Fraction of windows whose thresholded main-head decision matches the
/// label.
pub fn dataset_accuracy<F: Scalar>(
    model: &Model<F>,
    data: &WindowedDataset,
    threshold: f64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(TsanError::contract(
            "cannot compute accuracy on an empty dataset".to_string(),
        ));
    }
    let scores = dataset_scores(model, data)?;
    let correct = scores
        .iter()
        .zip(&data.y)
        .filter(|(&s, &y)| threshold_decision(s as f64, threshold) as f32 == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Train `model` in place. Epoch order is a fresh seeded permutation of
/// all windows; the last short batch is kept. With a validation set,
/// accuracy is measured at every epoch boundary and the weights of the
/// best epoch are restored at the end.
pub fn train<F: Scalar>(
    model: &mut Model<F>,
    train_data: &WindowedDataset,
    val_data: Option<&WindowedDataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let start = Instant::now();
    if train_data.is_empty() {
        return Err(TsanError::contract(
            "cannot train on an empty dataset".to_string(),
        ));
    }
    let val = match val_data {
        Some(v) if v.is_empty() => {
            log::warn!("validation set is empty; early stopping disabled");
            None
        }
        Some(v) => Some(v),
        None => {
            log::warn!("no validation set; early stopping disabled");
            None
        }
    };

    let mut weights = cfg.loss;
    let consistency_on = weights.consistency != 0.0 && model.config.w >= 2;
    if weights.consistency != 0.0 && model.config.w < 2 {
        log::warn!("window length 1 cannot support the consistency task; its weight is forced to 0");
        weights.consistency = 0.0;
    }

    let adam = AdamConfig {
        learning_rate: cfg.lr,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best_snapshot: Option<Vec<(String, Vec<F>)>> = None;
    let mut history = Vec::new();
    let mut stopped_early = false;

    let n = train_data.len();
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        for chunk in order.chunks(cfg.batch.max(1)) {
            let b = train_data.batch(chunk)?;
            let (x_temporal, y_consistency) = if consistency_on {
                let aug = shuffle_augment(
                    &b.x_temporal,
                    b.n,
                    b.w,
                    b.width,
                    SHUFFLE_FRACTION,
                    &mut rng,
                )?;
                (aug.x_temporal, aug.y_consistency)
            } else {
                (b.x_temporal.clone(), vec![1.0; b.n])
            };
            let xt = Tensor::from_f32_slice(vec![b.n, b.w, b.width], &x_temporal)?;
            let xs = Tensor::from_f32_slice(vec![b.n, b.width], &b.x_spatial)?;
            let targets = build_targets(&b, model.config.n_protocol, &y_consistency)?;

            let mut tape = Tape::new();
            let pass = model.forward(&mut tape, &xt, &xs, Mode::Train, &mut rng)?;
            let losses = compute_losses(&mut tape, &pass, &targets, &weights)?;
            let grads = tape.backward(losses.total)?;
            model.params.apply_gradients(&grads)?;
            adam_step(&mut model.params, &adam)?;
            model.apply_bn_updates(&pass.bn_updates)?;

            let bn = b.n as f64;
            for (slot, value) in sums.iter_mut().zip([
                losses.main,
                losses.traffic,
                losses.protocol,
                losses.consistency,
                losses.total_value,
            ]) {
                *slot += value * bn;
            }
        }

        let val_accuracy = match val {
            Some(v) => dataset_accuracy(model, v, cfg.threshold)?,
            None => f64::NAN,
        };
        history.push(EpochStats {
            epoch,
            l_main: sums[0] / n as f64,
            l_traffic: sums[1] / n as f64,
            l_protocol: sums[2] / n as f64,
            l_consistency: sums[3] / n as f64,
            l_total: sums[4] / n as f64,
            val_accuracy,
        });

        if val.is_some() {
            let (improved, stop) = stopper.observe(epoch, val_accuracy);
            if improved {
                best_snapshot = Some(
                    model
                        .params
                        .iter()
                        .map(|(p, v)| (p.clone(), v.tensor().data().to_vec()))
                        .collect(),
                );
            }
            if stop {
                stopped_early = true;
                break;
            }
        }
    }

    let best_epoch = if val.is_some() {
        if let Some(snapshot) = best_snapshot {
            for (path, values) in snapshot {
                model.params.set_value(&path, &values)?;
            }
        }
        stopper.best_epoch()
    } else {
        history.len()
    };

    Ok(TrainReport {
        history,
        best_epoch,
        stopped_early,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// The six ablation variants: the full model plus five reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoTemporal,
    NoSpatial,
    NoCrossAttention,
    NoMultitask,
    NoPretrain,
}

impl AblationVariant {
    pub fn all() -> [AblationVariant; 6] {
        [
            AblationVariant::Full,
            AblationVariant::NoTemporal,
            AblationVariant::NoSpatial,
            AblationVariant::NoCrossAttention,
            AblationVariant::NoMultitask,
            AblationVariant::NoPretrain,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoTemporal => "no_temporal",
            AblationVariant::NoSpatial => "no_spatial",
            AblationVariant::NoCrossAttention => "no_cross_attention",
            AblationVariant::NoMultitask => "no_multitask",
            AblationVariant::NoPretrain => "no_pretrain",
        }
    }

    /// Architecture used by this variant. Training-level variants keep
    /// the full architecture.
    pub fn arch(&self) -> ArchVariant {
        match self {
            AblationVariant::NoTemporal => ArchVariant::NoTemporal,
            AblationVariant::NoSpatial => ArchVariant::NoSpatial,
            AblationVariant::NoCrossAttention => ArchVariant::NoCrossAttention,
            _ => ArchVariant::Full,
        }
    }

    pub fn uses_pretraining(&self) -> bool {
        *self != AblationVariant::NoPretrain
    }

    /// Loss weights for this variant; `no_multitask` silences every
    /// auxiliary head.
    pub fn loss_weights(&self, base: &LossWeights) -> LossWeights {
        match self {
            AblationVariant::NoMultitask => LossWeights {
                main: base.main,
                traffic: 0.0,
                protocol: 0.0,
                consistency: 0.0,
            },
            _ => *base,
        }
    }
}

impl FromStr for AblationVariant {
    type Err = TsanError;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::all()
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                TsanError::config(format!(
                    "unknown ablation variant {s:?}; expected one of full, no_temporal, \
                     no_spatial, no_cross_attention, no_multitask, no_pretrain"
                ))
            })
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub variant: String,
    pub val_accuracy: f64,
    pub best_epoch: usize,
    pub final_l_total: f64,
}

/// Train one model per ablation variant under a shared budget and
/// report validation accuracy for each. Validation falls back to the
/// training set when no split is given.
pub fn run_ablation(
    base: &ModelConfig,
    train_data: &WindowedDataset,
    val_data: Option<&WindowedDataset>,
    pretrain_cfg: &PretrainConfig,
    train_cfg: &TrainConfig,
    variants: &[AblationVariant],
) -> Result<Vec<AblationOutcome>> {
    let eval_set = val_data.unwrap_or(train_data);
    let mut outcomes = Vec::with_capacity(variants.len());
    for variant in variants {
        let mut config = base.clone();
        config.variant = variant.arch();
        let mut model: Model<f32> = Model::new(config.clone(), train_cfg.seed)?;
        if variant.uses_pretraining() && pretrain_cfg.epochs > 0 {
            let mut encoder: Model<f32> = Model::new(config.clone(), train_cfg.seed)?;
            pretrain(&mut encoder, train_data, pretrain_cfg)?;
            transfer_weights(&encoder, &mut model)?;
        }
        let cfg = TrainConfig {
            loss: variant.loss_weights(&train_cfg.loss),
            ..train_cfg.clone()
        };
        let report = train(&mut model, train_data, val_data, &cfg)?;
        outcomes.push(AblationOutcome {
            variant: variant.name().to_string(),
            val_accuracy: dataset_accuracy(&model, eval_set, cfg.threshold)?,
            best_epoch: report.best_epoch,
            final_l_total: report.history.last().map(|h| h.l_total).unwrap_or(f64::NAN),
        });
    }
    Ok(outcomes)
}

/// Finite-difference check of the full model's gradients on a small
/// random batch, sampling `sample_count` parameter entries. The check
/// runs in eval mode so dropout cannot perturb the probes; batch norm
/// then normalizes with its (constant) running statistics, which keeps
/// the loss differentiable in gamma and beta.
pub fn gradcheck_model(
    config: &ModelConfig,
    sample_count: usize,
    seed: u64,
) -> Result<gradcheck::GradcheckReport> {
    use rand::Rng;
    let mut model: Model<f64> = Model::new(config.clone(), seed)?;
    let b = 4usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x67726164);
    let xt = Tensor::new(
        vec![b, config.w, config.f],
        (0..b * config.w * config.f)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )?;
    let xs = Tensor::new(
        vec![b, config.f],
        (0..b * config.f).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let targets = crate::objective::BatchTargets {
        y_main: (0..b).map(|i| (i % 2) as f32).collect(),
        y_traffic: (0..b).map(|i| 0.1 * i as f32).collect(),
        y_protocol: {
            let mut t = vec![0.0f32; b * config.n_protocol];
            for i in 0..b {
                t[i * config.n_protocol + i % config.n_protocol] = 1.0;
            }
            t
        },
        n_protocol: config.n_protocol,
        y_consistency: (0..b).map(|i| ((i + 1) % 2) as f32).collect(),
    };
    let weights = LossWeights::default();

    let mut tape = Tape::new();
    let mut drng = ChaCha8Rng::seed_from_u64(0);
    let pass = model.forward(&mut tape, &xt, &xs, Mode::Eval, &mut drng)?;
    let losses = compute_losses(&mut tape, &pass, &targets, &weights)?;
    let grads = tape.backward(losses.total)?;

    let fd = gradcheck::FdConfig {
        max_entries_per_param: usize::MAX,
        max_total_entries: sample_count,
        seed,
        ..gradcheck::FdConfig::default()
    };
    let config_clone = config.clone();
    gradcheck::check_params(
        &mut model.params,
        &grads,
        move |params| {
            let probe = Model {
                config: config_clone.clone(),
                params: params.cast::<f64>(),
            };
            let mut tape = Tape::new();
            let mut drng = ChaCha8Rng::seed_from_u64(0);
            let pass = probe.forward(&mut tape, &xt, &xs, Mode::Eval, &mut drng)?;
            let losses = compute_losses(&mut tape, &pass, &targets, &weights)?;
            Ok(losses.total_value)
        },
        &fd,
    )
}
