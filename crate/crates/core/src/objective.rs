//! Multi-task objective: target construction, shuffle augmentation for
//! the consistency task, and the weighted loss sum.
//!
//! The total loss is `1.0*main + 0.3*traffic + 0.3*protocol +
//! 0.4*consistency` by default. A head whose weight is zero is left out
//! of the computation graph entirely, so its parameters receive exactly
//! zero gradient and the total equals the sum of the remaining terms.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::data::WindowBatch;
use crate::error::{Result, TsanError};
use crate::model::ForwardPass;

/// Fraction of windows whose temporal rows get shuffled when building
/// consistency targets.
pub const SHUFFLE_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub main: f64,
    pub traffic: f64,
    pub protocol: f64,
    pub consistency: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            main: 1.0,
            traffic: 0.3,
            protocol: 0.3,
            consistency: 0.4,
        }
    }
}

/// Per-window training targets for all four heads, row-major over the
/// batch. `y_protocol` is one-hot over `n_protocol` classes; a window
/// whose protocol was unseen at fit time gets an all-zero row.
#[derive(Debug, Clone)]
pub struct BatchTargets {
    pub y_main: Vec<f32>,
    pub y_traffic: Vec<f32>,
    pub y_protocol: Vec<f32>,
    pub n_protocol: usize,
    pub y_consistency: Vec<f32>,
}

/// Shuffle-augmented batch: a copy of the temporal block where a
/// seeded half of the windows had their rows permuted (never by the
/// identity), plus the consistency labels. Spatial inputs are the
/// caller's concern and stay untouched.
#[derive(Debug, Clone)]
pub struct AugmentedTemporal {
    pub x_temporal: Vec<f32>,
    /// 1.0 for windows left in order, 0.0 for shuffled ones.
    pub y_consistency: Vec<f32>,
}

/// Permute the rows of `round(n * fraction)` windows. Requires `w >= 2`
/// to guarantee a non-identity permutation exists; callers must disable
/// the consistency task instead of augmenting when `w == 1`.
pub fn shuffle_augment<R: Rng>(
    x_temporal: &[f32],
    n: usize,
    w: usize,
    width: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<AugmentedTemporal> {
    if x_temporal.len() != n * w * width {
        return Err(TsanError::shape(format!(
            "temporal block has {} values, expected {}*{}*{}",
            x_temporal.len(),
            n,
            w,
            width
        )));
    }
    if w < 2 {
        return Err(TsanError::contract(
            "shuffle augmentation needs windows of length >= 2".to_string(),
        ));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(TsanError::contract(format!(
            "shuffle fraction {fraction} must be in [0, 1]"
        )));
    }
    let n_shuffled = (n as f64 * fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut x = x_temporal.to_vec();
    let mut y = vec![1.0f32; n];
    let mut perm: Vec<usize> = (0..w).collect();
    for &win in order.iter().take(n_shuffled) {
        loop {
            perm.shuffle(rng);
            if perm.iter().enumerate().any(|(i, &p)| i != p) {
                break;
            }
        }
        let base = win * w * width;
        let rows: Vec<f32> = x[base..base + w * width].to_vec();
        for (dst, &src) in perm.iter().enumerate() {
            x[base + dst * width..base + (dst + 1) * width]
                .copy_from_slice(&rows[src * width..(src + 1) * width]);
        }
        y[win] = 0.0;
    }
    Ok(AugmentedTemporal {
        x_temporal: x,
        y_consistency: y,
    })
}

/// Assemble head targets for a batch. `y_consistency` comes from the
/// augmentation pass; pass all-ones when the consistency task is off.
pub fn build_targets(
    batch: &WindowBatch,
    n_protocol: usize,
    y_consistency: &[f32],
) -> Result<BatchTargets> {
    if y_consistency.len() != batch.n {
        return Err(TsanError::shape(format!(
            "consistency targets cover {} windows, batch has {}",
            y_consistency.len(),
            batch.n
        )));
    }
    let mut y_protocol = vec![0.0f32; batch.n * n_protocol];
    for (i, &p) in batch.protocol.iter().enumerate() {
        if p < 0.0 {
            continue;
        }
        let idx = p as usize;
        if idx >= n_protocol {
            return Err(TsanError::contract(format!(
                "protocol index {idx} out of range for {n_protocol} classes; \
                 n_protocol must match the schema vocabulary"
            )));
        }
        y_protocol[i * n_protocol + idx] = 1.0;
    }
    Ok(BatchTargets {
        y_main: batch.y.clone(),
        y_traffic: batch.traffic.clone(),
        y_protocol,
        n_protocol,
        y_consistency: y_consistency.to_vec(),
    })
}

/// The four head losses plus their weighted sum. Values are plain
/// numbers for logging; `total` stays on the tape for backward.
pub struct LossBreakdown {
    pub main: f64,
    pub traffic: f64,
    pub protocol: f64,
    pub consistency: f64,
    pub total_value: f64,
    pub total: Var,
}

pub fn compute_losses<F: Scalar>(
    tape: &mut Tape<F>,
    pass: &ForwardPass<F>,
    targets: &BatchTargets,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let b = targets.y_main.len();
    let column = |tape: &mut Tape<F>, values: &[f32]| -> Result<Var> {
        Ok(tape.constant(Tensor::from_f32_slice(vec![values.len(), 1], values)?))
    };
    let y_main = column(tape, &targets.y_main)?;
    let y_traffic = column(tape, &targets.y_traffic)?;
    let y_protocol = tape.constant(Tensor::from_f32_slice(
        vec![b, targets.n_protocol],
        &targets.y_protocol,
    )?);
    let y_consistency = column(tape, &targets.y_consistency)?;

    let l_main = tape.bce_loss(pass.y_main, y_main)?;
    let l_traffic = tape.mse_loss(pass.y_traffic, y_traffic)?;
    let l_protocol = tape.cce_loss(pass.y_protocol, y_protocol)?;
    let l_consistency = tape.bce_loss(pass.y_consistency, y_consistency)?;

    let mut total: Option<Var> = None;
    for (weight, term) in [
        (weights.main, l_main),
        (weights.traffic, l_traffic),
        (weights.protocol, l_protocol),
        (weights.consistency, l_consistency),
    ] {
        if weight == 0.0 {
            continue;
        }
        let scaled = tape.scale(term, F::from_f64(weight));
        total = Some(match total {
            Some(t) => tape.add(t, scaled)?,
            None => scaled,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(F::zero())),
    };

    let scalar = |tape: &Tape<F>, v: Var| -> Result<f64> {
        Ok(tape.value(v).item()?.to_f64_())
    };
    Ok(LossBreakdown {
        main: scalar(tape, l_main)?,
        traffic: scalar(tape, l_traffic)?,
        protocol: scalar(tape, l_protocol)?,
        consistency: scalar(tape, l_consistency)?,
        total_value: scalar(tape, total)?,
        total,
    })
}
