//! Finite-difference verification of tape gradients.
//!
//! Everything here runs in `f64`: central differences in `f32` drown in
//! rounding noise long before they reach a useful tolerance.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::params::ParamSet;
use crate::autodiff::tape::Gradients;
use crate::error::Result;

/// Central difference `(f(x+e) - f(x-e)) / 2e` per coordinate.
pub fn central_diff<Ff>(f: &mut Ff, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    Ff: FnMut(&[f64]) -> Result<f64>,
{
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe)?;
        probe[i] = x[i] - eps;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

/// Worst relative disagreement between two gradient vectors.
///
/// The relative error of a pair is `|a-n| / max(|a|, |n|, floor)`; pairs
/// whose absolute difference is below `abs_floor` count as exact so that
/// genuinely-zero gradients do not divide by noise.
pub fn compare(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> CompareOutcome {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "gradient vectors must have equal length"
    );
    let mut worst = 0.0f64;
    let mut worst_index = None;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let diff = (a - n).abs();
        if diff <= abs_floor {
            continue;
        }
        let rel = diff / a.abs().max(n.abs()).max(abs_floor);
        if rel > worst {
            worst = rel;
            worst_index = Some(i);
        }
    }
    CompareOutcome {
        max_rel_err: worst,
        worst_index,
        checked: analytic.len(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareOutcome {
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
}

/// Settings for a parameter-level finite-difference sweep.
#[derive(Debug, Clone)]
pub struct FdConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Parameters with more entries than this get a seeded sample.
    pub max_entries_per_param: usize,
    /// Cap on entries across all parameters; 0 means no cap.
    pub max_total_entries: usize,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            epsilon: 1e-5,
            tolerance: 1e-3,
            max_entries_per_param: 6,
            max_total_entries: 0,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub path: String,
    pub checked_entries: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub pass: bool,
    pub tolerance: f64,
    pub epsilon: f64,
    pub checked_entries: usize,
    pub max_rel_err: f64,
    pub worst_param: Option<String>,
    pub per_param: Vec<ParamCheck>,
}

/// Check tape gradients for every trainable parameter against central
/// differences of `loss`, which must recompute the loss from scratch for
/// the given parameter values (and be deterministic in them).
pub fn check_params<L>(
    params: &mut ParamSet<f64>,
    analytic: &Gradients<f64>,
    mut loss: L,
    cfg: &FdConfig,
) -> Result<GradcheckReport>
where
    L: FnMut(&ParamSet<f64>) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let paths: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.trainable())
        .map(|(path, _)| path.clone())
        .collect();
    let abs_floor = 1e-7;

    let mut plan: Vec<(String, Vec<usize>)> = Vec::with_capacity(paths.len());
    for path in &paths {
        let n = params.tensor(path)?.numel();
        let mut entries: Vec<usize> = (0..n).collect();
        if n > cfg.max_entries_per_param {
            entries.shuffle(&mut rng);
            entries.truncate(cfg.max_entries_per_param);
            entries.sort_unstable();
        }
        plan.push((path.clone(), entries));
    }
    if cfg.max_total_entries > 0 {
        let mut flat: Vec<(usize, usize)> = plan
            .iter()
            .enumerate()
            .flat_map(|(pi, (_, es))| es.iter().map(move |&e| (pi, e)))
            .collect();
        if flat.len() > cfg.max_total_entries {
            flat.shuffle(&mut rng);
            flat.truncate(cfg.max_total_entries);
            let mut grouped: Vec<Vec<usize>> = vec![Vec::new(); plan.len()];
            for (pi, e) in flat {
                grouped[pi].push(e);
            }
            for (group, (_, entries)) in grouped.iter_mut().zip(plan.iter_mut()) {
                group.sort_unstable();
                *entries = std::mem::take(group);
            }
        }
    }

    let mut per_param = Vec::with_capacity(plan.len());
    let mut total_checked = 0usize;
    let mut max_rel = 0.0f64;
    let mut worst_param = None;

    for (path, entries) in &plan {
        if entries.is_empty() {
            continue;
        }
        let base = params.tensor(path)?.data().to_vec();
        let analytic_full = analytic
            .get(path)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; base.len()]);

        let mut param_max = 0.0f64;
        for &i in entries {
            let mut probe = base.clone();
            probe[i] = base[i] + cfg.epsilon;
            params.set_value(path, &probe)?;
            let up = loss(params)?;
            probe[i] = base[i] - cfg.epsilon;
            params.set_value(path, &probe)?;
            let down = loss(params)?;
            let numeric = (up - down) / (2.0 * cfg.epsilon);
            let outcome = compare(&[analytic_full[i]], &[numeric], abs_floor);
            param_max = param_max.max(outcome.max_rel_err);
        }
        params.set_value(path, &base)?;

        total_checked += entries.len();
        if param_max > max_rel {
            max_rel = param_max;
            worst_param = Some(path.clone());
        }
        per_param.push(ParamCheck {
            path: path.clone(),
            checked_entries: entries.len(),
            max_rel_err: param_max,
        });
    }

    Ok(GradcheckReport {
        pass: max_rel < cfg.tolerance,
        tolerance: cfg.tolerance,
        epsilon: cfg.epsilon,
        checked_entries: total_checked,
        max_rel_err: max_rel,
        worst_param,
        per_param,
    })
}
