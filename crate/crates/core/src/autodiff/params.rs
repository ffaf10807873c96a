//! Named parameter storage.
//!
//! Parameters live in a `ParamSet` keyed by a path such as
//! `"temporal.attn.h0.wq"`. Paths are the glue between forward passes
//! (tape leaves), gradients, the optimizer, checkpoints, and weight
//! transfer, so the map is ordered to keep every serialization stable.

use std::collections::BTreeMap;

use crate::autodiff::tape::{Gradients, Tape, Var};
use crate::autodiff::tensor::{Scalar, Tensor};
use crate::error::{Result, TsanError};

/// One named tensor plus its gradient slot and Adam state.
#[derive(Debug, Clone)]
pub struct Parameter<F: Scalar> {
    tensor: Tensor<F>,
    trainable: bool,
    grad: Option<Tensor<F>>,
    opt_m: Vec<F>,
    opt_v: Vec<F>,
    opt_step: u64,
}

impl<F: Scalar> Parameter<F> {
    pub fn tensor(&self) -> &Tensor<F> {
        &self.tensor
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn grad(&self) -> Option<&Tensor<F>> {
        self.grad.as_ref()
    }

    /// Number of optimizer steps this parameter has taken.
    pub fn step_count(&self) -> u64 {
        self.opt_step
    }
}

/// Ordered map of parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<F: Scalar> {
    map: BTreeMap<String, Parameter<F>>,
    grads_ready: bool,
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            map: BTreeMap::new(),
            grads_ready: false,
        }
    }

    /// Register a parameter. Re-registering a path is a contract error.
    pub fn insert(&mut self, path: &str, tensor: Tensor<F>, trainable: bool) -> Result<()> {
        if self.map.contains_key(path) {
            return Err(TsanError::contract(format!(
                "parameter {path:?} registered twice"
            )));
        }
        let n = tensor.numel();
        self.map.insert(
            path.to_string(),
            Parameter {
                tensor,
                trainable,
                grad: None,
                opt_m: vec![F::zero(); n],
                opt_v: vec![F::zero(); n],
                opt_step: 0,
            },
        );
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Parameter<F>> {
        self.map
            .get(path)
            .ok_or_else(|| TsanError::contract(format!("unknown parameter {path:?}")))
    }

    pub fn tensor(&self, path: &str) -> Result<&Tensor<F>> {
        Ok(self.get(path)?.tensor())
    }

    /// Record this parameter as a leaf on `tape` (cheap: shares the buffer).
    pub fn leaf(&self, tape: &mut Tape<F>, path: &str) -> Result<Var> {
        let t = self.tensor(path)?.clone();
        Ok(tape.param(path, t))
    }

    /// Overwrite a parameter's values in place, keeping its shape.
    pub fn set_value(&mut self, path: &str, data: &[F]) -> Result<()> {
        let param = self
            .map
            .get_mut(path)
            .ok_or_else(|| TsanError::contract(format!("unknown parameter {path:?}")))?;
        if data.len() != param.tensor.numel() {
            return Err(TsanError::shape(format!(
                "set_value {path:?}: {} values for shape {:?}",
                data.len(),
                param.tensor.shape()
            )));
        }
        param.tensor = Tensor::new(param.tensor.shape().to_vec(), data.to_vec())?;
        Ok(())
    }

    /// Copy a backward pass's gradients into the parameter slots.
    ///
    /// Trainable parameters missing from `grads` (not reached by the loss)
    /// get zero gradients; gradients for unknown paths are a contract
    /// error. After this call the set is ready for an optimizer step.
    pub fn apply_gradients(&mut self, grads: &Gradients<F>) -> Result<()> {
        for (path, g) in grads.iter() {
            match self.map.get(path) {
                None => {
                    return Err(TsanError::contract(format!(
                        "gradient for unknown parameter {path:?}"
                    )))
                }
                Some(p) if g.shape() != p.tensor.shape() => {
                    return Err(TsanError::shape(format!(
                        "gradient shape {:?} for parameter {path:?} of shape {:?}",
                        g.shape(),
                        p.tensor.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        for (path, param) in self.map.iter_mut() {
            if !param.trainable {
                continue;
            }
            param.grad = Some(match grads.get(path) {
                Some(g) => g.clone(),
                None => Tensor::zeros(param.tensor.shape().to_vec()),
            });
        }
        self.grads_ready = true;
        Ok(())
    }

    /// True between `apply_gradients` and the optimizer step that consumes it.
    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub(crate) fn consume_grads(&mut self) -> Result<()> {
        if !self.grads_ready {
            return Err(TsanError::contract(
                "optimizer step without populated gradients; call apply_gradients first"
                    .to_string(),
            ));
        }
        self.grads_ready = false;
        Ok(())
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Parameter<F>)> {
        self.map.iter_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter<F>)> {
        self.map.iter()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Drop every parameter whose path starts with `prefix`; returns how
    /// many were removed.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let doomed: Vec<String> = self
            .map
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        for path in &doomed {
            self.map.remove(path);
        }
        doomed.len()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count, trainable parameters only.
    pub fn num_trainable_scalars(&self) -> usize {
        self.map
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Convert every tensor to another scalar type (used by the float64
    /// gradient-check mode). Optimizer state is reset.
    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        let mut out = ParamSet::new();
        for (path, p) in &self.map {
            let data: Vec<G> = p.tensor.data().iter().map(|&v| G::from_f64(v.to_f64_())).collect();
            let t = Tensor::new(p.tensor.shape().to_vec(), data).expect("same shape");
            out.insert(path, t, p.trainable).expect("fresh set");
        }
        out
    }
}

/// Apply one bias-corrected Adam update to every trainable parameter.
/// Needs `apply_gradients` first; each call consumes the gradients.
pub fn adam_step<F: Scalar>(params: &mut ParamSet<F>, cfg: &AdamConfig) -> Result<()> {
    params.consume_grads()?;
    let lr = F::from_f64(cfg.learning_rate);
    let b1 = F::from_f64(cfg.beta1);
    let b2 = F::from_f64(cfg.beta2);
    let eps = F::from_f64(cfg.epsilon);
    for (path, param) in params.iter_mut() {
        if !param.trainable {
            continue;
        }
        let grad = param
            .grad
            .take()
            .ok_or_else(|| TsanError::contract(format!("parameter {path:?} has no gradient")))?;
        param.opt_step += 1;
        let bc1 = F::one() - b1.powi(param.opt_step as i32);
        let bc2 = F::one() - b2.powi(param.opt_step as i32);
        let mut data = param.tensor.data().to_vec();
        for (i, &g) in grad.data().iter().enumerate() {
            param.opt_m[i] = b1 * param.opt_m[i] + (F::one() - b1) * g;
            param.opt_v[i] = b2 * param.opt_v[i] + (F::one() - b2) * g * g;
            let m_hat = param.opt_m[i] / bc1;
            let v_hat = param.opt_v[i] / bc2;
            data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        param.tensor = Tensor::new(param.tensor.shape().to_vec(), data)?;
    }
    Ok(())
}

/// Adam hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}
