//! Backpropagation baselines on the unconstrained network, plus the
//! acceleration-off alternating-minimization ablation.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::linalg::{DenseMatrix, DenseVector};
use crate::model::{ProblemSpec, Regularizer};
use crate::trainer::{self, accuracy, init_weights, weights_checksum, EpochMetrics, TrainConfig, TrainOutcome};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Gd,
    Adam,
    PlainAltMin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub epochs: usize,
    pub seed: u64,
    pub record_every: usize,
}

impl BaselineConfig {
    /// Defaults for `kind`: GD at 0.01, Adam at 1e-3.
    pub fn new(kind: BaselineKind, epochs: usize, seed: u64) -> Self {
        let lr = match kind {
            BaselineKind::Adam => 1e-3,
            _ => 0.01,
        };
        Self {
            kind,
            lr,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            epochs,
            seed,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || self.epochs == 0 || self.record_every == 0 {
            return Err(Error::InvalidConfig("baseline needs lr >= 0 and at least one epoch".into()));
        }
        Ok(())
    }
}

/// Weights and biases of the plain network.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub w: Vec<DenseMatrix>,
    pub b: Vec<DenseVector>,
}

impl Weights {
    fn flat_len(&self) -> usize {
        self.w.iter().map(|m| m.as_slice().len()).sum::<usize>() + self.b.iter().map(DenseVector::len).sum::<usize>()
    }

    fn for_each_slice_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        self.w.iter_mut().for_each(|m| f(m.as_mut_slice()));
        self.b.iter_mut().for_each(|v| f(v.as_mut_slice()));
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        self.w.iter().for_each(|m| out.extend_from_slice(m.as_slice()));
        self.b.iter().for_each(|v| out.extend_from_slice(v.as_slice()));
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        self.for_each_slice_mut(|s| {
            s.copy_from_slice(&flat[pos..pos + s.len()]);
            pos += s.len();
        });
    }
}

/// `R(net(x); y) + sum_l Omega(W_l)` and its gradient by backpropagation.
pub fn network_loss_and_grad(weights: &Weights, spec: &ProblemSpec, x: &DenseMatrix, labels: &[usize]) -> Result<(f64, Weights)> {
    let layers = weights.w.len();
    let h = spec.activation;
    let mut pre = Vec::with_capacity(layers);
    let mut acts = vec![x.clone()];
    for l in 0..layers {
        let z = weights.w[l].matmul(&acts[l])?.add_column(&weights.b[l])?;
        if l + 1 < layers {
            acts.push(h.apply(&z));
        }
        pre.push(z);
    }
    let (mut value, mut dz) = spec.loss.value_and_grad(&pre[layers - 1], labels)?;
    let mut gw = vec![DenseMatrix::zeros(0, 0); layers];
    let mut gb = vec![DenseVector::zeros(0); layers];
    for l in (0..layers).rev() {
        gw[l] = dz.matmul_transpose(&acts[l])?;
        gb[l] = dz.row_sums();
        if l > 0 {
            let da = weights.w[l].transpose_matmul(&dz)?;
            dz = da.zip_with(&pre[l - 1], "backprop", |g, z| g * h.derivative(z))?;
        }
    }
    for l in 0..layers {
        value += spec.regularizer.value(&weights.w[l]);
        match spec.regularizer {
            Regularizer::None => {}
            Regularizer::L1(lambda) => {
                let sub = weights.w[l].map(|v| lambda * sign(v));
                gw[l].axpy(1.0, &sub)?;
            }
            Regularizer::L2(lambda) => gw[l].axpy(2.0 * lambda, &weights.w[l])?,
        }
    }
    Ok((value, Weights { w: gw, b: gb }))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub weights: Weights,
    pub metrics: Vec<EpochMetrics>,
    pub init_checksum: u64,
}

pub fn gd_train(train: &Dataset, test: Option<&Dataset>, spec: &ProblemSpec, config: &BaselineConfig) -> Result<BaselineOutcome> {
    let lr = config.lr;
    backprop_train(train, test, spec, config, |params, grads| {
        params.iter_mut().zip(grads).for_each(|(p, g)| *p -= lr * g)
    })
}

pub fn adam_train(train: &Dataset, test: Option<&Dataset>, spec: &ProblemSpec, config: &BaselineConfig) -> Result<BaselineOutcome> {
    let n = flat_param_count(spec);
    let mut adam = Adam::new(n, config.lr, config.adam_betas, config.adam_eps);
    backprop_train(train, test, spec, config, |params, grads| adam.step(params, grads))
}

/// Alternating minimization with acceleration disabled.
pub fn plain_altmin_train(train: &Dataset, test: Option<&Dataset>, spec: &ProblemSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    let config = TrainConfig {
        aa: None,
        ..config.clone()
    };
    trainer::train(train, test, spec, &config)
}

fn flat_param_count(spec: &ProblemSpec) -> usize {
    (0..spec.num_layers())
        .map(|l| spec.layer_dims[l + 1] * (spec.layer_dims[l] + 1))
        .sum()
}

fn backprop_train(
    train: &Dataset,
    test: Option<&Dataset>,
    spec: &ProblemSpec,
    config: &BaselineConfig,
    mut update: impl FnMut(&mut [f64], &[f64]),
) -> Result<BaselineOutcome> {
    config.validate()?;
    spec.validate()?;
    train.validate()?;
    let (w, b) = init_weights(spec, config.seed);
    let init_checksum = weights_checksum(&w, &b);
    let mut weights = Weights { w, b };
    let mut params = weights.to_flat();
    let mut metrics = Vec::new();
    for epoch in 0..config.epochs {
        let (_, grads) = network_loss_and_grad(&weights, spec, &train.features, &train.labels)?;
        update(&mut params, &grads.to_flat());
        weights.set_flat(&params);
        if epoch % config.record_every != 0 && epoch + 1 != config.epochs {
            continue;
        }
        let (loss, _) = network_loss_and_grad(&weights, spec, &train.features, &train.labels)
            .map_err(|_| Error::ObjectiveDiverged { epoch })?;
        if !loss.is_finite() {
            return Err(Error::ObjectiveDiverged { epoch });
        }
        metrics.push(EpochMetrics {
            epoch,
            objective: loss,
            residual_norm: 0.0,
            train_acc: accuracy(&weights.w, &weights.b, spec, &train.features, &train.labels)?,
            test_acc: match test {
                Some(t) => accuracy(&weights.w, &weights.b, spec, &t.features, &t.labels)?,
                None => f64::NAN,
            },
            wall_ms: 0.0,
            aa_accepted: false,
            eps: 0.0,
        });
    }
    Ok(BaselineOutcome {
        weights,
        metrics,
        init_checksum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_has_lr_magnitude() {
        for g in [1e-6, 0.3, 250.0] {
            let mut adam = Adam::new(1, 1e-3, (0.9, 0.999), 1e-8);
            let mut p = [2.0];
            adam.step(&mut p, &[g]);
            assert!(((2.0 - p[0]) - 1e-3).abs() < 1e-3 * 1e-2, "g={g} step={}", 2.0 - p[0]);
        }
    }

    #[test]
    fn zero_gradient_keeps_adam_params() {
        let mut adam = Adam::new(2, 1e-3, (0.9, 0.999), 1e-8);
        let mut p = [1.0, -1.0];
        for _ in 0..10 {
            adam.step(&mut p, &[0.0, 0.0]);
        }
        assert_eq!(p, [1.0, -1.0]);
    }
}
