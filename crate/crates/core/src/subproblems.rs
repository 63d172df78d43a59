//! Block updates of one alternating-minimization sweep.
//!
//! Each update minimizes the objective over one block with the others held
//! fixed. `W_l` and `a_l` use an isotropic quadratic surrogate of the penalty
//! whose curvature (`theta_l`, `tau_l`) is found by backtracking until the
//! surrogate majorizes the penalty at its own minimizer; that is enough for
//! the block objective not to increase. `b_l` and the hidden `z_l` have
//! closed-form minimizers, and the output `z_L` is solved with FISTA.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{DenseMatrix, DenseVector};
use crate::model::{constraint_bounds, linear_residual, ConstraintBounds, NetworkState, ProblemSpec, Regularizer};
use crate::{Error, Result};

/// Backtracking scalars carried across epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams {
    /// One per layer, for the `W` updates.
    pub theta: Vec<f64>,
    /// One per hidden layer, for the `a` updates.
    pub tau: Vec<f64>,
    pub backtrack_growth: f64,
    pub backtrack_max_iters: usize,
}

impl SurrogateParams {
    pub fn new(num_layers: usize, initial: f64) -> Self {
        Self {
            theta: vec![initial; num_layers],
            tau: vec![initial; num_layers.saturating_sub(1)],
            backtrack_growth: 2.0,
            backtrack_max_iters: 60,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.theta.iter().chain(&self.tau).all(|&v| v > 0.0 && v.is_finite())
            && self.backtrack_growth > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("surrogate scalars must be positive and growth > 1".into()))
        }
    }

    /// Warm start for the next epoch: half the last accepted value.
    pub fn warm_start(accepted: f64) -> f64 {
        0.5 * accepted
    }
}

/// Outcome of one backtracking trial: the surrogate minimizer together with
/// the surrogate and the true penalty evaluated there.
#[derive(Debug, Clone)]
pub struct Trial<T> {
    pub candidate: T,
    pub surrogate: f64,
    pub phi: f64,
}

/// Smallest `start * growth^i` whose surrogate majorizes the penalty at the
/// surrogate's minimizer. The candidate is rebuilt for every trial value.
pub fn backtrack<T>(
    start: f64,
    growth: f64,
    max_iters: usize,
    block: &'static str,
    mut trial: impl FnMut(f64) -> Result<Trial<T>>,
) -> Result<(Trial<T>, f64)> {
    debug_assert!(start > 0.0 && growth > 1.0);
    let mut scalar = start;
    for _ in 0..=max_iters {
        let t = trial(scalar)?;
        if t.surrogate >= t.phi {
            return Ok((t, scalar));
        }
        scalar *= growth;
    }
    Err(Error::Divergence {
        block,
        iters: max_iters,
    })
}

/// Minimizer of `<grad, W - anchor> + theta/2 ||W - anchor||^2 + Omega(W)`.
pub fn prox_weight(anchor: &DenseMatrix, grad: &DenseMatrix, theta: f64, reg: Regularizer) -> DenseMatrix {
    match reg {
        Regularizer::None => anchor.zip_with(grad, "prox", |w, g| w - g / theta).expect("same shape"),
        Regularizer::L2(lambda) => anchor
            .zip_with(grad, "prox", |w, g| (theta * w - g) / (theta + 2.0 * lambda))
            .expect("same shape"),
        Regularizer::L1(lambda) => {
            let k = lambda / theta;
            anchor
                .zip_with(grad, "prox", |w, g| soft_threshold(w - g / theta, k))
                .expect("same shape")
        }
    }
}

#[inline]
pub fn soft_threshold(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

/// Gradient of the layer-`l` penalty with respect to `W_l`, and the residual.
pub fn grad_w(state: &NetworkState, rho: f64, l: usize) -> Result<(DenseMatrix, DenseMatrix)> {
    let r = linear_residual(&state.w[l], state.input(l), &state.b[l], &state.z[l])?;
    let g = r.matmul_transpose(state.input(l))?.scale(-rho);
    Ok((g, r))
}

/// Gradient of the layer-`l + 1` penalty with respect to the hidden `a_l`.
pub fn grad_a(state: &NetworkState, rho: f64, l: usize) -> Result<(DenseMatrix, DenseMatrix)> {
    let r = linear_residual(&state.w[l + 1], &state.a[l], &state.b[l + 1], &state.z[l + 1])?;
    let g = state.w[l + 1].transpose_matmul(&r)?.scale(-rho);
    Ok((g, r))
}

/// Gradient of the layer-`l` penalty with respect to `b_l` (summed over samples).
pub fn grad_b(state: &NetworkState, rho: f64, l: usize) -> Result<DenseVector> {
    let r = crate::model::layer_residual(state, l)?;
    Ok(r.row_sums().scale(-rho))
}

/// Gradient of the layer-`l` penalty with respect to `z_l`.
pub fn grad_z(state: &NetworkState, rho: f64, l: usize) -> Result<DenseMatrix> {
    Ok(crate::model::layer_residual(state, l)?.scale(rho))
}

/// Surrogate prox step on `W_l`; returns the new block and the accepted `theta`.
pub fn update_w(state: &NetworkState, spec: &ProblemSpec, params: &SurrogateParams, l: usize, theta_start: f64) -> Result<(DenseMatrix, f64)> {
    let rho = spec.rho;
    let anchor = &state.w[l];
    let input = state.input(l);
    let (grad, r) = grad_w(state, rho, l)?;
    let phi_anchor = 0.5 * rho * r.frob_norm_sq();
    let (trial, theta) = backtrack(theta_start, params.backtrack_growth, params.backtrack_max_iters, "W", |theta| {
        let candidate = prox_weight(anchor, &grad, theta, spec.regularizer);
        let step = candidate.sub(anchor)?;
        let surrogate = phi_anchor + grad.inner(&step)? + 0.5 * theta * step.frob_norm_sq();
        let phi = crate::model::penalty_phi(rho, &candidate, input, &state.b[l], &state.z[l])?;
        Ok(Trial {
            candidate,
            surrogate,
            phi,
        })
    })?;
    Ok((trial.candidate, theta))
}

/// Exact minimizer of the layer-`l` penalty over `b_l`: the row mean of `z_l - W_l a_{l-1}`.
pub fn update_b(state: &NetworkState, l: usize) -> Result<DenseVector> {
    let wa = state.w[l].matmul(state.input(l))?;
    Ok(state.z[l].sub(&wa)?.row_means())
}

/// Closed-form hidden `z_l` update: the penalty minimizer `W_l a_{l-1} + b_l`
/// clipped to the band of `z` values keeping `h(z_l)` within `eps` of `a_l`.
pub fn update_z_hidden(state: &NetworkState, spec: &ProblemSpec, l: usize, eps: f64) -> Result<DenseMatrix> {
    debug_assert!(l + 1 < state.num_layers());
    let target = state.w[l].matmul(state.input(l))?.add_column(&state.b[l])?;
    let h = spec.activation;
    let mut out = target;
    for (z, &a) in out.as_mut_slice().iter_mut().zip(state.a[l].as_slice()) {
        let (lo, hi) = h.preimage(a - eps, a + eps);
        *z = z.max(lo).min(hi);
    }
    Ok(out)
}

/// Band for `z_l` given the fixed `a_l` (ends may be infinite).
pub fn z_band(state: &NetworkState, spec: &ProblemSpec, l: usize, eps: f64) -> Vec<(f64, f64)> {
    state.a[l]
        .as_slice()
        .iter()
        .map(|&a| spec.activation.preimage(a - eps, a + eps))
        .collect()
}

/// Projected gradient step on the hidden `a_l` with backtracked `tau`.
pub fn update_a(state: &NetworkState, spec: &ProblemSpec, params: &SurrogateParams, l: usize, tau_start: f64, eps: f64) -> Result<(DenseMatrix, f64)> {
    debug_assert!(l + 1 < state.num_layers());
    let rho = spec.rho;
    let anchor = &state.a[l];
    let bounds = constraint_bounds(spec.activation, &state.z[l], eps);
    let (grad, r) = grad_a(state, rho, l)?;
    let phi_anchor = 0.5 * rho * r.frob_norm_sq();
    let (trial, tau) = backtrack(tau_start, params.backtrack_growth, params.backtrack_max_iters, "a", |tau| {
        let candidate = projected_step(anchor, &grad, tau, &bounds);
        let step = candidate.sub(anchor)?;
        let surrogate = phi_anchor + grad.inner(&step)? + 0.5 * tau * step.frob_norm_sq();
        let phi = crate::model::penalty_phi(rho, &state.w[l + 1], &candidate, &state.b[l + 1], &state.z[l + 1])?;
        Ok(Trial {
            candidate,
            surrogate,
            phi,
        })
    })?;
    Ok((trial.candidate, tau))
}

/// `min(max(lower, a - grad / tau), upper)`.
pub fn projected_step(a: &DenseMatrix, grad: &DenseMatrix, tau: f64, bounds: &ConstraintBounds) -> DenseMatrix {
    let step = a.zip_with(grad, "projected_step", |v, g| v - g / tau).expect("same shape");
    bounds.clip(&step)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FistaConfig {
    pub iters: usize,
    pub tol: f64,
    /// Lipschitz constant of the loss gradient; the step is `1 / (rho + lipschitz)`.
    pub lipschitz: f64,
}

impl Default for FistaConfig {
    fn default() -> Self {
        Self {
            iters: 10,
            tol: 1e-8,
            lipschitz: crate::model::Loss::LIPSCHITZ,
        }
    }
}

/// FISTA on `g(z) = rho/2 ||z - anchor||^2 + loss(z)` from `start`.
///
/// Returns the iterate with the lowest `g` seen, so the result never has a
/// larger objective than `start`.
pub fn fista_minimize(
    start: &DenseMatrix,
    anchor: &DenseMatrix,
    rho: f64,
    cfg: &FistaConfig,
    loss: impl Fn(&DenseMatrix) -> Result<(f64, DenseMatrix)>,
) -> Result<DenseMatrix> {
    let objective_and_grad = |z: &DenseMatrix| -> Result<(f64, DenseMatrix)> {
        let (lv, lg) = loss(z)?;
        let d = z.sub(anchor)?;
        let value = 0.5 * rho * d.frob_norm_sq() + lv;
        let mut grad = lg;
        grad.axpy(rho, &d)?;
        Ok((value, grad))
    };
    let step = 1.0 / (rho + cfg.lipschitz);
    let (start_value, start_grad) = objective_and_grad(start)?;
    let mut best = start.clone();
    let mut best_value = start_value;
    if start_grad.frob_norm() <= cfg.tol {
        return Ok(best);
    }
    let mut x_prev = start.clone();
    let mut y = start.clone();
    let mut y_grad = start_grad;
    let mut t = 1.0_f64;
    for _ in 0..cfg.iters {
        let mut x = y.clone();
        x.axpy(-step, &y_grad)?;
        if !x.is_finite() {
            return Err(Error::NonFinite("fista iterate"));
        }
        let (x_value, x_grad) = objective_and_grad(&x)?;
        if x_value < best_value {
            best_value = x_value;
            best = x.clone();
        }
        if x_grad.frob_norm() <= cfg.tol {
            break;
        }
        let t_next = 0.5 * (1.0 + libm::sqrt(1.0 + 4.0 * t * t));
        let momentum = (t - 1.0) / t_next;
        y = x.clone();
        y.axpy(momentum, &x.sub(&x_prev)?)?;
        y_grad = objective_and_grad(&y)?.1;
        x_prev = x;
        t = t_next;
    }
    Ok(best)
}

/// Output-layer update: FISTA on the exact penalty plus the loss.
pub fn update_z_last(state: &NetworkState, spec: &ProblemSpec, cfg: &FistaConfig) -> Result<DenseMatrix> {
    let l = state.num_layers() - 1;
    let anchor = state.w[l].matmul(state.input(l))?.add_column(&state.b[l])?;
    fista_minimize(&state.z[l], &anchor, spec.rho, cfg, |z| spec.loss.value_and_grad(z, &state.labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Loss};

    #[test]
    fn backtracking_returns_start_when_already_majorizing() {
        // phi(w) = c/2 (w - 1)^2 around anchor 0
        let c = 4.0;
        let run = |start: f64| {
            backtrack(start, 2.0, 60, "test", |theta| {
                let g = -c;
                let cand = -g / theta;
                Ok(Trial {
                    candidate: cand,
                    surrogate: 0.5 * c + g * cand + 0.5 * theta * cand * cand,
                    phi: 0.5 * c * (cand - 1.0) * (cand - 1.0),
                })
            })
            .unwrap()
            .1
        };
        assert_eq!(run(4.0), 4.0);
        assert_eq!(run(8.0), 8.0);
        assert_eq!(run(1.0), 4.0);
    }

    #[test]
    fn backtracking_reports_divergence() {
        let err = backtrack(1.0, 2.0, 3, "W", |_| {
            Ok(Trial {
                candidate: (),
                surrogate: 0.0,
                phi: 1.0,
            })
        })
        .unwrap_err();
        assert_eq!(err, Error::Divergence { block: "W", iters: 3 });
    }

    #[test]
    fn scalar_l1_prox_example() {
        let w = DenseMatrix::filled(1, 1, 1.0);
        let g = DenseMatrix::filled(1, 1, 2.0);
        let out = prox_weight(&w, &g, 2.0, Regularizer::L1(1.0));
        assert_eq!(out.as_slice(), &[0.0]);
    }

    #[test]
    fn fista_without_loss_reaches_anchor() {
        let start = DenseMatrix::from_rows(&[&[3.0, -1.0]]);
        let anchor = DenseMatrix::from_rows(&[&[0.5, 2.0]]);
        let cfg = FistaConfig {
            iters: 500,
            tol: 1e-12,
            lipschitz: 1.0,
        };
        let out = fista_minimize(&start, &anchor, 1.0, &cfg, |z| Ok((0.0, DenseMatrix::zeros(z.rows(), z.cols())))).unwrap();
        for (a, b) in out.as_slice().iter().zip(anchor.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn hidden_z_single_entry_step() {
        let spec = ProblemSpec::new(alloc::vec![1, 1, 1], Activation::Relu, Loss::LeastSquares, 1.0).unwrap();
        let state = NetworkState {
            w: alloc::vec![DenseMatrix::filled(1, 1, 1.0), DenseMatrix::filled(1, 1, 1.0)],
            b: alloc::vec![DenseVector::zeros(1), DenseVector::zeros(1)],
            z: alloc::vec![DenseMatrix::filled(1, 1, 2.5), DenseMatrix::filled(1, 1, 2.5)],
            a: alloc::vec![DenseMatrix::filled(1, 1, 2.5)],
            a0: DenseMatrix::filled(1, 1, 2.0),
            labels: alloc::vec![0],
        };
        // residual delta = 0.5 at the single entry, band of width 200 around a
        let z = update_z_hidden(&state, &spec, 0, 100.0).unwrap();
        assert_eq!(z.as_slice(), &[2.0]);
    }
}
