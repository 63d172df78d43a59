//! Safeguarded limited-memory type-I Anderson acceleration.
//!
//! For a fixed-point map `G` the engine tracks the root-finding residual
//! `g(x) = x - G(x)` (the negative of [`residual`]) and maintains an
//! approximate inverse Jacobian `H = B^{-1}` of `g` as the identity plus at
//! most `m` rank-one terms. Each accepted iterate contributes one secant pair
//! `(xi_x, xi_g)`, orthogonalized by Gram-Schmidt against the current memory
//! and Powell-regularized so that the rank-one denominator stays at least
//! `theta_bar * ||xi_hat||^2` in magnitude. The accelerated proposal
//! `x - H g(x)` is used only while `||g(x)|| <= d * U * (n_AA + 1)^-(1 + eps)`,
//! where `U = ||g(x_0)||`; otherwise the engine falls back to the plain step.
//!
//! With `H = I` the proposal is exactly the Picard step `G(x)`, which is why
//! the residual is taken in the `x - G(x)` orientation.
//!
//! Maps that report a gate metric (the alternating-minimization epoch does)
//! are additionally gated: an evaluation whose metric does not improve on the
//! last recorded one is discarded and the engine reverts to the plain step
//! from the last accepted iterate.

use alloc::vec::Vec;

use crate::linalg::{DenseMatrix, DenseVector};
use crate::{Error, Result};

/// Denominators below this magnitude are treated as a breakdown of the
/// rank-one update.
pub const BREAKDOWN_THRESHOLD: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AAConfig {
    /// Memory depth: the number of rank-one terms kept before a restart.
    pub m: usize,
    pub theta_bar: f64,
    /// Gram-Schmidt conditioning threshold for restarts.
    pub tau_gs: f64,
    pub d_safe: f64,
    pub eps_safe: f64,
    /// Mixing weight of the plain step `(1 - alpha) x + alpha G(x)`.
    pub alpha_mix: f64,
}

impl Default for AAConfig {
    fn default() -> Self {
        Self {
            m: 8,
            theta_bar: 0.01,
            tau_gs: 0.01,
            d_safe: 1e6,
            eps_safe: 1e-6,
            alpha_mix: 1.0,
        }
    }
}

impl AAConfig {
    pub fn validate(&self) -> Result<()> {
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        if self.m == 0
            || !open01(self.theta_bar)
            || !open01(self.tau_gs)
            || !(self.d_safe > 0.0)
            || !(self.eps_safe > 0.0)
            || !(self.alpha_mix > 0.0 && self.alpha_mix <= 1.0)
        {
            return Err(Error::InvalidConfig("anderson parameters out of range".into()));
        }
        Ok(())
    }

    /// `d * U * (n_AA + 1)^-(1 + eps)`.
    pub fn safeguard_bound(&self, u_bar: f64, n_aa: usize) -> f64 {
        self.d_safe * u_bar * libm::pow((n_aa + 1) as f64, -(1.0 + self.eps_safe))
    }

    /// `3 (1 + theta_bar + tau)^m / tau^m - 2`, the bound on `||B_k||_2`.
    pub fn jacobian_norm_bound(&self) -> f64 {
        let m = self.m as f64;
        3.0 * libm::pow(1.0 + self.theta_bar + self.tau_gs, m) / libm::pow(self.tau_gs, m) - 2.0
    }

    /// Bound on `||B_k^{-1}||_2` for dimension `n`.
    pub fn inverse_norm_bound(&self, n: usize) -> f64 {
        let m = self.m as f64;
        let base = 3.0 * libm::pow((1.0 + self.theta_bar + self.tau_gs) / self.tau_gs, m) - 2.0;
        libm::pow(base, n.saturating_sub(1) as f64) / libm::pow(self.theta_bar, m)
    }
}

/// Result of evaluating the fixed-point map once.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub image: DenseVector,
    /// Problem-specific merit value for the record-or-revert gate (lower is
    /// better). Maps without one always pass the gate.
    pub gate_metric: Option<f64>,
}

/// A (possibly stateful) fixed-point map `x -> G(x)`.
pub trait FixedPointMap {
    fn dimension(&self) -> usize;
    fn apply(&mut self, x: &DenseVector) -> Result<Evaluation>;
}

impl<F> FixedPointMap for (usize, F)
where
    F: FnMut(&DenseVector) -> DenseVector,
{
    fn dimension(&self) -> usize {
        self.0
    }

    fn apply(&mut self, x: &DenseVector) -> Result<Evaluation> {
        let image = (self.1)(x);
        if image.len() != self.0 {
            return Err(Error::LengthMismatch {
                expected: self.0,
                found: image.len(),
            });
        }
        if !image.is_finite() {
            return Err(Error::NonFinite("fixed-point map"));
        }
        Ok(Evaluation {
            image,
            gate_metric: None,
        })
    }
}

/// `F(x) = G(x) - x`.
pub fn residual(map: &mut impl FixedPointMap, x: &DenseVector) -> Result<DenseVector> {
    let eval = map.apply(x)?;
    let f = eval.image.sub(x);
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::NonFinite("residual"))
    }
}

/// `H = I + sum_i u_i v_i^T`, never materialized during iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InverseJacobian {
    terms: Vec<(DenseVector, DenseVector)>,
}

impl InverseJacobian {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[(DenseVector, DenseVector)] {
        &self.terms
    }

    pub fn clear(&mut self) {
        self.terms.clear();
    }

    pub fn push(&mut self, u: DenseVector, v: DenseVector) {
        self.terms.push((u, v));
    }

    /// `H v`, accumulating terms in insertion order.
    pub fn apply(&self, v: &DenseVector) -> DenseVector {
        let mut out = v.clone();
        for (u, w) in &self.terms {
            out.axpy(w.dot(v), u);
        }
        out
    }

    /// `H^T v`.
    pub fn apply_transpose(&self, v: &DenseVector) -> DenseVector {
        let mut out = v.clone();
        for (u, w) in &self.terms {
            out.axpy(u.dot(v), w);
        }
        out
    }

    /// Dense `n x n` copy; only meant for small diagnostics.
    pub fn materialize(&self, n: usize) -> DenseMatrix {
        let mut m = DenseMatrix::identity(n);
        for (u, w) in &self.terms {
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] += u[i] * w[j];
                }
            }
        }
        m
    }
}

pub fn apply_inverse_jacobian(h: &InverseJacobian, v: &DenseVector) -> DenseVector {
    h.apply(v)
}

/// Orthogonalizes `xi` against `basis`; flags the result as ill-conditioned
/// when `||xi_hat|| < tau ||xi||`.
pub fn gram_schmidt_step(basis: &[DenseVector], xi: &DenseVector, tau: f64) -> Result<(DenseVector, bool)> {
    let xi_norm = xi.norm();
    if xi_norm == 0.0 {
        return Err(Error::DegenerateSecant);
    }
    let mut hat = xi.clone();
    for q in basis {
        let qq = q.dot(q);
        if qq > 0.0 {
            hat.axpy(-q.dot(xi) / qq, q);
        }
    }
    let ill = hat.norm() < tau * xi_norm;
    Ok((hat, ill))
}

/// Powell's safeguard `psi_theta_bar(eta)`, with `sign(0) = 0`.
pub fn psi(eta: f64, theta_bar: f64) -> f64 {
    if eta.abs() < theta_bar {
        let sign = if eta > 0.0 {
            1.0
        } else if eta < 0.0 {
            -1.0
        } else {
            0.0
        };
        (1.0 - sign * theta_bar) / (1.0 - eta)
    } else {
        1.0
    }
}

/// Blends the residual secant toward `B xi_x` (passed as `b_xi_x`):
/// `theta xi_g + (1 - theta) B xi_x` with `theta = psi(xi_hat^T H xi_g / ||xi_hat||^2)`.
pub fn powell_regularize(
    h: &InverseJacobian,
    xi_g: &DenseVector,
    xi_hat: &DenseVector,
    b_xi_x: &DenseVector,
    theta_bar: f64,
) -> (DenseVector, f64) {
    let eta = xi_hat.dot(&h.apply(xi_g)) / xi_hat.dot(xi_hat);
    let theta = psi(eta, theta_bar);
    if theta == 1.0 {
        return (xi_g.clone(), theta);
    }
    let mut out = xi_g.scale(theta);
    out.axpy(1.0 - theta, b_xi_x);
    (out, theta)
}

/// `H <- H + (xi_x - H xi_tilde) xi_hat^T H / (xi_hat^T H xi_tilde)`.
pub fn update_inverse_jacobian(
    h: &mut InverseJacobian,
    xi_x: &DenseVector,
    xi_hat: &DenseVector,
    xi_tilde: &DenseVector,
) -> Result<()> {
    let h_xi = h.apply(xi_tilde);
    let denom = xi_hat.dot(&h_xi);
    if !(denom.abs() >= BREAKDOWN_THRESHOLD) {
        return Err(Error::NumericalBreakdown(denom));
    }
    let u = xi_x.sub(&h_xi).scale(1.0 / denom);
    let v = h.apply_transpose(xi_hat);
    h.push(u, v);
    Ok(())
}

/// One accepted accelerated step, as checked by the safeguard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafeguardRecord {
    pub iteration: usize,
    /// `||F(x_k)||` at the point the proposal was built from.
    pub residual_norm: f64,
    /// Number of accepted steps before this one.
    pub n_aa: usize,
    pub bound: f64,
}

/// What happened during one [`AndersonAccelerator::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// The evaluated point passed the gate and was recorded.
    pub recorded: bool,
    /// The accelerated proposal was taken as the next iterate.
    pub aa_accepted: bool,
    /// `||F||` at the evaluated point.
    pub residual_norm: f64,
    /// `G` at the evaluated point.
    pub evaluation: Evaluation,
}

/// Engine state. Residual vectors are stored in the `x - G(x)` orientation.
#[derive(Debug, Clone)]
pub struct AndersonAccelerator {
    config: AAConfig,
    /// Last accepted iterate and its image.
    x_default: DenseVector,
    g_of_default: DenseVector,
    /// Base point of the next secant and its residual.
    x_prev: DenseVector,
    residual_prev: DenseVector,
    /// Latest accelerated proposal.
    tilde_x: DenseVector,
    /// Point evaluated by the next step.
    next: DenseVector,
    /// `next` was produced as `x_prev - H residual_prev` with the current `H`.
    next_from_proposal: bool,
    secant_x: Vec<DenseVector>,
    secant_x_hat: Vec<DenseVector>,
    jacobian: InverseJacobian,
    n_aa: usize,
    u_bar: f64,
    r_prev: f64,
    reset: bool,
    iteration: usize,
    restarts: usize,
    log: Vec<SafeguardRecord>,
}

impl AndersonAccelerator {
    /// Evaluates `G(x0)`, fixes `U = ||F(x0)||`, and prepares the mixed first
    /// step. Returns the engine and the evaluation at `x0`.
    pub fn new(config: AAConfig, x0: DenseVector, map: &mut impl FixedPointMap) -> Result<(Self, Evaluation)> {
        config.validate()?;
        if x0.len() != map.dimension() {
            return Err(Error::LengthMismatch {
                expected: map.dimension(),
                found: x0.len(),
            });
        }
        let eval = map.apply(&x0)?;
        let g0 = x0.sub(&eval.image);
        let u_bar = g0.norm();
        if !u_bar.is_finite() {
            return Err(Error::NonFinite("initial residual"));
        }
        let next = mix(&x0, &eval.image, config.alpha_mix);
        let engine = Self {
            config,
            x_default: x0.clone(),
            g_of_default: eval.image.clone(),
            x_prev: x0,
            residual_prev: g0,
            tilde_x: next.clone(),
            next,
            next_from_proposal: false,
            secant_x: Vec::new(),
            secant_x_hat: Vec::new(),
            jacobian: InverseJacobian::identity(),
            n_aa: 0,
            u_bar,
            r_prev: f64::INFINITY,
            reset: true,
            iteration: 0,
            restarts: 0,
            log: Vec::new(),
        };
        Ok((engine, eval))
    }

    pub fn config(&self) -> &AAConfig {
        &self.config
    }

    /// The point the next [`step`](Self::step) evaluates.
    pub fn next_point(&self) -> &DenseVector {
        &self.next
    }

    pub fn x_default(&self) -> &DenseVector {
        &self.x_default
    }

    pub fn tilde_x(&self) -> &DenseVector {
        &self.tilde_x
    }

    pub fn jacobian(&self) -> &InverseJacobian {
        &self.jacobian
    }

    /// Number of rank-one terms currently stored.
    pub fn memory(&self) -> usize {
        self.jacobian.len()
    }

    pub fn n_aa(&self) -> usize {
        self.n_aa
    }

    pub fn u_bar(&self) -> f64 {
        self.u_bar
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    pub fn is_reset(&self) -> bool {
        self.reset
    }

    pub fn safeguard_log(&self) -> &[SafeguardRecord] {
        &self.log
    }

    /// Evaluates the map at [`next_point`](Self::next_point) and chooses the
    /// following iterate.
    pub fn step(&mut self, map: &mut impl FixedPointMap) -> Result<StepOutcome> {
        self.iteration += 1;
        let x = core::mem::take(&mut self.next);
        let eval = map.apply(&x)?;
        let g = x.sub(&eval.image);
        let g_norm = g.norm();
        if !g_norm.is_finite() {
            return Err(Error::NonFinite("residual"));
        }
        // Secants come only from points whose B xi is known exactly: proposals
        // built with the current memory, or any point while B = I.
        let xi_x = x.sub(&self.x_prev);
        if (self.next_from_proposal || self.jacobian.is_empty()) && xi_x.norm() > 0.0 {
            let xi_g = g.sub(&self.residual_prev);
            self.absorb_secant(xi_x, xi_g)?;
        }
        let gate_ok = match eval.gate_metric {
            Some(r) => self.reset || r < self.r_prev,
            None => true,
        };
        if !gate_ok {
            // revert to the last accepted iterate
            self.reset = true;
            self.r_prev = f64::INFINITY;
            self.fall_back();
            return Ok(StepOutcome {
                recorded: false,
                aa_accepted: false,
                residual_norm: g_norm,
                evaluation: eval,
            });
        }

        self.r_prev = eval.gate_metric.unwrap_or(g_norm);
        self.reset = false;
        self.x_default = x.clone();
        self.g_of_default = eval.image.clone();

        let mut tilde = self.jacobian.apply(&g);
        tilde.as_mut_slice().iter_mut().zip(x.as_slice()).for_each(|(t, &xv)| *t = xv - *t);
        self.x_prev = x;
        self.residual_prev = g;
        self.tilde_x = tilde;

        let bound = self.config.safeguard_bound(self.u_bar, self.n_aa);
        let aa_accepted = g_norm <= bound;
        if aa_accepted {
            self.log.push(SafeguardRecord {
                iteration: self.iteration,
                residual_norm: g_norm,
                n_aa: self.n_aa,
                bound,
            });
            self.n_aa += 1;
            self.next = self.tilde_x.clone();
            self.next_from_proposal = true;
        } else {
            self.reset = true;
            self.fall_back();
        }
        Ok(StepOutcome {
            recorded: true,
            aa_accepted,
            residual_norm: g_norm,
            evaluation: eval,
        })
    }

    /// Plain step from the last accepted iterate. The memory is kept.
    fn fall_back(&mut self) {
        self.next = mix(&self.x_default, &self.g_of_default, self.config.alpha_mix);
        self.x_prev = self.x_default.clone();
        self.residual_prev = self.x_default.sub(&self.g_of_default);
        self.next_from_proposal = false;
    }

    fn clear_memory(&mut self) {
        self.secant_x.clear();
        self.secant_x_hat.clear();
        self.jacobian.clear();
    }

    fn restart(&mut self) {
        self.clear_memory();
        self.restarts += 1;
    }

    fn absorb_secant(&mut self, xi_x: DenseVector, xi_g: DenseVector) -> Result<()> {
        let mut restarted = false;
        if self.jacobian.len() == self.config.m {
            self.restart();
            restarted = true;
        }
        let (mut xi_hat, ill) = gram_schmidt_step(&self.secant_x_hat, &xi_x, self.config.tau_gs)?;
        if ill {
            self.restart();
            restarted = true;
            xi_hat = xi_x.clone();
        }
        // B xi_x equals -g_prev when xi_x came from the proposal built with the
        // current memory; otherwise the memory is empty and B = I.
        let b_xi_x = if self.next_from_proposal && !restarted {
            self.residual_prev.scale(-1.0)
        } else {
            debug_assert!(self.jacobian.is_empty());
            xi_x.clone()
        };
        let (xi_tilde, _theta) = powell_regularize(&self.jacobian, &xi_g, &xi_hat, &b_xi_x, self.config.theta_bar);
        match update_inverse_jacobian(&mut self.jacobian, &xi_x, &xi_hat, &xi_tilde) {
            Ok(()) => {
                self.secant_x.push(xi_x);
                self.secant_x_hat.push(xi_hat);
            }
            Err(Error::NumericalBreakdown(_)) => self.restart(),
            Err(e) => return Err(e),
        }
        Ok(())
    }
}

fn mix(x: &DenseVector, gx: &DenseVector, alpha: f64) -> DenseVector {
    if alpha == 1.0 {
        gx.clone()
    } else {
        let mut out = x.scale(1.0 - alpha);
        out.axpy(alpha, gx);
        out
    }
}
