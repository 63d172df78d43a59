//! The relaxed training objective and its ingredients.
//!
//! Layers are indexed from zero in code: layer `l` maps `input(l)` (the input
//! features for `l == 0`, otherwise `a[l - 1]`) to `z[l]`. There are `L`
//! pre-activation blocks `z`, `L` weights and biases, and `L - 1` hidden
//! activations `a`; the output layer has no activation block.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::linalg::{DenseMatrix, DenseVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

/// Interval ends clipped away from the open range of sigmoid/tanh so that
/// preimages stay finite.
const RANGE_MARGIN: f64 = 1e-12;

impl Activation {
    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + libm::exp(-z)),
            Activation::Tanh => libm::tanh(z),
        }
    }

    /// Derivative, with the ReLU subgradient taken as 0 at 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = self.eval(z);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = libm::tanh(z);
                1.0 - t * t
            }
        }
    }

    pub fn apply(self, z: &DenseMatrix) -> DenseMatrix {
        z.map(|v| self.eval(v))
    }

    /// The set `{z : h(z) in [lo, hi]}` as an interval `(lower, upper)`,
    /// possibly with infinite ends. When no `z` maps into `[lo, hi]` the
    /// interval of points whose image is nearest to it is returned instead.
    pub fn preimage(self, lo: f64, hi: f64) -> (f64, f64) {
        debug_assert!(lo <= hi);
        match self {
            Activation::Relu => {
                if hi < 0.0 {
                    (f64::NEG_INFINITY, 0.0)
                } else if lo <= 0.0 {
                    (f64::NEG_INFINITY, hi)
                } else {
                    (lo, hi)
                }
            }
            Activation::Sigmoid => bounded_preimage(lo, hi, 0.0, 1.0, |y| libm::log(y / (1.0 - y))),
            Activation::Tanh => bounded_preimage(lo, hi, -1.0, 1.0, libm::atanh),
        }
    }
}

fn bounded_preimage(lo: f64, hi: f64, min: f64, max: f64, inv: impl Fn(f64) -> f64) -> (f64, f64) {
    let inner_min = min + RANGE_MARGIN;
    let inner_max = max - RANGE_MARGIN;
    if hi <= min {
        return (f64::NEG_INFINITY, inv(inner_min));
    }
    if lo >= max {
        return (inv(inner_max), f64::INFINITY);
    }
    let lower = if lo <= min { f64::NEG_INFINITY } else { inv(lo.min(inner_max)) };
    let upper = if hi >= max { f64::INFINITY } else { inv(hi.max(inner_min)) };
    (lower, upper)
}

pub fn activation_apply(h: Activation, z: &DenseMatrix) -> DenseMatrix {
    h.apply(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    CrossEntropySoftmax,
    LeastSquares,
}

impl Loss {
    /// Mean loss over samples and its gradient with respect to the logits.
    pub fn value_and_grad(self, logits: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
        let (classes, n) = logits.shape();
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: labels.len(),
            });
        }
        check_labels(labels, classes)?;
        let inv_n = 1.0 / n as f64;
        let mut grad = DenseMatrix::zeros(classes, n);
        let mut total = 0.0;
        match self {
            Loss::CrossEntropySoftmax => {
                for (j, &y) in labels.iter().enumerate() {
                    let col = logits.column(j);
                    let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let (sum, sum_except_y) = col.iter().enumerate().fold((0.0, 0.0), |(s, sy), (c, &v)| {
                        let e = libm::exp(v - max);
                        (s + e, if c == y { sy } else { sy + e })
                    });
                    // -log p_y; log1p keeps precision when y is the confident argmax.
                    let nll = if col[y] == max {
                        libm::log1p(sum_except_y)
                    } else {
                        max - col[y] + libm::log(sum)
                    };
                    total += nll;
                    for c in 0..classes {
                        let p = libm::exp(col[c] - max) / sum;
                        let target = if c == y { 1.0 } else { 0.0 };
                        grad[(c, j)] = (p - target) * inv_n;
                    }
                }
            }
            Loss::LeastSquares => {
                for (j, &y) in labels.iter().enumerate() {
                    for c in 0..classes {
                        let target = if c == y { 1.0 } else { 0.0 };
                        let d = logits[(c, j)] - target;
                        total += 0.5 * d * d;
                        grad[(c, j)] = d * inv_n;
                    }
                }
            }
        }
        let value = total * inv_n;
        if !value.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        Ok((value, grad))
    }

    pub fn value(self, logits: &DenseMatrix, labels: &[usize]) -> Result<f64> {
        self.value_and_grad(logits, labels).map(|(v, _)| v)
    }

    /// Lipschitz constant of the mean-loss gradient used as the default in
    /// the output-layer solver. Both losses satisfy it for any sample count.
    pub const LIPSCHITZ: f64 = 1.0;
}

pub fn loss_and_grad(loss: Loss, logits: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
    loss.value_and_grad(logits, labels)
}

pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// Weight regularizer `Omega(W)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    None,
    /// `lambda * sum |w|`
    L1(f64),
    /// `lambda * sum w^2`
    L2(f64),
}

impl Regularizer {
    pub fn value(self, w: &DenseMatrix) -> f64 {
        match self {
            Regularizer::None => 0.0,
            Regularizer::L1(lambda) => lambda * w.abs_sum(),
            Regularizer::L2(lambda) => lambda * w.frob_norm_sq(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    /// `[input_dim, n_1, ..., n_L]`; the last entry is the class count.
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub loss: Loss,
    pub regularizer: Regularizer,
    pub rho: f64,
    pub eps0: f64,
    pub eps_floor: f64,
}

impl ProblemSpec {
    /// A spec with the default tolerance schedule (100 halving to 0.001).
    pub fn new(layer_dims: Vec<usize>, activation: Activation, loss: Loss, rho: f64) -> Result<Self> {
        let spec = Self {
            layer_dims,
            activation,
            loss,
            regularizer: Regularizer::None,
            rho,
            eps0: 100.0,
            eps_floor: 0.001,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_regularizer(mut self, regularizer: Regularizer) -> Result<Self> {
        self.regularizer = regularizer;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.layer_dims.len() < 2 {
            return invalid("need at least an input and an output dimension");
        }
        if self.layer_dims.contains(&0) {
            return invalid("layer dimensions must be positive");
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return invalid("rho must be positive");
        }
        if !(self.eps_floor > 0.0) || !(self.eps0 >= self.eps_floor) || !self.eps0.is_finite() {
            return invalid("need eps0 >= eps_floor > 0");
        }
        match self.regularizer {
            Regularizer::L1(l) | Regularizer::L2(l) if !(l >= 0.0) || !l.is_finite() => {
                invalid("regularization weight must be non-negative")
            }
            _ => Ok(()),
        }
    }

    /// Number of weight layers `L`.
    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// `max(eps0 / 2^k, eps_floor)`.
    pub fn eps_at(&self, epoch: usize) -> f64 {
        let halvings = epoch.min(2000) as i32;
        (self.eps0 * libm::pow(0.5, halvings as f64)).max(self.eps_floor)
    }
}

/// All optimization blocks plus the fixed input and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub w: Vec<DenseMatrix>,
    pub b: Vec<DenseVector>,
    pub z: Vec<DenseMatrix>,
    /// Hidden activations; one fewer than the number of layers.
    pub a: Vec<DenseMatrix>,
    /// Input features, `d x N`.
    pub a0: DenseMatrix,
    pub labels: Vec<usize>,
}

impl NetworkState {
    pub fn num_layers(&self) -> usize {
        self.w.len()
    }

    pub fn num_samples(&self) -> usize {
        self.a0.cols()
    }

    /// The activation feeding layer `l`.
    #[inline]
    pub fn input(&self, l: usize) -> &DenseMatrix {
        if l == 0 {
            &self.a0
        } else {
            &self.a[l - 1]
        }
    }

    /// Checks every block shape against `spec` and that all blocks are finite.
    pub fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        let layers = spec.num_layers();
        let n = self.num_samples();
        let bad = |what: &str| Err(Error::InvalidConfig(alloc::format!("state shape: {what}")));
        if self.w.len() != layers || self.b.len() != layers || self.z.len() != layers || self.a.len() + 1 != layers {
            return bad("block counts");
        }
        if self.a0.rows() != spec.input_dim() {
            return bad("input rows");
        }
        if self.labels.len() != n {
            return bad("label count");
        }
        for l in 0..layers {
            let (out, inp) = (spec.layer_dims[l + 1], spec.layer_dims[l]);
            if self.w[l].shape() != (out, inp) || self.b[l].len() != out || self.z[l].shape() != (out, n) {
                return bad("layer blocks");
            }
            if l + 1 < layers && self.a[l].shape() != (out, n) {
                return bad("activation blocks");
            }
        }
        check_labels(&self.labels, spec.num_classes())?;
        let finite = self.w.iter().all(DenseMatrix::is_finite)
            && self.b.iter().all(DenseVector::is_finite)
            && self.z.iter().all(DenseMatrix::is_finite)
            && self.a.iter().all(DenseMatrix::is_finite);
        if !finite {
            return Err(Error::NonFinite("network state"));
        }
        Ok(())
    }
}

/// `rho/2 * ||z - W a_prev - b 1^T||_F^2`.
pub fn penalty_phi(rho: f64, w: &DenseMatrix, a_prev: &DenseMatrix, b: &DenseVector, z: &DenseMatrix) -> Result<f64> {
    Ok(0.5 * rho * linear_residual(w, a_prev, b, z)?.frob_norm_sq())
}

/// `z - W a_prev - b 1^T`.
pub fn linear_residual(w: &DenseMatrix, a_prev: &DenseMatrix, b: &DenseVector, z: &DenseMatrix) -> Result<DenseMatrix> {
    let pre = w.matmul(a_prev)?.add_column(b)?;
    z.sub(&pre)
}

pub fn layer_residual(state: &NetworkState, l: usize) -> Result<DenseMatrix> {
    linear_residual(&state.w[l], state.input(l), &state.b[l], &state.z[l])
}

/// `sqrt(sum_l ||r_l||_F^2)`.
pub fn total_residual_norm(state: &NetworkState) -> Result<f64> {
    let mut acc = 0.0;
    for l in 0..state.num_layers() {
        acc += layer_residual(state, l)?.frob_norm_sq();
    }
    Ok(libm::sqrt(acc))
}

/// Loss on the output block plus regularization plus the linear-constraint penalty.
pub fn objective(state: &NetworkState, spec: &ProblemSpec) -> Result<f64> {
    let layers = state.num_layers();
    let mut total = spec.loss.value(&state.z[layers - 1], &state.labels)?;
    for l in 0..layers {
        total += spec.regularizer.value(&state.w[l]);
        total += penalty_phi(spec.rho, &state.w[l], state.input(l), &state.b[l], &state.z[l])?;
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NonFinite("objective"))
    }
}

/// Elementwise box `h(z) - eps <= a <= h(z) + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBounds {
    pub lower: DenseMatrix,
    pub upper: DenseMatrix,
}

impl ConstraintBounds {
    pub fn contains(&self, a: &DenseMatrix, slack: f64) -> bool {
        a.shape() == self.lower.shape()
            && a.as_slice()
                .iter()
                .zip(self.lower.as_slice().iter().zip(self.upper.as_slice()))
                .all(|(&v, (&lo, &hi))| v >= lo - slack && v <= hi + slack)
    }

    pub fn clip(&self, a: &DenseMatrix) -> DenseMatrix {
        let mut out = a.clone();
        for ((v, &lo), &hi) in out
            .as_mut_slice()
            .iter_mut()
            .zip(self.lower.as_slice())
            .zip(self.upper.as_slice())
        {
            *v = v.max(lo).min(hi);
        }
        out
    }
}

pub fn constraint_bounds(h: Activation, z: &DenseMatrix, eps: f64) -> ConstraintBounds {
    let hz = h.apply(z);
    ConstraintBounds {
        lower: hz.map(|v| v - eps),
        upper: hz.map(|v| v + eps),
    }
}

/// Plain forward pass through `weights`/`biases`; returns output logits.
pub fn forward(weights: &[DenseMatrix], biases: &[DenseVector], h: Activation, x: &DenseMatrix) -> Result<DenseMatrix> {
    let mut act = x.clone();
    let last = weights.len() - 1;
    for (l, (w, b)) in weights.iter().zip(biases).enumerate() {
        let z = w.matmul(&act)?.add_column(b)?;
        act = if l == last { z } else { h.apply(&z) };
    }
    Ok(act)
}

/// Column-wise argmax (first index on ties).
pub fn argmax_columns(logits: &DenseMatrix) -> Vec<usize> {
    (0..logits.cols())
        .map(|j| {
            let mut best = 0;
            for c in 1..logits.rows() {
                if logits[(c, j)] > logits[(best, j)] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny_state() -> (NetworkState, ProblemSpec) {
        let spec = ProblemSpec::new(vec![2, 3, 2], Activation::Relu, Loss::CrossEntropySoftmax, 1.0).unwrap();
        let a0 = DenseMatrix::from_rows(&[&[1.0, -1.0, 0.5], &[0.0, 2.0, 1.0]]);
        let w0 = DenseMatrix::from_rows(&[&[0.5, -0.2], &[0.1, 0.3], &[-0.4, 0.2]]);
        let b0 = DenseVector::from_vec(vec![0.1, 0.0, -0.1]);
        let z0 = w0.matmul(&a0).unwrap().add_column(&b0).unwrap();
        let a1 = Activation::Relu.apply(&z0);
        let w1 = DenseMatrix::from_rows(&[&[0.2, 0.1, 0.0], &[-0.3, 0.4, 0.2]]);
        let b1 = DenseVector::zeros(2);
        let z1 = w1.matmul(&a1).unwrap();
        let state = NetworkState {
            w: vec![w0, w1],
            b: vec![b0, b1],
            z: vec![z0, z1],
            a: vec![a1],
            a0,
            labels: vec![0, 1, 1],
        };
        (state, spec)
    }

    #[test]
    fn phi_examples() {
        let (s, _) = tiny_state();
        assert_eq!(penalty_phi(1.0, &s.w[0], &s.a0, &s.b[0], &s.z[0]).unwrap(), 0.0);
        let one = DenseMatrix::filled(1, 1, 1.0);
        let zero = DenseMatrix::zeros(1, 1);
        assert_eq!(penalty_phi(2.0, &zero, &zero, &DenseVector::zeros(1), &one).unwrap(), 1.0);
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = DenseMatrix::zeros(4, 5);
        let (v, g) = Loss::CrossEntropySoftmax.value_and_grad(&logits, &[0, 1, 2, 3, 0]).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-14);
        for j in 0..5 {
            let s: f64 = g.column(j).iter().sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn confident_logits_vanish() {
        let mut prev = f64::INFINITY;
        for scale in [1.0, 5.0, 20.0, 50.0] {
            let logits = DenseMatrix::from_rows(&[&[scale, 0.0], &[0.0, scale]]);
            let v = Loss::CrossEntropySoftmax.value(&logits, &[0, 1]).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-20 && prev > 0.0, "{prev}");
    }

    #[test]
    fn label_out_of_range() {
        let logits = DenseMatrix::zeros(2, 1);
        assert_eq!(
            Loss::LeastSquares.value(&logits, &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        );
    }

    #[test]
    fn activation_examples() {
        let z = DenseMatrix::from_rows(&[&[-1.0, 0.0, 2.0]]);
        assert_eq!(Activation::Relu.apply(&z).as_slice(), &[0.0, 0.0, 2.0]);
        assert_eq!(Activation::Sigmoid.eval(0.0), 0.5);
        for x in [-30.0, -2.0, 0.1, 3.0] {
            let t = Activation::Tanh.eval(x);
            assert!(t > -1.0 && t < 1.0 || (x.abs() > 15.0 && t.abs() == 1.0));
        }
    }

    #[test]
    fn bounds_examples() {
        let z = DenseMatrix::zeros(2, 2);
        let cb = constraint_bounds(Activation::Relu, &z, 0.5);
        assert!(cb.lower.as_slice().iter().all(|&v| v == -0.5));
        assert!(cb.upper.as_slice().iter().all(|&v| v == 0.5));
        let z = DenseMatrix::from_rows(&[&[-3.0, 0.7, 12.0]]);
        let cb = constraint_bounds(Activation::Relu, &z, 100.0);
        let span = cb.upper.sub(&cb.lower).unwrap();
        assert!(span.as_slice().iter().all(|&v| (v - 200.0).abs() < 1e-12));
        assert_eq!(cb.upper.as_slice(), &[100.0, 100.7, 112.0]);
    }

    #[test]
    fn preimage_is_consistent_with_activation() {
        for h in [Activation::Relu, Activation::Sigmoid, Activation::Tanh] {
            for &(lo, hi) in &[(0.2, 0.6), (-0.5, 0.3), (-0.9, -0.1), (0.7, 3.0), (-4.0, -2.0)] {
                let (zl, zu) = h.preimage(lo, hi);
                assert!(zl <= zu);
                for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
                    let z = if zl.is_finite() && zu.is_finite() {
                        zl + t * (zu - zl)
                    } else if zu.is_finite() {
                        zu - 10.0 * t
                    } else if zl.is_finite() {
                        zl + 10.0 * t
                    } else {
                        0.0
                    };
                    let v = h.eval(z);
                    let nonempty = match h {
                        Activation::Relu => hi >= 0.0,
                        Activation::Sigmoid => hi > 0.0 && lo < 1.0,
                        Activation::Tanh => hi > -1.0 && lo < 1.0,
                    };
                    if nonempty {
                        assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "{h:?} {lo} {hi} z={z} h={v}");
                    }
                }
            }
        }
    }

    #[test]
    fn objective_with_l2_adds_weight_penalty() {
        let spec = ProblemSpec::new(vec![1, 3], Activation::Relu, Loss::CrossEntropySoftmax, 1.0).unwrap();
        let state = NetworkState {
            w: vec![DenseMatrix::from_rows(&[&[0.0], &[0.0], &[0.0]])],
            b: vec![DenseVector::zeros(3)],
            z: vec![DenseMatrix::zeros(3, 2)],
            a: vec![],
            a0: DenseMatrix::from_rows(&[&[1.0, 2.0]]),
            labels: vec![0, 2],
        };
        let base = objective(&state, &spec).unwrap();
        assert!((base - 3f64.ln()).abs() < 1e-14);
        let spec2 = spec.clone().with_regularizer(Regularizer::L2(0.3)).unwrap();
        let single = NetworkState {
            w: vec![DenseMatrix::from_rows(&[&[0.0], &[0.0], &[0.0]])],
            ..state.clone()
        };
        // one nonzero weight w = 0.5 compensated in z so the penalty stays zero
        let mut single = single;
        single.w[0][(1, 0)] = 0.5;
        single.z[0] = single.w[0].matmul(&single.a0).unwrap();
        let loss_only = spec.loss.value(&single.z[0], &single.labels).unwrap();
        let got = objective(&single, &spec2).unwrap();
        assert!((got - (loss_only + 0.3 * 0.25)).abs() < 1e-14);
    }

    #[test]
    fn residual_examples() {
        let (mut s, spec) = tiny_state();
        s.validate(&spec).unwrap();
        assert_eq!(total_residual_norm(&s).unwrap(), 0.0);
        s.b[1][0] += 0.25;
        // every sample column picks up the bias perturbation
        assert!((total_residual_norm(&s).unwrap() - 0.25 * 3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn eps_schedule() {
        let (_, spec) = tiny_state();
        assert_eq!(spec.eps_at(0), 100.0);
        assert_eq!(spec.eps_at(1), 50.0);
        assert!((spec.eps_at(16) - 100.0 / 65536.0).abs() < 1e-18);
        assert_eq!(spec.eps_at(17), 0.001);
        assert_eq!(spec.eps_at(500), 0.001);
    }

    #[test]
    fn spec_validation() {
        assert!(ProblemSpec::new(vec![3], Activation::Relu, Loss::LeastSquares, 1.0).is_err());
        assert!(ProblemSpec::new(vec![3, 0, 2], Activation::Relu, Loss::LeastSquares, 1.0).is_err());
        assert!(ProblemSpec::new(vec![3, 2], Activation::Relu, Loss::LeastSquares, 0.0).is_err());
    }
}
