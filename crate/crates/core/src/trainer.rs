//! The outer training loop.
//!
//! One epoch is a single forward sweep of block updates (per layer:
//! `W -> b -> z -> a`). With acceleration enabled the sweep is wrapped as a
//! fixed-point map over the flattened blocks and driven by
//! [`AndersonAccelerator`]; the objective reported for an epoch is always
//! that of a sweep output, never of a raw extrapolated point.

use alloc::vec::Vec;

use crate::anderson::{AAConfig, AndersonAccelerator, Evaluation, FixedPointMap, SafeguardRecord};
use crate::data::{rng, uniform01, Dataset};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::model::{argmax_columns, forward, objective, total_residual_norm, NetworkState, ProblemSpec};
use crate::subproblems::{self, FistaConfig, SurrogateParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` runs plain alternating minimization.
    pub aa: Option<AAConfig>,
    pub seed: u64,
    pub fista: FistaConfig,
    /// Metrics are kept for every `record_every`-th epoch and the last one.
    pub record_every: usize,
    /// Initial backtracking scalar for every `theta_l` and `tau_l`.
    pub surrogate_init: f64,
    /// Quantity the accelerated run must decrease to record a point.
    pub gate: AcceptanceGate,
}

/// Merit value behind the record-or-revert test of the accelerated loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcceptanceGate {
    /// Relaxed objective of the sweep output. Plain sweeps never increase it.
    #[default]
    Objective,
    /// `sqrt(sum_l ||z_l - W_l a_{l-1} - b_l||^2)` of the sweep output.
    ConstraintResidual,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            aa: Some(AAConfig::default()),
            seed: 0,
            fista: FistaConfig::default(),
            record_every: 1,
            surrogate_init: 1.0,
            gate: AcceptanceGate::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.record_every == 0 {
            return Err(Error::InvalidConfig("epochs and record_every must be at least 1".into()));
        }
        if !(self.surrogate_init > 0.0) {
            return Err(Error::InvalidConfig("surrogate_init must be positive".into()));
        }
        if let Some(aa) = &self.aa {
            aa.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub objective: f64,
    pub residual_norm: f64,
    pub train_acc: f64,
    /// `NaN` when no test set was supplied.
    pub test_acc: f64,
    pub wall_ms: f64,
    pub aa_accepted: bool,
    pub eps: f64,
}

/// Which block an epoch sweep just replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    W,
    B,
    Z,
    A,
}

/// Uniform Glorot initialization of `W`, zero biases, and a feasible,
/// constraint-consistent `z = W a + b`, `a = h(z)`.
pub fn init_state(spec: &ProblemSpec, data: &Dataset, seed: u64) -> Result<NetworkState> {
    spec.validate()?;
    if data.dim() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            op: "init_state",
            lhs: (spec.input_dim(), 0),
            rhs: (data.dim(), data.len()),
        });
    }
    if data.num_classes > spec.num_classes() {
        return Err(Error::InvalidConfig("dataset has more classes than output units".into()));
    }
    let (w, b) = init_weights(spec, seed);
    let layers = spec.num_layers();
    let mut z = Vec::with_capacity(layers);
    let mut a = Vec::with_capacity(layers - 1);
    let mut act = data.features.clone();
    for l in 0..layers {
        let zl = w[l].matmul(&act)?.add_column(&b[l])?;
        if l + 1 < layers {
            act = spec.activation.apply(&zl);
            a.push(act.clone());
        }
        z.push(zl);
    }
    let state = NetworkState {
        w,
        b,
        z,
        a,
        a0: data.features.clone(),
        labels: data.labels.clone(),
    };
    state.validate(spec)?;
    Ok(state)
}

/// The weight/bias part of [`init_state`], shared with the baselines.
pub fn init_weights(spec: &ProblemSpec, seed: u64) -> (Vec<DenseMatrix>, Vec<DenseVector>) {
    let mut rng = rng(seed);
    let mut w = Vec::new();
    let mut b = Vec::new();
    for l in 0..spec.num_layers() {
        let (inp, out) = (spec.layer_dims[l], spec.layer_dims[l + 1]);
        let s = libm::sqrt(6.0 / (inp + out) as f64);
        w.push(DenseMatrix::from_fn(out, inp, |_, _| s * (2.0 * uniform01(&mut rng) - 1.0)));
        b.push(DenseVector::zeros(out));
    }
    (w, b)
}

/// FNV-1a over the bit patterns of all weights and biases.
pub fn weights_checksum(w: &[DenseMatrix], b: &[DenseVector]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let values = w
        .iter()
        .flat_map(|m| m.as_slice().iter())
        .chain(b.iter().flat_map(|v| v.as_slice().iter()));
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Length of the flattened iterate.
pub fn flat_len(spec: &ProblemSpec, n: usize) -> usize {
    let layers = spec.num_layers();
    (0..layers)
        .map(|l| {
            let (inp, out) = (spec.layer_dims[l], spec.layer_dims[l + 1]);
            let hidden = if l + 1 < layers { out * n } else { 0 };
            out * inp + out + out * n + hidden
        })
        .sum()
}

/// Layout: `W_1, b_1, z_1, a_1, ..., W_L, b_L, z_L`, each row-major.
pub fn flatten(state: &NetworkState) -> DenseVector {
    let mut v = Vec::new();
    let layers = state.num_layers();
    for l in 0..layers {
        v.extend_from_slice(state.w[l].as_slice());
        v.extend_from_slice(state.b[l].as_slice());
        v.extend_from_slice(state.z[l].as_slice());
        if l + 1 < layers {
            v.extend_from_slice(state.a[l].as_slice());
        }
    }
    DenseVector::from_vec(v)
}

/// Inverse of [`flatten`]; the input features and labels come from `template`.
pub fn unflatten(v: &DenseVector, spec: &ProblemSpec, template: &NetworkState) -> Result<NetworkState> {
    let n = template.num_samples();
    let expected = flat_len(spec, n);
    if v.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: v.len(),
        });
    }
    let data = v.as_slice();
    let mut pos = 0;
    let mut take = |rows: usize, cols: usize| {
        let m = DenseMatrix::from_fn(rows, cols, |i, j| data[pos + i * cols + j]);
        pos += rows * cols;
        m
    };
    let layers = spec.num_layers();
    let mut state = NetworkState {
        w: Vec::with_capacity(layers),
        b: Vec::with_capacity(layers),
        z: Vec::with_capacity(layers),
        a: Vec::with_capacity(layers - 1),
        a0: template.a0.clone(),
        labels: template.labels.clone(),
    };
    for l in 0..layers {
        let (inp, out) = (spec.layer_dims[l], spec.layer_dims[l + 1]);
        state.w.push(take(out, inp));
        state.b.push(DenseVector::from_vec(take(out, 1).into_vec()));
        state.z.push(take(out, n));
        if l + 1 < layers {
            state.a.push(take(out, n));
        }
    }
    Ok(state)
}

/// One forward sweep of block updates at tolerance `eps`. `observe` sees the
/// state after every block replacement.
pub fn epoch_map_observed(
    mut state: NetworkState,
    spec: &ProblemSpec,
    surrogates: &mut SurrogateParams,
    eps: f64,
    fista: &FistaConfig,
    mut observe: impl FnMut(Block, usize, &NetworkState),
) -> Result<NetworkState> {
    let layers = state.num_layers();
    for l in 0..layers {
        let theta_start = SurrogateParams::warm_start(surrogates.theta[l]);
        let (w, theta) = subproblems::update_w(&state, spec, surrogates, l, theta_start)?;
        state.w[l] = w;
        surrogates.theta[l] = theta;
        observe(Block::W, l, &state);

        state.b[l] = subproblems::update_b(&state, l)?;
        observe(Block::B, l, &state);

        state.z[l] = if l + 1 < layers {
            subproblems::update_z_hidden(&state, spec, l, eps)?
        } else {
            subproblems::update_z_last(&state, spec, fista)?
        };
        observe(Block::Z, l, &state);

        if l + 1 < layers {
            let tau_start = SurrogateParams::warm_start(surrogates.tau[l]);
            let (a, tau) = subproblems::update_a(&state, spec, surrogates, l, tau_start, eps)?;
            state.a[l] = a;
            surrogates.tau[l] = tau;
            observe(Block::A, l, &state);
        }
    }
    Ok(state)
}

pub fn epoch_map(state: NetworkState, spec: &ProblemSpec, surrogates: &mut SurrogateParams, eps: f64, fista: &FistaConfig) -> Result<NetworkState> {
    epoch_map_observed(state, spec, surrogates, eps, fista, |_, _, _| {})
}

/// The epoch sweep as a fixed-point map over flattened iterates. Each
/// application advances the tolerance schedule by one epoch.
pub struct EpochMap<'a> {
    spec: &'a ProblemSpec,
    template: NetworkState,
    pub surrogates: SurrogateParams,
    fista: FistaConfig,
    gate: AcceptanceGate,
    epoch: usize,
}

impl<'a> EpochMap<'a> {
    pub fn new(spec: &'a ProblemSpec, template: NetworkState, surrogates: SurrogateParams, fista: FistaConfig, gate: AcceptanceGate) -> Self {
        Self {
            spec,
            template,
            surrogates,
            fista,
            gate,
            epoch: 0,
        }
    }

    /// Epoch index the next application runs at.
    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

impl FixedPointMap for EpochMap<'_> {
    fn dimension(&self) -> usize {
        flat_len(self.spec, self.template.num_samples())
    }

    fn apply(&mut self, x: &DenseVector) -> Result<Evaluation> {
        let state = unflatten(x, self.spec, &self.template)?;
        let eps = self.spec.eps_at(self.epoch);
        self.epoch += 1;
        let out = epoch_map(state, self.spec, &mut self.surrogates, eps, &self.fista)?;
        let metric = match self.gate {
            AcceptanceGate::Objective => objective(&out, self.spec)?,
            AcceptanceGate::ConstraintResidual => total_residual_norm(&out)?,
        };
        Ok(Evaluation {
            image: flatten(&out),
            gate_metric: Some(metric),
        })
    }
}

/// Fraction of samples whose forward-pass argmax matches the label. Only
/// the `W` and `b` blocks are used.
pub fn evaluate(state: &NetworkState, spec: &ProblemSpec, features: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    accuracy(&state.w, &state.b, spec, features, labels)
}

pub fn accuracy(w: &[DenseMatrix], b: &[DenseVector], spec: &ProblemSpec, features: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(f64::NAN);
    }
    let logits = forward(w, b, spec.activation, features)?;
    let pred = argmax_columns(&logits);
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: NetworkState,
    pub metrics: Vec<EpochMetrics>,
    /// Accepted accelerated steps with the bound they were checked against.
    pub safeguard_log: Vec<SafeguardRecord>,
    /// `||F(x_0)||` when acceleration ran.
    pub u_bar: Option<f64>,
    pub init_checksum: u64,
    /// Objective after every epoch, regardless of `record_every`.
    pub objective_trace: Vec<f64>,
}

/// [`train_with_clock`] without timing (all `wall_ms` are zero).
pub fn train(train: &Dataset, test: Option<&Dataset>, spec: &ProblemSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_clock(train, test, spec, config, &|| 0.0)
}

/// Runs `config.epochs` epochs. `clock` returns milliseconds from an
/// arbitrary origin and is only used for the `wall_ms` column.
pub fn train_with_clock(
    train: &Dataset,
    test: Option<&Dataset>,
    spec: &ProblemSpec,
    config: &TrainConfig,
    clock: &dyn Fn() -> f64,
) -> Result<TrainOutcome> {
    config.validate()?;
    train.validate()?;
    let state0 = init_state(spec, train, config.seed)?;
    let init_checksum = weights_checksum(&state0.w, &state0.b);
    let surrogates = SurrogateParams::new(spec.num_layers(), config.surrogate_init);
    let mut recorder = Recorder::new(spec, train, test, config);

    match &config.aa {
        None => {
            let mut surrogates = surrogates;
            let mut state = state0;
            for epoch in 0..config.epochs {
                let t0 = clock();
                let eps = spec.eps_at(epoch);
                state = epoch_map(state, spec, &mut surrogates, eps, &config.fista)?;
                recorder.record(epoch, &state, clock() - t0, false, eps)?;
            }
            Ok(recorder.finish(state, Vec::new(), None, init_checksum))
        }
        Some(aa) => {
            let mut map = EpochMap::new(spec, state0.clone(), surrogates, config.fista, config.gate);
            let t0 = clock();
            let (mut engine, eval0) = AndersonAccelerator::new(*aa, flatten(&state0), &mut map)?;
            let mut reported = unflatten(&eval0.image, spec, &state0)?;
            recorder.record(0, &reported, clock() - t0, false, spec.eps_at(0))?;
            for epoch in 1..config.epochs {
                let t0 = clock();
                let outcome = engine.step(&mut map)?;
                if outcome.recorded {
                    reported = unflatten(&outcome.evaluation.image, spec, &state0)?;
                }
                recorder.record(epoch, &reported, clock() - t0, outcome.aa_accepted, spec.eps_at(epoch))?;
            }
            let log = engine.safeguard_log().to_vec();
            Ok(recorder.finish(reported, log, Some(engine.u_bar()), init_checksum))
        }
    }
}

struct Recorder<'a> {
    spec: &'a ProblemSpec,
    train: &'a Dataset,
    test: Option<&'a Dataset>,
    every: usize,
    last: usize,
    metrics: Vec<EpochMetrics>,
    trace: Vec<f64>,
}

impl<'a> Recorder<'a> {
    fn new(spec: &'a ProblemSpec, train: &'a Dataset, test: Option<&'a Dataset>, config: &TrainConfig) -> Self {
        Self {
            spec,
            train,
            test,
            every: config.record_every,
            last: config.epochs - 1,
            metrics: Vec::new(),
            trace: Vec::with_capacity(config.epochs),
        }
    }

    fn record(&mut self, epoch: usize, state: &NetworkState, wall_ms: f64, aa_accepted: bool, eps: f64) -> Result<()> {
        let obj = objective(state, self.spec).map_err(|_| Error::ObjectiveDiverged { epoch })?;
        self.trace.push(obj);
        if !epoch.is_multiple_of(self.every) && epoch != self.last {
            return Ok(());
        }
        let train_acc = evaluate(state, self.spec, &self.train.features, &self.train.labels)?;
        let test_acc = match self.test {
            Some(t) => evaluate(state, self.spec, &t.features, &t.labels)?,
            None => f64::NAN,
        };
        self.metrics.push(EpochMetrics {
            epoch,
            objective: obj,
            residual_norm: total_residual_norm(state)?,
            train_acc,
            test_acc,
            wall_ms,
            aa_accepted,
            eps,
        });
        Ok(())
    }

    fn finish(self, state: NetworkState, safeguard_log: Vec<SafeguardRecord>, u_bar: Option<f64>, init_checksum: u64) -> TrainOutcome {
        TrainOutcome {
            state,
            metrics: self.metrics,
            safeguard_log,
            u_bar,
            init_checksum,
            objective_trace: self.trace,
        }
    }
}
