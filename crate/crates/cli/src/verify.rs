//! Small-scale invariant checks run by `aadladmm verify`.

use aadladmm_core::anderson::{AAConfig, AndersonAccelerator};
use aadladmm_core::baselines::{gd_train, BaselineConfig, BaselineKind};
use aadladmm_core::data::{rng, split, synth_blobs, uniform01, Dataset};
use aadladmm_core::linalg::fd_gradient_check;
use aadladmm_core::model::{constraint_bounds, objective, penalty_phi, Activation, Loss, NetworkState, ProblemSpec, Regularizer};
use aadladmm_core::subproblems::{grad_a, grad_b, grad_w, grad_z, prox_weight, FistaConfig, SurrogateParams};
use aadladmm_core::trainer::{epoch_map, epoch_map_observed, init_state, train, TrainConfig};
use aadladmm_core::{DenseMatrix, DenseVector};
use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;

use crate::io::{load_csv, write_csv};

type Check = fn(bool) -> Result<(), String>;

/// Name and body of every check. The flag asks a check to corrupt its own
/// computation so the harness can be shown to report failures.
pub const CHECKS: &[(&str, Check)] = &[
    ("penalty gradients match central differences", penalty_gradients),
    ("loss gradients match central differences", loss_gradients),
    ("scalar weight prox matches golden-section search", scalar_prox),
    ("every block update is a descent step", block_descent),
    ("hidden activations stay inside the eps band", feasibility),
    ("plain training objective is non-increasing", monotone),
    ("eps column follows the halving schedule", eps_schedule),
    ("inverse-Jacobian norms stay within their bounds", jacobian_bounds),
    ("accelerated contraction beats Picard", affine_speedup),
    ("safeguard log satisfies its bound", safeguard_log),
    ("gradient descent starts from the relaxed objective", baseline_consistency),
    ("split partitions the samples", split_partition),
    ("dataset CSV round-trips", csv_roundtrip),
    ("identical configs give identical metrics", determinism),
];

/// Runs every check, printing one line each. Returns the number of failures.
pub fn run(inject_fault: bool) -> usize {
    let mut failures = 0;
    for (i, (name, check)) in CHECKS.iter().enumerate() {
        // the fault lands in the first check only, so the rest still run clean
        match check(inject_fault && i == 0) {
            Ok(()) => println!("PASS {name}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    failures
}

fn ensure(ok: bool, detail: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(detail())
    }
}

fn core<T>(r: aadladmm_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform01(r)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| uniform(r, -1.0, 1.0))
}

fn benchmark(seed: u64) -> (Dataset, ProblemSpec) {
    let ds = synth_blobs(20, 4, 2, 0.3, seed).expect("valid parameters");
    let spec = ProblemSpec::new(vec![4, 6, 5, 2], Activation::Relu, Loss::CrossEntropySoftmax, 1e-2).expect("valid spec");
    (ds, spec)
}

/// Random state that is not feasible, so every penalty gradient is nonzero.
fn perturbed_state(seed: u64) -> Result<(NetworkState, ProblemSpec), String> {
    let ds = synth_blobs(4, 3, 2, 0.5, seed).map_err(|e| e.to_string())?;
    let spec = core(ProblemSpec::new(vec![3, 4, 3, 2], Activation::Tanh, Loss::CrossEntropySoftmax, 0.7))?;
    let mut s = core(init_state(&spec, &ds, seed))?;
    let mut r = rng(seed ^ 0x5eed);
    for z in &mut s.z {
        *z = z.map(|v| v + 0.5).add(&random_matrix(&mut r, z.rows(), z.cols())).expect("same shape");
    }
    for a in &mut s.a {
        *a = random_matrix(&mut r, a.rows(), a.cols());
    }
    Ok((s, spec))
}

fn matrix_like(m: &DenseMatrix, x: &[f64]) -> DenseMatrix {
    DenseMatrix::new(m.rows(), m.cols(), x.to_vec()).expect("same length")
}

fn penalty_gradients(fault: bool) -> Result<(), String> {
    let tol = 1e-5;
    for seed in 0..5 {
        let (s, spec) = perturbed_state(seed)?;
        let rho = spec.rho;
        for l in 0..s.num_layers() {
            let phi = |w: &DenseMatrix, a: &DenseMatrix, b: &DenseVector, z: &DenseMatrix| penalty_phi(rho, w, a, b, z).expect("shapes");
            let (gw, _) = core(grad_w(&s, rho, l))?;
            let mut gw = gw.into_vec();
            if fault {
                gw[0] += 1.0;
            }
            let err = core(fd_gradient_check(
                |x| phi(&matrix_like(&s.w[l], x), s.input(l), &s.b[l], &s.z[l]),
                |_| gw,
                s.w[l].as_slice(),
                1e-6,
            ))?;
            ensure(err <= tol, || format!("W_{l} seed {seed}: {err:e}"))?;

            let gb = core(grad_b(&s, rho, l))?.into_vec();
            let err = core(fd_gradient_check(
                |x| phi(&s.w[l], s.input(l), &DenseVector::from_slice(x), &s.z[l]),
                |_| gb,
                s.b[l].as_slice(),
                1e-6,
            ))?;
            ensure(err <= tol, || format!("b_{l} seed {seed}: {err:e}"))?;

            let gz = core(grad_z(&s, rho, l))?.into_vec();
            let err = core(fd_gradient_check(
                |x| phi(&s.w[l], s.input(l), &s.b[l], &matrix_like(&s.z[l], x)),
                |_| gz,
                s.z[l].as_slice(),
                1e-6,
            ))?;
            ensure(err <= tol, || format!("z_{l} seed {seed}: {err:e}"))?;

            if l + 1 < s.num_layers() {
                let ga = core(grad_a(&s, rho, l))?.0.into_vec();
                let err = core(fd_gradient_check(
                    |x| phi(&s.w[l + 1], &matrix_like(&s.a[l], x), &s.b[l + 1], &s.z[l + 1]),
                    |_| ga,
                    s.a[l].as_slice(),
                    1e-6,
                ))?;
                ensure(err <= tol, || format!("a_{l} seed {seed}: {err:e}"))?;
            }
        }
    }
    Ok(())
}

fn loss_gradients(_: bool) -> Result<(), String> {
    let mut r = rng(11);
    for trial in 0..10 {
        let logits = random_matrix(&mut r, 3, 5).scale(3.0);
        let labels: Vec<usize> = (0..5).map(|j| (j + trial) % 3).collect();
        for loss in [Loss::CrossEntropySoftmax, Loss::LeastSquares] {
            let (_, g) = core(loss.value_and_grad(&logits, &labels))?;
            let err = core(fd_gradient_check(
                |x| loss.value(&matrix_like(&logits, x), &labels).expect("valid"),
                |_| g.into_vec(),
                logits.as_slice(),
                1e-6,
            ))?;
            ensure(err <= 1e-5, || format!("{loss:?} trial {trial}: {err:e}"))?;
        }
    }
    Ok(())
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-12 {
        let a = hi - inv_phi * (hi - lo);
        let b = lo + inv_phi * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

fn scalar_prox(_: bool) -> Result<(), String> {
    let mut r = rng(12);
    for trial in 0..100 {
        let (anchor, grad) = (uniform(&mut r, -3.0, 3.0), uniform(&mut r, -3.0, 3.0));
        let theta = uniform(&mut r, 0.1, 5.0);
        let lambda = uniform(&mut r, 0.0, 2.0);
        for reg in [Regularizer::L1(lambda), Regularizer::L2(lambda)] {
            let omega = |w: f64| match reg {
                Regularizer::L1(l) => l * w.abs(),
                Regularizer::L2(l) => l * w * w,
                Regularizer::None => 0.0,
            };
            let f = |w: f64| grad * (w - anchor) + 0.5 * theta * (w - anchor).powi(2) + omega(w);
            let radius = anchor.abs() + (grad.abs() + lambda) / theta + 1.0;
            let oracle = golden_section(f, -radius, radius);
            let got = prox_weight(&DenseMatrix::filled(1, 1, anchor), &DenseMatrix::filled(1, 1, grad), theta, reg)[(0, 0)];
            ensure((got - oracle).abs() <= 1e-6, || format!("trial {trial} {reg:?}: {got} vs {oracle}"))?;
        }
    }
    Ok(())
}

fn block_descent(_: bool) -> Result<(), String> {
    let (ds, spec) = benchmark(1);
    for eps in [10.0, 0.01] {
        let mut state = core(init_state(&spec, &ds, 1))?;
        let mut sur = SurrogateParams::new(spec.num_layers(), 1.0);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..10 {
            let mut last = core(objective(&state, &spec))?;
            state = core(epoch_map_observed(state, &spec, &mut sur, eps, &FistaConfig::default(), |_, _, s| {
                let now = objective(s, &spec).expect("valid state");
                worst = worst.max(now - last);
                last = now;
            }))?;
        }
        ensure(worst <= 1e-9, || format!("eps {eps}: increase {worst:e}"))?;
    }
    Ok(())
}

fn feasibility(_: bool) -> Result<(), String> {
    let (ds, spec) = benchmark(2);
    let mut state = core(init_state(&spec, &ds, 2))?;
    let mut sur = SurrogateParams::new(spec.num_layers(), 1.0);
    for k in 0..25 {
        let eps = spec.eps_at(k);
        state = core(epoch_map(state, &spec, &mut sur, eps, &FistaConfig::default()))?;
        for (l, a) in state.a.iter().enumerate() {
            let band = constraint_bounds(spec.activation, &state.z[l], eps);
            ensure(band.contains(a, 1e-9), || format!("epoch {k} layer {l}"))?;
        }
    }
    Ok(())
}

fn monotone(_: bool) -> Result<(), String> {
    // the shrinking band can push the previous z outside the feasible set,
    // so this holds for the reference setup rather than for any rho
    for seed in 0..2 {
        let ds = synth_blobs(100, 10, 2, 0.3, seed).map_err(|e| e.to_string())?;
        let spec = core(ProblemSpec::new(vec![10, 16, 16, 2], Activation::Relu, Loss::CrossEntropySoftmax, 1e-4))?;
        let cfg = TrainConfig {
            epochs: 50,
            aa: None,
            seed,
            ..TrainConfig::default()
        };
        let out = core(train(&ds, None, &spec, &cfg))?;
        for (k, w) in out.objective_trace.windows(2).enumerate() {
            ensure(w[1] <= w[0] + 1e-9, || format!("seed {seed} epoch {}: {} -> {}", k + 1, w[0], w[1]))?;
        }
    }
    Ok(())
}

fn eps_schedule(_: bool) -> Result<(), String> {
    let (ds, spec) = benchmark(0);
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let out = core(train(&ds, None, &spec, &cfg))?;
    for m in &out.metrics {
        let expect = (100.0 / 2f64.powi(m.epoch as i32)).max(0.001);
        ensure(m.eps == expect, || format!("epoch {}: {} vs {expect}", m.epoch, m.eps))?;
    }
    Ok(())
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Map `x -> A x + c + bend * sin(x)` with diagonal `A` of spectral radius `radius`.
fn bent_contraction(r: &mut ChaCha8Rng, n: usize, radius: f64, bend: f64) -> (usize, impl FnMut(&DenseVector) -> DenseVector) {
    let mut diag: Vec<f64> = (0..n).map(|_| uniform(r, -radius, radius)).collect();
    diag[0] = radius;
    let c: Vec<f64> = (0..n).map(|_| uniform(r, -1.0, 1.0)).collect();
    (n, move |x: &DenseVector| DenseVector::from_vec((0..n).map(|i| diag[i] * x[i] + c[i] + bend * x[i].sin()).collect()))
}

fn jacobian_bounds(_: bool) -> Result<(), String> {
    let mut r = rng(13);
    for problem in 0..10 {
        let n = 3 + problem % 8;
        let cfg = AAConfig {
            m: 1 + problem % 4,
            ..AAConfig::default()
        };
        let radius = uniform(&mut r, 0.5, 0.95);
        let mut map = bent_contraction(&mut r, n, radius, 0.2);
        let x0 = DenseVector::from_vec((0..n).map(|_| uniform(&mut r, -5.0, 5.0)).collect());
        let (mut engine, _) = core(AndersonAccelerator::new(cfg, x0, &mut map))?;
        for it in 0..30 {
            if core(engine.step(&mut map))?.residual_norm < 1e-13 {
                break;
            }
            let h = engine.jacobian().materialize(n);
            let h = DMatrix::from_fn(n, n, |i, j| h[(i, j)]);
            let b = h.clone().try_inverse().ok_or_else(|| format!("problem {problem} iteration {it}: H singular"))?;
            let (nb, nh) = (spectral_norm(&b), spectral_norm(&h));
            ensure(nb <= cfg.jacobian_norm_bound(), || format!("problem {problem} iteration {it}: ||B|| = {nb}"))?;
            ensure(nh <= cfg.inverse_norm_bound(n), || format!("problem {problem} iteration {it}: ||H|| = {nh}"))?;
        }
    }
    Ok(())
}

fn iterations_to(mut map: impl FnMut(&DenseVector) -> DenseVector, x0: &DenseVector, n: usize, aa: bool) -> Result<usize, String> {
    let tol = 1e-10;
    if aa {
        let mut fp = (n, map);
        let (mut engine, e0) = core(AndersonAccelerator::new(AAConfig::default(), x0.clone(), &mut fp))?;
        if e0.image.sub(x0).norm() <= tol {
            return Ok(0);
        }
        for k in 1..5000 {
            if core(engine.step(&mut fp))?.residual_norm <= tol {
                return Ok(k);
            }
        }
    } else {
        let mut x = x0.clone();
        for k in 0..5000 {
            let gx = map(&x);
            if gx.sub(&x).norm() <= tol {
                return Ok(k);
            }
            x = gx;
        }
    }
    Err("no convergence in 5000 iterations".into())
}

fn affine_speedup(_: bool) -> Result<(), String> {
    let mut r = rng(14);
    for seed in 0..5 {
        let mut diag: Vec<f64> = (0..5).map(|_| uniform(&mut r, -0.9, 0.9)).collect();
        diag[0] = 0.9;
        let c: Vec<f64> = (0..5).map(|_| uniform(&mut r, -1.0, 1.0)).collect();
        let x0 = DenseVector::from_vec((0..5).map(|_| uniform(&mut r, -1.0, 1.0)).collect());
        let map = |x: &DenseVector| DenseVector::from_vec((0..5).map(|i| diag[i] * x[i] + c[i]).collect());
        let (aa, picard) = (iterations_to(map, &x0, 5, true)?, iterations_to(map, &x0, 5, false)?);
        ensure(aa < picard, || format!("seed {seed}: AA {aa} vs Picard {picard}"))?;
    }
    Ok(())
}

fn safeguard_log(_: bool) -> Result<(), String> {
    let (ds, spec) = benchmark(3);
    let cfg = TrainConfig {
        epochs: 40,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = core(train(&ds, None, &spec, &cfg))?;
    let (aa, u_bar) = (cfg.aa.expect("enabled"), out.u_bar.ok_or("no u_bar recorded")?);
    for (i, rec) in out.safeguard_log.iter().enumerate() {
        ensure(rec.n_aa == i && rec.bound == aa.safeguard_bound(u_bar, i), || format!("record {i} malformed"))?;
        ensure(rec.residual_norm <= rec.bound, || format!("record {i}: {} > {}", rec.residual_norm, rec.bound))?;
    }
    Ok(())
}

fn baseline_consistency(_: bool) -> Result<(), String> {
    let (ds, spec) = benchmark(4);
    let cfg = BaselineConfig {
        lr: 0.0,
        ..BaselineConfig::new(BaselineKind::Gd, 1, 4)
    };
    let out = core(gd_train(&ds, None, &spec, &cfg))?;
    let f0 = core(objective(&core(init_state(&spec, &ds, 4))?, &spec))?;
    let got = out.metrics[0].objective;
    ensure((got - f0).abs() <= 1e-12, || format!("{got} vs {f0}"))
}

fn split_partition(_: bool) -> Result<(), String> {
    let base = synth_blobs(15, 2, 3, 0.5, 5).map_err(|e| e.to_string())?;
    let mut f = base.features.clone();
    for j in 0..base.len() {
        f[(0, j)] = j as f64;
    }
    let ds = core(Dataset::new(f, base.labels.clone(), 3, "tagged"))?;
    let (tr, te) = core(split(&ds, 0.8, 5))?;
    let mut seen: Vec<usize> = tr.features.row(0).iter().chain(te.features.row(0)).map(|&v| v as usize).collect();
    seen.sort_unstable();
    ensure(seen == (0..ds.len()).collect::<Vec<_>>(), || "not a partition".into())?;
    ensure(core(split(&ds, 0.8, 5))? == (tr, te), || "not deterministic".into())
}

fn csv_roundtrip(_: bool) -> Result<(), String> {
    let ds = synth_blobs(7, 5, 3, 1.3, 6).map_err(|e| e.to_string())?;
    let path = std::env::temp_dir().join(format!("aadladmm-verify-{}.csv", std::process::id()));
    write_csv(&path, &ds).map_err(|e| e.to_string())?;
    let back = load_csv(&path, false);
    let _ = std::fs::remove_file(&path);
    let back = back.map_err(|e| e.to_string())?;
    ensure(back.labels == ds.labels && back.num_classes == ds.num_classes, || "labels differ".into())?;
    let err = back.features.sub(&ds.features).map_err(|e| e.to_string())?.as_slice().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    ensure(err <= 1e-12, || format!("feature error {err:e}"))
}

fn determinism(_: bool) -> Result<(), String> {
    let (ds, spec) = benchmark(5);
    let cfg = TrainConfig {
        epochs: 15,
        seed: 5,
        ..TrainConfig::default()
    };
    let a = core(train(&ds, None, &spec, &cfg))?;
    let b = core(train(&ds, None, &spec, &cfg))?;
    let same = a.objective_trace.iter().zip(&b.objective_trace).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(same && a.state == b.state, || "runs differ".into())
}
