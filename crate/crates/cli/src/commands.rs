//! `train`, `compare` and `sweep`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use aadladmm_core::baselines::{adam_train, gd_train, plain_altmin_train, BaselineConfig, BaselineKind};
use aadladmm_core::data::{normalize_features, split, synth_blobs, Dataset};
use aadladmm_core::model::ProblemSpec;
use aadladmm_core::trainer::{train, train_with_clock, EpochMetrics, TrainOutcome};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DataSource, MetricsFormat, RunConfig};
use crate::error::{CliError, Result};
use crate::io::{fmt_f64, load_csv, write_json, write_metrics_csv, write_metrics_jsonl, write_table};
use crate::manifest::RunManifest;

/// Train/test split and the network shape for a run.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub spec: ProblemSpec,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let ds = match &cfg.data {
        DataSource::Synth => synth_blobs(cfg.synth_per_class, cfg.synth_dim, cfg.synth_classes, cfg.synth_spread, cfg.data_seed)?,
        DataSource::Csv(path) => load_csv(path, cfg.header)?,
    };
    let ds = normalize_features(&ds, cfg.normalize);
    let (train, test) = split(&ds, cfg.train_fraction, cfg.split_seed)?;
    let mut dims = vec![ds.dim()];
    dims.extend(cfg.hidden_layers());
    dims.push(ds.num_classes);
    let spec = ProblemSpec::new(dims, cfg.activation, cfg.loss, cfg.rho)?.with_regularizer(cfg.regularizer)?;
    Ok(Prepared { train, test, spec })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Runs alternating minimization with or without acceleration. With
/// `timing` off every `wall_ms` is zero, which keeps reruns byte-identical.
pub fn run_altmin(p: &Prepared, cfg: &RunConfig, aa: bool) -> Result<TrainOutcome> {
    let tc = cfg.train_config(aa);
    if cfg.timing {
        let start = Instant::now();
        Ok(train_with_clock(&p.train, Some(&p.test), &p.spec, &tc, &|| start.elapsed().as_secs_f64() * 1e3)?)
    } else if aa {
        Ok(train(&p.train, Some(&p.test), &p.spec, &tc)?)
    } else {
        Ok(plain_altmin_train(&p.train, Some(&p.test), &p.spec, &tc)?)
    }
}

/// Optimizer names accepted by `compare`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Aa,
    Plain,
    Gd,
    Adam,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Aa => "aa",
            Optimizer::Plain => "plain",
            Optimizer::Gd => "gd",
            Optimizer::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "aa" => Ok(Optimizer::Aa),
            "plain" => Ok(Optimizer::Plain),
            "gd" => Ok(Optimizer::Gd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(CliError::Config(format!("unknown optimizer {other:?} (expected aa, plain, gd or adam)"))),
        }
    }
}

pub struct OptimizerRun {
    pub metrics: Vec<EpochMetrics>,
    pub init_checksum: u64,
}

pub fn run_optimizer(p: &Prepared, cfg: &RunConfig, kind: Optimizer) -> Result<OptimizerRun> {
    let baseline = |k: BaselineKind, lr: f64| BaselineConfig {
        lr,
        record_every: cfg.record_every,
        ..BaselineConfig::new(k, cfg.epochs, cfg.seed)
    };
    Ok(match kind {
        Optimizer::Aa | Optimizer::Plain => {
            let out = run_altmin(p, cfg, kind == Optimizer::Aa)?;
            OptimizerRun {
                metrics: out.metrics,
                init_checksum: out.init_checksum,
            }
        }
        Optimizer::Gd => {
            let out = gd_train(&p.train, Some(&p.test), &p.spec, &baseline(BaselineKind::Gd, cfg.lr_gd))?;
            OptimizerRun {
                metrics: out.metrics,
                init_checksum: out.init_checksum,
            }
        }
        Optimizer::Adam => {
            let out = adam_train(&p.train, Some(&p.test), &p.spec, &baseline(BaselineKind::Adam, cfg.lr_adam))?;
            OptimizerRun {
                metrics: out.metrics,
                init_checksum: out.init_checksum,
            }
        }
    })
}

fn metrics_file(stem: &str, format: MetricsFormat) -> String {
    match format {
        MetricsFormat::Csv => format!("{stem}.csv"),
        MetricsFormat::JsonLines => format!("{stem}.jsonl"),
    }
}

fn write_metrics(path: &Path, metrics: &[EpochMetrics], format: MetricsFormat) -> Result<()> {
    match format {
        MetricsFormat::Csv => write_metrics_csv(path, metrics),
        MetricsFormat::JsonLines => write_metrics_jsonl(path, metrics),
    }
}

#[derive(Serialize)]
struct TrainSummary {
    dataset: String,
    layer_dims: Vec<usize>,
    train_samples: usize,
    test_samples: usize,
    epochs: usize,
    acceleration: bool,
    init_checksum: String,
    final_objective: f64,
    final_residual: f64,
    final_train_acc: f64,
    final_test_acc: f64,
    accelerated_steps: usize,
    u_bar: Option<f64>,
    weight_norms: Vec<f64>,
}

pub fn checksum_hex(c: u64) -> String {
    format!("{c:016x}")
}

/// Writes the metrics stream, `summary.json`, the safeguard log when
/// acceleration ran, and the manifest. Returns the run directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let p = prepare(cfg)?;
    let dir = cfg.out_dir();
    create_dir(&dir)?;
    let mut manifest = RunManifest::start("train", cfg.snapshot(), &p.train.name, cfg.seed);

    let out = run_altmin(&p, cfg, cfg.aa)?;
    let metrics_name = metrics_file("metrics", cfg.format);
    write_metrics(&dir.join(&metrics_name), &out.metrics, cfg.format)?;
    manifest.outputs.push(metrics_name.into());

    if cfg.aa {
        let rows: Vec<Vec<String>> = out
            .safeguard_log
            .iter()
            .map(|r| vec![r.iteration.to_string(), r.n_aa.to_string(), fmt_f64(r.residual_norm), fmt_f64(r.bound)])
            .collect();
        let header = ["iteration", "n_aa", "residual_norm", "bound"].map(String::from);
        write_table(&dir.join("safeguard.csv"), &header, &rows)?;
        manifest.outputs.push("safeguard.csv".into());
    }

    let last = out.metrics.last().copied().ok_or_else(|| CliError::Config("no epochs recorded".into()))?;
    let summary = TrainSummary {
        dataset: p.train.name.clone(),
        layer_dims: p.spec.layer_dims.clone(),
        train_samples: p.train.len(),
        test_samples: p.test.len(),
        epochs: cfg.epochs,
        acceleration: cfg.aa,
        init_checksum: checksum_hex(out.init_checksum),
        final_objective: last.objective,
        final_residual: last.residual_norm,
        final_train_acc: last.train_acc,
        final_test_acc: last.test_acc,
        accelerated_steps: out.safeguard_log.len(),
        u_bar: out.u_bar,
        weight_norms: out.state.w.iter().map(|w| w.frob_norm()).collect(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    manifest.outputs.push("summary.json".into());
    manifest.finish(&dir)?;
    Ok(dir)
}

/// One metrics file per optimizer plus `compare.csv`, which joins the test
/// accuracies on epoch.
pub fn cmd_compare(cfg: &RunConfig, optimizers: &[Optimizer]) -> Result<PathBuf> {
    if optimizers.is_empty() {
        return Err(CliError::Config("compare needs at least one optimizer".into()));
    }
    let p = prepare(cfg)?;
    let dir = cfg.out_dir();
    create_dir(&dir)?;
    let mut manifest = RunManifest::start("compare", cfg.snapshot(), &p.train.name, cfg.seed);

    let runs: Vec<OptimizerRun> = optimizers
        .par_iter()
        .map(|&k| run_optimizer(&p, cfg, k))
        .collect::<Result<_>>()?;

    for (kind, run) in optimizers.iter().zip(&runs) {
        eprintln!("{}: init checksum {}", kind.name(), checksum_hex(run.init_checksum));
        let name = metrics_file(&format!("metrics_{}", kind.name()), cfg.format);
        write_metrics(&dir.join(&name), &run.metrics, cfg.format)?;
        manifest.outputs.push(name.into());
    }

    let mut header = vec!["epoch".to_string()];
    header.extend(optimizers.iter().map(|k| format!("{}_test_acc", k.name())));
    let rows: Vec<Vec<String>> = (0..runs[0].metrics.len())
        .map(|i| {
            let mut row = vec![runs[0].metrics[i].epoch.to_string()];
            row.extend(runs.iter().map(|r| fmt_f64(r.metrics[i].test_acc)));
            row
        })
        .collect();
    write_table(&dir.join("compare.csv"), &header, &rows)?;
    manifest.outputs.push("compare.csv".into());

    let checksums: std::collections::BTreeMap<&str, String> = optimizers
        .iter()
        .zip(&runs)
        .map(|(k, r)| (k.name(), checksum_hex(r.init_checksum)))
        .collect();
    write_json(&dir.join("init_checksums.json"), &checksums)?;
    manifest.outputs.push("init_checksums.json".into());
    manifest.finish(&dir)?;
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Rho(Vec<f64>),
    M(Vec<usize>),
}

impl Grid {
    fn len(&self) -> usize {
        match self {
            Grid::Rho(v) => v.len(),
            Grid::M(v) => v.len(),
        }
    }

    fn key(&self) -> &'static str {
        match self {
            Grid::Rho(_) => "rho",
            Grid::M(_) => "m",
        }
    }

    fn label(&self, i: usize) -> String {
        match self {
            Grid::Rho(v) => fmt_f64(v[i]),
            Grid::M(v) => v[i].to_string(),
        }
    }
}

/// Epochs reported by `sweep`: five evenly spaced checkpoints ending at the
/// last epoch (40, 80, ..., 200 for a 200-epoch run).
pub fn sweep_checkpoints(epochs: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (1..=5).map(|k| (k * epochs / 5).max(1)).collect();
    c.dedup();
    c
}

/// Trains every grid point in its own subdirectory, in parallel, then
/// writes `sweep.csv` with one row per grid value and the test accuracy
/// after each checkpoint epoch.
pub fn cmd_sweep(cfg: &RunConfig, grid: &Grid) -> Result<PathBuf> {
    if grid.len() == 0 {
        return Err(CliError::Config(format!("empty {} grid", grid.key())));
    }
    let root = cfg.out_dir();
    create_dir(&root)?;
    let base = prepare(cfg)?;
    let mut manifest = RunManifest::start("sweep", cfg.snapshot(), &base.train.name, cfg.seed);
    let checkpoints = sweep_checkpoints(cfg.epochs);

    let points: Vec<(RunConfig, PathBuf)> = (0..grid.len())
        .map(|i| {
            let mut c = cfg.clone();
            c.record_every = 1;
            let sub = PathBuf::from(format!("{}_{}", grid.key(), grid.label(i)));
            match grid {
                Grid::Rho(v) => c.rho = v[i],
                Grid::M(v) => c.m = v[i],
            }
            c.out = Some(root.join(&sub));
            c.validate().map(|_| (c, sub))
        })
        .collect::<Result<_>>()?;

    let rows: Vec<Vec<String>> = points
        .par_iter()
        .enumerate()
        .map(|(i, (c, sub))| -> Result<Vec<String>> {
            let p = Prepared {
                spec: ProblemSpec { rho: c.rho, ..base.spec.clone() },
                train: base.train.clone(),
                test: base.test.clone(),
            };
            let dir = root.join(sub);
            create_dir(&dir)?;
            let out = run_altmin(&p, c, c.aa)?;
            let mut m = RunManifest::start("sweep-point", c.snapshot(), &p.train.name, c.seed);
            let name = metrics_file("metrics", c.format);
            write_metrics(&dir.join(&name), &out.metrics, c.format)?;
            m.outputs.push(name.into());
            m.finish(&dir)?;
            let mut row = vec![grid.label(i)];
            row.extend(checkpoints.iter().map(|&e| fmt_f64(out.metrics[e - 1].test_acc)));
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut header = vec![grid.key().to_string()];
    header.extend(checkpoints.iter().map(|e| format!("epoch_{e}")));
    write_table(&root.join("sweep.csv"), &header, &rows)?;
    manifest.outputs.push("sweep.csv".into());
    for (_, sub) in &points {
        manifest.outputs.push(sub.join(crate::manifest::MANIFEST_FILE));
    }
    manifest.finish(&root)?;
    Ok(root)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints() {
        assert_eq!(sweep_checkpoints(200), vec![40, 80, 120, 160, 200]);
        assert_eq!(sweep_checkpoints(10), vec![2, 4, 6, 8, 10]);
        assert_eq!(sweep_checkpoints(3), vec![1, 2, 3]);
    }

    #[test]
    fn optimizer_names_round_trip() {
        for k in [Optimizer::Aa, Optimizer::Plain, Optimizer::Gd, Optimizer::Adam] {
            assert_eq!(Optimizer::parse(k.name()).unwrap(), k);
        }
        assert!(Optimizer::parse("sgd").is_err());
    }
}
