//! Grid experiments: every method at every `(N_H, N_L)` point, seed and sample.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nestattr::admm::{LAMBDA_GRID, MU2_GRID};
use nestattr::{
    auroc, build_aggregation_matrix, bu_lime, consistency_residual, derive_seed, insertion_deletion, lime_from_sets,
    mihl_agreement, ndcg, perturb_two_level, run_admm, td_lime, AdmmTrace, AggregationMatrix, AttributionPair,
    BlackBoxOracle, EvalReport, GroundTruth, Level, NestedShape, OracleSpec, PerturbationSet, SolverConfig,
    SweepMode,
};

use crate::config::{ExperimentConfig, Method};

const SAMPLE_STREAM: u64 = 0x5A;
const VALIDATION_STREAM: u64 = 0x7E;

/// Hyperparameters a method is fitted with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lambda_high: f64,
    pub lambda_low: f64,
    pub mu2: f64,
}

impl Hyper {
    pub fn from_solver(cfg: &SolverConfig) -> Self {
        Self {
            lambda_high: cfg.lambda_high,
            lambda_low: cfg.lambda_low,
            mu2: cfg.mu2,
        }
    }

    fn candidates(method: Method, base: &SolverConfig) -> Vec<Hyper> {
        let mu2s: Vec<f64> = if method == Method::C2fa { MU2_GRID.to_vec() } else { vec![base.mu2] };
        let mut out = Vec::new();
        for &lambda_high in &LAMBDA_GRID {
            for &lambda_low in &LAMBDA_GRID {
                for &mu2 in &mu2s {
                    out.push(Hyper {
                        lambda_high,
                        lambda_low,
                        mu2,
                    });
                }
            }
        }
        out
    }
}

/// Attributions produced by one method on one sample.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub pair: AttributionPair,
    /// `Some` for C2FA only.
    pub converged: Option<bool>,
    pub trace: Option<AdmmTrace>,
}

pub fn estimate(
    method: Method,
    high: &PerturbationSet,
    low: &PerturbationSet,
    m: &AggregationMatrix,
    solver: &SolverConfig,
    hyper: Hyper,
    td_seed: u64,
) -> Result<Estimate> {
    let lime = || lime_from_sets(high, low, hyper.lambda_high, hyper.lambda_low);
    let plain = |pair| Estimate {
        pair,
        converged: None,
        trace: None,
    };
    Ok(match method {
        Method::C2fa => {
            let cfg = SolverConfig {
                lambda_high: hyper.lambda_high,
                lambda_low: hyper.lambda_low,
                mu2: hyper.mu2,
                ..solver.clone()
            };
            let out = run_admm(high, low, m, &cfg)?;
            Estimate {
                pair: out.pair,
                converged: Some(out.converged),
                trace: Some(out.trace),
            }
        }
        Method::Lime => plain(lime()?),
        Method::BuLime => plain(bu_lime(&lime()?.lofa, m)?),
        Method::TdLime => plain(td_lime(&lime()?.hifa, m.shape(), td_seed)?),
    })
}

/// Scores a pair against the oracle's labels and by perturbation sweeps.
/// Metrics that are undefined for the labels come back as NaN.
pub fn evaluate<O: BlackBoxOracle + GroundTruth>(pair: &AttributionPair, oracle: &O, m: &AggregationMatrix) -> Result<EvalReport> {
    let defined = |r: nestattr::Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(nestattr::Error::UndefinedMetric(_)) => Ok(f64::NAN),
        Err(e) => Err(e),
    };
    Ok(EvalReport {
        ndcg: defined(ndcg(&pair.hifa, &oracle.instance_labels()))?,
        auroc: defined(auroc(&pair.lofa, &oracle.low_labels()))?,
        insertion_auc: insertion_deletion(oracle, &pair.lofa, Level::Low, SweepMode::Insert)?,
        deletion_auc: insertion_deletion(oracle, &pair.lofa, Level::Low, SweepMode::Delete)?,
        insertion_auc_high: insertion_deletion(oracle, &pair.hifa, Level::High, SweepMode::Insert)?,
        deletion_auc_high: insertion_deletion(oracle, &pair.hifa, Level::High, SweepMode::Delete)?,
        consistency: consistency_residual(pair, m)?,
        mihl_agree: mihl_agreement(pair, m.shape())?,
    })
}

/// Metric rows for one `(method, N_H, N_L, seed, sample)`.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub method: Method,
    pub n_high: usize,
    pub n_low: usize,
    pub seed: u64,
    pub sample_id: usize,
    pub metrics: Vec<(&'static str, f64)>,
    pub trace: Option<AdmmTrace>,
}

impl SampleRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Seeds contributing to the statistic.
    pub n: usize,
}

/// Mean ± standard deviation over seeds (each seed first averaged over its samples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub method: Method,
    pub n_high: usize,
    pub n_low: usize,
    pub metrics: BTreeMap<String, Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub method: Method,
    pub n_high: usize,
    pub n_low: usize,
    pub seed: u64,
    pub hyper: Hyper,
}

#[derive(Debug)]
pub struct ExperimentSummary {
    pub records: Vec<SampleRecord>,
    pub aggregate: Vec<CellAggregate>,
    pub selections: Vec<Selection>,
    /// C2FA samples that hit `max_iters`.
    pub nonconverged: usize,
    pub output_dir: PathBuf,
}

impl ExperimentSummary {
    pub fn cell(&self, method: Method, n_high: usize, n_low: usize) -> Option<&CellAggregate> {
        self.aggregate
            .iter()
            .find(|c| c.method == method && c.n_high == n_high && c.n_low == n_low)
    }
}

fn sample_seed(seed: u64, stream: u64, sample_id: usize) -> u64 {
    derive_seed(derive_seed(seed, stream), sample_id as u64)
}

struct Sample {
    oracle: OracleSpec,
    seed: u64,
}

impl Sample {
    fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            oracle: cfg.oracle.instantiate(derive_seed(seed, 0))?,
            seed,
        })
    }

    fn perturb(&self, cfg: &ExperimentConfig, n_high: usize, n_low: usize) -> Result<(PerturbationSet, PerturbationSet)> {
        Ok(perturb_two_level(&self.oracle, n_high, n_low, cfg.kernel, derive_seed(self.seed, 1))?)
    }

    fn td_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }
}

/// Validation score: mean of HiFA NDCG and LoFA AUROC, ignoring undefined ones.
fn selection_score(r: &EvalReport) -> f64 {
    let vals: Vec<f64> = [r.ndcg, r.auroc].into_iter().filter(|v| v.is_finite()).collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

fn select(cfg: &ExperimentConfig, m: &AggregationMatrix, method: Method, n_high: usize, n_low: usize, seed: u64) -> Result<Hyper> {
    let samples: Vec<Sample> = (0..cfg.grid.validation_samples)
        .map(|k| Sample::new(cfg, sample_seed(seed, VALIDATION_STREAM, k)))
        .collect::<Result<_>>()?;
    let sets: Vec<_> = samples
        .iter()
        .map(|s| s.perturb(cfg, n_high, n_low))
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, Hyper)> = None;
    for hyper in Hyper::candidates(method, &cfg.solver) {
        let mut total = 0.0;
        for (s, (high, low)) in samples.iter().zip(&sets) {
            let est = estimate(method, high, low, m, &cfg.solver, hyper, s.td_seed())?;
            if est.converged == Some(false) {
                continue;
            }
            total += selection_score(&evaluate(&est.pair, &s.oracle, m)?);
        }
        if best.is_none_or(|(b, _)| total > b) {
            best = Some((total, hyper));
        }
    }
    Ok(best.map(|(_, h)| h).unwrap_or_else(|| Hyper::from_solver(&cfg.solver)))
}

/// Runs the configured grid and writes `results.csv`, `aggregate.json`,
/// `curves/*.csv` and, if requested, `selected.csv` and `trace/*.csv`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let shape: NestedShape = cfg.oracle.shape()?;
    let m = build_aggregation_matrix(&shape);
    let g = &cfg.grid;

    let cells: Vec<(usize, usize)> = g
        .n_high
        .iter()
        .flat_map(|&h| g.n_low.iter().map(move |&l| (h, l)))
        .collect();

    let mut selections = Vec::new();
    let mut chosen: BTreeMap<(Method, usize, usize, u64), Hyper> = BTreeMap::new();
    if cfg.validate {
        let jobs: Vec<(Method, usize, usize, u64)> = cells
            .iter()
            .flat_map(|&(h, l)| g.seeds.iter().flat_map(move |&s| cfg.methods.iter().map(move |&meth| (meth, h, l, s))))
            .collect();
        let picked: Vec<Hyper> = jobs
            .par_iter()
            .map(|&(meth, h, l, s)| select(cfg, &m, meth, h, l, s))
            .collect::<Result<_>>()?;
        for (&(method, n_high, n_low, seed), &hyper) in jobs.iter().zip(&picked) {
            chosen.insert((method, n_high, n_low, seed), hyper);
            selections.push(Selection {
                method,
                n_high,
                n_low,
                seed,
                hyper,
            });
        }
    }
    let default_hyper = Hyper::from_solver(&cfg.solver);

    let tasks: Vec<(usize, usize, u64, usize)> = cells
        .iter()
        .flat_map(|&(h, l)| g.seeds.iter().flat_map(move |&s| (0..g.samples).map(move |k| (h, l, s, k))))
        .collect();
    let per_task: Vec<Vec<SampleRecord>> = tasks
        .par_iter()
        .map(|&(n_high, n_low, seed, sample_id)| -> Result<Vec<SampleRecord>> {
            let sample = Sample::new(cfg, sample_seed(seed, SAMPLE_STREAM, sample_id))?;
            let (high, low) = sample.perturb(cfg, n_high, n_low)?;
            let mut out = Vec::with_capacity(cfg.methods.len());
            for &method in &cfg.methods {
                let hyper = chosen.get(&(method, n_high, n_low, seed)).copied().unwrap_or(default_hyper);
                let est = estimate(method, &high, &low, &m, &cfg.solver, hyper, sample.td_seed())
                    .with_context(|| format!("{method} at N_H={n_high}, N_L={n_low}, seed {seed}, sample {sample_id}"))?;
                let mut metrics = Vec::new();
                if let Some(converged) = est.converged {
                    metrics.push(("converged", if converged { 1.0 } else { 0.0 }));
                }
                // a non-converged iterate is not a C2FA estimate; only its status is recorded
                if est.converged != Some(false) {
                    let report = evaluate(&est.pair, &sample.oracle, &m)?;
                    metrics.extend(report.entries().into_iter().filter(|(_, v)| !v.is_nan()));
                }
                out.push(SampleRecord {
                    method,
                    n_high,
                    n_low,
                    seed,
                    sample_id,
                    metrics,
                    trace: if cfg.trace { est.trace } else { None },
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let records: Vec<SampleRecord> = per_task.into_iter().flatten().collect();
    let nonconverged = records.iter().filter(|r| r.metric("converged") == Some(0.0)).count();
    let aggregate = aggregate(&records, cfg);

    let dir = cfg.output_dir.clone();
    write_outputs(&dir, &records, &aggregate, &selections)?;
    Ok(ExperimentSummary {
        records,
        aggregate,
        selections,
        nonconverged,
        output_dir: dir,
    })
}

fn mean_std(values: &[f64]) -> Stat {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Stat { mean, std, n }
}

fn aggregate(records: &[SampleRecord], cfg: &ExperimentConfig) -> Vec<CellAggregate> {
    // (method, n_high, n_low) -> metric -> seed -> sample values
    type Cells = BTreeMap<(Method, usize, usize), BTreeMap<&'static str, BTreeMap<u64, Vec<f64>>>>;
    let mut cells: Cells = BTreeMap::new();
    for r in records {
        let cell = cells.entry((r.method, r.n_high, r.n_low)).or_default();
        for &(name, v) in &r.metrics {
            cell.entry(name).or_default().entry(r.seed).or_default().push(v);
        }
    }
    let mut out = Vec::new();
    for &n_high in &cfg.grid.n_high {
        for &n_low in &cfg.grid.n_low {
            for &method in &cfg.methods {
                let metrics = cells
                    .get(&(method, n_high, n_low))
                    .map(|by_metric| {
                        by_metric
                            .iter()
                            .map(|(name, by_seed)| {
                                let seed_means: Vec<f64> = by_seed.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
                                (name.to_string(), mean_std(&seed_means))
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                out.push(CellAggregate {
                    method,
                    n_high,
                    n_low,
                    metrics,
                });
            }
        }
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_outputs(dir: &Path, records: &[SampleRecord], aggregate: &[CellAggregate], selections: &[Selection]) -> Result<()> {
    fs::create_dir_all(dir.join("curves")).with_context(|| format!("creating {}", dir.display()))?;

    let mut w = csv::Writer::from_writer(create(&dir.join("results.csv"))?);
    w.write_record(["method", "n_high", "n_low", "seed", "sample_id", "metric", "value"])?;
    for r in records {
        for (name, v) in &r.metrics {
            w.write_record([
                r.method.name(),
                &r.n_high.to_string(),
                &r.n_low.to_string(),
                &r.seed.to_string(),
                &r.sample_id.to_string(),
                name,
                &v.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut f = create(&dir.join("aggregate.json"))?;
    serde_json::to_writer_pretty(&mut f, aggregate)?;
    writeln!(f)?;
    f.flush()?;

    let names: std::collections::BTreeSet<&str> = aggregate.iter().flat_map(|c| c.metrics.keys().map(String::as_str)).collect();
    for name in names {
        let mut w = csv::Writer::from_writer(create(&dir.join("curves").join(format!("{name}.csv")))?);
        w.write_record(["method", "n_high", "n_low", "mean", "std", "n"])?;
        for c in aggregate {
            if let Some(s) = c.metrics.get(name) {
                w.write_record([
                    c.method.name(),
                    &c.n_high.to_string(),
                    &c.n_low.to_string(),
                    &s.mean.to_string(),
                    &s.std.to_string(),
                    &s.n.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }

    if !selections.is_empty() {
        let mut w = csv::Writer::from_writer(create(&dir.join("selected.csv"))?);
        w.write_record(["method", "n_high", "n_low", "seed", "lambda_high", "lambda_low", "mu2"])?;
        for s in selections {
            w.write_record([
                s.method.name(),
                &s.n_high.to_string(),
                &s.n_low.to_string(),
                &s.seed.to_string(),
                &s.hyper.lambda_high.to_string(),
                &s.hyper.lambda_low.to_string(),
                &s.hyper.mu2.to_string(),
            ])?;
        }
        w.flush()?;
    }

    let traced: Vec<&SampleRecord> = records.iter().filter(|r| r.trace.is_some()).collect();
    if !traced.is_empty() {
        fs::create_dir_all(dir.join("trace"))?;
        for r in traced {
            let name = format!("{}_h{}_l{}_s{}_{}.csv", r.method, r.n_high, r.n_low, r.seed, r.sample_id);
            r.trace.as_ref().unwrap().write_csv(create(&dir.join("trace").join(name))?)?;
        }
    }
    Ok(())
}
