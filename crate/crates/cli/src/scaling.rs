//! Wall time of the C2FA solver as `N_L` grows.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use nestattr::{build_aggregation_matrix, derive_seed, perturb_two_level, run_admm, solve_c2fa, SolverConfig};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n_high: usize,
    pub n_low: usize,
    pub oracle_calls: usize,
    pub oracle_seconds: f64,
    /// Median over `scaling.repeats` solves.
    pub solve_seconds: f64,
    pub iterations: usize,
}

/// Least-squares line `solve_seconds ≈ intercept + slope · N_L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// `None` when fewer than two distinct `N_L` values were timed.
    pub fit: Option<LinearFit>,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times the solver at each `grid.n_low` with `N_H = grid.n_high[0]`, on
/// the first seed's first sample. Oracle time is measured separately.
/// Writes `scaling.csv` and, when a fit exists, `scaling_fit.json`.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    let shape = cfg.oracle.shape()?;
    let m = build_aggregation_matrix(&shape);
    let n_high = cfg.grid.n_high[0];
    let seed = derive_seed(cfg.grid.seeds[0], 0x5CA1E);
    let oracle = cfg.oracle.instantiate(seed)?;

    let solver = match cfg.scaling.fixed_iters {
        Some(iters) => SolverConfig {
            eps1: f64::MIN_POSITIVE,
            eps2: f64::MIN_POSITIVE,
            max_iters: iters,
            ..cfg.solver.clone()
        },
        None => cfg.solver.clone(),
    };

    let mut rows = Vec::new();
    for &n_low in &cfg.grid.n_low {
        let start = Instant::now();
        let (high, low) = perturb_two_level(&oracle, n_high, n_low, cfg.kernel, derive_seed(seed, 1))?;
        let oracle_seconds = start.elapsed().as_secs_f64();

        let mut times = Vec::with_capacity(cfg.scaling.repeats);
        let mut iterations = 0;
        for _ in 0..cfg.scaling.repeats {
            let start = Instant::now();
            iterations = if cfg.scaling.fixed_iters.is_some() {
                run_admm(&high, &low, &m, &solver)?.trace.len()
            } else {
                solve_c2fa(&high, &low, &m, &solver)
                    .with_context(|| format!("solve at N_L={n_low}"))?
                    .1
                    .len()
            };
            times.push(start.elapsed().as_secs_f64());
        }
        rows.push(ScalingRow {
            n_high,
            n_low,
            oracle_calls: high.len() + low.len(),
            oracle_seconds,
            solve_seconds: median(times),
            iterations,
        });
    }

    let x: Vec<f64> = rows.iter().map(|r| r.n_low as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.solve_seconds).collect();
    let fit = linear_fit(&x, &y);

    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut w = csv::Writer::from_path(dir.join("scaling.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    if let Some(fit) = fit {
        let mut f = BufWriter::new(File::create(dir.join("scaling_fit.json"))?);
        serde_json::to_writer_pretty(&mut f, &fit)?;
        writeln!(f)?;
        f.flush()?;
    }
    Ok(ScalingReport {
        rows,
        fit,
        output_dir: dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_has_unit_r_squared() {
        let fit = linear_fit(&[1.0, 2.0, 4.0], &[3.0, 5.0, 9.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12 && (fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fits_are_skipped() {
        assert!(linear_fit(&[100.0], &[0.3]).is_none());
        assert!(linear_fit(&[100.0, 100.0], &[0.3, 0.4]).is_none());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
