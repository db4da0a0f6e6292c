//! Replication harness: repeated generate → fit cycles over a grid of
//! sample sizes, summarized as means and N-scaled covariances of the
//! estimates next to the analytic asymptotic covariance.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::analytic_sigma;
use crate::error::{MvcError, Result};
use crate::estimator::{fit_all, FitOptions};
use crate::simgen::{generate, SimulationConfig};

/// SplitMix64 finalizer.
fn mix(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep` at sample size `n_obs`.
pub fn replication_seed(base_seed: u64, n_obs: usize, rep: usize) -> u64 {
    mix(mix(mix(base_seed) ^ n_obs as u64) ^ rep as u64)
}

/// Raw per-replication estimates at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct Replications {
    pub n_obs: usize,
    /// `estimates[m][r]` is `None` when replication `r` failed for component `m`.
    pub estimates: Vec<Vec<Option<DVector<f64>>>>,
}

impl Replications {
    pub fn rep_count(&self) -> usize {
        self.estimates.first().map_or(0, Vec::len)
    }

    pub fn successes(&self, m: usize) -> Vec<&DVector<f64>> {
        self.estimates[m].iter().flatten().collect()
    }
}

/// Runs `reps` independent replications of `config` at sample size `n_obs`.
///
/// Replications run on the rayon pool; results are kept in replication order.
pub fn replicate(
    config: &SimulationConfig,
    n_obs: usize,
    reps: usize,
    opts: &FitOptions,
) -> Result<Replications> {
    let probe = config.resized(n_obs, config.seed);
    probe.validate()?;
    let n_components = config.n_components;
    let runs: Vec<Vec<Option<DVector<f64>>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let cfg = config.resized(n_obs, replication_seed(config.seed, n_obs, r));
            let outcome = generate(&cfg).and_then(|sim| fit_all(&sim.data, &sim.p, opts));
            match outcome {
                Ok(fit) => fit
                    .components
                    .into_iter()
                    .map(|c| c.ok().map(|f| f.coefficients))
                    .collect(),
                Err(_) => vec![None; n_components],
            }
        })
        .collect();
    let mut estimates = vec![Vec::with_capacity(reps); n_components];
    for run in runs {
        for (m, est) in run.into_iter().enumerate() {
            estimates[m].push(est);
        }
    }
    Ok(Replications { n_obs, estimates })
}

/// Sample mean and 1/(R−1) sample covariance of a set of vectors.
pub fn mean_and_covariance(samples: &[&DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let d = samples.first().map_or(0, |s| s.len());
    let r = samples.len() as f64;
    let mut mean = DVector::zeros(d);
    for s in samples {
        mean += *s;
    }
    mean /= r;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let c = *s - &mean;
        cov += &c * c.transpose();
    }
    cov /= r - 1.0;
    (mean, cov)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Summary of one component at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub component: usize,
    pub n_obs: usize,
    pub seed: u64,
    pub rep_count: usize,
    pub failures: usize,
    pub mean_b: Vec<f64>,
    /// N times the sample covariance of the estimates.
    pub scaled_cov: Vec<Vec<f64>>,
    pub true_b: Vec<f64>,
    pub analytic_v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticRow {
    pub component: usize,
    pub true_b: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

/// Full study: one report per (N, component) plus the analytic limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub seed: u64,
    pub rep_count: usize,
    pub n_grid: Vec<usize>,
    pub reports: Vec<MonteCarloReport>,
    pub analytic: Vec<AnalyticRow>,
}

impl StudyReport {
    pub fn report(&self, n_obs: usize, component: usize) -> Option<&MonteCarloReport> {
        self.reports
            .iter()
            .find(|r| r.n_obs == n_obs && r.component == component)
    }
}

/// Analytic asymptotic covariance V of every component of `config`.
pub fn analytic_rows(config: &SimulationConfig) -> Result<Vec<AnalyticRow>> {
    let moments = config.analytic_moments();
    (0..config.n_components)
        .map(|m| {
            let co = config.limit_co_moments(m)?;
            let cov = analytic_sigma(&moments, &co, m)?;
            Ok(AnalyticRow {
                component: m,
                true_b: config.components[m].true_b.clone(),
                v: rows(&cov.v),
            })
        })
        .collect()
}

/// Summarizes replications of one component.
pub fn summarize(
    reps: &Replications,
    m: usize,
    seed: u64,
    analytic: &AnalyticRow,
) -> Result<MonteCarloReport> {
    let ok = reps.successes(m);
    let rep_count = reps.rep_count();
    let failures = rep_count - ok.len();
    if ok.len() < 2 || 2 * failures > rep_count {
        return Err(MvcError::StudyFailed {
            n_obs: reps.n_obs,
            failures,
            reps: rep_count,
        });
    }
    let (mean, cov) = mean_and_covariance(&ok);
    Ok(MonteCarloReport {
        component: m,
        n_obs: reps.n_obs,
        seed,
        rep_count,
        failures,
        mean_b: mean.iter().copied().collect(),
        scaled_cov: rows(&(cov * reps.n_obs as f64)),
        true_b: analytic.true_b.clone(),
        analytic_v: analytic.v.clone(),
    })
}

pub fn run_study(
    config: &SimulationConfig,
    rep_count: usize,
    n_grid: &[usize],
    opts: &FitOptions,
) -> Result<StudyReport> {
    if rep_count < 2 {
        return Err(MvcError::config(
            "study.reps",
            "at least 2 replications are required",
        ));
    }
    if n_grid.is_empty() {
        return Err(MvcError::config("study.n_grid", "must not be empty"));
    }
    config.validate()?;
    let analytic = analytic_rows(config)?;
    let mut reports = Vec::new();
    for &n in n_grid {
        let reps = replicate(config, n, rep_count, opts)?;
        for row in &analytic {
            reports.push(summarize(&reps, row.component, config.seed, row)?);
        }
    }
    Ok(StudyReport {
        seed: config.seed,
        rep_count,
        n_grid: n_grid.to_vec(),
        reports,
        analytic,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Mean,
    ScaledCov,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellCheck {
    pub n_obs: usize,
    pub component: usize,
    pub quantity: Quantity,
    pub index: (usize, usize),
    pub observed: f64,
    pub expected: f64,
    pub pass: bool,
    /// Only cells at the largest N decide the overall verdict.
    pub enforced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rel_tol: f64,
    pub mean_abs_tol: f64,
    pub passed: bool,
    pub cells: Vec<CellCheck>,
}

/// Entrywise check of every report against the analytic limit: relative
/// for scaled covariances, absolute for means. Rows below the largest N are
/// reported but not enforced, since they carry finite-sample bias.
pub fn compare_report(report: &StudyReport, rel_tol: f64, mean_abs_tol: f64) -> Comparison {
    let n_max = report.n_grid.iter().copied().max().unwrap_or(0);
    let mut cells = Vec::new();
    for r in &report.reports {
        let enforced = r.n_obs == n_max;
        for (i, (&obs, &exp)) in r.mean_b.iter().zip(&r.true_b).enumerate() {
            cells.push(CellCheck {
                n_obs: r.n_obs,
                component: r.component,
                quantity: Quantity::Mean,
                index: (i, i),
                observed: obs,
                expected: exp,
                pass: (obs - exp).abs() <= mean_abs_tol,
                enforced,
            });
        }
        let d = r.scaled_cov.len();
        for i in 0..d {
            for k in i..d {
                let (obs, exp) = (r.scaled_cov[i][k], r.analytic_v[i][k]);
                cells.push(CellCheck {
                    n_obs: r.n_obs,
                    component: r.component,
                    quantity: Quantity::ScaledCov,
                    index: (i, k),
                    observed: obs,
                    expected: exp,
                    pass: (obs - exp).abs() <= rel_tol * exp.abs(),
                    enforced,
                });
            }
        }
    }
    let passed = cells.iter().filter(|c| c.enforced).all(|c| c.pass);
    Comparison {
        rel_tol,
        mean_abs_tol,
        passed,
        cells,
    }
}

/// Aligned text table: one block per component, one row per N, then the
/// analytic limit as the `∞` row. Values are rounded to 4 decimals.
pub fn render_table(report: &StudyReport) -> String {
    let mut out = String::new();
    for row in &report.analytic {
        let m = row.component;
        let d = row.true_b.len();
        let mut header = vec!["n".to_string()];
        header.extend((0..d).map(|i| format!("mean b{i}")));
        header.extend((0..d).map(|i| format!("N*Var b{i}")));
        for i in 0..d {
            for k in i + 1..d {
                header.push(format!("N*Cov(b{i},b{k})"));
            }
        }
        let cells = |n: String, mean: &[f64], cov: &[Vec<f64>]| {
            let mut v = vec![n];
            v.extend(mean.iter().map(|x| format!("{x:.4}")));
            v.extend((0..d).map(|i| format!("{:.4}", cov[i][i])));
            for i in 0..d {
                for k in i + 1..d {
                    v.push(format!("{:.4}", cov[i][k]));
                }
            }
            v
        };
        let mut lines = vec![header];
        for n in &report.n_grid {
            if let Some(r) = report.report(*n, m) {
                lines.push(cells(n.to_string(), &r.mean_b, &r.scaled_cov));
            }
        }
        lines.push(cells("∞".to_string(), &row.true_b, &row.v));
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| {
                lines
                    .iter()
                    .map(|l| l[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let _ = writeln!(out, "Component {}", m + 1);
        for line in &lines {
            let text: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| {
                    let pad = w - s.chars().count();
                    if c == 0 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", text.join("  ").trim_end());
        }
        out.push('\n');
    }
    out
}
