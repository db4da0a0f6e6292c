use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mvcreg::covariance::{attach_plug_in_covariance, CovarianceWarning};
use mvcreg::montecarlo::{compare_report, render_table, Comparison, Quantity, StudyReport};
use mvcreg::{fit_all, run_study, FitOptions, FitResult, MvcError, SimulationConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::csvio::{self, LoadedData};
use crate::error::{model_kind, user_message, CliError};
use crate::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Table,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config {
            path: if path.is_empty() || path == "." {
                "<root>".into()
            } else {
                path
            },
            message: e.into_inner().to_string(),
        }
    })
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub n_obs: usize,
    pub n_components: usize,
    pub regressors: Vec<String>,
    pub intercept_added: bool,
    pub det_gamma: f64,
    pub gramian: Vec<Vec<f64>>,
    pub components: Vec<ComponentReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct ComponentReport {
    /// One-based, matching the p1..pM columns.
    pub component: usize,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymptotic_cov: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xtx_condition: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xtx_eigenvalues: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition: Option<&'static str>,
    pub message: String,
}

impl From<&MvcError> for ErrorReport {
    fn from(e: &MvcError) -> Self {
        ErrorReport {
            kind: model_kind(e),
            condition: e.condition().map(|c| c.key()),
            message: user_message(e),
        }
    }
}

fn warning_text(w: &CovarianceWarning, component: usize) -> String {
    match w {
        CovarianceWarning::ClampedResidualVariance { component: s, value } => format!(
            "clamped_residual_variance: weighted residual variance of component {} was {value:e}, replaced by 0",
            s + 1
        ),
        CovarianceWarning::NegativeVariance { index, value } => format!(
            "negative_variance: component {component} V[{index}][{index}] = {value:e}, standard error reported as 0"
        ),
    }
}

/// Fits all components and, when every fit succeeds, their plug-in covariance.
pub fn build_fit_report(
    loaded: &LoadedData,
    opts: &FitOptions,
) -> Result<(FitReport, FitResult), CliError> {
    let mut fit = fit_all(&loaded.data, &loaded.p, opts)?;
    let mut warnings = Vec::new();
    if fit.all_succeeded() {
        attach_plug_in_covariance(&loaded.data, &loaded.p, &mut fit, opts.summation)?;
    } else {
        warnings
            .push("plug_in_covariance_skipped: not every component could be fitted".to_string());
    }
    let mut components = Vec::new();
    for (m, outcome) in fit.components.iter().enumerate() {
        let report = match outcome {
            Ok(c) => {
                if c.is_indefinite() {
                    warnings.push(format!(
                        "indefinite_normal_matrix: component {} weighted normal matrix has eigenvalues of both signs",
                        m + 1
                    ));
                }
                let cov = fit.plug_in_cov[m].as_ref();
                if let Some(cov) = cov {
                    for w in &cov.warnings {
                        let text = warning_text(w, m + 1);
                        if !warnings.contains(&text) {
                            warnings.push(text);
                        }
                    }
                }
                ComponentReport {
                    component: m + 1,
                    status: "ok",
                    coefficients: Some(c.coefficients.iter().copied().collect()),
                    std_errors: cov
                        .and_then(|v| v.std_errors.as_ref())
                        .map(|s| s.iter().copied().collect()),
                    asymptotic_cov: cov.map(|v| rows(&v.v)),
                    xtx_condition: Some(c.condition),
                    xtx_eigenvalues: Some(c.eigenvalues.iter().copied().collect()),
                    error: None,
                }
            }
            Err(e) => ComponentReport {
                component: m + 1,
                status: "error",
                coefficients: None,
                std_errors: None,
                asymptotic_cov: None,
                xtx_condition: None,
                xtx_eigenvalues: None,
                error: Some(e.into()),
            },
        };
        components.push(report);
    }
    let report = FitReport {
        n_obs: fit.n_obs,
        n_components: fit.n_components(),
        regressors: loaded.regressor_names.clone(),
        intercept_added: loaded.intercept_added,
        det_gamma: fit.det_gamma(),
        gramian: rows(&fit.gramian.gamma),
        components,
        warnings,
    };
    Ok((report, fit))
}

fn render_fit(report: &FitReport, format: Format) -> String {
    match format {
        Format::Json => json::to_string(report),
        Format::Csv => {
            let mut out = String::from("component,regressor,coefficient,std_error\n");
            for c in &report.components {
                if let Some(coef) = &c.coefficients {
                    for (i, b) in coef.iter().enumerate() {
                        let se = c
                            .std_errors
                            .as_ref()
                            .map(|s| s[i].to_string())
                            .unwrap_or_default();
                        let _ = writeln!(out, "{},{},{b},{se}", c.component, report.regressors[i]);
                    }
                }
            }
            out
        }
        Format::Table => {
            let mut out = format!("N = {}, det Γ_N = {:.6e}\n", report.n_obs, report.det_gamma);
            for c in &report.components {
                let _ = writeln!(out, "\nComponent {}", c.component);
                match (&c.coefficients, &c.error) {
                    (Some(coef), _) => {
                        let _ = writeln!(
                            out,
                            "  {:<10}{:>14}{:>14}",
                            "regressor", "estimate", "std.err"
                        );
                        for (i, b) in coef.iter().enumerate() {
                            let se = c
                                .std_errors
                                .as_ref()
                                .map(|s| format!("{:.4}", s[i]))
                                .unwrap_or_else(|| "-".into());
                            let _ = writeln!(
                                out,
                                "  {:<10}{:>14.4}{:>14}",
                                report.regressors[i], b, se
                            );
                        }
                        if let Some(cond) = c.xtx_condition {
                            let _ = writeln!(out, "  cond(XᵀAX) = {cond:.3e}");
                        }
                    }
                    (None, Some(e)) => {
                        let _ = writeln!(out, "  error: {}", e.message);
                    }
                    _ => {}
                }
            }
            for w in &report.warnings {
                let _ = writeln!(out, "warning: {w}");
            }
            out
        }
    }
}

pub fn cmd_fit(
    input: &Path,
    intercept: bool,
    opts: &FitOptions,
    format: Format,
) -> Result<(String, Option<CliError>), CliError> {
    let file = fs::File::open(input).map_err(|source| CliError::Read {
        path: input.display().to_string(),
        source,
    })?;
    let loaded = csvio::read_dataset(file, intercept)?;
    let (report, fit) = build_fit_report(&loaded, opts)?;
    let failed: Vec<&MvcError> = fit
        .components
        .iter()
        .filter_map(|c| c.as_ref().err())
        .collect();
    let status = failed.first().map(|first| CliError::ComponentsFailed {
        failed: failed.len(),
        first: (*first).clone(),
    });
    Ok((render_fit(&report, format), status))
}

// ---------------------------------------------------------------- weights

#[derive(Debug, Serialize)]
struct WeightsReport {
    n_obs: usize,
    n_components: usize,
    det_gamma: f64,
    gramian: Vec<Vec<f64>>,
    /// (m, k) entry: (1/N) Σ_j a[j][m] p[j][k]
    biorthogonality: Vec<Vec<f64>>,
    max_biorthogonality_error: f64,
    weights: Vec<Vec<f64>>,
}

pub fn cmd_weights(input: &Path, det_tol: f64, format: Format) -> Result<String, CliError> {
    let file = fs::File::open(input).map_err(|source| CliError::Read {
        path: input.display().to_string(),
        source,
    })?;
    let p = csvio::read_concentrations(file)?;
    let g = mvcreg::build_gramian(&p);
    let a = mvcreg::compute_weights(&p, &g, det_tol)?;
    let bio = a.biorthogonality(&p);
    let m = p.n_components();
    let report = WeightsReport {
        n_obs: p.n_obs(),
        n_components: m,
        det_gamma: g.det_gamma,
        gramian: rows(&g.gamma),
        biorthogonality: rows(&bio),
        max_biorthogonality_error: (&bio - DMatrix::identity(m, m)).amax(),
        weights: (0..p.n_obs()).map(|j| a.row(j).to_vec()).collect(),
    };
    Ok(match format {
        Format::Json => json::to_string(&report),
        Format::Csv => {
            let mut out = (1..=m)
                .map(|k| format!("a{k}"))
                .collect::<Vec<_>>()
                .join(",");
            out.push('\n');
            for row in &report.weights {
                out.push_str(&row.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
                out.push('\n');
            }
            out
        }
        Format::Table => {
            let mut out = format!(
                "N = {}, M = {}, det Γ_N = {:.6e}\n",
                report.n_obs, m, report.det_gamma
            );
            out.push_str("biorthogonality ⟨a^m p^k⟩_N:\n");
            for row in &report.biorthogonality {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.6}")).collect();
                let _ = writeln!(out, "  {}", cells.join(" "));
            }
            let _ = writeln!(
                out,
                "max deviation from identity: {:.3e}",
                report.max_biorthogonality_error
            );
            out.push_str("weights:\n");
            let header: Vec<String> = (1..=m)
                .map(|k| format!("{:>12}", format!("a{k}")))
                .collect();
            let _ = writeln!(out, "  {}", header.join(" "));
            for row in &report.weights {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.6}")).collect();
                let _ = writeln!(out, "  {}", cells.join(" "));
            }
            out
        }
    })
}

// ---------------------------------------------------------------- simulate / study

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StudySettings {
    pub reps: usize,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_mean_abs_tol")]
    pub mean_abs_tol: f64,
    /// When false the comparison is reported but never fails the run.
    #[serde(default = "default_enforce")]
    pub enforce: bool,
}

fn default_rel_tol() -> f64 {
    0.15
}

fn default_mean_abs_tol() -> f64 {
    0.02
}

fn default_enforce() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub simulation: SimulationConfig,
    pub study: StudySettings,
}

/// A study file, or a bare simulation config.
pub fn load_simulation(path: &Path) -> Result<SimulationConfig, CliError> {
    let text = read_file(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config {
        path: "<root>".into(),
        message: e.to_string(),
    })?;
    let config = if value.get("simulation").is_some() {
        parse_json::<StudyFile>(&text)?.simulation
    } else {
        parse_json::<SimulationConfig>(&text)?
    };
    config.validate()?;
    Ok(config)
}

pub fn cmd_simulate(
    config_path: &Path,
    seed: Option<u64>,
    n_obs: Option<usize>,
) -> Result<String, CliError> {
    let mut config = load_simulation(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(n) = n_obs {
        config.n_obs = n;
    }
    let sim = mvcreg::generate(&config)?;
    let mut buf = Vec::new();
    csvio::write_dataset(&mut buf, &sim.data, &sim.p)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

#[derive(Debug, Serialize)]
pub struct StudyOutput {
    pub report: StudyReport,
    pub comparison: Comparison,
    pub enforced: bool,
}

pub struct StudyOverrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub rel_tol: Option<f64>,
}

pub fn run_study_file(
    config_path: &Path,
    overrides: &StudyOverrides,
    opts: &FitOptions,
) -> Result<StudyOutput, CliError> {
    let text = read_file(config_path)?;
    let mut file: StudyFile = parse_json(&text)?;
    if let Some(s) = overrides.seed {
        file.simulation.seed = s;
    }
    if let Some(r) = overrides.reps {
        file.study.reps = r;
    }
    if let Some(t) = overrides.rel_tol {
        file.study.rel_tol = t;
    }
    file.simulation.validate()?;
    if file.study.reps < 2 {
        return Err(CliError::Config {
            path: "study.reps".into(),
            message: "at least 2 replications are required".into(),
        });
    }
    if file.study.n_grid.is_empty() {
        return Err(CliError::Config {
            path: "study.n_grid".into(),
            message: "must not be empty".into(),
        });
    }
    for (i, &n) in file.study.n_grid.iter().enumerate() {
        file.simulation
            .resized(n, file.simulation.seed)
            .validate()
            .map_err(|e| CliError::Config {
                path: format!("study.n_grid[{i}]"),
                message: e.to_string(),
            })?;
    }
    let report = run_study(&file.simulation, file.study.reps, &file.study.n_grid, opts)?;
    let comparison = compare_report(&report, file.study.rel_tol, file.study.mean_abs_tol);
    Ok(StudyOutput {
        report,
        comparison,
        enforced: file.study.enforce,
    })
}

pub fn render_study(out: &StudyOutput, format: Format) -> String {
    match format {
        Format::Json => json::to_string(out),
        Format::Table => {
            let mut text = render_table(&out.report);
            let failed: Vec<_> = out
                .comparison
                .cells
                .iter()
                .filter(|c| c.enforced && !c.pass)
                .collect();
            let checked = out.comparison.cells.iter().filter(|c| c.enforced).count();
            let _ = writeln!(
                text,
                "comparison at N = {} (cov rel_tol {}, mean abs_tol {}): {} of {checked} cells within tolerance{}",
                out.report.n_grid.iter().max().copied().unwrap_or(0),
                out.comparison.rel_tol,
                out.comparison.mean_abs_tol,
                checked - failed.len(),
                if out.enforced { "" } else { " (not enforced)" }
            );
            for c in failed.into_iter().filter(|_| out.enforced) {
                let (i, k) = c.index;
                let cell = match c.quantity {
                    Quantity::Mean => format!("mean b{i}"),
                    Quantity::ScaledCov => format!("N*Cov(b{i},b{k})"),
                };
                let _ = writeln!(
                    text,
                    "  FAIL component {} {cell}: observed {:.4}, expected {:.4}",
                    c.component + 1,
                    c.observed,
                    c.expected
                );
            }
            text
        }
        Format::Csv => {
            let mut text = String::from("n_obs,component,rep_count,failures,quantity,i,k,value\n");
            for r in &out.report.reports {
                for (i, v) in r.mean_b.iter().enumerate() {
                    let _ = writeln!(
                        text,
                        "{},{},{},{},mean,{i},{i},{v}",
                        r.n_obs,
                        r.component + 1,
                        r.rep_count,
                        r.failures
                    );
                }
                for (i, row) in r.scaled_cov.iter().enumerate() {
                    for (k, v) in row.iter().enumerate().skip(i) {
                        let _ = writeln!(
                            text,
                            "{},{},{},{},scaled_cov,{i},{k},{v}",
                            r.n_obs,
                            r.component + 1,
                            r.rep_count,
                            r.failures
                        );
                    }
                }
            }
            for a in &out.report.analytic {
                for (i, row) in a.v.iter().enumerate() {
                    for (k, v) in row.iter().enumerate().skip(i) {
                        let _ = writeln!(text, "inf,{},,,analytic_v,{i},{k},{v}", a.component + 1);
                    }
                }
            }
            text
        }
    }
}

pub fn study_status(out: &StudyOutput) -> Option<CliError> {
    if !out.enforced || out.comparison.passed {
        return None;
    }
    let enforced: Vec<_> = out.comparison.cells.iter().filter(|c| c.enforced).collect();
    Some(CliError::Comparison {
        failed: enforced.iter().filter(|c| !c.pass).count(),
        checked: enforced.len(),
    })
}
