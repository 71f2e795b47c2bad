//! Command-line front end.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{covariance_bound_known, precisions_from_fisher};
use crate::params::{SourceParams, PARAMETER_ORDER};
use crate::povm::optimal_displacement;
use crate::psf::{PsfModel, DEFAULT_TABLE_TERMS};
use crate::quantum::{compatibility_residual, qfim_closed, qfim_numeric};
use crate::scan::{
    displacement_grid, fit_displacement_scan, linear_grid, log_grid, normalize_rows, write_csv,
    Evaluator, PrecisionRow, DISPLACEMENT_HALF_WIDTH, DISPLACEMENT_POINTS,
};
use crate::sim::{
    adaptive_replication, crlb_experiment, moments, AdaptiveSchedule, ExperimentConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "superres",
    version,
    about = "Cramér–Rao limits and optimal measurements for two incoherent point sources"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Quantum Fisher matrix by both routes, with precisions and compatibility.
    Qfim,
    /// Measured precisions versus displacement, with Lorentzian fits.
    ScanDisplacement,
    /// Measured and quantum precisions versus separation at the optimal displacement.
    ScanSeparation,
    /// Misaligned measurements against the quantum and direct-imaging limits.
    Robustness,
    /// Monte Carlo maximum-likelihood runs against the Cramér–Rao bounds.
    Simulate,
    /// Two-stage adaptive estimation.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Flags shared by every subcommand. Unset flags fall back to `--config`
/// and then to per-command defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// `gaussian` or `table:<path>`.
    #[arg(long, global = true)]
    pub psf: Option<String>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Basis dimension.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub s0: Option<f64>,
    /// Value, comma list, or `min:max:count[:log]`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub s: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub q: Option<String>,
    /// Angles such as `9pi/20`, comma-separated.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub phi: Option<String>,
    /// Displacement value or grid.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long, global = true)]
    pub photons: Option<u64>,
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parameters treated as known in simulations, e.g. `q` or `s0,q`.
    #[arg(long, global = true)]
    pub fix: Option<String>,
    /// Direct-imaging share of the photons in adaptive runs.
    #[arg(long, global = true)]
    pub fraction: Option<f64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true)]
    pub normalize: bool,
    /// Also write a line plot next to the output file.
    #[arg(long, global = true)]
    pub svg: bool,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

/// A grid given as a number, a list of numbers, or a grid string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Number(f64),
    List(Vec<f64>),
    Text(String),
}

impl GridValue {
    fn into_text(self) -> String {
        match self {
            GridValue::Number(v) => format!("{v}"),
            GridValue::List(v) => v
                .iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(","),
            GridValue::Text(t) => t,
        }
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub psf: Option<String>,
    pub sigma: Option<f64>,
    pub dim: Option<usize>,
    pub s0: Option<f64>,
    pub s: Option<GridValue>,
    pub q: Option<GridValue>,
    pub phi: Option<GridValue>,
    pub x0: Option<GridValue>,
    pub photons: Option<u64>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub fix: Option<GridValue>,
    pub fraction: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub normalize: Option<bool>,
    pub svg: Option<bool>,
    pub jobs: Option<usize>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub psf: PsfModel<f64>,
    pub dim: usize,
    pub s0: f64,
    pub s: Vec<f64>,
    pub q: Vec<f64>,
    pub phi: Vec<f64>,
    pub x0: Option<Vec<f64>>,
    pub photons: u64,
    pub reps: usize,
    pub seed: u64,
    pub fixed: [bool; 3],
    pub fraction: f64,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub normalize: bool,
    pub svg: bool,
    pub jobs: Option<usize>,
}

struct Defaults {
    s: &'static str,
    q: &'static str,
    phi: &'static str,
    photons: u64,
    reps: usize,
    format: Format,
}

fn defaults(command: Command) -> Defaults {
    let base = Defaults {
        s: "0.1",
        q: "0.3",
        phi: "9pi/20",
        photons: 100_000,
        reps: 100,
        format: Format::Csv,
    };
    match command {
        Command::Qfim => Defaults {
            s: "0.01,0.03,0.1,0.3,1",
            q: "0.1,0.3,0.5",
            ..base
        },
        Command::ScanDisplacement => Defaults {
            s: "0.02,0.014,0.01",
            ..base
        },
        Command::ScanSeparation => Defaults {
            s: "1e-3:1:61:log",
            q: "0.49,0.35,0.1",
            phi: "pi/4,7pi/20,9pi/20",
            ..base
        },
        Command::Robustness => Defaults {
            s: "0.03",
            q: "0.1",
            phi: "pi/20,9pi/20",
            ..base
        },
        Command::Simulate => Defaults {
            q: "0.5",
            format: Format::Json,
            ..base
        },
        Command::Adaptive => Defaults {
            photons: 1_000_000,
            reps: 50,
            format: Format::Json,
            ..base
        },
    }
}

/// Parses an angle such as `0.7`, `pi/4`, `9pi/20` or `-3π/4`.
pub fn parse_angle(text: &str) -> Result<f64> {
    let t = text.trim().to_ascii_lowercase().replace('π', "pi");
    let bad = || Error::Config(format!("cannot parse angle '{text}'"));
    let Some(at) = t.find("pi") else {
        return t.parse::<f64>().map_err(|_| bad());
    };
    let (head, tail) = (t[..at].trim().trim_end_matches('*'), t[at + 2..].trim());
    let coefficient = match head {
        "" | "+" => 1.0,
        "-" => -1.0,
        h => h.parse::<f64>().map_err(|_| bad())?,
    };
    let divisor = match tail {
        "" => 1.0,
        t => t
            .strip_prefix('/')
            .ok_or_else(bad)?
            .trim()
            .parse::<f64>()
            .map_err(|_| bad())?,
    };
    Ok(coefficient * PI / divisor)
}

/// Parses `v`, `a,b,c`, `min:max:count` or `min:max:count:log`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |why: &str| Error::Config(format!("bad grid '{text}': {why}"));
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let values = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(bad("expected min:max:count[:log]"));
        }
        let (lo, hi) = (number(parts[0])?, number(parts[1])?);
        let count: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| bad("count must be an integer"))?;
        match parts.get(3).map(|s| s.trim()) {
            None | Some("lin") => linear_grid(lo, hi, count),
            Some("log") => {
                if !(lo > 0.0 && hi > 0.0) {
                    return Err(bad("log grid needs positive bounds"));
                }
                log_grid(lo, hi, count)
            }
            Some(_) => return Err(bad("spacing must be 'log' or 'lin'")),
        }
    } else {
        text.split(',').map(number).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() {
        return Err(bad("empty"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value"));
    }
    Ok(values)
}

/// Parses a comma list of parameter names into a `(s0, s, q)` mask.
pub fn parse_fixed(text: &str) -> Result<[bool; 3]> {
    let mut mask = [false; 3];
    for name in text.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let i = PARAMETER_ORDER
            .iter()
            .position(|p| *p == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'; use s0, s or q")))?;
        mask[i] = true;
    }
    if mask.iter().all(|&m| m) {
        return Err(Error::Config(
            "at least one parameter must be estimated".into(),
        ));
    }
    Ok(mask)
}

fn parse_angles(text: &str) -> Result<Vec<f64>> {
    let v = text
        .split(',')
        .map(parse_angle)
        .collect::<Result<Vec<_>>>()?;
    if v.is_empty() {
        return Err(Error::Config("empty angle list".into()));
    }
    Ok(v)
}

fn parse_psf(text: &str, sigma: f64) -> Result<PsfModel<f64>> {
    if text == "gaussian" {
        return PsfModel::gaussian(sigma);
    }
    match text.strip_prefix("table:") {
        Some(path) if Path::new(path).is_file() => {
            PsfModel::load_table(Path::new(path), sigma, DEFAULT_TABLE_TERMS)
        }
        Some(path) => Err(Error::Config(format!("PSF table '{path}' does not exist"))),
        None => Err(Error::Config(format!(
            "unknown PSF '{text}'; use gaussian or table:<path>"
        ))),
    }
}

impl RunConfig {
    pub fn resolve(command: Command, flags: &Options) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str::<FileConfig>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };
        let d = defaults(command);
        let text = |flag: &Option<String>, file: &Option<GridValue>| {
            flag.clone()
                .or_else(|| file.clone().map(GridValue::into_text))
        };
        let sigma = flags.sigma.or(file.sigma).unwrap_or(1.0);
        let psf_text = flags
            .psf
            .clone()
            .or(file.psf)
            .unwrap_or_else(|| "gaussian".into());
        let dim = flags.dim.or(file.dim).unwrap_or(30);
        if dim < 4 {
            return Err(Error::Config(format!("basis dimension {dim} is below 4")));
        }
        let fraction = flags.fraction.or(file.fraction).unwrap_or(0.2);
        Ok(Self {
            command,
            psf: parse_psf(&psf_text, sigma)?,
            dim,
            s0: flags.s0.or(file.s0).unwrap_or(0.0),
            s: parse_grid(&text(&flags.s, &file.s).unwrap_or_else(|| d.s.into()))?,
            q: parse_grid(&text(&flags.q, &file.q).unwrap_or_else(|| d.q.into()))?,
            phi: parse_angles(&text(&flags.phi, &file.phi).unwrap_or_else(|| d.phi.into()))?,
            x0: text(&flags.x0, &file.x0)
                .map(|t| parse_grid(&t))
                .transpose()?,
            photons: flags.photons.or(file.photons).unwrap_or(d.photons),
            reps: flags.reps.or(file.reps).unwrap_or(d.reps),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            fixed: parse_fixed(&text(&flags.fix, &file.fix).unwrap_or_default())?,
            fraction,
            out: flags.out.clone().or(file.out),
            format: flags.format.or(file.format).unwrap_or(d.format),
            normalize: flags.normalize || file.normalize.unwrap_or(false),
            svg: flags.svg || file.svg.unwrap_or(false),
            jobs: flags.jobs.or(file.jobs),
        })
    }

    fn theta(&self) -> Result<SourceParams<f64>> {
        SourceParams::new(self.s0, self.s[0], self.q[0])
    }
}

/// Result of a completed run; `flags` lists conditions that make the exit
/// status nonzero even though output was written.
#[derive(Debug, Default)]
pub struct Report {
    pub flags: Vec<String>,
    pub warnings: Vec<String>,
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn sidecar(out: &Option<PathBuf>, suffix: &str) -> Option<PathBuf> {
    out.as_ref().map(|p| {
        let mut s = p.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    })
}

fn emit_rows(config: &RunConfig, rows: &[PrecisionRow]) -> Result<()> {
    let mut buf = Vec::new();
    match config.format {
        Format::Csv => write_csv(&mut buf, rows)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut buf, rows)?;
            buf.push(b'\n');
        }
    }
    emit(&config.out, &buf)
}

fn note_unbounded(report: &mut Report, rows: &[PrecisionRow]) {
    let n = rows.iter().filter(|r| r.unbounded).count();
    if n > 0 {
        report.warnings.push(format!(
            "{n} row(s) have an outcome with vanishing probability and non-zero slope"
        ));
    }
}

#[derive(Debug, Serialize)]
struct QfimRecord {
    theta: [f64; 3],
    qfim_closed: [[f64; 3]; 3],
    qfim_numeric: [[f64; 3]; 3],
    relative_difference: f64,
    precisions: [f64; 3],
    compatibility_residual: f64,
}

fn rows_of(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
}

const QFIM_HEADER: &str =
    "s0,s,q,Q_s0s0,Q_s0s,Q_s0q,Q_ss,Q_sq,Q_qq,numeric_rel_diff,Hq_s0,Hq_s,Hq_q,compat_residual";

fn cmd_qfim(config: &RunConfig, report: &mut Report) -> Result<()> {
    let ev = Evaluator::new(config.psf.clone(), config.dim)?;
    let mut thetas = Vec::new();
    for &q in &config.q {
        for &s in &config.s {
            thetas.push(SourceParams::new(config.s0, s, q)?);
        }
    }
    let records = thetas
        .par_iter()
        .map(|theta| {
            let closed = qfim_closed(ev.model(), theta)?;
            let basis = ev.basis_at(optimal_displacement(theta));
            let numeric = qfim_numeric(&basis, theta)?;
            let compat = compatibility_residual(&basis, theta)?.abs().max();
            let precisions = precisions_from_fisher(closed.matrix()).map(|p| p.to_array());
            Ok((theta, closed, numeric, compat, precisions))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<QfimRecord> = Vec::with_capacity(records.len());
    for (theta, closed, numeric, compat, precisions) in records {
        let precisions = precisions.unwrap_or_else(|e| {
            report
                .flags
                .push(format!("s = {}, q = {}: {e}", theta.s(), theta.q()));
            [f64::NAN; 3]
        });
        out.push(QfimRecord {
            theta: theta.to_array(),
            qfim_closed: rows_of(closed.matrix()),
            qfim_numeric: rows_of(numeric.matrix()),
            relative_difference: numeric.relative_difference(&closed),
            precisions,
            compatibility_residual: compat,
        });
    }
    let mut buf = Vec::new();
    match config.format {
        Format::Csv => {
            writeln!(buf, "{QFIM_HEADER}")?;
            for r in &out {
                let m = r.qfim_closed;
                let v = [
                    r.theta[0],
                    r.theta[1],
                    r.theta[2],
                    m[0][0],
                    m[0][1],
                    m[0][2],
                    m[1][1],
                    m[1][2],
                    m[2][2],
                    r.relative_difference,
                    r.precisions[0],
                    r.precisions[1],
                    r.precisions[2],
                    r.compatibility_residual,
                ];
                writeln!(
                    buf,
                    "{}",
                    v.iter()
                        .map(|x| format!("{x:.16e}"))
                        .collect::<Vec<_>>()
                        .join(",")
                )?;
            }
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut buf, &out)?;
            buf.push(b'\n');
        }
    }
    emit(&config.out, &buf)
}

#[derive(Debug, Serialize)]
struct FitSummary {
    s: f64,
    q: f64,
    phi: f64,
    l1: f64,
    l2: f64,
    l3: f64,
    center: f64,
    half_width: f64,
    residual: f64,
    /// `1/(q(1−q))`.
    expected_l2: f64,
    expected_center: f64,
    grid_step: f64,
}

fn cmd_scan_displacement(config: &RunConfig, report: &mut Report) -> Result<()> {
    let ev = Evaluator::new(config.psf.clone(), config.dim)?;
    let phi = config.phi[0];
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut curves = Vec::new();
    for &q in &config.q {
        for &s in &config.s {
            let theta = SourceParams::new(config.s0, s, q)?;
            let grid = match &config.x0 {
                Some(g) => g.clone(),
                None => displacement_grid(&theta, DISPLACEMENT_HALF_WIDTH, DISPLACEMENT_POINTS),
            };
            let mut curve = ev.displacement_scan(&theta, phi, &grid)?;
            match fit_displacement_scan(&curve, config.s0) {
                Ok(fit) => fits.push(FitSummary {
                    s,
                    q,
                    phi,
                    l1: fit.l1,
                    l2: fit.l2,
                    l3: fit.l3,
                    center: fit.center(config.s0, s),
                    half_width: fit.half_width(s),
                    residual: fit.residual,
                    expected_l2: 1.0 / (q * (1.0 - q)),
                    expected_center: optimal_displacement(&theta),
                    grid_step: if grid.len() > 1 {
                        (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64
                    } else {
                        0.0
                    },
                }),
                Err(e) => report.flags.push(format!("s = {s}, q = {q}: {e}")),
            }
            if config.normalize {
                normalize_rows(&mut curve);
            }
            curves.push((
                format!("s={s} q={q}"),
                curve.iter().map(|r| (r.x0, r.h[1])).collect(),
            ));
            rows.extend(curve);
        }
    }
    note_unbounded(report, &rows);
    emit_rows(config, &rows)?;
    if let Some(path) = sidecar(&config.out, ".fit.json") {
        fs::write(path, serde_json::to_string_pretty(&fits)? + "\n")?;
    }
    plot_if_requested(config, &curves, false, "x0", "H_s")
}

fn cmd_scan_separation(config: &RunConfig, report: &mut Report) -> Result<()> {
    let ev = Evaluator::new(config.psf.clone(), config.dim)?;
    let rows = ev.separation_scan(config.s0, &config.s, &config.q, &config.phi)?;
    note_unbounded(report, &rows);
    emit_rows(config, &rows)?;
    let mut curves = Vec::new();
    for &q in &config.q {
        for &phi in &config.phi {
            let pts = rows
                .iter()
                .filter(|r| r.q == q && r.phi == phi)
                .map(|r| (r.s, r.h[1] / r.hq[1]))
                .collect();
            curves.push((format!("q={q} phi={phi:.4}"), pts));
        }
    }
    plot_if_requested(config, &curves, true, "s", "H_s / H_s^Q")
}

fn cmd_robustness(config: &RunConfig, report: &mut Report) -> Result<()> {
    let ev = Evaluator::new(config.psf.clone(), config.dim)?;
    let theta = config.theta()?;
    let grid = match &config.x0 {
        Some(g) => g.clone(),
        None => {
            let c = optimal_displacement(&theta);
            linear_grid(
                c - 0.5 * ev.model().sigma(),
                c + 0.5 * ev.model().sigma(),
                101,
            )
        }
    };
    let rows = ev.robustness_scan(&theta, &config.phi, &grid)?;
    note_unbounded(report, &rows);
    emit_rows(config, &rows)?;
    let mut curves: Vec<(String, Vec<(f64, f64)>)> = config
        .phi
        .iter()
        .map(|&phi| {
            let pts = rows
                .iter()
                .filter(|r| r.phi == phi)
                .map(|r| (r.x0, r.h[1]))
                .collect();
            (format!("phi={phi:.4}"), pts)
        })
        .collect();
    if let Some(first) = rows.first() {
        curves.push((
            "quantum".into(),
            grid.iter().map(|&x| (x, first.hq[1])).collect(),
        ));
        curves.push((
            "direct".into(),
            grid.iter().map(|&x| (x, first.hdir_s)).collect(),
        ));
    }
    plot_if_requested(config, &curves, false, "x0", "H_s")
}

fn require_json(config: &RunConfig) -> Result<()> {
    if config.format != Format::Json {
        return Err(Error::Config(
            "simulation summaries are written as JSON only".into(),
        ));
    }
    Ok(())
}

fn cmd_simulate(config: &RunConfig, report: &mut Report) -> Result<()> {
    require_json(config)?;
    let ev = Evaluator::new(config.psf.clone(), config.dim)?;
    let experiment = ExperimentConfig {
        theta: config.theta()?,
        phi: config.phi[0],
        x0: config.x0.as_ref().map(|g| g[0]),
        n_photons: config.photons,
        replications: config.reps,
        seed: config.seed,
        fixed: config.fixed,
    };
    let summary = crlb_experiment(&ev, &experiment)?;
    if summary.failures > 0 {
        report.flags.push(format!(
            "{} of {} replications failed to converge",
            summary.failures, summary.replications
        ));
    }
    emit(
        &config.out,
        (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
    )
}

#[derive(Debug, Serialize)]
struct StageSummary {
    estimator_mean: [f64; 3],
    covariance: [[f64; 3]; 3],
    count: usize,
}

#[derive(Debug, Serialize)]
struct AdaptiveSummary {
    theta_true: [f64; 3],
    n_photons: u64,
    first_fraction: f64,
    phi: f64,
    replications: usize,
    seed: u64,
    stage_one: StageSummary,
    stage_two: StageSummary,
    /// `Q⁻¹/N` for the full photon budget, over the estimated parameters.
    crlb_quantum: [[f64; 3]; 3],
    fallbacks: usize,
    failures: usize,
}

fn stage_summary(estimates: &[[f64; 3]]) -> StageSummary {
    let (mean, cov) = moments(estimates);
    StageSummary {
        estimator_mean: mean,
        covariance: cov,
        count: estimates.len(),
    }
}

fn cmd_adaptive(config: &RunConfig, report: &mut Report) -> Result<()> {
    require_json(config)?;
    let ev = Evaluator::new(config.psf.clone(), config.dim)?;
    let theta = config.theta()?;
    let schedule = AdaptiveSchedule {
        total_photons: config.photons,
        first_fraction: config.fraction,
        phi: config.phi[0],
        fixed: config.fixed,
    };
    schedule.split()?;
    if config.reps == 0 {
        return Err(Error::Config("replications must be positive".into()));
    }
    let outcomes: Vec<_> = (0..config.reps)
        .into_par_iter()
        .map(|i| adaptive_replication(&ev, &theta, &schedule, config.seed, i as u64).ok())
        .collect();
    let done: Vec<_> = outcomes
        .iter()
        .flatten()
        .filter(|o| o.estimate.converged)
        .collect();
    let first: Vec<[f64; 3]> = done
        .iter()
        .filter_map(|o| o.stage_one.estimate.as_ref().map(|e| e.theta.to_array()))
        .collect();
    let second: Vec<[f64; 3]> = done.iter().map(|o| o.estimate.theta.to_array()).collect();
    let q = qfim_closed(ev.model(), &theta)?;
    let summary = AdaptiveSummary {
        theta_true: theta.to_array(),
        n_photons: config.photons,
        first_fraction: config.fraction,
        phi: schedule.phi,
        replications: config.reps,
        seed: config.seed,
        stage_one: stage_summary(&first),
        stage_two: stage_summary(&second),
        crlb_quantum: rows_of(
            &(covariance_bound_known(q.matrix(), config.fixed)? / config.photons as f64),
        ),
        fallbacks: done.iter().filter(|o| o.stage_one.fallback).count(),
        failures: config.reps - done.len(),
    };
    if summary.failures > 0 {
        report.flags.push(format!(
            "{} of {} replications failed",
            summary.failures, summary.replications
        ));
    }
    if summary.fallbacks > 0 {
        report.flags.push(format!(
            "{} replication(s) fell back to the histogram mean",
            summary.fallbacks
        ));
    }
    emit(
        &config.out,
        (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
    )
}

fn plot_if_requested(
    config: &RunConfig,
    curves: &[(String, Vec<(f64, f64)>)],
    log_x: bool,
    x_label: &str,
    y_label: &str,
) -> Result<()> {
    if !config.svg {
        return Ok(());
    }
    let path =
        sidecar(&config.out, ".svg").ok_or_else(|| Error::Config("--svg needs --out".into()))?;
    fs::write(path, line_plot(curves, log_x, x_label, y_label))?;
    Ok(())
}

/// A bare SVG line plot with one polyline per curve.
pub fn line_plot(
    curves: &[(String, Vec<(f64, f64)>)],
    log_x: bool,
    x_label: &str,
    y_label: &str,
) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
    ];
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let pts: Vec<(f64, f64)> = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|&(x, y)| (tx(x), y)))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in &pts {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if !(x_hi > x_lo) {
        x_hi = x_lo + 1.0;
    }
    if !(y_hi > y_lo) {
        y_hi = y_lo + 1.0;
    }
    let px = |x: f64| M + (W - 2.0 * M) * (tx(x) - x_lo) / (x_hi - x_lo);
    let py = |y: f64| H - M - (H - 2.0 * M) * (y - y_lo) / (y_hi - y_lo);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <rect x=\"{M}\" y=\"{M}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - 2.0 * M,
        H - 2.0 * M
    );
    let lx = if log_x {
        format!("log10 {x_label}")
    } else {
        x_label.to_string()
    };
    svg += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{lx}</text>\n",
        W / 2.0,
        H - 12.0
    );
    svg += &format!("<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{y_label}</text>\n", H / 2.0, H / 2.0);
    svg += &format!("<text x=\"{M}\" y=\"{}\">{x_lo:.3e}</text>\n", H - M + 14.0);
    svg += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x_hi:.3e}</text>\n",
        W - M,
        H - M + 14.0
    );
    svg += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y_hi:.3e}</text>\n",
        M - 4.0,
        M + 4.0
    );
    svg += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y_lo:.3e}</text>\n",
        M - 4.0,
        H - M
    );
    for (k, (label, c)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = c
            .iter()
            .filter(|(x, y)| tx(*x).is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        svg += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" points=\"{}\"/>\n",
            path.join(" ")
        );
        svg += &format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>\n",
            M + 8.0,
            M + 14.0 * (k + 1) as f64
        );
    }
    svg + "</svg>\n"
}

/// Runs one parsed invocation.
pub fn run(cli: &Cli) -> Result<Report> {
    let config = RunConfig::resolve(cli.command, &cli.options)?;
    if let Some(jobs) = config.jobs {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global();
    }
    let mut report = Report::default();
    match config.command {
        Command::Qfim => cmd_qfim(&config, &mut report)?,
        Command::ScanDisplacement => cmd_scan_displacement(&config, &mut report)?,
        Command::ScanSeparation => cmd_scan_separation(&config, &mut report)?,
        Command::Robustness => cmd_robustness(&config, &mut report)?,
        Command::Simulate => cmd_simulate(&config, &mut report)?,
        Command::Adaptive => cmd_adaptive(&config, &mut report)?,
    }
    Ok(report)
}

/// Entry point: errors print `error: <kind>: <message>` on one line and
/// exit with status 2; flagged results exit with status 1.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for f in &report.flags {
                eprintln!("flagged: {f}");
            }
            if report.flags.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles() {
        assert_eq!(parse_angle("9pi/20").unwrap(), 9.0 * PI / 20.0);
        assert_eq!(parse_angle("pi/4").unwrap(), PI / 4.0);
        assert_eq!(parse_angle("-π").unwrap(), -PI);
        assert_eq!(parse_angle("0.25").unwrap(), 0.25);
        assert!(parse_angle("pi/").is_err());
        assert!(parse_angle("x").is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0.1").unwrap(), vec![0.1]);
        assert_eq!(parse_grid("1,2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        let g = parse_grid("1e-3:1:4:log").unwrap();
        assert!((g[1] - 1e-2).abs() < 1e-15 && (g[3] - 1.0).abs() < 1e-15);
        assert!(parse_grid("0:1:3:log").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("").is_err());
    }

    #[test]
    fn fixed_parameter_masks() {
        assert_eq!(parse_fixed("").unwrap(), [false; 3]);
        assert_eq!(parse_fixed("s0, q").unwrap(), [true, false, true]);
        assert!(parse_fixed("s0,s,q").is_err());
        assert!(parse_fixed("x").is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(
            &path,
            r#"{"q": [0.2, 0.4], "s": "0.05", "seed": 9, "dim": 20}"#,
        )
        .unwrap();
        let options = Options {
            config: Some(path),
            seed: Some(3),
            ..Options::default()
        };
        let c = RunConfig::resolve(Command::Qfim, &options).unwrap();
        assert_eq!(c.q, vec![0.2, 0.4]);
        assert_eq!(c.s, vec![0.05]);
        assert_eq!(c.seed, 3);
        assert_eq!(c.dim, 20);
    }

    #[test]
    fn rejects_bad_configuration() {
        let small = Options {
            dim: Some(3),
            ..Options::default()
        };
        assert!(matches!(
            RunConfig::resolve(Command::Qfim, &small),
            Err(Error::Config(_))
        ));
        let missing = Options {
            psf: Some("table:/nonexistent/psf.txt".into()),
            ..Options::default()
        };
        assert_eq!(
            RunConfig::resolve(Command::Qfim, &missing)
                .unwrap_err()
                .kind(),
            "config"
        );
    }

    #[test]
    fn svg_has_one_polyline_per_curve() {
        let curves = vec![
            ("a".to_string(), vec![(1.0, 1.0), (2.0, 3.0)]),
            ("b".to_string(), vec![(1.0, 2.0), (2.0, 0.5)]),
        ];
        let svg = line_plot(&curves, true, "s", "H");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
