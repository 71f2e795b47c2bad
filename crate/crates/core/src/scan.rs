//! Precision scans over displacement and separation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::OrthonormalBasis;
use crate::direct::direct_imaging_fim;
use crate::error::{Error, Result};
use crate::fisher::PrecisionTriple;
use crate::lorentz::{lorentzian_fit, LorentzianFit};
use crate::params::SourceParams;
use crate::povm::{build_phi_family, classical_fim, optimal_displacement};
use crate::psf::PsfModel;
use crate::quantum::quantum_precisions;

/// Column order of every scan CSV.
pub const CSV_HEADER: &str = "x0,s,q,phi,H_s0,H_s,H_q,Hq_s0,Hq_s,Hq_q,Hdir_s";

/// Default number of displacement samples and half-width in units of `s`.
pub const DISPLACEMENT_POINTS: usize = 201;
pub const DISPLACEMENT_HALF_WIDTH: f64 = 5.0;

/// One evaluated measurement setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRow {
    pub x0: f64,
    pub s: f64,
    pub q: f64,
    pub phi: f64,
    /// Measured precisions `(s0, s, q)`.
    pub h: [f64; 3],
    /// Quantum limits `(s0, s, q)`.
    pub hq: [f64; 3],
    /// Direct-imaging separation precision.
    pub hdir_s: f64,
    /// Set when some outcome had vanishing probability with non-zero slope.
    #[serde(default)]
    pub unbounded: bool,
}

impl PrecisionRow {
    pub fn csv_line(&self) -> String {
        let v = [
            self.x0,
            self.s,
            self.q,
            self.phi,
            self.h[0],
            self.h[1],
            self.h[2],
            self.hq[0],
            self.hq[1],
            self.hq[2],
            self.hdir_s,
        ];
        v.iter()
            .map(|x| format!("{x:.16e}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// `H_α / H_α^Q`.
    pub fn ratios(&self) -> [f64; 3] {
        [
            self.h[0] / self.hq[0],
            self.h[1] / self.hq[1],
            self.h[2] / self.hq[2],
        ]
    }
}

pub fn write_csv<W: Write>(mut out: W, rows: &[PrecisionRow]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Shared PSF and basis shape for evaluating many settings.
#[derive(Debug, Clone)]
pub struct Evaluator {
    model: PsfModel<f64>,
    basis: OrthonormalBasis<f64>,
}

impl Evaluator {
    pub fn new(model: PsfModel<f64>, dimension: usize) -> Result<Self> {
        let basis = OrthonormalBasis::build(&model, 0.0, dimension)?;
        Ok(Self { model, basis })
    }

    pub fn model(&self) -> &PsfModel<f64> {
        &self.model
    }

    /// Basis re-centred at `x0`.
    pub fn basis_at(&self, x0: f64) -> OrthonormalBasis<f64> {
        self.basis.displaced(x0)
    }

    pub fn measured(
        &self,
        theta: &SourceParams<f64>,
        phi: f64,
        x0: f64,
    ) -> Result<(PrecisionTriple<f64>, bool)> {
        let spec = build_phi_family(phi, x0)?;
        let f = classical_fim(&spec, &self.basis_at(x0), theta)?;
        Ok((f.precisions()?, f.is_unbounded()))
    }

    pub fn quantum(&self, theta: &SourceParams<f64>) -> Result<PrecisionTriple<f64>> {
        quantum_precisions(&self.model, theta)
    }

    pub fn direct_separation(&self, theta: &SourceParams<f64>) -> Result<f64> {
        Ok(direct_imaging_fim(&self.model, theta)?.precisions()?.s)
    }

    fn row_with(
        &self,
        theta: &SourceParams<f64>,
        phi: f64,
        x0: f64,
        hq: &PrecisionTriple<f64>,
        hdir_s: f64,
    ) -> Result<PrecisionRow> {
        let (h, unbounded) = self.measured(theta, phi, x0)?;
        Ok(PrecisionRow {
            x0,
            s: theta.s(),
            q: theta.q(),
            phi,
            h: h.to_array(),
            hq: hq.to_array(),
            hdir_s,
            unbounded,
        })
    }

    pub fn row(&self, theta: &SourceParams<f64>, phi: f64, x0: f64) -> Result<PrecisionRow> {
        let hq = self.quantum(theta)?;
        let hdir = self.direct_separation(theta)?;
        self.row_with(theta, phi, x0, &hq, hdir)
    }

    /// Measured precisions along `x0_grid` for one source configuration.
    pub fn displacement_scan(
        &self,
        theta: &SourceParams<f64>,
        phi: f64,
        x0_grid: &[f64],
    ) -> Result<Vec<PrecisionRow>> {
        let hq = self.quantum(theta)?;
        let hdir = self.direct_separation(theta)?;
        x0_grid
            .par_iter()
            .map(|&x0| self.row_with(theta, phi, x0, &hq, hdir))
            .collect()
    }

    /// Precisions at the optimal displacement for every `(q, φ, s)`.
    pub fn separation_scan(
        &self,
        s0: f64,
        s_grid: &[f64],
        q_list: &[f64],
        phi_list: &[f64],
    ) -> Result<Vec<PrecisionRow>> {
        let mut jobs = Vec::with_capacity(s_grid.len() * q_list.len() * phi_list.len());
        for &q in q_list {
            for &phi in phi_list {
                for &s in s_grid {
                    jobs.push((q, phi, s));
                }
            }
        }
        jobs.par_iter()
            .map(|&(q, phi, s)| {
                let theta = SourceParams::new(s0, s, q)?;
                self.row(&theta, phi, optimal_displacement(&theta))
            })
            .collect()
    }

    /// Misaligned measurements for each angle over `x0_grid`.
    pub fn robustness_scan(
        &self,
        theta: &SourceParams<f64>,
        phi_list: &[f64],
        x0_grid: &[f64],
    ) -> Result<Vec<PrecisionRow>> {
        let mut rows = Vec::with_capacity(phi_list.len() * x0_grid.len());
        for &phi in phi_list {
            rows.extend(self.displacement_scan(theta, phi, x0_grid)?);
        }
        Ok(rows)
    }
}

/// `count` uniform displacements over `s0 ± half_width·s`.
pub fn displacement_grid(theta: &SourceParams<f64>, half_width: f64, count: usize) -> Vec<f64> {
    let (lo, hi) = (
        theta.s0() - half_width * theta.s(),
        theta.s0() + half_width * theta.s(),
    );
    linear_grid(lo, hi, count)
}

pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    linear_grid(lo.ln(), hi.ln(), count)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Lorentzian fit of `H_s` against displacement.
pub fn fit_displacement_scan(rows: &[PrecisionRow], s0: f64) -> Result<LorentzianFit> {
    let s = rows
        .first()
        .map(|r| r.s)
        .ok_or_else(|| Error::FitFailure("empty scan".into()))?;
    let samples: Vec<(f64, f64)> = rows.iter().map(|r| (r.x0, r.h[1])).collect();
    lorentzian_fit(&samples, s0, s)
}

/// Divides the measured columns of each row by the largest measured `H_s`.
pub fn normalize_rows(rows: &mut [PrecisionRow]) {
    let peak = rows.iter().map(|r| r.h[1]).fold(0.0, f64::max);
    if peak > 0.0 {
        for r in rows.iter_mut() {
            for h in r.h.iter_mut() {
                *h /= peak;
            }
        }
    }
}
