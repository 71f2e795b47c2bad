//! Lorentzian model of the separation precision versus displacement,
//! `H(x0) = ℓ₁ s² / (1 + ℓ₂ (x0 − s0 + ℓ₃ s)² / s²)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::NelderMead;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    /// RMS residual relative to the fitted peak height.
    pub residual: f64,
    pub iterations: usize,
}

impl LorentzianFit {
    pub fn evaluate(&self, x0: f64, s0: f64, s: f64) -> f64 {
        let u = (x0 - s0) / s + self.l3;
        self.l1 * s * s / (1.0 + self.l2 * u * u)
    }

    /// Peak position `s0 − ℓ₃ s`.
    pub fn center(&self, s0: f64, s: f64) -> f64 {
        s0 - self.l3 * s
    }

    /// Half width at half maximum, `s/√ℓ₂`.
    pub fn half_width(&self, s: f64) -> f64 {
        s / self.l2.sqrt()
    }
}

/// Least-squares fit to `(x0, H)` samples. Needs at least seven samples with
/// the maximum in the interior.
pub fn lorentzian_fit(samples: &[(f64, f64)], s0: f64, s: f64) -> Result<LorentzianFit> {
    if samples.len() < 7 {
        return Err(Error::FitFailure(format!(
            "{} samples, need at least 7",
            samples.len()
        )));
    }
    if !(s > 0.0) {
        return Err(Error::FitFailure(
            "separation scale must be positive".into(),
        ));
    }
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .map(|&(x, h)| ((x - s0) / s, h / (s * s)))
        .collect();
    if pts.iter().any(|(u, y)| !u.is_finite() || !y.is_finite()) {
        return Err(Error::FitFailure("non-finite sample".into()));
    }
    let peak = (0..pts.len())
        .max_by(|&a, &b| pts[a].1.total_cmp(&pts[b].1))
        .unwrap_or(0);
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if pts[peak].0 <= lo || pts[peak].0 >= hi || !(pts[peak].1 > 0.0) {
        return Err(Error::FitFailure(
            "peak is not bracketed by the samples".into(),
        ));
    }

    let (l1, l2, l3) = initial_guess(&pts, peak);
    let cost = |p: &[f64]| {
        let (l1, l2, l3) = (p[0].exp(), p[1].exp(), p[2]);
        pts.iter()
            .map(|&(u, y)| {
                let v = u + l3;
                let r = y - l1 / (1.0 + l2 * v * v);
                r * r
            })
            .sum::<f64>()
    };
    let start = [l1.ln(), l2.ln(), l3];
    let optimizer = NelderMead::default();
    let mut m = optimizer.minimize(cost, &start, &[0.05, 0.05, 0.05 * l3.abs().max(0.1)]);
    let mut iterations = m.iterations;
    if m.converged {
        // A restart from the optimum guards against a collapsed simplex.
        let again = optimizer.minimize(cost, &m.x, &[1e-4, 1e-4, 1e-4]);
        iterations += again.iterations;
        if again.value <= m.value {
            m = again;
        }
    }
    if !m.converged {
        return Err(Error::FitFailure(format!(
            "no convergence after {iterations} iterations (ℓ1 = {:.6e}, ℓ2 = {:.6e}, ℓ3 = {:.6e}, cost {:.3e})",
            m.x[0].exp(),
            m.x[1].exp(),
            m.x[2],
            m.value
        )));
    }
    let l1 = m.x[0].exp();
    Ok(LorentzianFit {
        l1,
        l2: m.x[1].exp(),
        l3: m.x[2],
        residual: (m.value / pts.len() as f64).sqrt() / l1,
        iterations,
    })
}

/// `1/y` of a Lorentzian is a quadratic `A + Bu + Cu²`; fit it over the points
/// above half maximum.
fn initial_guess(pts: &[(f64, f64)], peak: usize) -> (f64, f64, f64) {
    let ymax = pts[peak].1;
    let mut core: Vec<(f64, f64)> = pts
        .iter()
        .copied()
        .filter(|&(_, y)| y >= 0.5 * ymax)
        .collect();
    if core.len() < 3 {
        let lo = peak.saturating_sub(1);
        core = pts[lo..(lo + 3).min(pts.len())].to_vec();
    }
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for &(u, y) in &core {
        let row = nalgebra::Vector3::new(1.0, u, u * u);
        ata += row * row.transpose();
        atb += row / y;
    }
    let fallback = (ymax, 1.0, -pts[peak].0);
    let Some(sol) = ata.lu().solve(&atb) else {
        return fallback;
    };
    let (a, b, c) = (sol[0], sol[1], sol[2]);
    if !(c > 0.0) {
        return fallback;
    }
    let l3 = b / (2.0 * c);
    let l1 = 1.0 / (a - b * b / (4.0 * c));
    let l2 = c * l1;
    if l1 > 0.0 && l2 > 0.0 && l1.is_finite() && l2.is_finite() {
        (l1, l2, l3)
    } else {
        fallback
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_lorentzian() {
        let truth = LorentzianFit {
            l1: 3.0,
            l2: 5.0,
            l3: 0.2,
            residual: 0.0,
            iterations: 0,
        };
        let (s0, s) = (0.1, 0.02);
        let samples: Vec<(f64, f64)> = (0..21)
            .map(|i| {
                let x = s0 - 5.0 * s + 10.0 * s * i as f64 / 20.0;
                (x, truth.evaluate(x, s0, s))
            })
            .collect();
        let fit = lorentzian_fit(&samples, s0, s).unwrap();
        assert!((fit.l1 - 3.0).abs() < 1e-8);
        assert!((fit.l2 - 5.0).abs() < 1e-8);
        assert!((fit.l3 - 0.2).abs() < 1e-8);
        assert!(fit.residual < 1e-10);
    }

    #[test]
    fn rejects_unbracketed_peak() {
        let samples: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(
            lorentzian_fit(&samples, 0.0, 1.0),
            Err(Error::FitFailure(_))
        ));
        assert!(lorentzian_fit(&samples[..5], 0.0, 1.0).is_err());
    }
}
