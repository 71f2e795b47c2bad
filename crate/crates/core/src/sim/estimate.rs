//! Maximum-likelihood estimation of `(s0, s, q)` from outcome counts.

use serde::{Deserialize, Serialize};

use crate::basis::OrthonormalBasis;
use crate::direct::intensity;
use crate::error::{Error, Result};
use crate::optim::NelderMead;
use crate::params::SourceParams;
use crate::povm::{probabilities_unchecked, PovmSpec};
use crate::psf::PsfModel;

/// A finite-outcome statistical model `θ ↦ p(θ)`.
pub trait LikelihoodModel: Sync {
    fn outcomes(&self) -> usize;

    fn probabilities(&self, theta: &SourceParams<f64>, out: &mut [f64]);

    /// An equivalent starting point on the other side of the label-swap
    /// symmetry, if the model has one worth trying.
    fn mirror(&self, _theta: &SourceParams<f64>) -> Option<SourceParams<f64>> {
        None
    }
}

/// The four-outcome measurement at its own displacement.
#[derive(Debug, Clone)]
pub struct PovmModel {
    spec: PovmSpec<f64>,
    basis: OrthonormalBasis<f64>,
}

impl PovmModel {
    pub fn new(spec: PovmSpec<f64>, basis: &OrthonormalBasis<f64>) -> Self {
        let basis = basis.displaced(spec.x0());
        Self { spec, basis }
    }

    pub fn spec(&self) -> &PovmSpec<f64> {
        &self.spec
    }

    pub fn basis(&self) -> &OrthonormalBasis<f64> {
        &self.basis
    }
}

impl LikelihoodModel for PovmModel {
    fn outcomes(&self) -> usize {
        4
    }

    fn probabilities(&self, theta: &SourceParams<f64>, out: &mut [f64]) {
        let p = probabilities_unchecked(&self.spec, &self.basis, theta);
        out[..4].copy_from_slice(p.as_slice());
    }

    fn mirror(&self, theta: &SourceParams<f64>) -> Option<SourceParams<f64>> {
        Some(theta.mirrored(self.spec.x0()))
    }
}

/// Pixelated direct imaging: uniform bins of width `bin_width` over
/// `center ± half_range`, plus one overflow bin on each side.
#[derive(Debug, Clone)]
pub struct BinnedDirectModel {
    model: PsfModel<f64>,
    edges: Vec<f64>,
}

/// Five-point Gauss–Legendre nodes and weights on `[-1, 1]`.
const GL5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Panels used for each overflow integral, and its extent in PSF widths.
const TAIL_PANELS: usize = 24;
const TAIL_REACH: f64 = 12.0;

impl BinnedDirectModel {
    pub fn new(model: PsfModel<f64>, center: f64, half_range: f64, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && half_range >= bin_width) {
            return Err(Error::InvalidParameter(
                "bin width must be positive and below the range".into(),
            ));
        }
        let bins = (2.0 * half_range / bin_width).round() as usize;
        let edges = (0..=bins)
            .map(|i| center - half_range + 2.0 * half_range * i as f64 / bins as f64)
            .collect();
        Ok(Self { model, edges })
    }

    /// Bin width `σ/10` over `±6σ`.
    pub fn standard(model: PsfModel<f64>, center: f64) -> Result<Self> {
        let sigma = model.sigma();
        Self::new(model, center, 6.0 * sigma, 0.1 * sigma)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Midpoints of the interior bins, in outcome order after the lower
    /// overflow bin.
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    fn integrate(&self, theta: &SourceParams<f64>, a: f64, b: f64) -> f64 {
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        half * GL5
            .iter()
            .map(|&(t, w)| w * intensity(&self.model, theta, mid + half * t))
            .sum::<f64>()
    }

    fn tail(&self, theta: &SourceParams<f64>, a: f64, b: f64) -> f64 {
        let h = (b - a) / TAIL_PANELS as f64;
        (0..TAIL_PANELS)
            .map(|i| self.integrate(theta, a + h * i as f64, a + h * (i + 1) as f64))
            .sum()
    }
}

impl LikelihoodModel for BinnedDirectModel {
    fn outcomes(&self) -> usize {
        self.edges.len() + 1
    }

    fn probabilities(&self, theta: &SourceParams<f64>, out: &mut [f64]) {
        let reach = TAIL_REACH * self.model.sigma() + theta.s();
        let (first, last) = (self.edges[0], *self.edges.last().unwrap_or(&0.0));
        out[0] = self
            .tail(theta, first.min(theta.s0()) - reach, first)
            .max(0.0);
        for (k, w) in self.edges.windows(2).enumerate() {
            out[k + 1] = self.integrate(theta, w[0], w[1]).max(0.0);
        }
        let n = self.outcomes();
        out[n - 1] = self
            .tail(theta, last, last.max(theta.s0()) + reach)
            .max(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlOptions {
    /// Upper bound on the separation, in the same units as `σ`.
    pub s_max: f64,
    /// `q` is kept inside `[q_eps, 1 − q_eps]`.
    pub q_eps: f64,
    /// Parameters `(s0, s, q)` held at their starting values.
    pub fixed: [bool; 3],
    pub optimizer: NelderMead,
}

impl Default for MlOptions {
    fn default() -> Self {
        Self {
            s_max: 4.0,
            q_eps: 1e-6,
            fixed: [false; 3],
            optimizer: NelderMead::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta: SourceParams<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Unconstrained coordinates `(s0, u, v)`; `s` folds `u` into `[0, s_max]`
/// with a triangle wave and `q` is a squashed logistic of `v`.
struct Transform {
    s_max: f64,
    q_eps: f64,
}

impl Transform {
    fn to_theta(&self, z: &[f64]) -> SourceParams<f64> {
        let t = (z[1] / self.s_max).abs() % 2.0;
        let s = self.s_max * if t <= 1.0 { t } else { 2.0 - t };
        let q = (self.q_eps + (1.0 - 2.0 * self.q_eps) / (1.0 + (-z[2]).exp()))
            .clamp(self.q_eps, 1.0 - self.q_eps);
        SourceParams::new(z[0], s, q).expect("transform stays in the domain")
    }

    fn from_theta(&self, theta: &SourceParams<f64>) -> [f64; 3] {
        let s = theta.s().clamp(0.0, self.s_max);
        let f = ((theta.q() - self.q_eps) / (1.0 - 2.0 * self.q_eps)).clamp(1e-12, 1.0 - 1e-12);
        [theta.s0(), s, (f / (1.0 - f)).ln()]
    }
}

/// Maximizes `Σ_j n_j ln p_j(θ)` starting from `start` and, when the model
/// offers one, its mirror image. Equal optima resolve to `q ≤ 1/2`.
pub fn ml_estimate<M: LikelihoodModel + ?Sized>(
    weights: &[f64],
    model: &M,
    start: &SourceParams<f64>,
    options: &MlOptions,
) -> Result<EstimationResult> {
    ml_estimate_multi(weights, model, std::slice::from_ref(start), options)
}

/// As [`ml_estimate`], trying every start in `starts`.
pub fn ml_estimate_multi<M: LikelihoodModel + ?Sized>(
    weights: &[f64],
    model: &M,
    starts: &[SourceParams<f64>],
    options: &MlOptions,
) -> Result<EstimationResult> {
    let k = model.outcomes();
    if weights.len() != k {
        return Err(Error::InvalidParameter(format!(
            "{} counts for a {k}-outcome model",
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    let occupied = weights.iter().filter(|&&w| w > 0.0).count();
    if !(total > 0.0) || occupied < 2 {
        return Err(Error::DegenerateData(format!(
            "{occupied} occupied outcome(s); the likelihood is flat"
        )));
    }
    let free: Vec<usize> = (0..3).filter(|&i| !options.fixed[i]).collect();
    if free.is_empty() {
        return Err(Error::InvalidParameter("every parameter is fixed".into()));
    }
    let transform = Transform {
        s_max: options.s_max,
        q_eps: options.q_eps,
    };
    // Offset by the saturated log-likelihood so values near the optimum are
    // small and well resolved.
    let saturated: f64 = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| w * (w / total).ln())
        .sum();
    let negative_ll = |z: &[f64]| -> f64 {
        let theta = transform.to_theta(z);
        let mut p = vec![0.0; k];
        model.probabilities(&theta, &mut p);
        let mut acc = saturated;
        for (&w, &pj) in weights.iter().zip(&p) {
            if w > 0.0 {
                if !(pj > 0.0) {
                    return f64::INFINITY;
                }
                acc -= w * pj.ln();
            }
        }
        acc
    };

    let mut candidates: Vec<SourceParams<f64>> = Vec::new();
    for s in starts {
        candidates.push(s.clone());
        // The label swap moves q, so it is only a valid start when q is free.
        if !options.fixed[2] {
            if let Some(m) = model.mirror(s) {
                candidates.push(m);
            }
        }
    }
    let mut best: Option<EstimationResult> = None;
    for start in &candidates {
        let z0 = transform.from_theta(start);
        let expand = |y: &[f64]| {
            let mut z = z0;
            for (&i, &v) in free.iter().zip(y) {
                z[i] = v;
            }
            z
        };
        let reduced = |y: &[f64]| negative_ll(&expand(y));
        let y0: Vec<f64> = free.iter().map(|&i| z0[i]).collect();
        let all_steps = [
            0.05 * options.s_max.min(1.0),
            0.1 * z0[1].abs().max(0.05),
            0.3,
        ];
        let steps: Vec<f64> = free.iter().map(|&i| all_steps[i]).collect();
        let fine: Vec<f64> = free.iter().map(|&i| [1e-4, 1e-4, 1e-3][i]).collect();
        let mut m = options.optimizer.minimize(reduced, &y0, &steps);
        let mut iterations = m.iterations;
        if m.converged {
            let again = options.optimizer.minimize(reduced, &m.x, &fine);
            iterations += again.iterations;
            let converged = again.converged;
            if again.value <= m.value {
                m = again;
            }
            m.converged = converged;
        }
        let theta = transform.to_theta(&expand(&m.x));
        let candidate = EstimationResult {
            log_likelihood: -(m.value - saturated),
            theta,
            converged: m.converged,
            iterations,
        };
        best = Some(match best {
            None => candidate,
            Some(b) => prefer(b, candidate),
        });
    }
    let best = best.ok_or_else(|| Error::InvalidParameter("no starting point".into()))?;
    if !best.log_likelihood.is_finite() {
        return Err(Error::DegenerateData(
            "no parameter value explains the counts".into(),
        ));
    }
    Ok(best)
}

fn prefer(a: EstimationResult, b: EstimationResult) -> EstimationResult {
    let tie = 1e-9 * (1.0 + a.log_likelihood.abs());
    if (a.log_likelihood - b.log_likelihood).abs() <= tie {
        if a.theta.q() <= 0.5 || b.theta.q() > 0.5 {
            a
        } else {
            b
        }
    } else if b.log_likelihood > a.log_likelihood {
        b
    } else {
        a
    }
}
