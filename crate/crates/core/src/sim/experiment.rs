//! Repeated sample-and-estimate runs compared against the Cramér–Rao bounds.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::covariance_bound_known;
use crate::params::SourceParams;
use crate::povm::{build_phi_family, classical_fim, optimal_displacement, outcome_probabilities};
use crate::quantum::qfim_closed;
use crate::scan::Evaluator;
use crate::sim::estimate::{ml_estimate, EstimationResult, MlOptions, PovmModel};
use crate::sim::rng::replication_rng;
use crate::sim::sampling::sample_multinomial;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub theta: SourceParams<f64>,
    pub phi: f64,
    /// Measurement displacement; the weighted centroid when absent.
    #[serde(default)]
    pub x0: Option<f64>,
    pub n_photons: u64,
    pub replications: usize,
    pub seed: u64,
    /// Parameters `(s0, s, q)` treated as known and held at the truth.
    #[serde(default)]
    pub fixed: [bool; 3],
}

impl ExperimentConfig {
    pub fn displacement(&self) -> f64 {
        self.x0.unwrap_or_else(|| optimal_displacement(&self.theta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub theta_true: [f64; 3],
    pub estimator_mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
    /// `F⁻¹/N` for the simulated measurement, over the estimated parameters.
    pub crlb_classical: [[f64; 3]; 3],
    /// `Q⁻¹/N`.
    pub crlb_quantum: [[f64; 3]; 3],
    pub n_photons: u64,
    pub replications: usize,
    pub seed: u64,
    pub failures: usize,
}

impl ExperimentSummary {
    /// `Var(θ̂_α) / bound_αα` for each parameter.
    pub fn variance_ratio(&self, bound: &[[f64; 3]; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.covariance[a][a] / bound[a][a])
    }
}

pub(crate) fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
}

/// Sample mean and unbiased covariance of `estimates`.
pub fn moments(estimates: &[[f64; 3]]) -> ([f64; 3], [[f64; 3]; 3]) {
    let n = estimates.len();
    if n == 0 {
        return ([f64::NAN; 3], [[f64::NAN; 3]; 3]);
    }
    let mut mean = Vector3::zeros();
    for e in estimates {
        mean += Vector3::from(*e);
    }
    mean /= n as f64;
    let mut cov = Matrix3::zeros();
    for e in estimates {
        let d = Vector3::from(*e) - mean;
        cov += d * d.transpose();
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    ([mean[0], mean[1], mean[2]], to_rows(&cov))
}

/// Runs `replications` independent cycles; replication `i` draws from stream
/// `i` of `seed`, so the summary does not depend on the thread count.
pub fn crlb_experiment(
    evaluator: &Evaluator,
    config: &ExperimentConfig,
) -> Result<ExperimentSummary> {
    if config.n_photons == 0 || config.replications == 0 {
        return Err(Error::InvalidParameter(
            "photons and replications must be positive".into(),
        ));
    }
    let x0 = config.displacement();
    let spec = build_phi_family(config.phi, x0)?;
    let basis = evaluator.basis_at(x0);
    let model = PovmModel::new(spec.clone(), &basis);
    let theta = &config.theta;
    let p = outcome_probabilities(&spec, &basis, theta)?;
    let n = config.n_photons as f64;
    let f = classical_fim(&spec, &basis, theta)?;
    let q = qfim_closed(evaluator.model(), theta)?;
    let options = MlOptions {
        fixed: config.fixed,
        ..MlOptions::default()
    };

    let results: Vec<Option<EstimationResult>> = (0..config.replications)
        .into_par_iter()
        .map(|i| {
            let mut rng = replication_rng(config.seed, i as u64);
            let counts = sample_multinomial(p.as_slice(), config.n_photons, &mut rng).ok()?;
            let est = ml_estimate(&counts.as_weights(), &model, theta, &options).ok()?;
            est.converged.then_some(est)
        })
        .collect();
    let estimates: Vec<[f64; 3]> = results
        .iter()
        .flatten()
        .map(|e| e.theta.to_array())
        .collect();
    let (mean, cov) = moments(&estimates);
    Ok(ExperimentSummary {
        theta_true: theta.to_array(),
        estimator_mean: mean,
        covariance: cov,
        crlb_classical: to_rows(&(covariance_bound_known(f.matrix(), config.fixed)? / n)),
        crlb_quantum: to_rows(&(covariance_bound_known(q.matrix(), config.fixed)? / n)),
        n_photons: config.n_photons,
        replications: config.replications,
        seed: config.seed,
        failures: config.replications - estimates.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psf::PsfModel;

    #[test]
    fn moments_of_known_sample() {
        let (m, c) = moments(&[[1.0, 0.0, 2.0], [3.0, 0.0, 2.0]]);
        assert_eq!(m, [2.0, 0.0, 2.0]);
        assert_eq!(c[0][0], 2.0);
        assert_eq!(c[1][1], 0.0);
    }

    #[test]
    fn summary_is_deterministic() {
        let ev = Evaluator::new(PsfModel::gaussian(1.0).unwrap(), 30).unwrap();
        let config = ExperimentConfig {
            theta: SourceParams::new(0.0, 0.2, 0.4).unwrap(),
            phi: 1.3,
            x0: None,
            n_photons: 20_000,
            replications: 8,
            seed: 11,
            fixed: [false, false, true],
        };
        let a = serde_json::to_string(&crlb_experiment(&ev, &config).unwrap()).unwrap();
        let b = serde_json::to_string(&crlb_experiment(&ev, &config).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
