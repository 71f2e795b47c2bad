//! Two-stage adaptive estimation: locate the centroid by direct imaging,
//! then measure with the φ-family at the estimated centroid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::SourceParams;
use crate::povm::{build_phi_family, optimal_displacement, outcome_probabilities};
use crate::scan::Evaluator;
use crate::sim::estimate::{
    ml_estimate, ml_estimate_multi, BinnedDirectModel, EstimationResult, LikelihoodModel,
    MlOptions, PovmModel,
};
use crate::sim::rng::replication_rng;
use crate::sim::sampling::{sample_multinomial, OutcomeCounts};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSchedule {
    pub total_photons: u64,
    /// Share of photons spent on direct imaging.
    pub first_fraction: f64,
    pub phi: f64,
    /// Parameters `(s0, s, q)` treated as known in both stages.
    #[serde(default)]
    pub fixed: [bool; 3],
}

impl AdaptiveSchedule {
    /// Photon split `(N₁, N₂)`; each stage gets at least one photon.
    pub fn split(&self) -> Result<(u64, u64)> {
        if self.total_photons < 2 {
            return Err(Error::InvalidParameter(
                "need at least two photons for two stages".into(),
            ));
        }
        if !(self.first_fraction > 0.0 && self.first_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "first-stage fraction {} outside (0, 1)",
                self.first_fraction
            )));
        }
        let n1 = ((self.total_photons as f64 * self.first_fraction).round() as u64)
            .clamp(1, self.total_photons - 1);
        Ok((n1, self.total_photons - n1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOne {
    pub photons: u64,
    /// Direct-imaging estimate; absent when the fit failed.
    pub estimate: Option<EstimationResult>,
    pub x0: f64,
    /// Set when `x0` fell back to the histogram mean.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveOutcome {
    pub theta_true: [f64; 3],
    pub stage_one: StageOne,
    pub stage_two_photons: u64,
    pub estimate: EstimationResult,
    pub seed: u64,
}

/// Occupancy-weighted mean, variance and third central moment of the
/// interior bins.
fn histogram_moments(counts: &OutcomeCounts, centers: &[f64]) -> Option<(f64, f64, f64)> {
    let interior = &counts.counts[1..=centers.len()];
    let n: u64 = interior.iter().sum();
    if n == 0 {
        return None;
    }
    let n = n as f64;
    let mean = interior
        .iter()
        .zip(centers)
        .map(|(&c, &x)| c as f64 * x)
        .sum::<f64>()
        / n;
    let central = |k: i32| {
        interior
            .iter()
            .zip(centers)
            .map(|(&c, &x)| c as f64 * (x - mean).powi(k))
            .sum::<f64>()
            / n
    };
    Some((mean, central(2), central(3)))
}

/// Matches the first three moments of a two-point mixture blurred by the PSF.
fn moment_start(mean: f64, var: f64, mu3: f64, sigma: f64) -> SourceParams<f64> {
    let a = var - sigma * sigma;
    let fallback = || SourceParams::new(mean, 0.5 * sigma, 0.5).expect("valid start");
    if !(a > 0.0) {
        return fallback();
    }
    let t = mu3 / a;
    let s = (t * t + 4.0 * a).sqrt();
    let q = (0.5 * (1.0 - t / s)).clamp(0.05, 0.95);
    SourceParams::new(mean + 0.5 * t, s.min(3.0 * sigma), q).unwrap_or_else(|_| fallback())
}

/// Known parameters overwrite the corresponding entries of `start`.
fn with_known(
    start: &SourceParams<f64>,
    truth: &SourceParams<f64>,
    fixed: [bool; 3],
) -> SourceParams<f64> {
    let pick = |i: usize, a: f64, b: f64| if fixed[i] { b } else { a };
    SourceParams::new(
        pick(0, start.s0(), truth.s0()),
        pick(1, start.s(), truth.s()),
        pick(2, start.q(), truth.q()),
    )
    .unwrap_or_else(|_| truth.clone())
}

fn direct_fit(
    evaluator: &Evaluator,
    counts: &OutcomeCounts,
    model: &BinnedDirectModel,
    truth: &SourceParams<f64>,
    options: &MlOptions,
) -> (Option<EstimationResult>, Option<f64>) {
    let centers = model.centers();
    let Some((mean, var, mu3)) = histogram_moments(counts, &centers) else {
        return (None, None);
    };
    let start = with_known(
        &moment_start(mean, var, mu3, evaluator.model().sigma()),
        truth,
        options.fixed,
    );
    let fit = ml_estimate(&counts.as_weights(), model, &start, options)
        .ok()
        .filter(|e| e.converged);
    (fit, Some(mean))
}

/// Runs both stages on photons drawn from `truth`, all from stream 0 of `seed`.
pub fn adaptive_two_stage(
    evaluator: &Evaluator,
    truth: &SourceParams<f64>,
    schedule: &AdaptiveSchedule,
    seed: u64,
) -> Result<AdaptiveOutcome> {
    adaptive_replication(evaluator, truth, schedule, seed, 0)
}

/// As [`adaptive_two_stage`], drawing from stream `index`.
pub fn adaptive_replication(
    evaluator: &Evaluator,
    truth: &SourceParams<f64>,
    schedule: &AdaptiveSchedule,
    seed: u64,
    index: u64,
) -> Result<AdaptiveOutcome> {
    let (n1, n2) = schedule.split()?;
    let options = MlOptions {
        fixed: schedule.fixed,
        ..MlOptions::default()
    };
    let mut rng = replication_rng(seed, index);
    let direct = BinnedDirectModel::standard(evaluator.model().clone(), truth.s0())?;
    let mut p = vec![0.0; direct.outcomes()];
    direct.probabilities(truth, &mut p);
    let counts = sample_multinomial(&p, n1, &mut rng)?;
    let (fit, mean) = direct_fit(evaluator, &counts, &direct, truth, &options);
    let (x0, fallback) = match (&fit, mean) {
        (Some(e), _) => (optimal_displacement(&e.theta), false),
        (None, Some(m)) => (m, true),
        (None, None) => (truth.s0(), true),
    };

    let spec = build_phi_family(schedule.phi, x0)?;
    let basis = evaluator.basis_at(x0);
    let probs = outcome_probabilities(&spec, &basis, truth)?;
    let second = sample_multinomial(probs.as_slice(), n2, &mut rng)?;
    let model = PovmModel::new(spec, &basis);
    let base = fit.as_ref().map(|e| e.theta.clone()).unwrap_or_else(|| {
        let guess =
            SourceParams::new(x0, 0.5 * evaluator.model().sigma(), 0.5).expect("valid start");
        with_known(&guess, truth, schedule.fixed)
    });
    let mut starts = vec![base.clone()];
    for factor in [0.5, 2.0].into_iter().filter(|_| !schedule.fixed[1]) {
        if let Ok(t) = base.with_s(base.s() * factor) {
            starts.push(t);
        }
    }
    let estimate = ml_estimate_multi(&second.as_weights(), &model, &starts, &options)?;
    Ok(AdaptiveOutcome {
        theta_true: truth.to_array(),
        stage_one: StageOne {
            photons: n1,
            estimate: fit,
            x0,
            fallback,
        },
        stage_two_photons: n2,
        estimate,
        seed,
    })
}

/// Spends every photon on binned direct imaging, drawing from stream `index`.
pub fn direct_only_estimate(
    evaluator: &Evaluator,
    truth: &SourceParams<f64>,
    photons: u64,
    fixed: [bool; 3],
    seed: u64,
    index: u64,
) -> Result<EstimationResult> {
    if photons == 0 {
        return Err(Error::InvalidParameter(
            "photon count must be at least 1".into(),
        ));
    }
    let direct = BinnedDirectModel::standard(evaluator.model().clone(), truth.s0())?;
    let mut p = vec![0.0; direct.outcomes()];
    direct.probabilities(truth, &mut p);
    let counts = sample_multinomial(&p, photons, &mut replication_rng(seed, index))?;
    let options = MlOptions {
        fixed,
        ..MlOptions::default()
    };
    match direct_fit(evaluator, &counts, &direct, truth, &options) {
        (Some(e), _) => Ok(e),
        _ => Err(Error::FitFailure(
            "direct-imaging likelihood did not converge".into(),
        )),
    }
}
