//! Multinomial photon counts.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::basis::OrthonormalBasis;
use crate::error::{Error, Result};
use crate::params::SourceParams;
use crate::povm::{outcome_probabilities, PovmSpec};
use crate::sim::rng::replication_rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl OutcomeCounts {
    pub fn new(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn as_weights(&self) -> Vec<f64> {
        self.counts.iter().map(|&n| n as f64).collect()
    }
}

/// Sequential conditional-binomial draw of `n` events over `probs`.
pub fn sample_multinomial<R: Rng + ?Sized>(
    probs: &[f64],
    n: u64,
    rng: &mut R,
) -> Result<OutcomeCounts> {
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidParameter(
            "probabilities must be finite and non-negative".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("probabilities sum to zero".into()));
    }
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = n;
    let mut mass = total;
    for (j, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if j + 1 == probs.len() {
            counts[j] = remaining;
            break;
        }
        let conditional = if mass > 0.0 {
            (p / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = if conditional <= 0.0 {
            0
        } else if conditional >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, conditional)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?
                .sample(rng)
        };
        counts[j] = draw;
        remaining -= draw;
        mass -= p;
    }
    Ok(OutcomeCounts::new(counts))
}

/// Counts for `n` photons through `spec`, drawn from stream 0 of `seed`.
pub fn sample_outcomes(
    spec: &PovmSpec<f64>,
    basis: &OrthonormalBasis<f64>,
    theta: &SourceParams<f64>,
    n: u64,
    seed: u64,
) -> Result<OutcomeCounts> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "photon count must be at least 1".into(),
        ));
    }
    let p = outcome_probabilities(spec, basis, theta)?;
    sample_multinomial(p.as_slice(), n, &mut replication_rng(seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_outcomes_stay_empty() {
        let p = [0.0, 0.0, 0.4, 0.6];
        for seed in 0..20 {
            let c = sample_multinomial(&p, 1_000_000, &mut replication_rng(seed, 0)).unwrap();
            assert_eq!(c.counts[0], 0);
            assert_eq!(c.counts[1], 0);
            assert_eq!(c.total, 1_000_000);
        }
    }

    #[test]
    fn frequencies_within_five_standard_errors() {
        let p = [0.05, 0.15, 0.3, 0.5];
        let n = 20_000u64;
        for seed in 0..100 {
            let c = sample_multinomial(&p, n, &mut replication_rng(seed, 1)).unwrap();
            for (j, &pj) in p.iter().enumerate() {
                let se = (pj * (1.0 - pj) / n as f64).sqrt();
                let f = c.counts[j] as f64 / n as f64;
                assert!((f - pj).abs() < 5.0 * se, "seed {seed} outcome {j}");
            }
        }
    }

    #[test]
    fn same_seed_same_counts() {
        let p = [0.1, 0.2, 0.3, 0.4];
        let a = sample_multinomial(&p, 12345, &mut replication_rng(9, 2)).unwrap();
        let b = sample_multinomial(&p, 12345, &mut replication_rng(9, 2)).unwrap();
        assert_eq!(a, b);
    }
}
