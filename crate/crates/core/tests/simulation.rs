use std::f64::consts::PI;

use rayon::prelude::*;

use superres::direct::direct_imaging_fim;
use superres::fisher::covariance_bound;
use superres::params::SourceParams;
use superres::povm::optimal_displacement;
use superres::psf::PsfModel;
use superres::scan::Evaluator;
use superres::sim::{
    adaptive_replication, crlb_experiment, direct_only_estimate, moments, AdaptiveSchedule,
    ExperimentConfig,
};

fn evaluator() -> Evaluator {
    Evaluator::new(PsfModel::gaussian(1.0).unwrap(), 30).unwrap()
}

fn variance(values: &[f64]) -> f64 {
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
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

#[test]
fn bias_shrinks_with_photon_count() {
    let ev = evaluator();
    let truth = SourceParams::new(0.0, 0.5, 0.5).unwrap();
    let bias = |photons: u64| {
        let errors: Vec<f64> = (0..20)
            .map(|seed| {
                let config = ExperimentConfig {
                    theta: truth.clone(),
                    phi: 9.0 * PI / 20.0,
                    x0: None,
                    n_photons: photons,
                    replications: 10,
                    seed,
                    fixed: [false, false, true],
                };
                let summary = crlb_experiment(&ev, &config).unwrap();
                (summary.estimator_mean[1] - truth.s()).abs()
            })
            .collect();
        median(errors)
    };
    let (coarse, fine) = (bias(10_000), bias(1_000_000));
    assert!(fine < coarse, "{fine} vs {coarse}");
}

#[test]
fn empirical_covariance_dominates_quantum_bound() {
    let ev = evaluator();
    for (truth, fixed) in [
        (
            SourceParams::new(0.0, 0.1, 0.5).unwrap(),
            [false, false, true],
        ),
        (SourceParams::new(0.1, 0.6, 0.3).unwrap(), [false; 3]),
    ] {
        let config = ExperimentConfig {
            theta: truth,
            phi: 9.0 * PI / 20.0,
            x0: None,
            n_photons: 200_000,
            replications: 300,
            seed: 77,
            fixed,
        };
        let s = crlb_experiment(&ev, &config).unwrap();
        assert_eq!(s.failures, 0);
        // Three standard errors of a variance estimate from 300 draws.
        let slack = 1.0 - 3.0 * (2.0f64 / 300.0).sqrt();
        for a in (0..3).filter(|&a| !fixed[a]) {
            assert!(
                s.covariance[a][a] >= slack * s.crlb_quantum[a][a],
                "parameter {a}: {} vs {}",
                s.covariance[a][a],
                s.crlb_quantum[a][a]
            );
            assert!(s.crlb_classical[a][a] >= s.crlb_quantum[a][a] * (1.0 - 1e-9));
        }
    }
}

#[test]
fn misaligned_measurement_beats_direct_imaging_bound() {
    let ev = evaluator();
    let truth = SourceParams::new(0.0, 0.03, 0.1).unwrap();
    let config = ExperimentConfig {
        theta: truth.clone(),
        phi: 9.0 * PI / 20.0,
        x0: Some(optimal_displacement(&truth) + 0.4),
        n_photons: 100_000,
        replications: 50,
        seed: 3,
        fixed: [false; 3],
    };
    let s = crlb_experiment(&ev, &config).unwrap();
    let direct =
        covariance_bound(direct_imaging_fim(ev.model(), &truth).unwrap().matrix()).unwrap();
    assert!(s.covariance[1][1] < direct[(1, 1)] / config.n_photons as f64);
}

fn schedule(photons: u64, fraction: f64) -> AdaptiveSchedule {
    AdaptiveSchedule {
        total_photons: photons,
        first_fraction: fraction,
        phi: 9.0 * PI / 20.0,
        fixed: [false, false, true],
    }
}

#[test]
fn balanced_stage_one_finds_the_centroid() {
    let ev = evaluator();
    let truth = SourceParams::new(0.2, 0.1, 0.5).unwrap();
    for seed in 0..5 {
        let out = adaptive_replication(&ev, &truth, &schedule(200_000, 0.5), seed, 0).unwrap();
        let est = out.stage_one.estimate.as_ref().unwrap();
        assert!((out.stage_one.x0 - est.theta.s0()).abs() < 1e-12);
        assert!((out.stage_one.x0 - truth.s0()).abs() < 0.01);
    }
}

#[test]
fn second_stage_improves_on_the_first() {
    let ev = evaluator();
    let truth = SourceParams::new(0.0, 0.05, 0.3).unwrap();
    let runs: Vec<_> = (0..30u64)
        .into_par_iter()
        .map(|i| adaptive_replication(&ev, &truth, &schedule(1_000_000, 0.2), 11, i).unwrap())
        .collect();
    let first: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.stage_one.estimate.as_ref().map(|e| e.theta.s()))
        .collect();
    let second: Vec<f64> = runs.iter().map(|r| r.estimate.theta.s()).collect();
    assert!(first.len() >= 25);
    assert!(variance(&second) < variance(&first));
}

#[test]
fn adaptive_beats_direct_imaging_alone() {
    let ev = evaluator();
    let truth = SourceParams::new(0.0, 0.03, 0.3).unwrap();
    let photons = 1_000_000;
    let pairs: Vec<(f64, Option<f64>)> = (0..30u64)
        .into_par_iter()
        .map(|i| {
            let adaptive =
                adaptive_replication(&ev, &truth, &schedule(photons, 0.2), 21, i).unwrap();
            let direct = direct_only_estimate(&ev, &truth, photons, [false, false, true], 21, i)
                .ok()
                .map(|e| e.theta.s());
            (adaptive.estimate.theta.s(), direct)
        })
        .collect();
    let adaptive: Vec<[f64; 3]> = pairs.iter().map(|p| [0.0, p.0, 0.0]).collect();
    let direct: Vec<[f64; 3]> = pairs
        .iter()
        .filter_map(|p| p.1.map(|s| [0.0, s, 0.0]))
        .collect();
    let (_, va) = moments(&adaptive);
    let (_, vd) = moments(&direct);
    assert!(
        vd[1][1] / va[1][1] > 1.0,
        "direct {} vs adaptive {}",
        vd[1][1],
        va[1][1]
    );
}
