//! Direct imaging: position-resolved photon counting of the intensity.

use nalgebra::Matrix3;

use crate::error::Result;
use crate::fisher::{FisherKind, FisherMatrix};
use crate::params::SourceParams;
use crate::psf::PsfModel;
use crate::scalar::{lit, Real};

/// `I(x) = q Ψ(x − s0 − s/2)² + (1−q) Ψ(x − s0 + s/2)²`.
pub fn intensity<T: Real>(model: &PsfModel<T>, theta: &SourceParams<T>, x: T) -> T {
    let (p, m) = source_amplitudes(model, theta, x);
    theta.q() * p * p + (T::one() - theta.q()) * m * m
}

fn source_amplitudes<T: Real>(model: &PsfModel<T>, theta: &SourceParams<T>, x: T) -> (T, T) {
    let half: T = lit(0.5);
    let c = x - theta.s0();
    (
        model.value(0, c - half * theta.s()),
        model.value(0, c + half * theta.s()),
    )
}

/// `(I, ∂I/∂s0, ∂I/∂s, ∂I/∂q)` at `x`.
pub fn intensity_gradient<T: Real>(
    model: &PsfModel<T>,
    theta: &SourceParams<T>,
    x: T,
) -> (T, [T; 3]) {
    let half: T = lit(0.5);
    let two: T = lit(2.0);
    let q = theta.q();
    let c = x - theta.s0();
    let (up, um) = (c - half * theta.s(), c + half * theta.s());
    let (p, m) = (model.value(0, up), model.value(0, um));
    let (dp, dm) = (model.value(1, up), model.value(1, um));
    let gp = two * q * p * dp;
    let gm = two * (T::one() - q) * m * dm;
    let i = q * p * p + (T::one() - q) * m * m;
    (i, [-(gp + gm), half * (gm - gp), p * p - m * m])
}

/// Continuous-outcome Fisher matrix `∫ ∇I ∇Iᵀ / I dx`.
pub fn direct_imaging_fim<T: Real>(
    model: &PsfModel<T>,
    theta: &SourceParams<T>,
) -> Result<FisherMatrix<T>> {
    let score = |a: usize| {
        move |x: T| {
            let (i, g) = intensity_gradient(model, theta, x);
            if i > T::zero() {
                g[a] / i.sqrt()
            } else {
                T::zero()
            }
        }
    };
    let mut f = Matrix3::zeros();
    for a in 0..3 {
        for b in a..3 {
            let v = model.inner_product("direct imaging", theta.s0(), score(a), score(b))?;
            f[(a, b)] = v;
            f[(b, a)] = v;
        }
    }
    Ok(FisherMatrix::new(
        f,
        FisherKind::Classical,
        theta.clone(),
        model.descriptor().clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::qfim_closed;

    #[test]
    fn below_quantum_limit() {
        let model = PsfModel::gaussian(1.0).unwrap();
        for &(s, q) in &[(0.03, 0.5), (0.1, 0.3), (1.0, 0.1), (3.0, 0.4)] {
            let t = SourceParams::new(0.2, s, q).unwrap();
            let d = direct_imaging_fim(&model, &t).unwrap();
            let qf = qfim_closed(&model, &t).unwrap();
            assert!(
                crate::fisher::min_eigenvalue(&(qf.matrix() - d.matrix())) > -1e-10,
                "s = {s}"
            );
        }
    }

    #[test]
    fn rayleigh_curse_and_resolved_limit() {
        let model = PsfModel::gaussian(1.0).unwrap();
        let ratio = |s: f64| {
            let t = SourceParams::new(0.0, s, 0.5).unwrap();
            let hd = direct_imaging_fim(&model, &t)
                .unwrap()
                .precisions()
                .unwrap();
            let hq = qfim_closed(&model, &t).unwrap().precisions().unwrap();
            hd.s / hq.s
        };
        assert!(ratio(0.03) < 1e-2);
        assert!(ratio(3.0) > 0.9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = PsfModel::gaussian(1.0).unwrap();
        let t = SourceParams::new(0.1, 0.4, 0.3).unwrap();
        let (_, g) = intensity_gradient(&model, &t, 0.25);
        let h = 1e-6;
        let fd = |up: SourceParams<f64>, down: SourceParams<f64>| {
            (intensity(&model, &up, 0.25) - intensity(&model, &down, 0.25)) / (2.0 * h)
        };
        assert!((fd(t.with_s0(0.1 + h).unwrap(), t.with_s0(0.1 - h).unwrap()) - g[0]).abs() < 1e-8);
        assert!((fd(t.with_s(0.4 + h).unwrap(), t.with_s(0.4 - h).unwrap()) - g[1]).abs() < 1e-8);
        assert!((fd(t.with_q(0.3 + h).unwrap(), t.with_q(0.3 - h).unwrap()) - g[2]).abs() < 1e-8);
    }
}
