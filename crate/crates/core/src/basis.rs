//! Displaced orthonormal mode basis built from PSF derivatives.
//!
//! `Ψ_m(x) = ∂ᵐΨ(x − x0)` is orthonormalized by modified Gram–Schmidt (one
//! reorthogonalization pass, norm-prescaled inputs). Since every PSF is a
//! Hermite–Gauss expansion, the orthogonalization runs on exact coefficient
//! vectors and the modes `Φ_n` come out as expansions that can be evaluated
//! anywhere. The construction is translation invariant:
//! [`OrthonormalBasis::displaced`] re-centres a basis without recomputation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite;
use crate::psf::{PsfDescriptor, PsfModel};
use crate::scalar::{lit, to_f64, Real};

/// Basis dimension used unless overridden.
pub const DEFAULT_DIMENSION: usize = 30;

/// Smallest dimension supporting the four-outcome measurements.
pub const MIN_DIMENSION: usize = 4;

#[derive(Debug)]
struct BasisShape<T> {
    /// `Φ_n = Σ_m transform[n, m] Ψ_m`, lower triangular.
    transform: DMatrix<T>,
    /// `G_nm = ⟨Φ_n|Ψ_m⟩`, upper triangular.
    overlap: DMatrix<T>,
    /// Hermite–Gauss coefficients of each mode in `u = (x − x0)/σ`, scaled so
    /// that `Φ_n(x) = σ^{-1/2} Σ_k e_nk h_k(u)`.
    modes: Vec<Vec<T>>,
}

/// Orthonormal modes `Φ_0 .. Φ_{N−1}` centred at `x0`.
#[derive(Debug, Clone)]
pub struct OrthonormalBasis<T: Real> {
    psf: PsfModel<T>,
    x0: T,
    shape: Arc<BasisShape<T>>,
}

/// Coefficients `c_n = ⟨Φ_n|Ψ(· − x0 − a)⟩` of a displaced signal state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCoefficients<T: Real> {
    pub displacement: T,
    pub coefficients: DVector<T>,
    /// `1 − Σ c_n²`, the weight outside the truncated basis.
    pub residual: T,
}

/// JSON cache form of a basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisRecord {
    pub x0: f64,
    pub dimension: usize,
    pub overlap: Vec<Vec<f64>>,
    pub psf: PsfDescriptor,
}

impl<T: Real> OrthonormalBasis<T> {
    pub fn build(psf: &PsfModel<T>, x0: T, dimension: usize) -> Result<Self> {
        if dimension < MIN_DIMENSION {
            return Err(Error::InvalidParameter(format!(
                "basis dimension must be at least {MIN_DIMENSION}, got {dimension}"
            )));
        }
        if dimension > psf.max_order() + 1 {
            return Err(Error::UnsupportedOrder {
                requested: dimension - 1,
                max: psf.max_order(),
            });
        }
        if !x0.is_finite() {
            return Err(Error::InvalidParameter(
                "displacement must be finite".into(),
            ));
        }
        // Ψ_m as Hermite–Gauss coefficient vectors (x-units, common length).
        // The family is orthonormal, so the Euclidean product is the L²
        // product exactly and parity zeros survive untouched.
        let sigma = psf.sigma();
        let len = psf.expansion(dimension - 1)?.len();
        let derivative = |m: usize| -> Result<Vec<T>> {
            let scale = sigma.powi(-(m as i32));
            let mut v: Vec<T> = psf.expansion(m)?.iter().map(|&d| d * scale).collect();
            v.resize(len, T::zero());
            Ok(v)
        };
        let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
        let mut modes: Vec<Vec<T>> = Vec::with_capacity(dimension);
        let mut transform = DMatrix::<T>::zeros(dimension, dimension);
        let mut overlap = DMatrix::<T>::zeros(dimension, dimension);
        let rank_tol: T = lit(T::RANK_TOL);
        for m in 0..dimension {
            let raw = derivative(m)?;
            let norm = dot(&raw, &raw).sqrt();
            if !(norm > T::zero()) || !norm.is_finite() {
                return Err(Error::RankDeficient {
                    order: m,
                    residual: to_f64(norm),
                });
            }
            let mut u: Vec<T> = raw.iter().map(|&v| v / norm).collect();
            let mut coef = DVector::<T>::zeros(dimension);
            coef[m] = T::one() / norm;
            for _pass in 0..2 {
                for (k, phi) in modes.iter().enumerate() {
                    let r = dot(phi, &u);
                    u.iter_mut().zip(phi).for_each(|(a, &b)| *a -= r * b);
                    for j in 0..=k {
                        coef[j] -= r * transform[(k, j)];
                    }
                }
            }
            let surviving = dot(&u, &u).sqrt();
            if !(surviving > rank_tol) {
                return Err(Error::RankDeficient {
                    order: m,
                    residual: to_f64(surviving),
                });
            }
            u.iter_mut().for_each(|v| *v /= surviving);
            for j in 0..=m {
                transform[(m, j)] = coef[j] / surviving;
            }
            modes.push(u);
            for n in 0..=m {
                overlap[(n, m)] = dot(&modes[n], &raw);
            }
        }
        Ok(Self {
            psf: psf.clone(),
            x0,
            shape: Arc::new(BasisShape {
                transform,
                overlap,
                modes,
            }),
        })
    }

    /// Rebuilds a basis from its cached overlap matrix (`T = (Gᵀ)⁻¹`).
    pub fn from_record(psf: &PsfModel<T>, record: &BasisRecord) -> Result<Self> {
        if &record.psf != psf.descriptor() {
            return Err(Error::InvalidParameter(
                "cached basis was built for a different PSF".into(),
            ));
        }
        let n = record.dimension;
        if n < MIN_DIMENSION
            || record.overlap.len() != n
            || record.overlap.iter().any(|r| r.len() != n)
        {
            return Err(Error::InvalidParameter("malformed basis record".into()));
        }
        let overlap = DMatrix::from_fn(n, n, |i, j| {
            if i > j {
                T::zero()
            } else {
                lit(record.overlap[i][j])
            }
        });
        let transform = overlap
            .transpose()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or_else(|| Error::InvalidParameter("cached overlap matrix is singular".into()))?;
        let modes = mode_expansions(psf, &transform)?;
        Ok(Self {
            psf: psf.clone(),
            x0: lit(record.x0),
            shape: Arc::new(BasisShape {
                transform,
                overlap,
                modes,
            }),
        })
    }

    pub fn to_record(&self) -> BasisRecord {
        let g = &self.shape.overlap;
        BasisRecord {
            x0: to_f64(self.x0),
            dimension: self.dimension(),
            overlap: (0..g.nrows())
                .map(|i| (0..g.ncols()).map(|j| to_f64(g[(i, j)])).collect())
                .collect(),
            psf: self.psf.descriptor().clone(),
        }
    }

    /// The same modes re-centred at `x0`.
    pub fn displaced(&self, x0: T) -> Self {
        Self {
            psf: self.psf.clone(),
            x0,
            shape: Arc::clone(&self.shape),
        }
    }

    pub fn x0(&self) -> T {
        self.x0
    }

    pub fn dimension(&self) -> usize {
        self.shape.modes.len()
    }

    pub fn psf(&self) -> &PsfModel<T> {
        &self.psf
    }

    /// `G_nm = ⟨Φ_n|Ψ_m⟩`.
    pub fn overlap(&self) -> &DMatrix<T> {
        &self.shape.overlap
    }

    /// Lower-triangular map from derivatives to modes.
    pub fn transform(&self) -> &DMatrix<T> {
        &self.shape.transform
    }

    /// `Φ_n(x)`.
    pub fn eval_mode(&self, n: usize, x: T) -> T {
        eval_mode(&self.psf, &self.shape.modes[n], x - self.x0)
    }

    /// Largest deviation of `⟨Φ_n|Φ_m⟩` from `δ_nm` under the refined rule.
    pub fn orthonormality_error(&self) -> Result<T> {
        let mut worst = T::zero();
        for n in 0..self.dimension() {
            for m in n..self.dimension() {
                let v = self.psf.inner_product(
                    "orthonormality",
                    self.x0,
                    |x| self.eval_mode(n, x),
                    |x| self.eval_mode(m, x),
                )?;
                let target = if n == m { T::one() } else { T::zero() };
                worst = worst.max((v - target).abs());
            }
        }
        Ok(worst)
    }

    /// `c_n` for `n < count`, without the truncation check.
    pub(crate) fn coefficients_upto(&self, a: T, count: usize) -> DVector<T> {
        let count = count.min(self.dimension());
        if self.psf.is_gaussian() {
            return gaussian_coefficients(a / self.psf.sigma(), count);
        }
        let psf = &self.psf;
        let sigma = psf.sigma();
        let modes = &self.shape.modes[..count];
        let len = modes.iter().map(Vec::len).max().unwrap_or(0);
        let mut projected = vec![T::zero(); len];
        let mut h = Vec::with_capacity(len);
        let mut scratch = Vec::new();
        let half: T = lit(0.5);
        for (u, w) in psf
            .quadrature()
            .rule()
            .points(a * half, psf.envelope_scale())
        {
            let weight = w * psf.value_with(0, u - a, &mut scratch);
            hermite::hermite_functions_into(u / sigma, len, &mut h);
            for (p, &hk) in projected.iter_mut().zip(&h) {
                *p += weight * hk;
            }
        }
        let norm = T::one() / sigma.sqrt();
        DVector::from_iterator(
            count,
            modes.iter().map(|e| {
                norm * e
                    .iter()
                    .zip(&projected)
                    .fold(T::zero(), |acc, (&c, &p)| acc + c * p)
            }),
        )
    }

    /// `dc_n/da` for `n < count`.
    pub(crate) fn derivative_upto(&self, a: T, count: usize) -> DVector<T> {
        let count = count.min(self.dimension());
        if self.psf.is_gaussian() {
            let sigma = self.psf.sigma();
            return gaussian_derivative(a / sigma, count) / sigma;
        }
        let step = lit::<T>(1e-6).max(lit::<T>(1e-3) * a.abs());
        let central = |h: T| {
            (self.coefficients_upto(a + h, count) - self.coefficients_upto(a - h, count)) / (h + h)
        };
        let coarse = central(step);
        let fine = central(step * lit(0.5));
        (fine * lit::<T>(4.0) - coarse) / lit::<T>(3.0)
    }

    /// Exact overlaps of the displaced PSF with every mode.
    pub fn displaced_state_coefficients(&self, a: T) -> Result<StateCoefficients<T>> {
        let coefficients = self.coefficients_upto(a, self.dimension());
        let residual = T::one() - coefficients.norm_squared();
        let limit: T = lit(T::TRUNCATION_TOL);
        if residual.abs() > limit || !residual.is_finite() {
            return Err(Error::Truncation {
                displacement: to_f64(a),
                residual: to_f64(residual),
                limit: T::TRUNCATION_TOL,
            });
        }
        Ok(StateCoefficients {
            displacement: a,
            coefficients,
            residual,
        })
    }

    /// `dc/da`; analytic for the Gaussian, Richardson central differences otherwise.
    pub fn displaced_state_derivative(&self, a: T) -> Result<DVector<T>> {
        self.displaced_state_coefficients(a)?;
        Ok(self.derivative_upto(a, self.dimension()))
    }

    /// Fourth-order Taylor form `c_n ≈ Σ_{m≤4} (−a)ᵐ/m! G_nm`, kept as a
    /// cross-check of the exact overlaps.
    pub fn taylor_coefficients(&self, a: T) -> DVector<T> {
        let g = &self.shape.overlap;
        let order = 4.min(self.dimension() - 1);
        let mut factors = Vec::with_capacity(order + 1);
        let mut f = T::one();
        for m in 0..=order {
            if m > 0 {
                f *= -a / lit(m as f64);
            }
            factors.push(f);
        }
        DVector::from_fn(self.dimension(), |n, _| {
            (0..=order).fold(T::zero(), |acc, m| acc + factors[m] * g[(n, m)])
        })
    }
}

fn mode_expansions<T: Real>(psf: &PsfModel<T>, transform: &DMatrix<T>) -> Result<Vec<Vec<T>>> {
    let n = transform.nrows();
    let sigma = psf.sigma();
    let mut modes = Vec::with_capacity(n);
    for row in 0..n {
        let len = psf.expansion(row)?.len();
        let mut e = vec![T::zero(); len];
        for m in 0..=row {
            let t = transform[(row, m)] * sigma.powi(-(m as i32));
            if t == T::zero() {
                continue;
            }
            for (acc, &d) in e.iter_mut().zip(psf.expansion(m)?) {
                *acc += t * d;
            }
        }
        modes.push(e);
    }
    Ok(modes)
}

fn eval_mode<T: Real>(psf: &PsfModel<T>, expansion: &[T], u: T) -> T {
    let sigma = psf.sigma();
    let mut scratch = Vec::with_capacity(expansion.len());
    hermite::evaluate(expansion, u / sigma, &mut scratch) / sigma.sqrt()
}

/// Gaussian overlaps `c_n = e^{−α²/2} (−α)ⁿ / √n!`, `α = a / 2σ`; the argument
/// is `a / σ`.
fn gaussian_coefficients<T: Real>(a_over_sigma: T, count: usize) -> DVector<T> {
    let alpha = a_over_sigma * lit(0.5);
    let mut c = DVector::zeros(count);
    if count == 0 {
        return c;
    }
    c[0] = (-(alpha * alpha) * lit(0.5)).exp();
    for n in 1..count {
        c[n] = c[n - 1] * (-alpha) / lit::<T>(n as f64).sqrt();
    }
    c
}

/// `dc_n/d(a/σ) = (−α c_n − √n c_{n−1}) / 2`.
fn gaussian_derivative<T: Real>(a_over_sigma: T, count: usize) -> DVector<T> {
    let alpha = a_over_sigma * lit(0.5);
    let c = gaussian_coefficients(a_over_sigma, count);
    let half: T = lit(0.5);
    DVector::from_fn(count, |n, _| {
        let lower = if n > 0 {
            lit::<T>(n as f64).sqrt() * c[n - 1]
        } else {
            T::zero()
        };
        half * (-alpha * c[n] - lower)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian_basis(x0: f64, n: usize) -> OrthonormalBasis<f64> {
        OrthonormalBasis::build(&PsfModel::gaussian(1.0).unwrap(), x0, n).unwrap()
    }

    fn hermite_gauss_closed_form(n: usize, u: f64) -> f64 {
        // Physicists' Hermite polynomial by recurrence.
        let z = u / 2f64.sqrt();
        let (mut h0, mut h1) = (1.0, 2.0 * z);
        let hn = match n {
            0 => h0,
            _ => {
                for k in 1..n {
                    let h2 = 2.0 * z * h1 - 2.0 * k as f64 * h0;
                    h0 = h1;
                    h1 = h2;
                }
                h1
            }
        };
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        hn * (-u * u / 4.0).exp()
            / ((2.0 * std::f64::consts::PI).powf(0.25) * 2f64.powf(n as f64 / 2.0) * fact.sqrt())
    }

    #[test]
    fn modes_are_displaced_hermite_gauss() {
        let x0 = 0.37;
        let basis = gaussian_basis(x0, DEFAULT_DIMENSION);
        for n in 0..DEFAULT_DIMENSION {
            // Positive G_nn fixes the sign convention: Φ_n = (−1)ⁿ h_n.
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            for &x in &[-3.0, -1.2, 0.0, 0.37, 0.9, 2.5, 4.0] {
                let want = sign * hermite_gauss_closed_form(n, x - x0);
                let got = basis.eval_mode(n, x);
                assert!((got - want).abs() < 1e-8, "n={n} x={x}: {got} vs {want}");
            }
        }
    }

    fn column_norm(basis: &OrthonormalBasis<f64>, m: usize) -> f64 {
        basis.overlap().column(m).norm()
    }

    #[test]
    fn overlap_structure() {
        let basis = gaussian_basis(0.0, DEFAULT_DIMENSION);
        let g = basis.overlap();
        assert_relative_eq!(g[(0, 0)], 1.0, max_relative = 1e-12);
        assert_relative_eq!(g[(1, 1)], 0.5, max_relative = 1e-12);
        assert_relative_eq!(g[(2, 2)], 1.0 / (2.0 * 2f64.sqrt()), max_relative = 1e-12);
        assert!(g[(0, 1)].abs() < 1e-12);
        for n in 0..g.nrows() {
            assert!(g[(n, n)] > 0.0);
            for m in 0..g.ncols() {
                if n > m {
                    assert_eq!(g[(n, m)], 0.0);
                }
                if (n + m) % 2 == 1 {
                    assert!(
                        g[(n, m)].abs() < 1e-9 * column_norm(&basis, m),
                        "G[{n},{m}]"
                    );
                }
            }
        }
    }

    #[test]
    fn g22_against_independent_quadrature() {
        // Oracle: ⟨Φ₂|Ψ₂⟩ with Φ₂ from the closed-form Hermite–Gauss mode and Ψ₂ = Ψ''.
        let psf = PsfModel::gaussian(1.0).unwrap();
        let rule = crate::quadrature::GaussHermite::<f64>::new(300);
        let g22 = rule.integrate(0.0, 2f64.sqrt(), |x| {
            hermite_gauss_closed_form(2, x) * psf.eval(2, x).unwrap()
        });
        assert_relative_eq!(g22, 0.353_553_390_593_273_8, max_relative = 1e-12);
        let basis = gaussian_basis(0.0, 8);
        assert_relative_eq!(basis.overlap()[(2, 2)], g22, max_relative = 1e-12);
    }

    #[test]
    fn orthonormal_and_idempotent() {
        let basis = gaussian_basis(-0.2, DEFAULT_DIMENSION);
        assert!(basis.orthonormality_error().unwrap() < 1e-9);
        // Orthonormalizing the modes again reproduces them: the projections of
        // Φ_m onto Φ_k are the identity.
        let psf = basis.psf().clone();
        for n in 0..6 {
            for m in 0..6 {
                let v = psf
                    .inner_product(
                        "t",
                        -0.2,
                        |x| basis.eval_mode(n, x),
                        |x| basis.eval_mode(m, x),
                    )
                    .unwrap();
                let want = if n == m { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn too_small_dimension_rejected() {
        let psf = PsfModel::gaussian(1.0).unwrap();
        assert!(OrthonormalBasis::build(&psf, 0.0, 3).is_err());
    }

    #[test]
    fn rank_deficiency_names_order() {
        // Single precision cannot separate high-order derivatives.
        let psf = PsfModel::<f32>::gaussian(1.0).unwrap();
        match OrthonormalBasis::build(&psf, 0.0, 40) {
            Err(Error::RankDeficient { order, .. }) => assert!(order > 4 && order < 40),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        assert!(OrthonormalBasis::build(&psf, 0.0, 6).is_ok());
    }

    #[test]
    fn coefficients_at_zero_displacement() {
        let basis = gaussian_basis(0.0, DEFAULT_DIMENSION);
        let c = basis.displaced_state_coefficients(0.0).unwrap();
        assert_relative_eq!(c.coefficients[0], 1.0, max_relative = 1e-15);
        assert!(c.coefficients.iter().skip(1).all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_closed_form_matches_quadrature() {
        let basis = gaussian_basis(0.1, DEFAULT_DIMENSION);
        let psf = basis.psf().clone();
        for &a in &[0.1, -0.35, 0.8] {
            let c = basis.displaced_state_coefficients(a).unwrap();
            for n in 0..12 {
                let oracle = psf
                    .inner_product(
                        "t",
                        0.1 + a / 2.0,
                        |x| basis.eval_mode(n, x),
                        |x| psf.value(0, x - 0.1 - a),
                    )
                    .unwrap();
                assert!((c.coefficients[n] - oracle).abs() < 1e-10, "a={a} n={n}");
            }
        }
        let c = basis.displaced_state_coefficients(0.1).unwrap();
        assert_relative_eq!(
            c.coefficients[0],
            (-0.01f64 / 8.0).exp(),
            max_relative = 1e-14
        );
        assert_relative_eq!(c.coefficients[0], 0.998_75, max_relative = 1e-5);
    }

    #[test]
    fn leading_series_term() {
        let basis = gaussian_basis(0.0, DEFAULT_DIMENSION);
        let a = 1e-3;
        let c = basis.displaced_state_coefficients(a).unwrap();
        let g11 = basis.overlap()[(1, 1)];
        assert_relative_eq!(c.coefficients[1], -a * g11, max_relative = 1e-5);
        let taylor = basis.taylor_coefficients(a);
        for n in 0..5 {
            assert!((taylor[n] - c.coefficients[n]).abs() < 1e-14);
        }
    }

    #[test]
    fn completeness_and_parity() {
        let basis = gaussian_basis(0.0, DEFAULT_DIMENSION);
        let c = basis.displaced_state_coefficients(0.5).unwrap();
        assert!(c.residual.abs() < 1e-10);
        let m = basis.displaced_state_coefficients(-0.5).unwrap();
        for n in 0..DEFAULT_DIMENSION {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert!((m.coefficients[n] - sign * c.coefficients[n]).abs() < 1e-9);
        }
    }

    #[test]
    fn truncation_error_for_large_displacement() {
        let basis = gaussian_basis(0.0, 6);
        assert!(matches!(
            basis.displaced_state_coefficients(2.0),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let basis = gaussian_basis(0.0, DEFAULT_DIMENSION);
        let d0 = basis.displaced_state_derivative(0.0).unwrap();
        assert_relative_eq!(d0[1], -basis.overlap()[(1, 1)], max_relative = 1e-14);
        assert!(d0[0].abs() < 1e-15);
        let a = 0.05;
        let h = 1e-4;
        let d = basis.displaced_state_derivative(a).unwrap();
        let plus = basis
            .displaced_state_coefficients(a + h)
            .unwrap()
            .coefficients;
        let minus = basis
            .displaced_state_coefficients(a - h)
            .unwrap()
            .coefficients;
        let fd = (plus - minus) / (2.0 * h);
        assert!((d - fd).amax() < 1e-7);
    }

    #[test]
    fn tabulated_psf_uses_quadrature_path() {
        let xs: Vec<f64> = (0..=300).map(|i| -15.0 + 0.1 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (-x * x / 4.0).exp()).collect();
        let table = PsfModel::tabulated(1.0, &xs, &ys, 16, "inline").unwrap();
        let tb = OrthonormalBasis::build(&table, 0.0, 12).unwrap();
        let gb = gaussian_basis(0.0, 12);
        for &a in &[0.0, 0.2, -0.4] {
            let ct = tb.displaced_state_coefficients(a).unwrap().coefficients;
            let cg = gb.displaced_state_coefficients(a).unwrap().coefficients;
            assert!((ct - cg).amax() < 1e-9, "a={a}");
            let dt = tb.displaced_state_derivative(a).unwrap();
            let dg = gb.displaced_state_derivative(a).unwrap();
            assert!((dt - dg).amax() < 1e-7, "a={a}");
        }
    }

    #[test]
    fn record_roundtrip_rebuilds_modes() {
        let basis = gaussian_basis(0.25, 10);
        let json = serde_json::to_string(&basis.to_record()).unwrap();
        let record: BasisRecord = serde_json::from_str(&json).unwrap();
        let rebuilt = OrthonormalBasis::from_record(basis.psf(), &record).unwrap();
        for n in 0..10 {
            assert!((rebuilt.eval_mode(n, 0.7) - basis.eval_mode(n, 0.7)).abs() < 1e-10);
        }
        let other = PsfModel::gaussian(2.0).unwrap();
        assert!(OrthonormalBasis::from_record(&other, &record).is_err());
    }
}
