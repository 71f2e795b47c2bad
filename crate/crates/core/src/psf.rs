//! Real-amplitude point-spread functions and their scalar moments.
//!
//! A PSF is held as a Hermite–Gauss expansion at width `σ`:
//! `Ψ(x) = σ^{-1/2} Σ b_k h_k(x/σ)`. The Gaussian PSF is the single term
//! `b = (1)`, giving `Ψ(x) = (2πσ²)^{-1/4} exp(-x²/4σ²)`. Tabulated PSFs are
//! projected onto the family by least squares, which makes every derivative an
//! exact coefficient map rather than a finite-difference estimate.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite;
use crate::quadrature::{Quadrature, DEFAULT_NODES};
use crate::scalar::{lit, to_f64, Real};

/// Highest derivative order any PSF model exposes.
pub const MAX_DERIVATIVE_ORDER: usize = 64;

/// Default number of Hermite–Gauss terms used to represent a tabulated PSF.
pub const DEFAULT_TABLE_TERMS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsfKind {
    Gaussian,
    Tabulated,
}

/// How derivatives are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMethod {
    /// Exact ladder action on the Hermite–Gauss expansion.
    HermiteLadder,
}

/// Serializable identity of a PSF model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsfDescriptor {
    pub kind: PsfKind,
    pub sigma: f64,
    pub derivatives: DerivativeMethod,
    pub quadrature_nodes: usize,
    /// Number of Hermite–Gauss terms in the representation.
    pub terms: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source: Option<String>,
    /// RMS misfit of the projected table, relative to its peak amplitude.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fit_rms: Option<f64>,
}

#[derive(Debug)]
struct PsfInner<T> {
    sigma: T,
    /// `derivatives[n]` holds the expansion of `d^n Ψ / du^n`, `u = x/σ`.
    derivatives: Vec<Vec<T>>,
    quadrature: Quadrature<T>,
    descriptor: PsfDescriptor,
}

/// Real amplitude PSF with derivatives and a quadrature context.
///
/// Cloning is cheap; the model is immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct PsfModel<T> {
    inner: Arc<PsfInner<T>>,
}

/// Scalar moments entering the closed-form quantum Fisher matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfMoments<T> {
    /// `⟨Ψ|P²|Ψ⟩ = ∫ Ψ'²`.
    pub p_squared: T,
    /// `⟨Ψ|e^{isP}|Ψ⟩ = ∫ Ψ(x) Ψ(x − s)`.
    pub w: T,
    /// `1 − w(s)`, evaluated without cancellation.
    pub one_minus_w: T,
    /// Imaginary part of `⟨Ψ|e^{isP} P|Ψ⟩ = −∫ Ψ(x) Ψ'(x + s)`.
    pub p_imag: T,
    /// `⟨Ψ|P⁴|Ψ⟩ = ∫ Ψ''²`.
    pub fourth_moment: T,
}

impl<T: Real> PsfMoments<T> {
    /// `Var(P²) = ⟨P⁴⟩ − (p²)²`.
    pub fn variance_p_squared(&self) -> T {
        self.fourth_moment - self.p_squared * self.p_squared
    }
}

impl<T: Real> PsfModel<T> {
    /// Normalized Gaussian amplitude of width `sigma`.
    pub fn gaussian(sigma: T) -> Result<Self> {
        Self::gaussian_with_nodes(sigma, DEFAULT_NODES)
    }

    pub fn gaussian_with_nodes(sigma: T, nodes: usize) -> Result<Self> {
        check_sigma(sigma)?;
        let descriptor = PsfDescriptor {
            kind: PsfKind::Gaussian,
            sigma: to_f64(sigma),
            derivatives: DerivativeMethod::HermiteLadder,
            quadrature_nodes: nodes,
            terms: 1,
            source: None,
            fit_rms: None,
        };
        Self::from_expansion(sigma, vec![T::one()], nodes, descriptor)
    }

    /// Projects sampled amplitudes `(x_i, Ψ(x_i))` onto `terms` Hermite–Gauss
    /// functions of width `sigma` and normalizes the result.
    pub fn tabulated(sigma: T, xs: &[T], ys: &[T], terms: usize, source: &str) -> Result<Self> {
        check_sigma(sigma)?;
        if xs.len() != ys.len() {
            return Err(Error::Table("column lengths differ".into()));
        }
        if xs.len() < 8 {
            return Err(Error::Table(format!(
                "need at least 8 samples, got {}",
                xs.len()
            )));
        }
        if xs.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(Error::Table("x values must be strictly increasing".into()));
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            return Err(Error::Table("non-finite value".into()));
        }
        let terms = terms.clamp(1, xs.len() / 2).min(MAX_DERIVATIVE_ORDER);
        let inv_sqrt_sigma = T::one() / sigma.sqrt();
        let rows: Vec<Vec<T>> = xs
            .iter()
            .map(|&x| hermite::hermite_functions(x / sigma, terms))
            .collect();
        let design = DMatrix::from_fn(xs.len(), terms, |i, k| rows[i][k] * inv_sqrt_sigma);
        let rhs = DVector::from_column_slice(ys);
        let svd = design.clone().svd(true, true);
        let eps: T = lit(1e-12);
        let coef = svd
            .solve(&rhs, eps)
            .map_err(|e| Error::Table(format!("least-squares projection failed: {e}")))?;
        let misfit = &design * &coef - &rhs;
        let peak = ys.iter().fold(T::zero(), |m, y| m.max(y.abs()));
        if peak == T::zero() {
            return Err(Error::Table("table is identically zero".into()));
        }
        let rms = (misfit.norm_squared() / lit(xs.len() as f64)).sqrt() / peak;
        let norm = coef.norm();
        let coefficients: Vec<T> = coef.iter().map(|&c| c / norm).collect();
        let descriptor = PsfDescriptor {
            kind: PsfKind::Tabulated,
            sigma: to_f64(sigma),
            derivatives: DerivativeMethod::HermiteLadder,
            quadrature_nodes: DEFAULT_NODES,
            terms,
            source: Some(source.to_string()),
            fit_rms: Some(to_f64(rms)),
        };
        Self::from_expansion(sigma, coefficients, DEFAULT_NODES, descriptor)
    }

    /// Reads a two-column whitespace-separated table; `#` starts a comment.
    pub fn load_table(path: &Path, sigma: T, terms: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let (xs, ys) = parse_table::<T>(&text)?;
        Self::tabulated(sigma, &xs, &ys, terms, &path.display().to_string())
    }

    fn from_expansion(
        sigma: T,
        coefficients: Vec<T>,
        nodes: usize,
        descriptor: PsfDescriptor,
    ) -> Result<Self> {
        let mut derivatives = Vec::with_capacity(MAX_DERIVATIVE_ORDER + 1);
        derivatives.push(coefficients);
        for n in 0..MAX_DERIVATIVE_ORDER {
            let next = hermite::differentiate(&derivatives[n]);
            derivatives.push(next);
        }
        let model = Self {
            inner: Arc::new(PsfInner {
                sigma,
                derivatives,
                quadrature: Quadrature::new(nodes),
                descriptor,
            }),
        };
        let norm = model.inner_product(
            "normalization",
            T::zero(),
            |x| model.value(0, x),
            |x| model.value(0, x),
        )?;
        if (norm - T::one()).abs() > lit(T::QUADRATURE_RTOL) {
            return Err(Error::Table(format!(
                "normalization check failed: ∫Ψ² = {}",
                to_f64(norm)
            )));
        }
        Ok(model)
    }

    pub fn kind(&self) -> PsfKind {
        self.inner.descriptor.kind
    }

    pub fn is_gaussian(&self) -> bool {
        self.kind() == PsfKind::Gaussian
    }

    pub fn sigma(&self) -> T {
        self.inner.sigma
    }

    pub fn descriptor(&self) -> &PsfDescriptor {
        &self.inner.descriptor
    }

    pub fn quadrature(&self) -> &Quadrature<T> {
        &self.inner.quadrature
    }

    pub fn max_order(&self) -> usize {
        MAX_DERIVATIVE_ORDER
    }

    /// Hermite–Gauss coefficients of `d^n Ψ/du^n` in `u = x/σ`.
    pub fn expansion(&self, order: usize) -> Result<&[T]> {
        self.inner
            .derivatives
            .get(order)
            .map(|v| v.as_slice())
            .ok_or(Error::UnsupportedOrder {
                requested: order,
                max: MAX_DERIVATIVE_ORDER,
            })
    }

    /// Length scale of the Gaussian envelope seen by the quadrature, `√2 σ`.
    pub fn envelope_scale(&self) -> T {
        lit::<T>(2.0).sqrt() * self.inner.sigma
    }

    /// `∂ⁿΨ/∂xⁿ` at `x`.
    pub fn eval(&self, order: usize, x: T) -> Result<T> {
        let coefficients = self.expansion(order)?;
        let mut scratch = Vec::with_capacity(coefficients.len());
        Ok(self.eval_with(coefficients, order, x, &mut scratch))
    }

    /// Unchecked evaluation; panics if `order` exceeds [`MAX_DERIVATIVE_ORDER`].
    pub(crate) fn value(&self, order: usize, x: T) -> T {
        let mut scratch = Vec::new();
        self.eval_with(&self.inner.derivatives[order], order, x, &mut scratch)
    }

    pub(crate) fn value_with(&self, order: usize, x: T, scratch: &mut Vec<T>) -> T {
        self.eval_with(&self.inner.derivatives[order], order, x, scratch)
    }

    fn eval_with(&self, coefficients: &[T], order: usize, x: T, scratch: &mut Vec<T>) -> T {
        let sigma = self.inner.sigma;
        let scale = sigma.powi(-(order as i32)) / sigma.sqrt();
        scale * hermite::evaluate(coefficients, x / sigma, scratch)
    }

    /// `∫ f g dx` with the node-doubling accuracy check, using a rule centered
    /// at `center` and scaled to this PSF's envelope.
    pub fn inner_product<F, G>(&self, context: &'static str, center: T, f: F, g: G) -> Result<T>
    where
        F: Fn(T) -> T,
        G: Fn(T) -> T,
    {
        self.inner
            .quadrature
            .inner_product(context, center, self.envelope_scale(), f, g)
    }

    /// `w(s) = ∫ Ψ(x) Ψ(x − s) dx`; defined for any real `s`.
    pub fn overlap(&self, s: T) -> Result<T> {
        let half: T = lit(0.5);
        self.inner_product(
            "w",
            s * half,
            |x| self.value(0, x),
            |x| self.value(0, x - s),
        )
    }

    /// `1 − w(s) = ½ ∫ (Ψ(x) − Ψ(x − s))² dx`; accurate when `s → 0`.
    pub fn overlap_deficit(&self, s: T) -> Result<T> {
        let half: T = lit(0.5);
        let diff = |x: T| self.value(0, x) - self.value(0, x - s);
        Ok(half * self.inner_product("1 - w", s * half, diff, diff)?)
    }

    /// `Im ℘(s) = −∫ Ψ(x) Ψ'(x + s) dx`; defined for any real `s`.
    pub fn momentum_overlap(&self, s: T) -> Result<T> {
        let half: T = lit(0.5);
        let v = self.inner_product(
            "p_imag",
            -s * half,
            |x| self.value(0, x),
            |x| self.value(1, x + s),
        )?;
        Ok(-v)
    }

    pub fn p_squared(&self) -> Result<T> {
        self.inner_product(
            "p_squared",
            T::zero(),
            |x| self.value(1, x),
            |x| self.value(1, x),
        )
    }

    pub fn fourth_moment(&self) -> Result<T> {
        self.inner_product(
            "fourth_moment",
            T::zero(),
            |x| self.value(2, x),
            |x| self.value(2, x),
        )
    }

    pub fn compute_moments(&self, s: T) -> Result<PsfMoments<T>> {
        if !(s >= T::zero()) || !s.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "separation must be finite and non-negative, got {}",
                to_f64(s)
            )));
        }
        Ok(PsfMoments {
            p_squared: self.p_squared()?,
            w: self.overlap(s)?,
            one_minus_w: self.overlap_deficit(s)?,
            p_imag: self.momentum_overlap(s)?,
            fourth_moment: self.fourth_moment()?,
        })
    }
}

fn check_sigma<T: Real>(sigma: T) -> Result<()> {
    if sigma > T::zero() && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "PSF width must be positive, got {}",
            to_f64(sigma)
        )))
    }
}

/// Parses `x Ψ(x)` rows. Blank lines and `#` comments are ignored.
pub fn parse_table<T: Real>(text: &str) -> Result<(Vec<T>, Vec<T>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Table(format!(
                "line {}: expected 2 columns, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Table(format!("line {}: {e}", lineno + 1)))
        };
        let (x, y) = (parse(fields[0])?, parse(fields[1])?);
        if let Some(&last) = xs.last() {
            if !(lit::<T>(x) > last) {
                return Err(Error::Table(format!(
                    "line {}: x values must be strictly increasing",
                    lineno + 1
                )));
            }
        }
        xs.push(lit(x));
        ys.push(lit(y));
    }
    Ok((xs, ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn gaussian() -> PsfModel<f64> {
        PsfModel::gaussian(1.0).unwrap()
    }

    #[test]
    fn peak_amplitude_against_quadrature_normalization() {
        // Oracle: normalize exp(-x²/4) numerically with a plain Riemann sum.
        let h = 1e-3;
        let total: f64 = (-20_000..=20_000)
            .map(|i| (-(i as f64 * h).powi(2) / 2.0).exp() * h)
            .sum();
        let expected = 1.0 / total.sqrt();
        assert_relative_eq!(
            gaussian().eval(0, 0.0).unwrap(),
            expected,
            max_relative = 1e-10
        );
        assert_relative_eq!(expected, 0.631_618_9, max_relative = 1e-6);
    }

    #[test]
    fn odd_derivative_vanishes_at_origin() {
        assert!(gaussian().eval(1, 0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn second_derivative_against_richardson() {
        let psf = gaussian();
        let f = |x: f64| psf.eval(0, x).unwrap();
        let d2 = |h: f64| (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
        let h = 1e-4;
        // Step 1e-4 is rounding-limited for a second difference; Richardson on
        // a coarser pair keeps the truncation error below 1e-10.
        let coarse = 1e-2;
        let rich = (4.0 * d2(coarse / 2.0) - d2(coarse)) / 3.0;
        let want = -0.5 * (2.0 * PI).powf(-0.25);
        assert_relative_eq!(psf.eval(2, 0.0).unwrap(), want, max_relative = 1e-12);
        assert_relative_eq!(rich, want, max_relative = 1e-8);
        assert_relative_eq!(d2(h), want, max_relative = 1e-4);
    }

    #[test]
    fn order_beyond_maximum_is_rejected() {
        let r = gaussian().eval(MAX_DERIVATIVE_ORDER + 1, 0.0);
        assert!(matches!(r, Err(Error::UnsupportedOrder { .. })));
    }

    #[test]
    fn inner_products() {
        let psf = gaussian();
        let one = psf
            .inner_product("t", 0.0, |x| psf.value(0, x), |x| psf.value(0, x))
            .unwrap();
        assert_relative_eq!(one, 1.0, max_relative = 1e-12);
        let zero = psf
            .inner_product("t", 0.0, |x| psf.value(0, x), |x| psf.value(1, x))
            .unwrap();
        assert!(zero.abs() < 1e-15);
        assert_relative_eq!(
            psf.overlap(1.0).unwrap(),
            (-1.0f64 / 8.0).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn gaussian_moments() {
        let psf = gaussian();
        let m = psf.compute_moments(0.0).unwrap();
        assert_relative_eq!(m.p_squared, 0.25, max_relative = 1e-12);
        assert_relative_eq!(m.w, 1.0, max_relative = 1e-12);
        assert!(m.p_imag.abs() < 1e-15);
        assert_relative_eq!(m.fourth_moment, 0.1875, max_relative = 1e-12);
        assert_relative_eq!(m.variance_p_squared(), 0.125, max_relative = 1e-12);
    }

    #[test]
    fn p_squared_matches_finite_difference_derivative() {
        let psf = gaussian();
        let h = 1e-5;
        let rule = crate::quadrature::GaussHermite::<f64>::new(200);
        let fd = rule.integrate(0.0, 2f64.sqrt(), |x| {
            let d = (psf.value(0, x + h) - psf.value(0, x - h)) / (2.0 * h);
            d * d
        });
        assert_relative_eq!(fd, 0.25, max_relative = 1e-8);
    }

    #[test]
    fn gaussian_shifted_moments_closed_form() {
        let psf = gaussian();
        for &s in &[0.01, 0.3, 1.0, 3.0] {
            let w = (-s * s / 8.0f64).exp();
            assert_relative_eq!(psf.overlap(s).unwrap(), w, max_relative = 1e-12);
            assert_relative_eq!(
                psf.momentum_overlap(s).unwrap(),
                w * s / 4.0,
                max_relative = 1e-11
            );
        }
    }

    #[test]
    fn negative_separation_rejected() {
        assert!(gaussian().compute_moments(-0.1).is_err());
    }

    #[test]
    fn wider_gaussian_scales() {
        let psf = PsfModel::gaussian(2.0).unwrap();
        assert_relative_eq!(psf.p_squared().unwrap(), 1.0 / 16.0, max_relative = 1e-12);
        assert_relative_eq!(
            psf.overlap(2.0).unwrap(),
            (-1.0f64 / 8.0).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn tabulated_gaussian_reproduces_closed_form() {
        let xs: Vec<f64> = (0..=240).map(|i| -12.0 + 0.1 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| 3.0 * (-x * x / 4.0).exp()).collect();
        let psf = PsfModel::tabulated(1.0, &xs, &ys, 20, "inline").unwrap();
        assert_eq!(psf.kind(), PsfKind::Tabulated);
        let g = gaussian();
        for &x in &[-2.0, -0.5, 0.0, 1.3] {
            for order in 0..6 {
                assert_relative_eq!(
                    psf.eval(order, x).unwrap(),
                    g.eval(order, x).unwrap(),
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn table_parsing() {
        let (xs, ys) = parse_table::<f64>("# header\n-1 0.1\n0 1.0  # peak\n\n1 0.1\n").unwrap();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);
        assert_eq!(ys, vec![0.1, 1.0, 0.1]);
        assert!(parse_table::<f64>("0 1\n0 2\n").is_err());
        assert!(parse_table::<f64>("0 1 2\n").is_err());
        assert!(parse_table::<f64>("0 abc\n").is_err());
    }

    #[test]
    fn single_precision_gaussian() {
        let psf = PsfModel::<f32>::gaussian(1.0).unwrap();
        assert!((psf.p_squared().unwrap() - 0.25).abs() < 1e-5);
    }
}
