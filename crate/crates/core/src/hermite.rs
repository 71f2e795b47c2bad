//! Hermite–Gauss functions `h_k(u) = H_k(u/√2) exp(-u²/4) / ((2π)^{1/4} 2^{k/2} √k!)`.
//!
//! These are orthonormal on the real line, `|h_0|²` is the unit-variance
//! Gaussian, and derivatives act as a ladder:
//! `h_k' = (√k h_{k-1} − √(k+1) h_{k+1}) / 2`.
//! Every PSF in the library is stored as a finite expansion in this family, so
//! derivatives of any order are exact coefficient maps.

use crate::scalar::{lit, Real};

/// Writes `h_0(u) .. h_{count-1}(u)` into `out` (resized to `count`).
pub fn hermite_functions_into<T: Real>(u: T, count: usize, out: &mut Vec<T>) {
    out.clear();
    if count == 0 {
        return;
    }
    let norm: T = lit((2.0 * std::f64::consts::PI).powf(-0.25));
    let quarter: T = lit(0.25);
    out.push(norm * (-(u * u) * quarter).exp());
    if count == 1 {
        return;
    }
    out.push(u * out[0]);
    for k in 1..count - 1 {
        let kf: T = lit(k as f64);
        let next = (u * out[k] - kf.sqrt() * out[k - 1]) / (kf + T::one()).sqrt();
        out.push(next);
    }
}

pub fn hermite_functions<T: Real>(u: T, count: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(count);
    hermite_functions_into(u, count, &mut out);
    out
}

/// Evaluates `Σ b_k h_k(u)`.
pub fn evaluate<T: Real>(coefficients: &[T], u: T, scratch: &mut Vec<T>) -> T {
    hermite_functions_into(u, coefficients.len(), scratch);
    coefficients
        .iter()
        .zip(scratch.iter())
        .fold(T::zero(), |acc, (&b, &h)| acc + b * h)
}

/// Coefficients of `d/du Σ b_k h_k(u)`; the result is one term longer.
pub fn differentiate<T: Real>(coefficients: &[T]) -> Vec<T> {
    let half: T = lit(0.5);
    let len = coefficients.len() + 1;
    (0..len)
        .map(|j| {
            let up = coefficients
                .get(j + 1)
                .map(|&b| lit::<T>((j + 1) as f64).sqrt() * b)
                .unwrap_or_else(T::zero);
            let down = if j >= 1 {
                coefficients
                    .get(j - 1)
                    .map(|&b| lit::<T>(j as f64).sqrt() * b)
                    .unwrap_or_else(T::zero)
            } else {
                T::zero()
            };
            half * (up - down)
        })
        .collect()
}
