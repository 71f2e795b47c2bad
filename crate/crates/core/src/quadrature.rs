//! Gauss–Hermite quadrature for overlap integrals on the real line.
//!
//! Nodes and weights are generated in `f64` and converted to the working
//! scalar. Weights are
//! stored pre-multiplied by `exp(t²)`, so a rule integrates `f` directly rather
//! than `f / exp(-t²)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Default node count for the primary rule.
pub const DEFAULT_NODES: usize = 200;

/// A Gauss–Hermite rule with `exp(t²)`-scaled weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

/// Hermite function recurrence: returns `(ψ_n(t), ψ_{n-1}(t))`.
fn hermite_function_pair(n: usize, t: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25) * (-0.5 * t * t).exp();
    for k in 0..n {
        let kf = k as f64;
        let next = t * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

fn hermite_polynomial_ratio(n: usize, t: f64) -> (f64, f64) {
    // Orthonormal polynomial recurrence, rescaled to avoid overflow. Only the
    // ratio p_n / p_{n-1} is meaningful.
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    for k in 0..n {
        let kf = k as f64;
        let next = t * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        let scale = cur.abs().max(prev.abs());
        if scale > 1e150 {
            cur /= scale;
            prev /= scale;
        }
    }
    (cur, prev)
}

type RuleCache = Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>;

/// Nodes (ascending) and `exp(t²)`-scaled weights of the `n`-point rule.
///
/// Nodes are eigenvalues of the Jacobi matrix (Golub–Welsch), polished by
/// Newton steps; weights use the Christoffel formula `1 / (n ψ_{n-1}(t)²)` on
/// Hermite functions. Rules are cached per node count.
pub fn gauss_hermite_f64(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "rule needs at least one node");
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().expect("rule cache poisoned").get(&n) {
        return (rule.0.clone(), rule.1.clone());
    }
    let rule = Arc::new(compute_rule(n));
    cache
        .lock()
        .expect("rule cache poisoned")
        .insert(n, Arc::clone(&rule));
    (rule.0.clone(), rule.1.clone())
}

fn compute_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut roots: Vec<f64> = SymmetricEigen::new(jacobi)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    roots.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    for z in roots.iter_mut() {
        for _ in 0..3 {
            let (pn, pm) = hermite_polynomial_ratio(n, *z);
            let step = pn / ((2.0 * nf).sqrt() * pm);
            if !step.is_finite() || step.abs() > 1e-6 * z.abs().max(1.0) {
                break;
            }
            *z -= step;
        }
    }
    // Enforce exact symmetry.
    for i in 0..n / 2 {
        let m = 0.5 * (roots[n - 1 - i] - roots[i]);
        roots[i] = -m;
        roots[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        roots[n / 2] = 0.0;
    }
    let weights = roots
        .iter()
        .map(|&z| {
            let (_, psi_prev) = hermite_function_pair(n, z);
            1.0 / (nf * psi_prev * psi_prev)
        })
        .collect();
    (roots, weights)
}

impl<T: Real> GaussHermite<T> {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_hermite_f64(n);
        Self {
            nodes: nodes.into_iter().map(lit).collect(),
            weights: weights.into_iter().map(lit).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Abscissae and weights for `∫ f(x) dx` when `f` decays like
    /// `exp(-((x - center) / scale)²)`.
    pub fn points(&self, center: T, scale: T) -> impl Iterator<Item = (T, T)> + '_ {
        self.nodes
            .iter()
            .zip(self.weights.iter())
            .map(move |(&t, &w)| (center + scale * t, scale * w))
    }

    pub fn integrate<F: FnMut(T) -> T>(&self, center: T, scale: T, mut f: F) -> T {
        self.points(center, scale)
            .fold(T::zero(), |acc, (x, w)| acc + w * f(x))
    }
}

/// A primary rule plus its node-doubled refinement for accuracy checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature<T> {
    rule: GaussHermite<T>,
    refined: GaussHermite<T>,
}

impl<T: Real> Quadrature<T> {
    pub fn new(nodes: usize) -> Self {
        Self {
            rule: GaussHermite::new(nodes),
            refined: GaussHermite::new(2 * nodes),
        }
    }

    pub fn rule(&self) -> &GaussHermite<T> {
        &self.rule
    }

    pub fn refined(&self) -> &GaussHermite<T> {
        &self.refined
    }

    pub fn nodes(&self) -> usize {
        self.rule.len()
    }

    /// `∫ f g dx`, checked against the doubled rule.
    ///
    /// The check is relative to `max(|∫fg|, ‖f‖‖g‖)`, so overlaps that vanish by
    /// symmetry are accepted when they vanish to working precision.
    pub fn inner_product<F, G>(
        &self,
        context: &'static str,
        center: T,
        scale: T,
        f: F,
        g: G,
    ) -> Result<T>
    where
        F: Fn(T) -> T,
        G: Fn(T) -> T,
    {
        let eval = |rule: &GaussHermite<T>| {
            let mut fg = T::zero();
            let mut ff = T::zero();
            let mut gg = T::zero();
            for (x, w) in rule.points(center, scale) {
                let (a, b) = (f(x), g(x));
                fg += w * a * b;
                ff += w * a * a;
                gg += w * b * b;
            }
            (fg, (ff * gg).sqrt())
        };
        let (coarse, _) = eval(&self.rule);
        let (refined, norm) = eval(&self.refined);
        let scale_ref = refined.abs().max(norm);
        let tol: T = lit(T::QUADRATURE_RTOL);
        if (coarse - refined).abs() > tol * scale_ref || !refined.is_finite() {
            return Err(Error::QuadratureAccuracy {
                context,
                coarse: to_f64(coarse),
                refined: to_f64(refined),
            });
        }
        Ok(refined)
    }
}

impl<T: Real> Default for Quadrature<T> {
    fn default() -> Self {
        Self::new(DEFAULT_NODES)
    }
}
