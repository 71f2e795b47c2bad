//! Derivative-free Nelder–Mead minimization.

/// Stopping rule and iteration budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMead {
    pub max_iterations: usize,
    /// Stop once every vertex lies within `x_tol·max(1, |x_best|)` of the
    /// best vertex in each coordinate.
    pub x_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            x_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl NelderMead {
    /// Minimizes `f` from `start`, with the initial simplex spanned by
    /// `steps` along the coordinate axes. Non-finite values count as +∞.
    pub fn minimize<F: FnMut(&[f64]) -> f64>(
        &self,
        mut f: F,
        start: &[f64],
        steps: &[f64],
    ) -> Minimum {
        let n = start.len();
        assert_eq!(steps.len(), n, "one step per coordinate");
        let mut evaluations = 0;
        let mut eval = |x: &[f64]| {
            evaluations += 1;
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let v0 = eval(start);
        simplex.push((start.to_vec(), v0));
        for i in 0..n {
            let mut x = start.to_vec();
            x[i] += if steps[i] != 0.0 { steps[i] } else { 1e-3 };
            let v = eval(&x);
            simplex.push((x, v));
        }
        let (alpha, gamma, rho, shrink) = (1.0, 2.0, 0.5, 0.5);
        let mut iterations = 0;
        let mut converged = false;
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if self.is_converged(&simplex) {
                converged = true;
                break;
            }
            if iterations >= self.max_iterations {
                break;
            }
            iterations += 1;
            let centroid: Vec<f64> = (0..n)
                .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
                .collect();
            let worst = simplex[n].clone();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&worst.0)
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let reflected = along(alpha);
            let fr = eval(&reflected);
            if fr < simplex[0].1 {
                let expanded = along(gamma);
                let fe = eval(&expanded);
                simplex[n] = if fe < fr {
                    (expanded, fe)
                } else {
                    (reflected, fr)
                };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (reflected, fr);
                continue;
            }
            let (contracted, fc) = if fr < worst.1 {
                let x = along(alpha * rho);
                let v = eval(&x);
                (x, v)
            } else {
                let x = along(-rho);
                let v = eval(&x);
                (x, v)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (contracted, fc);
                continue;
            }
            let best = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                let x: Vec<f64> = best
                    .iter()
                    .zip(&vertex.0)
                    .map(|(b, v)| b + shrink * (v - b))
                    .collect();
                let v = eval(&x);
                *vertex = (x, v);
            }
        }
        let (x, value) = simplex.swap_remove(0);
        Minimum {
            x,
            value,
            iterations,
            evaluations,
            converged,
        }
    }

    fn is_converged(&self, simplex: &[(Vec<f64>, f64)]) -> bool {
        let best = &simplex[0].0;
        simplex[1..].iter().all(|(x, _)| {
            x.iter()
                .zip(best)
                .all(|(a, b)| (a - b).abs() <= self.x_tol * b.abs().max(1.0))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let m = NelderMead::default().minimize(
            |x| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + (x[2] - 0.5).powi(2),
            &[0.0, 0.0, 0.0],
            &[0.5, 0.5, 0.5],
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-8);
        assert!((m.x[1] + 2.0).abs() < 1e-8);
        assert!((m.x[2] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock_within_budget() {
        let m = NelderMead {
            max_iterations: 2000,
            x_tol: 1e-10,
        }
        .minimize(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.1, 0.1],
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-7 && (m.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let m = NelderMead {
            max_iterations: 3,
            x_tol: 1e-14,
        }
        .minimize(|x| x[0].powi(2), &[5.0], &[1.0]);
        assert!(!m.converged);
        assert_eq!(m.iterations, 3);
    }

    #[test]
    fn non_finite_values_are_avoided() {
        let m = NelderMead::default().minimize(
            |x| {
                if x[0] < 0.0 {
                    f64::NAN
                } else {
                    (x[0] - 0.1).powi(2)
                }
            },
            &[1.0],
            &[0.5],
        );
        assert!((m.x[0] - 0.1).abs() < 1e-8);
    }
}
