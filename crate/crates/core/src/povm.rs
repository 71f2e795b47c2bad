//! Four-outcome projective measurements on the first four displaced modes.
//!
//! Three rank-one elements `Π_j = |π_j⟩⟨π_j|` with `|π_j⟩ = Σ_k C_jk |Φ_k⟩`
//! are completed by `Π₃ = 𝟙 − Σ Π_j`. Superresolving behaviour needs two rows
//! orthogonal to `Φ₀` with a `Φ₁` component and a third row touching both.

use std::fmt;

use nalgebra::{Matrix3, Matrix3x4, Matrix4, RowVector4, SymmetricEigen, Vector4};
use serde::{Deserialize, Serialize};

use crate::basis::OrthonormalBasis;
use crate::error::{Error, Result};
use crate::fisher::{FisherKind, FisherMatrix};
use crate::params::SourceParams;
use crate::scalar::{lit, to_f64, Real};

/// Coefficients treated as exactly zero in the structural conditions.
pub const ZERO_COEFFICIENT_TOL: f64 = 1e-12;

/// Structural coefficients below this magnitude raise a conditioning warning.
pub const NEAR_VIOLATION_TOL: f64 = 1e-3;

/// Probabilities and derivatives below this are treated as zero.
pub const NEGLIGIBLE_PROBABILITY: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PovmFamily {
    Phi { phi: f64 },
    Custom,
}

/// Rows `π₀, π₁, π₂` over `Φ₀..Φ₃` and the displacement they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct PovmSpec<T: Real> {
    coefficients: Matrix3x4<T>,
    x0: T,
    family: PovmFamily,
}

impl<T: Real> PovmSpec<T> {
    pub fn custom(coefficients: Matrix3x4<T>, x0: T) -> Self {
        Self {
            coefficients,
            x0,
            family: PovmFamily::Custom,
        }
    }

    pub fn coefficients(&self) -> &Matrix3x4<T> {
        &self.coefficients
    }

    pub fn row(&self, j: usize) -> RowVector4<T> {
        self.coefficients.row(j).into_owned()
    }

    pub fn x0(&self) -> T {
        self.x0
    }

    pub fn family(&self) -> PovmFamily {
        self.family
    }

    /// The same rows referred to another displacement.
    pub fn displaced(&self, x0: T) -> Self {
        Self { x0, ..self.clone() }
    }

    /// `Π₃ = 𝟙 − Σ_j |π_j⟩⟨π_j|` on the four-mode subspace.
    pub fn completion(&self) -> Matrix4<T> {
        let c = &self.coefficients;
        Matrix4::identity() - c.transpose() * c
    }
}

/// The orthonormal one-angle family, `0 < φ < π/2`.
pub fn build_phi_family<T: Real>(phi: f64, x0: T) -> Result<PovmSpec<T>> {
    if !(phi > 0.0 && phi < std::f64::consts::FRAC_PI_2) {
        return Err(Error::InvalidParameter(format!(
            "measurement angle must lie in (0, π/2), got {phi}"
        )));
    }
    let c = phi.cos();
    let n01 = (1.0 + c).sqrt();
    let n2 = 1.0 + 3.0 * c;
    let (sh, ch) = ((phi / 2.0).sin() / n01, (phi / 2.0).cos() / n01);
    let tail = -(c / (1.0 + c)).sqrt();
    let lead = (2.0 * c / n2).sqrt();
    let last = ((1.0 - c) / n2).sqrt();
    let rows: [[f64; 4]; 3] = [
        [0.0, sh, ch, tail],
        [0.0, sh, -ch, tail],
        [lead, lead, 0.0, last],
    ];
    Ok(PovmSpec {
        coefficients: Matrix3x4::from_fn(|j, k| lit(rows[j][k])),
        x0,
        family: PovmFamily::Phi { phi },
    })
}

/// A failed structural requirement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum Violation {
    RowNorm {
        row: usize,
        norm: f64,
    },
    IncompleteMeasure {
        min_eigenvalue: f64,
    },
    LinearlyDependent {
        gram_determinant: f64,
    },
    /// Exactly two rows must be orthogonal to `Φ₀`.
    SignalOrthogonalRows {
        count: usize,
    },
    /// A row orthogonal to `Φ₀` lacks a `Φ₁` component.
    MissingTilt {
        row: usize,
    },
    /// The remaining row must overlap both `Φ₀` and `Φ₁`.
    MissingSignalOverlap {
        row: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowNorm { row, norm } => write!(f, "row {row} has norm {norm} > 1"),
            Violation::IncompleteMeasure { min_eigenvalue } => {
                write!(
                    f,
                    "completion element is not positive (min eigenvalue {min_eigenvalue:e})"
                )
            }
            Violation::LinearlyDependent { gram_determinant } => {
                write!(
                    f,
                    "projectors are linearly dependent (Gram determinant {gram_determinant:e})"
                )
            }
            Violation::SignalOrthogonalRows { count } => {
                write!(
                    f,
                    "{count} rows are orthogonal to the signal mode, expected 2"
                )
            }
            Violation::MissingTilt { row } => write!(f, "row {row} has no first-mode component"),
            Violation::MissingSignalOverlap { row } => {
                write!(f, "row {row} must overlap both the signal and first modes")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum Warning {
    /// A structurally nonzero coefficient is close to zero.
    NearViolation {
        row: usize,
        mode: usize,
        value: f64,
    },
    ZeroQuality,
}

/// Result of [`validate_povm`]; the quality factor is always computed from
/// the canonical row order, even when conditions fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub quality: f64,
    /// Rows in canonical order: signal-orthogonal rows first by descending
    /// `|C_j1|`.
    pub canonical_order: [usize; 3],
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl QualityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_povm<T: Real>(spec: &PovmSpec<T>) -> QualityReport {
    let c = spec.coefficients.map(to_f64);
    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    for j in 0..3 {
        let norm = c.row(j).norm();
        if norm > 1.0 + 1e-12 {
            violations.push(Violation::RowNorm { row: j, norm });
        }
    }
    let completion = Matrix4::<f64>::identity() - c.transpose() * c;
    let min_eig = SymmetricEigen::new(completion).eigenvalues.min();
    if min_eig < -1e-10 {
        violations.push(Violation::IncompleteMeasure {
            min_eigenvalue: min_eig,
        });
    }
    // Gram matrix of the projectors under the Hilbert–Schmidt product.
    let dots = &c * c.transpose();
    let gram = Matrix3::from_fn(|i, j| dots[(i, j)].powi(2));
    let det = gram.determinant();
    if det.abs() < 1e-12 {
        violations.push(Violation::LinearlyDependent {
            gram_determinant: det,
        });
    }

    let zero = |v: f64| v.abs() <= ZERO_COEFFICIENT_TOL;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let key = |j: usize| (!zero(c[(j, 0)]), std::cmp::Reverse(OrdF64(c[(j, 1)].abs())));
        key(a).cmp(&key(b))
    });
    let orthogonal = (0..3).filter(|&j| zero(c[(j, 0)])).count();
    if orthogonal != 2 {
        violations.push(Violation::SignalOrthogonalRows { count: orthogonal });
    }
    for (slot, &j) in order.iter().enumerate() {
        let needs = if slot < 2 { vec![1] } else { vec![0, 1] };
        for k in needs {
            let v = c[(j, k)];
            if zero(v) {
                if slot < 2 || orthogonal == 2 {
                    violations.push(if slot < 2 {
                        Violation::MissingTilt { row: j }
                    } else {
                        Violation::MissingSignalOverlap { row: j }
                    });
                }
            } else if v.abs() < NEAR_VIOLATION_TOL {
                warnings.push(Warning::NearViolation {
                    row: j,
                    mode: k,
                    value: v,
                });
            }
        }
    }
    violations.dedup();

    let (r0, r1) = (order[0], order[1]);
    let cross = c[(r0, 1)] * c[(r1, 2)] - c[(r0, 2)] * c[(r1, 1)];
    let denom = c[(r0, 1)].powi(2) + c[(r1, 1)].powi(2);
    let quality = if denom > 0.0 {
        cross * cross / denom
    } else {
        0.0
    };
    if quality < 1e-12 {
        warnings.push(Warning::ZeroQuality);
    }
    QualityReport {
        quality,
        canonical_order: order,
        violations,
        warnings,
    }
}

#[derive(PartialEq, PartialOrd)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// `λ = 4q(1−q)·𝒜`, the aligned-measurement fraction of the quantum limit.
pub fn lambda_prediction(q: f64, report: &QualityReport) -> f64 {
    4.0 * q * (1.0 - q) * report.quality
}

/// Intensity-weighted centroid `s0 − s(1−2q)/2`.
pub fn optimal_displacement<T: Real>(theta: &SourceParams<T>) -> T {
    let half: T = lit(0.5);
    theta.s0() - half * theta.s() * (T::one() - theta.q() - theta.q())
}

/// Outcome probabilities with their parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeJacobian<T: Real> {
    pub probabilities: Vector4<T>,
    /// `gradient[(j, α)] = ∂p_j/∂θ_α`.
    pub gradient: nalgebra::Matrix4x3<T>,
}

fn check_displacement<T: Real>(spec: &PovmSpec<T>, basis: &OrthonormalBasis<T>) -> Result<()> {
    let tol = lit::<T>(1e-12) * (T::one() + spec.x0.abs());
    if (spec.x0 - basis.x0()).abs() > tol {
        return Err(Error::DisplacementMismatch {
            basis: to_f64(basis.x0()),
            measurement: to_f64(spec.x0),
        });
    }
    Ok(())
}

fn complete<T: Real>(p: [T; 3]) -> Result<T> {
    let p3 = T::one() - p[0] - p[1] - p[2];
    let tol: T = lit(1e-12);
    if p3 < -tol {
        return Err(Error::InvalidParameter(format!(
            "outcome probabilities exceed one by {:e}; the measurement is not complete",
            -to_f64(p3)
        )));
    }
    Ok(p3.max(T::zero()))
}

pub fn outcome_probabilities<T: Real>(
    spec: &PovmSpec<T>,
    basis: &OrthonormalBasis<T>,
    theta: &SourceParams<T>,
) -> Result<Vector4<T>> {
    check_displacement(spec, basis)?;
    let x0 = basis.x0();
    let cp = basis
        .displaced_state_coefficients(theta.a_plus(x0))?
        .coefficients;
    let cm = basis
        .displaced_state_coefficients(theta.a_minus(x0))?
        .coefficients;
    let q = theta.q();
    let mut p = [T::zero(); 3];
    for (j, pj) in p.iter_mut().enumerate() {
        let (u, v) = (
            project(spec, j, cp.as_slice()),
            project(spec, j, cm.as_slice()),
        );
        *pj = q * u * u + (T::one() - q) * v * v;
    }
    let p3 = complete(p)?;
    Ok(Vector4::new(p[0], p[1], p[2], p3))
}

/// Probabilities from the first four overlaps only, without the truncation
/// and displacement checks; for likelihood loops.
pub(crate) fn probabilities_unchecked<T: Real>(
    spec: &PovmSpec<T>,
    basis: &OrthonormalBasis<T>,
    theta: &SourceParams<T>,
) -> Vector4<T> {
    let x0 = basis.x0();
    let cp = basis.coefficients_upto(theta.a_plus(x0), 4);
    let cm = basis.coefficients_upto(theta.a_minus(x0), 4);
    let q = theta.q();
    let mut p = Vector4::zeros();
    for j in 0..3 {
        let (u, v) = (
            project(spec, j, cp.as_slice()),
            project(spec, j, cm.as_slice()),
        );
        p[j] = q * u * u + (T::one() - q) * v * v;
    }
    p[3] = (T::one() - p[0] - p[1] - p[2]).max(T::zero());
    p
}

fn project<T: Real>(spec: &PovmSpec<T>, j: usize, c: &[T]) -> T {
    (0..4).fold(T::zero(), |acc, k| acc + spec.coefficients[(j, k)] * c[k])
}

pub fn outcome_jacobian<T: Real>(
    spec: &PovmSpec<T>,
    basis: &OrthonormalBasis<T>,
    theta: &SourceParams<T>,
) -> Result<OutcomeJacobian<T>> {
    check_displacement(spec, basis)?;
    let x0 = basis.x0();
    let (ap, am) = (theta.a_plus(x0), theta.a_minus(x0));
    let cp = basis.displaced_state_coefficients(ap)?.coefficients;
    let cm = basis.displaced_state_coefficients(am)?.coefficients;
    let dp = basis.derivative_upto(ap, 4);
    let dm = basis.derivative_upto(am, 4);
    let q = theta.q();
    let (one, two, half) = (T::one(), lit::<T>(2.0), lit::<T>(0.5));
    let mut p = [T::zero(); 3];
    let mut grad = nalgebra::Matrix4x3::<T>::zeros();
    for j in 0..3 {
        let (u, v) = (
            project(spec, j, cp.as_slice()),
            project(spec, j, cm.as_slice()),
        );
        let (du, dv) = (
            project(spec, j, dp.as_slice()),
            project(spec, j, dm.as_slice()),
        );
        p[j] = q * u * u + (one - q) * v * v;
        // d/da± of the two terms; a± move with s0 at rate 1 and with s at ±1/2.
        let gp = two * q * u * du;
        let gm = two * (one - q) * v * dv;
        grad[(j, 0)] = gp + gm;
        grad[(j, 1)] = (gp - gm) * half;
        grad[(j, 2)] = u * u - v * v;
    }
    for a in 0..3 {
        grad[(3, a)] = -(grad[(0, a)] + grad[(1, a)] + grad[(2, a)]);
    }
    let p3 = complete(p)?;
    Ok(OutcomeJacobian {
        probabilities: Vector4::new(p[0], p[1], p[2], p3),
        gradient: grad,
    })
}

/// `F = Σ_j ∇p_j ∇p_jᵀ / p_j` per detection event.
pub fn fisher_from_jacobian<T: Real>(jac: &OutcomeJacobian<T>) -> (Matrix3<T>, bool) {
    let tiny: T = lit(NEGLIGIBLE_PROBABILITY);
    let mut f = Matrix3::<T>::zeros();
    let mut unbounded = false;
    for j in 0..4 {
        let p = jac.probabilities[j];
        let g = jac.gradient.row(j).transpose();
        if !(p >= tiny) {
            if g.amax() >= tiny {
                unbounded = true;
            }
            continue;
        }
        f += &g * g.transpose() / p;
    }
    (f, unbounded)
}

pub fn classical_fim<T: Real>(
    spec: &PovmSpec<T>,
    basis: &OrthonormalBasis<T>,
    theta: &SourceParams<T>,
) -> Result<FisherMatrix<T>> {
    let jac = outcome_jacobian(spec, basis, theta)?;
    let (f, unbounded) = fisher_from_jacobian(&jac);
    Ok(FisherMatrix::new(
        f,
        FisherKind::Classical,
        theta.clone(),
        basis.psf().descriptor().clone(),
    )
    .with_unbounded(unbounded))
}
