//! Fisher information matrices and the precisions they bound.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{SourceParams, PARAMETER_ORDER};
use crate::psf::PsfDescriptor;
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherKind {
    Quantum,
    Classical,
}

/// 3×3 information matrix per detection event, parameter order `(s0, s, q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    into = "FisherRecord<T>",
    try_from = "FisherRecord<T>",
    bound(serialize = "T: Real", deserialize = "T: Real")
)]
pub struct FisherMatrix<T: Real> {
    matrix: Matrix3<T>,
    kind: FisherKind,
    theta: SourceParams<T>,
    psf: PsfDescriptor,
    unbounded: bool,
}

/// Wire form: `{order, matrix, kind, theta, psf, unbounded}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct FisherRecord<T> {
    pub order: Vec<String>,
    pub matrix: [[T; 3]; 3],
    pub kind: FisherKind,
    pub theta: SourceParams<T>,
    pub psf: PsfDescriptor,
    #[serde(default)]
    pub unbounded: bool,
}

impl<T: Real> From<FisherMatrix<T>> for FisherRecord<T> {
    fn from(f: FisherMatrix<T>) -> Self {
        let m = f.matrix;
        FisherRecord {
            order: PARAMETER_ORDER.iter().map(|s| s.to_string()).collect(),
            matrix: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            kind: f.kind,
            theta: f.theta,
            psf: f.psf,
            unbounded: f.unbounded,
        }
    }
}

impl<T: Real> TryFrom<FisherRecord<T>> for FisherMatrix<T> {
    type Error = Error;

    fn try_from(r: FisherRecord<T>) -> Result<Self> {
        if r.order != PARAMETER_ORDER {
            return Err(Error::InvalidParameter(format!(
                "unexpected parameter order {:?}",
                r.order
            )));
        }
        let matrix = Matrix3::from_fn(|i, j| r.matrix[i][j]);
        Ok(FisherMatrix {
            matrix,
            kind: r.kind,
            theta: r.theta,
            psf: r.psf,
            unbounded: r.unbounded,
        })
    }
}

impl<T: Real> FisherMatrix<T> {
    pub fn new(
        matrix: Matrix3<T>,
        kind: FisherKind,
        theta: SourceParams<T>,
        psf: PsfDescriptor,
    ) -> Self {
        // Symmetrize; callers assemble from symmetric formulas.
        let matrix = (matrix + matrix.transpose()) * lit::<T>(0.5);
        Self {
            matrix,
            kind,
            theta,
            psf,
            unbounded: false,
        }
    }

    pub(crate) fn with_unbounded(mut self, unbounded: bool) -> Self {
        self.unbounded = unbounded;
        self
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.matrix
    }

    pub fn kind(&self) -> FisherKind {
        self.kind
    }

    pub fn theta(&self) -> &SourceParams<T> {
        &self.theta
    }

    pub fn psf(&self) -> &PsfDescriptor {
        &self.psf
    }

    /// Set when some outcome had vanishing probability but non-vanishing
    /// derivative; such outcomes are excluded from the sum.
    pub fn is_unbounded(&self) -> bool {
        self.unbounded
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.matrix[(i, j)]
    }

    pub fn min_eigenvalue(&self) -> T {
        min_eigenvalue(&self.matrix)
    }

    pub fn precisions(&self) -> Result<PrecisionTriple<T>> {
        precisions_from_fisher(&self.matrix)
    }

    /// Relative Frobenius distance `‖A − B‖ / ‖B‖`.
    pub fn relative_difference(&self, reference: &FisherMatrix<T>) -> T {
        (self.matrix - reference.matrix).norm() / reference.matrix.norm()
    }
}

pub fn min_eigenvalue<T: Real>(m: &Matrix3<T>) -> T {
    SymmetricEigen::new(*m).eigenvalues.min()
}

/// Inverse-variance bounds `H_α = 1 / (F⁻¹)_αα`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionTriple<T> {
    pub s0: T,
    pub s: T,
    pub q: T,
    /// Condition number of the diagonally equilibrated matrix.
    pub condition: T,
}

impl<T: Real> PrecisionTriple<T> {
    pub fn to_array(&self) -> [T; 3] {
        [self.s0, self.s, self.q]
    }

    /// Componentwise ratio `self / reference`.
    pub fn ratio(&self, reference: &PrecisionTriple<T>) -> [T; 3] {
        [
            self.s0 / reference.s0,
            self.s / reference.s,
            self.q / reference.q,
        ]
    }
}

/// Inverts `F` after symmetric diagonal equilibration, which keeps the
/// `O(s²)`/`O(s⁴)` scale disparities of small-separation matrices from eating
/// precision.
pub fn precisions_from_fisher<T: Real>(f: &Matrix3<T>) -> Result<PrecisionTriple<T>> {
    let diag = f.diagonal();
    let singular = |condition: T| {
        let eig = SymmetricEigen::new(*f);
        let k = eig.eigenvalues.imin();
        let v: Vector3<T> = eig.eigenvectors.column(k).into_owned();
        Error::Singular {
            null_direction: [to_f64(v[0]), to_f64(v[1]), to_f64(v[2])],
            condition: to_f64(condition),
        }
    };
    if diag.iter().any(|&d| !(d > T::zero()) || !d.is_finite()) {
        return Err(singular(T::max_value().unwrap_or_else(T::one)));
    }
    let scale = diag.map(|d| T::one() / d.sqrt());
    let equilibrated = Matrix3::from_fn(|i, j| f[(i, j)] * scale[i] * scale[j]);
    let eig = SymmetricEigen::new(equilibrated).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let condition = if lo > T::zero() {
        hi / lo
    } else {
        T::max_value().unwrap_or_else(T::one)
    };
    if !(lo > T::default_epsilon() * hi) {
        return Err(singular(condition));
    }
    let inv = equilibrated
        .try_inverse()
        .ok_or_else(|| singular(condition))?;
    let h = |i: usize| diag[i] / inv[(i, i)];
    Ok(PrecisionTriple {
        s0: h(0),
        s: h(1),
        q: h(2),
        condition,
    })
}

/// `F⁻¹`, computed after diagonal equilibration.
pub fn covariance_bound<T: Real>(f: &Matrix3<T>) -> Result<Matrix3<T>> {
    precisions_from_fisher(f)?;
    let scale = f.diagonal().map(|d| T::one() / d.sqrt());
    let equilibrated = Matrix3::from_fn(|i, j| f[(i, j)] * scale[i] * scale[j]);
    let inv = equilibrated.try_inverse().ok_or(Error::Singular {
        null_direction: [0.0; 3],
        condition: f64::INFINITY,
    })?;
    Ok(Matrix3::from_fn(|i, j| inv[(i, j)] * scale[i] * scale[j]))
}

/// `F⁻¹` over the parameters not marked in `known`; rows and columns of
/// known parameters are zero.
pub fn covariance_bound_known<T: Real>(f: &Matrix3<T>, known: [bool; 3]) -> Result<Matrix3<T>> {
    let reduced = Matrix3::from_fn(|i, j| match (known[i], known[j]) {
        (false, false) => f[(i, j)],
        _ if i == j => T::one(),
        _ => T::zero(),
    });
    let inv = covariance_bound(&reduced)?;
    Ok(Matrix3::from_fn(|i, j| {
        if known[i] || known[j] {
            T::zero()
        } else {
            inv[(i, j)]
        }
    }))
}
