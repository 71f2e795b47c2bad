//! Quantum Fisher information for the two-source state.
//!
//! Two independent routes are provided: [`qfim_closed`] evaluates the compact
//! moment formula, while [`qfim_numeric`] builds `ρ` in a mode basis and solves
//! the symmetric logarithmic derivatives directly.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use crate::basis::OrthonormalBasis;
use crate::error::{Error, Result};
use crate::fisher::{FisherKind, FisherMatrix, PrecisionTriple};
use crate::params::SourceParams;
use crate::psf::PsfModel;
use crate::scalar::{lit, Real};

/// `ρ = q c₊c₊ᵀ + (1−q) c₋c₋ᵀ` in an orthonormal mode basis.
#[derive(Debug, Clone)]
pub struct DensityMatrix<T: Real> {
    matrix: DMatrix<T>,
    plus: DVector<T>,
    minus: DVector<T>,
    q: T,
}

impl<T: Real> DensityMatrix<T> {
    pub fn from_components(plus: DVector<T>, minus: DVector<T>, q: T) -> Self {
        let matrix = &plus * plus.transpose() * q + &minus * minus.transpose() * (T::one() - q);
        Self {
            matrix,
            plus,
            minus,
            q,
        }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn plus(&self) -> &DVector<T> {
        &self.plus
    }

    pub fn minus(&self) -> &DVector<T> {
        &self.minus
    }

    pub fn q(&self) -> T {
        self.q
    }

    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> T {
        self.matrix.trace()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<T> {
        let mut v: Vec<T> = SymmetricEigen::new(flush_tiny(&self.matrix))
            .eigenvalues
            .iter()
            .copied()
            .collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        v
    }
}

pub fn density_matrix<T: Real>(
    basis: &OrthonormalBasis<T>,
    theta: &SourceParams<T>,
) -> Result<DensityMatrix<T>> {
    let x0 = basis.x0();
    let plus = basis
        .displaced_state_coefficients(theta.a_plus(x0))?
        .coefficients;
    let minus = basis
        .displaced_state_coefficients(theta.a_minus(x0))?
        .coefficients;
    Ok(DensityMatrix::from_components(plus, minus, theta.q()))
}

/// `∂ρ/∂s0`, `∂ρ/∂s`, `∂ρ/∂q`.
pub fn parameter_derivatives<T: Real>(
    basis: &OrthonormalBasis<T>,
    theta: &SourceParams<T>,
) -> Result<[DMatrix<T>; 3]> {
    let x0 = basis.x0();
    let (ap, am) = (theta.a_plus(x0), theta.a_minus(x0));
    let cp = basis.displaced_state_coefficients(ap)?.coefficients;
    let cm = basis.displaced_state_coefficients(am)?.coefficients;
    let dp = basis.displaced_state_derivative(ap)?;
    let dm = basis.displaced_state_derivative(am)?;
    let q = theta.q();
    let sym = |c: &DVector<T>, d: &DVector<T>| {
        let outer = c * d.transpose();
        &outer + outer.transpose()
    };
    let plus = sym(&cp, &dp) * q;
    let minus = sym(&cm, &dm) * (T::one() - q);
    let half: T = lit(0.5);
    let d_s0 = &plus + &minus;
    let d_s = (&plus - &minus) * half;
    let d_q = &cp * cp.transpose() - &cm * cm.transpose();
    Ok([d_s0, d_s, d_q])
}

/// Reusable eigen-decomposition of `ρ` for solving several SLDs.
#[derive(Debug, Clone)]
pub struct SldSolver<T: Real> {
    values: DVector<T>,
    vectors: DMatrix<T>,
    threshold: T,
}

impl<T: Real> SldSolver<T> {
    pub fn new(rho: &DensityMatrix<T>) -> Self {
        Self::from_matrix(rho.matrix())
    }

    pub fn from_matrix(rho: &DMatrix<T>) -> Self {
        let eig = SymmetricEigen::new(flush_tiny(rho));
        let max = eig
            .eigenvalues
            .iter()
            .fold(T::zero(), |m, &v| m.max(v.abs()));
        Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
            threshold: max * lit(T::SUPPORT_EPS),
        }
    }

    /// SLD in the eigenbasis of `ρ`.
    fn solve_eigenbasis(&self, drho: &DMatrix<T>) -> DMatrix<T> {
        let d = self.vectors.transpose() * drho * &self.vectors;
        let two: T = lit(2.0);
        DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| {
            let sum = self.values[i] + self.values[j];
            if sum > self.threshold {
                two * d[(i, j)] / sum
            } else {
                T::zero()
            }
        })
    }

    pub fn solve(&self, drho: &DMatrix<T>) -> DMatrix<T> {
        let l = self.solve_eigenbasis(drho);
        let l = &self.vectors * l * self.vectors.transpose();
        (&l + l.transpose()) * lit::<T>(0.5)
    }
}

/// Zeroes entries below `ε²·max|ρ|`. High-order coefficients of a narrow
/// displacement reach subnormal range, where the eigensolver's rotations
/// break down.
fn flush_tiny<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let cutoff = m.amax() * T::default_epsilon() * T::default_epsilon();
    m.map(|v| if v.abs() < cutoff { T::zero() } else { v })
}

/// Solves `(Lρ + ρL)/2 = dρ` for symmetric `L`.
pub fn solve_sld<T: Real>(rho: &DensityMatrix<T>, drho: &DMatrix<T>) -> DMatrix<T> {
    SldSolver::new(rho).solve(drho)
}

/// State, derivatives and SLDs at one parameter point.
#[derive(Debug, Clone)]
pub struct SldSet<T: Real> {
    pub rho: DensityMatrix<T>,
    pub derivatives: [DMatrix<T>; 3],
    pub slds: [DMatrix<T>; 3],
}

impl<T: Real> SldSet<T> {
    pub fn compute(basis: &OrthonormalBasis<T>, theta: &SourceParams<T>) -> Result<Self> {
        let rho = density_matrix(basis, theta)?;
        let derivatives = parameter_derivatives(basis, theta)?;
        let solver = SldSolver::new(&rho);
        let slds = [
            solver.solve(&derivatives[0]),
            solver.solve(&derivatives[1]),
            solver.solve(&derivatives[2]),
        ];
        Ok(Self {
            rho,
            derivatives,
            slds,
        })
    }

    /// `Q_αβ = ½ tr(ρ{L_α, L_β})`.
    pub fn qfim(&self) -> Matrix3<T> {
        let rho = self.rho.matrix();
        let half: T = lit(0.5);
        Matrix3::from_fn(|a, b| {
            let (la, lb) = (&self.slds[a], &self.slds[b]);
            let anti = la * lb + lb * la;
            (rho * anti).trace() * half
        })
    }

    /// `R_αβ = tr(ρ[L_α, L_β])`.
    pub fn commutator_residual(&self) -> Matrix3<T> {
        let rho = self.rho.matrix();
        Matrix3::from_fn(|a, b| {
            let (la, lb) = (&self.slds[a], &self.slds[b]);
            (rho * (la * lb - lb * la)).trace()
        })
    }
}

pub fn qfim_numeric<T: Real>(
    basis: &OrthonormalBasis<T>,
    theta: &SourceParams<T>,
) -> Result<FisherMatrix<T>> {
    let set = SldSet::compute(basis, theta)?;
    Ok(FisherMatrix::new(
        set.qfim(),
        FisherKind::Quantum,
        theta.clone(),
        basis.psf().descriptor().clone(),
    ))
}

/// Closed form in terms of `p²`, `w(s)` and `Im ℘(s)`.
pub fn qfim_closed<T: Real>(
    model: &PsfModel<T>,
    theta: &SourceParams<T>,
) -> Result<FisherMatrix<T>> {
    let m = model.compute_moments(theta.s())?;
    let q = theta.q();
    let four: T = lit(4.0);
    let half: T = lit(0.5);
    let qq = q * (T::one() - q);
    let q00 = four * (m.p_squared - four * qq * m.p_imag * m.p_imag);
    let q01 = four * (q - half) * m.p_squared;
    let q02 = four * m.w * m.p_imag;
    let q11 = m.p_squared;
    let q22 = m.one_minus_w * (T::one() + m.w) / qq;
    let z = T::zero();
    let matrix = Matrix3::new(q00, q01, q02, q01, q11, z, q02, z, q22);
    Ok(FisherMatrix::new(
        matrix,
        FisherKind::Quantum,
        theta.clone(),
        model.descriptor().clone(),
    ))
}

/// Antisymmetric matrix `tr(ρ[L_α, L_β])`; vanishes when the three
/// parameters can be estimated jointly at the quantum limit.
pub fn compatibility_residual<T: Real>(
    basis: &OrthonormalBasis<T>,
    theta: &SourceParams<T>,
) -> Result<Matrix3<T>> {
    Ok(SldSet::compute(basis, theta)?.commutator_residual())
}

/// Quantum precisions from the closed form.
pub fn quantum_precisions<T: Real>(
    model: &PsfModel<T>,
    theta: &SourceParams<T>,
) -> Result<PrecisionTriple<T>> {
    qfim_closed(model, theta)?.precisions()
}

/// Leading small-separation precisions with `𝒬² = 4q(1−q)`:
/// `H_s0 ≈ 𝒬² V s²`, `H_s ≈ 𝒬² V s² / (4(1−𝒬²))`, `H_q ≈ V s⁴ / 𝒬²`,
/// where `V = Var(P²)`. Undefined at `q = 1/2`.
pub fn small_separation_approx<T: Real>(
    model: &PsfModel<T>,
    theta: &SourceParams<T>,
) -> Result<PrecisionTriple<T>> {
    let qf = theta.intensity_factor();
    if !(T::one() - qf > lit(1e-12)) {
        return Err(Error::BalancedIntensity);
    }
    let v = model.fourth_moment()? - model.p_squared()?.powi(2);
    let s2 = theta.s() * theta.s();
    Ok(PrecisionTriple {
        s0: qf * v * s2,
        s: qf * v * s2 / (lit::<T>(4.0) * (T::one() - qf)),
        q: v * s2 * s2 / qf,
        condition: T::zero(),
    })
}
