//! Two-qubit density matrices, X-form and block views, initial conditions.
//!
//! The product basis is ordered `|++>, |+->, |-+>, |-->`, so the X-form
//! has nonzero entries only on the diagonal and the anti-diagonal. The block
//! basis regroups it as `(|++>, |-->)` and `(|+->, |-+>)`.

use nalgebra::{Matrix2, Matrix4};

use crate::error::{invalid, Error, Result};
use crate::C64;

pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;

/// Entrywise tolerance for Hermiticity.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance on `|Tr rho - 1|`.
pub const TRACE_TOL: f64 = 1e-12;
/// Smallest admissible eigenvalue.
pub const PSD_TOL: f64 = 1e-10;
/// Largest off-X entry accepted by [`TwoQubitState::to_blocks`].
pub const X_FORM_TOL: f64 = 1e-10;
/// Tolerance on normalization constraints of initial conditions.
pub const NORM_TOL: f64 = 1e-9;

/// Positions outside the X pattern, in the product basis.
const OFF_X: [(usize, usize); 8] = [(0, 1), (0, 2), (1, 0), (1, 3), (2, 0), (2, 3), (3, 1), (3, 2)];

/// Column header for [`TwoQubitState::csv_row`].
pub fn csv_header() -> String {
    let mut cols = Vec::with_capacity(32);
    for i in 1..=4 {
        for j in 1..=4 {
            cols.push(format!("re_rho{i}{j}"));
            cols.push(format!("im_rho{i}{j}"));
        }
    }
    cols.join(",")
}

/// A validated two-qubit density matrix in the product basis.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoQubitState {
    m: Mat4,
}

impl TwoQubitState {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(m: Mat4) -> Result<Self> {
        for i in 0..4 {
            for j in 0..4 {
                let d = (m[(i, j)] - m[(j, i)].conj()).norm();
                if !d.is_finite() || d > HERMITIAN_TOL {
                    return Err(Error::InvalidState(format!(
                        "not Hermitian at ({i},{j}): deviation {d:e}"
                    )));
                }
            }
        }
        let tr = m.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace is {tr}")));
        }
        let s = Self { m };
        let lo = s.min_eigenvalue();
        if lo < -PSD_TOL {
            return Err(Error::InvalidState(format!(
                "smallest eigenvalue {lo:e} is negative"
            )));
        }
        Ok(s)
    }

    /// Wraps a matrix without validation. Callers must know it is a state.
    pub fn from_matrix_unchecked(m: Mat4) -> Self {
        Self { m }
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.m
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.m[(i, j)]
    }

    /// Eigenvalues in ascending order, from a generic Hermitian solver.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let herm = (self.m + self.m.adjoint()) * C64::new(0.5, 0.0);
        let e = herm.symmetric_eigenvalues();
        let mut v = [e[0], e[1], e[2], e[3]];
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// `Tr rho^2`.
    pub fn purity(&self) -> f64 {
        (self.m * self.m).trace().re
    }

    /// Largest modulus among entries outside the X pattern, with its position.
    pub fn x_form_violation(&self) -> (f64, (usize, usize)) {
        OFF_X
            .iter()
            .map(|&(i, j)| (self.m[(i, j)].norm(), (i, j)))
            .fold((0.0, (0, 1)), |acc, x| if x.0 > acc.0 { x } else { acc })
    }

    pub fn is_x_form(&self, tol: f64) -> bool {
        self.x_form_violation().0 <= tol
    }

    pub fn to_blocks(&self) -> Result<BlockState> {
        let (mag, (row, col)) = self.x_form_violation();
        if mag > X_FORM_TOL {
            return Err(Error::NotXForm {
                row,
                col,
                magnitude: mag,
            });
        }
        let m = &self.m;
        Ok(BlockState {
            plus: Mat2::new(m[(0, 0)], m[(0, 3)], m[(3, 0)], m[(3, 3)]),
            minus: Mat2::new(m[(1, 1)], m[(1, 2)], m[(2, 1)], m[(2, 2)]),
        })
    }

    /// Reduced state of the first qubit.
    pub fn reduced_a(&self) -> Mat2 {
        let m = &self.m;
        Mat2::new(
            m[(0, 0)] + m[(1, 1)],
            m[(0, 2)] + m[(1, 3)],
            m[(2, 0)] + m[(3, 1)],
            m[(2, 2)] + m[(3, 3)],
        )
    }

    /// Reduced state of the second qubit.
    pub fn reduced_b(&self) -> Mat2 {
        let m = &self.m;
        Mat2::new(
            m[(0, 0)] + m[(2, 2)],
            m[(0, 1)] + m[(2, 3)],
            m[(1, 0)] + m[(3, 2)],
            m[(1, 1)] + m[(3, 3)],
        )
    }

    /// Exchanges the two qubits.
    pub fn swapped(&self) -> Self {
        const P: [usize; 4] = [0, 2, 1, 3];
        let m = Mat4::from_fn(|i, j| self.m[(P[i], P[j])]);
        Self { m }
    }

    /// 32 comma-separated numbers, re and im of each entry, row-major.
    pub fn csv_row(&self) -> String {
        let mut out = Vec::with_capacity(32);
        for i in 0..4 {
            for j in 0..4 {
                let z = self.m[(i, j)];
                out.push(crate::format::g12(z.re));
                out.push(crate::format::g12(z.im));
            }
        }
        out.join(",")
    }

    /// Largest entrywise distance to another state.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (self.m - other.m).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// The two diagonal blocks of an X-state.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockState {
    /// Spanned by `|++>, |-->`.
    pub plus: Mat2,
    /// Spanned by `|+->, |-+>`.
    pub minus: Mat2,
}

impl BlockState {
    pub fn to_state(&self) -> TwoQubitState {
        let (p, q) = (&self.plus, &self.minus);
        let z = C64::new(0.0, 0.0);
        let m = Mat4::new(
            p[(0, 0)],
            z,
            z,
            p[(0, 1)],
            z,
            q[(0, 0)],
            q[(0, 1)],
            z,
            z,
            q[(1, 0)],
            q[(1, 1)],
            z,
            p[(1, 0)],
            z,
            z,
            p[(1, 1)],
        );
        TwoQubitState::from_matrix_unchecked(m)
    }

    pub fn trace(&self) -> f64 {
        (self.plus.trace() + self.minus.trace()).re
    }

    pub fn to_a_coords(&self) -> ABlockCoords {
        let q = &self.minus;
        let half = C64::new(0.5, 0.0);
        ABlockCoords {
            a1: (half * (q[(0, 0)] + q[(0, 1)] + q[(1, 0)] + q[(1, 1)])).re,
            a2: (half * (q[(0, 0)] - q[(0, 1)] - q[(1, 0)] + q[(1, 1)])).re,
            a3: half * (q[(0, 0)] + q[(0, 1)] - q[(1, 0)] - q[(1, 1)]),
            rho11: self.plus[(0, 0)].re,
            rho44: self.plus[(1, 1)].re,
            rho14: self.plus[(0, 1)],
        }
    }
}

/// Coordinates `(rho11, A1, rho44, A2, A3, rho14)` of an X-state.
///
/// `A1` and `A2` are the weights of the symmetric and antisymmetric
/// combinations of `|+->` and `|-+>`, and `A3` collects the population
/// imbalance and the imaginary part of the coherence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ABlockCoords {
    pub rho11: f64,
    pub a1: f64,
    pub rho44: f64,
    pub a2: f64,
    pub a3: C64,
    pub rho14: C64,
}

impl ABlockCoords {
    pub fn to_blocks(&self) -> BlockState {
        let s = self.a1 + self.a2;
        let d = 2.0 * self.a3.re;
        let re23 = 0.5 * (self.a1 - self.a2);
        let im23 = self.a3.im;
        let r23 = C64::new(re23, im23);
        BlockState {
            plus: Mat2::new(
                C64::new(self.rho11, 0.0),
                self.rho14,
                self.rho14.conj(),
                C64::new(self.rho44, 0.0),
            ),
            minus: Mat2::new(
                C64::new(0.5 * (s + d), 0.0),
                r23,
                r23.conj(),
                C64::new(0.5 * (s - d), 0.0),
            ),
        }
    }

    pub fn to_state(&self) -> TwoQubitState {
        self.to_blocks().to_state()
    }
}

/// Which Bell-like family a Werner state is built on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BellFamily {
    /// `alpha |-+> + beta |+->`.
    One,
    /// `alpha |--> + beta |++>`.
    Two,
}

/// The four families of initial conditions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialCondition {
    /// `rho_A = rho_B = diag(alpha0^2, 1 - alpha0^2)`.
    Product { alpha0: f64 },
    /// `alpha1 |-+> + beta1 |+->`.
    Bell1 { alpha1: f64, beta1: C64 },
    /// `alpha2 |--> + beta2 |++>`.
    Bell2 { alpha2: f64, beta2: C64 },
    /// `alpha3 |Psi_k><Psi_k| + (1 - alpha3)/4`.
    Werner {
        k: BellFamily,
        alpha3: f64,
        alpha: f64,
        beta: C64,
    },
}

fn real_beta(alpha: f64) -> C64 {
    C64::new((1.0 - alpha * alpha).max(0.0).sqrt(), 0.0)
}

impl InitialCondition {
    pub fn product(alpha0: f64) -> Self {
        Self::Product { alpha0 }
    }

    /// Bell-like state of the first family with real `beta1 >= 0`.
    pub fn bell1(alpha1: f64) -> Self {
        Self::Bell1 {
            alpha1,
            beta1: real_beta(alpha1),
        }
    }

    /// Bell-like state of the second family with real `beta2 >= 0`.
    pub fn bell2(alpha2: f64) -> Self {
        Self::Bell2 {
            alpha2,
            beta2: real_beta(alpha2),
        }
    }

    /// Werner state on a real Bell-like vector.
    pub fn werner(k: BellFamily, alpha3: f64, alpha: f64) -> Self {
        Self::Werner {
            k,
            alpha3,
            alpha,
            beta: real_beta(alpha),
        }
    }

    fn check_pair(name: &str, alpha: f64, beta: C64) -> Result<()> {
        if !(0.0..=1.0).contains(&alpha) || !beta.norm().is_finite() {
            return Err(invalid(format!("{name}: alpha = {alpha} not in [0, 1]")));
        }
        let n = alpha * alpha + beta.norm_sqr();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(invalid(format!("{name}: alpha^2 + |beta|^2 = {n}, expected 1")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Product { alpha0 } => {
                if !(0.0..=1.0).contains(&alpha0) {
                    return Err(invalid(format!("product: alpha0 = {alpha0} not in [0, 1]")));
                }
                Ok(())
            }
            Self::Bell1 { alpha1, beta1 } => Self::check_pair("bell1", alpha1, beta1),
            Self::Bell2 { alpha2, beta2 } => Self::check_pair("bell2", alpha2, beta2),
            Self::Werner {
                alpha3, alpha, beta, ..
            } => {
                if !(-1.0 / 3.0..=1.0).contains(&alpha3) {
                    return Err(invalid(format!("werner: alpha3 = {alpha3} not in [-1/3, 1]")));
                }
                Self::check_pair("werner", alpha, beta)
            }
        }
    }

    /// Builds the density matrix of the family.
    pub fn build(&self) -> Result<TwoQubitState> {
        self.validate()?;
        let m = match *self {
            Self::Product { alpha0 } => {
                let p = alpha0 * alpha0;
                let d = [p, 1.0 - p];
                Mat4::from_fn(|i, j| {
                    if i == j {
                        C64::new(d[i >> 1] * d[i & 1], 0.0)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                })
            }
            Self::Bell1 { alpha1, beta1 } => pure(&bell_vector(BellFamily::One, alpha1, beta1)),
            Self::Bell2 { alpha2, beta2 } => pure(&bell_vector(BellFamily::Two, alpha2, beta2)),
            Self::Werner {
                k,
                alpha3,
                alpha,
                beta,
            } => {
                let p = pure(&bell_vector(k, alpha, beta));
                p * C64::new(alpha3, 0.0) + Mat4::identity() * C64::new((1.0 - alpha3) / 4.0, 0.0)
            }
        };
        TwoQubitState::new(m)
    }
}

fn bell_vector(k: BellFamily, alpha: f64, beta: C64) -> [C64; 4] {
    let z = C64::new(0.0, 0.0);
    let a = C64::new(alpha, 0.0);
    match k {
        BellFamily::One => [z, beta, a, z],
        BellFamily::Two => [beta, z, z, a],
    }
}

fn pure(v: &[C64; 4]) -> Mat4 {
    Mat4::from_fn(|i, j| v[i] * v[j].conj())
}
