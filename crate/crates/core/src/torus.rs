//! Geometry of the flat 3-torus `R³/Z³`.
//!
//! Points are stored with every coordinate in `[0, 1)`; displacements on the
//! universal cover are plain [`LiftVector`]s. Integer matrices carry exact
//! determinant and characteristic-polynomial arithmetic so that hyperbolicity
//! is decided on integers, never on rounded floats.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Values within this distance below 1 wrap to 0.
pub const WRAP_CLAMP: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TorusError {
    #[error("non-finite lift component {0}")]
    NonFinite(f64),
    #[error("matrix is not unimodular: |det| = {0}")]
    NotUnimodular(i128),
    #[error("matrix is not hyperbolic: {0} is an eigenvalue of modulus one")]
    NotHyperbolic(i64),
    #[error("eigenvalues do not split into three distinct reals (discriminant {0})")]
    NotSplit(i128),
    #[error("expected nine integers, got {0}")]
    BadEntryCount(usize),
}

/// A point of `T³`, every coordinate in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint([f64; 3]);

/// A displacement in the universal cover `R³`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftVector(pub Vector3<f64>);

fn wrap_coord(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 - WRAP_CLAMP {
        0.0
    } else {
        r
    }
}

impl TorusPoint {
    pub const ORIGIN: TorusPoint = TorusPoint([0.0; 3]);

    /// Builds a point from arbitrary finite reals by reducing mod 1.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, TorusError> {
        wrap(&LiftVector(Vector3::new(x, y, z)))
    }

    /// Reduces a vector that is known to be finite.
    ///
    /// Panics on NaN or infinite input; use [`wrap`] for untrusted data.
    pub fn from_lift(v: &Vector3<f64>) -> Self {
        wrap(&LiftVector(*v)).expect("finite lift vector")
    }

    pub fn coords(&self) -> [f64; 3] {
        self.0
    }

    /// The canonical lift: the representative in `[0, 1)³`.
    pub fn lift(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn distance(&self, other: &TorusPoint) -> f64 {
        min_displacement(self, other).0.norm()
    }

    /// Translate by a lift vector and wrap.
    pub fn translate(&self, v: &Vector3<f64>) -> TorusPoint {
        TorusPoint::from_lift(&(self.lift() + v))
    }
}

impl fmt::Display for TorusPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.12}, {:.12}, {:.12})", self.0[0], self.0[1], self.0[2])
    }
}

/// Reduce each coordinate of `v` mod 1 into `[0, 1)`.
pub fn wrap(v: &LiftVector) -> Result<TorusPoint, TorusError> {
    let mut out = [0.0; 3];
    for (o, &c) in out.iter_mut().zip(v.0.iter()) {
        if !c.is_finite() {
            return Err(TorusError::NonFinite(c));
        }
        *o = wrap_coord(c);
    }
    Ok(TorusPoint(out))
}

/// Representative of `q - p` with every component in `[-0.5, 0.5)`.
pub fn min_displacement(p: &TorusPoint, q: &TorusPoint) -> LiftVector {
    let mut d = Vector3::zeros();
    for i in 0..3 {
        let raw = q.0[i] - p.0[i];
        d[i] = raw - (raw + 0.5).floor();
    }
    LiftVector(d)
}

/// A 3×3 integer matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntMatrix3(pub [[i64; 3]; 3]);

impl IntMatrix3 {
    pub const IDENTITY: IntMatrix3 = IntMatrix3([[1, 0, 0], [0, 1, 0], [0, 0, 1]]);

    pub fn from_row_major(entries: &[i64]) -> Result<Self, TorusError> {
        if entries.len() != 9 {
            return Err(TorusError::BadEntryCount(entries.len()));
        }
        let mut m = [[0; 3]; 3];
        for (k, &e) in entries.iter().enumerate() {
            m[k / 3][k % 3] = e;
        }
        Ok(IntMatrix3(m))
    }

    pub fn row_major(&self) -> [i64; 9] {
        let mut out = [0; 9];
        for k in 0..9 {
            out[k] = self.0[k / 3][k % 3];
        }
        out
    }

    pub fn det(&self) -> i128 {
        let m = self.wide();
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> i128 {
        (0..3).map(|i| self.0[i][i] as i128).sum()
    }

    /// Sum of the principal 2×2 minors.
    pub fn minor_sum(&self) -> i128 {
        let m = self.wide();
        (m[0][0] * m[1][1] - m[0][1] * m[1][0])
            + (m[0][0] * m[2][2] - m[0][2] * m[2][0])
            + (m[1][1] * m[2][2] - m[1][2] * m[2][1])
    }

    /// Coefficients `[c0, c1, c2]` of the monic characteristic polynomial
    /// `x³ + c2 x² + c1 x + c0`.
    pub fn char_poly(&self) -> [i128; 3] {
        [-self.det(), self.minor_sum(), -self.trace()]
    }

    /// Adjugate, so that `M · adj(M) = det(M) · I`.
    pub fn adjugate(&self) -> IntMatrix3 {
        let m = &self.0;
        let c = |r0: usize, r1: usize, c0: usize, c1: usize| {
            m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
        };
        IntMatrix3([
            [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
            [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
            [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
        ])
    }

    /// Exact inverse for `det = ±1`.
    pub fn unimodular_inverse(&self) -> Option<IntMatrix3> {
        let det = self.det();
        if det.abs() != 1 {
            return None;
        }
        let adj = self.adjugate();
        let s = det as i64;
        let mut out = [[0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = adj.0[i][j] * s;
            }
        }
        Some(IntMatrix3(out))
    }

    pub fn mul(&self, other: &IntMatrix3) -> IntMatrix3 {
        let mut out = [[0i64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        IntMatrix3(out)
    }

    /// Checked product; `None` on i64 overflow.
    pub fn checked_mul(&self, other: &IntMatrix3) -> Option<IntMatrix3> {
        let mut out = [[0i64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc: i64 = 0;
                for k in 0..3 {
                    acc = acc.checked_add(self.0[i][k].checked_mul(other.0[k][j])?)?;
                }
                out[i][j] = acc;
            }
        }
        Some(IntMatrix3(out))
    }

    pub fn checked_pow(&self, n: u32) -> Option<IntMatrix3> {
        let mut acc = IntMatrix3::IDENTITY;
        for _ in 0..n {
            acc = acc.checked_mul(self)?;
        }
        Some(acc)
    }

    pub fn minus_identity(&self) -> IntMatrix3 {
        let mut out = self.0;
        for (i, row) in out.iter_mut().enumerate() {
            row[i] -= 1;
        }
        IntMatrix3(out)
    }

    pub fn apply(&self, v: &[i64; 3]) -> [i64; 3] {
        let mut out = [0; 3];
        for i in 0..3 {
            out[i] = (0..3).map(|k| self.0[i][k] * v[k]).sum();
        }
        out
    }

    pub fn to_f64(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.0[i][j] as f64)
    }

    fn wide(&self) -> [[i128; 3]; 3] {
        let mut w = [[0i128; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                w[i][j] = self.0[i][j] as i128;
            }
        }
        w
    }
}

/// Which of the two partially hyperbolic splittings a linear map carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Splitting {
    /// `E^ss ⊕ E^ws ⊕ E^u`: two contracting directions, center contracting.
    TwoContracting,
    /// `E^s ⊕ E^wu ⊕ E^uu`: two expanding directions, center expanding.
    TwoExpanding,
}

impl Splitting {
    /// Labels of the three directions in increasing modulus.
    pub fn labels(&self) -> [&'static str; 3] {
        match self {
            Splitting::TwoContracting => ["ss", "ws", "u"],
            Splitting::TwoExpanding => ["s", "wu", "uu"],
        }
    }

    pub fn center_contracting(&self) -> bool {
        matches!(self, Splitting::TwoContracting)
    }
}

/// A hyperbolic element of `GL(3, Z)` with real, distinct eigenvalues.
///
/// Index 0 is always the strongest contraction, 1 the center, 2 the strongest
/// expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAnosov {
    matrix: IntMatrix3,
    inverse: IntMatrix3,
    eigenvalues: [f64; 3],
    eigenvectors: [Vector3<f64>; 3],
    exponents: [f64; 3],
    splitting: Splitting,
}

impl LinearAnosov {
    pub fn matrix(&self) -> &IntMatrix3 {
        &self.matrix
    }

    pub fn inverse(&self) -> &IntMatrix3 {
        &self.inverse
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &[Vector3<f64>; 3] {
        &self.eigenvectors
    }

    pub fn exponents(&self) -> [f64; 3] {
        self.exponents
    }

    pub fn splitting(&self) -> Splitting {
        self.splitting
    }

    pub fn center_eigenvalue(&self) -> f64 {
        self.eigenvalues[1]
    }

    pub fn center_exponent(&self) -> f64 {
        self.exponents[1]
    }

    /// Columns are the unit eigenvectors in index order.
    pub fn eigenbasis(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&self.eigenvectors)
    }

    /// Change of coordinates from the standard basis to eigen-coordinates.
    pub fn eigenbasis_inverse(&self) -> Matrix3<f64> {
        self.eigenbasis()
            .try_inverse()
            .expect("eigenvectors of distinct eigenvalues are independent")
    }

    pub fn as_f64(&self) -> Matrix3<f64> {
        self.matrix.to_f64()
    }

    pub fn inverse_f64(&self) -> Matrix3<f64> {
        self.inverse.to_f64()
    }
}

fn eval_monic(c: &[f64; 3], x: f64) -> f64 {
    ((x + c[2]) * x + c[1]) * x + c[0]
}

/// Bisection on a bracket with a sign change, to relative width 1e-14.
fn bisect_root(c: &[f64; 3], mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = eval_monic(c, lo);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-14 * mid.abs().max(1.0) {
            break;
        }
        let fm = eval_monic(c, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Unit null vector of `M - μI`, sign-normalized.
fn null_vector(m: &Matrix3<f64>, mu: f64) -> Vector3<f64> {
    let b = m - Matrix3::identity() * mu;
    let rows: [Vector3<f64>; 3] = [
        b.row(0).transpose(),
        b.row(1).transpose(),
        b.row(2).transpose(),
    ];
    let cands = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ];
    let mut v = cands
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap();
    v /= v.norm();
    // one step of inverse iteration tightens the residual
    let shifted = b + Matrix3::identity() * (1e-10 * mu.abs().max(1.0));
    if let Some(w) = shifted.lu().solve(&v) {
        if w.norm().is_finite() && w.norm() > 0.0 {
            v = w / w.norm();
        }
    }
    normalize_sign(v)
}

/// First component with modulus above 1e-12 is made positive.
pub fn normalize_sign(v: Vector3<f64>) -> Vector3<f64> {
    for i in 0..3 {
        if v[i].abs() > 1e-12 {
            return if v[i] < 0.0 { -v } else { v };
        }
    }
    v
}

/// Eigen-analysis of an integer matrix as a hyperbolic toral automorphism.
pub fn analyze_linear(m: &IntMatrix3) -> Result<LinearAnosov, TorusError> {
    let det = m.det();
    if det.abs() != 1 {
        return Err(TorusError::NotUnimodular(det.abs()));
    }
    let [c0, c1, c2] = m.char_poly();
    // the only real candidates of modulus one are ±1
    for r in [1i128, -1] {
        if r * r * r + c2 * r * r + c1 * r + c0 == 0 {
            return Err(TorusError::NotHyperbolic(r as i64));
        }
    }
    // discriminant of x³ + b x² + c x + d
    let (b, c, d) = (c2, c1, c0);
    let disc = 18 * b * c * d - 4 * b * b * b * d + b * b * c * c - 4 * c * c * c - 27 * d * d;
    if disc <= 0 {
        return Err(TorusError::NotSplit(disc));
    }

    let cf = [c0 as f64, c1 as f64, c2 as f64];
    let bound = 1.0 + cf.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    // critical points of the cubic separate its three roots
    let (qa, qb, qc) = (3.0, 2.0 * cf[2], cf[1]);
    let sq = (qb * qb - 4.0 * qa * qc).sqrt();
    let t1 = (-qb - sq) / (2.0 * qa);
    let t2 = (-qb + sq) / (2.0 * qa);
    let mut roots = [
        bisect_root(&cf, -bound, t1),
        bisect_root(&cf, t1, t2),
        bisect_root(&cf, t2, bound),
    ];
    roots.sort_by(|a, b| a.abs().total_cmp(&b.abs()));

    let mf = m.to_f64();
    let eigenvectors = roots.map(|mu| null_vector(&mf, mu));
    let exponents = roots.map(|mu| mu.abs().ln());
    let contracting = roots.iter().filter(|r| r.abs() < 1.0).count();
    let splitting = if contracting == 2 {
        Splitting::TwoContracting
    } else {
        Splitting::TwoExpanding
    };
    Ok(LinearAnosov {
        matrix: *m,
        inverse: m.unimodular_inverse().expect("det is ±1"),
        eigenvalues: roots,
        eigenvectors,
        exponents,
        splitting,
    })
}

/// The reference automorphism `[[3,2,1],[2,2,1],[1,1,1]]`.
pub fn reference_matrix() -> IntMatrix3 {
    IntMatrix3([[3, 2, 1], [2, 2, 1], [1, 1, 1]])
}
