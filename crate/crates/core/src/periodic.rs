//! Periodic orbits: exact enumeration for the linear map, Newton continuation
//! to the perturbed map, and per-direction periodic exponents.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::damap::DAMap;
use crate::torus::{IntMatrix3, LinearAnosov, Splitting, TorusPoint};

pub const DEFAULT_COUNT_CAP: u64 = 20_000;
pub const DEFAULT_CONSTANCY_TOL: f64 = 1e-6;
pub const ORBIT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PeriodicError {
    #[error("period {period} has {count} points, above the cap {cap}")]
    PeriodTooLarge { period: u32, count: u128, cap: u64 },
    #[error("continuation of the period-{period} orbit through {point} did not converge (residual {residual:.3e})")]
    NoConvergence {
        period: u32,
        point: TorusPoint,
        residual: f64,
    },
    #[error("return map of the period-{period} orbit through {point} has complex eigenvalues")]
    ComplexEigenvalues { period: u32, point: TorusPoint },
    #[error("{} periodic orbit(s) lost; first: period {} at {} ({})", lost.len(), lost[0].period, lost[0].linear_point, lost[0].reason)]
    IncompleteData { lost: Vec<LostOrbit> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LostOrbit {
    pub period: u32,
    pub linear_point: TorusPoint,
    pub reason: String,
}

/// A periodic point of the linear map stored exactly as `numer / denom`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RationalPoint {
    pub numer: [i64; 3],
    pub denom: i64,
}

impl RationalPoint {
    pub fn to_point(&self) -> TorusPoint {
        let d = self.denom as f64;
        TorusPoint::new(
            self.numer[0] as f64 / d,
            self.numer[1] as f64 / d,
            self.numer[2] as f64 / d,
        )
        .expect("rational point in the unit cube")
    }

    /// Image under the integer matrix, reduced mod 1.
    pub fn image(&self, a: &IntMatrix3) -> RationalPoint {
        let v = a.apply(&self.numer);
        RationalPoint {
            numer: v.map(|c| c.rem_euclid(self.denom)),
            denom: self.denom,
        }
    }
}

/// Lower-triangular column Hermite form `L = B U` with `U` unimodular and a
/// positive diagonal. Columns of `L` generate the same lattice as those of `B`.
pub fn column_hermite_form(b: &IntMatrix3) -> [[i128; 3]; 3] {
    let mut m = [[0i128; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = b.0[i][j] as i128;
        }
    }
    for row in 0..3 {
        // Euclid on columns row..3 until only the pivot column is nonzero in this row
        loop {
            let nz: Vec<usize> = (row..3).filter(|&c| m[row][c] != 0).collect();
            if nz.len() <= 1 {
                if let Some(&c) = nz.first() {
                    swap_cols(&mut m, row, c);
                }
                break;
            }
            let pivot = *nz
                .iter()
                .min_by_key(|&&c| m[row][c].abs())
                .expect("nonempty");
            for &c in &nz {
                if c != pivot {
                    let q = m[row][c].div_euclid(m[row][pivot]);
                    for r in 0..3 {
                        m[r][c] -= q * m[r][pivot];
                    }
                }
            }
        }
        if m[row][row] < 0 {
            for r in 0..3 {
                m[r][row] = -m[r][row];
            }
        }
    }
    m
}

fn swap_cols(m: &mut [[i128; 3]; 3], a: usize, b: usize) {
    if a != b {
        for row in m.iter_mut() {
            row.swap(a, b);
        }
    }
}

/// `|det(Aⁿ - I)|`, or `None` when `Aⁿ` overflows.
pub fn periodic_count(a: &LinearAnosov, n: u32) -> Option<u128> {
    let b = a.matrix().checked_pow(n)?.minus_identity();
    Some(b.det().unsigned_abs())
}

/// Largest `n` with `|det(Aⁿ - I)| ≤ cap`.
pub fn default_period_cap(a: &LinearAnosov, cap: u64) -> u32 {
    let mut n = 0;
    while let Some(c) = periodic_count(a, n + 1) {
        if c > cap as u128 {
            break;
        }
        n += 1;
    }
    n
}

/// All solutions of `(Aⁿ - I) x ∈ Z³` on `T³`, exactly.
pub fn linear_periodic_points_exact(
    a: &LinearAnosov,
    n: u32,
    cap: u64,
) -> Result<Vec<RationalPoint>, PeriodicError> {
    assert!(n >= 1, "period must be positive");
    let too_large = |count| PeriodicError::PeriodTooLarge { period: n, count, cap };
    let an = a.matrix().checked_pow(n).ok_or(too_large(u128::MAX))?;
    let b = an.minus_identity();
    let det = b.det();
    let count = det.unsigned_abs();
    if count > cap as u128 {
        return Err(too_large(count));
    }
    let d = count as i128;
    let l = column_hermite_form(&b);
    let adj = b.adjugate();
    let sign = det.signum();
    let mut out = Vec::with_capacity(count as usize);
    for z0 in 0..l[0][0] {
        for z1 in 0..l[1][1] {
            for z2 in 0..l[2][2] {
                let z = [z0, z1, z2];
                // x = B⁻¹ z = adj(B) z / det(B)
                let mut numer = [0i64; 3];
                for (i, slot) in numer.iter_mut().enumerate() {
                    let s: i128 = (0..3).map(|k| adj.0[i][k] as i128 * z[k]).sum();
                    *slot = (s * sign).rem_euclid(d) as i64;
                }
                out.push(RationalPoint {
                    numer,
                    denom: d as i64,
                });
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn linear_periodic_points(a: &LinearAnosov, n: u32, cap: u64) -> Result<Vec<TorusPoint>, PeriodicError> {
    Ok(linear_periodic_points_exact(a, n, cap)?
        .iter()
        .map(RationalPoint::to_point)
        .collect())
}

/// One orbit of the linear map, represented by its lexicographically smallest point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearOrbit {
    pub minimal_period: u32,
    pub representative: RationalPoint,
}

/// Orbits of minimal period exactly `n`, sorted by representative.
pub fn linear_orbits(a: &LinearAnosov, n: u32, cap: u64) -> Result<Vec<LinearOrbit>, PeriodicError> {
    let points = linear_periodic_points_exact(a, n, cap)?;
    let mut seen: HashSet<RationalPoint> = HashSet::with_capacity(points.len());
    let mut out = Vec::new();
    for p in points {
        if seen.contains(&p) {
            continue;
        }
        let mut orbit = vec![p];
        let mut q = p.image(a.matrix());
        while q != p {
            orbit.push(q);
            q = q.image(a.matrix());
        }
        let rep = *orbit.iter().min().expect("nonempty orbit");
        let len = orbit.len() as u32;
        seen.extend(orbit);
        if len == n {
            out.push(LinearOrbit {
                minimal_period: len,
                representative: rep,
            });
        }
    }
    out.sort_by(|x, y| x.representative.cmp(&y.representative));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicOrbit {
    pub period: u32,
    pub minimal_period: u32,
    pub point: TorusPoint,
    /// `m` in `f̃ⁿ(x̃) = x̃ + m`.
    pub translation: [i64; 3],
    pub residual: f64,
}

/// `f̃ⁿ(x̃) - x̃ - m` and `D(fⁿ)(x)` on the lift.
fn lift_defect(f: &DAMap, x: &Vector3<f64>, n: u32, m: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let mut p = *x;
    let mut jac = Matrix3::identity();
    for _ in 0..n {
        let (q, j) = f.lift_apply_with_derivative(&p);
        jac = j * jac;
        p = q;
    }
    (p - x - m, jac)
}

const CONTINUATION_MAX_ITERS: usize = 50;

/// Newton continuation of the `A`-periodic point `p` to an `f`-periodic point.
///
/// Solves `f̃ⁿ(x̃) = x̃ + m` on the lift, with `m = Aⁿ p̃ - p̃` inherited from
/// the linear orbit so the continued point stays on the same branch.
pub fn continue_periodic_orbit(
    f: &DAMap,
    p: &TorusPoint,
    n: u32,
) -> Result<PeriodicOrbit, PeriodicError> {
    assert!(n >= 1, "period must be positive");
    let an = f
        .linear()
        .matrix()
        .checked_pow(n)
        .expect("period small enough for exact powers")
        .to_f64();
    let p0 = p.lift();
    newton_on_lift(f, p0, n, (an * p0 - p0).map(f64::round))
}

/// Polish a point that is already `f`-periodic up to a small error, taking
/// `m` from its own return displacement.
pub fn refine_periodic_point(
    f: &DAMap,
    x: &TorusPoint,
    n: u32,
) -> Result<PeriodicOrbit, PeriodicError> {
    assert!(n >= 1, "period must be positive");
    let x0 = x.lift();
    let mut y = x0;
    for _ in 0..n {
        y = f.lift_apply(&y);
    }
    newton_on_lift(f, x0, n, (y - x0).map(f64::round))
}

fn newton_on_lift(
    f: &DAMap,
    p0: Vector3<f64>,
    n: u32,
    m: Vector3<f64>,
) -> Result<PeriodicOrbit, PeriodicError> {
    let lost = |x: &Vector3<f64>, residual| PeriodicError::NoConvergence {
        period: n,
        point: TorusPoint::from_lift(x),
        residual,
    };
    let mut x = p0;
    let (mut r, mut jac) = lift_defect(f, &x, n, &m);
    let mut res = r.norm();
    let mut iters = 0;
    while res > 1e-13 * (1.0 + m.norm()) && iters < CONTINUATION_MAX_ITERS {
        iters += 1;
        let step = (jac - Matrix3::identity())
            .lu()
            .solve(&r)
            .ok_or_else(|| lost(&x, res))?;
        let mut scale = 1.0;
        loop {
            let cand = x - step * scale;
            let (rc, jc) = lift_defect(f, &cand, n, &m);
            if rc.norm() < res {
                x = cand;
                r = rc;
                jac = jc;
                res = rc.norm();
                break;
            }
            scale *= 0.5;
            if scale < 1e-6 {
                // stalled at round-off level
                iters = CONTINUATION_MAX_ITERS;
                break;
            }
        }
    }
    if res > ORBIT_TOLERANCE {
        return Err(lost(&x, res));
    }
    Ok(PeriodicOrbit {
        period: n,
        minimal_period: n,
        point: TorusPoint::from_lift(&x),
        translation: [m[0] as i64, m[1] as i64, m[2] as i64],
        residual: res,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicData {
    pub orbit: PeriodicOrbit,
    /// Per-iterate logs of the eigenvalue moduli of `D(fⁿ)`, ascending.
    pub exponents: [f64; 3],
    /// `log |det D(fⁿ)|`.
    pub log_det: f64,
}

/// Diagonal similarity by powers of two so that off-diagonal row and column
/// norms are comparable; exact in floating point.
pub(crate) fn balance(m: &Matrix3<f64>) -> Matrix3<f64> {
    let mut a = *m;
    for _ in 0..64 {
        let mut changed = false;
        for i in 0..3 {
            let c: f64 = (0..3).filter(|&k| k != i).map(|k| a[(k, i)].abs()).sum();
            let r: f64 = (0..3).filter(|&k| k != i).map(|k| a[(i, k)].abs()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut g = 1.0;
            while c * g < r / 2.0 {
                g *= 2.0;
            }
            while c * g > r * 2.0 {
                g /= 2.0;
            }
            if g != 1.0 {
                changed = true;
                for k in 0..3 {
                    a[(i, k)] /= g;
                    a[(k, i)] *= g;
                }
            }
        }
        if !changed {
            break;
        }
    }
    a
}

/// Scaled product: `exp(log_scale) · mat`.
struct ScaledProduct {
    mat: Matrix3<f64>,
    log_scale: f64,
}

impl ScaledProduct {
    fn new() -> Self {
        ScaledProduct {
            mat: Matrix3::identity(),
            log_scale: 0.0,
        }
    }

    fn rescale(&mut self) {
        let s = self.mat.abs().max();
        self.mat /= s;
        self.log_scale += s.ln();
    }
}

/// Eigenvalue moduli of a real 3×3 matrix; `None` if a pair is complex.
fn real_eigen_moduli(m: &Matrix3<f64>) -> Option<[f64; 3]> {
    let ev = balance(m).complex_eigenvalues();
    let mut out = [0.0; 3];
    for (k, z) in ev.iter().enumerate() {
        if z.im.abs() > 1e-9 * z.norm() {
            return None;
        }
        out[k] = z.re.abs();
    }
    out.sort_by(f64::total_cmp);
    Some(out)
}

/// Exponents of the return map along a continued orbit.
///
/// The top exponent comes from the forward product and the bottom one from
/// the product of inverse Jacobians, so neither is read off a tiny eigenvalue
/// of an ill-conditioned matrix; the middle one follows from the determinant.
pub fn periodic_data(f: &DAMap, orbit: &PeriodicOrbit) -> Result<PeriodicData, PeriodicError> {
    let n = orbit.period;
    let complex = || PeriodicError::ComplexEigenvalues {
        period: n,
        point: orbit.point,
    };
    let mut fwd = ScaledProduct::new();
    let mut bwd = ScaledProduct::new();
    let mut log_det = 0.0;
    let mut p = orbit.point;
    for _ in 0..n {
        let (q, j) = f.apply_with_derivative(&p);
        log_det += j.determinant().abs().ln();
        fwd.mat = j * fwd.mat;
        fwd.rescale();
        let jinv = j.try_inverse().expect("unit-determinant Jacobian is invertible");
        bwd.mat *= jinv;
        bwd.rescale();
        p = q;
    }
    let top = real_eigen_moduli(&fwd.mat).ok_or_else(complex)?;
    let bottom = real_eigen_moduli(&bwd.mat).ok_or_else(complex)?;
    let nf = n as f64;
    let high = (top[2].ln() + fwd.log_scale) / nf;
    let low = -(bottom[2].ln() + bwd.log_scale) / nf;
    let mid = log_det / nf - high - low;
    let mut exponents = [low, mid, high];
    exponents.sort_by(f64::total_cmp);
    Ok(PeriodicData {
        orbit: orbit.clone(),
        exponents,
        log_det,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Constancy {
    Constant,
    Variable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstancyReport {
    pub max_period: u32,
    pub tol: f64,
    pub splitting: Splitting,
    /// Max minus min of each exponent over all orbits, ascending directions.
    pub spreads: [f64; 3],
    pub verdicts: [Constancy; 3],
    /// The extremal exponent on the one-dimensional side is constant.
    pub predicts_absolute_continuity: bool,
    /// All three exponents are constant.
    pub predicts_rigidity: bool,
    pub data: Vec<PeriodicData>,
}

/// Continue every orbit of minimal period `≤ max_period` and compare
/// periodic exponents across orbits.
pub fn periodic_data_constancy(
    f: &DAMap,
    max_period: u32,
    tol: f64,
) -> Result<ConstancyReport, PeriodicError> {
    let a = f.linear();
    let mut jobs = Vec::new();
    for n in 1..=max_period {
        for o in linear_orbits(a, n, u64::MAX)? {
            jobs.push((n, o.representative.to_point()));
        }
    }
    let results: Vec<Result<PeriodicData, LostOrbit>> = jobs
        .par_iter()
        .map(|&(n, p)| {
            let lose = |e: PeriodicError| LostOrbit {
                period: n,
                linear_point: p,
                reason: e.to_string(),
            };
            let orbit = continue_periodic_orbit(f, &p, n).map_err(lose)?;
            periodic_data(f, &orbit).map_err(lose)
        })
        .collect();
    let mut data = Vec::with_capacity(results.len());
    let mut lost = Vec::new();
    for r in results {
        match r {
            Ok(d) => data.push(d),
            Err(l) => lost.push(l),
        }
    }
    if !lost.is_empty() {
        return Err(PeriodicError::IncompleteData { lost });
    }
    Ok(constancy_from_data(data, max_period, tol, a.splitting()))
}

pub fn constancy_from_data(
    data: Vec<PeriodicData>,
    max_period: u32,
    tol: f64,
    splitting: Splitting,
) -> ConstancyReport {
    let mut spreads = [0.0; 3];
    for k in 0..3 {
        let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (lo.min(d.exponents[k]), hi.max(d.exponents[k]))
        });
        spreads[k] = if data.is_empty() { 0.0 } else { hi - lo };
    }
    let verdicts = spreads.map(|s| {
        if s <= tol {
            Constancy::Constant
        } else {
            Constancy::Variable
        }
    });
    let extremal = match splitting {
        Splitting::TwoContracting => 0,
        Splitting::TwoExpanding => 2,
    };
    ConstancyReport {
        max_period,
        tol,
        splitting,
        spreads,
        predicts_absolute_continuity: verdicts[extremal] == Constancy::Constant,
        predicts_rigidity: verdicts.iter().all(|v| *v == Constancy::Constant),
        verdicts,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::damap::Perturbation;
    use crate::torus::{analyze_linear, reference_matrix};
    use proptest::prelude::*;

    fn a0() -> LinearAnosov {
        analyze_linear(&reference_matrix()).unwrap()
    }

    fn shear(eps: f64) -> DAMap {
        DAMap::new(a0(), vec![Perturbation::shear(0, [0, 1, 0], eps).unwrap()])
    }

    #[test]
    fn fixed_point_count_of_reference_matrix() {
        let b = reference_matrix().minus_identity();
        assert_eq!(b.0, [[2, 2, 1], [2, 1, 1], [1, 1, 0]]);
        assert_eq!(b.det().abs(), 1);
        let pts = linear_periodic_points(&a0(), 1, DEFAULT_COUNT_CAP).unwrap();
        assert_eq!(pts, vec![TorusPoint::ORIGIN]);
    }

    /// Brute-force oracle: all `k ∈ (Z/D)³` with `(Aⁿ - I) k ≡ 0 mod D`.
    fn brute_force(a: &IntMatrix3, n: u32) -> Vec<RationalPoint> {
        let b = a.checked_pow(n).unwrap().minus_identity();
        let d = b.det().unsigned_abs() as i64;
        let mut out = Vec::new();
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let v = b.apply(&[i, j, k]);
                    if v.iter().all(|c| c.rem_euclid(d) == 0) {
                        out.push(RationalPoint {
                            numer: [i, j, k],
                            denom: d,
                        });
                    }
                }
            }
        }
        out
    }

    #[test]
    fn enumeration_matches_brute_force() {
        for n in 1..=3 {
            let got = linear_periodic_points_exact(&a0(), n, DEFAULT_COUNT_CAP).unwrap();
            assert_eq!(got, brute_force(&reference_matrix(), n), "period {n}");
            assert_eq!(got.len() as u128, periodic_count(&a0(), n).unwrap());
        }
    }

    #[test]
    fn hermite_form_is_lower_triangular_with_matching_det() {
        for n in 1..=5 {
            let b = reference_matrix().checked_pow(n).unwrap().minus_identity();
            let l = column_hermite_form(&b);
            assert!(l[0][1] == 0 && l[0][2] == 0 && l[1][2] == 0);
            assert!((0..3).all(|i| l[i][i] > 0));
            assert_eq!(l[0][0] * l[1][1] * l[2][2], b.det().abs());
        }
    }

    #[test]
    fn origin_is_always_periodic_and_cap_is_enforced() {
        for n in 1..=5 {
            let pts = linear_periodic_points_exact(&a0(), n, DEFAULT_COUNT_CAP).unwrap();
            assert!(pts.contains(&RationalPoint {
                numer: [0; 3],
                denom: pts[0].denom
            }));
        }
        assert!(matches!(
            linear_periodic_points(&a0(), 8, DEFAULT_COUNT_CAP),
            Err(PeriodicError::PeriodTooLarge { .. })
        ));
        let cap = default_period_cap(&a0(), DEFAULT_COUNT_CAP);
        assert!(periodic_count(&a0(), cap).unwrap() <= 20_000);
        assert!(periodic_count(&a0(), cap + 1).unwrap() > 20_000);
    }

    #[test]
    fn orbits_partition_periodic_points() {
        // points of period dividing 4 = orbits of minimal period 1, 2 and 4
        let total: usize = [1, 2, 4]
            .iter()
            .map(|&d| linear_orbits(&a0(), d, DEFAULT_COUNT_CAP).unwrap().len() * d as usize)
            .sum();
        assert_eq!(total as u128, periodic_count(&a0(), 4).unwrap());
    }

    #[test]
    fn linear_continuation_is_identity() {
        let f = DAMap::linear_only(a0());
        for o in linear_orbits(&a0(), 3, DEFAULT_COUNT_CAP).unwrap() {
            let p = o.representative.to_point();
            let c = continue_periodic_orbit(&f, &p, 3).unwrap();
            assert!(c.point.distance(&p) < 1e-12);
            assert!(c.residual <= ORBIT_TOLERANCE);
        }
    }

    #[test]
    fn shear_fixed_point_and_exponents() {
        let eps = 0.01;
        let f = shear(eps);
        let c = continue_periodic_orbit(&f, &TorusPoint::ORIGIN, 1).unwrap();
        // the shear vanishes at the origin, so the origin stays fixed
        assert!(c.point.distance(&TorusPoint::ORIGIN) < 1e-12);
        assert_eq!(c.translation, [0, 0, 0]);
        let data = periodic_data(&f, &c).unwrap();
        // oracle: A (I + 2πε e0 e1ᵀ); eigenvalues from the characteristic polynomial
        let mut s = Matrix3::identity();
        s[(0, 1)] = std::f64::consts::TAU * eps;
        let m = a0().as_f64() * s;
        let tr = m.trace();
        let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)]
            - m[(0, 2)] * m[(2, 0)]
            + m[(1, 1)] * m[(2, 2)]
            - m[(1, 2)] * m[(2, 1)];
        let det = m.determinant();
        let p = |x: f64| x * x * x - tr * x * x + minors * x - det;
        let mut roots = Vec::new();
        let mut x0 = 0.0;
        let h = 1e-3;
        while x0 < 10.0 {
            if p(x0) * p(x0 + h) < 0.0 {
                let (mut lo, mut hi) = (x0, x0 + h);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if p(lo) * p(mid) <= 0.0 {
                        hi = mid
                    } else {
                        lo = mid
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            x0 += h;
        }
        assert_eq!(roots.len(), 3);
        for (k, r) in roots.iter().enumerate() {
            assert!((data.exponents[k] - r.ln()).abs() < 1e-10);
            assert!((data.exponents[k] - a0().exponents()[k]).abs() < 0.1);
        }
    }

    #[test]
    fn structural_stability_of_low_periods() {
        let f = shear(0.01);
        for n in 1..=3 {
            let orbits = linear_orbits(&a0(), n, DEFAULT_COUNT_CAP).unwrap();
            let mut continued: Vec<TorusPoint> = Vec::new();
            for o in &orbits {
                let c = continue_periodic_orbit(&f, &o.representative.to_point(), n).unwrap();
                continued.push(c.point);
            }
            // distinct orbits stay distinct
            for i in 0..continued.len() {
                for j in 0..i {
                    let orbit_j = f.orbit(&continued[j], n as usize);
                    assert!(orbit_j.iter().all(|q| q.distance(&continued[i]) > 1e-6));
                }
            }
        }
    }

    #[test]
    fn linear_periodic_data_is_exact() {
        let f = DAMap::linear_only(a0());
        for n in 1..=4 {
            for o in linear_orbits(&a0(), n, DEFAULT_COUNT_CAP).unwrap() {
                let c = continue_periodic_orbit(&f, &o.representative.to_point(), n).unwrap();
                let d = periodic_data(&f, &c).unwrap();
                for k in 0..3 {
                    assert!((d.exponents[k] - a0().exponents()[k]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn periodic_data_independent_of_orbit_point() {
        let f = shear(0.05);
        let o = &linear_orbits(&a0(), 4, DEFAULT_COUNT_CAP).unwrap()[3];
        let c = continue_periodic_orbit(&f, &o.representative.to_point(), 4).unwrap();
        let base = periodic_data(&f, &c).unwrap();
        assert!(base.exponents.iter().sum::<f64>().abs() < 1e-8);
        assert!(base.log_det.abs() < 1e-8);
        for q in f.orbit(&c.point, 3).into_iter().skip(1) {
            let polished = refine_periodic_point(&f, &q, 4).unwrap();
            assert!(polished.point.distance(&q) < 1e-9);
            let d = periodic_data(&f, &polished).unwrap();
            for k in 0..3 {
                assert!((d.exponents[k] - base.exponents[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn continuation_error_decays_with_amplitude() {
        let o = &linear_orbits(&a0(), 3, DEFAULT_COUNT_CAP).unwrap()[5];
        let p = o.representative.to_point();
        let mut last = f64::INFINITY;
        for eps in [0.04, 0.02, 0.01, 0.005] {
            let f = shear(eps);
            let c = continue_periodic_orbit(&f, &p, 3).unwrap();
            let d = periodic_data(&f, &c).unwrap();
            let err = (0..3)
                .map(|k| (d.exponents[k] - a0().exponents()[k]).abs())
                .fold(0.0, f64::max);
            assert!(err < last);
            last = err;
        }
    }

    #[test]
    fn constancy_linear_versus_shear() {
        let lin = periodic_data_constancy(&DAMap::linear_only(a0()), 3, DEFAULT_CONSTANCY_TOL).unwrap();
        assert!(lin.verdicts.iter().all(|v| *v == Constancy::Constant));
        assert!(lin.predicts_absolute_continuity && lin.predicts_rigidity);
        let sh = periodic_data_constancy(&shear(0.05), 3, DEFAULT_CONSTANCY_TOL).unwrap();
        assert!(sh.verdicts.contains(&Constancy::Variable));
        assert!(!sh.predicts_rigidity);
        // orbits sorted by period
        assert!(sh.data.windows(2).all(|w| w[0].orbit.period <= w[1].orbit.period));
    }

    #[test]
    fn balancing_preserves_spectrum() {
        let m = Matrix3::new(1.0, 1e6, 0.0, 1e-6, 2.0, 3.0, 0.0, 1e-3, 4.0);
        let b = balance(&m);
        assert!((b.determinant() - m.determinant()).abs() < 1e-9);
        assert!((b.trace() - m.trace()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rational_image_matches_float_image(i in 0usize..533) {
            let pts = linear_periodic_points_exact(&a0(), 4, DEFAULT_COUNT_CAP).unwrap();
            let p = pts[i % pts.len()];
            let exact = p.image(a0().matrix()).to_point();
            let float = DAMap::linear_only(a0()).apply(&p.to_point());
            prop_assert!(exact.distance(&float) < 1e-12);
        }
    }
}
