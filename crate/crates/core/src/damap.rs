//! Derived-from-Anosov maps `f = A ∘ φ_k ∘ … ∘ φ_1` built from exactly
//! volume-preserving primitives.
//!
//! Two primitive families are available:
//!
//! * **Shear** `x_i ← x_i + ε sin(2π n·x)` with `n_i = 0`. The Jacobian is
//!   unipotent, so `det = 1` holds symbolically.
//! * **Twist**: in a linear frame `P` (columns of unit length) the displacement
//!   from a center is rotated in one coordinate plane by an angle
//!   `θ(q) = θ_max · b(q/ρ²)`, `q = |P⁻¹ d|²`. Since `q` is invariant under the
//!   rotation the map is a cylindrical twist in frame coordinates and preserves
//!   volume; the bump `b(s) = 1 - (10s³ - 15s⁴ + 6s⁵)` is `C²`, equal to 1 at
//!   0 and flat at 1, so the twist is the identity outside the ball `q ≥ ρ²`.
//!
//! Every primitive has a periodic displacement on the lift, hence `f` is
//! homotopic to its linear part and `f̃(x + z) = f̃(x) + A z`.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::torus::{min_displacement, LinearAnosov, Splitting, TorusPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DamapError {
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
    #[error("Newton inversion did not converge (residual {residual:.3e} after {iterations} iterations)")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("partial hyperbolicity certification failed at grid index {index:?} {point}: {reason}")]
    CertificationFailed {
        index: [usize; 3],
        point: TorusPoint,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shear {
    pub target: usize,
    pub frequency: [i64; 3],
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Twist {
    frame: Matrix3<f64>,
    frame_inv: Matrix3<f64>,
    plane: (usize, usize),
    center: TorusPoint,
    radius: f64,
    max_angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    Shear(Shear),
    Twist(Twist),
}

fn bump(s: f64) -> f64 {
    1.0 - s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

fn bump_deriv(s: f64) -> f64 {
    -30.0 * s * s * (1.0 - s) * (1.0 - s)
}

fn rotation(theta: f64) -> (f64, f64) {
    (theta.cos(), theta.sin())
}

impl Perturbation {
    pub fn shear(target: usize, frequency: [i64; 3], amplitude: f64) -> Result<Self, DamapError> {
        if target > 2 {
            return Err(DamapError::InvalidPerturbation(format!(
                "shear target {target} out of range"
            )));
        }
        if frequency[target] != 0 {
            return Err(DamapError::InvalidPerturbation(
                "shear frequency must vanish on the target coordinate".into(),
            ));
        }
        if !amplitude.is_finite() {
            return Err(DamapError::InvalidPerturbation("non-finite amplitude".into()));
        }
        Ok(Perturbation::Shear(Shear {
            target,
            frequency,
            amplitude,
        }))
    }

    /// A compactly supported twist.
    ///
    /// `frame` columns are normalized; the support (a ball of radius `radius`
    /// in frame coordinates) must fit inside one fundamental domain, which is
    /// enforced through `radius · ‖P‖_F < 1/2`.
    pub fn twist(
        frame: Matrix3<f64>,
        plane: (usize, usize),
        center: TorusPoint,
        radius: f64,
        max_angle: f64,
    ) -> Result<Self, DamapError> {
        let (i, j) = plane;
        if i > 2 || j > 2 || i == j {
            return Err(DamapError::InvalidPerturbation(format!(
                "bad rotation plane ({i}, {j})"
            )));
        }
        if !(radius > 0.0) || !max_angle.is_finite() {
            return Err(DamapError::InvalidPerturbation(
                "twist radius must be positive and the angle finite".into(),
            ));
        }
        let mut frame = frame;
        for mut c in frame.column_iter_mut() {
            let n = c.norm();
            if !(n > 0.0) {
                return Err(DamapError::InvalidPerturbation("degenerate frame".into()));
            }
            c /= n;
        }
        let frame_inv = frame
            .try_inverse()
            .ok_or_else(|| DamapError::InvalidPerturbation("singular frame".into()))?;
        if radius * frame.norm() >= 0.5 {
            return Err(DamapError::InvalidPerturbation(format!(
                "twist radius {radius} does not fit in a fundamental domain"
            )));
        }
        Ok(Perturbation::Twist(Twist {
            frame,
            frame_inv,
            plane,
            center,
            radius,
            max_angle,
        }))
    }

    /// Periodic displacement `φ̃(x) - x`.
    pub fn displacement(&self, x: &TorusPoint) -> Vector3<f64> {
        match self {
            Perturbation::Shear(s) => {
                let mut d = Vector3::zeros();
                d[s.target] = s.amplitude * (TAU * s.phase(x)).sin();
                d
            }
            Perturbation::Twist(t) => t.displacement(x, 1.0),
        }
    }

    pub fn jacobian(&self, x: &TorusPoint) -> Matrix3<f64> {
        match self {
            Perturbation::Shear(s) => {
                let mut j = Matrix3::identity();
                let c = TAU * s.amplitude * (TAU * s.phase(x)).cos();
                for k in 0..3 {
                    j[(s.target, k)] += c * s.frequency[k] as f64;
                }
                j
            }
            Perturbation::Twist(t) => t.jacobian(x),
        }
    }

    /// Closed-form inverse displacement: `φ⁻¹(y) = y + inverse_displacement(y)`.
    pub fn inverse_displacement(&self, y: &TorusPoint) -> Vector3<f64> {
        match self {
            // the phase ignores the target coordinate, so it is shared by y and φ⁻¹(y)
            Perturbation::Shear(_) => -self.displacement(y),
            Perturbation::Twist(t) => t.displacement(y, -1.0),
        }
    }

    pub fn amplitude(&self) -> f64 {
        match self {
            Perturbation::Shear(s) => s.amplitude,
            Perturbation::Twist(t) => t.max_angle,
        }
    }
}

impl Shear {
    fn phase(&self, x: &TorusPoint) -> f64 {
        let c = x.coords();
        (0..3).map(|k| self.frequency[k] as f64 * c[k]).sum()
    }
}

impl Twist {
    pub fn frame(&self) -> &Matrix3<f64> {
        &self.frame
    }

    pub fn plane(&self) -> (usize, usize) {
        self.plane
    }

    pub fn center(&self) -> TorusPoint {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn max_angle(&self) -> f64 {
        self.max_angle
    }

    fn local(&self, x: &TorusPoint) -> (Vector3<f64>, f64) {
        let d = min_displacement(&self.center, x).0;
        let w = self.frame_inv * d;
        (w, w.norm_squared() / (self.radius * self.radius))
    }

    fn displacement(&self, x: &TorusPoint, sign: f64) -> Vector3<f64> {
        let (w, s) = self.local(x);
        if s >= 1.0 {
            return Vector3::zeros();
        }
        let theta = sign * self.max_angle * bump(s);
        let (c, sn) = rotation(theta);
        let (i, j) = self.plane;
        let mut dw = Vector3::zeros();
        dw[i] = (c - 1.0) * w[i] - sn * w[j];
        dw[j] = sn * w[i] + (c - 1.0) * w[j];
        self.frame * dw
    }

    fn jacobian(&self, x: &TorusPoint) -> Matrix3<f64> {
        let (w, s) = self.local(x);
        if s >= 1.0 {
            return Matrix3::identity();
        }
        let theta = self.max_angle * bump(s);
        let (c, sn) = rotation(theta);
        let (i, j) = self.plane;
        // frame-coordinate Jacobian: rotation block plus the angle-gradient term
        let mut dt = Matrix3::identity();
        dt[(i, i)] = c;
        dt[(i, j)] = -sn;
        dt[(j, i)] = sn;
        dt[(j, j)] = c;
        let grad = w * (self.max_angle * bump_deriv(s) * 2.0 / (self.radius * self.radius));
        let mut dr = Vector3::zeros();
        dr[i] = -sn * w[i] - c * w[j];
        dr[j] = c * w[i] - sn * w[j];
        dt += dr * grad.transpose();
        self.frame * dt * self.frame_inv
    }
}

/// Newton settings for [`DAMap::invert`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            tolerance: 1e-13,
            max_iterations: 60,
        }
    }
}

/// `f = A ∘ φ_k ∘ … ∘ φ_1`; perturbations are applied in list order.
#[derive(Debug, Clone, PartialEq)]
pub struct DAMap {
    linear: LinearAnosov,
    matrix: Matrix3<f64>,
    matrix_inv: Matrix3<f64>,
    perturbations: Vec<Perturbation>,
    newton: NewtonSettings,
}

impl DAMap {
    pub fn new(linear: LinearAnosov, perturbations: Vec<Perturbation>) -> Self {
        let matrix = linear.as_f64();
        let matrix_inv = linear.inverse_f64();
        DAMap {
            linear,
            matrix,
            matrix_inv,
            perturbations,
            newton: NewtonSettings::default(),
        }
    }

    pub fn linear_only(linear: LinearAnosov) -> Self {
        DAMap::new(linear, Vec::new())
    }

    pub fn with_newton(mut self, newton: NewtonSettings) -> Self {
        self.newton = newton;
        self
    }

    pub fn linear(&self) -> &LinearAnosov {
        &self.linear
    }

    pub fn perturbations(&self) -> &[Perturbation] {
        &self.perturbations
    }

    pub fn newton(&self) -> NewtonSettings {
        self.newton
    }

    pub fn is_linear(&self) -> bool {
        self.perturbations.is_empty()
    }

    /// `φ̃_k ∘ … ∘ φ̃_1` on the lift.
    fn perturb_lift(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let mut x = *v;
        for p in &self.perturbations {
            x += p.displacement(&TorusPoint::from_lift(&x));
        }
        x
    }

    /// Canonical lift `f̃ = A ∘ φ̃` evaluated anywhere on `R³`.
    pub fn lift_apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.matrix * self.perturb_lift(v)
    }

    pub fn apply(&self, x: &TorusPoint) -> TorusPoint {
        TorusPoint::from_lift(&self.lift_apply(&x.lift()))
    }

    /// `f̃(x) - A x`, a `Z³`-periodic function.
    pub fn linear_defect(&self, x: &TorusPoint) -> Vector3<f64> {
        let v = x.lift();
        self.matrix * (self.perturb_lift(&v) - v)
    }

    pub fn derivative(&self, x: &TorusPoint) -> Matrix3<f64> {
        self.apply_with_derivative(x).1
    }

    /// `f(x)` and `Df(x)` in one pass over the primitives.
    pub fn apply_with_derivative(&self, x: &TorusPoint) -> (TorusPoint, Matrix3<f64>) {
        let (y, j) = self.lift_apply_with_derivative(&x.lift());
        (TorusPoint::from_lift(&y), j)
    }

    pub fn lift_apply_with_derivative(&self, v: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
        let mut x = *v;
        let mut jac = Matrix3::identity();
        for p in &self.perturbations {
            let t = TorusPoint::from_lift(&x);
            jac = p.jacobian(&t) * jac;
            x += p.displacement(&t);
        }
        (self.matrix * x, self.matrix * jac)
    }

    /// Solve `f̃(x) = y` by damped Newton starting from `A⁻¹ y`.
    pub fn invert(&self, y: &TorusPoint) -> Result<TorusPoint, DamapError> {
        self.lift_invert(&y.lift()).map(|v| TorusPoint::from_lift(&v))
    }

    /// Newton solve of `f̃(x) = y` on the universal cover.
    pub fn lift_invert(&self, y: &Vector3<f64>) -> Result<Vector3<f64>, DamapError> {
        let mut x = self.matrix_inv * y;
        if self.is_linear() {
            return Ok(x);
        }
        let tol = self.newton.tolerance;
        let (mut fx, mut jac) = self.lift_apply_with_derivative(&x);
        let mut res = (fx - y).norm();
        let mut iterations = 0;
        while res > tol * y.norm().max(1.0) {
            if iterations >= self.newton.max_iterations {
                return Err(DamapError::NoConvergence {
                    residual: res,
                    iterations,
                });
            }
            iterations += 1;
            let step = match jac.lu().solve(&(fx - y)) {
                Some(s) => s,
                None => {
                    return Err(DamapError::NoConvergence {
                        residual: res,
                        iterations,
                    })
                }
            };
            let mut scale = 1.0;
            loop {
                let cand = x - step * scale;
                let (fc, jc) = self.lift_apply_with_derivative(&cand);
                let rc = (fc - y).norm();
                if rc < res || scale < 1e-9 {
                    x = cand;
                    fx = fc;
                    jac = jc;
                    // a stalled damped step at round-off level is converged
                    if rc >= res && res < 1e3 * tol * y.norm().max(1.0) {
                        return Ok(x);
                    }
                    res = rc;
                    break;
                }
                scale *= 0.5;
            }
        }
        Ok(x)
    }

    /// Inverse composed from the closed-form primitive inverses; an
    /// independent route used to cross-check [`DAMap::invert`].
    pub fn invert_by_primitives(&self, y: &TorusPoint) -> TorusPoint {
        let mut x = self.matrix_inv * y.lift();
        for p in self.perturbations.iter().rev() {
            x += p.inverse_displacement(&TorusPoint::from_lift(&x));
        }
        TorusPoint::from_lift(&x)
    }

    /// Forward orbit `x, f(x), …, f^n(x)`.
    pub fn orbit(&self, x: &TorusPoint, n: usize) -> Vec<TorusPoint> {
        let mut out = Vec::with_capacity(n + 1);
        let mut p = *x;
        out.push(p);
        for _ in 0..n {
            p = self.apply(&p);
            out.push(p);
        }
        out
    }

    /// `Df^n(x)` together with `f^n(x)`.
    pub fn forward_product(&self, x: &TorusPoint, n: usize) -> (TorusPoint, Matrix3<f64>) {
        let mut p = *x;
        let mut m = Matrix3::identity();
        for _ in 0..n {
            let (q, j) = self.apply_with_derivative(&p);
            m = j * m;
            p = q;
        }
        (p, m)
    }

    /// `Df^{-n}(x)` together with `f^{-n}(x)`.
    pub fn backward_product(
        &self,
        x: &TorusPoint,
        n: usize,
    ) -> Result<(TorusPoint, Matrix3<f64>), DamapError> {
        let mut p = *x;
        let mut m = Matrix3::identity();
        for _ in 0..n {
            let q = self.invert(&p)?;
            let jinv = self
                .derivative(&q)
                .try_inverse()
                .expect("unit-determinant Jacobian is invertible");
            m *= jinv;
            p = q;
        }
        Ok((p, m))
    }
}

/// Cone apertures in eigen-coordinates `w = V⁻¹ v` (index 0 strong stable,
/// 1 center, 2 strong unstable).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeApertures {
    /// `w0² + w1² ≤ a² w2²`, forward invariant.
    pub unstable: f64,
    /// `w0² ≤ a² (w1² + w2²)`, forward invariant.
    pub center_unstable: f64,
    /// `w1² + w2² ≤ a² w0²`, backward invariant.
    pub stable: f64,
    /// `w2² ≤ a² (w0² + w1²)`, backward invariant.
    pub center_stable: f64,
}

impl Default for ConeApertures {
    fn default() -> Self {
        ConeApertures {
            unstable: 0.5,
            center_unstable: 0.5,
            stable: 0.5,
            center_stable: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRange {
    pub min: f64,
    pub max: f64,
}

impl RateRange {
    fn empty() -> Self {
        RateRange {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    fn push(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }
}

/// Empirical partial-hyperbolicity certificate over a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PHCertificate {
    pub apertures: ConeApertures,
    pub iterates: usize,
    pub resolution: usize,
    pub verified: bool,
    /// Per-iterate log rates: backward contraction along the strong stable core.
    pub stable_rate: RateRange,
    pub center_rate: RateRange,
    pub unstable_rate: RateRange,
    pub splitting: Splitting,
}

#[derive(Debug, Clone, Copy)]
enum ConeKind {
    Line(usize),
    Plane(usize),
}

/// Squared cone ratio: off-core mass over core mass.
fn cone_ratio(kind: ConeKind, w: &Vector3<f64>) -> f64 {
    match kind {
        ConeKind::Line(k) => {
            let off: f64 = (0..3).filter(|&i| i != k).map(|i| w[i] * w[i]).sum();
            (off / (w[k] * w[k])).sqrt()
        }
        ConeKind::Plane(k) => {
            let core: f64 = (0..3).filter(|&i| i != k).map(|i| w[i] * w[i]).sum();
            (w[k] * w[k] / core).sqrt()
        }
    }
}

/// Boundary directions of a cone in eigen-coordinates.
fn cone_boundary(kind: ConeKind, a: f64, samples: usize) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(samples);
    for s in 0..samples {
        let phi = std::f64::consts::PI * 2.0 * s as f64 / samples as f64;
        let (c, sn) = (phi.cos(), phi.sin());
        let w = match kind {
            ConeKind::Line(k) => {
                let others: Vec<usize> = (0..3).filter(|&i| i != k).collect();
                let mut w = Vector3::zeros();
                w[k] = 1.0;
                w[others[0]] = a * c;
                w[others[1]] = a * sn;
                w
            }
            ConeKind::Plane(k) => {
                let others: Vec<usize> = (0..3).filter(|&i| i != k).collect();
                let mut w = Vector3::zeros();
                w[k] = a;
                w[others[0]] = c;
                w[others[1]] = sn;
                w
            }
        };
        out.push(w);
    }
    out
}

struct PointRates {
    stable: f64,
    center: f64,
    unstable: f64,
}

const CONE_SAMPLES: usize = 36;

fn check_cone(
    m: &Matrix3<f64>,
    basis: &Matrix3<f64>,
    basis_inv: &Matrix3<f64>,
    kind: ConeKind,
    a: f64,
) -> Result<(), String> {
    for w in cone_boundary(kind, a, CONE_SAMPLES) {
        let image = basis_inv * (m * (basis * w));
        let r = cone_ratio(kind, &image);
        if !(r < a) {
            return Err(format!(
                "{kind:?} cone of aperture {a} not mapped inside itself (image ratio {r:.4})"
            ));
        }
    }
    Ok(())
}

fn certify_point(
    f: &DAMap,
    x: &TorusPoint,
    iterates: usize,
    apertures: &ConeApertures,
    basis: &Matrix3<f64>,
    basis_inv: &Matrix3<f64>,
) -> Result<PointRates, String> {
    let (_, fwd) = f.forward_product(x, iterates);
    check_cone(&fwd, basis, basis_inv, ConeKind::Line(2), apertures.unstable)?;
    check_cone(&fwd, basis, basis_inv, ConeKind::Plane(0), apertures.center_unstable)?;
    let (_, bwd) = f
        .backward_product(x, iterates)
        .map_err(|e| format!("backward orbit unavailable: {e}"))?;
    check_cone(&bwd, basis, basis_inv, ConeKind::Line(0), apertures.stable)?;
    check_cone(&bwd, basis, basis_inv, ConeKind::Plane(2), apertures.center_stable)?;

    let n = iterates as f64;
    let e = f.linear().eigenvectors();
    let fu = fwd * e[2];
    let unstable = fu.norm().ln() / n;
    let area0 = e[1].cross(&e[2]).norm();
    let area = (fwd * e[1]).cross(&fu).norm();
    let center = (area / area0).ln() / n - unstable;
    let stable = -(bwd * e[0]).norm().ln() / n;
    if !(stable < center && center < unstable && stable < 0.0 && unstable > 0.0) {
        return Err(format!(
            "rates out of order: stable {stable:.4}, center {center:.4}, unstable {unstable:.4}"
        ));
    }
    Ok(PointRates {
        stable,
        center,
        unstable,
    })
}

/// Grid check that `Df^N` maps the four cone families strictly inside
/// themselves and that core growth rates are strictly ordered.
///
/// Grid points are `(i, j, k) / resolution`; the reported violation is the
/// first one in lexicographic grid order.
pub fn verify_partial_hyperbolicity(
    f: &DAMap,
    iterates: usize,
    resolution: usize,
    apertures: &ConeApertures,
) -> Result<PHCertificate, DamapError> {
    assert!(iterates >= 1 && resolution >= 1);
    let basis = f.linear().eigenbasis();
    let basis_inv = f.linear().eigenbasis_inverse();
    let r = resolution;
    let results: Vec<Result<PointRates, String>> = (0..r * r * r)
        .into_par_iter()
        .map(|idx| {
            let (i, j, k) = (idx / (r * r), (idx / r) % r, idx % r);
            let x = grid_point(i, j, k, r);
            certify_point(f, &x, iterates, apertures, &basis, &basis_inv)
        })
        .collect();

    let mut stable = RateRange::empty();
    let mut center = RateRange::empty();
    let mut unstable = RateRange::empty();
    for (idx, res) in results.into_iter().enumerate() {
        match res {
            Ok(p) => {
                stable.push(p.stable);
                center.push(p.center);
                unstable.push(p.unstable);
            }
            Err(reason) => {
                let (i, j, k) = (idx / (r * r), (idx / r) % r, idx % r);
                return Err(DamapError::CertificationFailed {
                    index: [i, j, k],
                    point: grid_point(i, j, k, r),
                    reason,
                });
            }
        }
    }
    Ok(PHCertificate {
        apertures: *apertures,
        iterates,
        resolution,
        verified: true,
        stable_rate: stable,
        center_rate: center,
        unstable_rate: unstable,
        splitting: f.linear().splitting(),
    })
}

fn grid_point(i: usize, j: usize, k: usize, r: usize) -> TorusPoint {
    let h = 1.0 / r as f64;
    TorusPoint::new(i as f64 * h, j as f64 * h, k as f64 * h).expect("grid point")
}
