//! Invariant bundles by graph transform, leaf curves, foliated boxes and
//! center holonomies.
//!
//! Line bundles are transported directly: the top bundle is pushed forward by
//! `Df`, the bottom one pulled back by `Df⁻¹`. The center bundle is the
//! intersection of the two invariant planes `E^cu = E^1 ⊕ E^2` and
//! `E^cs = E^0 ⊕ E^1`, each carried by its normal covector (`Df^{-T}` forward,
//! `Df^T` backward). All fields keep a positive inner product with the
//! corresponding linear eigenvector.
//!
//! As for the conjugacy, off-grid values unroll the transport `depth` steps
//! before interpolating, so interpolation error is damped by `κ^depth`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::conjugacy::{depth_for, DEFAULT_DEPTH_DAMPING};
use crate::damap::{DAMap, DamapError};
use crate::grid::{grid_point, FieldFile, PeriodicGrid};
use crate::rng::StageRng;
use crate::torus::{LinearAnosov, Splitting, TorusPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoliationError {
    #[error("{kind:?} bundle did not converge in {iterations} iterations (last change {change:.3e})")]
    NoConvergence {
        kind: BundleKind,
        iterations: usize,
        change: f64,
    },
    #[error("field orientation flipped while tracing a leaf near {at}")]
    SignFlip { at: TorusPoint },
    #[error("leaves collide in the foliated box near node {node:?}")]
    LeafCollision { node: [usize; 3] },
    #[error("leaf through {from} left the plaque before reaching the target transversal")]
    LeafEscape { from: TorusPoint },
    #[error("expected a {expected:?} field, got {got:?}")]
    WrongKind { expected: BundleKind, got: BundleKind },
    #[error(transparent)]
    Map(#[from] DamapError),
    #[error("field file: {0}")]
    Format(String),
}

/// Index of the bundle in the splitting: 0 strongest contraction, 1 center,
/// 2 strongest expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BundleKind {
    Stable,
    Center,
    Unstable,
}

impl BundleKind {
    pub fn index(&self) -> usize {
        match self {
            BundleKind::Stable => 0,
            BundleKind::Center => 1,
            BundleKind::Unstable => 2,
        }
    }

    pub fn label(&self, s: Splitting) -> &'static str {
        s.labels()[self.index()]
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => BundleKind::Stable,
            1 => BundleKind::Center,
            _ => BundleKind::Unstable,
        }
    }
}

/// How a grid field is carried by the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Law {
    /// `E(f x) = Df(x) E(x)`.
    PushVector,
    /// `E(x) = Df(x)⁻¹ E(f x)`.
    PullVector,
    /// `n(f x) = Df(x)^{-T} n(x)`.
    PushCovector,
    /// `n(x) = Df(x)^T n(f x)`.
    PullCovector,
}

impl Law {
    fn is_push(&self) -> bool {
        matches!(self, Law::PushVector | Law::PushCovector)
    }

    fn name(&self) -> &'static str {
        match self {
            Law::PushVector => "push-vector",
            Law::PullVector => "pull-vector",
            Law::PushCovector => "push-covector",
            Law::PullCovector => "pull-covector",
        }
    }

    fn parse(s: &str) -> Option<Law> {
        [Law::PushVector, Law::PullVector, Law::PushCovector, Law::PullCovector]
            .into_iter()
            .find(|l| l.name() == s)
    }

    /// Carry `v` across one step whose Jacobian is `j`.
    fn step(&self, j: &Matrix3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Law::PushVector => j * v,
            Law::PullVector => j.lu().solve(v).expect("invertible Jacobian"),
            Law::PushCovector => j.transpose().lu().solve(v).expect("invertible Jacobian"),
            Law::PullCovector => j.transpose() * v,
        }
    }
}

/// Unit vector field on a periodic grid, transported by one [`Law`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransportField {
    law: Law,
    reference: Vector3<f64>,
    grids: [PeriodicGrid; 3],
    depth: usize,
    iterations: usize,
    last_change: f64,
}

fn align(v: Vector3<f64>, reference: &Vector3<f64>) -> Vector3<f64> {
    let n = v / v.norm();
    if n.dot(reference) < 0.0 {
        -n
    } else {
        n
    }
}

fn angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // sign-insensitive angle between lines
    let c = (a.dot(b).abs() / (a.norm() * b.norm())).min(1.0);
    let s = a.cross(b).norm() / (a.norm() * b.norm());
    s.atan2(c)
}

impl TransportField {
    fn interpolate(&self, x: &TorusPoint) -> Vector3<f64> {
        let v = Vector3::new(
            self.grids[0].interpolate(x),
            self.grids[1].interpolate(x),
            self.grids[2].interpolate(x),
        );
        align(v, &self.reference)
    }

    fn eval(&self, f: &DAMap, x: &TorusPoint, depth: usize) -> Result<Vector3<f64>, DamapError> {
        if depth == 0 {
            return Ok(self.interpolate(x));
        }
        if self.law.is_push() {
            let mut chain = Vec::with_capacity(depth);
            let mut p = *x;
            for _ in 0..depth {
                p = f.invert(&p)?;
                chain.push(p);
            }
            let mut v = self.interpolate(&p);
            for q in chain.iter().rev() {
                v = align(self.law.step(&f.derivative(q), &v), &self.reference);
            }
            Ok(v)
        } else {
            let mut chain = Vec::with_capacity(depth);
            let mut p = *x;
            for _ in 0..depth {
                let (q, j) = f.apply_with_derivative(&p);
                chain.push(j);
                p = q;
            }
            let mut v = self.interpolate(&p);
            for j in chain.iter().rev() {
                v = align(self.law.step(j, &v), &self.reference);
            }
            Ok(v)
        }
    }

    fn solve(
        f: &DAMap,
        law: Law,
        reference: Vector3<f64>,
        kappa: f64,
        resolution: usize,
        max_iters: usize,
        tol: f64,
        kind: BundleKind,
    ) -> Result<TransportField, FoliationError> {
        let n3 = resolution.pow(3);
        let points: Vec<TorusPoint> = (0..n3).map(|i| grid_point(resolution, i)).collect();
        // base point of the one-step transport and its Jacobian
        let steps: Vec<(TorusPoint, Matrix3<f64>)> = points
            .par_iter()
            .map(|x| -> Result<_, DamapError> {
                if law.is_push() {
                    let y = f.invert(x)?;
                    Ok((y, f.derivative(&y)))
                } else {
                    Ok(f.apply_with_derivative(x))
                }
            })
            .collect::<Result<_, _>>()?;
        let mut field = TransportField {
            law,
            reference,
            grids: [
                PeriodicGrid::from_data(resolution, vec![reference[0]; n3]),
                PeriodicGrid::from_data(resolution, vec![reference[1]; n3]),
                PeriodicGrid::from_data(resolution, vec![reference[2]; n3]),
            ],
            depth: depth_for(kappa, DEFAULT_DEPTH_DAMPING),
            iterations: 0,
            last_change: f64::INFINITY,
        };
        while field.iterations < max_iters {
            let next: Vec<Vector3<f64>> = steps
                .par_iter()
                .map(|(y, j)| align(law.step(j, &field.interpolate(y)), &reference))
                .collect();
            let change = next
                .par_iter()
                .enumerate()
                .map(|(i, v)| {
                    let old = Vector3::new(
                        field.grids[0].data()[i],
                        field.grids[1].data()[i],
                        field.grids[2].data()[i],
                    );
                    angle(v, &old)
                })
                .reduce(|| 0.0, f64::max);
            for c in 0..3 {
                field.grids[c] = PeriodicGrid::from_data(resolution, next.iter().map(|v| v[c]).collect());
            }
            field.iterations += 1;
            field.last_change = change;
            if change <= tol {
                return Ok(field);
            }
        }
        Err(FoliationError::NoConvergence {
            kind,
            iterations: field.iterations,
            change: field.last_change,
        })
    }
}

/// A continuous invariant line field.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleField {
    kind: BundleKind,
    splitting: Splitting,
    resolution: usize,
    reference: Vector3<f64>,
    /// One transport field for line bundles; the `E^cu` and `E^cs` normals
    /// for the center.
    parts: Vec<TransportField>,
    /// Max angle `∠(Df(x) E(x), E(f x))` on a fixed check sample.
    invariance_residual: f64,
}

pub const DEFAULT_BUNDLE_TOL: f64 = 1e-10;
const CHECK_SAMPLES: usize = 1000;

/// Graph-transform solve of one bundle on a `resolution³` grid.
pub fn compute_bundle(
    f: &DAMap,
    kind: BundleKind,
    resolution: usize,
    max_iters: usize,
) -> Result<BundleField, FoliationError> {
    compute_bundle_with_tol(f, kind, resolution, max_iters, DEFAULT_BUNDLE_TOL)
}

pub fn compute_bundle_with_tol(
    f: &DAMap,
    kind: BundleKind,
    resolution: usize,
    max_iters: usize,
    tol: f64,
) -> Result<BundleField, FoliationError> {
    let a = f.linear();
    let mu = a.eigenvalues().map(f64::abs);
    let e = a.eigenvectors();
    let dual = a.eigenbasis_inverse();
    let row = |i: usize| -> Vector3<f64> {
        let r = dual.row(i).transpose();
        r / r.norm()
    };
    let parts = match kind {
        BundleKind::Unstable => vec![TransportField::solve(
            f,
            Law::PushVector,
            e[2],
            mu[1] / mu[2],
            resolution,
            max_iters,
            tol,
            kind,
        )?],
        BundleKind::Stable => vec![TransportField::solve(
            f,
            Law::PullVector,
            e[0],
            mu[0] / mu[1],
            resolution,
            max_iters,
            tol,
            kind,
        )?],
        BundleKind::Center => vec![
            TransportField::solve(
                f,
                Law::PushCovector,
                row(0),
                mu[0] / mu[1],
                resolution,
                max_iters,
                tol,
                kind,
            )?,
            TransportField::solve(
                f,
                Law::PullCovector,
                row(2),
                mu[1] / mu[2],
                resolution,
                max_iters,
                tol,
                kind,
            )?,
        ],
    };
    let mut field = BundleField {
        kind,
        splitting: a.splitting(),
        resolution,
        reference: e[kind.index()],
        parts,
        invariance_residual: f64::NAN,
    };
    field.invariance_residual = invariance_residual(&field, f, CHECK_SAMPLES, 0)?;
    Ok(field)
}

impl BundleField {
    pub fn kind(&self) -> BundleKind {
        self.kind
    }

    pub fn label(&self) -> &'static str {
        self.kind.label(self.splitting)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn reference(&self) -> Vector3<f64> {
        self.reference
    }

    pub fn iterations(&self) -> Vec<usize> {
        self.parts.iter().map(|p| p.iterations).collect()
    }

    pub fn refine_depth(&self) -> Vec<usize> {
        self.parts.iter().map(|p| p.depth).collect()
    }

    pub fn with_refine_depth(mut self, depth: &[usize]) -> Self {
        for (p, d) in self.parts.iter_mut().zip(depth) {
            p.depth = *d;
        }
        self
    }

    pub fn invariance_residual(&self) -> f64 {
        self.invariance_residual
    }

    /// Unit vector of the bundle at `x`.
    pub fn eval(&self, f: &DAMap, x: &TorusPoint) -> Result<Vector3<f64>, DamapError> {
        if self.kind == BundleKind::Center {
            let ncu = self.parts[0].eval(f, x, self.parts[0].depth)?;
            let ncs = self.parts[1].eval(f, x, self.parts[1].depth)?;
            Ok(align(ncu.cross(&ncs), &self.reference))
        } else {
            self.parts[0].eval(f, x, self.parts[0].depth)
        }
    }

    pub fn to_file(&self) -> FieldFile {
        let mut meta = vec![
            ("kind".to_string(), "bundle".to_string()),
            ("bundle".to_string(), format!("{:?}", self.kind)),
            ("label".to_string(), self.label().to_string()),
            (
                "splitting".to_string(),
                format!("{:?}", self.splitting),
            ),
            (
                "reference".to_string(),
                self.reference.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" "),
            ),
            (
                "invariance_residual".to_string(),
                format!("{:e}", self.invariance_residual),
            ),
        ];
        let mut grids = Vec::new();
        for (i, p) in self.parts.iter().enumerate() {
            meta.push((format!("part{i}.law"), p.law.name().to_string()));
            meta.push((
                format!("part{i}.reference"),
                p.reference.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" "),
            ));
            meta.push((format!("part{i}.depth"), p.depth.to_string()));
            meta.push((format!("part{i}.iterations"), p.iterations.to_string()));
            meta.push((format!("part{i}.last_change"), format!("{:e}", p.last_change)));
            grids.extend(p.grids.iter().cloned());
        }
        FieldFile { meta, grids }
    }

    pub fn from_file(file: &FieldFile) -> Result<BundleField, FoliationError> {
        let bad = |m: &str| FoliationError::Format(m.to_string());
        if file.get("kind") != Some("bundle") {
            return Err(bad("not a bundle field"));
        }
        let get = |k: &str| file.get(k).ok_or_else(|| bad(k));
        let vec3 = |k: &str| -> Result<Vector3<f64>, FoliationError> {
            let v: Vec<f64> = get(k)?
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| bad(k))?;
            if v.len() != 3 {
                return Err(bad(k));
            }
            Ok(Vector3::new(v[0], v[1], v[2]))
        };
        let kind = match get("bundle")? {
            "Stable" => BundleKind::Stable,
            "Center" => BundleKind::Center,
            "Unstable" => BundleKind::Unstable,
            _ => return Err(bad("bundle")),
        };
        let splitting = match get("splitting")? {
            "TwoContracting" => Splitting::TwoContracting,
            "TwoExpanding" => Splitting::TwoExpanding,
            _ => return Err(bad("splitting")),
        };
        let nparts = if kind == BundleKind::Center { 2 } else { 1 };
        if file.grids.len() != 3 * nparts {
            return Err(bad("grid count"));
        }
        let mut parts = Vec::new();
        for i in 0..nparts {
            let p = |s: &str| format!("part{i}.{s}");
            parts.push(TransportField {
                law: Law::parse(get(&p("law"))?).ok_or_else(|| bad("law"))?,
                reference: vec3(&p("reference"))?,
                grids: [
                    file.grids[3 * i].clone(),
                    file.grids[3 * i + 1].clone(),
                    file.grids[3 * i + 2].clone(),
                ],
                depth: get(&p("depth"))?.parse().map_err(|_| bad("depth"))?,
                iterations: get(&p("iterations"))?.parse().map_err(|_| bad("iterations"))?,
                last_change: get(&p("last_change"))?.parse().map_err(|_| bad("last_change"))?,
            });
        }
        Ok(BundleField {
            kind,
            splitting,
            resolution: file.grids[0].resolution(),
            reference: vec3("reference")?,
            parts,
            invariance_residual: get("invariance_residual")?
                .parse()
                .map_err(|_| bad("invariance_residual"))?,
        })
    }
}

/// Max angle `∠(Df(x) E(x), E(f x))` over random points.
pub fn invariance_residual(
    field: &BundleField,
    f: &DAMap,
    samples: usize,
    seed: u64,
) -> Result<f64, DamapError> {
    let stage = StageRng::new(seed, "bundle-invariance");
    (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let x = stage.point(i);
            let (fx, j) = f.apply_with_derivative(&x);
            let pushed = j * field.eval(f, &x)?;
            Ok(angle(&pushed, &field.eval(f, &fx)?))
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// `(1/n) Σ_j log |Df(f^j x) E(f^j x)|`.
pub fn growth_rate(field: &BundleField, f: &DAMap, x: &TorusPoint, n: usize) -> Result<f64, DamapError> {
    let mut p = *x;
    let mut acc = 0.0;
    for _ in 0..n {
        let (q, j) = f.apply_with_derivative(&p);
        acc += (j * field.eval(f, &p)?).norm().ln();
        p = q;
    }
    Ok(acc / n as f64)
}

/// The three invariant bundles of a map.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundles {
    pub stable: BundleField,
    pub center: BundleField,
    pub unstable: BundleField,
}

impl Bundles {
    pub fn compute(f: &DAMap, resolution: usize, max_iters: usize) -> Result<Bundles, FoliationError> {
        Ok(Bundles {
            stable: compute_bundle(f, BundleKind::Stable, resolution, max_iters)?,
            center: compute_bundle(f, BundleKind::Center, resolution, max_iters)?,
            unstable: compute_bundle(f, BundleKind::Unstable, resolution, max_iters)?,
        })
    }

    pub fn get(&self, kind: BundleKind) -> &BundleField {
        match kind {
            BundleKind::Stable => &self.stable,
            BundleKind::Center => &self.center,
            BundleKind::Unstable => &self.unstable,
        }
    }
}

/// A leaf segment as a polyline on the lift, parametrized by signed
/// arclength from its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafCurve {
    pub kind: BundleKind,
    pub base: TorusPoint,
    /// Lift coordinates; `points[origin]` is the lift of `base`.
    pub points: Vec<Vector3<f64>>,
    /// Polyline arclength, `0` at the base point, strictly increasing.
    pub params: Vec<f64>,
    pub origin: usize,
    pub step: f64,
}

/// Alias matching the center-leaf use.
pub type CenterCurve = LeafCurve;

impl LeafCurve {
    pub fn start(&self) -> f64 {
        self.params[0]
    }

    pub fn end(&self) -> f64 {
        *self.params.last().expect("nonempty curve")
    }

    /// Linear interpolation at arclength `t` (clamped to the traced range).
    pub fn point_at(&self, t: f64) -> Vector3<f64> {
        let t = t.clamp(self.start(), self.end());
        let i = match self.params.binary_search_by(|p| p.total_cmp(&t)) {
            Ok(i) => return self.points[i],
            Err(i) => i.clamp(1, self.params.len() - 1),
        };
        let (t0, t1) = (self.params[i - 1], self.params[i]);
        let s = (t - t0) / (t1 - t0);
        self.points[i - 1] * (1.0 - s) + self.points[i] * s
    }

    /// The sub-curve on `[a, b]`, endpoints interpolated.
    pub fn clip(&self, a: f64, b: f64) -> LeafCurve {
        assert!(a < b);
        let mut points = vec![self.point_at(a)];
        let mut params = vec![a];
        for (p, t) in self.points.iter().zip(&self.params) {
            if *t > a && *t < b {
                points.push(*p);
                params.push(*t);
            }
        }
        points.push(self.point_at(b));
        params.push(b);
        let origin = params.iter().position(|t| *t >= 0.0).unwrap_or(0);
        LeafCurve {
            kind: self.kind,
            base: TorusPoint::from_lift(&points[origin]),
            points,
            params,
            origin,
            step: self.step,
        }
    }

    /// A polyline through `points`, parametrized by arclength from the first.
    pub fn from_points(kind: BundleKind, points: Vec<Vector3<f64>>) -> LeafCurve {
        let mut params = vec![0.0; points.len()];
        for i in 1..points.len() {
            params[i] = params[i - 1] + (points[i] - points[i - 1]).norm();
        }
        LeafCurve {
            kind,
            base: TorusPoint::from_lift(&points[0]),
            step: params.last().copied().unwrap_or(0.0) / (points.len().max(2) - 1) as f64,
            points,
            params,
            origin: 0,
        }
    }

    /// Closest point of the polyline: `(arclength, distance)`.
    pub fn closest(&self, y: &Vector3<f64>) -> (f64, f64) {
        let mut best = (self.params[0], (self.points[0] - y).norm());
        for i in 1..self.points.len() {
            let (a, b) = (self.points[i - 1], self.points[i]);
            let d = b - a;
            let s = ((y - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
            let dist = (a + d * s - y).norm();
            if dist < best.1 {
                best = (self.params[i - 1] + s * (self.params[i] - self.params[i - 1]), dist);
            }
        }
        best
    }

    /// Max angle between each chord and the field at the chord midpoint.
    pub fn max_alignment_error(&self, field: &BundleField, f: &DAMap) -> Result<f64, DamapError> {
        (1..self.points.len())
            .into_par_iter()
            .map(|i| {
                let chord = self.points[i] - self.points[i - 1];
                let mid = TorusPoint::from_lift(&((self.points[i] + self.points[i - 1]) * 0.5));
                Ok(angle(&chord, &field.eval(f, &mid)?))
            })
            .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
    }
}

/// One-sided Hausdorff distance from `points` to the polyline `curve`.
pub fn distance_to_curve(points: &[Vector3<f64>], curve: &LeafCurve) -> f64 {
    points
        .par_iter()
        .map(|p| curve.closest(p).1)
        .reduce(|| 0.0, f64::max)
}

/// Symmetric Hausdorff distance between two polylines, measured at nodes.
pub fn hausdorff(a: &LeafCurve, b: &LeafCurve) -> f64 {
    distance_to_curve(&a.points, b).max(distance_to_curve(&b.points, a))
}

fn rk4_step(
    field: &BundleField,
    f: &DAMap,
    p: &Vector3<f64>,
    h: f64,
    prev: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>), FoliationError> {
    let e = |q: &Vector3<f64>| -> Result<Vector3<f64>, FoliationError> {
        let x = TorusPoint::from_lift(q);
        let v = field.eval(f, &x)?;
        if v.dot(prev) <= 0.0 {
            return Err(FoliationError::SignFlip { at: x });
        }
        Ok(v)
    };
    let k1 = e(p)?;
    let k2 = e(&(p + k1 * (h / 2.0)))?;
    let k3 = e(&(p + k2 * (h / 2.0)))?;
    let k4 = e(&(p + k3 * h))?;
    let d = (k1 + k2 * 2.0 + k3 * 2.0 + k4) / 6.0;
    Ok((p + d * h, k1))
}

/// Trace a leaf of `field` on the lift through `x0`: `back` arclength in the
/// negative orientation and `fwd` in the positive one, with RK4 step `h`.
pub fn integrate_leaf(
    field: &BundleField,
    f: &DAMap,
    x0: &Vector3<f64>,
    back: f64,
    fwd: f64,
    h: f64,
) -> Result<LeafCurve, FoliationError> {
    assert!(h > 0.0 && back >= 0.0 && fwd >= 0.0);
    let reference = field.reference();
    let trace = |len: f64, sign: f64| -> Result<Vec<Vector3<f64>>, FoliationError> {
        let mut pts = Vec::new();
        let mut p = *x0;
        let mut prev = reference * sign;
        let mut s = 0.0;
        while s < len - 1e-15 {
            let step = h.min(len - s);
            let oriented = OrientedField { field, sign };
            let (q, k1) = oriented.step(f, &p, step, &prev)?;
            prev = k1;
            p = q;
            s += step;
            pts.push(p);
        }
        Ok(pts)
    };
    let backward = trace(back, -1.0)?;
    let forward = trace(fwd, 1.0)?;
    let mut points: Vec<Vector3<f64>> = backward.into_iter().rev().collect();
    let origin = points.len();
    points.push(*x0);
    points.extend(forward);
    let mut params = vec![0.0; points.len()];
    for i in (0..origin).rev() {
        params[i] = params[i + 1] - (points[i + 1] - points[i]).norm();
    }
    for i in origin + 1..points.len() {
        params[i] = params[i - 1] + (points[i] - points[i - 1]).norm();
    }
    Ok(LeafCurve {
        kind: field.kind(),
        base: TorusPoint::from_lift(x0),
        points,
        params,
        origin,
        step: h,
    })
}

struct OrientedField<'a> {
    field: &'a BundleField,
    sign: f64,
}

impl OrientedField<'_> {
    fn step(
        &self,
        f: &DAMap,
        p: &Vector3<f64>,
        h: f64,
        prev: &Vector3<f64>,
    ) -> Result<(Vector3<f64>, Vector3<f64>), FoliationError> {
        // integrate the reversed field by stepping the original one with -h
        let (q, k1) = rk4_step(self.field, f, p, h * self.sign, &(prev * self.sign))?;
        Ok((q, k1 * self.sign))
    }
}

/// Center leaf through `x0` of half-length `half_length`.
pub fn integrate_center_curve(
    field: &BundleField,
    f: &DAMap,
    x0: &TorusPoint,
    half_length: f64,
    h: f64,
) -> Result<CenterCurve, FoliationError> {
    if field.kind() != BundleKind::Center {
        return Err(FoliationError::WrongKind {
            expected: BundleKind::Center,
            got: field.kind(),
        });
    }
    integrate_leaf(field, f, &x0.lift(), half_length, half_length, h)
}

/// Default sizes: center half-length and transversal half-sizes.
pub const DEFAULT_LEAF_HALF_LENGTH: f64 = 0.2;
pub const DEFAULT_TRANSVERSAL_HALF_SIZE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxShape {
    /// Half-size along the strong stable transversal direction.
    pub stable_half: f64,
    /// Half-size along the unstable transversal direction.
    pub unstable_half: f64,
    /// Leaf half-length `L`.
    pub leaf_half: f64,
    /// Transversal cells per axis.
    pub cells: usize,
    /// Leaf nodes per unit arclength spacing.
    pub leaf_spacing: f64,
    /// RK4 step.
    pub step: f64,
}

impl Default for BoxShape {
    fn default() -> Self {
        BoxShape {
            stable_half: DEFAULT_TRANSVERSAL_HALF_SIZE,
            unstable_half: DEFAULT_TRANSVERSAL_HALF_SIZE,
            leaf_half: DEFAULT_LEAF_HALF_LENGTH,
            cells: 8,
            leaf_spacing: 0.01,
            step: 1e-3,
        }
    }
}

/// Leaf coordinates of a box point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxCoords {
    /// Transversal arclength parameters (stable, unstable).
    pub p: f64,
    pub q: f64,
    /// Leaf parameter in `[-L, L]`.
    pub t: f64,
    /// Transversal cell.
    pub cell: (usize, usize),
}

/// Curvilinear chart: a stable-then-unstable transversal grid with a center
/// leaf segment through each node.
#[derive(Debug, Clone, PartialEq)]
pub struct FoliatedBox {
    pub base: TorusPoint,
    pub shape: BoxShape,
    /// Node parameters along each axis.
    p_nodes: Vec<f64>,
    q_nodes: Vec<f64>,
    t_nodes: Vec<f64>,
    /// `nodes[i][j][k]`: leaf through transversal node `(i, j)` at `t_k`.
    nodes: Vec<Vec<Vec<Vector3<f64>>>>,
    origin: Vector3<f64>,
    basis_inv: Matrix3<f64>,
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

/// Build a foliated box around `x`.
pub fn build_foliated_box(
    f: &DAMap,
    bundles: &Bundles,
    x: &TorusPoint,
    shape: BoxShape,
) -> Result<FoliatedBox, FoliationError> {
    let a = shape.stable_half;
    let b = shape.unstable_half;
    let l = shape.leaf_half;
    let p_nodes = linspace(-a, a, shape.cells);
    let q_nodes = linspace(-b, b, shape.cells);
    let nt = (2.0 * l / shape.leaf_spacing).round().max(1.0) as usize;
    let t_nodes = linspace(-l, l, nt);
    let origin = x.lift();
    let s_curve = integrate_leaf(&bundles.stable, f, &origin, a, a, shape.step)?;
    let rows: Vec<LeafCurve> = p_nodes
        .par_iter()
        .map(|&p| integrate_leaf(&bundles.unstable, f, &s_curve.point_at(p), b, b, shape.step))
        .collect::<Result<_, _>>()?;
    let transversal: Vec<(usize, usize, Vector3<f64>)> = (0..p_nodes.len())
        .flat_map(|i| (0..q_nodes.len()).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, rows[i].point_at(q_nodes[j])))
        .collect();
    let leaves: Vec<Vec<Vector3<f64>>> = transversal
        .par_iter()
        .map(|(_, _, y)| {
            let c = integrate_leaf(&bundles.center, f, y, l, l, shape.step)?;
            Ok(t_nodes.iter().map(|&t| c.point_at(t)).collect())
        })
        .collect::<Result<_, FoliationError>>()?;
    let mut nodes = vec![vec![Vec::new(); q_nodes.len()]; p_nodes.len()];
    for ((i, j, _), leaf) in transversal.iter().zip(leaves) {
        nodes[*i][*j] = leaf;
    }
    let fbox = FoliatedBox {
        base: *x,
        shape,
        p_nodes,
        q_nodes,
        t_nodes,
        nodes,
        origin,
        basis_inv: f.linear().eigenbasis_inverse(),
    };
    fbox.check_embedding()?;
    Ok(fbox)
}

impl FoliatedBox {
    pub fn cells(&self) -> (usize, usize, usize) {
        (self.p_nodes.len() - 1, self.q_nodes.len() - 1, self.t_nodes.len() - 1)
    }

    pub fn transversal_cells(&self) -> usize {
        (self.p_nodes.len() - 1) * (self.q_nodes.len() - 1)
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    /// Inverse of the linear eigenbasis used for box-coordinate guesses.
    pub fn basis_inverse(&self) -> Matrix3<f64> {
        self.basis_inv
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.nodes[i][j][k]
    }

    pub fn leaf_nodes(&self, i: usize, j: usize) -> &[Vector3<f64>] {
        &self.nodes[i][j]
    }

    fn corners(&self, c: [usize; 3]) -> [Vector3<f64>; 8] {
        let mut out = [Vector3::zeros(); 8];
        for (m, slot) in out.iter_mut().enumerate() {
            let (di, dj, dk) = (m >> 2 & 1, m >> 1 & 1, m & 1);
            *slot = self.nodes[c[0] + di][c[1] + dj][c[2] + dk];
        }
        out
    }

    fn trilinear(corners: &[Vector3<f64>; 8], u: &Vector3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
        let mut p = Vector3::zeros();
        let mut jac = Matrix3::zeros();
        for (m, c) in corners.iter().enumerate() {
            let bits = [m >> 2 & 1, m >> 1 & 1, m & 1];
            let w: [f64; 3] = std::array::from_fn(|a| if bits[a] == 1 { u[a] } else { 1.0 - u[a] });
            let dw: [f64; 3] = std::array::from_fn(|a| if bits[a] == 1 { 1.0 } else { -1.0 });
            p += c * (w[0] * w[1] * w[2]);
            jac.column_mut(0).axpy(dw[0] * w[1] * w[2], c, 1.0);
            jac.column_mut(1).axpy(w[0] * dw[1] * w[2], c, 1.0);
            jac.column_mut(2).axpy(w[0] * w[1] * dw[2], c, 1.0);
        }
        (p, jac)
    }

    /// Lift point with box coordinates `(p, q, t)`.
    pub fn point(&self, p: f64, q: f64, t: f64) -> Vector3<f64> {
        let (ci, u0) = locate_param(&self.p_nodes, p);
        let (cj, u1) = locate_param(&self.q_nodes, q);
        let (ck, u2) = locate_param(&self.t_nodes, t);
        Self::trilinear(&self.corners([ci, cj, ck]), &Vector3::new(u0, u1, u2)).0
    }

    /// Orientation check: the chart Jacobian keeps one sign at every node.
    fn check_embedding(&self) -> Result<(), FoliationError> {
        let (ni, nj, nk) = self.cells();
        let mut sign = 0.0;
        for i in 0..ni {
            for j in 0..nj {
                for k in 0..nk {
                    let cs = self.corners([i, j, k]);
                    for m in 0..8 {
                        let u = Vector3::new((m >> 2 & 1) as f64, (m >> 1 & 1) as f64, (m & 1) as f64);
                        let d = Self::trilinear(&cs, &u).1.determinant();
                        if sign == 0.0 {
                            sign = d.signum();
                        }
                        if d * sign <= 0.0 {
                            return Err(FoliationError::LeafCollision { node: [i, j, k] });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Box coordinates of a lift point, or `None` outside the box.
    pub fn locate(&self, y: &Vector3<f64>) -> Option<BoxCoords> {
        let w = self.basis_inv * (y - self.origin);
        let (ni, nj, nk) = self.cells();
        let mut cell = [
            locate_param(&self.p_nodes, w[0]).0,
            locate_param(&self.q_nodes, w[2]).0,
            locate_param(&self.t_nodes, w[1]).0,
        ];
        let limits = [ni, nj, nk];
        for _ in 0..32 {
            let cs = self.corners(cell);
            let mut u = Vector3::new(0.5, 0.5, 0.5);
            for _ in 0..30 {
                let (p, j) = Self::trilinear(&cs, &u);
                let step = j.lu().solve(&(p - y))?;
                u -= step;
                if step.norm() < 1e-14 {
                    break;
                }
            }
            let mut moved = false;
            for a in 0..3 {
                let tol = 1e-12;
                if u[a] < -tol {
                    if cell[a] == 0 {
                        return None;
                    }
                    cell[a] -= 1;
                    moved = true;
                } else if u[a] > 1.0 + tol {
                    if cell[a] + 1 == limits[a] {
                        return None;
                    }
                    cell[a] += 1;
                    moved = true;
                }
            }
            if !moved {
                let lerp = |nodes: &[f64], c: usize, s: f64| nodes[c] + s.clamp(0.0, 1.0) * (nodes[c + 1] - nodes[c]);
                return Some(BoxCoords {
                    p: lerp(&self.p_nodes, cell[0], u[0]),
                    q: lerp(&self.q_nodes, cell[1], u[1]),
                    t: lerp(&self.t_nodes, cell[2], u[2]),
                    cell: (cell[0], cell[1]),
                });
            }
        }
        None
    }

    /// Parallelepiped in eigen-coordinates enclosing every node, as
    /// `(center, half extents)` with the eigenbasis inverse used by `locate`.
    pub fn eigen_bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for plane in &self.nodes {
            for leaf in plane {
                for p in leaf {
                    let w = self.basis_inv * (p - self.origin);
                    lo = lo.inf(&w);
                    hi = hi.sup(&w);
                }
            }
        }
        ((lo + hi) * 0.5, (hi - lo) * 0.5)
    }
}

/// Cell index and local coordinate of `t` in sorted nodes (clamped to the
/// outer cells).
fn locate_param(nodes: &[f64], t: f64) -> (usize, f64) {
    let n = nodes.len() - 1;
    let mut i = nodes.partition_point(|v| *v <= t);
    i = i.clamp(1, n) - 1;
    (i, (t - nodes[i]) / (nodes[i + 1] - nodes[i]))
}

/// Which invariant plaque a holonomy lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PlaqueKind {
    /// Center-stable: transversals along the strong stable bundle.
    CenterStable,
    /// Center-unstable: transversals along the unstable bundle.
    CenterUnstable,
}

impl PlaqueKind {
    pub fn transversal(&self) -> BundleKind {
        match self {
            PlaqueKind::CenterStable => BundleKind::Stable,
            PlaqueKind::CenterUnstable => BundleKind::Unstable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolonomyMap {
    pub plaque: PlaqueKind,
    pub source_params: Vec<f64>,
    pub target_params: Vec<f64>,
    /// Leaf arclength travelled by each sample.
    pub leaf_lengths: Vec<f64>,
    /// `max Δσ'/Δσ` and `max Δσ/Δσ'` over consecutive samples.
    pub lipschitz: f64,
    pub inverse_lipschitz: f64,
    pub monotone: bool,
}

/// A transversal inside a plaque: the leaf of the transversal bundle through
/// the center leaf of `base` at center arclength `offset`.
pub fn plaque_transversal(
    f: &DAMap,
    bundles: &Bundles,
    plaque: PlaqueKind,
    base: &TorusPoint,
    offset: f64,
    half_size: f64,
    step: f64,
) -> Result<LeafCurve, FoliationError> {
    let c = integrate_leaf(
        &bundles.center,
        f,
        &base.lift(),
        (-offset).max(0.0),
        offset.max(0.0),
        step,
    )?;
    let anchor = c.point_at(offset);
    integrate_leaf(
        bundles.get(plaque.transversal()),
        f,
        &anchor,
        half_size,
        half_size,
        step,
    )
}

/// Slide `y` along its center leaf to the target transversal. Returns the
/// target arclength parameter and the signed leaf length travelled.
pub fn slide(
    f: &DAMap,
    bundles: &Bundles,
    y: &Vector3<f64>,
    target: &LeafCurve,
    max_length: f64,
    step: f64,
) -> Result<(f64, f64), FoliationError> {
    let signed = |p: &Vector3<f64>| -> Result<f64, FoliationError> {
        let (s, _) = target.closest(p);
        let anchor = target.point_at(s);
        let n = bundles.center.eval(f, &TorusPoint::from_lift(&anchor))?;
        Ok((p - anchor).dot(&n))
    };
    let d0 = signed(y)?;
    if d0 == 0.0 {
        return Ok((target.closest(y).0, 0.0));
    }
    // travel against the sign of the signed distance
    let (back, fwd) = if d0 > 0.0 { (max_length, 0.0) } else { (0.0, max_length) };
    let leaf = integrate_leaf(&bundles.center, f, y, back, fwd, step)?;
    let idx: Vec<usize> = if d0 > 0.0 {
        (0..=leaf.origin).rev().collect()
    } else {
        (leaf.origin..leaf.points.len()).collect()
    };
    let escape = || FoliationError::LeafEscape {
        from: TorusPoint::from_lift(y),
    };
    let mut prev = (leaf.params[idx[0]], d0);
    for &i in &idx[1..] {
        let d = signed(&leaf.points[i])?;
        if d.signum() != prev.1.signum() || d == 0.0 {
            let (mut lo, mut hi) = (prev.0, leaf.params[i]);
            let mut dlo = prev.1;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let dm = signed(&leaf.point_at(mid))?;
                if dm.signum() == dlo.signum() {
                    lo = mid;
                    dlo = dm;
                } else {
                    hi = mid;
                }
            }
            let t = 0.5 * (lo + hi);
            let hit = leaf.point_at(t);
            let (s, dist) = target.closest(&hit);
            if s <= target.start() || s >= target.end() || dist > 10.0 * step {
                return Err(escape());
            }
            return Ok((s, t));
        }
        prev = (leaf.params[i], d);
    }
    Err(escape())
}

/// Sampled center holonomy between two transversals of one plaque.
pub fn center_holonomy(
    f: &DAMap,
    bundles: &Bundles,
    plaque: PlaqueKind,
    source: &LeafCurve,
    target: &LeafCurve,
    samples: usize,
    max_length: f64,
    step: f64,
) -> Result<HolonomyMap, FoliationError> {
    assert!(samples >= 2);
    let inner = 0.8;
    let params: Vec<f64> = linspace(inner * source.start(), inner * source.end(), samples - 1);
    let mapped: Vec<(f64, f64)> = params
        .par_iter()
        .map(|&s| slide(f, bundles, &source.point_at(s), target, max_length, step))
        .collect::<Result<_, _>>()?;
    let target_params: Vec<f64> = mapped.iter().map(|m| m.0).collect();
    let mut lip: f64 = 0.0;
    let mut inv: f64 = 0.0;
    let mut monotone = true;
    let dir = (target_params[1] - target_params[0]).signum();
    for i in 1..params.len() {
        let ds = params[i] - params[i - 1];
        let dt = target_params[i] - target_params[i - 1];
        if dt.signum() != dir {
            monotone = false;
        }
        lip = lip.max((dt / ds).abs());
        inv = inv.max((ds / dt).abs());
    }
    Ok(HolonomyMap {
        plaque,
        source_params: params,
        target_params,
        leaf_lengths: mapped.iter().map(|m| m.1).collect(),
        lipschitz: lip,
        inverse_lipschitz: inv,
        monotone,
    })
}

/// Angle between the computed bundle and the linear eigenvector, max over
/// the grid points.
pub fn deviation_from_linear(field: &BundleField, f: &DAMap, a: &LinearAnosov) -> Result<f64, DamapError> {
    let e = a.eigenvectors()[field.kind().index()];
    let n = field.resolution();
    (0..n.pow(3))
        .into_par_iter()
        .map(|i| Ok(angle(&field.eval(f, &grid_point(n, i))?, &e)))
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::damap::Perturbation;
    use crate::torus::{analyze_linear, reference_matrix};

    fn a0() -> LinearAnosov {
        analyze_linear(&reference_matrix()).unwrap()
    }

    fn shear(eps: f64) -> DAMap {
        DAMap::new(a0(), vec![Perturbation::shear(0, [0, 1, 0], eps).unwrap()])
    }

    #[test]
    fn linear_bundles_are_the_eigenvectors() {
        let f = DAMap::linear_only(a0());
        let b = Bundles::compute(&f, 4, 50).unwrap();
        for kind in [BundleKind::Stable, BundleKind::Center, BundleKind::Unstable] {
            let field = b.get(kind);
            assert!(field.invariance_residual() <= 1e-12);
            let x = TorusPoint::new(0.3, 0.7, 0.1).unwrap();
            let v = field.eval(&f, &x).unwrap();
            assert!((v - a0().eigenvectors()[kind.index()]).norm() <= 1e-12);
        }
        assert_eq!(b.center.label(), "ws");
    }

    #[test]
    fn perturbed_bundles_are_invariant() {
        let f = shear(0.05);
        let b = Bundles::compute(&f, 16, 200).unwrap();
        for kind in [BundleKind::Stable, BundleKind::Center, BundleKind::Unstable] {
            let r = invariance_residual(b.get(kind), &f, 500, 9).unwrap();
            assert!(r <= 1e-4, "{kind:?}: {r}");
        }
    }

    #[test]
    fn growth_rates_are_ordered() {
        let f = shear(0.05);
        let b = Bundles::compute(&f, 12, 200).unwrap();
        let s = StageRng::new(4, "g");
        for i in 0..5 {
            let x = s.point(i);
            let gs = growth_rate(&b.stable, &f, &x, 20).unwrap();
            let gc = growth_rate(&b.center, &f, &x, 20).unwrap();
            let gu = growth_rate(&b.unstable, &f, &x, 20).unwrap();
            assert!(gs < gc && gc < gu);
        }
    }

    #[test]
    fn linear_center_curve_is_straight() {
        let f = DAMap::linear_only(a0());
        let b = Bundles::compute(&f, 4, 50).unwrap();
        let x0 = TorusPoint::new(0.2, 0.4, 0.6).unwrap();
        let c = integrate_center_curve(&b.center, &f, &x0, 0.2, 1e-2).unwrap();
        let e = a0().eigenvectors()[1];
        for (p, t) in c.points.iter().zip(&c.params) {
            assert!((p - (x0.lift() + e * *t)).norm() <= 1e-12);
        }
        assert!((c.start() + 0.2).abs() < 1e-12 && (c.end() - 0.2).abs() < 1e-12);
        assert!(c.params.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn wrong_field_kind_is_rejected() {
        let f = DAMap::linear_only(a0());
        let b = Bundles::compute(&f, 4, 50).unwrap();
        assert!(matches!(
            integrate_center_curve(&b.unstable, &f, &TorusPoint::ORIGIN, 0.1, 1e-2),
            Err(FoliationError::WrongKind { .. })
        ));
    }

    #[test]
    fn linear_box_is_affine_and_locate_inverts_point() {
        let f = DAMap::linear_only(a0());
        let b = Bundles::compute(&f, 4, 50).unwrap();
        let x = TorusPoint::new(0.5, 0.5, 0.5).unwrap();
        let shape = BoxShape {
            step: 1e-2,
            ..BoxShape::default()
        };
        let fb = build_foliated_box(&f, &b, &x, shape).unwrap();
        let a = a0();
        let e = a.eigenvectors();
        let y = fb.point(0.03, -0.07, 0.11);
        let affine = x.lift() + e[0] * 0.03 + e[2] * -0.07 + e[1] * 0.11;
        assert!((y - affine).norm() < 1e-12);
        let c = fb.locate(&y).unwrap();
        assert!((c.p - 0.03).abs() < 1e-10 && (c.q + 0.07).abs() < 1e-10 && (c.t - 0.11).abs() < 1e-10);
        assert!(fb.locate(&(x.lift() + e[1] * 0.5)).is_none());
    }

    #[test]
    fn linear_holonomy_is_a_translation() {
        let f = DAMap::linear_only(a0());
        let b = Bundles::compute(&f, 4, 50).unwrap();
        let x = TorusPoint::new(0.1, 0.2, 0.3).unwrap();
        let src = plaque_transversal(&f, &b, PlaqueKind::CenterStable, &x, 0.0, 0.1, 1e-2).unwrap();
        let dst = plaque_transversal(&f, &b, PlaqueKind::CenterStable, &x, 0.1, 0.1, 1e-2).unwrap();
        let h = center_holonomy(&f, &b, PlaqueKind::CenterStable, &src, &dst, 9, 0.5, 1e-2).unwrap();
        assert!(h.monotone);
        assert!((h.lipschitz - 1.0).abs() < 1e-8 && (h.inverse_lipschitz - 1.0).abs() < 1e-8);
        for (s, t) in h.source_params.iter().zip(&h.target_params) {
            assert!((s - t).abs() < 1e-8);
        }
    }

    #[test]
    fn bundle_file_round_trip() {
        let f = shear(0.02);
        let b = compute_bundle(&f, BundleKind::Center, 4, 200).unwrap();
        let mut bytes = Vec::new();
        b.to_file().write_to(&mut bytes).unwrap();
        let back = BundleField::from_file(&FieldFile::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn param_location() {
        let nodes = [0.0, 0.5, 1.0];
        assert_eq!(locate_param(&nodes, 0.25), (0, 0.5));
        assert_eq!(locate_param(&nodes, 0.75), (1, 0.5));
        assert_eq!(locate_param(&nodes, 1.0), (1, 1.0));
        assert_eq!(locate_param(&nodes, -0.5), (0, -1.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use std::sync::OnceLock;

        fn linear_box() -> &'static (DAMap, FoliatedBox) {
            static BOX: OnceLock<(DAMap, FoliatedBox)> = OnceLock::new();
            BOX.get_or_init(|| {
                let f = DAMap::linear_only(a0());
                let b = Bundles::compute(&f, 4, 50).unwrap();
                let shape = BoxShape { step: 1e-2, cells: 4, ..BoxShape::default() };
                let fb = build_foliated_box(&f, &b, &TorusPoint::new(0.3, 0.3, 0.3).unwrap(), shape).unwrap();
                (f, fb)
            })
        }

        proptest! {
            #[test]
            fn locate_inverts_point(p in -0.1f64..0.1, q in -0.1f64..0.1, t in -0.2f64..0.2) {
                let (_, fb) = linear_box();
                let c = fb.locate(&fb.point(p, q, t)).unwrap();
                prop_assert!((c.p - p).abs() < 1e-9 && (c.q - q).abs() < 1e-9 && (c.t - t).abs() < 1e-9);
            }

            #[test]
            fn leaf_params_increase(x in 0.0f64..1.0, y in 0.0f64..1.0, z in 0.0f64..1.0) {
                static SHEAR: OnceLock<(DAMap, Bundles)> = OnceLock::new();
                let (f, b) = SHEAR.get_or_init(|| {
                    let f = DAMap::new(a0(), vec![Perturbation::shear(0, [0, 1, 0], 0.02).unwrap()]);
                    let b = Bundles::compute(&f, 4, 200).unwrap();
                    (f, b)
                });
                let c = integrate_center_curve(&b.center, f, &TorusPoint::new(x, y, z).unwrap(), 0.05, 1e-2).unwrap();
                prop_assert!(c.params.windows(2).all(|w| w[1] > w[0]));
                prop_assert!((c.params[c.origin]).abs() == 0.0);
            }
        }
    }
}
