//! Semi-conjugacy `A ∘ H = H ∘ f` with `H = id + u`, solved per eigencomponent
//! of `A` by contraction on a periodic grid.
//!
//! In eigen-coordinates the equation splits into `μ_c u_c(x) = g_c(x) + u_c(f x)`
//! with `g = V⁻¹ (f̃ - A)`. Expanding components are iterated forward,
//! contracting ones through `f⁻¹`.
//!
//! `u` is in general only Hölder, so plain interpolation of the grid values is
//! accurate to a fraction of the grid spacing at best. Off-grid evaluation
//! therefore unrolls the functional equation `depth` times at the query point
//! and only interpolates at the end of the orbit segment; the residual of the
//! result is the interpolated residual at `f^{±depth}(x)` damped by `κ^depth`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::damap::{DAMap, DamapError};
use crate::grid::{grid_point, FieldFile, PeriodicGrid};
use crate::rng::StageRng;
use crate::torus::{min_displacement, LinearAnosov, TorusPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConjugacyError {
    #[error("component {component} did not converge in {iterations} iterations (last change {change:.3e})")]
    NoConvergence {
        component: usize,
        iterations: usize,
        change: f64,
    },
    #[error("inverse unavailable: {0}")]
    InverseUnavailable(#[from] DamapError),
    #[error("map is not in the homotopy class of the given linear map")]
    HomotopyMismatch,
    #[error("field file: {0}")]
    Format(String),
}

/// Target damping `κ^depth` used to pick the default evaluation depth.
pub const DEFAULT_DEPTH_DAMPING: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ConjugacyField {
    resolution: usize,
    basis: Matrix3<f64>,
    basis_inv: Matrix3<f64>,
    eigenvalues: [f64; 3],
    components: [PeriodicGrid; 3],
    iterations: [usize; 3],
    /// Sup-change of every iteration, per component.
    change_log: [Vec<f64>; 3],
    tol: f64,
    refine_depth: [usize; 3],
}

/// Contraction factor of the component iteration.
pub fn contraction_factor(mu: f64) -> f64 {
    if mu.abs() > 1.0 {
        1.0 / mu.abs()
    } else {
        mu.abs()
    }
}

/// Smallest depth with `κ^depth ≤ damping`.
pub fn depth_for(kappa: f64, damping: f64) -> usize {
    (damping.ln() / kappa.ln()).ceil().max(0.0) as usize
}

/// `V⁻¹ (f̃(x) - A x)`.
fn defect(f: &DAMap, basis_inv: &Matrix3<f64>, x: &TorusPoint) -> Vector3<f64> {
    basis_inv * f.linear_defect(x)
}

impl ConjugacyField {
    /// The unsolved field `u ≡ 0`, evaluated without unrolling.
    pub fn zero(a: &LinearAnosov, resolution: usize) -> Self {
        ConjugacyField {
            resolution,
            basis: a.eigenbasis(),
            basis_inv: a.eigenbasis_inverse(),
            eigenvalues: a.eigenvalues(),
            components: [
                PeriodicGrid::zeros(resolution),
                PeriodicGrid::zeros(resolution),
                PeriodicGrid::zeros(resolution),
            ],
            iterations: [0; 3],
            change_log: [Vec::new(), Vec::new(), Vec::new()],
            tol: 0.0,
            refine_depth: [0; 3],
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn component(&self, c: usize) -> &PeriodicGrid {
        &self.components[c]
    }

    pub fn iterations(&self) -> [usize; 3] {
        self.iterations
    }

    pub fn change_log(&self, c: usize) -> &[f64] {
        &self.change_log[c]
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn refine_depth(&self) -> [usize; 3] {
        self.refine_depth
    }

    pub fn with_refine_depth(mut self, depth: [usize; 3]) -> Self {
        self.refine_depth = depth;
        self
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        self.eigenvalues
    }

    /// Largest `|u|` over the grid, in standard coordinates.
    pub fn sup_displacement(&self) -> f64 {
        (0..self.resolution.pow(3))
            .map(|i| {
                let w = Vector3::new(
                    self.components[0].data()[i],
                    self.components[1].data()[i],
                    self.components[2].data()[i],
                );
                (self.basis * w).norm()
            })
            .fold(0.0, f64::max)
    }

    fn component_at(&self, f: &DAMap, c: usize, x: &TorusPoint) -> Result<f64, DamapError> {
        let mu = self.eigenvalues[c];
        let depth = self.refine_depth[c];
        let grid = &self.components[c];
        if mu.abs() > 1.0 {
            // u(x) = Σ_{k<K} μ^{-(k+1)} g(f^k x) + μ^{-K} u(f^K x)
            let mut p = *x;
            let mut acc = 0.0;
            let mut w = 1.0 / mu;
            for _ in 0..depth {
                acc += w * (self.basis_inv * f.linear_defect(&p))[c];
                p = f.apply(&p);
                w /= mu;
            }
            Ok(acc + w * mu * grid.interpolate(&p))
        } else {
            // u(y) = -Σ_{k=1..K} μ^{k-1} g(f^{-k} y) + μ^K u(f^{-K} y)
            let mut p = *x;
            let mut acc = 0.0;
            let mut w = 1.0;
            for _ in 0..depth {
                p = f.invert(&p)?;
                acc -= w * (self.basis_inv * f.linear_defect(&p))[c];
                w *= mu;
            }
            Ok(acc + w * grid.interpolate(&p))
        }
    }

    /// `u(x)` in eigen-coordinates.
    pub fn eigen_displacement(&self, f: &DAMap, x: &TorusPoint) -> Result<Vector3<f64>, DamapError> {
        Ok(Vector3::new(
            self.component_at(f, 0, x)?,
            self.component_at(f, 1, x)?,
            self.component_at(f, 2, x)?,
        ))
    }

    /// `u(x)` in standard coordinates.
    pub fn displacement(&self, f: &DAMap, x: &TorusPoint) -> Result<Vector3<f64>, DamapError> {
        Ok(self.basis * self.eigen_displacement(f, x)?)
    }

    /// `H(x) = x + u(x)` on the torus.
    pub fn apply(&self, f: &DAMap, x: &TorusPoint) -> Result<TorusPoint, DamapError> {
        Ok(x.translate(&self.displacement(f, x)?))
    }

    pub fn to_file(&self) -> FieldFile {
        let b = self.basis;
        let mut meta = vec![
            ("kind".to_string(), "conjugacy".to_string()),
            (
                "eigenbasis".to_string(),
                (0..9)
                    .map(|i| format!("{:e}", b[(i / 3, i % 3)]))
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
            (
                "eigenvalues".to_string(),
                self.eigenvalues.map(|v| format!("{v:e}")).join(" "),
            ),
            ("tol".to_string(), format!("{:e}", self.tol)),
        ];
        meta.push((
            "iterations".to_string(),
            self.iterations.map(|v| v.to_string()).join(" "),
        ));
        meta.push((
            "refine_depth".to_string(),
            self.refine_depth.map(|v| v.to_string()).join(" "),
        ));
        FieldFile {
            meta,
            grids: self.components.to_vec(),
        }
    }

    pub fn from_file(file: &FieldFile) -> Result<Self, ConjugacyError> {
        let bad = |m: &str| ConjugacyError::Format(m.to_string());
        if file.get("kind") != Some("conjugacy") {
            return Err(bad("not a conjugacy field"));
        }
        if file.grids.len() != 3 {
            return Err(bad("expected three component grids"));
        }
        let floats = |key: &str, len: usize| -> Result<Vec<f64>, ConjugacyError> {
            let v: Vec<f64> = file
                .get(key)
                .ok_or_else(|| bad(key))?
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| bad(key))?;
            if v.len() != len {
                return Err(bad(key));
            }
            Ok(v)
        };
        let ints = |key: &str| -> Result<[usize; 3], ConjugacyError> {
            let v: Vec<usize> = file
                .get(key)
                .ok_or_else(|| bad(key))?
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| bad(key))?;
            v.try_into().map_err(|_| bad(key))
        };
        let b = floats("eigenbasis", 9)?;
        let basis = Matrix3::from_row_slice(&b);
        let basis_inv = basis.try_inverse().ok_or_else(|| bad("singular eigenbasis"))?;
        let ev = floats("eigenvalues", 3)?;
        Ok(ConjugacyField {
            resolution: file.grids[0].resolution(),
            basis,
            basis_inv,
            eigenvalues: [ev[0], ev[1], ev[2]],
            components: [
                file.grids[0].clone(),
                file.grids[1].clone(),
                file.grids[2].clone(),
            ],
            iterations: ints("iterations")?,
            change_log: [Vec::new(), Vec::new(), Vec::new()],
            tol: floats("tol", 1)?[0],
            refine_depth: ints("refine_depth")?,
        })
    }
}

/// Solve the per-component fixed point problems on a `resolution³` grid.
pub fn solve_semiconjugacy(
    f: &DAMap,
    a: &LinearAnosov,
    resolution: usize,
    tol: f64,
    max_iters: usize,
) -> Result<ConjugacyField, ConjugacyError> {
    if f.linear().matrix() != a.matrix() {
        return Err(ConjugacyError::HomotopyMismatch);
    }
    let mut field = ConjugacyField::zero(a, resolution);
    let n3 = resolution.pow(3);
    let basis_inv = field.basis_inv;
    let points: Vec<TorusPoint> = (0..n3).map(|i| grid_point(resolution, i)).collect();
    let forward: Vec<TorusPoint> = points.par_iter().map(|p| f.apply(p)).collect();
    let g_here: Vec<Vector3<f64>> = points.par_iter().map(|p| defect(f, &basis_inv, p)).collect();
    let needs_inverse = a.eigenvalues().iter().any(|m| m.abs() < 1.0);
    let (backward, g_back): (Vec<TorusPoint>, Vec<Vector3<f64>>) = if needs_inverse {
        let back: Vec<TorusPoint> = points
            .par_iter()
            .map(|p| f.invert(p))
            .collect::<Result<_, _>>()?;
        let gb = back.par_iter().map(|p| defect(f, &basis_inv, p)).collect();
        (back, gb)
    } else {
        (Vec::new(), Vec::new())
    };

    for c in 0..3 {
        let mu = a.eigenvalues()[c];
        let kappa = contraction_factor(mu);
        let expanding = mu.abs() > 1.0;
        let mut u = PeriodicGrid::zeros(resolution);
        let mut iters = 0;
        loop {
            if iters == max_iters {
                return Err(ConjugacyError::NoConvergence {
                    component: c,
                    iterations: iters,
                    change: field.change_log[c].last().copied().unwrap_or(f64::INFINITY),
                });
            }
            let next: Vec<f64> = (0..n3)
                .into_par_iter()
                .map(|i| {
                    if expanding {
                        (g_here[i][c] + u.interpolate(&forward[i])) / mu
                    } else {
                        mu * u.interpolate(&backward[i]) - g_back[i][c]
                    }
                })
                .collect();
            let change = next
                .iter()
                .zip(u.data())
                .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
            u = PeriodicGrid::from_data(resolution, next);
            iters += 1;
            field.change_log[c].push(change);
            if change <= tol * (1.0 - kappa) {
                break;
            }
        }
        field.components[c] = u;
        field.iterations[c] = iters;
        field.refine_depth[c] = depth_for(kappa, DEFAULT_DEPTH_DAMPING);
    }
    field.tol = tol;
    Ok(field)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    pub sup: f64,
    pub mean: f64,
    pub samples: usize,
}

/// `|A H(x) - H(f x)|` on the torus at random points.
pub fn conjugacy_residual(
    field: &ConjugacyField,
    f: &DAMap,
    a: &LinearAnosov,
    samples: usize,
    seed: u64,
) -> Result<ResidualReport, ConjugacyError> {
    let stage = StageRng::new(seed, "conjugacy-residual");
    let am = a.as_f64();
    let res: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| -> Result<f64, DamapError> {
            let x = stage.point(i);
            let hx = x.lift() + field.displacement(f, &x)?;
            let fx = f.apply(&x);
            let hfx = fx.translate(&field.displacement(f, &fx)?);
            let lhs = TorusPoint::from_lift(&(am * hx));
            Ok(min_displacement(&lhs, &hfx).0.norm())
        })
        .collect::<Result<_, _>>()?;
    let sup = res.iter().copied().fold(0.0, f64::max);
    let mean = res.iter().sum::<f64>() / samples.max(1) as f64;
    Ok(ResidualReport { sup, mean, samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DisplacementBound {
    /// `sup |u|` over the grid.
    pub sup_u: f64,
    /// `sup |f̃ - Ã|` over the grid.
    pub sup_defect: f64,
    /// `sup |u| / sup |f̃ - Ã|`.
    pub c_empirical: f64,
    /// `Σ_c sup |g_c| / |1 - |μ_c||`, divided by `sup |f̃ - Ã|`.
    pub c_theoretical: f64,
}

pub fn displacement_bound(field: &ConjugacyField, f: &DAMap) -> DisplacementBound {
    let n = field.resolution;
    let n3 = n.pow(3);
    let (sup_defect, sup_g) = (0..n3)
        .into_par_iter()
        .map(|i| {
            let d = f.linear_defect(&grid_point(n, i));
            let g = field.basis_inv * d;
            (d.norm(), [g[0].abs(), g[1].abs(), g[2].abs()])
        })
        .reduce(
            || (0.0, [0.0; 3]),
            |(a, ga), (b, gb)| (a.max(b), [ga[0].max(gb[0]), ga[1].max(gb[1]), ga[2].max(gb[2])]),
        );
    let sup_u = field.sup_displacement();
    let theory: f64 = (0..3)
        .map(|c| sup_g[c] * field.basis.column(c).norm() / (1.0 - field.eigenvalues[c].abs()).abs())
        .sum();
    let ratio = |v: f64| if sup_defect > 0.0 { v / sup_defect } else { 0.0 };
    DisplacementBound {
        sup_u,
        sup_defect,
        c_empirical: ratio(sup_u),
        c_theoretical: ratio(theory),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiberReport {
    /// Pairs whose images lie within `image_threshold`.
    pub close_pairs: usize,
    pub pairs: usize,
    pub image_threshold: f64,
    /// `max (|x - y| - |H x - H y|)⁺` over close pairs.
    pub defect: f64,
    /// `|cos|` of the angle between the maximal-defect pair and `E^c_A`.
    pub defect_center_alignment: f64,
    pub defect_pair: Option<(TorusPoint, TorusPoint)>,
}

/// Injectivity defect of `H` on random nearby pairs at log-spaced separations
/// in `[1e-4, 1e-1]`.
pub fn fiber_diagnostics(
    field: &ConjugacyField,
    f: &DAMap,
    samples: usize,
    image_threshold: f64,
    seed: u64,
) -> Result<FiberReport, ConjugacyError> {
    use rand::Rng;
    let stage = StageRng::new(seed, "fiber");
    let center = f.linear().eigenvectors()[1];
    let rows: Vec<Option<(f64, f64, TorusPoint, TorusPoint)>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| -> Result<_, DamapError> {
            let mut rng = stage.stream(i);
            let x = crate::rng::uniform_point(&mut rng);
            let dir = loop {
                let v = Vector3::new(
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                );
                let n = v.norm();
                if n > 1e-3 && n <= 1.0 {
                    break v / n;
                }
            };
            let sep = 10f64.powf(-4.0 + 3.0 * rng.random::<f64>());
            let y = x.translate(&(dir * sep));
            let hx = field.apply(f, &x)?;
            let hy = field.apply(f, &y)?;
            let img = hx.distance(&hy);
            if img > image_threshold {
                return Ok(None);
            }
            Ok(Some(((sep - img).max(0.0), dir.dot(&center).abs(), x, y)))
        })
        .collect::<Result<_, _>>()?;
    let close: Vec<_> = rows.into_iter().flatten().collect();
    let worst = close
        .iter()
        .copied()
        .max_by(|a, b| a.0.total_cmp(&b.0));
    Ok(FiberReport {
        close_pairs: close.len(),
        pairs: samples,
        image_threshold,
        defect: worst.map_or(0.0, |w| w.0),
        defect_center_alignment: worst.map_or(0.0, |w| w.1),
        defect_pair: worst.map(|w| (w.2, w.3)),
    })
}

pub const DEFAULT_SEPARATIONS: [f64; 11] = [
    0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0,
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub separation: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub used: usize,
    pub excluded: usize,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    pub iterate: u32,
    pub bound: f64,
    pub direction: usize,
    /// Smallest tested separation from which on every ratio lies in `[1/C, C]`;
    /// `None` reports that no such `M` exists in the tested range.
    pub m: Option<f64>,
    pub rows: Vec<RatioRow>,
}

/// Ratios `|π(f̃ᵏx - f̃ᵏy)| / |π(Aᵏx - Aᵏy)|` for lifted pairs at increasing
/// separations, with `π` the projection onto eigendirection `direction` along
/// the other two.
///
/// Pairs with `|π(Aᵏ(x - y))| < min_denominator · |μ|ᵏ · |x - y|`, i.e. whose
/// initial separation has too small a component along the direction, are
/// excluded.
#[allow(clippy::too_many_arguments)]
pub fn geometric_ratio_check(
    f: &DAMap,
    a: &LinearAnosov,
    k: u32,
    bound: f64,
    direction: usize,
    separations: &[f64],
    samples: usize,
    min_denominator: f64,
    seed: u64,
) -> RatioReport {
    use rand::Rng;
    assert!(bound > 1.0 && direction < 3);
    let vinv = a.eigenbasis_inverse();
    let am = a.as_f64();
    let mu_k = a.eigenvalues()[direction].abs().powi(k as i32);
    let stage = StageRng::new(seed, "geometric-ratio");
    let mut rows = Vec::new();
    for (si, &sep) in separations.iter().enumerate() {
        let vals: Vec<Option<f64>> = (0..samples as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stage.stream(si as u64 * samples as u64 + i);
                let x = Vector3::new(rng.random(), rng.random(), rng.random());
                let dir = loop {
                    let v = Vector3::new(
                        rng.random::<f64>() * 2.0 - 1.0,
                        rng.random::<f64>() * 2.0 - 1.0,
                        rng.random::<f64>() * 2.0 - 1.0,
                    );
                    let n = v.norm();
                    if n > 1e-3 && n <= 1.0 {
                        break v / n;
                    }
                };
                let y = x + dir * sep;
                let (mut fx, mut fy, mut ax, mut ay) = (x, y, x, y);
                for _ in 0..k {
                    fx = f.lift_apply(&fx);
                    fy = f.lift_apply(&fy);
                    ax = am * ax;
                    ay = am * ay;
                }
                let den = (vinv * (ay - ax))[direction].abs();
                if den < min_denominator * mu_k * sep {
                    return None;
                }
                Some((vinv * (fy - fx))[direction].abs() / den)
            })
            .collect();
        let used: Vec<f64> = vals.iter().flatten().copied().collect();
        let min_ratio = used.iter().copied().fold(f64::INFINITY, f64::min);
        let max_ratio = used.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rows.push(RatioRow {
            separation: sep,
            min_ratio,
            max_ratio,
            used: used.len(),
            excluded: vals.len() - used.len(),
            within: !used.is_empty() && min_ratio >= 1.0 / bound && max_ratio <= bound,
        });
    }
    let mut m = None;
    for row in rows.iter().rev() {
        if row.within {
            m = Some(row.separation);
        } else {
            break;
        }
    }
    RatioReport {
        iterate: k,
        bound,
        direction,
        m,
        rows,
    }
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
    fn depth_formula() {
        assert_eq!(depth_for(0.5, 0.25), 2);
        assert_eq!(depth_for(0.5, 0.2), 3);
        assert_eq!(contraction_factor(4.0), 0.25);
        assert_eq!(contraction_factor(-0.5), 0.5);
    }

    #[test]
    fn linear_map_has_zero_field_after_one_iteration() {
        let f = DAMap::linear_only(a0());
        let h = solve_semiconjugacy(&f, &a0(), 8, 1e-10, 10).unwrap();
        assert_eq!(h.iterations(), [1, 1, 1]);
        assert_eq!(h.sup_displacement(), 0.0);
        let r = conjugacy_residual(&h, &f, &a0(), 200, 1).unwrap();
        assert_eq!(r.sup, 0.0);
        let fib = fiber_diagnostics(&h, &f, 200, 1e-2, 1).unwrap();
        assert!(fib.defect < 1e-12);
    }

    #[test]
    fn one_dimensional_recursion_oracle() {
        // u(x) = Σ μ^{-(k+1)} g(f^k x) along the exact linear orbit for the
        // expanding component; compare the unrolled series at depth 60 with
        // the refined evaluation of the solved field.
        let f = shear(0.03);
        let h = solve_semiconjugacy(&f, &a0(), 16, 1e-12, 500).unwrap();
        let vinv = a0().eigenbasis_inverse();
        let mu = a0().eigenvalues()[2];
        let x = TorusPoint::new(0.31, 0.72, 0.05).unwrap();
        let mut p = x;
        let mut w = 1.0 / mu;
        let mut series = 0.0;
        for _ in 0..60 {
            series += w * (vinv * f.linear_defect(&p))[2];
            p = f.apply(&p);
            w /= mu;
        }
        let got = h.eigen_displacement(&f, &x).unwrap()[2];
        assert!((got - series).abs() < 1e-8, "{got} vs {series}");
    }

    #[test]
    fn grid_iteration_contracts_geometrically() {
        let f = shear(0.05);
        let h = solve_semiconjugacy(&f, &a0(), 12, 1e-10, 500).unwrap();
        for c in 0..3 {
            let kappa = contraction_factor(a0().eigenvalues()[c]);
            let log = h.change_log(c);
            for w in log[1..].windows(2) {
                assert!(w[1] <= kappa * w[0] * (1.0 + 1e-9) + 1e-15, "component {c}: {w:?}");
            }
        }
    }

    #[test]
    fn refined_residual_beats_plain_interpolation() {
        let f = shear(0.05);
        let h = solve_semiconjugacy(&f, &a0(), 16, 1e-10, 500).unwrap();
        let plain = h.clone().with_refine_depth([0; 3]);
        let r_plain = conjugacy_residual(&plain, &f, &a0(), 300, 2).unwrap();
        let r = conjugacy_residual(&h, &f, &a0(), 300, 2).unwrap();
        assert!(r.sup < 1e-5, "refined residual {}", r.sup);
        assert!(r.sup < 1e-2 * r_plain.sup);
    }

    #[test]
    fn zero_field_residual_is_the_defect_baseline() {
        let f = shear(0.05);
        let z = ConjugacyField::zero(&a0(), 8);
        let r = conjugacy_residual(&z, &f, &a0(), 2000, 3).unwrap();
        let b = displacement_bound(&z, &f);
        assert!(r.sup <= b.sup_defect * (1.0 + 1e-9));
        assert!(r.sup >= 0.9 * b.sup_defect);
    }

    #[test]
    fn reordered_commuting_primitives_give_the_same_field() {
        let s1 = Perturbation::shear(0, [0, 1, 0], 0.02).unwrap();
        let s2 = Perturbation::shear(0, [0, 0, 1], 0.03).unwrap();
        let f = DAMap::new(a0(), vec![s1.clone(), s2.clone()]);
        let g = DAMap::new(a0(), vec![s2, s1]);
        let hf = solve_semiconjugacy(&f, &a0(), 10, 1e-10, 500).unwrap();
        let hg = solve_semiconjugacy(&g, &a0(), 10, 1e-10, 500).unwrap();
        for c in 0..3 {
            let d = hf
                .component(c)
                .data()
                .iter()
                .zip(hg.component(c).data())
                .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
            assert!(d <= 1e-12);
        }
    }

    #[test]
    fn displacement_scales_linearly_with_amplitude() {
        let c: Vec<f64> = [0.01, 0.02, 0.04]
            .iter()
            .map(|&e| {
                let f = shear(e);
                let h = solve_semiconjugacy(&f, &a0(), 12, 1e-10, 500).unwrap();
                h.sup_displacement() / e
            })
            .collect();
        for v in &c[1..] {
            assert!((v / c[0] - 1.0).abs() < 0.1, "{c:?}");
        }
    }

    #[test]
    fn field_file_round_trip() {
        let f = shear(0.02);
        let h = solve_semiconjugacy(&f, &a0(), 6, 1e-8, 500).unwrap();
        let mut bytes = Vec::new();
        h.to_file().write_to(&mut bytes).unwrap();
        let back = ConjugacyField::from_file(&FieldFile::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(back.components, h.components);
        assert_eq!(back.refine_depth(), h.refine_depth());
        assert_eq!(back.iterations(), h.iterations());
    }

    #[test]
    fn ratio_check_linear_is_identically_one() {
        let f = DAMap::linear_only(a0());
        let r = geometric_ratio_check(&f, &a0(), 5, 2.0, 1, &DEFAULT_SEPARATIONS, 50, 0.05, 4);
        assert_eq!(r.m, Some(0.01));
        for row in &r.rows {
            assert!((row.min_ratio - 1.0).abs() < 1e-6 && (row.max_ratio - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ratio_guard_excludes_degenerate_pairs() {
        let f = DAMap::linear_only(a0());
        let r = geometric_ratio_check(&f, &a0(), 2, 2.0, 1, &[1.0], 400, 0.9, 5);
        assert!(r.rows[0].excluded > 0);
        assert_eq!(r.rows[0].excluded + r.rows[0].used, 400);
    }
}
