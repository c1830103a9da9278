//! Monte-Carlo disintegration of volume along center leaves of a foliated
//! box, its classification, concentration and equidistribution diagnostics,
//! and scaled leaf measures `m_{ξ,k}`.

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::damap::{DAMap, DamapError};
use crate::foliation::{
    hausdorff, integrate_leaf, BoxCoords, BundleKind, Bundles, CenterCurve, FoliatedBox, FoliationError,
    LeafCurve,
};
use crate::rng::StageRng;
use crate::torus::TorusPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DisintegrationError {
    #[error("transversal cell {cell:?} received {count} samples, below the floor {floor}")]
    InsufficientSamples {
        cell: (usize, usize),
        count: u64,
        floor: u64,
    },
    #[error("center leaf of {base} does not reach level {level} within arclength {traced:.3e}")]
    NoCrossing {
        base: TorusPoint,
        level: u32,
        traced: f64,
    },
    #[error("center segments of length {gamma0} do not grow under the center-expanding iterate (factor {factor:.4})")]
    NoGrowth { gamma0: f64, factor: f64 },
    #[error(transparent)]
    Foliation(#[from] FoliationError),
    #[error(transparent)]
    Map(#[from] DamapError),
}

/// Conditional measure estimate on the leaf segments of one transversal
/// cell, binned over the leaf parameter `[-L, L]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalHistogram {
    pub base: TorusPoint,
    pub cell: (usize, usize),
    pub leaf_half: f64,
    /// Unnormalized bin weights (sample counts for Monte-Carlo estimates).
    pub weights: Vec<f64>,
    /// Raw number of samples behind the weights.
    pub samples: u64,
}

impl ConditionalHistogram {
    pub fn bins(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0 || self.weights.iter().sum::<f64>() <= 0.0
    }

    /// Normalized bin masses; `None` for an empty cell.
    pub fn masses(&self) -> Option<Vec<f64>> {
        if self.is_empty() {
            return None;
        }
        let total: f64 = self.weights.iter().sum();
        Some(self.weights.iter().map(|w| w / total).collect())
    }

    /// Merge adjacent bin pairs. Requires an even bin count.
    pub fn coarsen(&self) -> ConditionalHistogram {
        assert!(self.bins() % 2 == 0, "bin count must be even to coarsen");
        ConditionalHistogram {
            weights: self.weights.chunks_exact(2).map(|c| c[0] + c[1]).collect(),
            ..self.clone()
        }
    }

    /// Bins `lo..hi` as a histogram over the corresponding sub-interval.
    pub fn restrict(&self, lo: usize, hi: usize) -> ConditionalHistogram {
        let w = 2.0 * self.leaf_half / self.bins() as f64;
        let kept: Vec<f64> = self.weights[lo..hi].to_vec();
        let total: f64 = self.weights.iter().sum();
        let share = if total > 0.0 { kept.iter().sum::<f64>() / total } else { 0.0 };
        ConditionalHistogram {
            leaf_half: 0.5 * w * (hi - lo) as f64,
            samples: (self.samples as f64 * share).round() as u64,
            weights: kept,
            ..self.clone()
        }
    }

    /// Conditional mass of the leaf-parameter interval `[a, b]`, bins taken
    /// as uniform inside.
    pub fn interval_mass(&self, a: f64, b: f64) -> f64 {
        let Some(m) = self.masses() else { return 0.0 };
        let w = 2.0 * self.leaf_half / m.len() as f64;
        m.iter()
            .enumerate()
            .map(|(i, mass)| {
                let lo = -self.leaf_half + i as f64 * w;
                let overlap = (b.min(lo + w) - a.max(lo)).max(0.0);
                mass * overlap / w
            })
            .sum()
    }
}

/// Binned Kolmogorov–Smirnov distance of masses to the uniform law.
pub fn ks_to_uniform(masses: &[f64]) -> f64 {
    let n = masses.len() as f64;
    let mut cdf = 0.0;
    let mut d: f64 = 0.0;
    for (i, m) in masses.iter().enumerate() {
        cdf += m;
        d = d.max((cdf - (i + 1) as f64 / n).abs());
    }
    d
}

/// Total mass of the heaviest `ceil(q · bins)` bins.
pub fn top_mass(masses: &[f64], q: f64) -> f64 {
    let mut sorted = masses.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((q * masses.len() as f64).ceil() as usize).clamp(1, masses.len());
    sorted[..k].iter().sum()
}

/// Asymptotic one-sample KS critical coefficient at level `alpha`, split
/// over `tests` simultaneous tests: `sqrt(-ln(alpha / (2 tests)) / 2)`.
pub fn ks_critical(alpha: f64, tests: usize) -> f64 {
    (-0.5 * (alpha / (2.0 * tests.max(1) as f64)).ln()).sqrt()
}

pub const DEFAULT_SAMPLE_FLOOR: u64 = 100;
const SAMPLE_CHUNK: usize = 4096;

/// Located volume samples of a box: uniform draws in the enclosing
/// eigen-parallelepiped, kept if they fall inside the box.
pub fn sample_box(fbox: &FoliatedBox, samples: usize, seed: u64) -> Vec<BoxCoords> {
    let (center, half) = fbox.eigen_bounds();
    let half = half * 1.05;
    let basis = fbox
        .basis_inverse()
        .try_inverse()
        .expect("eigenbasis is invertible");
    let origin = fbox.origin();
    let stage = StageRng::new(seed, "disintegration");
    let chunks = samples.div_ceil(SAMPLE_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stage.stream(c as u64);
            let count = SAMPLE_CHUNK.min(samples - c * SAMPLE_CHUNK);
            (0..count)
                .filter_map(|_| {
                    let u: Vector3<f64> = Vector3::from_fn(|_, _| rng.random::<f64>() * 2.0 - 1.0);
                    let w = center + half.component_mul(&u);
                    fbox.locate(&(origin + basis * w))
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn histograms_from(fbox: &FoliatedBox, coords: &[BoxCoords], bins: usize) -> Vec<ConditionalHistogram> {
    let (ni, nj, _) = fbox.cells();
    let l = fbox.shape.leaf_half;
    let mut hists: Vec<ConditionalHistogram> = (0..ni * nj)
        .map(|c| ConditionalHistogram {
            base: fbox.base,
            cell: (c / nj, c % nj),
            leaf_half: l,
            weights: vec![0.0; bins],
            samples: 0,
        })
        .collect();
    for c in coords {
        let b = (((c.t + l) / (2.0 * l)) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize;
        let h = &mut hists[c.cell.0 * nj + c.cell.1];
        h.weights[b] += 1.0;
        h.samples += 1;
    }
    hists
}

/// Per-cell conditional histograms of volume over `bins` leaf bins.
pub fn estimate_conditionals(
    fbox: &FoliatedBox,
    samples: usize,
    bins: usize,
    seed: u64,
    floor: u64,
) -> Result<Vec<ConditionalHistogram>, DisintegrationError> {
    let coords = sample_box(fbox, samples, seed);
    let hists = histograms_from(fbox, &coords, bins);
    check_floor(&hists, floor)?;
    Ok(hists)
}

fn check_floor(hists: &[ConditionalHistogram], floor: u64) -> Result<(), DisintegrationError> {
    match hists.iter().find(|h| h.samples < floor) {
        Some(h) => Err(DisintegrationError::InsufficientSamples {
            cell: h.cell,
            count: h.samples,
            floor,
        }),
        None => Ok(()),
    }
}

/// Halve the bin count `levels - 1` times: finest level first.
pub fn refinement_levels(hists: &[ConditionalHistogram], levels: usize) -> Vec<Vec<ConditionalHistogram>> {
    let mut out = vec![hists.to_vec()];
    for _ in 1..levels {
        let next = out.last().unwrap().iter().map(|h| h.coarsen()).collect();
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// Family-wise KS level over the cells of one refinement level.
    pub alpha: f64,
    /// Mean max-bin mass at or above which a level looks atomic.
    pub atom: f64,
    /// Fraction of cells that must reject uniformity for a non-Lebesgue level.
    pub reject_fraction: f64,
    /// Smallest mean per-refinement decay of max-bin mass still read as
    /// singular; absolutely continuous densities decay by `1/2`.
    pub singular_decay: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            alpha: 0.05,
            atom: 0.5,
            reject_fraction: 0.5,
            singular_decay: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    LebesgueLike,
    AtomicLike,
    SingularContinuousLike,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelStats {
    pub bins: usize,
    pub cells: usize,
    /// Critical coefficient `c`: a cell rejects when `√n · KS > c`.
    pub ks_critical: f64,
    pub ks_max: f64,
    /// Largest `√n · KS / c` over cells.
    pub ks_score_max: f64,
    pub ks_reject_fraction: f64,
    pub max_bin_mean: f64,
    pub max_bin_max: f64,
    pub top1_mean: f64,
    pub top5_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisintegrationReport {
    pub levels: Vec<LevelStats>,
    pub thresholds: Thresholds,
    pub verdict: Verdict,
}

pub fn level_stats(hists: &[ConditionalHistogram], alpha: f64) -> LevelStats {
    let live: Vec<(&ConditionalHistogram, Vec<f64>)> =
        hists.iter().filter_map(|h| h.masses().map(|m| (h, m))).collect();
    let crit = ks_critical(alpha, live.len());
    let n = live.len().max(1) as f64;
    let mut s = LevelStats {
        bins: hists.first().map_or(0, |h| h.bins()),
        cells: live.len(),
        ks_critical: crit,
        ks_max: 0.0,
        ks_score_max: 0.0,
        ks_reject_fraction: 0.0,
        max_bin_mean: 0.0,
        max_bin_max: 0.0,
        top1_mean: 0.0,
        top5_mean: 0.0,
    };
    for (h, m) in &live {
        let ks = ks_to_uniform(m);
        let score = (h.samples as f64).sqrt() * ks / crit;
        let mb = m.iter().cloned().fold(0.0, f64::max);
        s.ks_max = s.ks_max.max(ks);
        s.ks_score_max = s.ks_score_max.max(score);
        if score > 1.0 {
            s.ks_reject_fraction += 1.0 / n;
        }
        s.max_bin_mean += mb / n;
        s.max_bin_max = s.max_bin_max.max(mb);
        s.top1_mean += top_mass(m, 0.01) / n;
        s.top5_mean += top_mass(m, 0.05) / n;
    }
    s
}

/// Verdict from per-level statistics, finest level first.
pub fn verdict_from_stats(levels: &[LevelStats], t: &Thresholds) -> Verdict {
    if levels.is_empty() {
        return Verdict::Inconclusive;
    }
    if levels.iter().all(|l| l.max_bin_mean >= t.atom) {
        return Verdict::AtomicLike;
    }
    if levels.iter().all(|l| l.ks_reject_fraction == 0.0) {
        return Verdict::LebesgueLike;
    }
    let rejects = levels.iter().all(|l| l.ks_reject_fraction >= t.reject_fraction);
    // coarse to fine ratios of mean max-bin mass
    let ratios: Vec<f64> = levels.windows(2).map(|w| w[0].max_bin_mean / w[1].max_bin_mean).collect();
    let decays = !ratios.is_empty() && ratios.iter().all(|r| *r < 1.0) && levels[0].max_bin_mean < t.atom;
    let mean_ratio = ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len().max(1) as f64;
    if rejects && decays && mean_ratio.exp() >= t.singular_decay {
        return Verdict::SingularContinuousLike;
    }
    Verdict::Inconclusive
}

/// Classify histograms given at two or more refinement levels, finest first.
pub fn classify_disintegration(levels: &[Vec<ConditionalHistogram>], thresholds: Thresholds) -> DisintegrationReport {
    assert!(levels.len() >= 2, "classification needs at least two refinement levels");
    let stats: Vec<LevelStats> = levels.iter().map(|h| level_stats(h, thresholds.alpha)).collect();
    DisintegrationReport {
        verdict: verdict_from_stats(&stats, &thresholds),
        levels: stats,
        thresholds,
    }
}

/// Histograms whose every cell puts all mass in one bin.
pub fn atomic_fixture(cells: usize, bins: usize, samples: u64) -> Vec<ConditionalHistogram> {
    (0..cells)
        .map(|c| {
            let mut weights = vec![0.0; bins];
            weights[(c * 7 + 3) % bins] = samples as f64;
            ConditionalHistogram {
                base: TorusPoint::ORIGIN,
                cell: (c, 0),
                leaf_half: 1.0,
                weights,
                samples,
            }
        })
        .collect()
}

/// Dyadic cascade masses on `2^depth` bins: each interval gives `p` of its
/// mass to its left half.
pub fn cascade_masses(depth: u32, p: f64) -> Vec<f64> {
    let mut m = vec![1.0];
    for _ in 0..depth {
        m = m.iter().flat_map(|v| [v * p, v * (1.0 - p)]).collect();
    }
    m
}

/// Histograms of the `p`-cascade with nominal sample count `samples`.
pub fn cascade_fixture(cells: usize, depth: u32, p: f64, samples: u64) -> Vec<ConditionalHistogram> {
    let m = cascade_masses(depth, p);
    (0..cells)
        .map(|c| ConditionalHistogram {
            base: TorusPoint::ORIGIN,
            cell: (c, 0),
            leaf_half: 1.0,
            weights: m.iter().map(|v| v * samples as f64).collect(),
            samples,
        })
        .collect()
}

/// Volume fraction of `A_L`, the points whose conditional mass on a leaf
/// window of length `L` containing them is at least `level`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationProfile {
    pub lengths: Vec<f64>,
    pub fractions: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
    pub level: f64,
}

pub const CONCENTRATION_LEVEL: f64 = 0.6;

/// Conditional mass of the length-`len` window around leaf parameter `t`,
/// centered and shifted inward where it would leave `[-L, L]`.
pub fn window_mass(h: &ConditionalHistogram, t: f64, len: f64) -> f64 {
    let l = h.leaf_half;
    if len >= 2.0 * l {
        return h.interval_mass(-l, l);
    }
    let a = (t - 0.5 * len).clamp(-l, l - len);
    h.interval_mass(a, a + len)
}

pub fn concentration_profile(
    fbox: &FoliatedBox,
    lengths: &[f64],
    samples: usize,
    bins: usize,
    seed: u64,
) -> Result<ConcentrationProfile, DisintegrationError> {
    let coords = sample_box(fbox, samples, seed);
    let hists = histograms_from(fbox, &coords, bins);
    check_floor(&hists, DEFAULT_SAMPLE_FLOOR)?;
    let nj = fbox.cells().1;
    let n = coords.len() as f64;
    let mut fractions = Vec::new();
    let mut stderr = Vec::new();
    for &len in lengths {
        let hits = coords
            .par_iter()
            .filter(|c| window_mass(&hists[c.cell.0 * nj + c.cell.1], c.t, len) >= CONCENTRATION_LEVEL - 1e-9)
            .count() as f64;
        let p = hits / n;
        fractions.push(p);
        stderr.push((p * (1.0 - p) / n).sqrt());
    }
    Ok(ConcentrationProfile {
        lengths: lengths.to_vec(),
        fractions,
        stderr,
        samples: coords.len(),
        level: CONCENTRATION_LEVEL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BirkhoffReport {
    pub base: TorusPoint,
    pub n: usize,
    /// Frequencies and `|orbit average - volume integral|`; the constant
    /// character comes first.
    pub characters: Vec<([i64; 3], f64)>,
    pub discrepancy: f64,
    pub non_generic: bool,
}

pub const NON_GENERIC_DISCREPANCY: f64 = 0.5;

/// The first `size` nonzero frequencies ordered by max-norm, then
/// lexicographically.
pub fn character_dictionary(size: usize) -> Vec<[i64; 3]> {
    let mut out = Vec::with_capacity(size);
    let mut r = 1i64;
    while out.len() < size {
        for a in -r..=r {
            for b in -r..=r {
                for c in -r..=r {
                    if a.abs().max(b.abs()).max(c.abs()) == r && out.len() < size {
                        out.push([a, b, c]);
                    }
                }
            }
        }
        r += 1;
    }
    out
}

/// Orbit averages of low-frequency characters from `x`, or from a seeded
/// random point when `x` is `None`.
pub fn birkhoff_discrepancy(f: &DAMap, x: Option<TorusPoint>, n: usize, size: usize, seed: u64) -> BirkhoffReport {
    assert!(n >= 1);
    let base = x.unwrap_or_else(|| StageRng::new(seed, "birkhoff").point(0));
    let dict = character_dictionary(size);
    let mut sums = vec![(0.0f64, 0.0f64); dict.len()];
    let mut p = base;
    for _ in 0..n {
        let c = p.coords();
        for (k, s) in dict.iter().zip(sums.iter_mut()) {
            let phase = std::f64::consts::TAU * (k[0] as f64 * c[0] + k[1] as f64 * c[1] + k[2] as f64 * c[2]);
            s.0 += phase.cos();
            s.1 += phase.sin();
        }
        p = f.apply(&p);
    }
    let mut characters = vec![([0, 0, 0], 0.0)];
    characters.extend(
        dict.iter()
            .zip(&sums)
            .map(|(k, s)| (*k, (s.0 * s.0 + s.1 * s.1).sqrt() / n as f64)),
    );
    let discrepancy = characters.iter().map(|c| c.1).fold(0.0, f64::max);
    BirkhoffReport {
        base,
        n,
        characters,
        discrepancy,
        non_generic: discrepancy > NON_GENERIC_DISCREPANCY,
    }
}

/// Scaled leaf measure: mass `λ^k` on the center segment `[ξ, q_k(ξ)]`,
/// where `q_k` is the point whose segment `f^{-k}` stretches to length `γ0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MkMeasure {
    pub base: TorusPoint,
    pub level: u32,
    pub gamma0: f64,
    /// `|center eigenvalue|` of the linear part.
    pub lambda: f64,
    pub segment: CenterCurve,
    pub length: f64,
}

impl MkMeasure {
    pub fn mass(&self) -> f64 {
        self.lambda.powi(self.level as i32)
    }

    pub fn ratio(&self) -> f64 {
        self.mass() / self.length
    }
}

pub const DEFAULT_GAMMA0: f64 = 0.8;
pub const TREND_ROUNDOFF: f64 = 1e-10;
const SIMPSON_PANELS: usize = 32;

/// `‖Df^{-k}(p) E^c(p)‖`.
fn backward_stretch(f: &DAMap, bundles: &Bundles, p: &Vector3<f64>, k: u32) -> Result<f64, DisintegrationError> {
    let mut q = TorusPoint::from_lift(p);
    let mut v = bundles.center.eval(f, &q)?;
    let mut log = 0.0;
    for _ in 0..k {
        let prev = f.invert(&q)?;
        v = f.derivative(&prev).lu().solve(&v).expect("invertible Jacobian");
        let n = v.norm();
        log += n.ln();
        v /= n;
        q = prev;
    }
    Ok(log.exp())
}

/// `l(f^{-k}(leaf[0, s]))` by composite Simpson.
fn pulled_length(
    f: &DAMap,
    bundles: &Bundles,
    leaf: &LeafCurve,
    s: f64,
    k: u32,
) -> Result<f64, DisintegrationError> {
    let h = s / (2 * SIMPSON_PANELS) as f64;
    let mut acc = 0.0;
    for i in 0..=2 * SIMPSON_PANELS {
        let w = if i == 0 || i == 2 * SIMPSON_PANELS {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * backward_stretch(f, bundles, &leaf.point_at(i as f64 * h), k)?;
    }
    Ok(acc * h / 3.0)
}

/// Length factor of a `γ0` segment from `ξ` under one step of the
/// center-expanding time direction.
pub fn mk_growth_factor(f: &DAMap, bundles: &Bundles, xi: &TorusPoint, gamma0: f64) -> Result<f64, DisintegrationError> {
    let leaf = integrate_leaf(&bundles.center, f, &xi.lift(), 0.0, gamma0, gamma0 / 400.0)?;
    let image: Vec<Vector3<f64>> = if f.linear().splitting().center_contracting() {
        leaf.points.iter().map(|p| f.lift_invert(p)).collect::<Result<_, _>>()?
    } else {
        leaf.points.iter().map(|p| f.lift_apply(p)).collect()
    };
    let image = LeafCurve::from_points(BundleKind::Center, image);
    Ok(image.end() / leaf.end())
}

/// Smallest growth factor over `points`; `NoGrowth` unless it exceeds 1.
pub fn check_mk_growth(
    f: &DAMap,
    bundles: &Bundles,
    points: &[TorusPoint],
    gamma0: f64,
) -> Result<f64, DisintegrationError> {
    let factor = points
        .par_iter()
        .map(|p| mk_growth_factor(f, bundles, p, gamma0))
        .try_reduce(|| f64::INFINITY, |a, b| Ok(a.min(b)))?;
    if factor > 1.0 {
        Ok(factor)
    } else {
        Err(DisintegrationError::NoGrowth { gamma0, factor })
    }
}

pub fn build_mk_measure(
    f: &DAMap,
    bundles: &Bundles,
    xi: &TorusPoint,
    k: u32,
    gamma0: f64,
) -> Result<MkMeasure, DisintegrationError> {
    let lambda = f.linear().center_eigenvalue().abs();
    let guess = gamma0 * lambda.powi(k as i32);
    let traced = 4.0 * guess;
    let leaf = integrate_leaf(&bundles.center, f, &xi.lift(), 0.0, traced, (traced / 400.0).min(1e-3))?;
    let no_crossing = || DisintegrationError::NoCrossing {
        base: *xi,
        level: k,
        traced,
    };
    let mut s = guess;
    for _ in 0..40 {
        let l = pulled_length(f, bundles, &leaf, s, k)?;
        let g = backward_stretch(f, bundles, &leaf.point_at(s), k)?;
        let next = s - (l - gamma0) / g;
        if !(next > 0.0 && next <= traced) {
            return Err(no_crossing());
        }
        let done = (next - s).abs() <= 1e-13 * s;
        s = next;
        if done {
            break;
        }
    }
    Ok(MkMeasure {
        base: *xi,
        level: k,
        gamma0,
        lambda,
        segment: leaf.clip(0.0, s),
        length: s,
    })
}

/// Pushforward law `f_* m_{x,k} = λ^{-1} m_{f(x),k+1}` at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushforwardCheck {
    pub level: u32,
    /// `m_{x,k}([x, q_k])` and `λ^{-1} m_{f(x),k+1}([f x, q_{k+1}])`.
    pub mass_pushed: f64,
    pub mass_target: f64,
    /// Symmetric Hausdorff distance between `f([x, q_k(x)])` and
    /// `[f x, q_{k+1}(f x)]`.
    pub hausdorff: f64,
}

pub fn mk_pushforward_check(
    f: &DAMap,
    bundles: &Bundles,
    x: &TorusPoint,
    k: u32,
    gamma0: f64,
) -> Result<PushforwardCheck, DisintegrationError> {
    let m = build_mk_measure(f, bundles, x, k, gamma0)?;
    let fx = f.apply(x);
    let m1 = build_mk_measure(f, bundles, &fx, k + 1, gamma0)?;
    let shift = fx.lift() - f.lift_apply(&x.lift());
    let image: Vec<Vector3<f64>> = m.segment.points.iter().map(|p| f.lift_apply(p) + shift).collect();
    let image = LeafCurve::from_points(BundleKind::Center, image);
    Ok(PushforwardCheck {
        level: k,
        mass_pushed: m.mass(),
        mass_target: m1.mass() / m1.lambda,
        hausdorff: hausdorff(&image, &m1.segment),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub point: usize,
    pub level: u32,
    pub length: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioScan {
    pub gamma0: f64,
    pub rows: Vec<RatioRow>,
    /// `max(ratio, 1/ratio)` over the scan.
    pub beta: f64,
    /// Least-squares slope of ratio against level and its standard error.
    pub slope: f64,
    pub slope_stderr: f64,
}

impl RatioScan {
    /// No level trend at `sigmas` standard errors, up to round-off in the
    /// ratios themselves.
    pub fn trend_free(&self, sigmas: f64) -> bool {
        let scale = self.rows.iter().map(|r| r.ratio.abs()).fold(0.0, f64::max);
        self.slope.abs() <= sigmas * self.slope_stderr + TREND_ROUNDOFF * scale
    }
}

pub fn mk_length_ratio_scan(
    f: &DAMap,
    bundles: &Bundles,
    points: &[TorusPoint],
    levels: &[u32],
    gamma0: f64,
) -> Result<RatioScan, DisintegrationError> {
    let jobs: Vec<(usize, u32)> = (0..points.len())
        .flat_map(|i| levels.iter().map(move |k| (i, *k)))
        .collect();
    let rows: Vec<RatioRow> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let m = build_mk_measure(f, bundles, &points[i], k, gamma0)?;
            Ok(RatioRow {
                point: i,
                level: k,
                length: m.length,
                ratio: m.ratio(),
            })
        })
        .collect::<Result<_, DisintegrationError>>()?;
    let beta = rows.iter().map(|r| r.ratio.max(1.0 / r.ratio)).fold(0.0, f64::max);
    let (slope, slope_stderr) = ols_slope(
        &rows.iter().map(|r| r.level as f64).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.ratio).collect::<Vec<_>>(),
    );
    Ok(RatioScan {
        gamma0,
        rows,
        beta,
        slope,
        slope_stderr,
    })
}

/// Slope of the least-squares line through `(x, y)` and its standard error.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = if n > 2.0 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::INFINITY };
    (slope, se)
}

pub const DEFAULT_SEGMENT_LENGTH: f64 = 1e-4;

/// `(1/n) Σ log(l(f(C_j)) / δ)` where `C_j` is the center segment of length
/// `δ` centered at `f^j x`.
pub fn center_exponent_from_mk(
    f: &DAMap,
    bundles: &Bundles,
    x: &TorusPoint,
    n: usize,
    delta: f64,
) -> Result<f64, DisintegrationError> {
    let mut p = *x;
    let mut acc = 0.0;
    for _ in 0..n {
        let seg = integrate_leaf(&bundles.center, f, &p.lift(), 0.5 * delta, 0.5 * delta, delta / 4.0)?;
        let image: Vec<Vector3<f64>> = seg.points.iter().map(|q| f.lift_apply(q)).collect();
        acc += (LeafCurve::from_points(BundleKind::Center, image).end() / (seg.end() - seg.start())).ln();
        p = f.apply(&p);
    }
    Ok(acc / n as f64)
}
