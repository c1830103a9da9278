//! Acceptance run: one line per criterion, non-zero exit if any fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use datorus_cli::output::{RunManifest, MANIFEST_FILE, SUMMARY_FILE};
use datorus_core::cocycle::{exponent_inequality_report, finite_time_exponents, volume_average_exponents};
use datorus_core::conjugacy::{conjugacy_residual, displacement_bound, solve_semiconjugacy};
use datorus_core::damap::{DAMap, Perturbation};
use datorus_core::disintegration::{
    atomic_fixture, cascade_fixture, cascade_masses, center_exponent_from_mk, classify_disintegration,
    estimate_conditionals, mk_length_ratio_scan, mk_pushforward_check, refinement_levels, Thresholds, Verdict,
    DEFAULT_GAMMA0, DEFAULT_SAMPLE_FLOOR, DEFAULT_SEGMENT_LENGTH,
};
use datorus_core::foliation::{build_foliated_box, deviation_from_linear, invariance_residual, BoxShape, BundleKind, Bundles};
use datorus_core::periodic::{linear_periodic_points_exact, periodic_data_constancy, Constancy};
use datorus_core::rng::StageRng;
use datorus_core::torus::{analyze_linear, reference_matrix, IntMatrix3, LinearAnosov, TorusPoint};

type Outcome = Result<String, String>;

fn a0() -> LinearAnosov {
    analyze_linear(&reference_matrix()).unwrap()
}

fn shear(eps: f64) -> DAMap {
    let p = if eps == 0.0 { vec![] } else { vec![Perturbation::shear(0, [0, 1, 0], eps).unwrap()] };
    DAMap::new(a0(), p)
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn det3(m: &[[i64; 3]; 3]) -> i128 {
    let e = |i: usize, j: usize| m[i][j] as i128;
    e(0, 0) * (e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1)) - e(0, 1) * (e(1, 0) * e(2, 2) - e(1, 2) * e(2, 0))
        + e(0, 2) * (e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0))
}

fn power_minus_identity(a: &IntMatrix3, n: u32) -> [[i64; 3]; 3] {
    let mut p = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
    for _ in 0..n {
        let mut q = [[0i64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                q[i][j] = (0..3).map(|k| p[i][k] * a.0[k][j]).sum();
            }
        }
        p = q;
    }
    for (i, row) in p.iter_mut().enumerate() {
        row[i] -= 1;
    }
    p
}

fn linear_exactness() -> Outcome {
    let a = a0();
    let f = DAMap::linear_only(a.clone());
    let lin = a.exponents();
    let est = volume_average_exponents(&f, 64, 1000, 1);
    let exp_err = (0..3).map(|i| (est.mean[i] - lin[i]).abs()).fold(0.0, f64::max);
    ensure(exp_err <= 1e-10, format!("cocycle exponents off by {exp_err:.2e}"))?;

    let rep = periodic_data_constancy(&f, 4, 1e-10).map_err(|e| e.to_string())?;
    let per_err = rep
        .data
        .iter()
        .flat_map(|d| (0..3).map(move |i| (d.exponents[i] - lin[i]).abs()))
        .fold(0.0, f64::max);
    ensure(per_err <= 1e-10, format!("periodic exponents off by {per_err:.2e}"))?;

    let b = Bundles::compute(&f, 8, 50).map_err(|e| e.to_string())?;
    let mut dev: f64 = 0.0;
    for k in [BundleKind::Stable, BundleKind::Center, BundleKind::Unstable] {
        dev = dev.max(deviation_from_linear(b.get(k), &f, &a).map_err(|e| e.to_string())?);
    }
    ensure(dev <= 1e-10, format!("bundle deviation {dev:.2e}"))?;

    let field = solve_semiconjugacy(&f, &a, 16, 1e-12, 100).map_err(|e| e.to_string())?;
    let u = field.sup_displacement();
    ensure(u <= 1e-10, format!("conjugacy displacement {u:.2e}"))?;
    Ok(format!(
        "exponents {:.10} {:.10} {:.10}, err {exp_err:.1e}; {} orbits, err {per_err:.1e}; bundles {dev:.1e}; |u| {u:.1e}",
        est.mean[0],
        est.mean[1],
        est.mean[2],
        rep.data.len()
    ))
}

fn periodic_count_identity() -> Outcome {
    let a = a0();
    let mut counts = Vec::new();
    for n in 1..=4u32 {
        let b = power_minus_identity(a.matrix(), n);
        let det = det3(&b).unsigned_abs();
        // exhaustive: fixed points of Aⁿ lie in (1/d) Z³ with d = |det(Aⁿ - I)|
        let d = det as i64;
        let mut brute = 0u64;
        for z0 in 0..d {
            for z1 in 0..d {
                for z2 in 0..d {
                    let z = [z0, z1, z2];
                    if b.iter().all(|row| (row[0] * z[0] + row[1] * z[1] + row[2] * z[2]).rem_euclid(d) == 0) {
                        brute += 1;
                    }
                }
            }
        }
        let pts = linear_periodic_points_exact(&a, n, u64::MAX).map_err(|e| e.to_string())?;
        let an = a.matrix().checked_pow(n).unwrap();
        let distinct: HashSet<_> = pts.iter().collect();
        ensure(distinct.len() == pts.len(), format!("period {n}: repeated points"))?;
        ensure(pts.iter().all(|p| p.image(&an) == *p), format!("period {n}: non-fixed point"))?;
        ensure(
            brute as u128 == det && pts.len() as u128 == det,
            format!("period {n}: |det| {det}, brute force {brute}, enumerated {}", pts.len()),
        )?;
        counts.push(det);
    }
    Ok(format!("#Fix(A^n), n = 1..4: {counts:?}"))
}

fn exponent_inequalities() -> Outcome {
    let mut parts = Vec::new();
    for eps in [0.01, 0.05] {
        let f = shear(eps);
        let est = volume_average_exponents(&f, 1000, 10_000, 11);
        let rep = exponent_inequality_report(&f, f.linear(), &est).map_err(|e| e.to_string())?;
        let failed: Vec<&str> = rep.checks.iter().filter(|c| c.conditional.is_none() && !c.pass).map(|c| c.name).collect();
        ensure(failed.is_empty(), format!("eps {eps}: failed {failed:?}"))?;
        ensure(
            est.zero_sum_residual <= 1e-3,
            format!("eps {eps}: zero-sum residual {:.2e}", est.zero_sum_residual),
        )?;
        parts.push(format!(
            "eps {eps}: means {:.5} {:.5} {:.5} (se {:.1e}), zero-sum {:.1e}",
            est.mean[0], est.mean[1], est.mean[2], est.stderr[2], est.zero_sum_residual
        ));
    }
    Ok(parts.join("; "))
}

fn conjugacy_residual_check() -> Outcome {
    let mut cs = Vec::new();
    let mut residual = 0.0;
    for eps in [0.01, 0.02, 0.05] {
        let f = shear(eps);
        let field = solve_semiconjugacy(&f, f.linear(), 64, 1e-12, 1000).map_err(|e| e.to_string())?;
        let b = displacement_bound(&field, &f);
        ensure(
            b.sup_u <= b.c_empirical * b.sup_defect * (1.0 + 1e-12) && b.c_empirical <= b.c_theoretical,
            format!("eps {eps}: |u| {}, C_emp {}, C_theory {}", b.sup_u, b.c_empirical, b.c_theoretical),
        )?;
        if eps == 0.05 {
            residual = conjugacy_residual(&field, &f, f.linear(), 10_000, 5).map_err(|e| e.to_string())?.sup;
            ensure(residual <= 1e-5, format!("residual {residual:.2e}"))?;
        }
        cs.push(b.c_empirical);
    }
    let mean = cs.iter().sum::<f64>() / cs.len() as f64;
    let spread = cs.iter().map(|c| (c / mean - 1.0).abs()).fold(0.0, f64::max);
    ensure(spread <= 0.1, format!("C_emp {cs:?} varies by {:.1}%", 100.0 * spread))?;
    Ok(format!(
        "residual {residual:.2e}; C_emp {:.4} {:.4} {:.4} (spread {:.1}%)",
        cs[0],
        cs[1],
        cs[2],
        100.0 * spread
    ))
}

fn bundle_invariance() -> Outcome {
    let mut parts = Vec::new();
    for eps in [0.01, 0.05] {
        let f = shear(eps);
        let b = Bundles::compute(&f, 32, 500).map_err(|e| e.to_string())?;
        let mut worst: f64 = 0.0;
        for k in [BundleKind::Stable, BundleKind::Center, BundleKind::Unstable] {
            worst = worst.max(invariance_residual(b.get(k), &f, 100_000, 3).map_err(|e| e.to_string())?);
        }
        ensure(worst <= 1e-4, format!("eps {eps}: angle residual {worst:.2e}"))?;
        parts.push(format!("eps {eps}: max angle {worst:.1e}"));
    }
    Ok(parts.join("; "))
}

fn disintegration_classifier() -> Outcome {
    let f = DAMap::linear_only(a0());
    let b = Bundles::compute(&f, 4, 50).map_err(|e| e.to_string())?;
    let t = Thresholds::default();
    let mut parts = Vec::new();
    for (i, base) in [[0.3, 0.6, 0.2], [0.71, 0.13, 0.52], [0.05, 0.9, 0.44]].iter().enumerate() {
        let x = TorusPoint::new(base[0], base[1], base[2]).unwrap();
        let fbox = build_foliated_box(&f, &b, &x, BoxShape::default()).map_err(|e| e.to_string())?;
        let h = estimate_conditionals(&fbox, 1_000_000, 64, 20 + i as u64, DEFAULT_SAMPLE_FLOOR).map_err(|e| e.to_string())?;
        let r = classify_disintegration(&refinement_levels(&h, 4), t);
        ensure(r.verdict == Verdict::LebesgueLike, format!("linear box {i}: {:?}", r.verdict))?;
    }
    parts.push("3 linear boxes LEBESGUE_LIKE".to_string());

    let atomic = classify_disintegration(&refinement_levels(&atomic_fixture(16, 64, 10_000), 4), t);
    ensure(atomic.verdict == Verdict::AtomicLike, format!("atomic fixture: {:?}", atomic.verdict))?;

    // a p-cascade of depth 6 has largest bin mass p⁶ and total mass 1
    let p = 0.8;
    let m = cascade_masses(6, p);
    let top = m.iter().cloned().fold(0.0, f64::max);
    ensure((m.iter().sum::<f64>() - 1.0).abs() < 1e-12 && (top - p.powi(6)).abs() < 1e-15, "cascade masses")?;
    let cascade = classify_disintegration(&refinement_levels(&cascade_fixture(16, 6, p, 100_000), 4), t);
    ensure(
        cascade.verdict == Verdict::SingularContinuousLike,
        format!("cascade fixture: {:?}", cascade.verdict),
    )?;
    parts.push("atomic fixture ATOMIC_LIKE, cascade SINGULAR_CONTINUOUS_LIKE".into());
    Ok(parts.join("; "))
}

fn mk_pushforward() -> Outcome {
    let mut parts = Vec::new();
    for eps in [0.0, 0.05] {
        let f = shear(eps);
        let b = Bundles::compute(&f, 32, 500).map_err(|e| e.to_string())?;
        let stage = StageRng::new(7, "acceptance-mk");
        let points: Vec<TorusPoint> = (0..8).map(|i| stage.point(i)).collect();
        let mut worst: f64 = 0.0;
        for x in &points[..3] {
            for k in 0..=6 {
                let c = mk_pushforward_check(&f, &b, x, k, DEFAULT_GAMMA0).map_err(|e| e.to_string())?;
                ensure(
                    (c.mass_pushed - c.mass_target).abs() <= 1e-15 * c.mass_target,
                    format!("eps {eps} k {k}: mass {} vs {}", c.mass_pushed, c.mass_target),
                )?;
                worst = worst.max(c.hausdorff);
            }
        }
        ensure(worst <= 1e-6, format!("eps {eps}: Hausdorff {worst:.2e}"))?;
        let levels: Vec<u32> = (0..=8).collect();
        let scan = mk_length_ratio_scan(&f, &b, &points, &levels, DEFAULT_GAMMA0).map_err(|e| e.to_string())?;
        ensure(scan.beta.is_finite(), format!("eps {eps}: beta {}", scan.beta))?;
        ensure(
            scan.trend_free(3.0),
            format!("eps {eps}: slope {:.2e} +- {:.2e}", scan.slope, scan.slope_stderr),
        )?;
        parts.push(format!(
            "eps {eps}: Hausdorff {worst:.1e}, beta {:.3}, slope {:.1e} +- {:.1e}",
            scan.beta, scan.slope, scan.slope_stderr
        ));
    }
    Ok(parts.join("; "))
}

fn center_exponent() -> Outcome {
    let f = shear(0.05);
    let b = Bundles::compute(&f, 32, 500).map_err(|e| e.to_string())?;
    let x = TorusPoint::new(0.123, 0.456, 0.789).unwrap();
    let mk = center_exponent_from_mk(&f, &b, &x, 1000, DEFAULT_SEGMENT_LENGTH).map_err(|e| e.to_string())?;
    let cocycle = finite_time_exponents(&f, &x, 1000).mid;
    let d = (mk - cocycle).abs();
    ensure(d <= 1e-2, format!("mk {mk:.6} vs cocycle {cocycle:.6}"))?;
    Ok(format!("mk {mk:.6}, cocycle {cocycle:.6}, difference {d:.1e}"))
}

fn periodic_criterion() -> Outcome {
    let lin = periodic_data_constancy(&DAMap::linear_only(a0()), 4, 1e-6).map_err(|e| e.to_string())?;
    ensure(
        lin.verdicts.iter().all(|v| *v == Constancy::Constant)
            && lin.predicts_absolute_continuity
            && lin.predicts_rigidity,
        format!("linear: {:?}", lin.verdicts),
    )?;
    let pert = periodic_data_constancy(&shear(0.05), 4, 1e-6).map_err(|e| e.to_string())?;
    ensure(
        pert.verdicts.contains(&Constancy::Variable) && !pert.predicts_rigidity,
        format!("shear: {:?}", pert.verdicts),
    )?;
    Ok(format!(
        "linear all CONSTANT; shear verdicts {:?}, spreads {:.1e} {:.1e} {:.1e}",
        pert.verdicts, pert.spreads[0], pert.spreads[1], pert.spreads[2]
    ))
}

const SURVEY_CONFIG: &str = "\
[run]
seed = 2024

[perturbation]
kind = shear
target = 0
frequency = 0 1 0
amplitude = 0.05

[exponents]
samples = 200
iterates = 1000

[periodic]
max_period = 3

[conjugacy]
resolution = 16
residual_samples = 10000
fiber_samples = 2000
ratio_samples = 200

[foliation]
resolution = 16
invariance_samples = 10000
growth_points = 20
cells = 4
holonomy_samples = 9

[disintegrate]
samples = 200000
bins = 32
levels = 3
birkhoff_length = 10000

[mk]
max_level = 4
points = 4
pushforward_points = 2
exponent_iterates = 200
";

fn survey(dir: &Path, workers: usize) -> Result<RunManifest, String> {
    let out = dir.join(format!("w{workers}"));
    let run = Command::new(env!("CARGO_BIN_EXE_datorus"))
        .arg("full-survey")
        .arg("--config")
        .arg(dir.join("survey.ini"))
        .arg("--out")
        .arg(&out)
        .arg("--workers")
        .arg(workers.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        run.status.success(),
        format!("full-survey at {workers} workers: {}", String::from_utf8_lossy(&run.stderr)),
    )?;
    RunManifest::read(&out.join(MANIFEST_FILE)).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(dir.path().join("survey.ini"), SURVEY_CONFIG).map_err(|e| e.to_string())?;
    let m1 = survey(dir.path(), 1)?;
    let m8 = survey(dir.path(), 8)?;
    ensure(m1.outputs == m8.outputs, "output inventories differ")?;
    ensure(m1.metrics == m8.metrics, "metrics differ")?;
    for e in &m1.outputs {
        let a = std::fs::read(dir.path().join("w1").join(&e.path)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("w8").join(&e.path)).map_err(|e| e.to_string())?;
        ensure(a == b, format!("{} differs", e.path))?;
    }
    ensure(m1.outputs.iter().any(|e| e.path == SUMMARY_FILE), "summary missing from inventory")?;
    Ok(format!("{} outputs byte-identical at 1 and 8 workers", m1.outputs.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("linear exactness", linear_exactness),
        ("periodic count identity", periodic_count_identity),
        ("exponent inequalities", exponent_inequalities),
        ("conjugacy residual", conjugacy_residual_check),
        ("bundle invariance", bundle_invariance),
        ("disintegration classifier", disintegration_classifier),
        ("mk pushforward law", mk_pushforward),
        ("center exponent", center_exponent),
        ("periodic-data criterion", periodic_criterion),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panic: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {secs:>7.1} s  {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {:>2} FAIL {secs:>7.1} s  {name}: {detail}", i + 1);
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
