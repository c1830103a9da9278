//! Scenario pipelines. Stages run serially, each parallel inside; the
//! certificate is always computed first and gates everything after it.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde_json::{json, Value};

use datorus_core::cocycle::{exponent_inequality_report, finite_time_exponents, volume_average_exponents};
use datorus_core::conjugacy::{
    conjugacy_residual, displacement_bound, fiber_diagnostics, geometric_ratio_check, solve_semiconjugacy,
    DEFAULT_SEPARATIONS,
};
use datorus_core::damap::{verify_partial_hyperbolicity, ConeApertures, DAMap, DamapError, NewtonSettings, Perturbation};
use datorus_core::disintegration::{
    birkhoff_discrepancy, center_exponent_from_mk, check_mk_growth, classify_disintegration, concentration_profile,
    estimate_conditionals, mk_length_ratio_scan, mk_pushforward_check, refinement_levels, Thresholds,
};
use datorus_core::foliation::{
    build_foliated_box, center_holonomy, deviation_from_linear, growth_rate, integrate_leaf, invariance_residual,
    plaque_transversal, BoxShape, BundleKind, Bundles, FoliatedBox, PlaqueKind,
};
use datorus_core::periodic::periodic_data_constancy;
use datorus_core::rng::StageRng;
use datorus_core::torus::{analyze_linear, IntMatrix3, TorusPoint};

use crate::cells;
use crate::config::{ExperimentConfig, PerturbationSpec, Scenario};
use crate::error::CliError;
use crate::output::{Metrics, OutputDir, RunManifest, StageTiming, Table, MANIFEST_SCHEMA, SUMMARY_FILE};

const SLOTS: [&str; 3] = ["low", "mid", "high"];

/// Builds the map, rejecting bad matrices and perturbations as config errors.
pub fn build_map(cfg: &ExperimentConfig) -> Result<DAMap, CliError> {
    let m = IntMatrix3::from_row_major(&cfg.matrix).map_err(|e| CliError::Config(format!("[map] matrix: {e}")))?;
    let linear = analyze_linear(&m).map_err(|e| CliError::Config(format!("[map] matrix: {e}")))?;
    let mut perturbations = Vec::with_capacity(cfg.perturbations.len());
    for p in &cfg.perturbations {
        let built = match p {
            PerturbationSpec::Shear {
                target,
                frequency,
                amplitude,
            } => Perturbation::shear(*target, *frequency, *amplitude),
            PerturbationSpec::Twist {
                frame,
                plane,
                center,
                radius,
                max_angle,
            } => {
                let c = TorusPoint::new(center[0], center[1], center[2])
                    .map_err(|e| CliError::Config(format!("[perturbation] center: {e}")))?;
                Perturbation::twist(Matrix3::from_column_slice(frame), (plane[0], plane[1]), c, *radius, *max_angle)
            }
        };
        perturbations.push(built.map_err(|e| CliError::Config(format!("[perturbation] {e}")))?);
    }
    Ok(DAMap::new(linear, perturbations).with_newton(NewtonSettings {
        tolerance: cfg.newton_tolerance,
        max_iterations: cfg.newton_max_iterations,
    }))
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    f: DAMap,
    out: OutputDir,
    metrics: Metrics,
    timings: Vec<StageTiming>,
    bundles: Option<Bundles>,
    fbox: Option<FoliatedBox>,
}

/// Runs the configured scenario into `out` and writes the summary and the
/// manifest.
pub fn run(cfg: &ExperimentConfig, out: PathBuf, workers: usize) -> Result<RunManifest, CliError> {
    let f = build_map(cfg)?;
    let mut r = Run {
        cfg,
        f,
        out: OutputDir::new(out),
        metrics: Metrics::new(),
        timings: Vec::new(),
        bundles: None,
        fbox: None,
    };
    r.timed("certify", Run::certify)?;
    let stages: &[Scenario] = match cfg.scenario {
        Scenario::FullSurvey => &[
            Scenario::Exponents,
            Scenario::Periodic,
            Scenario::Conjugacy,
            Scenario::Foliation,
            Scenario::Disintegrate,
            Scenario::Mk,
        ],
        Scenario::Certify => &[],
        ref s => std::slice::from_ref(s),
    };
    for s in stages {
        match s {
            Scenario::Exponents => r.timed("exponents", Run::exponents)?,
            Scenario::Periodic => r.timed("periodic", Run::periodic)?,
            Scenario::Conjugacy => r.timed("conjugacy", Run::conjugacy)?,
            Scenario::Foliation => r.timed("foliation", Run::foliation)?,
            Scenario::Disintegrate => r.timed("disintegrate", Run::disintegrate)?,
            Scenario::Mk => r.timed("mk", Run::mk)?,
            Scenario::Certify | Scenario::FullSurvey => unreachable!(),
        }
    }
    r.out.json(SUMMARY_FILE, &r.metrics)?;
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario: cfg.scenario.name().into(),
        seed: cfg.seed,
        workers,
        config: serde_json::to_value(cfg).map_err(|e| CliError::Io(e.to_string()))?,
        timings: r.timings,
        outputs: r.out.entries().to_vec(),
        metrics: r.metrics,
    };
    r.out.manifest(&manifest)?;
    Ok(manifest)
}

fn point_cells(x: &TorusPoint) -> Vec<String> {
    x.coords().iter().map(|c| crate::output::fmt_f64(*c)).collect()
}

impl<'a> Run<'a> {
    fn timed(&mut self, stage: &str, body: fn(&mut Self) -> Result<(), CliError>) -> Result<(), CliError> {
        let t = Instant::now();
        body(self)?;
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn metric(&mut self, key: impl Into<String>, v: impl Into<Value>) {
        self.metrics.insert(key.into(), v.into());
    }

    fn certify(&mut self) -> Result<(), CliError> {
        let c = &self.cfg.certify;
        let ap = ConeApertures {
            unstable: c.aperture_unstable,
            center_unstable: c.aperture_center_unstable,
            stable: c.aperture_stable,
            center_stable: c.aperture_center_stable,
        };
        let cert = verify_partial_hyperbolicity(&self.f, c.iterates, c.resolution, &ap).map_err(|e| match e {
            DamapError::CertificationFailed { .. } => CliError::Certification(e.to_string()),
            other => CliError::numerical("certify", other),
        })?;
        if !cert.verified {
            return Err(CliError::Certification("certificate not verified".into()));
        }
        self.out.json("certificate.json", &cert)?;
        self.metric("certify.verified", cert.verified);
        self.metric("certify.splitting", format!("{:?}", cert.splitting));
        for (name, r) in [
            ("stable", cert.stable_rate),
            ("center", cert.center_rate),
            ("unstable", cert.unstable_rate),
        ] {
            self.metric(format!("certify.{name}_rate_min"), r.min);
            self.metric(format!("certify.{name}_rate_max"), r.max);
        }
        Ok(())
    }

    fn exponents(&mut self) -> Result<(), CliError> {
        let p = &self.cfg.exponents;
        let est = volume_average_exponents(&self.f, p.samples, p.iterates, self.cfg.seed);
        let mut t = Table::new(&[
            "seed",
            "samples",
            "n",
            "mean_low",
            "mean_mid",
            "mean_high",
            "stderr_low",
            "stderr_mid",
            "stderr_high",
            "zero_sum_residual",
        ]);
        t.row(cells![
            est.seed,
            est.samples,
            est.n,
            est.mean[0],
            est.mean[1],
            est.mean[2],
            est.stderr[0],
            est.stderr[1],
            est.stderr[2],
            est.zero_sum_residual,
        ]);
        self.out.csv("exponents.csv", &t)?;

        let report =
            exponent_inequality_report(&self.f, self.f.linear(), &est).map_err(|e| CliError::numerical("exponents", e))?;
        let mut t = Table::new(&["name", "statement", "estimate", "bound", "stderr", "pass", "conditional"]);
        for c in &report.checks {
            t.row(cells![c.name, c.statement.as_str(), c.estimate, c.bound, c.stderr, c.pass, c.conditional]);
        }
        self.out.csv("inequalities.csv", &t)?;

        let lin = self.f.linear().exponents();
        for i in 0..3 {
            self.metric(format!("exponents.mean_{}", SLOTS[i]), est.mean[i]);
            self.metric(format!("exponents.stderr_{}", SLOTS[i]), est.stderr[i]);
            self.metric(format!("exponents.linear_{}", SLOTS[i]), lin[i]);
        }
        self.metric("exponents.zero_sum_residual", est.zero_sum_residual);
        self.metric("exponents.inequalities_pass", report.pass());
        Ok(())
    }

    fn periodic(&mut self) -> Result<(), CliError> {
        let p = &self.cfg.periodic;
        let rep = periodic_data_constancy(&self.f, p.max_period, p.tolerance).map_err(|e| CliError::numerical("periodic", e))?;
        let mut t = Table::new(&[
            "period",
            "minimal_period",
            "x",
            "y",
            "z",
            "exponent_low",
            "exponent_mid",
            "exponent_high",
            "log_det",
            "residual",
        ]);
        for d in &rep.data {
            let mut row = cells![d.orbit.period, d.orbit.minimal_period];
            row.extend(point_cells(&d.orbit.point));
            row.extend(cells![d.exponents[0], d.exponents[1], d.exponents[2], d.log_det, d.orbit.residual]);
            t.row(row);
        }
        self.out.csv("periodic.csv", &t)?;
        self.metric("periodic.orbits", rep.data.len());
        for i in 0..3 {
            self.metric(format!("periodic.spread_{}", SLOTS[i]), rep.spreads[i]);
            self.metric(
                format!("periodic.verdict_{}", SLOTS[i]),
                serde_json::to_value(rep.verdicts[i]).expect("verdict serializes"),
            );
        }
        self.metric("periodic.predicts_absolute_continuity", rep.predicts_absolute_continuity);
        self.metric("periodic.predicts_rigidity", rep.predicts_rigidity);
        Ok(())
    }

    fn conjugacy(&mut self) -> Result<(), CliError> {
        let p = &self.cfg.conjugacy;
        let seed = self.cfg.seed;
        let f = &self.f;
        let a = f.linear();
        let err = |e: datorus_core::conjugacy::ConjugacyError| CliError::numerical("conjugacy", e);
        let field = solve_semiconjugacy(f, a, p.resolution, p.tolerance, p.max_iterations).map_err(err)?;
        let residual = conjugacy_residual(&field, f, a, p.residual_samples, seed).map_err(err)?;
        let bound = displacement_bound(&field, f);
        let fiber = fiber_diagnostics(&field, f, p.fiber_samples, p.fiber_threshold, seed).map_err(err)?;
        let ratio = geometric_ratio_check(
            f,
            a,
            p.ratio_iterate,
            p.ratio_bound,
            p.ratio_direction,
            &DEFAULT_SEPARATIONS,
            p.ratio_samples,
            p.ratio_min_denominator,
            seed,
        );

        let mut bytes = Vec::new();
        field.to_file().write_to(&mut bytes)?;
        self.out.bytes("conjugacy.field", &bytes)?;
        let it = field.iterations();
        let sidecar: Vec<(&str, String)> = vec![
            ("resolution", field.resolution().to_string()),
            ("iterations", format!("{} {} {}", it[0], it[1], it[2])),
            ("residual_sup", crate::output::fmt_f64(residual.sup)),
            ("residual_mean", crate::output::fmt_f64(residual.mean)),
            ("residual_samples", residual.samples.to_string()),
            ("sup_displacement", crate::output::fmt_f64(bound.sup_u)),
            ("sup_defect", crate::output::fmt_f64(bound.sup_defect)),
            ("c_empirical", crate::output::fmt_f64(bound.c_empirical)),
            ("c_theoretical", crate::output::fmt_f64(bound.c_theoretical)),
        ];
        let text: String = sidecar.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        self.out.bytes("conjugacy.txt", text.as_bytes())?;

        let mut t = Table::new(&["separation", "min_ratio", "max_ratio", "used", "excluded", "within"]);
        for r in &ratio.rows {
            t.row(cells![r.separation, r.min_ratio, r.max_ratio, r.used, r.excluded, r.within]);
        }
        self.out.csv("conjugacy_ratio.csv", &t)?;

        self.metric("conjugacy.residual_sup", residual.sup);
        self.metric("conjugacy.residual_mean", residual.mean);
        self.metric("conjugacy.sup_displacement", bound.sup_u);
        self.metric("conjugacy.sup_defect", bound.sup_defect);
        self.metric("conjugacy.c_empirical", bound.c_empirical);
        self.metric("conjugacy.c_theoretical", bound.c_theoretical);
        self.metric("conjugacy.fiber_close_pairs", fiber.close_pairs);
        self.metric("conjugacy.fiber_defect", fiber.defect);
        self.metric("conjugacy.fiber_center_alignment", fiber.defect_center_alignment);
        self.metric("conjugacy.ratio_m", ratio.m.map_or(Value::Null, |m| json!(m)));
        Ok(())
    }

    fn ensure_bundles(&mut self) -> Result<(), CliError> {
        if self.bundles.is_none() {
            let p = &self.cfg.foliation;
            let b = Bundles::compute(&self.f, p.resolution, p.max_iterations)
                .map_err(|e| CliError::numerical("foliation", e))?;
            self.bundles = Some(b);
        }
        Ok(())
    }

    fn base(&self) -> TorusPoint {
        let c = self.cfg.foliation.box_base;
        TorusPoint::new(c[0], c[1], c[2]).expect("validated box base")
    }

    fn shape(&self) -> BoxShape {
        let p = &self.cfg.foliation;
        BoxShape {
            stable_half: p.transversal_half,
            unstable_half: p.transversal_half,
            leaf_half: p.leaf_half,
            cells: p.cells,
            leaf_spacing: p.leaf_spacing,
            step: p.step,
        }
    }

    fn ensure_box(&mut self) -> Result<(), CliError> {
        self.ensure_bundles()?;
        if self.fbox.is_none() {
            let b = build_foliated_box(&self.f, self.bundles.as_ref().unwrap(), &self.base(), self.shape())
                .map_err(|e| CliError::numerical("foliation", e))?;
            self.fbox = Some(b);
        }
        Ok(())
    }

    fn foliation(&mut self) -> Result<(), CliError> {
        self.ensure_bundles()?;
        self.ensure_box()?;
        let p = &self.cfg.foliation;
        let seed = self.cfg.seed;
        let f = &self.f;
        let b = self.bundles.as_ref().unwrap();
        let map_err = |e: DamapError| CliError::numerical("foliation", e);
        let fol_err = |e: datorus_core::foliation::FoliationError| CliError::numerical("foliation", e);

        let stage = StageRng::new(seed, "bundle-growth");
        let growth_points: Vec<TorusPoint> = (0..p.growth_points as u64).map(|i| stage.point(i)).collect();
        let mut t = Table::new(&[
            "bundle",
            "label",
            "iterations",
            "refine_depth",
            "invariance_residual",
            "deviation_from_linear",
            "growth_rate_mean",
        ]);
        let mut files = Vec::new();
        let mut metrics = Vec::new();
        for kind in [BundleKind::Stable, BundleKind::Center, BundleKind::Unstable] {
            let field = b.get(kind);
            let inv = invariance_residual(field, f, p.invariance_samples, seed).map_err(map_err)?;
            let dev = deviation_from_linear(field, f, f.linear()).map_err(map_err)?;
            let rates: Vec<f64> = growth_points
                .par_iter()
                .map(|x| growth_rate(field, f, x, p.growth_iterates))
                .collect::<Result<_, _>>()
                .map_err(map_err)?;
            let growth = rates.iter().sum::<f64>() / rates.len() as f64;
            let join = |v: Vec<usize>| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
            let name = format!("{kind:?}").to_lowercase();
            t.row(cells![
                name.as_str(),
                field.label(),
                join(field.iterations()),
                join(field.refine_depth()),
                inv,
                dev,
                growth
            ]);
            let mut bytes = Vec::new();
            field.to_file().write_to(&mut bytes)?;
            files.push((format!("bundle_{name}.field"), bytes));
            metrics.push((format!("foliation.{name}_invariance_residual"), inv));
            metrics.push((format!("foliation.{name}_deviation"), dev));
            metrics.push((format!("foliation.{name}_growth_rate"), growth));
        }

        let base = self.base();
        let mut leaves = Table::new(&["bundle", "t", "x", "y", "z"]);
        let mut alignment: f64 = 0.0;
        for kind in [BundleKind::Stable, BundleKind::Center, BundleKind::Unstable] {
            let half = if kind == BundleKind::Center { p.leaf_half } else { p.transversal_half };
            let leaf = integrate_leaf(b.get(kind), f, &base.lift(), half, half, p.step).map_err(fol_err)?;
            alignment = alignment.max(leaf.max_alignment_error(b.get(kind), f).map_err(map_err)?);
            let name = format!("{kind:?}").to_lowercase();
            for (s, x) in leaf.params.iter().zip(&leaf.points) {
                leaves.row(cells![name.as_str(), *s, x[0], x[1], x[2]]);
            }
        }

        let mut hol = Table::new(&["plaque", "source_param", "target_param", "leaf_length"]);
        let mut hol_metrics = Vec::new();
        for (plaque, name) in [(PlaqueKind::CenterStable, "cs"), (PlaqueKind::CenterUnstable, "cu")] {
            let src = plaque_transversal(f, b, plaque, &base, 0.0, p.transversal_half, p.step).map_err(fol_err)?;
            let dst = plaque_transversal(f, b, plaque, &base, p.holonomy_offset, p.transversal_half, p.step)
                .map_err(fol_err)?;
            let h = center_holonomy(f, b, plaque, &src, &dst, p.holonomy_samples, 4.0 * p.holonomy_offset, p.step)
                .map_err(fol_err)?;
            for i in 0..h.source_params.len() {
                hol.row(cells![name, h.source_params[i], h.target_params[i], h.leaf_lengths[i]]);
            }
            hol_metrics.push((format!("foliation.holonomy_{name}_lipschitz"), json!(h.lipschitz)));
            hol_metrics.push((format!("foliation.holonomy_{name}_inverse_lipschitz"), json!(h.inverse_lipschitz)));
            hol_metrics.push((format!("foliation.holonomy_{name}_monotone"), json!(h.monotone)));
        }
        let cells_built = self.fbox.as_ref().unwrap().transversal_cells();

        self.out.csv("foliation.csv", &t)?;
        for (name, bytes) in files {
            self.out.bytes(&name, &bytes)?;
        }
        self.out.csv("leaves.csv", &leaves)?;
        self.out.csv("holonomy.csv", &hol)?;
        for (k, v) in metrics {
            self.metric(k, v);
        }
        for (k, v) in hol_metrics {
            self.metric(k, v);
        }
        self.metric("foliation.leaf_alignment_error", alignment);
        self.metric("foliation.box_transversal_cells", cells_built);
        Ok(())
    }

    fn disintegrate(&mut self) -> Result<(), CliError> {
        self.ensure_box()?;
        let p = &self.cfg.disintegrate;
        let seed = self.cfg.seed;
        let fbox = self.fbox.as_ref().unwrap();
        let err = |e: datorus_core::disintegration::DisintegrationError| CliError::numerical("disintegrate", e);
        let hists = estimate_conditionals(fbox, p.samples, p.bins, seed, p.sample_floor).map_err(err)?;
        let thresholds = Thresholds {
            alpha: p.alpha,
            atom: p.atom_threshold,
            reject_fraction: p.reject_fraction,
            singular_decay: p.singular_decay,
        };
        let levels = refinement_levels(&hists, p.levels);
        let report = classify_disintegration(&levels, thresholds);
        let profile =
            concentration_profile(fbox, &p.concentration_lengths, p.samples, p.bins, seed).map_err(err)?;
        let birkhoff = birkhoff_discrepancy(&self.f, None, p.birkhoff_length, p.birkhoff_characters, seed);

        let mut t = Table::new(&["cell_p", "cell_q", "bin", "t_lo", "t_hi", "mass", "samples"]);
        for h in &hists {
            let masses = h.masses().unwrap_or_else(|| vec![0.0; h.bins()]);
            let width = 2.0 * h.leaf_half / h.bins() as f64;
            for (k, m) in masses.iter().enumerate() {
                let lo = -h.leaf_half + k as f64 * width;
                t.row(cells![h.cell.0, h.cell.1, k, lo, lo + width, *m, h.samples]);
            }
        }
        self.out.csv("conditionals.csv", &t)?;

        let mut t = Table::new(&[
            "bins",
            "cells",
            "ks_critical",
            "ks_max",
            "ks_score_max",
            "ks_reject_fraction",
            "max_bin_mean",
            "max_bin_max",
            "top1_mean",
            "top5_mean",
        ]);
        for l in &report.levels {
            t.row(cells![
                l.bins,
                l.cells,
                l.ks_critical,
                l.ks_max,
                l.ks_score_max,
                l.ks_reject_fraction,
                l.max_bin_mean,
                l.max_bin_max,
                l.top1_mean,
                l.top5_mean
            ]);
        }
        self.out.csv("disintegration_levels.csv", &t)?;
        self.out.json(
            "disintegration.json",
            &json!({
                "verdict": report.verdict,
                "levels": report.levels,
                "thresholds": report.thresholds,
                "seed": seed,
                "samples": p.samples,
                "bins": p.bins,
            }),
        )?;

        let mut t = Table::new(&["length", "fraction", "stderr"]);
        for i in 0..profile.lengths.len() {
            t.row(cells![profile.lengths[i], profile.fractions[i], profile.stderr[i]]);
        }
        self.out.csv("concentration.csv", &t)?;

        let mut t = Table::new(&["k1", "k2", "k3", "average"]);
        for (k, v) in &birkhoff.characters {
            t.row(cells![k[0], k[1], k[2], *v]);
        }
        self.out.csv("birkhoff.csv", &t)?;

        self.metric("disintegrate.verdict", serde_json::to_value(report.verdict).expect("verdict serializes"));
        if let Some(finest) = report.levels.first() {
            self.metric("disintegrate.ks_reject_fraction", finest.ks_reject_fraction);
            self.metric("disintegrate.max_bin_mean", finest.max_bin_mean);
        }
        if let Some(&last) = profile.fractions.last() {
            self.metric("disintegrate.concentration_last", last);
        }
        self.metric("disintegrate.birkhoff_discrepancy", birkhoff.discrepancy);
        self.metric("disintegrate.birkhoff_non_generic", birkhoff.non_generic);
        Ok(())
    }

    fn mk(&mut self) -> Result<(), CliError> {
        self.ensure_bundles()?;
        let p = &self.cfg.mk;
        let f = &self.f;
        let b = self.bundles.as_ref().unwrap();
        let err = |e: datorus_core::disintegration::DisintegrationError| CliError::numerical("mk", e);
        let stage = StageRng::new(self.cfg.seed, "mk");
        let points: Vec<TorusPoint> = (0..p.points as u64).map(|i| stage.point(i)).collect();
        let growth = check_mk_growth(f, b, &points, p.gamma0).map_err(err)?;
        let levels: Vec<u32> = (0..=p.max_level).collect();
        let scan = mk_length_ratio_scan(f, b, &points, &levels, p.gamma0).map_err(err)?;

        let jobs: Vec<(usize, u32)> = (0..p.pushforward_points.min(points.len()))
            .flat_map(|i| levels.iter().map(move |&k| (i, k)))
            .collect();
        let pushed = jobs
            .par_iter()
            .map(|&(i, k)| mk_pushforward_check(f, b, &points[i], k, p.gamma0))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;

        let x0 = points[0];
        let mk_exp = center_exponent_from_mk(f, b, &x0, p.exponent_iterates, p.segment_length).map_err(err)?;
        let cocycle_exp = finite_time_exponents(f, &x0, p.exponent_iterates).mid;

        let mut t = Table::new(&["point", "level", "length", "ratio"]);
        for r in &scan.rows {
            t.row(cells![r.point, r.level, r.length, r.ratio]);
        }
        self.out.csv("mk_ratio.csv", &t)?;
        let mut t = Table::new(&["point", "level", "mass_pushed", "mass_target", "hausdorff"]);
        let mut worst: f64 = 0.0;
        let mut mass_gap: f64 = 0.0;
        for (&(i, _), c) in jobs.iter().zip(&pushed) {
            worst = worst.max(c.hausdorff);
            mass_gap = mass_gap.max((c.mass_pushed - c.mass_target).abs());
            t.row(cells![i, c.level, c.mass_pushed, c.mass_target, c.hausdorff]);
        }
        self.out.csv("mk_pushforward.csv", &t)?;
        let mut t = Table::new(&["x", "y", "z", "n", "segment_length", "mk_exponent", "cocycle_exponent", "difference"]);
        let mut row = point_cells(&x0);
        row.extend(cells![p.exponent_iterates, p.segment_length, mk_exp, cocycle_exp, mk_exp - cocycle_exp]);
        t.row(row);
        self.out.csv("mk_exponent.csv", &t)?;

        self.metric("mk.growth_factor", growth);
        self.metric("mk.beta", scan.beta);
        self.metric("mk.slope", scan.slope);
        self.metric("mk.slope_stderr", scan.slope_stderr);
        self.metric("mk.trend_free", scan.trend_free(3.0));
        self.metric("mk.pushforward_hausdorff_max", worst);
        self.metric("mk.pushforward_mass_gap", mass_gap);
        self.metric("mk.center_exponent", mk_exp);
        self.metric("mk.cocycle_center_exponent", cocycle_exp);
        Ok(())
    }
}
