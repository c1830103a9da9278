//! Experiment configuration: INI-style `key = value` lines under bracketed
//! section headers. Every key is validated at load and unknown sections or
//! keys are rejected.
//!
//! ```ini
//! [run]
//! seed = 7
//!
//! [map]
//! matrix = 3 2 1 2 2 1 1 1 1
//!
//! [perturbation]
//! kind = shear
//! target = 0
//! frequency = 0 1 0
//! amplitude = 0.05
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::{Ini, Properties};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Certify,
    Exponents,
    Periodic,
    Conjugacy,
    Foliation,
    Disintegrate,
    Mk,
    FullSurvey,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::Certify,
        Scenario::Exponents,
        Scenario::Periodic,
        Scenario::Conjugacy,
        Scenario::Foliation,
        Scenario::Disintegrate,
        Scenario::Mk,
        Scenario::FullSurvey,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Certify => "certify",
            Scenario::Exponents => "exponents",
            Scenario::Periodic => "periodic",
            Scenario::Conjugacy => "conjugacy",
            Scenario::Foliation => "foliation",
            Scenario::Disintegrate => "disintegrate",
            Scenario::Mk => "mk",
            Scenario::FullSurvey => "full-survey",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PerturbationSpec {
    Shear {
        target: usize,
        frequency: [i64; 3],
        amplitude: f64,
    },
    Twist {
        /// Frame columns, column-major.
        frame: [f64; 9],
        plane: [usize; 2],
        center: [f64; 3],
        radius: f64,
        max_angle: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyParams {
    pub iterates: usize,
    pub resolution: usize,
    pub aperture_unstable: f64,
    pub aperture_center_unstable: f64,
    pub aperture_stable: f64,
    pub aperture_center_stable: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentParams {
    pub samples: usize,
    pub iterates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicParams {
    pub max_period: u32,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugacyParams {
    pub resolution: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub residual_samples: usize,
    pub fiber_samples: usize,
    pub fiber_threshold: f64,
    pub ratio_iterate: u32,
    pub ratio_bound: f64,
    pub ratio_direction: usize,
    pub ratio_samples: usize,
    pub ratio_min_denominator: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoliationParams {
    pub resolution: usize,
    pub max_iterations: usize,
    pub invariance_samples: usize,
    pub growth_points: usize,
    pub growth_iterates: usize,
    pub box_base: [f64; 3],
    pub leaf_half: f64,
    pub transversal_half: f64,
    pub cells: usize,
    pub leaf_spacing: f64,
    pub step: f64,
    pub holonomy_samples: usize,
    pub holonomy_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisintegrateParams {
    pub samples: usize,
    pub bins: usize,
    pub levels: usize,
    pub alpha: f64,
    pub atom_threshold: f64,
    pub reject_fraction: f64,
    pub singular_decay: f64,
    pub sample_floor: u64,
    pub concentration_lengths: Vec<f64>,
    pub birkhoff_length: usize,
    pub birkhoff_characters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MkParams {
    pub gamma0: f64,
    pub max_level: u32,
    pub points: usize,
    pub pushforward_points: usize,
    pub exponent_iterates: usize,
    pub segment_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub matrix: [i64; 9],
    pub newton_tolerance: f64,
    pub newton_max_iterations: usize,
    pub perturbations: Vec<PerturbationSpec>,
    pub certify: CertifyParams,
    pub exponents: ExponentParams,
    pub periodic: PeriodicParams,
    pub conjugacy: ConjugacyParams,
    pub foliation: FoliationParams,
    pub disintegrate: DisintegrateParams,
    pub mk: MkParams,
}

const SECTIONS: [&str; 10] = [
    "run",
    "map",
    "perturbation",
    "certify",
    "exponents",
    "periodic",
    "conjugacy",
    "foliation",
    "disintegrate",
    "mk",
];

fn bad(section: &str, key: &str, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("[{section}] {key}: {msg}"))
}

/// Typed view of one section that remembers which keys were read.
struct Section<'a> {
    name: &'static str,
    props: Option<&'a Properties>,
    used: BTreeSet<&'static str>,
}

trait Value: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
        }
    )*};
}
scalar_value!(u32, u64, usize, i64);

impl Value for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("not a finite number".into())
        }
    }
}

impl Value for String {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(s.to_string())
    }
}

impl<T: Value> Value for Vec<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(T::parse_value)
            .collect()
    }
}

impl<T: Value + Copy + Default, const N: usize> Value for [T; N] {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v = Vec::<T>::parse_value(s)?;
        if v.len() != N {
            return Err(format!("expected {N} values, got {}", v.len()));
        }
        let mut out = [T::default(); N];
        out.copy_from_slice(&v);
        Ok(out)
    }
}

impl<'a> Section<'a> {
    fn new(name: &'static str, props: Option<&'a Properties>) -> Self {
        Section {
            name,
            props,
            used: BTreeSet::new(),
        }
    }

    fn raw(&mut self, key: &'static str) -> Result<Option<&'a str>, CliError> {
        self.used.insert(key);
        let Some(p) = self.props else { return Ok(None) };
        let mut all = p.get_all(key);
        let first = all.next();
        if all.next().is_some() {
            return Err(bad(self.name, key, "given more than once"));
        }
        Ok(first)
    }

    fn opt<T: Value>(&mut self, key: &'static str) -> Result<Option<T>, CliError> {
        match self.raw(key)? {
            None => Ok(None),
            Some(s) => T::parse_value(s.trim()).map(Some).map_err(|e| bad(self.name, key, e)),
        }
    }

    fn get<T: Value>(&mut self, key: &'static str, default: T) -> Result<T, CliError> {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn req<T: Value>(&mut self, key: &'static str) -> Result<T, CliError> {
        self.opt(key)?.ok_or_else(|| bad(self.name, key, "required"))
    }

    fn positive<T: Value + PartialOrd + Default + Copy>(&mut self, key: &'static str, default: T) -> Result<T, CliError> {
        let v = self.get(key, default)?;
        if v > T::default() {
            Ok(v)
        } else {
            Err(bad(self.name, key, "must be positive"))
        }
    }

    fn in_range(&mut self, key: &'static str, default: f64, lo: f64, hi: f64) -> Result<f64, CliError> {
        let v = self.get(key, default)?;
        if v > lo && v < hi {
            Ok(v)
        } else {
            Err(bad(self.name, key, format!("must lie in ({lo}, {hi})")))
        }
    }

    fn finish(self) -> Result<(), CliError> {
        if let Some(p) = self.props {
            for (k, _) in p.iter() {
                if !self.used.contains(k) {
                    return Err(bad(self.name, k, "unknown key"));
                }
            }
        }
        Ok(())
    }
}

fn single<'a>(ini: &'a Ini, name: &'static str) -> Result<Option<&'a Properties>, CliError> {
    let mut all = ini.section_all(Some(name));
    let first = all.next();
    if all.next().is_some() {
        return Err(CliError::Config(format!("section [{name}] given more than once")));
    }
    Ok(first)
}

impl ExperimentConfig {
    pub fn from_file(path: &Path, scenario: Scenario) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, scenario)
    }

    /// Defaults for every section, as if the config file were empty.
    pub fn defaults(scenario: Scenario) -> Self {
        Self::parse("", scenario).expect("empty config is valid")
    }

    pub fn parse(text: &str, scenario: Scenario) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for name in ini.sections() {
            match name {
                None => {
                    if !ini.general_section().is_empty() {
                        return Err(CliError::Config("keys outside any section".into()));
                    }
                }
                Some(n) if SECTIONS.contains(&n) => {}
                Some(n) => return Err(CliError::Config(format!("unknown section [{n}]"))),
            }
        }

        let mut s = Section::new("run", single(&ini, "run")?);
        let seed = s.get("seed", 0u64)?;
        let out = s.opt::<String>("out")?.map(PathBuf::from);
        let workers = s.opt::<usize>("workers")?;
        if workers == Some(0) {
            return Err(bad("run", "workers", "must be positive"));
        }
        s.finish()?;

        let mut s = Section::new("map", single(&ini, "map")?);
        let matrix = s.get("matrix", [3i64, 2, 1, 2, 2, 1, 1, 1, 1])?;
        let newton_tolerance = s.positive("newton_tolerance", 1e-13)?;
        let newton_max_iterations = s.positive("newton_max_iterations", 60usize)?;
        s.finish()?;

        let mut perturbations = Vec::new();
        for props in ini.section_all(Some("perturbation")) {
            let mut s = Section::new("perturbation", Some(props));
            let kind: String = s.req("kind")?;
            let spec = match kind.as_str() {
                "shear" => {
                    let target: usize = s.req("target")?;
                    if target > 2 {
                        return Err(bad("perturbation", "target", "must be 0, 1 or 2"));
                    }
                    PerturbationSpec::Shear {
                        target,
                        frequency: s.req("frequency")?,
                        amplitude: s.req("amplitude")?,
                    }
                }
                "twist" => PerturbationSpec::Twist {
                    frame: s.get("frame", [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])?,
                    plane: s.req("plane")?,
                    center: s.req("center")?,
                    radius: s.positive("radius", 0.0)?,
                    max_angle: s.req("max_angle")?,
                },
                other => return Err(bad("perturbation", "kind", format!("unknown kind {other:?}"))),
            };
            s.finish()?;
            perturbations.push(spec);
        }

        let mut s = Section::new("certify", single(&ini, "certify")?);
        let certify = CertifyParams {
            iterates: s.positive("iterates", 4)?,
            resolution: s.positive("resolution", 6)?,
            aperture_unstable: s.positive("aperture_unstable", 0.5)?,
            aperture_center_unstable: s.positive("aperture_center_unstable", 0.5)?,
            aperture_stable: s.positive("aperture_stable", 0.5)?,
            aperture_center_stable: s.positive("aperture_center_stable", 0.5)?,
        };
        s.finish()?;

        let mut s = Section::new("exponents", single(&ini, "exponents")?);
        let exponents = ExponentParams {
            samples: s.positive("samples", 1000)?,
            iterates: s.positive("iterates", 10_000)?,
        };
        s.finish()?;

        let mut s = Section::new("periodic", single(&ini, "periodic")?);
        let periodic = PeriodicParams {
            max_period: s.positive("max_period", 4)?,
            tolerance: s.positive("tolerance", 1e-6)?,
        };
        s.finish()?;

        let mut s = Section::new("conjugacy", single(&ini, "conjugacy")?);
        let conjugacy = ConjugacyParams {
            resolution: s.positive("resolution", 64)?,
            tolerance: s.positive("tolerance", 1e-12)?,
            max_iterations: s.positive("max_iterations", 1000)?,
            residual_samples: s.positive("residual_samples", 100_000)?,
            fiber_samples: s.positive("fiber_samples", 10_000)?,
            fiber_threshold: s.positive("fiber_threshold", 1e-3)?,
            ratio_iterate: s.positive("ratio_iterate", 5)?,
            ratio_bound: s.in_range("ratio_bound", 2.0, 1.0, f64::INFINITY)?,
            ratio_direction: s.get("ratio_direction", 1)?,
            ratio_samples: s.positive("ratio_samples", 1000)?,
            ratio_min_denominator: s.positive("ratio_min_denominator", 1.0)?,
        };
        if conjugacy.ratio_direction > 2 {
            return Err(bad("conjugacy", "ratio_direction", "must be 0, 1 or 2"));
        }
        s.finish()?;

        let mut s = Section::new("foliation", single(&ini, "foliation")?);
        let foliation = FoliationParams {
            resolution: s.positive("resolution", 32)?,
            max_iterations: s.positive("max_iterations", 500)?,
            invariance_samples: s.positive("invariance_samples", 100_000)?,
            growth_points: s.positive("growth_points", 100)?,
            growth_iterates: s.positive("growth_iterates", 20)?,
            box_base: s.get("box_base", [0.3, 0.6, 0.2])?,
            leaf_half: s.in_range("leaf_half", 0.2, 0.0, 0.5)?,
            transversal_half: s.in_range("transversal_half", 0.1, 0.0, 0.5)?,
            cells: s.positive("cells", 8)?,
            leaf_spacing: s.positive("leaf_spacing", 0.01)?,
            step: s.positive("step", 1e-3)?,
            holonomy_samples: s.positive("holonomy_samples", 21)?,
            holonomy_offset: s.in_range("holonomy_offset", 0.1, 0.0, 0.5)?,
        };
        if foliation.box_base.iter().any(|c| !(0.0..1.0).contains(c)) {
            return Err(bad("foliation", "box_base", "coordinates must lie in [0, 1)"));
        }
        if foliation.holonomy_samples < 2 {
            return Err(bad("foliation", "holonomy_samples", "must be at least 2"));
        }
        s.finish()?;

        let mut s = Section::new("disintegrate", single(&ini, "disintegrate")?);
        let disintegrate = DisintegrateParams {
            samples: s.positive("samples", 1_000_000)?,
            bins: s.positive("bins", 64)?,
            levels: s.positive("levels", 4)?,
            alpha: s.in_range("alpha", 0.05, 0.0, 1.0)?,
            atom_threshold: s.in_range("atom_threshold", 0.5, 0.0, 1.0)?,
            reject_fraction: s.in_range("reject_fraction", 0.5, 0.0, 1.0)?,
            singular_decay: s.in_range("singular_decay", 0.6, 0.0, 1.0)?,
            sample_floor: s.positive("sample_floor", 100)?,
            concentration_lengths: s.get("concentration_lengths", vec![0.04, 0.08, 0.12, 0.16, 0.24, 0.32, 0.4])?,
            birkhoff_length: s.positive("birkhoff_length", 100_000)?,
            birkhoff_characters: s.positive("birkhoff_characters", 20)?,
        };
        if !(2..=16).contains(&disintegrate.levels) {
            return Err(bad("disintegrate", "levels", "must lie in 2..=16"));
        }
        if disintegrate.bins % (1 << (disintegrate.levels - 1)) != 0 {
            return Err(bad("disintegrate", "bins", "must be divisible by 2^(levels - 1)"));
        }
        if disintegrate.concentration_lengths.iter().any(|l| *l <= 0.0) {
            return Err(bad("disintegrate", "concentration_lengths", "must be positive"));
        }
        s.finish()?;

        let mut s = Section::new("mk", single(&ini, "mk")?);
        let mk = MkParams {
            gamma0: s.positive("gamma0", 4.0 * foliation.leaf_half)?,
            max_level: s.get("max_level", 6)?,
            points: s.positive("points", 8)?,
            pushforward_points: s.positive("pushforward_points", 3)?,
            exponent_iterates: s.positive("exponent_iterates", 1000)?,
            segment_length: s.positive("segment_length", 1e-4)?,
        };
        s.finish()?;

        Ok(ExperimentConfig {
            scenario,
            seed,
            out,
            workers,
            matrix,
            newton_tolerance,
            newton_max_iterations,
            perturbations,
            certify,
            exponents,
            periodic,
            conjugacy,
            foliation,
            disintegrate,
            mk,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = ExperimentConfig::defaults(Scenario::Exponents);
        assert_eq!(c.matrix, [3, 2, 1, 2, 2, 1, 1, 1, 1]);
        assert!(c.perturbations.is_empty());
        assert_eq!(c.mk.gamma0, 0.8);
    }

    #[test]
    fn repeated_perturbations_keep_order() {
        let text = "[perturbation]\nkind = shear\ntarget = 0\nfrequency = 0 1 0\namplitude = 0.05\n\n\
                    [perturbation]\nkind = twist\nplane = 0 1\ncenter = 0.5 0.5 0.5\nradius = 0.1\nmax_angle = 0.2\n";
        let c = ExperimentConfig::parse(text, Scenario::Certify).unwrap();
        assert_eq!(c.perturbations.len(), 2);
        assert!(matches!(c.perturbations[0], PerturbationSpec::Shear { amplitude, .. } if amplitude == 0.05));
        assert!(matches!(c.perturbations[1], PerturbationSpec::Twist { .. }));
    }

    #[test]
    fn invalid_inputs_are_config_errors() {
        for text in [
            "[exponents]\nsamples = -3\n",
            "[exponents]\nsamples = 0\n",
            "[exponents]\nsampels = 10\n",
            "[nonsense]\n",
            "seed = 3\n",
            "[run]\nseed = 1\nseed = 2\n",
            "[map]\nmatrix = 1 2 3\n",
            "[conjugacy]\ntolerance = nan\n",
            "[perturbation]\nkind = warp\n",
            "[disintegrate]\nbins = 10\nlevels = 3\n",
            "[disintegrate]\nlevels = 80\n",
        ] {
            let r = ExperimentConfig::parse(text, Scenario::Certify);
            assert!(matches!(r, Err(CliError::Config(_))), "{text:?} gave {r:?}");
        }
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("warp".parse::<Scenario>().is_err());
    }
}
