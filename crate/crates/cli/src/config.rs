//! Experiment configuration files (TOML) and their validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use stratoform::forms::OneForm;
use stratoform::geometry::{Manifold, Point, ScalarField, VectorFieldSpec};
use stratoform::measures::{Binning, RegionSpec};
use stratoform::sde::{Convention, DiffusionSpec, EnsembleSpec};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `T^2` or `S^n`.
    pub manifold: String,
    pub diffusion: DiffusionConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    /// Starting point; defaults to `(1/4, 0)` on the torus and the point
    /// `(0, 1, 0, …)` on spheres.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<String>,
    #[serde(default)]
    pub noise: Vec<String>,
    #[serde(default)]
    pub convention: Convention,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub base_seed: u64,
    pub burn_in: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            n_paths: 100,
            horizon: 1.0,
            dt: 1e-3,
            base_seed: 1,
            burn_in: 0.1,
        }
    }
}

fn default_grid() -> usize {
    256
}

fn default_cutoff() -> f64 {
    1e-3
}

fn default_points() -> usize {
    256
}

fn default_csv_paths() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    Simulate {
        /// Paths dumped as CSV (the rest are summarised only).
        #[serde(default = "default_csv_paths")]
        csv_paths: usize,
    },
    GeneratorCheck {
        functions: Vec<String>,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default)]
        point_seed: u64,
        /// Also run the Monte Carlo martingale test for every function.
        #[serde(default)]
        martingale: bool,
    },
    Integrate {
        forms: Vec<String>,
    },
    EstimateCycle {
        /// Defaults to the first-cohomology basis of the manifold.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        basis: Option<Vec<String>>,
    },
    EstimateMeasure {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        binning: Option<Binning>,
        /// Halve the bin size in every direction.
        #[serde(default)]
        refine: bool,
    },
    ValidateMeasure {
        tests: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        binning: Option<Binning>,
        #[serde(default)]
        refine: bool,
        /// Forms whose functional `∫ Sα(L) dμ` is reported.
        #[serde(default)]
        j_forms: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        region: Option<RegionSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coherence_radius: Option<f64>,
    },
    CheckLyapunov {
        form: String,
        region: RegionSpec,
        #[serde(default = "default_grid")]
        grid: usize,
        #[serde(default = "default_cutoff")]
        cutoff: f64,
    },
    EstimateF {
        form: String,
        times: Vec<f64>,
    },
    TailBound {
        function: String,
        t: f64,
        k: Vec<f64>,
    },
    Fluctuation {
        form: String,
        lambdas: Vec<f64>,
        times: Vec<f64>,
    },
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate { .. } => "simulate",
            Experiment::GeneratorCheck { .. } => "generator-check",
            Experiment::Integrate { .. } => "integrate",
            Experiment::EstimateCycle { .. } => "estimate-cycle",
            Experiment::EstimateMeasure { .. } => "estimate-measure",
            Experiment::ValidateMeasure { .. } => "validate-measure",
            Experiment::CheckLyapunov { .. } => "check-lyapunov",
            Experiment::EstimateF { .. } => "estimate-f",
            Experiment::TailBound { .. } => "tail-bound",
            Experiment::Fluctuation { .. } => "fluctuation",
        }
    }
}

/// Everything checked and built before any computation starts.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub specs: Vec<DiffusionSpec>,
    pub ensemble: EnsembleSpec,
    pub burn_in: f64,
    pub x0: Point,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConventionChoice {
    Half,
    Unit,
    Both,
}

impl std::str::FromStr for ConventionChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "half" => Ok(ConventionChoice::Half),
            "unit" => Ok(ConventionChoice::Unit),
            "both" => Ok(ConventionChoice::Both),
            _ => Err(format!("expected half, unit or both, got {s:?}")),
        }
    }
}

fn check<T, E: std::fmt::Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("invalid config: {e}"))
    }

    /// Validates every field and builds the simulation objects.
    pub fn resolve(mut self, convention: Option<ConventionChoice>) -> Result<Resolved, String> {
        let m: Manifold = check(self.manifold.parse(), "manifold")?;
        let drift = self
            .diffusion
            .drift
            .as_deref()
            .map(|d| check(d.parse::<VectorFieldSpec>(), "drift"))
            .transpose()?;
        let noise = self
            .diffusion
            .noise
            .iter()
            .map(|n| check(n.parse::<VectorFieldSpec>(), "noise"))
            .collect::<Result<Vec<_>, _>>()?;
        let base = if noise.is_empty() {
            check(DiffusionSpec::deterministic(m, drift), "diffusion")?
        } else {
            check(
                DiffusionSpec::new(m, drift, noise, self.diffusion.convention),
                "diffusion",
            )?
        };
        let conventions = match convention {
            None => vec![self.diffusion.convention],
            Some(ConventionChoice::Half) => vec![Convention::Half],
            Some(ConventionChoice::Unit) => vec![Convention::Unit],
            Some(ConventionChoice::Both) => vec![Convention::Half, Convention::Unit],
        };
        self.diffusion.convention = conventions[0];
        let specs = conventions
            .iter()
            .map(|&c| base.clone().with_convention(c))
            .collect();

        let e = &self.ensemble;
        let ensemble = check(EnsembleSpec::new(e.n_paths, e.base_seed, e.horizon, e.dt), "ensemble")?;
        if !(0.0..1.0).contains(&e.burn_in) {
            return Err(format!("ensemble: burn_in must lie in [0, 1), got {}", e.burn_in));
        }
        let x0 = match &self.x0 {
            Some(c) => check(Point::new(m, c), "x0")?,
            None => match m {
                Manifold::Torus2 => Point::new(m, &[0.25, 0.0]).expect("valid"),
                Manifold::Sphere(n) => {
                    let mut c = vec![0.0; n + 1];
                    c[1] = 1.0;
                    Point::new(m, &c).expect("valid")
                }
            },
        };
        validate_experiment(&self.experiment, m)?;
        Ok(Resolved {
            burn_in: e.burn_in,
            config: self,
            specs,
            ensemble,
            x0,
        })
    }
}

pub fn parse_form(s: &str, m: Manifold) -> Result<OneForm, String> {
    let a: OneForm = check(s.parse(), "form")?;
    check(a.check_manifold(m), "form")?;
    Ok(a)
}

pub fn parse_function(s: &str, m: Manifold) -> Result<ScalarField, String> {
    let f: ScalarField = check(s.parse(), "function")?;
    check(f.check_manifold(m), "function")?;
    Ok(f)
}

fn positive(values: &[f64], what: &str) -> Result<(), String> {
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(format!("{what} must be a non-empty list of positive numbers"));
    }
    Ok(())
}

fn validate_experiment(e: &Experiment, m: Manifold) -> Result<(), String> {
    match e {
        Experiment::Simulate { .. } => {}
        Experiment::GeneratorCheck {
            functions, points, ..
        } => {
            if functions.is_empty() || *points == 0 {
                return Err("generator-check needs functions and a positive point count".into());
            }
            for f in functions {
                parse_function(f, m)?;
            }
        }
        Experiment::Integrate { forms } => {
            if forms.is_empty() {
                return Err("integrate needs at least one form".into());
            }
            for a in forms {
                parse_form(a, m)?;
            }
        }
        Experiment::EstimateCycle { basis } => {
            for a in basis.iter().flatten() {
                parse_form(a, m)?;
            }
        }
        Experiment::EstimateMeasure { binning, .. } => {
            if let Some(b) = binning {
                check(b.check(m), "binning")?;
            }
        }
        Experiment::ValidateMeasure {
            tests,
            binning,
            j_forms,
            region,
            coherence_radius,
            ..
        } => {
            if let Some(b) = binning {
                check(b.check(m), "binning")?;
            }
            for f in tests {
                parse_function(f, m)?;
            }
            for a in j_forms {
                parse_form(a, m)?;
            }
            if let Some(r) = region {
                check(r.check(m), "region")?;
                if !coherence_radius.is_some_and(|r| r > 0.0) {
                    return Err("a region needs a positive coherence_radius".into());
                }
            }
        }
        Experiment::CheckLyapunov {
            form,
            region,
            grid,
            cutoff,
        } => {
            parse_form(form, m)?;
            check(region.check(m), "region")?;
            if *grid == 0 || !(*cutoff >= 0.0) {
                return Err("grid must be positive and cutoff non-negative".into());
            }
        }
        Experiment::EstimateF { form, times } => {
            parse_form(form, m)?;
            if times.is_empty() || times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
                return Err("times must be a non-empty list of non-negative numbers".into());
            }
        }
        Experiment::TailBound { function, t, k } => {
            parse_function(function, m)?;
            positive(&[*t], "t")?;
            positive(k, "k")?;
            if k.iter().any(|k| *k <= 2.0 * t) {
                return Err(format!("every k must exceed 2t = {}", 2.0 * t));
            }
        }
        Experiment::Fluctuation {
            form,
            lambdas,
            times,
        } => {
            parse_form(form, m)?;
            positive(lambdas, "lambdas")?;
            positive(times, "times")?;
        }
    }
    Ok(())
}
