//! The acceptance battery: each criterion runs its experiment at the stated
//! scale and returns its metrics with a pass/fail flag.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::catalog::{sphere_example, torus_dy_symbol, torus_example, torus_gradient_control};
use crate::cycles::{estimate_cycle, fluctuation_experiment, h1_basis};
use crate::error::Result;
use crate::forms::{decompose_ensemble, line_integral, OneForm};
use crate::generator::{Method, SymbolEval};
use crate::geometry::{project_sphere, wrap_torus, Manifold, ScalarField};
use crate::lyapunov::{check_lyapunov, estimate_f, manifold_grid, tail_bound_sweep, Verdict};
use crate::measures::{occupation_from_ensemble, validate_invariant, Binning, MeasureEstimate, RegionSpec};
use crate::sde::rng::{brownian_increments, coarsen_increments, path_seed};
use crate::sde::{simulate_path_with_increments, Convention, EnsembleSpec};
use crate::stats::{linear_fit, Summary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteOptions {
    /// Caps every ensemble at 500 paths.
    pub quick: bool,
    pub base_seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            quick: false,
            base_seed: 20240229,
        }
    }
}

pub const QUICK_PATHS: usize = 500;

impl SuiteOptions {
    fn paths(&self, n: usize) -> usize {
        if self.quick {
            n.min(QUICK_PATHS)
        } else {
            n
        }
    }

    fn seed(&self, criterion: u64) -> u64 {
        path_seed(self.base_seed, 1000 + criterion)
    }

    fn ensemble(&self, criterion: u64, n: usize, horizon: f64, dt: f64) -> Result<EnsembleSpec> {
        EnsembleSpec::new(self.paths(n), self.seed(criterion), horizon, dt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: String,
    pub name: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    pub detail: String,
}

impl CriterionOutcome {
    fn new(id: u64, name: &str) -> Self {
        CriterionOutcome {
            id: format!("C{id}"),
            name: name.into(),
            passed: false,
            metrics: BTreeMap::new(),
            detail: String::new(),
        }
    }

    fn metric(&mut self, key: &str, v: f64) -> &mut Self {
        self.metrics.insert(key.into(), v);
        self
    }

    /// Outcome of a criterion whose computation itself failed.
    pub fn error(id: &str, e: &crate::Error) -> Self {
        CriterionOutcome {
            id: id.to_string(),
            name: "error".into(),
            passed: false,
            metrics: BTreeMap::new(),
            detail: e.to_string(),
        }
    }

    /// One line, e.g. `[PASS] C1 torus symbol (max_gap_analytic=…)`.
    pub fn summary_line(&self) -> String {
        let metrics: Vec<String> = self.metrics.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
        format!(
            "[{}] {} {}: {} ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            metrics.join(", ")
        )
    }
}

pub type CriterionFn = fn(&SuiteOptions) -> Result<CriterionOutcome>;

pub const CRITERIA: [(&str, CriterionFn); 10] = [
    ("C1", c1_torus_symbol),
    ("C2", c2_decomposition),
    ("C3", c3_exact_form_order),
    ("C4", c4_cycle_nullity),
    ("C5", c5_gradient_null),
    ("C6", c6_invariant_measure),
    ("C7", c7_lyapunov_verdicts),
    ("C8", c8_tail_bound),
    ("C9", c9_small_t_slope),
    ("C10", c10_fluctuations),
];

pub fn run_criterion(id: &str, opts: &SuiteOptions) -> Option<Result<CriterionOutcome>> {
    CRITERIA
        .iter()
        .find(|(c, _)| c.eq_ignore_ascii_case(id))
        .map(|(_, f)| f(opts))
}

/// Runs every criterion in order; an error inside one criterion is
/// reported as its failure.
pub fn run_suite(opts: &SuiteOptions) -> Vec<CriterionOutcome> {
    CRITERIA
        .iter()
        .map(|(id, f)| {
            f(opts).unwrap_or_else(|e| CriterionOutcome::error(id, &e))
        })
        .collect()
}

fn quarter() -> crate::geometry::Point {
    wrap_torus([0.25, 0.0]).expect("valid point")
}

pub fn c1_torus_symbol(_: &SuiteOptions) -> Result<CriterionOutcome> {
    let mut out = CriterionOutcome::new(1, "torus symbol of dy");
    let spec = torus_example(Convention::Half);
    let reference = torus_dy_symbol();
    let beta = OneForm::TorusDy;
    let analytic = SymbolEval::with_method(&spec, &beta, Method::AnalyticCatalog)?;
    let fd = SymbolEval::with_method(&spec, &beta, Method::DirectionalFiniteDifference)?;
    let (mut ga, mut gf) = (0.0f64, 0.0f64);
    let grid = manifold_grid(Manifold::Torus2, 16);
    for x in &grid {
        let r = (reference.eval)(x);
        ga = ga.max((analytic.eval_checked(x)? - r).abs());
        gf = gf.max((fd.eval_checked(x)? - r).abs());
    }
    out.passed = ga <= 1e-6 && gf <= 1e-5;
    out.metric("points", grid.len() as f64)
        .metric("max_gap_analytic", ga)
        .metric("max_gap_fd", gf);
    out.detail = format!("{} vs computed symbol", reference.expression);
    Ok(out)
}

pub fn c2_decomposition(opts: &SuiteOptions) -> Result<CriterionOutcome> {
    let mut out = CriterionOutcome::new(2, "integral decomposition");
    let ens = opts.ensemble(2, 4000, 2.0, 1e-3)?;
    let mut ok = Vec::new();
    for c in [Convention::Half, Convention::Unit] {
        let parts = decompose_ensemble(&OneForm::TorusDy, &torus_example(c), &quarter(), &ens)?;
        let m: Vec<f64> = parts.iter().map(|d| d.martingale_part).collect();
        let s = Summary::of(&m);
        out.metric(&format!("{c}_mean"), s.mean)
            .metric(&format!("{c}_std_err"), s.std_err)
            .metric(&format!("{c}_z"), s.z_score());
        ok.push(s.within_sigma(3.0));
    }
    out.metric("n_paths", ens.n_paths as f64);
    out.passed = ok[0] && !ok[1];
    out.detail = "martingale mean within 3 stderr under half, outside under unit".into();
    Ok(out)
}

pub fn c3_exact_form_order(opts: &SuiteOptions) -> Result<CriterionOutcome> {
    let mut out = CriterionOutcome::new(3, "exact-form error order");
    let spec = torus_example(Convention::Half);
    let f = ScalarField::SinTwoPi(1);
    let alpha = OneForm::Exact(f.clone());
    let fine_dt = 1e-3;
    let factors = [1usize, 2, 4];
    let n_paths = opts.paths(2000);
    let (mut sq, mut used, mut excluded, mut monotone) = ([0.0f64; 3], 0usize, 0usize, 0usize);
    'paths: for k in 0..n_paths {
        let fine = brownian_increments(path_seed(opts.seed(3), k as u64), fine_dt, 1000, 1);
        let mut err = [0.0; 3];
        for (i, &fac) in factors.iter().enumerate() {
            let inc = if fac == 1 { fine.clone() } else { coarsen_increments(&fine, 1, fac) };
            let p = simulate_path_with_increments(&spec, &quarter(), fine_dt * fac as f64, &inc)?;
            let value = match line_integral(&alpha, &p) {
                Ok(v) => v.value,
                Err(e) if matches!(e.root(), crate::Error::StepTooLarge { .. }) => {
                    excluded += 1;
                    continue 'paths;
                }
                Err(e) => return Err(e),
            };
            err[i] = (value - (f.value(p.coords_at(p.n_steps())) - f.value(p.coords_at(0)))).abs();
        }
        used += 1;
        if err[0] <= err[1] && err[1] <= err[2] {
            monotone += 1;
        }
        for i in 0..3 {
            sq[i] += err[i] * err[i];
        }
    }
    let rms: Vec<f64> = sq.iter().map(|s| (s / used as f64).sqrt()).collect();
    let logs: Vec<f64> = factors.iter().map(|&c| (fine_dt * c as f64).ln()).collect();
    let fit = linear_fit(&logs, &rms.iter().map(|r| r.ln()).collect::<Vec<_>>());
    out.metric("order", fit.slope)
        .metric("rms_dt_1e-3", rms[0])
        .metric("rms_dt_2e-3", rms[1])
        .metric("rms_dt_4e-3", rms[2])
        .metric("paths_used", used as f64)
        .metric("paths_excluded_step_guard", excluded as f64)
        .metric("monotone_fraction", monotone as f64 / used as f64);
    out.passed = fit.slope >= 1.0;
    out.detail = "log-log slope of RMS |∫df - Δf| over dt ∈ {1e-3, 2e-3, 4e-3}".into();
    Ok(out)
}

pub fn c4_cycle_nullity(opts: &SuiteOptions) -> Result<CriterionOutcome> {
    let mut out = CriterionOutcome::new(4, "cycle nullity");
    let spec = torus_example(Convention::Half);
    let basis = h1_basis(Manifold::Torus2)?;
    let short = estimate_cycle(&spec, &quarter(), &basis, &opts.ensemble(4, 200, 200.0, 1e-3)?)?;
    let long = estimate_cycle(&spec, &quarter(), &basis, &opts.ensemble(4, 200, 400.0, 1e-3)?)?;
    let mut ok = true;
    for (j, name) in short.basis.iter().enumerate() {
        let ratio = short.ci95[j] / long.ci95[j];
        out.metric(&format!("{name}_pairing"), short.pairings[j])
            .metric(&format!("{name}_ci95"), short.ci95[j])
            .metric(&format!("{name}_ci95_ratio"), ratio);
        ok &= short.pairings[j].abs() <= 3.0 * short.ci95[j] && ratio >= 1.8;
    }
    out.passed = ok;
    out.detail = "pairings within 3 ci95 of 0 at T = 200; ci95(T)/ci95(2T) ≥ 1.8".into();
    Ok(out)
}

pub fn c5_gradient_null(opts: &SuiteOptions) -> Result<CriterionOutcome> {
    let mut out = CriterionOutcome::new(5, "gradient-drift null");
    let spec = torus_gradient_control(Convention::Half);
    let basis = h1_basis(Manifold::Torus2)?;
    let e = estimate_cycle(&spec, &quarter(), &basis, &opts.ensemble(5, 100, 500.0, 1e-3)?)?;
    let mut ok = true;
    for (j, name) in e.basis.iter().enumerate() {
        out.metric(&format!("{name}_pairing"), e.pairings[j])
            .metric(&format!("{name}_ci95"), e.ci95[j]);
        ok &= e.pairings[j].abs() <= 3.0 * e.ci95[j];
    }
    out.passed = ok;
    out.detail = "pairings within 3 ci95 of 0 at T = 500".into();
    Ok(out)
}

pub fn c6_invariant_measure(opts: &SuiteOptions) -> Result<CriterionOutcome> {
    let mut out = CriterionOutcome::new(6, "invariant-measure condition");
    let spec = torus_example(Convention::Half);
    // the Heun bias near the attracting circles is O(dt) with a (2π)^4
    // constant; a finer step keeps it below the Monte Carlo tolerance
    let ens = opts.ensemble(6, 100, 500.0, 2.5e-4)?;
    let mu = occupation_from_ensemble(&spec, &quarter(), &ens, Binning::DEFAULT_TORUS, 0.1)?;
    let tests = [
        ScalarField::Coordinate(1),
        ScalarField::SinTwoPi(0),
        ScalarField::SinTwoPi(1),
        ScalarField::CosTwoPi(0),
        ScalarField::CosTwoPi(1),
    ];
    let v = validate_invariant(&mu, &spec, &tests)?;
    for r in &v.residuals {
        out.metric(&format!("residual[{}]", r.function), r.residual)
            .metric(&format!("tolerance[{}]", r.function), r.tolerance);
    }
    let uniform = MeasureEstimate::uniform(Manifold::Torus2, Binning::DEFAULT_TORUS)?;
    let u = validate_invariant(&uniform, &spec, &tests[..1])?;
    let ur = u.residuals[0].residual;
    let uniform_ok = !u.all_pass && (ur + PI / 2.0).abs() <= 0.05 * PI / 2.0;
    out.metric("uniform_residual_y", ur);
    out.passed = v.all_pass && uniform_ok;
    out.detail = "occupation measure passes, uniform histogram fails near -π/2".into();
    Ok(out)
}

pub fn c7_lyapunov_verdicts(_: &SuiteOptions) -> Result<CriterionOutcome> {
    let mut out = CriterionOutcome::new(7, "Lyapunov verdicts");
    let torus = torus_example(Convention::Half);
    let tube = |x: &[f64]| RegionSpec::TorusCircles {
        x_values: x.to_vec(),
        tube_radius: 1e-3,
    };
    let both = check_lyapunov(&torus, &OneForm::TorusDy, &tube(&[0.0, 0.5]), 256, 1e-3)?;
    let single = check_lyapunov(&torus, &OneForm::TorusDy, &tube(&[0.5]), 256, 1e-3)?;
    let sphere = check_lyapunov(
        &sphere_example(2, Convention::Half),
        &OneForm::Exact(ScalarField::LogOneMinusSquare(0)),
        &RegionSpec::SpherePoles { cap_radius: 0.05 },
        256,
        1e-3,
    )?;
    out.metric("torus_both_max", both.max_symbol)
        .metric("torus_single_max", single.max_symbol)
        .metric("sphere_max", sphere.max_symbol);
    out.passed = both.verdict == Verdict::Strict
        && single.verdict == Verdict::NonStrictZeroSet
        && sphere.verdict == Verdict::Strict;
    out.detail = format!(
        "torus both circles {:?}, single circle {:?}, sphere poles {:?}",
        both.verdict, single.verdict, sphere.verdict
    );
    Ok(out)
}

pub fn c8_tail_bound(opts: &SuiteOptions) -> Result<CriterionOutcome> {
    let mut out = CriterionOutcome::new(8, "tail bound");
    let spec = sphere_example(2, Convention::Half);
    let x0 = project_sphere(&[0.0, 1.0, 0.0])?;
    let ks = [2.0, 5.0, 10.0, 50.0];
    let ens = opts.ensemble(8, 10_000, 0.5, 1e-3)?;
    let r = tail_bound_sweep(&spec, &ScalarField::LogOneMinusSquare(0), &x0, 0.5, &ks, &ens)?;
    for rep in &r {
        out.metric(&format!("p_hat[k={}]", rep.k), rep.p_hat);
    }
    out.metric("wilson_hi[k=2]", r[0].wilson_hi).metric("bound[k=2]", r[0].bound);
    let monotone = r.windows(2).all(|w| w[0].p_hat >= w[1].p_hat);
    out.passed = r[0].wilson_hi <= r[0].bound && monotone;
    out.detail = "Wilson upper limit within the bound; p̂ nonincreasing in k".into();
    Ok(out)
}

pub fn c9_small_t_slope(opts: &SuiteOptions) -> Result<CriterionOutcome> {
    let mut out = CriterionOutcome::new(9, "small-t slope");
    let spec = torus_example(Convention::Half);
    let t = 1e-2;
    let e = estimate_f(&spec, &OneForm::TorusDy, &quarter(), t, &opts.ensemble(9, 10_000, t, 1e-4)?)?;
    let target = SymbolEval::new(&spec, &OneForm::TorusDy)?.eval(quarter().coords());
    let slope = e.value / t;
    let rel = ((slope - target) / target).abs();
    out.metric("slope", slope)
        .metric("symbol_at_x0", target)
        .metric("relative_gap", rel)
        .metric("slope_std_err", e.std_err / t);
    out.passed = rel <= 0.02;
    out.detail = "f(t)/t at t = 1e-2 within 2% of Sβ(L)(x0)".into();
    Ok(out)
}

pub fn c10_fluctuations(opts: &SuiteOptions) -> Result<CriterionOutcome> {
    let mut out = CriterionOutcome::new(10, "fluctuation scaling");
    let spec = torus_example(Convention::Half);
    let ens = opts.ensemble(10, 4000, 1.0, 1e-3)?;
    let lambdas = [1.0, 4.0, 16.0, 64.0];
    let times = [0.25, 0.5, 0.75, 1.0];
    let r = fluctuation_experiment(&spec, &quarter(), &OneForm::TorusDy, &lambdas, &times, &ens)?;
    let i = lambdas.len() - 1;
    out.metric("r_squared[λ=64]", r.r_squared[i])
        .metric("slope[λ=64]", r.slopes[i])
        .metric("skewness", r.skewness)
        .metric("excess_kurtosis", r.excess_kurtosis)
        .metric("n_paths", r.n_paths as f64);
    out.passed = r.r_squared[i] >= 0.95 && r.skewness.abs() <= 0.2 && r.excess_kurtosis.abs() <= 0.5;
    out.detail = "variance linear in t at λ = 64; near-Gaussian marginal".into();
    Ok(out)
}
