//! Runs one configured experiment and assembles its report, CSV dumps and
//! plots in memory.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};
use stratoform::catalog;
use stratoform::cycles::{estimate_cycle_with_burn_in, estimate_j_with_allowance, fluctuation_experiment, h1_basis};
use stratoform::forms::decompose_ensemble;
use stratoform::generator::{generator_report, martingale_residual_test, sample_points, stratonovich_symbol};
use stratoform::geometry::{Manifold, Point, ScalarField};
use stratoform::lyapunov::{check_lyapunov, estimate_f, lyapunov_grid, tail_bound_sweep, write_grid_csv, GridValue};
use stratoform::measures::{
    coherence_check, occupation_from_ensemble, validate_invariant, Binning, MeasureEstimate,
};
use stratoform::sde::{run_ensemble, DiffusionSpec, EnsembleSpec, Recorder};
use stratoform::stats::Summary;
use stratoform::Result;

use crate::config::{parse_form, parse_function, Experiment, Resolved};
use crate::svg::{plot, Series};

pub const SCHEMA_VERSION: u32 = 1;

/// A finished run: the report plus every auxiliary file, keyed by name.
pub struct Outputs {
    pub report: Value,
    pub files: BTreeMap<String, Vec<u8>>,
}

struct Files<'a> {
    suffix: &'a str,
    files: &'a mut BTreeMap<String, Vec<u8>>,
}

impl Files<'_> {
    fn add(&mut self, stem: &str, ext: &str, data: impl Into<Vec<u8>>) {
        self.files.insert(format!("{stem}{}.{ext}", self.suffix), data.into());
    }

    fn csv(&mut self, stem: &str, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) {
        let mut buf = Vec::new();
        f(&mut buf).expect("writing to memory");
        self.add(stem, "csv", buf);
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable report")
}

fn e(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn run(resolved: &Resolved, quick_paths: Option<usize>) -> Result<Outputs> {
    let mut ens = resolved.ensemble;
    if let Some(cap) = quick_paths {
        ens = ens.with_paths(ens.n_paths.min(cap));
    }
    let mut files = BTreeMap::new();
    let mut results = Vec::new();
    let many = resolved.specs.len() > 1;
    for spec in &resolved.specs {
        let suffix = if many { format!("_{}", spec.convention()) } else { String::new() };
        let mut out = Files {
            suffix: &suffix,
            files: &mut files,
        };
        let result = run_one(resolved, spec, &ens, &mut out)?;
        results.push(json!({ "convention": spec.convention(), "result": result }));
    }
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "experiment": resolved.config.experiment.name(),
        "config": to_value(&resolved.config),
        "base_seed": resolved.config.ensemble.base_seed,
        "n_paths": ens.n_paths,
        "x0": resolved.x0.coords(),
        "results": results,
    });
    Ok(Outputs { report, files })
}

fn run_one(r: &Resolved, spec: &DiffusionSpec, ens: &EnsembleSpec, out: &mut Files) -> Result<Value> {
    let m = spec.manifold();
    let x0 = &r.x0;
    // the config was validated, so every expression parses
    let form = |s: &str| parse_form(s, m).expect("validated form");
    let function = |s: &str| parse_function(s, m).expect("validated function");
    match &r.config.experiment {
        Experiment::Simulate { csv_paths } => simulate(spec, x0, ens, *csv_paths, out),
        Experiment::GeneratorCheck {
            functions,
            points,
            point_seed,
            martingale,
        } => {
            let fs: Vec<ScalarField> = functions.iter().map(|s| function(s)).collect();
            generator_check(spec, x0, ens, &fs, *points, *point_seed, *martingale, out)
        }
        Experiment::Integrate { forms } => {
            let mut res = Vec::new();
            let mut series = Vec::new();
            let mut rows = String::from("path,form,total,drift_part,martingale_part\n");
            for s in forms {
                let a = form(s);
                let d = decompose_ensemble(&a, spec, x0, ens)?;
                for (k, p) in d.iter().enumerate() {
                    let _ = writeln!(rows, "{k},{a},{},{},{}", e(p.total), e(p.drift_part), e(p.martingale_part));
                }
                let total = Summary::of(&d.iter().map(|p| p.total).collect::<Vec<_>>());
                let drift = Summary::of(&d.iter().map(|p| p.drift_part).collect::<Vec<_>>());
                let mart = Summary::of(&d.iter().map(|p| p.martingale_part).collect::<Vec<_>>());
                series.push(Series::scatter(
                    a.to_string(),
                    d.iter().map(|p| (p.total, p.martingale_part)).collect(),
                ));
                res.push(json!({
                    "form": a.to_string(),
                    "total": total,
                    "drift_part": drift,
                    "martingale_part": mart,
                    "martingale_z": mart.z_score(),
                    "martingale_within_3_sigma": mart.within_sigma(3.0),
                }));
            }
            out.add("integrals", "csv", rows);
            out.add("integrals", "svg", plot("martingale part against total", "total", "martingale part", &series));
            Ok(json!({ "horizon": ens.horizon, "dt": ens.dt, "forms": res }))
        }
        Experiment::EstimateCycle { basis } => {
            let basis = match basis {
                Some(b) => b.iter().map(|s| form(s)).collect(),
                None => h1_basis(m)?,
            };
            let c = estimate_cycle_with_burn_in(spec, x0, &basis, ens, r.burn_in)?;
            let mut csv = String::from("path");
            for b in &c.basis {
                let _ = write!(csv, ",{b}");
            }
            csv.push('\n');
            for k in 0..if c.basis.is_empty() { 0 } else { c.n_paths } {
                let _ = write!(csv, "{k}");
                for avg in &c.path_averages {
                    let _ = write!(csv, ",{}", e(avg[k]));
                }
                csv.push('\n');
            }
            out.add("path_averages", "csv", csv);
            let series: Vec<Series> = c
                .basis
                .iter()
                .zip(&c.path_averages)
                .map(|(b, avg)| Series::scatter(b.clone(), avg.iter().enumerate().map(|(k, v)| (k as f64, *v)).collect()))
                .collect();
            out.add("path_averages", "svg", plot("time average per path", "path", "average", &series));
            Ok(to_value(&c))
        }
        Experiment::EstimateMeasure { binning, refine } => {
            let mu = measure(spec, r, ens, *binning, *refine, out)?;
            Ok(json!({ "measure": mu }))
        }
        Experiment::ValidateMeasure {
            tests,
            binning,
            refine,
            j_forms,
            region,
            coherence_radius,
        } => {
            let mu = measure(spec, r, ens, *binning, *refine, out)?;
            let tests: Vec<ScalarField> = tests.iter().map(|s| function(s)).collect();
            let validation = validate_invariant(&mu, spec, &tests)?;
            let uniform = validate_invariant(&MeasureEstimate::uniform(m, mu.binning)?, spec, &tests)?;
            let mut csv = String::from("function,residual,tolerance,discretization,monte_carlo,pass,uniform_residual\n");
            for (v, u) in validation.residuals.iter().zip(&uniform.residuals) {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    v.function,
                    e(v.residual),
                    e(v.tolerance),
                    e(v.discretization),
                    e(v.monte_carlo),
                    v.pass,
                    e(u.residual)
                );
            }
            out.add("residuals", "csv", csv);
            let mut j = Vec::new();
            for s in j_forms {
                let a = form(s);
                j.push(json!({ "form": a.to_string(), "estimate": estimate_j_with_allowance(spec, &mu, &a)? }));
            }
            let coherence = match (region, coherence_radius) {
                (Some(w), Some(rad)) => Some(json!({ "region": w.to_string(), "check": coherence_check(&mu, w, *rad)? })),
                _ => None,
            };
            Ok(json!({
                "validation": validation,
                "uniform_validation": uniform,
                "j": j,
                "coherence": coherence,
                "measure": mu,
            }))
        }
        Experiment::CheckLyapunov {
            form: s,
            region,
            grid,
            cutoff,
        } => {
            let beta = form(s);
            let values = lyapunov_grid(spec, &beta, region, *grid, *cutoff)?;
            let report = check_lyapunov(spec, &beta, region, *grid, *cutoff)?;
            out.csv("grid", |w| write_grid_csv(&values, w));
            let profile = lyapunov_profile(&values);
            let mut csv = String::from("coord_0,max_S_beta_L\n");
            for (x, v) in &profile {
                let _ = writeln!(csv, "{},{}", e(*x), e(*v));
            }
            out.add("profile", "csv", csv);
            out.add(
                "profile",
                "svg",
                plot(
                    &format!("max of the symbol of {beta} at fixed first coordinate"),
                    "coord_0",
                    "max S",
                    &[Series::line("max S", profile)],
                ),
            );
            Ok(to_value(&report))
        }
        Experiment::EstimateF { form: s, times } => {
            let beta = form(s);
            let symbol = stratonovich_symbol(spec, &beta, x0)?;
            let mut est = Vec::new();
            let mut csv = String::from("t,value,std_err,integral_route,integral_std_err,slope\n");
            for &t in times {
                let f = estimate_f(spec, &beta, x0, t, ens)?;
                let slope = if t > 0.0 { f.value / t } else { f64::NAN };
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    e(t),
                    e(f.value),
                    e(f.std_err),
                    e(f.integral_route),
                    e(f.integral_std_err),
                    e(slope)
                );
                est.push(f);
            }
            out.add("f", "csv", csv);
            out.add(
                "f",
                "svg",
                plot(
                    &format!("f(t, x0) for {beta}"),
                    "t",
                    "f",
                    &[
                        Series::line("drift route", est.iter().map(|f| (f.t, f.value)).collect()),
                        Series::scatter("integral route", est.iter().map(|f| (f.t, f.integral_route)).collect()),
                        Series::line("t S(x0)", times.iter().map(|&t| (t, t * symbol)).collect()),
                    ],
                ),
            );
            Ok(json!({ "form": beta.to_string(), "symbol_at_x0": symbol, "estimates": est }))
        }
        Experiment::TailBound { function: s, t, k } => {
            let f = function(s);
            let reports = tail_bound_sweep(spec, &f, x0, *t, k, ens)?;
            let mut csv = String::from("k,hits,p_hat,wilson_lo,wilson_hi,bound\n");
            for t in &reports {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    e(t.k),
                    t.hits,
                    e(t.p_hat),
                    e(t.wilson_lo),
                    e(t.wilson_hi),
                    e(t.bound)
                );
            }
            out.add("tail", "csv", csv);
            out.add(
                "tail",
                "svg",
                plot(
                    &format!("exceedance probability of {f}"),
                    "k",
                    "probability",
                    &[
                        Series::line("p_hat", reports.iter().map(|t| (t.k, t.p_hat)).collect()),
                        Series::scatter("wilson_hi", reports.iter().map(|t| (t.k, t.wilson_hi)).collect()),
                        Series::line("bound", reports.iter().map(|t| (t.k, t.bound)).collect()),
                    ],
                ),
            );
            Ok(to_value(&reports))
        }
        Experiment::Fluctuation { form: s, lambdas, times } => {
            let a = form(s);
            let rep = fluctuation_experiment(spec, x0, &a, lambdas, times, ens)?;
            let mut csv = String::from("lambda,t,variance,mean\n");
            let mut series = Vec::new();
            for (i, l) in rep.lambdas.iter().enumerate() {
                for (j, t) in rep.times.iter().enumerate() {
                    let _ = writeln!(csv, "{},{},{},{}", e(*l), e(*t), e(rep.variances[i][j]), e(rep.means[i][j]));
                }
                series.push(Series::line(
                    format!("λ = {l}"),
                    rep.times.iter().copied().zip(rep.variances[i].iter().copied()).collect(),
                ));
            }
            out.add("variances", "csv", csv);
            out.add("variances", "svg", plot("variance of the rescaled martingale part", "t", "variance", &series));
            Ok(to_value(&rep))
        }
    }
}

fn simulate(spec: &DiffusionSpec, x0: &Point, ens: &EnsembleSpec, csv_paths: usize, out: &mut Files) -> Result<Value> {
    let n = ens.n_steps();
    let runs = run_ensemble(
        spec,
        x0,
        ens,
        |_| Recorder::new(x0, n, spec.noise_dim()),
        |k, rec, end| {
            let path = (k < csv_paths).then(|| rec.finish(spec, ens.dt, Some(ens.path_seed(k))));
            Ok((path, end.coords().to_vec()))
        },
    )?;
    let d = spec.manifold().ambient_dim();
    let mut endpoints = String::from("path,seed");
    for i in 0..d {
        let _ = write!(endpoints, ",coord_{i}");
    }
    endpoints.push('\n');
    for (k, (path, end)) in runs.iter().enumerate() {
        let _ = write!(endpoints, "{k},{}", ens.path_seed(k));
        for c in end {
            let _ = write!(endpoints, ",{}", e(*c));
        }
        endpoints.push('\n');
        if let Some(p) = path {
            out.csv(&format!("path_{k}"), |w| p.write_csv(w));
            if k == 0 {
                let series: Vec<Series> = (0..d)
                    .map(|i| Series::line(format!("coord_{i}"), (0..p.len()).map(|j| (p.time(j), p.coords_at(j)[i])).collect()))
                    .collect();
                out.add("path_0", "svg", plot("path 0", "t", "coordinate", &series));
            }
        }
    }
    out.add("endpoints", "csv", endpoints);
    let means: Vec<f64> = (0..d)
        .map(|i| runs.iter().map(|r| r.1[i]).sum::<f64>() / runs.len() as f64)
        .collect();
    Ok(json!({
        "diffusion": spec.fingerprint(),
        "n_steps": n,
        "dt": ens.dt,
        "horizon": ens.horizon,
        "paths_dumped": csv_paths.min(ens.n_paths),
        "endpoint_mean": means,
    }))
}

#[allow(clippy::too_many_arguments)]
fn generator_check(
    spec: &DiffusionSpec,
    x0: &Point,
    ens: &EnsembleSpec,
    functions: &[ScalarField],
    points: usize,
    seed: u64,
    martingale: bool,
    out: &mut Files,
) -> Result<Value> {
    let m = spec.manifold();
    // quoted closed forms only describe the catalogue examples
    let example = match m {
        Manifold::Torus2 => catalog::torus_example(spec.convention()),
        Manifold::Sphere(n) => catalog::sphere_example(n, spec.convention()),
    };
    let quoted = if example.fingerprint() == spec.fingerprint() {
        catalog::quoted_generators(m)
    } else {
        Vec::new()
    };
    let mut res = Vec::new();
    for (i, f) in functions.iter().enumerate() {
        let pts: Vec<Point> = sample_points(m, points, seed)
            .into_iter()
            .filter(|p| f.check_domain(p.coords(), 1e-3).is_ok())
            .collect();
        let reference = quoted.iter().find(|(g, _)| g.to_string() == f.to_string()).map(|(_, r)| r);
        let report = generator_report(spec, f, &pts, reference)?;
        let mut csv = String::new();
        for j in 0..m.ambient_dim() {
            let _ = write!(csv, "coord_{j},");
        }
        csv.push_str("Lf,Lf_fd,reference\n");
        for (k, p) in report.points.iter().enumerate() {
            for c in p {
                let _ = write!(csv, "{},", e(*c));
            }
            let fd = report.fd_values.as_ref().map_or(String::new(), |v| e(v[k]));
            let rf = report.reference_values.as_ref().map_or(String::new(), |v| e(v[k]));
            let _ = writeln!(csv, "{},{fd},{rf}", e(report.values[k]));
        }
        out.add(&format!("generator_{i}"), "csv", csv);
        let mut series = vec![Series::scatter(
            "Lf",
            report.points.iter().zip(&report.values).map(|(p, v)| (p[0], *v)).collect(),
        )];
        if let Some(rv) = &report.reference_values {
            series.push(Series::scatter(
                "reference",
                report.points.iter().zip(rv).map(|(p, v)| (p[0], *v)).collect(),
            ));
        }
        out.add(&format!("generator_{i}"), "svg", plot(&format!("L applied to {f}"), "coord_0", "Lf", &series));
        let mart = if martingale {
            Some(martingale_residual_test(spec, f, x0, ens)?)
        } else {
            None
        };
        res.push(json!({ "report": report, "martingale": mart }));
    }
    Ok(json!({ "functions": res }))
}

fn measure(
    spec: &DiffusionSpec,
    r: &Resolved,
    ens: &EnsembleSpec,
    binning: Option<Binning>,
    refine: bool,
    out: &mut Files,
) -> Result<MeasureEstimate> {
    let m = spec.manifold();
    let mut b = binning.unwrap_or_else(|| Binning::default_for(m));
    if refine {
        b = b.refined();
    }
    let mu = occupation_from_ensemble(spec, &r.x0, ens, b, r.burn_in)?;
    out.csv("measure", |w| mu.write_csv(w));
    let marginal = marginal(&mu);
    let axis = match b {
        Binning::TorusGrid { .. } => "x",
        Binning::SphereBands { .. } => "theta",
    };
    let mut csv = format!("{axis},mass\n");
    for (x, w) in &marginal {
        let _ = writeln!(csv, "{},{}", e(*x), e(*w));
    }
    out.add("marginal", "csv", csv);
    out.add(
        "marginal",
        "svg",
        plot("occupation marginal", axis, "mass", &[Series::line("mass", marginal)]),
    );
    Ok(mu)
}

/// Mass per value of the first bin coordinate (`x` on the torus, polar
/// angle on spheres).
fn marginal(mu: &MeasureEstimate) -> Vec<(f64, f64)> {
    let mut acc: Vec<(f64, f64)> = Vec::new();
    for (b, w) in mu.masses.iter().enumerate() {
        let ex = mu.binning.extent(b);
        let c = 0.5 * (ex.first.0 + ex.first.1);
        match acc.iter_mut().find(|(x, _)| *x == c) {
            Some(slot) => slot.1 += w,
            None => acc.push((c, *w)),
        }
    }
    acc.sort_by(|a, b| a.0.total_cmp(&b.0));
    acc
}

/// Maximum of the symbol over grid points sharing the first coordinate.
fn lyapunov_profile(values: &[GridValue]) -> Vec<(f64, f64)> {
    let mut acc: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for v in values {
        let x = v.coords[0];
        let slot = acc.entry(x.to_bits() ^ (1 << 63)).or_insert((x, f64::NEG_INFINITY));
        slot.1 = slot.1.max(v.value);
    }
    let mut out: Vec<(f64, f64)> = acc.into_values().collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}
