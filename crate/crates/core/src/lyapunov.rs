//! Lyapunov 1-forms: the sign of `Sβ(L)` away from an invariant set, the
//! expected drift `f(t, x) = E ∫_0^t Sβ(L)(X_s) ds`, and Markov-type tail
//! bounds for `A_k = {f(X_t) ≤ f(x) - k}`.

use std::f64::consts::PI;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forms::{step_increment, OneForm, SINGULAR_CUTOFF};
use crate::generator::{GeneratorEval, SymbolEval};
use crate::geometry::{Coords, Manifold, Point, ScalarField};
use crate::measures::RegionSpec;
use crate::sde::{run_ensemble, Convention, DiffusionSpec, EnsembleSpec, PathObserver, StepView};
use crate::stats::{wilson_interval, Summary};

pub const DEFAULT_GRID: usize = 256;
/// `|Sβ(L)|` below this counts as zero.
pub const ZERO_TOLERANCE: f64 = 1e-8;
const MAX_LISTED_POINTS: usize = 64;

/// Grid over the manifold: vertices `(i/N, j/N)` on the torus; on spheres of
/// dimension ≥ 2 the angles `θ = πi/N`, `φ = 2πj/N` on the great 2-sphere of
/// the first three axes; on the circle the angles `2πi/N`.
pub fn manifold_grid(m: Manifold, n: usize) -> Vec<Coords> {
    let nf = n as f64;
    match m {
        Manifold::Torus2 => (0..n)
            .flat_map(|i| (0..n).map(move |j| [i as f64 / nf, j as f64 / nf].into_iter().collect()))
            .collect(),
        Manifold::Sphere(1) => (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / nf;
                [a.cos(), a.sin()].into_iter().collect()
            })
            .collect(),
        Manifold::Sphere(_) => {
            let d = m.ambient_dim();
            let mut out = Vec::with_capacity((n + 1) * n);
            for i in 0..=n {
                let theta = PI * i as f64 / nf;
                // a single point at each pole
                let sectors = if i == 0 || i == n { 1 } else { n };
                for j in 0..sectors {
                    let phi = 2.0 * PI * j as f64 / nf;
                    let mut c: Coords = smallvec::smallvec![0.0; d];
                    c[0] = theta.cos();
                    c[1] = theta.sin() * phi.cos();
                    c[2] = theta.sin() * phi.sin();
                    out.push(c);
                }
            }
            out
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Strict,
    NonStrictZeroSet,
    Violated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridValue {
    pub coords: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCheckReport {
    pub form: String,
    pub region: String,
    pub convention: Convention,
    pub grid_resolution: usize,
    pub cutoff: f64,
    pub evaluated_points: usize,
    pub max_symbol: f64,
    pub argmax: Vec<f64>,
    /// Grid points (at most 64) with `Sβ(L) ≥ -1e-8`.
    pub violation_points: Vec<GridValue>,
    pub n_violation_points: usize,
    pub verdict: Verdict,
}

/// `Sβ(L)` on the grid points outside the `cutoff`-neighbourhood of `W`.
pub fn lyapunov_grid(
    spec: &DiffusionSpec,
    beta: &OneForm,
    w: &RegionSpec,
    grid_resolution: usize,
    cutoff: f64,
) -> Result<Vec<GridValue>> {
    let m = spec.manifold();
    w.check(m)?;
    if grid_resolution == 0 {
        return Err(invalid("grid resolution must be positive"));
    }
    if !(cutoff >= 0.0) {
        return Err(invalid("cutoff must be non-negative"));
    }
    let symbol = SymbolEval::new(spec, beta)?;
    let reach = w.radius() + cutoff;
    manifold_grid(m, grid_resolution)
        .into_par_iter()
        .filter(|x| w.core_distance(x) >= reach)
        .map(|x| {
            let value = symbol.eval_checked(&x)?;
            Ok(GridValue {
                coords: x.to_vec(),
                value,
            })
        })
        .collect()
}

pub fn write_grid_csv<W: Write>(values: &[GridValue], mut out: W) -> io::Result<()> {
    let d = values.first().map_or(0, |v| v.coords.len());
    let cols: Vec<String> = (0..d).map(|i| format!("coord_{i}")).collect();
    writeln!(out, "{},S_beta_L", cols.join(","))?;
    for v in values {
        let c: Vec<String> = v.coords.iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(out, "{},{:.16e}", c.join(","), v.value)?;
    }
    Ok(())
}

pub fn check_lyapunov(
    spec: &DiffusionSpec,
    beta: &OneForm,
    w: &RegionSpec,
    grid_resolution: usize,
    cutoff: f64,
) -> Result<LyapunovCheckReport> {
    let values = lyapunov_grid(spec, beta, w, grid_resolution, cutoff)?;
    let best = values
        .iter()
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| invalid("every grid point lies inside the excluded neighbourhood"))?;
    let verdict = if best.value < -ZERO_TOLERANCE {
        Verdict::Strict
    } else if best.value <= ZERO_TOLERANCE {
        Verdict::NonStrictZeroSet
    } else {
        Verdict::Violated
    };
    let offending: Vec<&GridValue> = values.iter().filter(|v| v.value >= -ZERO_TOLERANCE).collect();
    Ok(LyapunovCheckReport {
        form: beta.to_string(),
        region: w.to_string(),
        convention: spec.convention(),
        grid_resolution,
        cutoff,
        evaluated_points: values.len(),
        max_symbol: best.value,
        argmax: best.coords.clone(),
        violation_points: offending.iter().take(MAX_LISTED_POINTS).map(|&v| v.clone()).collect(),
        n_violation_points: offending.len(),
        verdict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FEstimate {
    pub t: f64,
    /// Mean of `∫_0^t Sβ(L)(X_s) ds` (trapezoid).
    pub value: f64,
    pub std_err: f64,
    /// Mean of `∫_0^t β δX` (midpoint rule).
    pub integral_route: f64,
    pub integral_std_err: f64,
    /// Paired difference of the two routes, in standard errors.
    pub route_z: f64,
    pub routes_agree: bool,
    /// Paths stopped on reaching the singular cutoff of `β`.
    pub stopped_paths: usize,
    pub n_paths: usize,
}

/// Both routes to `f(t, x)` along one path, frozen once the path comes
/// within the cutoff of the singular set of `β`.
struct DriftObserver<'a> {
    beta: &'a OneForm,
    symbol: SymbolEval<'a>,
    manifold: Manifold,
    drift: f64,
    integral: f64,
    stopped: bool,
}

impl PathObserver for DriftObserver<'_> {
    fn observe(&mut self, s: &StepView<'_>) -> Result<()> {
        if self.stopped {
            return Ok(());
        }
        if self.beta.near_singular(s.to, SINGULAR_CUTOFF) {
            self.stopped = true;
            return Ok(());
        }
        self.integral += step_increment(self.beta, self.manifold, s.from, s.to, s.index)?;
        self.drift += 0.5 * s.dt * (self.symbol.eval_checked(s.from)? + self.symbol.eval_checked(s.to)?);
        Ok(())
    }
}

pub fn estimate_f(
    spec: &DiffusionSpec,
    beta: &OneForm,
    x0: &Point,
    t: f64,
    ens: &EnsembleSpec,
) -> Result<FEstimate> {
    let m = spec.manifold();
    beta.check_manifold(m)?;
    spec.check_point(x0)?;
    if beta.near_singular(x0.coords(), SINGULAR_CUTOFF) {
        return Err(Error::SingularProximity {
            what: beta.to_string(),
            step: 0,
        });
    }
    if t == 0.0 {
        return Ok(FEstimate {
            t,
            value: 0.0,
            std_err: 0.0,
            integral_route: 0.0,
            integral_std_err: 0.0,
            route_z: 0.0,
            routes_agree: true,
            stopped_paths: 0,
            n_paths: ens.n_paths,
        });
    }
    let run = ens.with_horizon(t);
    let symbol = SymbolEval::new(spec, beta)?;
    let per_path = run_ensemble(
        spec,
        x0,
        &run,
        |_| DriftObserver {
            beta,
            symbol: symbol.clone(),
            manifold: m,
            drift: 0.0,
            integral: 0.0,
            stopped: false,
        },
        |_, o, _| Ok((o.drift, o.integral, o.stopped)),
    )?;
    let drift: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let integral: Vec<f64> = per_path.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = per_path.iter().map(|p| p.1 - p.0).collect();
    let (d, i, g) = (Summary::of(&drift), Summary::of(&integral), Summary::of(&diff));
    Ok(FEstimate {
        t,
        value: d.mean,
        std_err: d.std_err,
        integral_route: i.mean,
        integral_std_err: i.std_err,
        route_z: g.z_score(),
        routes_agree: g.within_sigma(3.0) || g.mean.abs() < 1e-12,
        stopped_paths: per_path.iter().filter(|p| p.2).count(),
        n_paths: ens.n_paths,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedBound {
    pub convention: Convention,
    /// `C = sup(-Lf)` over the grid.
    pub constant: f64,
    /// `(C t - f(x0)) / (k - f(x0))`.
    pub bound: f64,
    pub vacuous: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecreaseCheck {
    pub convention: Convention,
    /// Mean of `f(X_t) - f(x0) - ∫_0^t Lf(X_s) ds` over unstopped paths.
    pub mean_gap: f64,
    pub std_err: f64,
    pub z: f64,
    pub consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBoundReport {
    pub function: String,
    pub t: f64,
    pub k: f64,
    pub x0: Vec<f64>,
    pub f_x0: f64,
    pub n_paths: usize,
    pub hits: usize,
    pub p_hat: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// `(2t - f(x0)) / (k - f(x0))`.
    pub bound: f64,
    pub bound_vacuous: bool,
    /// `bound - wilson_hi`.
    pub margin: f64,
    pub derived_bounds: Vec<DerivedBound>,
    pub decrease_checks: Vec<DecreaseCheck>,
    pub stopped_paths: usize,
    /// Grid maximum of `f` away from its singular set; the bound assumes
    /// it is non-positive.
    pub f_grid_max: f64,
}

struct TailObserver<'a> {
    f: &'a ScalarField,
    generators: [GeneratorEval<'a>; 2],
    integrals: [f64; 2],
    stopped: bool,
    end: f64,
}

impl PathObserver for TailObserver<'_> {
    fn observe(&mut self, s: &StepView<'_>) -> Result<()> {
        if self.stopped {
            return Ok(());
        }
        if self.f.check_domain(s.to, SINGULAR_CUTOFF).is_err() {
            self.stopped = true;
            self.end = f64::NEG_INFINITY;
            return Ok(());
        }
        for (acc, g) in self.integrals.iter_mut().zip(&self.generators) {
            *acc += 0.5 * s.dt * (g.eval_checked(s.from)? + g.eval_checked(s.to)?);
        }
        self.end = self.f.value(s.to);
        Ok(())
    }
}

const CONVENTIONS: [Convention; 2] = [Convention::Half, Convention::Unit];

/// `sup(-Lf)` over the grid points where `Lf` is defined, clamped at 0.
fn decay_constant(spec: &DiffusionSpec, f: &ScalarField) -> Result<f64> {
    let g = GeneratorEval::new(spec, f)?;
    Ok(manifold_grid(spec.manifold(), DEFAULT_GRID)
        .iter()
        .filter_map(|x| g.eval_checked(x).ok())
        .fold(0.0, |c, v| c.max(-v)))
}

pub fn tail_bound_experiment(
    spec: &DiffusionSpec,
    f: &ScalarField,
    x0: &Point,
    t: f64,
    k: f64,
    ens: &EnsembleSpec,
) -> Result<TailBoundReport> {
    tail_bound_sweep(spec, f, x0, t, &[k], ens).map(|mut v| v.remove(0))
}

/// One ensemble to time `t`, reported for every threshold `k`.
pub fn tail_bound_sweep(
    spec: &DiffusionSpec,
    f: &ScalarField,
    x0: &Point,
    t: f64,
    ks: &[f64],
    ens: &EnsembleSpec,
) -> Result<Vec<TailBoundReport>> {
    let m = spec.manifold();
    f.check_manifold(m)?;
    spec.check_point(x0)?;
    if ks.is_empty() {
        return Err(invalid("no thresholds given"));
    }
    for &k in ks {
        if !(k > 2.0 * t) {
            return Err(invalid(format!("threshold k = {k} must exceed 2t = {}", 2.0 * t)));
        }
    }
    f.check_domain(x0.coords(), SINGULAR_CUTOFF)?;
    let f_x0 = f.value(x0.coords());
    let specs = CONVENTIONS.map(|c| spec.clone().with_convention(c));
    let constants = [decay_constant(&specs[0], f)?, decay_constant(&specs[1], f)?];
    let f_grid_max = manifold_grid(m, DEFAULT_GRID)
        .iter()
        .filter(|x| f.check_domain(x, SINGULAR_CUTOFF).is_ok())
        .map(|x| f.value(x))
        .fold(f64::NEG_INFINITY, f64::max);

    let run = ens.with_horizon(t);
    let per_path = run_ensemble(
        spec,
        x0,
        &run,
        |_| TailObserver {
            f,
            generators: [
                GeneratorEval::new(&specs[0], f).expect("checked above"),
                GeneratorEval::new(&specs[1], f).expect("checked above"),
            ],
            integrals: [0.0; 2],
            stopped: false,
            end: f_x0,
        },
        |_, o, _| Ok((o.end, o.integrals, o.stopped)),
    )?;
    let n = per_path.len();
    let stopped_paths = per_path.iter().filter(|p| p.2).count();

    let decrease_checks: Vec<DecreaseCheck> = CONVENTIONS
        .iter()
        .enumerate()
        .map(|(i, &convention)| {
            let gaps: Vec<f64> = per_path
                .iter()
                .filter(|p| !p.2)
                .map(|p| p.0 - f_x0 - p.1[i])
                .collect();
            let s = Summary::of(&gaps);
            DecreaseCheck {
                convention,
                mean_gap: s.mean,
                std_err: s.std_err,
                z: s.z_score(),
                consistent: s.within_sigma(3.0),
            }
        })
        .collect();

    Ok(ks
        .iter()
        .map(|&k| {
            let hits = per_path.iter().filter(|p| p.0 <= f_x0 - k).count();
            let (wilson_lo, wilson_hi) = wilson_interval(hits, n);
            let bound = (2.0 * t - f_x0) / (k - f_x0);
            TailBoundReport {
                function: f.to_string(),
                t,
                k,
                x0: x0.coords().to_vec(),
                f_x0,
                n_paths: n,
                hits,
                p_hat: hits as f64 / n as f64,
                wilson_lo,
                wilson_hi,
                bound,
                bound_vacuous: bound >= 1.0,
                margin: bound - wilson_hi,
                derived_bounds: CONVENTIONS
                    .iter()
                    .zip(constants)
                    .map(|(&convention, c)| {
                        let bound = (c * t - f_x0) / (k - f_x0);
                        DerivedBound {
                            convention,
                            constant: c,
                            bound,
                            vacuous: bound >= 1.0,
                        }
                    })
                    .collect(),
                decrease_checks: decrease_checks.clone(),
                stopped_paths,
                f_grid_max,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_sphere, wrap_torus, VectorFieldSpec};

    fn torus_spec() -> DiffusionSpec {
        DiffusionSpec::new(
            Manifold::Torus2,
            None,
            vec![VectorFieldSpec::TorusSinCos],
            Convention::Half,
        )
        .unwrap()
    }

    fn sphere_spec(c: Convention) -> DiffusionSpec {
        DiffusionSpec::new(
            Manifold::Sphere(2),
            None,
            vec![VectorFieldSpec::SphereHeightGradient],
            c,
        )
        .unwrap()
    }

    fn circles(x: &[f64]) -> RegionSpec {
        RegionSpec::TorusCircles {
            x_values: x.to_vec(),
            tube_radius: 1.0 / 512.0,
        }
    }

    #[test]
    fn grids_lie_on_the_manifold() {
        assert_eq!(manifold_grid(Manifold::Torus2, 8).len(), 64);
        let s = manifold_grid(Manifold::Sphere(2), 8);
        assert_eq!(s.len(), 2 + 7 * 8);
        for c in &s {
            let r: f64 = c.iter().map(|v| v * v).sum();
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert_eq!(manifold_grid(Manifold::Sphere(1), 5).len(), 5);
    }

    #[test]
    fn torus_verdicts() {
        let spec = torus_spec();
        let r = check_lyapunov(&spec, &OneForm::TorusDy, &circles(&[0.0, 0.5]), 256, 1e-3).unwrap();
        assert_eq!(r.verdict, Verdict::Strict);
        assert!(r.max_symbol < 0.0);
        let r = check_lyapunov(&spec, &OneForm::TorusDy, &circles(&[0.5]), 256, 1e-3).unwrap();
        assert_eq!(r.verdict, Verdict::NonStrictZeroSet);
        assert!(r.violation_points.iter().all(|p| p.coords[0] == 0.0));
        assert_eq!(r.n_violation_points, 256);
    }

    #[test]
    fn reversed_form_is_violated() {
        let spec = torus_spec();
        let r = check_lyapunov(&spec, &OneForm::TorusDy.scaled(-1.0), &circles(&[0.0, 0.5]), 64, 1e-3)
            .unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
    }

    #[test]
    fn sphere_log_form_is_strict() {
        let beta = OneForm::Exact(ScalarField::LogOneMinusSquare(0));
        let w = RegionSpec::SpherePoles { cap_radius: 0.05 };
        for (c, scale) in [(Convention::Half, 1.0), (Convention::Unit, 2.0)] {
            let r = check_lyapunov(&sphere_spec(c), &beta, &w, 256, 1e-3).unwrap();
            assert_eq!(r.verdict, Verdict::Strict);
            // max of -c (1 - x1²) is attained nearest the poles
            let x1 = r.argmax[0];
            assert!((r.max_symbol + scale * (1.0 - x1 * x1)).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_symbol_on_grid_propagates() {
        let beta = OneForm::Exact(ScalarField::LogSinSquared(0));
        let w = circles(&[0.25]);
        let r = check_lyapunov(&torus_spec(), &beta, &w, 16, 1e-3);
        assert!(matches!(r, Err(Error::DomainViolation { .. })));
    }

    #[test]
    fn f_at_zero_time_and_sign() {
        let x0 = wrap_torus([0.25, 0.0]).unwrap();
        let ens = EnsembleSpec::new(50, 1, 1.0, 1e-3).unwrap();
        let z = estimate_f(&torus_spec(), &OneForm::TorusDy, &x0, 0.0, &ens).unwrap();
        assert_eq!(z.value, 0.0);
        let e = estimate_f(&torus_spec(), &OneForm::TorusDy, &x0, 0.5, &ens).unwrap();
        assert!(e.value < 0.0);
        assert!(e.routes_agree, "{e:?}");
        assert_eq!(e.stopped_paths, 0);
    }

    #[test]
    fn sphere_tail_bound() {
        let x0 = project_sphere(&[0.0, 1.0, 0.0]).unwrap();
        let ens = EnsembleSpec::new(400, 3, 0.5, 1e-3).unwrap();
        let f = ScalarField::LogOneMinusSquare(0);
        let reports =
            tail_bound_sweep(&sphere_spec(Convention::Half), &f, &x0, 0.5, &[2.0, 5.0, 50.0], &ens)
                .unwrap();
        assert_eq!(reports[0].bound, 0.5);
        assert!(reports[0].wilson_hi <= 0.5);
        assert!(reports.windows(2).all(|w| w[0].p_hat >= w[1].p_hat));
        let half = &reports[0].derived_bounds[0];
        let unit = &reports[0].derived_bounds[1];
        assert!((half.constant - 1.0).abs() < 1e-9 && (unit.constant - 2.0).abs() < 1e-9);
        assert!((unit.bound - reports[0].bound).abs() < 1e-9);
        assert!(reports[0].decrease_checks[0].consistent, "{:?}", reports[0].decrease_checks);
        assert!(reports[0].f_grid_max <= 0.0);
    }

    #[test]
    fn tail_bound_preconditions() {
        let x0 = project_sphere(&[0.0, 1.0, 0.0]).unwrap();
        let ens = EnsembleSpec::new(4, 3, 0.5, 1e-2).unwrap();
        let f = ScalarField::LogOneMinusSquare(0);
        let spec = sphere_spec(Convention::Half);
        assert!(tail_bound_experiment(&spec, &f, &x0, 0.5, 1.0, &ens).is_err());
        let pole = Point::north_pole(2);
        assert!(tail_bound_experiment(&spec, &f, &pole, 0.5, 2.0, &ens).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn tail_probability_is_monotone(mut ks in proptest::collection::vec(1.01f64..20.0, 2..6), seed in 0u64..1000) {
                ks.sort_by(f64::total_cmp);
                let x0 = project_sphere(&[0.0, 1.0, 0.0]).unwrap();
                let ens = EnsembleSpec::new(20, seed, 0.5, 1e-2).unwrap();
                let f = ScalarField::LogOneMinusSquare(0);
                let r = tail_bound_sweep(&sphere_spec(Convention::Half), &f, &x0, 0.5, &ks, &ens).unwrap();
                for w in r.windows(2) {
                    prop_assert!(w[0].p_hat >= w[1].p_hat);
                    prop_assert!(w[0].bound >= w[1].bound);
                }
            }
        }
    }
}
