//! Asymptotic cycles: long-time averages `(1/T) ∫ α δX` of closed forms,
//! the functional `J(α) = ∫ Sα(L) dμ` against histogram measures, and the
//! rescaled fluctuations `λ^{-1/2} (∫_0^{λt} α δX - ∫_0^{λt} Sα(L) ds)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forms::{step_increment, FormAccumulator, OneForm};
use crate::generator::SymbolEval;
use crate::geometry::{Manifold, Point};
use crate::measures::{burn_in_steps, quadrature, MeasureEstimate};
use crate::sde::{run_ensemble, DiffusionSpec, EnsembleSpec, PathObserver, StepView};
use crate::stats::{self, batch_means, linear_fit};

pub const DEFAULT_BURN_IN: f64 = 0.1;

/// Closed forms whose classes span `H¹(M; ℝ)`.
pub fn h1_basis(m: Manifold) -> Result<Vec<OneForm>> {
    match m {
        Manifold::Torus2 => Ok(vec![OneForm::TorusDx, OneForm::TorusDy]),
        Manifold::Sphere(n) if n >= 2 => Ok(Vec::new()),
        Manifold::Sphere(_) => Err(Error::Unsupported("first cohomology basis".into(), m)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleEstimate {
    pub basis: Vec<String>,
    pub pairings: Vec<f64>,
    /// Batch-means 95% half-widths; NaN for a single path.
    pub ci95: Vec<f64>,
    /// Per form, the time average of every path.
    pub path_averages: Vec<Vec<f64>>,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub burn_in: f64,
}

impl CycleEstimate {
    pub fn pairing(&self, form: &str) -> Option<(f64, f64)> {
        let i = self.basis.iter().position(|b| b == form)?;
        Some((self.pairings[i], self.ci95[i]))
    }
}

pub fn estimate_cycle(
    spec: &DiffusionSpec,
    x0: &Point,
    basis: &[OneForm],
    ens: &EnsembleSpec,
) -> Result<CycleEstimate> {
    estimate_cycle_with_burn_in(spec, x0, basis, ens, DEFAULT_BURN_IN)
}

/// Time averages over `[burn_in · T, T]`.
pub fn estimate_cycle_with_burn_in(
    spec: &DiffusionSpec,
    x0: &Point,
    basis: &[OneForm],
    ens: &EnsembleSpec,
    burn_in: f64,
) -> Result<CycleEstimate> {
    let m = spec.manifold();
    for a in basis {
        a.check_manifold(m)?;
        if !a.is_closed() {
            return Err(Error::NonClosedForm(a.to_string()));
        }
    }
    ens.validate()?;
    let n = ens.n_steps();
    let k0 = burn_in_steps(n, burn_in)?;
    if k0 >= n {
        return Err(Error::EmptyAfterBurnIn);
    }
    let window = (n - k0) as f64 * ens.dt;
    let mut estimate = CycleEstimate {
        basis: basis.iter().map(|a| a.to_string()).collect(),
        pairings: Vec::new(),
        ci95: Vec::new(),
        path_averages: Vec::new(),
        horizon: ens.horizon,
        dt: ens.dt,
        n_paths: ens.n_paths,
        burn_in,
    };
    if basis.is_empty() {
        return Ok(estimate);
    }
    let totals = run_ensemble(
        spec,
        x0,
        ens,
        |_| FormAccumulator::new(m, basis.to_vec()).from_step(k0),
        |_, acc, _| Ok(acc.into_parts().0),
    )?;
    for j in 0..basis.len() {
        let averages: Vec<f64> = totals.iter().map(|t| t[j] / window).collect();
        let bm = batch_means(&averages);
        estimate.pairings.push(bm.mean);
        estimate.ci95.push(bm.ci95);
        estimate.path_averages.push(averages);
    }
    Ok(estimate)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JEstimate {
    pub value: f64,
    /// Bin-variation bound `Σ μ(bin) · max_probes |Sα(L) - Sα(L)(centre)|`.
    pub quadrature_allowance: f64,
}

/// `Σ_bins Sα(L)(centre) μ(bin)`.
pub fn estimate_j(spec: &DiffusionSpec, mu: &MeasureEstimate, alpha: &OneForm) -> Result<f64> {
    estimate_j_with_allowance(spec, mu, alpha).map(|j| j.value)
}

pub fn estimate_j_with_allowance(
    spec: &DiffusionSpec,
    mu: &MeasureEstimate,
    alpha: &OneForm,
) -> Result<JEstimate> {
    if mu.manifold != spec.manifold() {
        return Err(Error::ManifoldMismatch {
            expected: spec.manifold(),
            found: mu.manifold,
        });
    }
    let symbol = SymbolEval::new(spec, alpha)?;
    let (value, quadrature_allowance, _) = quadrature(mu, |x| symbol.eval_checked(x))?;
    Ok(JEstimate {
        value,
        quadrature_allowance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub form: String,
    pub lambdas: Vec<f64>,
    pub times: Vec<f64>,
    /// `variances[i][j]`: sample variance over paths at `(λ_i, t_j)`.
    pub variances: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    /// Per λ, least-squares slope and R² of variance against t.
    pub slopes: Vec<f64>,
    pub r_squared: Vec<f64>,
    /// Marginal shape at the largest λ and t.
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub n_paths: usize,
    pub dt: f64,
}

/// Running martingale part `∫ α δX - ∫ Sα(L) ds` sampled at fixed steps.
struct MartingaleSampler<'a> {
    alpha: &'a OneForm,
    symbol: SymbolEval<'a>,
    manifold: Manifold,
    record: &'a BTreeMap<usize, usize>,
    integral: f64,
    drift: f64,
    samples: Vec<f64>,
}

impl PathObserver for MartingaleSampler<'_> {
    fn observe(&mut self, s: &StepView<'_>) -> Result<()> {
        self.integral += step_increment(self.alpha, self.manifold, s.from, s.to, s.index)?;
        self.drift += 0.5 * s.dt * (self.symbol.eval_checked(s.from)? + self.symbol.eval_checked(s.to)?);
        if let Some(&slot) = self.record.get(&(s.index + 1)) {
            self.samples[slot] = self.integral - self.drift;
        }
        Ok(())
    }
}

/// Simulates each path once up to `max λ · max t` and reads off the
/// rescaled martingale part at every `(λ, t)`; the ensemble horizon is
/// ignored.
pub fn fluctuation_experiment(
    spec: &DiffusionSpec,
    x0: &Point,
    alpha: &OneForm,
    lambdas: &[f64],
    times: &[f64],
    ens: &EnsembleSpec,
) -> Result<FluctuationReport> {
    alpha.check_manifold(spec.manifold())?;
    if !alpha.is_closed() {
        return Err(Error::NonClosedForm(alpha.to_string()));
    }
    if lambdas.is_empty() || times.is_empty() {
        return Err(invalid("λ and t grids must be non-empty"));
    }
    if lambdas.iter().chain(times).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid("λ and t grid values must be positive"));
    }
    let lam_max = lambdas.iter().cloned().fold(0.0, f64::max);
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let run = ens.with_horizon(lam_max * t_max);
    run.validate()?;

    let step_of = |l: f64, t: f64| ((l * t / ens.dt).round() as usize).max(1);
    let mut record = BTreeMap::new();
    for &l in lambdas {
        for &t in times {
            let next = record.len();
            record.entry(step_of(l, t)).or_insert(next);
        }
    }
    let symbol = SymbolEval::new(spec, alpha)?;
    let per_path = run_ensemble(
        spec,
        x0,
        &run,
        |_| MartingaleSampler {
            alpha,
            symbol: symbol.clone(),
            manifold: spec.manifold(),
            record: &record,
            integral: 0.0,
            drift: 0.0,
            samples: vec![0.0; record.len()],
        },
        |_, s, _| Ok(s.samples),
    )?;

    let column = |l: f64, t: f64| -> Vec<f64> {
        let slot = record[&step_of(l, t)];
        per_path.iter().map(|s| s[slot] / l.sqrt()).collect()
    };
    let mut variances = Vec::with_capacity(lambdas.len());
    let mut means = Vec::with_capacity(lambdas.len());
    let mut slopes = Vec::with_capacity(lambdas.len());
    let mut r_squared = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let cols: Vec<Vec<f64>> = times.iter().map(|&t| column(l, t)).collect();
        let var: Vec<f64> = cols
            .iter()
            .map(|c| if c.len() > 1 { stats::variance(c) } else { 0.0 })
            .collect();
        means.push(cols.iter().map(|c| stats::mean(c)).collect());
        if times.len() > 1 {
            let fit = linear_fit(times, &var);
            slopes.push(fit.slope);
            r_squared.push(fit.r_squared);
        } else {
            slopes.push(var[0] / times[0]);
            r_squared.push(f64::NAN);
        }
        variances.push(var);
    }
    let last = column(lam_max, t_max);
    Ok(FluctuationReport {
        form: alpha.to_string(),
        lambdas: lambdas.to_vec(),
        times: times.to_vec(),
        variances,
        means,
        slopes,
        r_squared,
        skewness: stats::skewness(&last),
        excess_kurtosis: stats::excess_kurtosis(&last),
        n_paths: ens.n_paths,
        dt: ens.dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{wrap_torus, ScalarField, VectorFieldSpec};
    use crate::measures::{Binning, MeasureEstimate};
    use crate::sde::Convention;

    fn torus_spec() -> DiffusionSpec {
        DiffusionSpec::new(
            Manifold::Torus2,
            None,
            vec![VectorFieldSpec::TorusSinCos],
            Convention::Half,
        )
        .unwrap()
    }

    fn circle_measure(x_row: usize) -> MeasureEstimate {
        let binning = Binning::DEFAULT_TORUS;
        let mut masses = vec![0.0; binning.n_bins()];
        for j in 0..64 {
            masses[x_row * 64 + j] = 1.0 / 64.0;
        }
        MeasureEstimate {
            manifold: Manifold::Torus2,
            binning,
            masses,
            sample_count: 64,
            effective_samples: f64::INFINITY,
        }
    }

    #[test]
    fn basis_per_manifold() {
        assert_eq!(h1_basis(Manifold::Torus2).unwrap().len(), 2);
        assert!(h1_basis(Manifold::Sphere(2)).unwrap().is_empty());
        assert!(h1_basis(Manifold::Sphere(1)).is_err());
    }

    #[test]
    fn sphere_estimate_is_empty() {
        let spec = DiffusionSpec::new(
            Manifold::Sphere(2),
            None,
            vec![VectorFieldSpec::SphereHeightGradient],
            Convention::Half,
        )
        .unwrap();
        let ens = EnsembleSpec::new(4, 1, 1.0, 0.01).unwrap();
        let basis = h1_basis(Manifold::Sphere(2)).unwrap();
        let e = estimate_cycle(&spec, &Point::north_pole(2), &basis, &ens).unwrap();
        assert!(e.basis.is_empty() && e.pairings.is_empty() && e.ci95.is_empty());
    }

    #[test]
    fn non_closed_basis_rejected() {
        let user = crate::forms::UserOneForm {
            name: "x dy".into(),
            manifold: Manifold::Torus2,
            covector: std::sync::Arc::new(|x: &[f64]| [0.0, x[0]].into_iter().collect()),
            closed: false,
            singular_distance: None,
        };
        let ens = EnsembleSpec::new(2, 1, 0.1, 1e-3).unwrap();
        let x0 = wrap_torus([0.25, 0.0]).unwrap();
        let r = estimate_cycle(&torus_spec(), &x0, &[OneForm::User(user)], &ens);
        assert!(matches!(r, Err(Error::NonClosedForm(_))));
    }

    #[test]
    fn constant_rotation_has_its_velocity_as_cycle() {
        let spec = DiffusionSpec::deterministic(
            Manifold::Torus2,
            Some(VectorFieldSpec::TorusCoordinate(1)),
        )
        .unwrap();
        let x0 = wrap_torus([0.3, 0.1]).unwrap();
        let ens = EnsembleSpec::new(3, 1, 5.0, 1e-2).unwrap();
        let basis = h1_basis(Manifold::Torus2).unwrap();
        let e = estimate_cycle(&spec, &x0, &basis, &ens).unwrap();
        assert!(e.pairings[0].abs() < 1e-12);
        assert!((e.pairings[1] - 1.0).abs() < 1e-12);
        assert!(e.ci95[1].abs() < 1e-12);
    }

    #[test]
    fn exact_form_pairing_is_small() {
        let x0 = wrap_torus([0.25, 0.0]).unwrap();
        let ens = EnsembleSpec::new(8, 5, 20.0, 1e-3).unwrap();
        let f = ScalarField::SinTwoPi(1);
        let e = estimate_cycle(&torus_spec(), &x0, &[OneForm::Exact(f)], &ens).unwrap();
        // |∫ df| ≤ 2 sup|f| plus midpoint error
        assert!(e.pairings[0].abs() <= 5.0 / 18.0, "{:?}", e.pairings);
        assert!(e.ci95[0] > 0.0);
    }

    #[test]
    fn j_on_measures() {
        let spec = torus_spec();
        assert_eq!(estimate_j(&spec, &circle_measure(32), &OneForm::TorusDy).unwrap(), 0.0);
        let uniform = MeasureEstimate::uniform(Manifold::Torus2, Binning::DEFAULT_TORUS).unwrap();
        let j = estimate_j(&spec, &uniform, &OneForm::TorusDy).unwrap();
        assert!((j + std::f64::consts::FRAC_PI_2).abs() < 1e-12, "{j}");
        let unit = spec.clone().with_convention(Convention::Unit);
        let j = estimate_j(&unit, &uniform, &OneForm::TorusDy).unwrap();
        assert!((j + std::f64::consts::PI).abs() < 1e-12, "{j}");
        let df = OneForm::Exact(ScalarField::Coordinate(1));
        let j = estimate_j(&spec, &circle_measure(0), &df).unwrap();
        assert!(j.abs() < 1e-12);
    }

    #[test]
    fn singular_form_on_massive_bin() {
        let spec = torus_spec();
        let alpha = OneForm::Exact(ScalarField::LogSinSquared(0));
        let r = estimate_j(&spec, &circle_measure(0), &alpha);
        assert!(matches!(r, Err(Error::DomainViolation { .. })));
    }

    #[test]
    fn deterministic_fluctuations_vanish() {
        let spec = DiffusionSpec::deterministic(
            Manifold::Torus2,
            Some(VectorFieldSpec::TorusCoordinate(0)),
        )
        .unwrap();
        let x0 = wrap_torus([0.1, 0.2]).unwrap();
        let ens = EnsembleSpec::new(5, 1, 1.0, 1e-2).unwrap();
        let r = fluctuation_experiment(&spec, &x0, &OneForm::TorusDx, &[1.0, 4.0], &[0.5, 1.0], &ens)
            .unwrap();
        assert!(r.variances.iter().flatten().all(|&v| v == 0.0), "{:?}", r.variances);
    }

    #[test]
    fn fluctuation_variances_grow_with_t() {
        let x0 = wrap_torus([0.25, 0.0]).unwrap();
        let ens = EnsembleSpec::new(200, 3, 1.0, 1e-3).unwrap();
        let r = fluctuation_experiment(
            &torus_spec(),
            &x0,
            &OneForm::TorusDy,
            &[1.0, 4.0],
            &[0.25, 0.5, 0.75, 1.0],
            &ens,
        )
        .unwrap();
        assert!(r.variances.iter().flatten().all(|&v| v >= 0.0));
        assert!(r.slopes.iter().all(|&s| s > 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn j_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, k in 1usize..40) {
                let spec = torus_spec();
                let mu = MeasureEstimate::uniform(Manifold::Torus2, Binning::TorusGrid { k }).unwrap();
                let f = ScalarField::SinSinProduct(0.3);
                let combo = OneForm::TorusDy.scaled(a).plus(OneForm::Exact(f.clone()).scaled(b));
                let lhs = estimate_j(&spec, &mu, &combo).unwrap();
                let rhs = a * estimate_j(&spec, &mu, &OneForm::TorusDy).unwrap()
                    + b * estimate_j(&spec, &mu, &OneForm::Exact(f)).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }
}
