//! The generator `L = V + c Σ X_i²` on scalar fields, the Stratonovich symbol
//! `Sα(L) = α(V) + c Σ X_i(α(X_i))` on 1-forms, and the martingale test that
//! characterises `L` through simulated paths.
//!
//! Two evaluation routes are available. The analytic one combines ambient
//! gradients, Hessians and field Jacobians of catalog entries:
//! `X(Xf) = Hf(X, X) + ∇f · (DX) X` and `X(α(X)) = (Da X) · X + a · (DX) X`.
//! The finite-difference one nests central differences along retracted
//! curves `t ↦ Retract(y + t X(y))` and works for arbitrary closures.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::OneForm;
use crate::geometry::{dot, Coords, LiftTracker, Manifold, Point, ScalarField, FD_STEP};
use crate::sde::{run_ensemble, Convention, DiffusionSpec, EnsembleSpec, PathObserver, StepView};
use crate::stats::Summary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    AnalyticCatalog,
    DirectionalFiniteDifference,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::AnalyticCatalog => "analytic_catalog",
            Method::DirectionalFiniteDifference => "directional_finite_difference",
        })
    }
}

fn fields_analytic(spec: &DiffusionSpec) -> bool {
    spec.drift().is_none_or(|v| v.has_analytic_jacobian())
        && spec.noise().iter().all(|x| x.has_analytic_jacobian())
}

/// Central difference of `phi` along `t ↦ Retract(x + t w)`.
fn directional<F: Fn(&[f64]) -> f64>(m: Manifold, x: &[f64], w: &[f64], phi: F) -> f64 {
    let p = m.curve_point(x, w, FD_STEP);
    let q = m.curve_point(x, w, -FD_STEP);
    (phi(&p) - phi(&q)) / (2.0 * FD_STEP)
}

/// `Lf` evaluator with the route fixed up front.
#[derive(Clone, Debug)]
pub struct GeneratorEval<'a> {
    spec: &'a DiffusionSpec,
    f: &'a ScalarField,
    method: Method,
}

impl<'a> GeneratorEval<'a> {
    /// Analytic route when the function and every field admit it.
    pub fn new(spec: &'a DiffusionSpec, f: &'a ScalarField) -> Result<Self> {
        let method = if f.has_analytic_derivatives() && fields_analytic(spec) {
            Method::AnalyticCatalog
        } else {
            Method::DirectionalFiniteDifference
        };
        Self::with_method(spec, f, method)
    }

    pub fn with_method(spec: &'a DiffusionSpec, f: &'a ScalarField, method: Method) -> Result<Self> {
        f.check_manifold(spec.manifold())?;
        if method == Method::AnalyticCatalog && !(f.has_analytic_derivatives() && fields_analytic(spec)) {
            return Err(Error::InvalidParameter(format!(
                "no analytic generator for {f} under {}",
                spec.fingerprint()
            )));
        }
        Ok(GeneratorEval { spec, f, method })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// `Lf(x)` on raw coordinates, without domain checks.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.method {
            Method::AnalyticCatalog => self.analytic(x),
            Method::DirectionalFiniteDifference => self.finite_difference(x),
        }
    }

    pub fn eval_checked(&self, x: &[f64]) -> Result<f64> {
        let margin = match self.method {
            Method::AnalyticCatalog => 0.0,
            Method::DirectionalFiniteDifference => 2.0 * FD_STEP,
        };
        self.f.check_domain(x, margin)?;
        let v = self.eval(x);
        if !v.is_finite() {
            return Err(Error::DomainViolation {
                what: format!("L {}", self.f),
                point: x.to_vec(),
            });
        }
        Ok(v)
    }

    fn analytic(&self, x: &[f64]) -> f64 {
        let m = self.spec.manifold();
        let g = self.f.gradient(x).expect("analytic route");
        let h = self.f.hessian(x).expect("analytic route");
        let first = self.spec.drift().map_or(0.0, |v| dot(&g, &v.eval_raw(m, x)));
        let second: f64 = self
            .spec
            .noise()
            .iter()
            .map(|field| {
                let xv = field.eval_raw(m, x);
                let j = field.jacobian(m, x).expect("analytic route");
                h.bilinear(&xv, &xv) + dot(&g, &j.mul_vec(&xv))
            })
            .sum();
        first + self.spec.convention().coefficient() * second
    }

    fn finite_difference(&self, x: &[f64]) -> f64 {
        let m = self.spec.manifold();
        let f = |y: &[f64]| self.f.value(y);
        let first = self
            .spec
            .drift()
            .map_or(0.0, |v| directional(m, x, &v.eval_raw(m, x), f));
        let second: f64 = self
            .spec
            .noise()
            .iter()
            .map(|field| {
                let xf = |y: &[f64]| directional(m, y, &field.eval_raw(m, y), f);
                directional(m, x, &field.eval_raw(m, x), xf)
            })
            .sum();
        first + self.spec.convention().coefficient() * second
    }
}

/// `Lf(x) = Vf(x) + c Σ X_i(X_i f)(x)` with `c` from the spec's convention.
pub fn apply_generator(spec: &DiffusionSpec, f: &ScalarField, x: &Point) -> Result<f64> {
    spec.check_point(x)?;
    GeneratorEval::new(spec, f)?.eval_checked(x.coords())
}

/// [`apply_generator`] by nested central differences only.
pub fn apply_generator_fd(spec: &DiffusionSpec, f: &ScalarField, x: &Point) -> Result<f64> {
    spec.check_point(x)?;
    GeneratorEval::with_method(spec, f, Method::DirectionalFiniteDifference)?
        .eval_checked(x.coords())
}

/// `Sα(L)` evaluator with the route fixed up front.
#[derive(Clone, Debug)]
pub struct SymbolEval<'a> {
    spec: &'a DiffusionSpec,
    alpha: &'a OneForm,
    method: Method,
}

impl<'a> SymbolEval<'a> {
    pub fn new(spec: &'a DiffusionSpec, alpha: &'a OneForm) -> Result<Self> {
        let method = if alpha.has_analytic_derivatives() && fields_analytic(spec) {
            Method::AnalyticCatalog
        } else {
            Method::DirectionalFiniteDifference
        };
        Self::with_method(spec, alpha, method)
    }

    pub fn with_method(spec: &'a DiffusionSpec, alpha: &'a OneForm, method: Method) -> Result<Self> {
        alpha.check_manifold(spec.manifold())?;
        if method == Method::AnalyticCatalog
            && !(alpha.has_analytic_derivatives() && fields_analytic(spec))
        {
            return Err(Error::InvalidParameter(format!(
                "no analytic symbol for {alpha} under {}",
                spec.fingerprint()
            )));
        }
        Ok(SymbolEval {
            spec,
            alpha,
            method,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.method {
            Method::AnalyticCatalog => self.analytic(x),
            Method::DirectionalFiniteDifference => self.finite_difference(x),
        }
    }

    pub fn eval_checked(&self, x: &[f64]) -> Result<f64> {
        let margin = match self.method {
            Method::AnalyticCatalog => 0.0,
            Method::DirectionalFiniteDifference => 2.0 * FD_STEP,
        };
        if self.alpha.near_singular(x, margin) {
            return Err(Error::DomainViolation {
                what: self.alpha.to_string(),
                point: x.to_vec(),
            });
        }
        let v = self.eval(x);
        if !v.is_finite() {
            return Err(Error::DomainViolation {
                what: format!("S {} (L)", self.alpha),
                point: x.to_vec(),
            });
        }
        Ok(v)
    }

    fn analytic(&self, x: &[f64]) -> f64 {
        let m = self.spec.manifold();
        let a = self.alpha.covector(m, x);
        let da = self.alpha.covector_jacobian(x).expect("analytic route");
        let first = self.spec.drift().map_or(0.0, |v| dot(&a, &v.eval_raw(m, x)));
        let second: f64 = self
            .spec
            .noise()
            .iter()
            .map(|field| {
                let xv = field.eval_raw(m, x);
                let j = field.jacobian(m, x).expect("analytic route");
                da.bilinear(&xv, &xv) + dot(&a, &j.mul_vec(&xv))
            })
            .sum();
        first + self.spec.convention().coefficient() * second
    }

    fn finite_difference(&self, x: &[f64]) -> f64 {
        let m = self.spec.manifold();
        let first = self
            .spec
            .drift()
            .map_or(0.0, |v| self.alpha.eval_raw(m, x, &v.eval_raw(m, x)));
        let second: f64 = self
            .spec
            .noise()
            .iter()
            .map(|field| {
                let ax = |y: &[f64]| self.alpha.eval_raw(m, y, &field.eval_raw(m, y));
                directional(m, x, &field.eval_raw(m, x), ax)
            })
            .sum();
        first + self.spec.convention().coefficient() * second
    }
}

/// `Sα(L)(x)`; for `α = df` this equals `Lf(x)`.
pub fn stratonovich_symbol(spec: &DiffusionSpec, alpha: &OneForm, x: &Point) -> Result<f64> {
    spec.check_point(x)?;
    SymbolEval::new(spec, alpha)?.eval_checked(x.coords())
}

/// [`stratonovich_symbol`] by central differences of `α(X_i)` along `X_i`.
pub fn stratonovich_symbol_fd(spec: &DiffusionSpec, alpha: &OneForm, x: &Point) -> Result<f64> {
    spec.check_point(x)?;
    SymbolEval::with_method(spec, alpha, Method::DirectionalFiniteDifference)?
        .eval_checked(x.coords())
}

/// A closed-form expression quoted for comparison with computed values.
#[derive(Clone)]
pub struct Reference {
    pub expression: String,
    pub eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Reference")
            .field("expression", &self.expression)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub function: String,
    pub diffusion: String,
    pub convention: Convention,
    pub method: Method,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Finite-difference values when `method` is analytic.
    pub fd_values: Option<Vec<f64>>,
    /// Present only when both routes were evaluated.
    pub max_abs_deviation: Option<f64>,
    pub reference_expression: Option<String>,
    pub reference_values: Option<Vec<f64>>,
    pub max_abs_reference_gap: Option<f64>,
}

/// Evaluates `Lf` at the given points by every available route.
pub fn generator_report(
    spec: &DiffusionSpec,
    f: &ScalarField,
    points: &[Point],
    reference: Option<&Reference>,
) -> Result<GeneratorReport> {
    let main = GeneratorEval::new(spec, f)?;
    let mut values = Vec::with_capacity(points.len());
    for p in points {
        spec.check_point(p)?;
        values.push(main.eval_checked(p.coords())?);
    }
    let (fd_values, max_abs_deviation) = if main.method() == Method::AnalyticCatalog {
        let fd = GeneratorEval::with_method(spec, f, Method::DirectionalFiniteDifference)?;
        let fdv = points
            .iter()
            .map(|p| fd.eval_checked(p.coords()))
            .collect::<Result<Vec<_>>>()?;
        let dev = max_gap(&values, &fdv);
        (Some(fdv), Some(dev))
    } else {
        (None, None)
    };
    let reference_values =
        reference.map(|r| points.iter().map(|p| (r.eval)(p.coords())).collect::<Vec<_>>());
    let max_abs_reference_gap = reference_values.as_ref().map(|r| max_gap(&values, r));
    Ok(GeneratorReport {
        function: f.to_string(),
        diffusion: spec.fingerprint(),
        convention: spec.convention(),
        method: main.method(),
        points: points.iter().map(|p| p.coords().to_vec()).collect(),
        values,
        fd_values,
        max_abs_deviation,
        reference_expression: reference.map(|r| r.expression.clone()),
        reference_values,
        max_abs_reference_gap,
    })
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTestReport {
    pub function: String,
    pub convention: Convention,
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub mean: f64,
    pub std_err: f64,
    pub z_score: f64,
    /// `|mean| ≤ 3 std_err`.
    pub pass: bool,
}

/// Accumulates `R_T = f(X_T) - f(X_0) - ∫ Lf(X_s) ds` (trapezoidal) with
/// `f` evaluated on the lift of torus paths.
struct ResidualObserver<'a> {
    generator: &'a GeneratorEval<'a>,
    lift: LiftTracker,
    integral: f64,
    last: f64,
}

impl PathObserver for ResidualObserver<'_> {
    fn observe(&mut self, s: &StepView<'_>) -> Result<()> {
        let next = self.generator.eval_checked(s.to)?;
        self.integral += 0.5 * s.dt * (self.last + next);
        self.last = next;
        self.lift.advance(s.from, s.to);
        Ok(())
    }
}

/// Monte Carlo test of the martingale property of
/// `f(X_t) - f(X_0) - ∫_0^t Lf(X_s) ds` at the horizon.
pub fn martingale_residual_test(
    spec: &DiffusionSpec,
    f: &ScalarField,
    x0: &Point,
    ens: &EnsembleSpec,
) -> Result<MartingaleTestReport> {
    let generator = GeneratorEval::new(spec, f)?;
    let start = generator.eval_checked(x0.coords())?;
    let f0 = f.value(x0.coords());
    let residuals = run_ensemble(
        spec,
        x0,
        ens,
        |_| ResidualObserver {
            generator: &generator,
            lift: LiftTracker::new(x0),
            integral: 0.0,
            last: start,
        },
        |_, obs, _| Ok(f.value(obs.lift.lift()) - f0 - obs.integral),
    )?;
    let s = Summary::of(&residuals);
    Ok(MartingaleTestReport {
        function: f.to_string(),
        convention: spec.convention(),
        n_paths: ens.n_paths,
        horizon: ens.horizon,
        dt: ens.dt,
        mean: s.mean,
        std_err: s.std_err,
        z_score: s.z_score(),
        pass: s.within_sigma(3.0),
    })
}

/// Random points of `m` from a fixed seed, for identity checks.
pub fn sample_points(m: Manifold, n: usize, seed: u64) -> Vec<Point> {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| match m {
            Manifold::Torus2 => {
                let c: Coords = (0..2).map(|_| rng.random::<f64>()).collect();
                Point::new(m, &c).expect("unit square point")
            }
            Manifold::Sphere(_) => {
                let c: Coords = (0..m.ambient_dim())
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                crate::geometry::project_sphere(&c).expect("nonzero Gaussian vector")
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_sphere, wrap_torus, VectorFieldSpec};
    use std::f64::consts::PI;

    fn torus(conv: Convention) -> DiffusionSpec {
        DiffusionSpec::new(
            Manifold::Torus2,
            None,
            vec![VectorFieldSpec::TorusSinCos],
            conv,
        )
        .unwrap()
    }

    fn sphere(conv: Convention) -> DiffusionSpec {
        DiffusionSpec::new(
            Manifold::Sphere(2),
            None,
            vec![VectorFieldSpec::SphereHeightGradient],
            conv,
        )
        .unwrap()
    }

    fn gradient_drift() -> DiffusionSpec {
        DiffusionSpec::new(
            Manifold::Torus2,
            Some(VectorFieldSpec::GradientOfScalar(ScalarField::SinSinProduct(0.1))),
            vec![
                VectorFieldSpec::TorusCoordinate(0),
                VectorFieldSpec::TorusCoordinate(1),
            ],
            Convention::Half,
        )
        .unwrap()
    }

    #[test]
    fn torus_y_at_quarter() {
        let x = wrap_torus([0.25, 0.4]).unwrap();
        let f = ScalarField::Coordinate(1);
        assert!((apply_generator(&torus(Convention::Half), &f, &x).unwrap() + PI).abs() < 1e-12);
        assert!((apply_generator_fd(&torus(Convention::Half), &f, &x).unwrap() + PI).abs() < 1e-5);
        assert!(
            (apply_generator(&torus(Convention::Unit), &f, &x).unwrap() + 2.0 * PI).abs() < 1e-12
        );
        let s = stratonovich_symbol(&torus(Convention::Half), &OneForm::TorusDy, &x).unwrap();
        assert!((s + PI).abs() < 1e-12);
        let sx = stratonovich_symbol(&torus(Convention::Half), &OneForm::TorusDx, &x).unwrap();
        assert!(sx.abs() < 1e-12);
        let sx_fd = stratonovich_symbol_fd(&torus(Convention::Half), &OneForm::TorusDx, &x).unwrap();
        assert!(sx_fd.abs() < 1e-8);
    }

    #[test]
    fn constants_are_annihilated() {
        let f = ScalarField::Constant(3.5);
        for p in sample_points(Manifold::Sphere(2), 5, 1) {
            assert_eq!(apply_generator(&sphere(Convention::Half), &f, &p).unwrap(), 0.0);
            assert_eq!(apply_generator_fd(&sphere(Convention::Half), &f, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn sphere_log_at_equator() {
        let x = project_sphere(&[0.0, 1.0, 0.0]).unwrap();
        let f = ScalarField::LogOneMinusSquare(0);
        let half = apply_generator(&sphere(Convention::Half), &f, &x).unwrap();
        let unit = apply_generator(&sphere(Convention::Unit), &f, &x).unwrap();
        assert!((half + 1.0).abs() < 1e-12);
        assert!((unit + 2.0).abs() < 1e-12);
        let fd = apply_generator_fd(&sphere(Convention::Half), &f, &x).unwrap();
        assert!((fd + 1.0).abs() < 1e-5);
        // general point: -(1 - x1^2) under Half
        let p = project_sphere(&[0.6, 0.3, -0.2]).unwrap();
        let x1 = p.coords()[0];
        let v = apply_generator(&sphere(Convention::Half), &f, &p).unwrap();
        assert!((v + (1.0 - x1 * x1)).abs() < 1e-12);
    }

    #[test]
    fn sphere_polynomials() {
        for p in sample_points(Manifold::Sphere(2), 10, 2) {
            let x1 = p.coords()[0];
            let s = 1.0 - x1 * x1;
            let f1 = apply_generator(&sphere(Convention::Half), &ScalarField::HalfSquare(0), &p)
                .unwrap();
            assert!((f1 - 0.5 * (1.0 - 3.0 * x1 * x1) * s).abs() < 1e-12);
            let f2 = apply_generator(&sphere(Convention::Unit), &ScalarField::Coordinate(0), &p)
                .unwrap();
            assert!((f2 + 2.0 * x1 * s).abs() < 1e-12);
        }
    }

    #[test]
    fn torus_log_sin_squared() {
        let x = wrap_torus([0.1, 0.0]).unwrap();
        let s2 = (2.0 * PI * 0.1).sin().powi(2);
        let f = ScalarField::LogSinSquared(0);
        let half = apply_generator(&torus(Convention::Half), &f, &x).unwrap();
        assert!((half + 4.0 * PI * PI * s2).abs() < 1e-10);
        let fd = apply_generator_fd(&torus(Convention::Half), &f, &x).unwrap();
        assert!((fd - half).abs() < 1e-5 * half.abs());
        let on_circle = wrap_torus([0.5, 0.0]).unwrap();
        assert!(matches!(
            apply_generator(&torus(Convention::Half), &f, &on_circle),
            Err(Error::DomainViolation { .. })
        ));
    }

    #[test]
    fn symbol_of_exact_form_is_generator() {
        let cases: Vec<(DiffusionSpec, Vec<ScalarField>)> = vec![
            (
                torus(Convention::Half),
                vec![
                    ScalarField::Coordinate(0),
                    ScalarField::Coordinate(1),
                    ScalarField::SinTwoPi(1),
                    ScalarField::CosTwoPi(0),
                    ScalarField::SinSinProduct(0.3),
                ],
            ),
            (
                gradient_drift(),
                vec![ScalarField::SinTwoPi(0), ScalarField::SinSinProduct(1.0)],
            ),
            (
                sphere(Convention::Unit),
                vec![
                    ScalarField::HalfSquare(0),
                    ScalarField::Coordinate(2),
                    ScalarField::LogOneMinusSquare(0),
                ],
            ),
        ];
        for (spec, fs) in cases {
            for f in fs {
                let a = OneForm::Exact(f.clone());
                for p in sample_points(spec.manifold(), 20, 3) {
                    let l = apply_generator(&spec, &f, &p).unwrap();
                    let s = stratonovich_symbol(&spec, &a, &p).unwrap();
                    let s_fd = stratonovich_symbol_fd(&spec, &a, &p).unwrap();
                    assert!((l - s).abs() <= 1e-12 * (1.0 + l.abs()), "{f} {l} {s}");
                    assert!((l - s_fd).abs() <= 1e-6 * (1.0 + l.abs()), "{f} {l} {s_fd}");
                }
            }
        }
    }

    #[test]
    fn finite_differences_match_catalog() {
        let spec = torus(Convention::Half);
        let f = ScalarField::Coordinate(1);
        let points = sample_points(Manifold::Torus2, 20, 4);
        let r = generator_report(&spec, &f, &points, None).unwrap();
        assert_eq!(r.method, Method::AnalyticCatalog);
        assert!(r.max_abs_deviation.unwrap() < 1e-6, "{:?}", r.max_abs_deviation);
    }

    #[test]
    fn report_carries_reference_values() {
        let spec = sphere(Convention::Half);
        let f = ScalarField::LogOneMinusSquare(0);
        let reference = Reference {
            expression: "-2(1 - x1^2)".into(),
            eval: Arc::new(|x: &[f64]| -2.0 * (1.0 - x[0] * x[0])),
        };
        let points = sample_points(Manifold::Sphere(2), 5, 5);
        let r = generator_report(&spec, &f, &points, Some(&reference)).unwrap();
        let gap = r.max_abs_reference_gap.unwrap();
        let expected = points
            .iter()
            .map(|p| 1.0 - p.coords()[0].powi(2))
            .fold(0.0, f64::max);
        assert!((gap - expected).abs() < 1e-12);
    }

    #[test]
    fn user_fields_use_finite_differences() {
        use crate::geometry::UserScalarField;
        let f = ScalarField::User(UserScalarField {
            name: "y-copy".into(),
            manifold: Manifold::Torus2,
            value: Arc::new(|x: &[f64]| x[1]),
            singular_distance: None,
        });
        let x = wrap_torus([0.25, 0.3]).unwrap();
        let spec = torus(Convention::Half);
        let g = GeneratorEval::new(&spec, &f).unwrap();
        assert_eq!(g.method(), Method::DirectionalFiniteDifference);
        assert!((g.eval(x.coords()) + PI).abs() < 1e-5);
    }

    #[test]
    fn deterministic_residual_is_quadrature_error() {
        let spec =
            DiffusionSpec::deterministic(Manifold::Torus2, Some(VectorFieldSpec::TorusSinCos))
                .unwrap();
        let ens = EnsembleSpec::new(2, 1, 1.0, 1e-3).unwrap();
        let x0 = wrap_torus([0.1, 0.0]).unwrap();
        let r = martingale_residual_test(&spec, &ScalarField::Coordinate(1), &x0, &ens).unwrap();
        assert!(r.mean.abs() < 1e-6, "{}", r.mean);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn symbol_is_linear(x in 0.0f64..1.0, y in 0.0f64..1.0, a in -3.0f64..3.0) {
                let spec = gradient_drift();
                let p = wrap_torus([x, y]).unwrap();
                let al = OneForm::TorusDx;
                let be = OneForm::Exact(ScalarField::SinTwoPi(1));
                let combo = al.clone().scaled(a).plus(be.clone());
                let lhs = stratonovich_symbol(&spec, &combo, &p).unwrap();
                let rhs = a * stratonovich_symbol(&spec, &al, &p).unwrap()
                    + stratonovich_symbol(&spec, &be, &p).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }
}
