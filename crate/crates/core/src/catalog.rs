//! Ready-made diffusions and the closed-form expressions quoted for them.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::generator::Reference;
use crate::geometry::{sin_cos_2pi, Manifold, ScalarField, VectorFieldSpec};
use crate::sde::{Convention, DiffusionSpec};

/// Torus, no drift, one noise field `sin(2πx) ∂_x + cos(2πx) ∂_y`.
pub fn torus_example(c: Convention) -> DiffusionSpec {
    DiffusionSpec::new(Manifold::Torus2, None, vec![VectorFieldSpec::TorusSinCos], c)
        .expect("non-empty noise")
}

/// `S^n`, no drift, one noise field: the gradient of the height `x_1`.
pub fn sphere_example(n: usize, c: Convention) -> DiffusionSpec {
    DiffusionSpec::new(
        Manifold::Sphere(n),
        None,
        vec![VectorFieldSpec::SphereHeightGradient],
        c,
    )
    .expect("non-empty noise")
}

/// Drift potential of the gradient control.
pub fn gradient_potential() -> ScalarField {
    ScalarField::SinSinProduct(0.1)
}

/// Flat Brownian motion on the torus plus the drift `∇F`,
/// `F = sin(2πx) sin(2πy) / 10`.
pub fn torus_gradient_control(c: Convention) -> DiffusionSpec {
    DiffusionSpec::new(
        Manifold::Torus2,
        Some(VectorFieldSpec::GradientOfScalar(gradient_potential())),
        vec![VectorFieldSpec::TorusCoordinate(0), VectorFieldSpec::TorusCoordinate(1)],
        c,
    )
    .expect("non-empty noise")
}

fn reference(expression: &str, eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Reference {
    Reference {
        expression: expression.into(),
        eval: Arc::new(eval),
    }
}

fn sin2(x: f64) -> f64 {
    let (s, _) = sin_cos_2pi(x);
    s * s
}

/// Quoted `Sβ(L)` for `β = dy` on the torus example.
pub fn torus_dy_symbol() -> Reference {
    reference("-pi sin^2(2 pi x)", |x| -PI * sin2(x[0]))
}

/// Quoted `Lf` for `f = y` on the torus example.
pub fn torus_y_generator() -> Reference {
    reference("-pi sin^2(2 pi x)", |x| -PI * sin2(x[0]))
}

/// Quoted `Lf` for `f = ln sin²(2πx)` on the torus example.
pub fn torus_log_sin_generator() -> Reference {
    reference("-2 pi^2 sin^2(2 pi x)", |x| -2.0 * PI * PI * sin2(x[0]))
}

/// Quoted `Lf` for `f = ln(1 - x_1²)` on the sphere example.
pub fn sphere_log_generator() -> Reference {
    reference("-2 (1 - x1^2)", |x| -2.0 * (1.0 - x[0] * x[0]))
}

/// Quoted `Lf` for `f = x_1² / 2` on the sphere example.
pub fn sphere_half_square_generator() -> Reference {
    reference("(1 + 3 x1^2)(1 - x1^2)", |x| {
        (1.0 + 3.0 * x[0] * x[0]) * (1.0 - x[0] * x[0])
    })
}

/// Quoted `Lf` for `f = x_1` on the sphere example.
pub fn sphere_height_generator() -> Reference {
    reference("-2 x1 (1 - x1^2)", |x| -2.0 * x[0] * (1.0 - x[0] * x[0]))
}

/// Every quoted generator value with its function.
pub fn quoted_generators(m: Manifold) -> Vec<(ScalarField, Reference)> {
    match m {
        Manifold::Torus2 => vec![
            (ScalarField::Coordinate(1), torus_y_generator()),
            (ScalarField::LogSinSquared(0), torus_log_sin_generator()),
        ],
        Manifold::Sphere(_) => vec![
            (ScalarField::LogOneMinusSquare(0), sphere_log_generator()),
            (ScalarField::HalfSquare(0), sphere_half_square_generator()),
            (ScalarField::Coordinate(0), sphere_height_generator()),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{apply_generator, generator_report, sample_points};
    use crate::geometry::Point;

    #[test]
    fn quoted_values_against_conventions() {
        // which convention (if any) reproduces each quoted expression
        let expect = |m: Manifold, f: &ScalarField| -> (bool, bool) {
            let pts: Vec<Point> = sample_points(m, 64, 5)
                .into_iter()
                .filter(|p| f.check_domain(p.coords(), 1e-3).is_ok())
                .collect();
            let r = quoted_generators(m).into_iter().find(|(g, _)| g.to_string() == f.to_string()).unwrap().1;
            let mk = |c| match m {
                Manifold::Torus2 => torus_example(c),
                Manifold::Sphere(n) => sphere_example(n, c),
            };
            let gap = |c| {
                generator_report(&mk(c), f, &pts, Some(&r))
                    .unwrap()
                    .max_abs_reference_gap
                    .unwrap()
            };
            (gap(Convention::Half) < 1e-9, gap(Convention::Unit) < 1e-9)
        };
        let s2 = Manifold::Sphere(2);
        assert_eq!(expect(Manifold::Torus2, &ScalarField::Coordinate(1)), (true, false));
        assert_eq!(expect(Manifold::Torus2, &ScalarField::LogSinSquared(0)), (false, false));
        assert_eq!(expect(s2, &ScalarField::LogOneMinusSquare(0)), (false, true));
        assert_eq!(expect(s2, &ScalarField::HalfSquare(0)), (false, false));
        assert_eq!(expect(s2, &ScalarField::Coordinate(0)), (false, true));
    }

    #[test]
    fn gradient_control_generator() {
        // L F = |∇F|² + c ΔF for the flat fields
        let spec = torus_gradient_control(Convention::Half);
        let f = gradient_potential();
        let x = crate::geometry::wrap_torus([0.1, 0.3]).unwrap();
        let v = apply_generator(&spec, &f, &x).unwrap();
        let (sx, cx) = sin_cos_2pi(0.1);
        let (sy, cy) = sin_cos_2pi(0.3);
        let k = 0.2 * PI;
        let grad2 = k * k * (cx * cx * sy * sy + sx * sx * cy * cy);
        let lap = -8.0 * PI * PI * 0.1 * sx * sy;
        assert!((v - (grad2 + 0.5 * lap)).abs() < 1e-10, "{v}");
    }
}
