use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smallvec::SmallVec;

use super::scalar::split_call;
use super::{dot, sin_cos_2pi, Coords, Manifold, Mat, Point, ScalarField, TangentVector};
use crate::error::{Error, Result};

type VectorFn = dyn Fn(&[f64]) -> Coords + Send + Sync;

#[derive(Clone)]
pub struct UserVectorField {
    pub name: String,
    pub manifold: Manifold,
    /// Sphere values are projected onto the tangent space before use.
    pub eval: Arc<VectorFn>,
}

impl fmt::Debug for UserVectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserVectorField")
            .field("name", &self.name)
            .field("manifold", &self.manifold)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum VectorFieldSpec {
    Zero,
    /// Gradient of the height `x_1` on the sphere: `(1, 0, …, 0) - x_1 x`.
    SphereHeightGradient,
    /// `sin(2πx) ∂_x + cos(2πx) ∂_y` on the torus.
    TorusSinCos,
    /// Constant coordinate field `∂_x` (0) or `∂_y` (1) on the torus.
    TorusCoordinate(usize),
    /// Riemannian gradient of a scalar field.
    GradientOfScalar(ScalarField),
    User(UserVectorField),
}

impl VectorFieldSpec {
    pub fn check_manifold(&self, m: Manifold) -> Result<()> {
        let need = |expected: Manifold| {
            if m == expected {
                Ok(())
            } else {
                Err(Error::ManifoldMismatch { expected, found: m })
            }
        };
        match self {
            VectorFieldSpec::Zero => Ok(()),
            VectorFieldSpec::SphereHeightGradient => {
                if m.is_sphere() {
                    Ok(())
                } else {
                    Err(Error::Unsupported(self.to_string(), m))
                }
            }
            VectorFieldSpec::TorusSinCos => need(Manifold::Torus2),
            VectorFieldSpec::TorusCoordinate(i) => {
                need(Manifold::Torus2)?;
                if *i > 1 {
                    return Err(Error::InvalidParameter(format!("torus axis {i}")));
                }
                Ok(())
            }
            VectorFieldSpec::GradientOfScalar(f) => f.check_manifold(m),
            VectorFieldSpec::User(u) => need(u.manifold),
        }
    }

    /// Field value at raw coordinates of a point of `m`; tangent on the sphere.
    pub fn eval_raw(&self, m: Manifold, x: &[f64]) -> Coords {
        match self {
            VectorFieldSpec::Zero => SmallVec::from_elem(0.0, x.len()),
            VectorFieldSpec::SphereHeightGradient => {
                let mut v: Coords = x.iter().map(|xi| -x[0] * xi).collect();
                v[0] += 1.0;
                v
            }
            VectorFieldSpec::TorusSinCos => {
                let (s, c) = sin_cos_2pi(x[0]);
                [s, c].into_iter().collect()
            }
            VectorFieldSpec::TorusCoordinate(i) => {
                let mut v: Coords = SmallVec::from_elem(0.0, 2);
                v[*i] = 1.0;
                v
            }
            VectorFieldSpec::GradientOfScalar(f) => {
                let mut g = f
                    .gradient(x)
                    .unwrap_or_else(|| fd_gradient(m, f, x));
                if m.is_sphere() {
                    tangent_part(x, &mut g);
                }
                g
            }
            VectorFieldSpec::User(u) => {
                let mut v = (u.eval)(x);
                if m.is_sphere() {
                    tangent_part(x, &mut v);
                }
                v
            }
        }
    }

    /// Ambient Jacobian `J[i][j] = ∂_j V_i` of the natural extension of the
    /// field formula; `None` when only finite differences are available.
    pub fn jacobian(&self, m: Manifold, x: &[f64]) -> Option<Mat> {
        let d = x.len();
        let mut j = Mat::zeros(d);
        match self {
            VectorFieldSpec::Zero | VectorFieldSpec::TorusCoordinate(_) => {}
            VectorFieldSpec::SphereHeightGradient => {
                for i in 0..d {
                    j.add(i, 0, -x[i]);
                    j.add(i, i, -x[0]);
                }
            }
            VectorFieldSpec::TorusSinCos => {
                let (s, c) = sin_cos_2pi(x[0]);
                j.set(0, 0, 2.0 * PI * c);
                j.set(1, 0, -2.0 * PI * s);
            }
            VectorFieldSpec::GradientOfScalar(f) => {
                let g = f.gradient(x)?;
                let h = f.hessian(x)?;
                j = h.clone();
                if m.is_sphere() {
                    // G = g - (x·g) x
                    let xg = dot(x, &g);
                    let hx = h.mul_vec(x);
                    for r in 0..d {
                        j.add(r, r, -xg);
                        for c in 0..d {
                            j.add(r, c, -x[r] * (g[c] + hx[c]));
                        }
                    }
                }
            }
            VectorFieldSpec::User(_) => return None,
        }
        Some(j)
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        match self {
            VectorFieldSpec::User(_) => false,
            VectorFieldSpec::GradientOfScalar(f) => f.has_analytic_derivatives(),
            _ => true,
        }
    }
}

/// Removes the normal component at a sphere point.
pub(crate) fn tangent_part(x: &[f64], v: &mut [f64]) {
    let vx = dot(v, x);
    for (vi, xi) in v.iter_mut().zip(x) {
        *vi -= vx * xi;
    }
}

pub(crate) fn fd_gradient(m: Manifold, f: &ScalarField, x: &[f64]) -> Coords {
    let h = super::FD_STEP;
    (0..x.len())
        .map(|i| {
            let mut e: Coords = SmallVec::from_elem(0.0, x.len());
            e[i] = 1.0;
            if m.is_sphere() {
                tangent_part(x, &mut e);
            }
            let p = m.curve_point(x, &e, h);
            let q = m.curve_point(x, &e, -h);
            (f.value(&p) - f.value(&q)) / (2.0 * h)
        })
        .collect()
}

/// Evaluates a vector field at a point, checking the manifold.
pub fn eval_field(spec: &VectorFieldSpec, x: &Point) -> Result<TangentVector> {
    spec.check_manifold(x.manifold())?;
    let components = spec.eval_raw(x.manifold(), x.coords());
    if components.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite(format!("field {spec}")));
    }
    Ok(TangentVector {
        base: x.clone(),
        components,
    })
}

impl fmt::Display for VectorFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VectorFieldSpec::Zero => write!(f, "zero"),
            VectorFieldSpec::SphereHeightGradient => write!(f, "sphere-height-gradient"),
            VectorFieldSpec::TorusSinCos => write!(f, "torus-sin-cos"),
            VectorFieldSpec::TorusCoordinate(i) => write!(f, "torus-coordinate({i})"),
            VectorFieldSpec::GradientOfScalar(s) => write!(f, "gradient({s})"),
            VectorFieldSpec::User(u) => write!(f, "{}", u.name),
        }
    }
}

impl FromStr for VectorFieldSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zero" => return Ok(VectorFieldSpec::Zero),
            "sphere-height-gradient" => return Ok(VectorFieldSpec::SphereHeightGradient),
            "torus-sin-cos" => return Ok(VectorFieldSpec::TorusSinCos),
            _ => {}
        }
        let (name, arg) = split_call(s)?;
        match name {
            "torus-coordinate" => arg
                .parse()
                .map(VectorFieldSpec::TorusCoordinate)
                .map_err(|_| Error::Parse(format!("bad axis in {s:?}"))),
            "gradient" => Ok(VectorFieldSpec::GradientOfScalar(arg.parse()?)),
            _ => Err(Error::Parse(format!("unknown vector field {s:?}"))),
        }
    }
}

impl Serialize for VectorFieldSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for VectorFieldSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_sphere, wrap_torus, TANGENCY_TOLERANCE};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn sphere_height_gradient_examples() {
        let n = Point::north_pole(3);
        let v = eval_field(&VectorFieldSpec::SphereHeightGradient, &n).unwrap();
        assert!(v.components.iter().all(|&c| c == 0.0));

        let e = project_sphere(&[0.0, 1.0, 0.0]).unwrap();
        let v = eval_field(&VectorFieldSpec::SphereHeightGradient, &e).unwrap();
        assert_eq!(v.components.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn torus_sin_cos_example() {
        let p = wrap_torus([0.25, 0.7]).unwrap();
        let v = eval_field(&VectorFieldSpec::TorusSinCos, &p).unwrap();
        assert_eq!(v.components.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn manifold_mismatch_is_reported() {
        let p = wrap_torus([0.25, 0.7]).unwrap();
        assert!(matches!(
            eval_field(&VectorFieldSpec::SphereHeightGradient, &p),
            Err(Error::Unsupported(..))
        ));
        let n = Point::north_pole(2);
        assert!(matches!(
            eval_field(&VectorFieldSpec::TorusSinCos, &n),
            Err(Error::ManifoldMismatch { .. })
        ));
    }

    #[test]
    fn height_gradient_is_gradient_of_first_coordinate() {
        let x = project_sphere(&[0.3, -0.2, 0.9]).unwrap();
        let m = x.manifold();
        let a = VectorFieldSpec::SphereHeightGradient.eval_raw(m, x.coords());
        let g = VectorFieldSpec::GradientOfScalar(ScalarField::Coordinate(0));
        let b = g.eval_raw(m, x.coords());
        let ja = VectorFieldSpec::SphereHeightGradient.jacobian(m, x.coords()).unwrap();
        let jb = g.jacobian(m, x.coords()).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(a[i], b[i], epsilon = 1e-15);
            for j in 0..3 {
                assert_abs_diff_eq!(ja.get(i, j), jb.get(i, j), epsilon = 1e-14);
            }
        }
    }

    /// Sphere gradient fields match finite differences of `f` along great
    /// circles, with error shrinking like `h^2`.
    #[test]
    fn sphere_gradient_matches_great_circle_differences() {
        let f = ScalarField::LogOneMinusSquare(0);
        let x = project_sphere(&[0.4, 0.5, -0.3]).unwrap();
        let m = x.manifold();
        let grad = VectorFieldSpec::GradientOfScalar(f.clone()).eval_raw(m, x.coords());
        let mut w: Coords = [0.2, -0.7, 0.5].into_iter().collect();
        tangent_part(x.coords(), &mut w);
        let wn = crate::geometry::norm(&w);
        w.iter_mut().for_each(|c| *c /= wn);
        let exact = dot(&grad, &w);
        let great_circle = |t: f64| -> Coords {
            x.coords()
                .iter()
                .zip(&w)
                .map(|(a, b)| a * t.cos() + b * t.sin())
                .collect()
        };
        let err = |h: f64| {
            let fd = (f.value(&great_circle(h)) - f.value(&great_circle(-h))) / (2.0 * h);
            (fd - exact).abs()
        };
        let (e1, e2) = (err(1e-2), err(5e-3));
        let order = (e1 / e2).log2();
        assert!(e2 < 1e-4);
        assert!((order - 2.0).abs() < 0.1, "observed order {order}");
    }

    #[test]
    fn parse_names() {
        for s in ["zero", "torus-sin-cos", "sphere-height-gradient", "torus-coordinate(1)", "gradient(sinsin(0.1))"] {
            let v: VectorFieldSpec = s.parse().unwrap();
            assert_eq!(v.to_string(), s);
        }
        assert!("torus-coordinate(q)".parse::<VectorFieldSpec>().is_err());
    }

    proptest! {
        #[test]
        fn sphere_fields_are_tangent(v in prop::collection::vec(-1.0f64..1.0, 3..5)) {
            prop_assume!(crate::geometry::norm(&v) > 1e-3);
            let x = project_sphere(&v).unwrap();
            for field in [
                VectorFieldSpec::SphereHeightGradient,
                VectorFieldSpec::GradientOfScalar(ScalarField::HalfSquare(1)),
            ] {
                let t = eval_field(&field, &x).unwrap();
                prop_assert!(t.normal_component() <= TANGENCY_TOLERANCE);
            }
        }
    }
}
