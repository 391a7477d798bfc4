use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smallvec::SmallVec;

use super::{sin_cos_2pi, Coords, Manifold, Mat};
use crate::error::{Error, Result};

type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A scalar field given by an arbitrary closure. Derivatives are taken by
/// finite differences.
#[derive(Clone)]
pub struct UserScalarField {
    pub name: String,
    pub manifold: Manifold,
    pub value: Arc<ScalarFn>,
    /// Distance from a point to the singular set, if there is one.
    pub singular_distance: Option<Arc<ScalarFn>>,
}

impl fmt::Debug for UserScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserScalarField")
            .field("name", &self.name)
            .field("manifold", &self.manifold)
            .finish_non_exhaustive()
    }
}

/// Smooth functions on the sphere (ambient coordinates `x_i`) or the torus
/// (chart coordinates, evaluated on the lift so that `Coordinate` is the
/// multivalued coordinate function whose differential is closed).
#[derive(Clone, Debug)]
pub enum ScalarField {
    Constant(f64),
    /// `x_i`.
    Coordinate(usize),
    /// `x_i^2 / 2`.
    HalfSquare(usize),
    /// `ln(1 - x_i^2)` on the sphere, singular at `x_i = ±1`.
    LogOneMinusSquare(usize),
    /// `sin(2π x_i)`.
    SinTwoPi(usize),
    /// `cos(2π x_i)`.
    CosTwoPi(usize),
    /// `ln sin^2(2π x_i)`, singular where `x_i ∈ Z/2`.
    LogSinSquared(usize),
    /// `a sin(2πx) sin(2πy)` on the torus.
    SinSinProduct(f64),
    User(UserScalarField),
}

impl ScalarField {
    pub fn check_manifold(&self, m: Manifold) -> Result<()> {
        let dim = m.ambient_dim();
        let axis_ok = |i: usize| {
            if i < dim {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "axis {i} out of range for {m}"
                )))
            }
        };
        match self {
            ScalarField::Constant(_) => Ok(()),
            ScalarField::Coordinate(i)
            | ScalarField::HalfSquare(i)
            | ScalarField::SinTwoPi(i)
            | ScalarField::CosTwoPi(i) => axis_ok(*i),
            ScalarField::LogOneMinusSquare(i) => {
                if !m.is_sphere() {
                    return Err(Error::Unsupported(self.to_string(), m));
                }
                axis_ok(*i)
            }
            ScalarField::LogSinSquared(i) => {
                if m != Manifold::Torus2 {
                    return Err(Error::Unsupported(self.to_string(), m));
                }
                axis_ok(*i)
            }
            ScalarField::SinSinProduct(_) => {
                if m != Manifold::Torus2 {
                    return Err(Error::Unsupported(self.to_string(), m));
                }
                Ok(())
            }
            ScalarField::User(u) => {
                if u.manifold != m {
                    return Err(Error::ManifoldMismatch {
                        expected: m,
                        found: u.manifold,
                    });
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Coordinate(i) => x[*i],
            ScalarField::HalfSquare(i) => 0.5 * x[*i] * x[*i],
            ScalarField::LogOneMinusSquare(i) => (1.0 - x[*i] * x[*i]).ln(),
            ScalarField::SinTwoPi(i) => sin_cos_2pi(x[*i]).0,
            ScalarField::CosTwoPi(i) => sin_cos_2pi(x[*i]).1,
            ScalarField::LogSinSquared(i) => {
                let s = sin_cos_2pi(x[*i]).0;
                (s * s).ln()
            }
            ScalarField::SinSinProduct(a) => a * sin_cos_2pi(x[0]).0 * sin_cos_2pi(x[1]).0,
            ScalarField::User(u) => (u.value)(x),
        }
    }

    /// Ambient (sphere) or chart (torus) gradient; `None` for closures.
    pub fn gradient(&self, x: &[f64]) -> Option<Coords> {
        let mut g: Coords = SmallVec::from_elem(0.0, x.len());
        match self {
            ScalarField::Constant(_) => {}
            ScalarField::Coordinate(i) => g[*i] = 1.0,
            ScalarField::HalfSquare(i) => g[*i] = x[*i],
            ScalarField::LogOneMinusSquare(i) => {
                let xi = x[*i];
                g[*i] = -2.0 * xi / (1.0 - xi * xi);
            }
            ScalarField::SinTwoPi(i) => g[*i] = 2.0 * PI * sin_cos_2pi(x[*i]).1,
            ScalarField::CosTwoPi(i) => g[*i] = -2.0 * PI * sin_cos_2pi(x[*i]).0,
            ScalarField::LogSinSquared(i) => {
                let (s, c) = sin_cos_2pi(x[*i]);
                g[*i] = 4.0 * PI * c / s;
            }
            ScalarField::SinSinProduct(a) => {
                let (sx, cx) = sin_cos_2pi(x[0]);
                let (sy, cy) = sin_cos_2pi(x[1]);
                g[0] = 2.0 * PI * a * cx * sy;
                g[1] = 2.0 * PI * a * sx * cy;
            }
            ScalarField::User(_) => return None,
        }
        Some(g)
    }

    pub fn hessian(&self, x: &[f64]) -> Option<Mat> {
        let mut h = Mat::zeros(x.len());
        match self {
            ScalarField::Constant(_) | ScalarField::Coordinate(_) => {}
            ScalarField::HalfSquare(i) => h.set(*i, *i, 1.0),
            ScalarField::LogOneMinusSquare(i) => {
                let x2 = x[*i] * x[*i];
                h.set(*i, *i, -2.0 * (1.0 + x2) / ((1.0 - x2) * (1.0 - x2)));
            }
            ScalarField::SinTwoPi(i) => h.set(*i, *i, -4.0 * PI * PI * sin_cos_2pi(x[*i]).0),
            ScalarField::CosTwoPi(i) => h.set(*i, *i, -4.0 * PI * PI * sin_cos_2pi(x[*i]).1),
            ScalarField::LogSinSquared(i) => {
                let s = sin_cos_2pi(x[*i]).0;
                h.set(*i, *i, -8.0 * PI * PI / (s * s));
            }
            ScalarField::SinSinProduct(a) => {
                let (sx, cx) = sin_cos_2pi(x[0]);
                let (sy, cy) = sin_cos_2pi(x[1]);
                let k = 4.0 * PI * PI * a;
                h.set(0, 0, -k * sx * sy);
                h.set(1, 1, -k * sx * sy);
                h.set(0, 1, k * cx * cy);
                h.set(1, 0, k * cx * cy);
            }
            ScalarField::User(_) => return None,
        }
        Some(h)
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        !matches!(self, ScalarField::User(_))
    }

    /// Distance (geodesic on the sphere, chart distance on the torus) from
    /// `x` to the singular set; `None` when the field is smooth everywhere.
    pub fn singular_distance(&self, x: &[f64]) -> Option<f64> {
        match self {
            ScalarField::LogOneMinusSquare(i) => Some(x[*i].abs().min(1.0).acos()),
            ScalarField::LogSinSquared(i) => {
                let xi = x[*i];
                Some((xi - 0.5 * (2.0 * xi).round()).abs())
            }
            ScalarField::User(u) => u.singular_distance.as_ref().map(|d| d(x)),
            _ => None,
        }
    }

    /// Fails when `x` lies within `margin` of the singular set or the value
    /// is not finite.
    pub fn check_domain(&self, x: &[f64], margin: f64) -> Result<()> {
        let bad = match self.singular_distance(x) {
            Some(d) => d <= margin,
            None => false,
        };
        if bad || !self.value(x).is_finite() {
            return Err(Error::DomainViolation {
                what: self.to_string(),
                point: x.to_vec(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Constant(c) => write!(f, "const({c})"),
            ScalarField::Coordinate(i) => write!(f, "coord({i})"),
            ScalarField::HalfSquare(i) => write!(f, "half-square({i})"),
            ScalarField::LogOneMinusSquare(i) => write!(f, "log-one-minus-square({i})"),
            ScalarField::SinTwoPi(i) => write!(f, "sin2pi({i})"),
            ScalarField::CosTwoPi(i) => write!(f, "cos2pi({i})"),
            ScalarField::LogSinSquared(i) => write!(f, "log-sin-squared({i})"),
            ScalarField::SinSinProduct(a) => write!(f, "sinsin({a})"),
            ScalarField::User(u) => write!(f, "{}", u.name),
        }
    }
}

/// Splits `name(arg)` into its parts.
pub(crate) fn split_call(s: &str) -> Result<(&str, &str)> {
    let s = s.trim();
    let open = s
        .find('(')
        .ok_or_else(|| Error::Parse(format!("expected name(arg), got {s:?}")))?;
    if !s.ends_with(')') {
        return Err(Error::Parse(format!("unbalanced parentheses in {s:?}")));
    }
    Ok((s[..open].trim(), s[open + 1..s.len() - 1].trim()))
}

impl FromStr for ScalarField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = split_call(s)?;
        let axis = || {
            arg.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad axis {arg:?} in {s:?}")))
        };
        let real = || {
            arg.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number {arg:?} in {s:?}")))
        };
        Ok(match name {
            "const" => ScalarField::Constant(real()?),
            "coord" => ScalarField::Coordinate(axis()?),
            "half-square" => ScalarField::HalfSquare(axis()?),
            "log-one-minus-square" => ScalarField::LogOneMinusSquare(axis()?),
            "sin2pi" => ScalarField::SinTwoPi(axis()?),
            "cos2pi" => ScalarField::CosTwoPi(axis()?),
            "log-sin-squared" => ScalarField::LogSinSquared(axis()?),
            "sinsin" => ScalarField::SinSinProduct(real()?),
            _ => return Err(Error::Parse(format!("unknown scalar field {name:?}"))),
        })
    }
}

impl Serialize for ScalarField {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ScalarField {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn catalog() -> Vec<(ScalarField, Manifold, Vec<f64>)> {
        let s = vec![0.3, -0.5, (1.0f64 - 0.09 - 0.25).sqrt()];
        let t = vec![0.13, 0.71];
        vec![
            (ScalarField::Constant(2.5), Manifold::Sphere(2), s.clone()),
            (ScalarField::Coordinate(0), Manifold::Sphere(2), s.clone()),
            (ScalarField::HalfSquare(0), Manifold::Sphere(2), s.clone()),
            (ScalarField::LogOneMinusSquare(0), Manifold::Sphere(2), s),
            (ScalarField::Coordinate(1), Manifold::Torus2, t.clone()),
            (ScalarField::SinTwoPi(0), Manifold::Torus2, t.clone()),
            (ScalarField::CosTwoPi(1), Manifold::Torus2, t.clone()),
            (ScalarField::LogSinSquared(0), Manifold::Torus2, t.clone()),
            (ScalarField::SinSinProduct(0.1), Manifold::Torus2, t),
        ]
    }

    #[test]
    fn analytic_gradient_and_hessian_match_differences() {
        let h = 1e-5;
        for (f, m, x) in catalog() {
            f.check_manifold(m).unwrap();
            let g = f.gradient(&x).unwrap();
            let hess = f.hessian(&x).unwrap();
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
                assert_relative_eq!(g[i], fd, epsilon = 1e-7, max_relative = 1e-7);
                let gp = f.gradient(&xp).unwrap();
                let gm = f.gradient(&xm).unwrap();
                for j in 0..x.len() {
                    let fd2 = (gp[j] - gm[j]) / (2.0 * h);
                    assert_relative_eq!(hess.get(j, i), fd2, epsilon = 1e-5, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for (f, _, _) in catalog() {
            let parsed: ScalarField = f.to_string().parse().unwrap();
            assert_eq!(parsed.to_string(), f.to_string());
        }
        assert!("nope(1)".parse::<ScalarField>().is_err());
        assert!("coord(x)".parse::<ScalarField>().is_err());
    }

    #[test]
    fn singular_sets() {
        let f = ScalarField::LogSinSquared(0);
        assert_eq!(f.singular_distance(&[0.5, 0.3]), Some(0.0));
        assert!((f.singular_distance(&[0.26, 0.3]).unwrap() - 0.24).abs() < 1e-12);
        assert!(f.check_domain(&[0.5, 0.1], 1e-4).is_err());
        assert!(f.check_domain(&[0.25, 0.1], 1e-4).is_ok());
        let g = ScalarField::LogOneMinusSquare(0);
        assert!(g.check_domain(&[1.0, 0.0, 0.0], 1e-4).is_err());
        assert!(g.check_domain(&[0.0, 1.0, 0.0], 1e-4).is_ok());
        assert!(ScalarField::LogSinSquared(0).check_manifold(Manifold::Sphere(2)).is_err());
        assert!(ScalarField::Coordinate(3).check_manifold(Manifold::Sphere(2)).is_err());
    }
}
