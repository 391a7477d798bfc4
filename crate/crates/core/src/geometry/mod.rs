//! Points, tangent vectors and fields on the embedded sphere `S^n ⊂ R^{n+1}`
//! and on the flat torus `T^2 = R^2 / Z^2`.
//!
//! The sphere is handled extrinsically: points are unit vectors of the
//! ambient space and every step of an integrator is followed by a radial
//! projection. The torus lives in the fundamental domain `[0,1)^2`; quantities
//! that must see the covering space (winding, multivalued coordinates) work
//! with lifted coordinates, see [`LiftTracker`].

mod scalar;
mod vector;

use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub use scalar::{ScalarField, UserScalarField};
pub use vector::{eval_field, UserVectorField, VectorFieldSpec};
pub(crate) use scalar::split_call as scalar_split_call;
pub(crate) use vector::fd_gradient;

/// Coordinates of a point or a vector; inline for ambient dimension ≤ 4.
pub type Coords = SmallVec<[f64; 4]>;

/// Norm tolerance for sphere points after construction.
pub const SPHERE_TOLERANCE: f64 = 1e-12;
/// Tangency tolerance `|<v, x>|` for sphere tangent vectors.
pub const TANGENCY_TOLERANCE: f64 = 1e-10;
/// Central finite-difference step along retracted curves.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manifold {
    /// `S^n` embedded in `R^{n+1}`.
    Sphere(usize),
    Torus2,
}

impl Manifold {
    pub fn ambient_dim(self) -> usize {
        match self {
            Manifold::Sphere(n) => n + 1,
            Manifold::Torus2 => 2,
        }
    }

    pub fn is_sphere(self) -> bool {
        matches!(self, Manifold::Sphere(_))
    }

    /// Maps ambient/chart coordinates back onto the manifold in place.
    pub(crate) fn retract_in_place(self, coords: &mut [f64]) -> Result<()> {
        match self {
            Manifold::Sphere(_) => {
                let norm = norm(coords);
                if !norm.is_finite() {
                    return Err(Error::NonFinite("sphere retraction".into()));
                }
                if norm < 1e-300 {
                    return Err(Error::ZeroVector);
                }
                coords.iter_mut().for_each(|c| *c /= norm);
                Ok(())
            }
            Manifold::Torus2 => {
                for c in coords.iter_mut() {
                    *c = wrap_unit(*c)?;
                }
                Ok(())
            }
        }
    }

    /// Point on the curve `t ↦ Retract(x + t w)` used for directional
    /// derivatives. The torus uses the covering chart without wrapping so that
    /// multivalued coordinate functions stay continuous.
    pub(crate) fn curve_point(self, x: &[f64], w: &[f64], t: f64) -> Coords {
        let mut y: Coords = x.iter().zip(w).map(|(a, b)| a + t * b).collect();
        if self.is_sphere() {
            let n = norm(&y);
            y.iter_mut().for_each(|c| *c /= n);
        }
        y
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Manifold::Sphere(n) => write!(f, "S^{n}"),
            Manifold::Torus2 => write!(f, "T^2"),
        }
    }
}

impl std::str::FromStr for Manifold {
    type Err = Error;

    /// `T^2` or `S^n` with `n ≥ 1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "T^2" {
            return Ok(Manifold::Torus2);
        }
        s.strip_prefix("S^")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .map(Manifold::Sphere)
            .ok_or_else(|| Error::Parse(format!("unknown manifold {s:?}; expected T^2 or S^n")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    manifold: Manifold,
    coords: Coords,
}

impl Point {
    /// Validating constructor: sphere points must already be unit vectors and
    /// torus coordinates must lie in `[0, 1)`.
    pub fn new(manifold: Manifold, coords: &[f64]) -> Result<Self> {
        if coords.len() != manifold.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: manifold.ambient_dim(),
                found: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        match manifold {
            Manifold::Sphere(_) => {
                let n = norm(coords);
                if (n - 1.0).abs() > SPHERE_TOLERANCE {
                    return Err(Error::NotOnManifold {
                        manifold,
                        reason: format!("norm {n} differs from 1"),
                    });
                }
            }
            Manifold::Torus2 => {
                if coords.iter().any(|c| !(0.0..1.0).contains(c)) {
                    return Err(Error::NotOnManifold {
                        manifold,
                        reason: "torus coordinates must lie in [0, 1)".into(),
                    });
                }
            }
        }
        Ok(Point {
            manifold,
            coords: coords.into(),
        })
    }

    pub(crate) fn from_raw(manifold: Manifold, coords: Coords) -> Self {
        debug_assert_eq!(coords.len(), manifold.ambient_dim());
        Point { manifold, coords }
    }

    /// Point on either manifold from arbitrary coordinates: projected onto the
    /// sphere, wrapped onto the torus.
    pub fn retracted(manifold: Manifold, coords: &[f64]) -> Result<Self> {
        match manifold {
            Manifold::Sphere(n) => {
                let p = project_sphere(coords)?;
                if p.manifold != Manifold::Sphere(n) {
                    return Err(Error::DimensionMismatch {
                        expected: n + 1,
                        found: coords.len(),
                    });
                }
                Ok(p)
            }
            Manifold::Torus2 => {
                if coords.len() != 2 {
                    return Err(Error::DimensionMismatch {
                        expected: 2,
                        found: coords.len(),
                    });
                }
                wrap_torus([coords[0], coords[1]])
            }
        }
    }

    /// North pole `(1, 0, …, 0)` of `S^n`.
    pub fn north_pole(n: usize) -> Self {
        let mut c: Coords = SmallVec::from_elem(0.0, n + 1);
        c[0] = 1.0;
        Point::from_raw(Manifold::Sphere(n), c)
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: Point,
    pub components: Coords,
}

impl TangentVector {
    /// `|<v, x>|` on the sphere, zero on the torus.
    pub fn normal_component(&self) -> f64 {
        match self.base.manifold {
            Manifold::Sphere(_) => dot(&self.components, &self.base.coords).abs(),
            Manifold::Torus2 => 0.0,
        }
    }
}

/// Radial projection `v / |v|` onto the unit sphere of `R^{len(v)}`.
pub fn project_sphere(v: &[f64]) -> Result<Point> {
    if v.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: v.len(),
        });
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("project_sphere input".into()));
    }
    let mut coords: Coords = v.into();
    Manifold::Sphere(v.len() - 1).retract_in_place(&mut coords)?;
    Ok(Point::from_raw(Manifold::Sphere(v.len() - 1), coords))
}

/// Reduces both coordinates modulo 1 into `[0, 1)`.
pub fn wrap_torus(p: [f64; 2]) -> Result<Point> {
    let coords: Coords = [wrap_unit(p[0])?, wrap_unit(p[1])?].into_iter().collect();
    Ok(Point::from_raw(Manifold::Torus2, coords))
}

fn wrap_unit(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("torus coordinate".into()));
    }
    let r = x - x.floor();
    // x slightly below an integer can round up to exactly 1.0
    Ok(if r >= 1.0 { 0.0 } else { r })
}

/// Representative of `b - a` in `(-1/2, 1/2]`.
pub fn torus_delta(a: f64, b: f64) -> f64 {
    let d = b - a;
    let r = d - d.round();
    if r <= -0.5 {
        r + 1.0
    } else {
        r
    }
}

/// Accumulates the continuous lift of a torus path from consecutive wrapped
/// points. On the sphere the lift is the point itself.
#[derive(Clone, Debug)]
pub struct LiftTracker {
    manifold: Manifold,
    lift: Coords,
}

impl LiftTracker {
    pub fn new(start: &Point) -> Self {
        LiftTracker {
            manifold: start.manifold,
            lift: start.coords.clone(),
        }
    }

    pub fn advance(&mut self, from: &[f64], to: &[f64]) {
        match self.manifold {
            Manifold::Torus2 => {
                for i in 0..2 {
                    self.lift[i] += torus_delta(from[i], to[i]);
                }
            }
            Manifold::Sphere(_) => self.lift.copy_from_slice(to),
        }
    }

    pub fn lift(&self) -> &[f64] {
        &self.lift
    }
}

/// `(sin 2πx, cos 2πx)` with exact zeros at multiples of 1/4.
pub fn sin_cos_2pi(x: f64) -> (f64, f64) {
    let q = (4.0 * x).round();
    let r = x - 0.25 * q;
    let (s, c) = (2.0 * std::f64::consts::PI * r).sin_cos();
    match (q as i64).rem_euclid(4) {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dense square matrix, row major.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    dim: usize,
    data: SmallVec<[f64; 16]>,
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Mat {
            dim,
            data: SmallVec::from_elem(0.0, dim * dim),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] += v;
    }

    pub fn mul_vec(&self, v: &[f64]) -> Coords {
        (0..self.dim)
            .map(|i| dot(&self.data[i * self.dim..(i + 1) * self.dim], v))
            .collect()
    }

    /// `u^T M v`
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        dot(u, &self.mul_vec(v))
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn add_scaled(&mut self, a: f64, other: &Mat) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn manifold_names_round_trip() {
        for m in [Manifold::Torus2, Manifold::Sphere(1), Manifold::Sphere(5)] {
            assert_eq!(m.to_string().parse::<Manifold>().unwrap(), m);
        }
        assert!("S^0".parse::<Manifold>().is_err());
        assert!("T^3".parse::<Manifold>().is_err());
    }

    #[test]
    fn project_sphere_examples() {
        let p = project_sphere(&[2.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.coords(), &[1.0, 0.0, 0.0]);
        assert_eq!(p.manifold(), Manifold::Sphere(2));

        let p = project_sphere(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.coords(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.manifold(), Manifold::Sphere(3));

        let p = project_sphere(&[1.0, 1.0, 0.0]).unwrap();
        let c = p.coords();
        assert_abs_diff_eq!(norm(c), 1.0, epsilon = 1e-15);
        // parallel to the input: equal components, third zero
        assert_eq!(c[0], c[1]);
        assert_eq!(c[2], 0.0);
        assert_abs_diff_eq!(c[0], 1.0 / 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn project_sphere_rejects_zero_and_nan() {
        assert_eq!(project_sphere(&[0.0, 0.0, 0.0]), Err(Error::ZeroVector));
        assert_eq!(project_sphere(&[1e-301, 0.0, 0.0]), Err(Error::ZeroVector));
        assert!(matches!(
            project_sphere(&[f64::NAN, 1.0, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn wrap_torus_examples() {
        assert_eq!(wrap_torus([1.25, -0.5]).unwrap().coords(), &[0.25, 0.5]);
        assert_eq!(wrap_torus([0.0, 1.0]).unwrap().coords(), &[0.0, 0.0]);
        let p = wrap_torus([0.999999, 2.000001]).unwrap();
        assert_eq!(p.coords()[0], 0.999999);
        assert_abs_diff_eq!(p.coords()[1], 0.000001, epsilon = 1e-12);
        assert!(matches!(
            wrap_torus([f64::INFINITY, 0.0]),
            Err(Error::NonFinite(_))
        ));
        // just below zero must not round to 1.0
        let p = wrap_torus([-1e-18, 0.0]).unwrap();
        assert!(p.coords()[0] < 1.0);
    }

    #[test]
    fn point_validation() {
        assert!(Point::new(Manifold::Sphere(2), &[1.0, 0.0, 0.0]).is_ok());
        assert!(Point::new(Manifold::Sphere(2), &[1.0, 0.1, 0.0]).is_err());
        assert!(Point::new(Manifold::Torus2, &[0.5, 1.0]).is_err());
        assert!(matches!(
            Point::new(Manifold::Torus2, &[0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn exact_trig_zeros() {
        assert_eq!(sin_cos_2pi(0.5).0, 0.0);
        assert_eq!(sin_cos_2pi(0.0).0, 0.0);
        assert_eq!(sin_cos_2pi(0.25), (1.0, 0.0));
        assert_eq!(sin_cos_2pi(0.75).1, 0.0);
        assert_eq!(sin_cos_2pi(-0.5).0, 0.0);
        for &x in &[0.1, 0.37, 0.9, -2.3, 7.77] {
            let (s, c) = sin_cos_2pi(x);
            let t = 2.0 * std::f64::consts::PI * x;
            assert_abs_diff_eq!(s, t.sin(), epsilon = 1e-13);
            assert_abs_diff_eq!(c, t.cos(), epsilon = 1e-13);
        }
    }

    #[test]
    fn lift_tracker_counts_windings() {
        let start = wrap_torus([0.0, 0.9]).unwrap();
        let mut lift = LiftTracker::new(&start);
        let mut prev = start.coords().to_vec();
        for k in 1..=20 {
            let next = wrap_torus([0.0, 0.9 + 0.1 * k as f64]).unwrap();
            lift.advance(&prev, next.coords());
            prev = next.coords().to_vec();
        }
        assert_abs_diff_eq!(lift.lift()[1], 2.9, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn projection_is_identity_on_unit_vectors(v in prop::collection::vec(-1.0f64..1.0, 3..6)) {
            prop_assume!(norm(&v) > 1e-3);
            let unit = project_sphere(&v).unwrap();
            let again = project_sphere(unit.coords()).unwrap();
            for (a, b) in unit.coords().iter().zip(again.coords()) {
                prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON);
            }
            prop_assert!((norm(unit.coords()) - 1.0).abs() <= SPHERE_TOLERANCE);
        }

        #[test]
        fn wrap_commutes_with_integer_shifts(
            x in -50.0f64..50.0, y in -50.0f64..50.0, a in -5i32..5, b in -5i32..5
        ) {
            let w = wrap_torus([x, y]).unwrap();
            let lhs = wrap_torus([w.coords()[0] + a as f64, w.coords()[1] + b as f64]).unwrap();
            let rhs = wrap_torus([x + a as f64, y + b as f64]).unwrap();
            for (l, r) in lhs.coords().iter().zip(rhs.coords()) {
                // equal as points of the circle
                prop_assert!(torus_delta(*l, *r).abs() < 1e-12);
                prop_assert!((0.0..1.0).contains(l));
            }
        }

        #[test]
        fn torus_delta_in_half_open_interval(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let d = torus_delta(a, b);
            prop_assert!(d > -0.5 && d <= 0.5);
            let k = (b - a) - d;
            prop_assert!((k - k.round()).abs() < 1e-12);
        }
    }
}
