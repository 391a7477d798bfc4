//! 1-forms and their Stratonovich line integrals along discretised paths.
//!
//! Increments use the midpoint rule `α(m_k)(Δ_k)`: on the sphere `m_k` is the
//! projected chord midpoint and `Δ_k` the chord (which is tangent at `m_k`);
//! on the torus `Δ_k` is the representative of `x_{k+1} - x_k` in
//! `(-1/2, 1/2]^2` and `m_k = x_k + Δ_k / 2` in the covering chart.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::geometry::{
    dot, fd_gradient, norm, scalar_split_call, torus_delta, Coords, LiftTracker, Manifold, Mat,
    Point, ScalarField, TangentVector,
};
use crate::sde::{DiffusionSpec, PathObserver, SamplePath, StepView};

/// Integration stops when a path comes this close (geodesic distance on the
/// sphere, chart distance on the torus) to the singular set of the form.
pub const SINGULAR_CUTOFF: f64 = 1e-4;

/// Largest admissible per-step torus displacement before the lift becomes
/// ambiguous.
pub const STEP_GUARD: f64 = 0.25;

type CovectorFn = dyn Fn(&[f64]) -> Coords + Send + Sync;
type DistanceFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct UserOneForm {
    pub name: String,
    pub manifold: Manifold,
    /// Ambient (sphere) or chart (torus) covector at a point.
    pub covector: Arc<CovectorFn>,
    pub closed: bool,
    pub singular_distance: Option<Arc<DistanceFn>>,
}

impl fmt::Debug for UserOneForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserOneForm")
            .field("name", &self.name)
            .field("manifold", &self.manifold)
            .field("closed", &self.closed)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum OneForm {
    /// `df`.
    Exact(ScalarField),
    TorusDx,
    TorusDy,
    /// `Σ c_i α_i`.
    Combination(Vec<(f64, OneForm)>),
    User(UserOneForm),
}

impl OneForm {
    pub fn check_manifold(&self, m: Manifold) -> Result<()> {
        match self {
            OneForm::Exact(f) => f.check_manifold(m),
            OneForm::TorusDx | OneForm::TorusDy => {
                if m == Manifold::Torus2 {
                    Ok(())
                } else {
                    Err(Error::Unsupported(self.to_string(), m))
                }
            }
            OneForm::Combination(parts) => parts.iter().try_for_each(|(_, a)| a.check_manifold(m)),
            OneForm::User(u) => {
                if u.manifold == m {
                    Ok(())
                } else {
                    Err(Error::ManifoldMismatch {
                        expected: m,
                        found: u.manifold,
                    })
                }
            }
        }
    }

    pub fn is_closed(&self) -> bool {
        match self {
            OneForm::Exact(_) | OneForm::TorusDx | OneForm::TorusDy => true,
            OneForm::Combination(parts) => parts.iter().all(|(_, a)| a.is_closed()),
            OneForm::User(u) => u.closed,
        }
    }

    pub fn is_exact(&self) -> bool {
        match self {
            OneForm::Exact(_) => true,
            OneForm::Combination(parts) => parts.iter().all(|(_, a)| a.is_exact()),
            _ => false,
        }
    }

    /// Covector at raw coordinates `x` of a point of `m`.
    pub fn covector(&self, m: Manifold, x: &[f64]) -> Coords {
        match self {
            OneForm::Exact(f) => f.gradient(x).unwrap_or_else(|| fd_gradient(m, f, x)),
            OneForm::TorusDx => [1.0, 0.0].into_iter().collect(),
            OneForm::TorusDy => [0.0, 1.0].into_iter().collect(),
            OneForm::Combination(parts) => {
                let mut out: Coords = SmallVec::from_elem(0.0, x.len());
                for (c, a) in parts {
                    for (o, v) in out.iter_mut().zip(a.covector(m, x)) {
                        *o += c * v;
                    }
                }
                out
            }
            OneForm::User(u) => (u.covector)(x),
        }
    }

    /// `∂_j a_i` of the covector formula; `None` without analytic derivatives.
    pub fn covector_jacobian(&self, x: &[f64]) -> Option<Mat> {
        match self {
            OneForm::Exact(f) => f.hessian(x),
            OneForm::TorusDx | OneForm::TorusDy => Some(Mat::zeros(2)),
            OneForm::Combination(parts) => {
                let mut out = Mat::zeros(x.len());
                for (c, a) in parts {
                    out.add_scaled(*c, &a.covector_jacobian(x)?);
                }
                Some(out)
            }
            OneForm::User(_) => None,
        }
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        match self {
            OneForm::Exact(f) => f.has_analytic_derivatives(),
            OneForm::TorusDx | OneForm::TorusDy => true,
            OneForm::Combination(parts) => parts.iter().all(|(_, a)| a.has_analytic_derivatives()),
            OneForm::User(_) => false,
        }
    }

    /// `α_x(v)` on raw coordinates.
    pub fn eval_raw(&self, m: Manifold, x: &[f64], v: &[f64]) -> f64 {
        dot(&self.covector(m, x), v)
    }

    pub fn evaluate(&self, v: &TangentVector) -> Result<f64> {
        let m = v.base.manifold();
        self.check_manifold(m)?;
        let value = self.eval_raw(m, v.base.coords(), &v.components);
        if !value.is_finite() {
            return Err(Error::DomainViolation {
                what: self.to_string(),
                point: v.base.coords().to_vec(),
            });
        }
        Ok(value)
    }

    pub fn singular_distance(&self, x: &[f64]) -> Option<f64> {
        match self {
            OneForm::Exact(f) => f.singular_distance(x),
            OneForm::TorusDx | OneForm::TorusDy => None,
            OneForm::Combination(parts) => parts
                .iter()
                .filter_map(|(_, a)| a.singular_distance(x))
                .reduce(f64::min),
            OneForm::User(u) => u.singular_distance.as_ref().map(|d| d(x)),
        }
    }

    pub(crate) fn near_singular(&self, x: &[f64], cutoff: f64) -> bool {
        self.singular_distance(x).is_some_and(|d| d <= cutoff)
    }

    pub fn plus(self, other: OneForm) -> OneForm {
        OneForm::Combination(vec![(1.0, self), (1.0, other)])
    }

    pub fn scaled(self, c: f64) -> OneForm {
        OneForm::Combination(vec![(c, self)])
    }
}

impl fmt::Display for OneForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OneForm::Exact(s) => write!(f, "d({s})"),
            OneForm::TorusDx => f.write_str("dx"),
            OneForm::TorusDy => f.write_str("dy"),
            OneForm::Combination(parts) => {
                for (i, (c, a)) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" + ")?;
                    }
                    write!(f, "{c}*{a}")?;
                }
                Ok(())
            }
            OneForm::User(u) => f.write_str(&u.name),
        }
    }
}

/// Parses `dx`, `dy`, `d(<scalar field>)` and sums `c*α + …` of those.
impl FromStr for OneForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let terms = split_top_level(s, '+');
        if terms.len() > 1 || s.contains('*') {
            let parts = terms
                .into_iter()
                .map(|t| match t.split_once('*') {
                    Some((c, a)) => {
                        let c = c
                            .trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Parse(format!("bad coefficient in {t:?}")))?;
                        Ok((c, parse_atom(a)?))
                    }
                    None => Ok((1.0, parse_atom(t)?)),
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(OneForm::Combination(parts));
        }
        parse_atom(s)
    }
}

fn parse_atom(s: &str) -> Result<OneForm> {
    match s.trim() {
        "dx" => Ok(OneForm::TorusDx),
        "dy" => Ok(OneForm::TorusDy),
        t => {
            let (name, arg) = scalar_split_call(t)?;
            if name != "d" {
                return Err(Error::Parse(format!("unknown 1-form {t:?}")));
            }
            Ok(OneForm::Exact(arg.parse()?))
        }
    }
}

fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

impl Serialize for OneForm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for OneForm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Midpoint increment `α(m)(Δ)` for one step `from → to`.
pub(crate) fn step_increment(
    alpha: &OneForm,
    m: Manifold,
    from: &[f64],
    to: &[f64],
    step: usize,
) -> Result<f64> {
    let value = match m {
        Manifold::Torus2 => {
            let d = [torus_delta(from[0], to[0]), torus_delta(from[1], to[1])];
            if d[0].abs() > STEP_GUARD || d[1].abs() > STEP_GUARD {
                return Err(Error::StepTooLarge {
                    step,
                    displacement: d.to_vec(),
                });
            }
            let mid = [from[0] + 0.5 * d[0], from[1] + 0.5 * d[1]];
            alpha.eval_raw(m, &mid, &d)
        }
        Manifold::Sphere(_) => {
            let mut mid: Coords = from.iter().zip(to).map(|(a, b)| a + b).collect();
            let n = norm(&mid);
            mid.iter_mut().for_each(|c| *c /= n);
            // the chord is orthogonal to a + b, hence tangent at the midpoint
            let chord: Coords = from.iter().zip(to).map(|(a, b)| b - a).collect();
            alpha.eval_raw(m, &mid, &chord)
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("increment of {alpha}")));
    }
    Ok(value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathIntegral {
    pub value: f64,
    pub increments: Option<Vec<f64>>,
    /// Unwrapped total displacement of a torus path.
    pub lift_displacement: Option<Vec<f64>>,
}

/// Streams `∫ α δX` for several forms at once. Steps before `from_step`
/// are skipped (burn-in).
pub struct FormAccumulator {
    manifold: Manifold,
    forms: Vec<OneForm>,
    totals: Vec<f64>,
    from_step: usize,
    cutoff: f64,
    increments: Option<Vec<Vec<f64>>>,
}

impl FormAccumulator {
    pub fn new(manifold: Manifold, forms: Vec<OneForm>) -> Self {
        let n = forms.len();
        FormAccumulator {
            manifold,
            forms,
            totals: vec![0.0; n],
            from_step: 0,
            cutoff: SINGULAR_CUTOFF,
            increments: None,
        }
    }

    pub fn from_step(mut self, k: usize) -> Self {
        self.from_step = k;
        self
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn retaining(mut self) -> Self {
        self.increments = Some(vec![Vec::new(); self.forms.len()]);
        self
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn into_parts(self) -> (Vec<f64>, Option<Vec<Vec<f64>>>) {
        (self.totals, self.increments)
    }

    fn check_singular(&self, x: &[f64], step: usize) -> Result<()> {
        for a in &self.forms {
            if a.near_singular(x, self.cutoff) {
                return Err(Error::SingularProximity {
                    what: a.to_string(),
                    step,
                });
            }
        }
        Ok(())
    }
}

impl PathObserver for FormAccumulator {
    fn observe(&mut self, s: &StepView<'_>) -> Result<()> {
        if s.index < self.from_step {
            return Ok(());
        }
        if s.index == self.from_step {
            self.check_singular(s.from, s.index)?;
        }
        self.check_singular(s.to, s.index + 1)?;
        let mut incs: SmallVec<[f64; 4]> = SmallVec::new();
        for a in &self.forms {
            incs.push(step_increment(a, self.manifold, s.from, s.to, s.index)?);
        }
        for (i, v) in incs.into_iter().enumerate() {
            self.totals[i] += v;
            if let Some(store) = &mut self.increments {
                store[i].push(v);
            }
        }
        Ok(())
    }
}

fn integrate(alpha: &OneForm, path: &SamplePath, retain: bool) -> Result<PathIntegral> {
    let m = path.manifold();
    alpha.check_manifold(m)?;
    let mut acc = FormAccumulator::new(m, vec![alpha.clone()]);
    if retain {
        acc = acc.retaining();
    }
    let mut lift = (m == Manifold::Torus2).then(|| LiftTracker::new(&path.point(0)));
    if path.n_steps() == 0 {
        acc.check_singular(path.coords_at(0), 0)?;
    }
    for k in 0..path.n_steps() {
        let (from, to) = (path.coords_at(k), path.coords_at(k + 1));
        acc.observe(&StepView {
            index: k,
            t: path.time(k),
            dt: path.dt(),
            from,
            to,
            dw: path.dw_at(k),
        })?;
        if let Some(l) = &mut lift {
            l.advance(from, to);
        }
    }
    let (totals, increments) = acc.into_parts();
    let lift_displacement = lift.map(|l| {
        l.lift()
            .iter()
            .zip(path.coords_at(0))
            .map(|(a, b)| a - b)
            .collect()
    });
    Ok(PathIntegral {
        value: totals[0],
        increments: increments.map(|mut v| v.remove(0)),
        lift_displacement,
    })
}

/// `∫ α δX` along a recorded path by the midpoint rule.
pub fn line_integral(alpha: &OneForm, path: &SamplePath) -> Result<PathIntegral> {
    integrate(alpha, path, false)
}

/// As [`line_integral`], keeping the per-step increments.
pub fn line_integral_retained(alpha: &OneForm, path: &SamplePath) -> Result<PathIntegral> {
    integrate(alpha, path, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub total: f64,
    /// Trapezoidal `∫ Sα(L)(X_s) ds`.
    pub drift_part: f64,
    /// `total - drift_part`.
    pub martingale_part: f64,
}

/// Splits `∫ α δX` into the bounded-variation part `∫ Sα(L) ds` and the
/// local-martingale remainder. The generator convention of `spec` selects
/// the symbol.
pub fn decompose_integral(
    alpha: &OneForm,
    path: &SamplePath,
    spec: &DiffusionSpec,
) -> Result<Decomposition> {
    if path.spec_fingerprint() != spec.fingerprint() {
        return Err(Error::SpecMismatch(format!(
            "path generated by {}, decomposed with {}",
            path.spec_fingerprint(),
            spec.fingerprint()
        )));
    }
    let total = line_integral(alpha, path)?.value;
    let symbol = crate::generator::SymbolEval::new(spec, alpha)?;
    let values: Vec<f64> = (0..path.len())
        .map(|k| symbol.eval(path.coords_at(k)))
        .collect();
    let drift_part = crate::stats::trapezoid(&values, path.dt());
    Ok(Decomposition {
        total,
        drift_part,
        martingale_part: total - drift_part,
    })
}

struct DecompositionObserver<'a> {
    alpha: &'a OneForm,
    symbol: crate::generator::SymbolEval<'a>,
    manifold: Manifold,
    total: f64,
    drift: f64,
}

impl PathObserver for DecompositionObserver<'_> {
    fn observe(&mut self, s: &StepView<'_>) -> Result<()> {
        if s.index == 0 && self.alpha.near_singular(s.from, SINGULAR_CUTOFF) {
            return Err(Error::SingularProximity {
                what: self.alpha.to_string(),
                step: 0,
            });
        }
        if self.alpha.near_singular(s.to, SINGULAR_CUTOFF) {
            return Err(Error::SingularProximity {
                what: self.alpha.to_string(),
                step: s.index + 1,
            });
        }
        self.total += step_increment(self.alpha, self.manifold, s.from, s.to, s.index)?;
        self.drift += 0.5 * s.dt * (self.symbol.eval(s.from) + self.symbol.eval(s.to));
        Ok(())
    }
}

/// [`decompose_integral`] over a whole ensemble without retaining paths.
pub fn decompose_ensemble(
    alpha: &OneForm,
    spec: &DiffusionSpec,
    x0: &Point,
    ens: &crate::sde::EnsembleSpec,
) -> Result<Vec<Decomposition>> {
    let m = spec.manifold();
    let symbol = crate::generator::SymbolEval::new(spec, alpha)?;
    crate::sde::run_ensemble(
        spec,
        x0,
        ens,
        |_| DecompositionObserver {
            alpha,
            symbol: symbol.clone(),
            manifold: m,
            total: 0.0,
            drift: 0.0,
        },
        |_, o, _| {
            Ok(Decomposition {
                total: o.total,
                drift_part: o.drift,
                martingale_part: o.total - o.drift,
            })
        },
    )
}

/// Integral of a form along `t ↦ Retract(x + t w)`, `t ∈ [0, 1]`, with `n`
/// midpoint steps: handy for deterministic loops.
pub fn integrate_along_curve(alpha: &OneForm, x: &Point, w: &[f64], n: usize) -> Result<f64> {
    let m = x.manifold();
    alpha.check_manifold(m)?;
    let mut total = 0.0;
    let h = 1.0 / n as f64;
    for k in 0..n {
        let a = m.curve_point(x.coords(), w, k as f64 * h);
        let b = m.curve_point(x.coords(), w, (k + 1) as f64 * h);
        let d: Coords = a.iter().zip(&b).map(|(p, q)| q - p).collect();
        let mid: Coords = a.iter().zip(&d).map(|(p, q)| p + 0.5 * q).collect();
        total += alpha.eval_raw(m, &mid, &d);
    }
    Ok(total)
}
