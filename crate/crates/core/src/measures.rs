//! Histogram measures: occupation statistics of simulated paths, the
//! invariance condition `∫ Lf dμ = 0`, and mass near invariant sets.
//!
//! Torus bins are the cells of a `k × k` grid centred on the vertices `i/k`,
//! so the circles `x = 0` and `x = 1/2` run through bin centres. Sphere bins
//! are bands of the polar angle `θ = arccos x_1`, again centred on
//! `θ_i = π i / B`, split into equal azimuthal sectors of
//! `φ = atan2(x_3, x_2)`; the two polar caps are single bins.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::generator::GeneratorEval;
use crate::geometry::{Coords, Manifold, Point, ScalarField};
use crate::sde::{run_ensemble, DiffusionSpec, EnsembleSpec, PathObserver, SamplePath, StepView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binning {
    TorusGrid { k: usize },
    SphereBands { bands: usize, azimuth: usize },
}

/// `(lo, hi)` extents of a bin in its chart: `(x, y)` on the torus,
/// `(θ, φ)` on the sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinExtent {
    pub first: (f64, f64),
    pub second: (f64, f64),
}

impl Binning {
    pub const DEFAULT_TORUS: Binning = Binning::TorusGrid { k: 64 };
    pub const DEFAULT_SPHERE: Binning = Binning::SphereBands {
        bands: 64,
        azimuth: 64,
    };

    pub fn default_for(m: Manifold) -> Binning {
        match m {
            Manifold::Torus2 => Self::DEFAULT_TORUS,
            Manifold::Sphere(_) => Self::DEFAULT_SPHERE,
        }
    }

    pub fn check(&self, m: Manifold) -> Result<()> {
        match (self, m) {
            (Binning::TorusGrid { k }, Manifold::Torus2) if *k >= 1 => Ok(()),
            (Binning::SphereBands { bands, azimuth }, Manifold::Sphere(n))
                if n >= 2 && *bands >= 2 && *azimuth >= 1 =>
            {
                Ok(())
            }
            (Binning::SphereBands { .. }, Manifold::Sphere(1)) => {
                Err(Error::Unsupported("sphere band histogram".into(), m))
            }
            _ => Err(invalid(format!("binning {self:?} does not fit {m}"))),
        }
    }

    /// Twice as fine in every direction.
    pub fn refined(&self) -> Binning {
        match *self {
            Binning::TorusGrid { k } => Binning::TorusGrid { k: 2 * k },
            Binning::SphereBands { bands, azimuth } => Binning::SphereBands {
                bands: 2 * bands,
                azimuth: 2 * azimuth,
            },
        }
    }

    pub fn n_bins(&self) -> usize {
        match *self {
            Binning::TorusGrid { k } => k * k,
            Binning::SphereBands { bands, azimuth } => (bands - 1) * azimuth + 2,
        }
    }

    pub fn bin_index(&self, x: &[f64]) -> usize {
        match *self {
            Binning::TorusGrid { k } => {
                let cell = |c: f64| ((c * k as f64).round() as i64).rem_euclid(k as i64) as usize;
                cell(x[0]) * k + cell(x[1])
            }
            Binning::SphereBands { bands, azimuth } => {
                let theta = x[0].clamp(-1.0, 1.0).acos();
                let i = (theta * bands as f64 / PI).round() as usize;
                if i == 0 {
                    return 0;
                }
                if i >= bands {
                    return self.n_bins() - 1;
                }
                let phi = x[2].atan2(x[1]).rem_euclid(2.0 * PI);
                let j = ((phi * azimuth as f64 / (2.0 * PI)) as usize).min(azimuth - 1);
                1 + (i - 1) * azimuth + j
            }
        }
    }

    pub fn extent(&self, bin: usize) -> BinExtent {
        match *self {
            Binning::TorusGrid { k } => {
                let h = 0.5 / k as f64;
                let (i, j) = (bin / k, bin % k);
                let (cx, cy) = (i as f64 / k as f64, j as f64 / k as f64);
                BinExtent {
                    first: (cx - h, cx + h),
                    second: (cy - h, cy + h),
                }
            }
            Binning::SphereBands { bands, azimuth } => {
                let h = 0.5 * PI / bands as f64;
                let full = (0.0, 2.0 * PI);
                if bin == 0 {
                    return BinExtent {
                        first: (0.0, h),
                        second: full,
                    };
                }
                if bin == self.n_bins() - 1 {
                    return BinExtent {
                        first: (PI - h, PI),
                        second: full,
                    };
                }
                let i = (bin - 1) / azimuth + 1;
                let j = (bin - 1) % azimuth;
                let theta = PI * i as f64 / bands as f64;
                let w = 2.0 * PI / azimuth as f64;
                BinExtent {
                    first: (theta - h, theta + h),
                    second: (j as f64 * w, (j + 1) as f64 * w),
                }
            }
        }
    }

    fn chart_point(&self, m: Manifold, a: f64, b: f64) -> Coords {
        match self {
            Binning::TorusGrid { .. } => [a.rem_euclid(1.0), b.rem_euclid(1.0)].into_iter().collect(),
            Binning::SphereBands { .. } => {
                let mut c: Coords = smallvec::smallvec![0.0; m.ambient_dim()];
                c[0] = a.cos();
                c[1] = a.sin() * b.cos();
                c[2] = a.sin() * b.sin();
                c
            }
        }
    }

    pub fn center(&self, m: Manifold, bin: usize) -> Coords {
        let e = self.extent(bin);
        let a = 0.5 * (e.first.0 + e.first.1);
        let b = 0.5 * (e.second.0 + e.second.1);
        match self {
            Binning::SphereBands { .. } if bin == 0 => self.chart_point(m, 0.0, 0.0),
            Binning::SphereBands { .. } if bin == self.n_bins() - 1 => {
                self.chart_point(m, PI, 0.0)
            }
            _ => self.chart_point(m, a, b),
        }
    }

    /// A 3 × 3 lattice of points spanning the bin (corners, edge midpoints
    /// and centre), used to bound the variation of integrands over a bin.
    pub fn probes(&self, m: Manifold, bin: usize) -> Vec<Coords> {
        let e = self.extent(bin);
        let mut out = Vec::with_capacity(9);
        for s in [0.0, 0.5, 1.0] {
            for t in [0.0, 0.5, 1.0] {
                let a = e.first.0 + s * (e.first.1 - e.first.0);
                let b = e.second.0 + t * (e.second.1 - e.second.0);
                out.push(self.chart_point(m, a, b));
            }
        }
        out
    }

    /// Normalised Riemannian volume of a bin.
    pub fn volume(&self, bin: usize) -> f64 {
        let e = self.extent(bin);
        match self {
            Binning::TorusGrid { .. } => {
                (e.first.1 - e.first.0) * (e.second.1 - e.second.0)
            }
            Binning::SphereBands { .. } => {
                // S^2 area element sin θ dθ dφ over 4π
                (e.first.0.cos() - e.first.1.cos()) * (e.second.1 - e.second.0) / (4.0 * PI)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub manifold: Manifold,
    pub binning: Binning,
    pub masses: Vec<f64>,
    pub sample_count: u64,
    /// Number of independent unit-time windows behind the estimate
    /// (`n_paths × retained time`); infinite for measures built exactly.
    pub effective_samples: f64,
}

impl MeasureEstimate {
    pub fn from_counts(
        manifold: Manifold,
        binning: Binning,
        counts: &[u64],
        effective_samples: f64,
    ) -> Result<Self> {
        binning.check(manifold)?;
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyAfterBurnIn);
        }
        let masses = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(MeasureEstimate {
            manifold,
            binning,
            masses,
            sample_count: total,
            effective_samples,
        })
    }

    /// Riemannian volume measure, binned.
    pub fn uniform(manifold: Manifold, binning: Binning) -> Result<Self> {
        binning.check(manifold)?;
        let vols: Vec<f64> = (0..binning.n_bins()).map(|b| binning.volume(b)).collect();
        let total: f64 = vols.iter().sum();
        Ok(MeasureEstimate {
            manifold,
            binning,
            masses: vols.iter().map(|v| v / total).collect(),
            sample_count: 0,
            effective_samples: f64::INFINITY,
        })
    }

    /// Unit mass in the bin containing `x`.
    pub fn dirac(x: &Point, binning: Binning) -> Result<Self> {
        let m = x.manifold();
        binning.check(m)?;
        let mut masses = vec![0.0; binning.n_bins()];
        masses[binning.bin_index(x.coords())] = 1.0;
        Ok(MeasureEstimate {
            manifold: m,
            binning,
            masses,
            sample_count: 0,
            effective_samples: f64::INFINITY,
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass of the bins whose centre satisfies `pred`.
    pub fn mass_where<F: Fn(&[f64]) -> bool>(&self, pred: F) -> f64 {
        self.support()
            .filter(|&(b, _)| pred(&self.binning.center(self.manifold, b)))
            .map(|(_, w)| w)
            .sum()
    }

    /// `(bin, mass)` over bins with positive mass.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.masses
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(b, &w)| (b, w))
    }

    /// CSV `bin_index,center_0,…,mass`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.manifold.ambient_dim();
        let cols: Vec<String> = (0..d).map(|i| format!("center_{i}")).collect();
        writeln!(w, "bin_index,{},mass", cols.join(","))?;
        for (b, mass) in self.masses.iter().enumerate() {
            let c = self.binning.center(self.manifold, b);
            let c: Vec<String> = c.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{b},{},{mass:.16e}", c.join(","))?;
        }
        Ok(())
    }
}

/// Streams visit counts of one path; points at step indices `≥ from_step`
/// are counted.
pub struct OccupationAccumulator {
    binning: Binning,
    counts: Vec<u64>,
    from_step: usize,
}

impl OccupationAccumulator {
    pub fn new(binning: Binning, from_step: usize) -> Self {
        OccupationAccumulator {
            binning,
            counts: vec![0; binning.n_bins()],
            from_step,
        }
    }

    pub fn count_start(&mut self, x0: &[f64]) {
        if self.from_step == 0 {
            self.counts[self.binning.bin_index(x0)] += 1;
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

impl PathObserver for OccupationAccumulator {
    fn observe(&mut self, s: &StepView<'_>) -> Result<()> {
        if s.index + 1 >= self.from_step {
            self.counts[self.binning.bin_index(s.to)] += 1;
        }
        Ok(())
    }
}

pub(crate) fn burn_in_steps(n_steps: usize, burn_in: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(invalid(format!("burn-in fraction must lie in [0, 1), got {burn_in}")));
    }
    Ok((burn_in * n_steps as f64).ceil() as usize)
}

/// Normalised visit-frequency histogram of recorded paths after discarding
/// the first `burn_in` fraction of each.
pub fn occupation_measure(
    paths: &[SamplePath],
    binning: Binning,
    burn_in: f64,
) -> Result<MeasureEstimate> {
    let first = paths.first().ok_or(Error::EmptyAfterBurnIn)?;
    let m = first.manifold();
    binning.check(m)?;
    let mut counts = vec![0u64; binning.n_bins()];
    let mut window = 0.0;
    for p in paths {
        if p.manifold() != m {
            return Err(Error::ManifoldMismatch {
                expected: m,
                found: p.manifold(),
            });
        }
        let k0 = burn_in_steps(p.n_steps(), burn_in)?;
        for k in k0..p.len() {
            counts[binning.bin_index(p.coords_at(k))] += 1;
        }
        window += (p.n_steps().saturating_sub(k0)) as f64 * p.dt();
    }
    MeasureEstimate::from_counts(m, binning, &counts, window.max(1.0))
}

/// Occupation measure of an ensemble without retaining the paths.
pub fn occupation_from_ensemble(
    spec: &DiffusionSpec,
    x0: &Point,
    ens: &EnsembleSpec,
    binning: Binning,
    burn_in: f64,
) -> Result<MeasureEstimate> {
    binning.check(spec.manifold())?;
    let k0 = burn_in_steps(ens.n_steps(), burn_in)?;
    let per_path = run_ensemble(
        spec,
        x0,
        ens,
        |_| {
            let mut acc = OccupationAccumulator::new(binning, k0);
            acc.count_start(x0.coords());
            acc
        },
        |_, acc, _| Ok(acc.counts),
    )?;
    let mut counts = vec![0u64; binning.n_bins()];
    for c in &per_path {
        for (t, v) in counts.iter_mut().zip(c) {
            *t += v;
        }
    }
    let per_path_window = (ens.n_steps() - k0.min(ens.n_steps())) as f64 * ens.dt;
    let window: f64 = (0..ens.n_paths).map(|_| per_path_window).sum();
    MeasureEstimate::from_counts(spec.manifold(), binning, &counts, window.max(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub function: String,
    /// `Σ_bins Lf(centre) μ(bin)`.
    pub residual: f64,
    pub tolerance: f64,
    /// `Σ_bins μ(bin) · max_probes |Lf(probe) - Lf(centre)|`.
    pub discretization: f64,
    /// `3 sup_supp |Lf| / sqrt(effective samples)`.
    pub monte_carlo: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantValidation {
    pub residuals: Vec<Residual>,
    pub all_pass: bool,
}

/// Histogram quadrature of a function against a measure, with the
/// bin-variation allowance.
pub(crate) fn quadrature<F: Fn(&[f64]) -> Result<f64>>(
    mu: &MeasureEstimate,
    g: F,
) -> Result<(f64, f64, f64)> {
    let (mut value, mut disc, mut sup) = (0.0, 0.0, 0.0f64);
    for (b, w) in mu.support() {
        let c = g(&mu.binning.center(mu.manifold, b))?;
        let mut osc = 0.0f64;
        for p in mu.binning.probes(mu.manifold, b) {
            if let Ok(v) = g(&p) {
                osc = osc.max((v - c).abs());
            }
        }
        value += w * c;
        disc += w * osc;
        sup = sup.max(c.abs());
    }
    Ok((value, disc, sup))
}

/// Checks `∫ Lf dμ = 0` for every test function.
pub fn validate_invariant(
    mu: &MeasureEstimate,
    spec: &DiffusionSpec,
    tests: &[ScalarField],
) -> Result<InvariantValidation> {
    if mu.manifold != spec.manifold() {
        return Err(Error::ManifoldMismatch {
            expected: spec.manifold(),
            found: mu.manifold,
        });
    }
    let mut residuals = Vec::with_capacity(tests.len());
    for f in tests {
        let generator = GeneratorEval::new(spec, f)?;
        let (residual, discretization, sup) = quadrature(mu, |x| generator.eval_checked(x))?;
        let monte_carlo = 3.0 * sup / mu.effective_samples.sqrt();
        let tolerance = discretization + monte_carlo;
        residuals.push(Residual {
            function: f.to_string(),
            residual,
            tolerance,
            discretization,
            monte_carlo,
            pass: residual.abs() <= tolerance,
        });
    }
    let all_pass = residuals.iter().all(|r| r.pass);
    Ok(InvariantValidation {
        residuals,
        all_pass,
    })
}

type DistanceFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct UserRegion {
    pub name: String,
    pub manifold: Manifold,
    /// Distance to the core set; the region is `{distance < radius}`.
    pub distance: Arc<DistanceFn>,
    pub radius: f64,
}

impl fmt::Debug for UserRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserRegion")
            .field("name", &self.name)
            .field("radius", &self.radius)
            .finish_non_exhaustive()
    }
}

/// Open neighbourhoods of the invariant sets of the catalog examples.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionSpec {
    /// Geodesic caps around `(±1, 0, …, 0)`.
    SpherePoles { cap_radius: f64 },
    /// Tubes `|x - c| < r` around the circles `{x = c}`.
    TorusCircles { x_values: Vec<f64>, tube_radius: f64 },
    #[serde(skip)]
    User(UserRegion),
}

impl RegionSpec {
    pub fn check(&self, m: Manifold) -> Result<()> {
        let ok = match self {
            RegionSpec::SpherePoles { .. } => m.is_sphere(),
            RegionSpec::TorusCircles { .. } => m == Manifold::Torus2,
            RegionSpec::User(u) => u.manifold == m,
        };
        if !ok {
            return Err(Error::Unsupported(self.to_string(), m));
        }
        if !(self.radius() > 0.0) {
            return Err(invalid("region radius must be positive"));
        }
        Ok(())
    }

    pub fn radius(&self) -> f64 {
        match self {
            RegionSpec::SpherePoles { cap_radius } => *cap_radius,
            RegionSpec::TorusCircles { tube_radius, .. } => *tube_radius,
            RegionSpec::User(u) => u.radius,
        }
    }

    /// Distance from `x` to the core set (poles or circles).
    pub fn core_distance(&self, x: &[f64]) -> f64 {
        match self {
            RegionSpec::SpherePoles { .. } => x[0].abs().min(1.0).acos(),
            RegionSpec::TorusCircles { x_values, .. } => x_values
                .iter()
                .map(|c| circle_distance(x[0], *c))
                .fold(f64::INFINITY, f64::min),
            RegionSpec::User(u) => (u.distance)(x),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.core_distance(x) < self.radius()
    }

    /// Smallest distance from the core set to any point of a bin.
    pub fn bin_distance(&self, m: Manifold, binning: &Binning, bin: usize) -> f64 {
        let e = binning.extent(bin);
        match (self, binning) {
            (RegionSpec::SpherePoles { .. }, Binning::SphereBands { .. }) => {
                e.first.0.min(PI - e.first.1).max(0.0)
            }
            (RegionSpec::TorusCircles { x_values, .. }, Binning::TorusGrid { .. }) => {
                let centre = 0.5 * (e.first.0 + e.first.1);
                let half = 0.5 * (e.first.1 - e.first.0);
                x_values
                    .iter()
                    .map(|c| (circle_distance(centre, *c) - half).max(0.0))
                    .fold(f64::INFINITY, f64::min)
            }
            _ => binning
                .probes(m, bin)
                .iter()
                .map(|p| self.core_distance(p))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

fn circle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

impl fmt::Display for RegionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionSpec::SpherePoles { cap_radius } => write!(f, "sphere-poles(r={cap_radius})"),
            RegionSpec::TorusCircles {
                x_values,
                tube_radius,
            } => write!(f, "torus-circles(x={x_values:?}, r={tube_radius})"),
            RegionSpec::User(u) => write!(f, "{}(r={})", u.name, u.radius),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coherence {
    pub coherent: bool,
    pub leaked_mass: f64,
    pub radius: f64,
}

/// Largest leaked mass still reported as coherent.
pub const COHERENCE_TOLERANCE: f64 = 1e-9;

/// Mass of the bins meeting the `radius`-neighbourhood of `W`.
pub fn coherence_check(mu: &MeasureEstimate, w: &RegionSpec, radius: f64) -> Result<Coherence> {
    w.check(mu.manifold)?;
    if !(radius > 0.0) {
        return Err(invalid("neighbourhood radius must be positive"));
    }
    let reach = w.radius() + radius;
    let leaked_mass: f64 = mu
        .support()
        .filter(|&(b, _)| w.bin_distance(mu.manifold, &mu.binning, b) < reach)
        .map(|(_, m)| m)
        .sum();
    Ok(Coherence {
        coherent: leaked_mass <= COHERENCE_TOLERANCE,
        leaked_mass,
        radius,
    })
}
