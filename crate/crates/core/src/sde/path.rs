use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::rng::{GaussianIncrements, IncrementSource, RecordedIncrements};
use super::DiffusionSpec;
use crate::error::{invalid, Error, Result};
use crate::geometry::{Coords, LiftTracker, Manifold, Point};

/// One integrator step as seen by observers.
#[derive(Debug)]
pub struct StepView<'a> {
    pub index: usize,
    /// Start time of the step.
    pub t: f64,
    pub dt: f64,
    pub from: &'a [f64],
    pub to: &'a [f64],
    pub dw: &'a [f64],
}

/// Streaming consumer of a path; lets long runs accumulate functionals
/// without retaining points.
pub trait PathObserver {
    fn observe(&mut self, step: &StepView<'_>) -> Result<()>;
}

impl PathObserver for () {
    fn observe(&mut self, _: &StepView<'_>) -> Result<()> {
        Ok(())
    }
}

impl<A: PathObserver, B: PathObserver> PathObserver for (A, B) {
    fn observe(&mut self, step: &StepView<'_>) -> Result<()> {
        self.0.observe(step)?;
        self.1.observe(step)
    }
}

impl<A: PathObserver, B: PathObserver, C: PathObserver> PathObserver for (A, B, C) {
    fn observe(&mut self, step: &StepView<'_>) -> Result<()> {
        self.0.observe(step)?;
        self.1.observe(step)?;
        self.2.observe(step)
    }
}

impl<O: PathObserver> PathObserver for Vec<O> {
    fn observe(&mut self, step: &StepView<'_>) -> Result<()> {
        self.iter_mut().try_for_each(|o| o.observe(step))
    }
}

/// Tracks the continuous lift of a torus path.
pub struct LiftObserver(pub LiftTracker);

impl PathObserver for LiftObserver {
    fn observe(&mut self, step: &StepView<'_>) -> Result<()> {
        self.0.advance(step.from, step.to);
        Ok(())
    }
}

/// Runs `n_steps` Heun steps from `x0`, feeding every step to `observer`.
/// Returns the final point.
pub fn drive<O: PathObserver + ?Sized>(
    spec: &DiffusionSpec,
    x0: &Point,
    dt: f64,
    n_steps: usize,
    source: &mut dyn IncrementSource,
    observer: &mut O,
) -> Result<Point> {
    spec.check_point(x0)?;
    let m = spec.manifold();
    let mut x: Coords = x0.coords().into();
    let mut dw = vec![0.0; spec.noise_dim()];
    for k in 0..n_steps {
        source.next_increment(dt, &mut dw);
        let mut next = spec
            .heun_unretracted(&x, dt, &dw)
            .map_err(|e| e.at_step(k))?;
        m.retract_in_place(&mut next).map_err(|e| e.at_step(k))?;
        observer
            .observe(&StepView {
                index: k,
                t: k as f64 * dt,
                dt,
                from: &x,
                to: &next,
                dw: &dw,
            })
            .map_err(|e| e.at_step(k))?;
        x = next;
    }
    Ok(Point::from_raw(m, x))
}

/// Retained discretised trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    manifold: Manifold,
    spec_fingerprint: String,
    dt: f64,
    /// Seed of the increment stream; `None` for paths driven by supplied
    /// increments.
    seed: Option<u64>,
    noise_dim: usize,
    coords: Vec<f64>,
    dw: Vec<f64>,
}

impl SamplePath {
    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn spec_fingerprint(&self) -> &str {
        &self.spec_fingerprint
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Number of recorded points (steps + 1).
    pub fn len(&self) -> usize {
        self.coords.len() / self.manifold.ambient_dim()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn coords_at(&self, k: usize) -> &[f64] {
        let d = self.manifold.ambient_dim();
        &self.coords[k * d..(k + 1) * d]
    }

    pub fn point(&self, k: usize) -> Point {
        Point::from_raw(self.manifold, self.coords_at(k).into())
    }

    pub fn dw_at(&self, k: usize) -> &[f64] {
        &self.dw[k * self.noise_dim..(k + 1) * self.noise_dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.dw
    }

    /// Replays the path through an observer exactly as the simulator did.
    pub fn replay<O: PathObserver + ?Sized>(&self, observer: &mut O) -> Result<()> {
        for k in 0..self.n_steps() {
            observer
                .observe(&StepView {
                    index: k,
                    t: self.time(k),
                    dt: self.dt,
                    from: self.coords_at(k),
                    to: self.coords_at(k + 1),
                    dw: self.dw_at(k),
                })
                .map_err(|e| e.at_step(k))?;
        }
        Ok(())
    }

    /// Time-reversed copy (increments negated and reversed).
    pub fn reversed(&self) -> SamplePath {
        let d = self.manifold.ambient_dim();
        let m = self.noise_dim;
        let coords = self.coords.chunks(d).rev().flatten().copied().collect();
        let dw = if m == 0 {
            Vec::new()
        } else {
            self.dw.chunks(m).rev().flatten().map(|v| -v).collect()
        };
        SamplePath {
            coords,
            dw,
            ..self.clone()
        }
    }

    /// CSV dump `t,coord_0,…,coord_d,dW_0,…,dW_{m-1}` with 17 significant
    /// digits. Row `k` carries the increment applied on `[t_k, t_{k+1}]`; the
    /// final row leaves the increment columns empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.manifold.ambient_dim();
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("coord_{i}")));
        header.extend((0..self.noise_dim).map(|i| format!("dW_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![format!("{:.16e}", self.time(k))];
            row.extend(self.coords_at(k).iter().map(|c| format!("{c:.16e}")));
            if k < self.n_steps() {
                row.extend(self.dw_at(k).iter().map(|c| format!("{c:.16e}")));
            } else {
                row.extend((0..self.noise_dim).map(|_| String::new()));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Observer that retains every point and increment.
pub struct Recorder {
    coords: Vec<f64>,
    dw: Vec<f64>,
}

impl Recorder {
    pub fn new(x0: &Point, n_steps: usize, noise_dim: usize) -> Self {
        let mut coords = Vec::with_capacity((n_steps + 1) * x0.coords().len());
        coords.extend_from_slice(x0.coords());
        Recorder {
            coords,
            dw: Vec::with_capacity(n_steps * noise_dim),
        }
    }

    pub fn finish(self, spec: &DiffusionSpec, dt: f64, seed: Option<u64>) -> SamplePath {
        SamplePath {
            manifold: spec.manifold(),
            spec_fingerprint: spec.fingerprint(),
            dt,
            seed,
            noise_dim: spec.noise_dim(),
            coords: self.coords,
            dw: self.dw,
        }
    }
}

impl PathObserver for Recorder {
    fn observe(&mut self, step: &StepView<'_>) -> Result<()> {
        self.coords.extend_from_slice(step.to);
        self.dw.extend_from_slice(step.dw);
        Ok(())
    }
}

pub(crate) fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    if !(dt > 0.0) || dt > horizon {
        return Err(invalid(format!("dt must lie in (0, horizon], got {dt}")));
    }
    Ok((horizon / dt).round() as usize)
}

/// Simulates one path of `round(horizon / dt)` steps from Gaussian increments
/// seeded by `seed`.
pub fn simulate_path(
    spec: &DiffusionSpec,
    x0: &Point,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<SamplePath> {
    let n = step_count(horizon, dt)?;
    let mut rec = Recorder::new(x0, n, spec.noise_dim());
    drive(spec, x0, dt, n, &mut GaussianIncrements::new(seed), &mut rec)?;
    Ok(rec.finish(spec, dt, Some(seed)))
}

/// Simulates a path from explicit increments (`noise_dim` values per step).
pub fn simulate_path_with_increments(
    spec: &DiffusionSpec,
    x0: &Point,
    dt: f64,
    increments: &[f64],
) -> Result<SamplePath> {
    if !(dt > 0.0) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    let m = spec.noise_dim();
    let n = if m == 0 {
        return Err(invalid("deterministic specs take no increments"));
    } else {
        if increments.len() % m != 0 {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: increments.len() % m,
            });
        }
        increments.len() / m
    };
    let mut rec = Recorder::new(x0, n, m);
    drive(spec, x0, dt, n, &mut RecordedIncrements::new(increments), &mut rec)?;
    Ok(rec.finish(spec, dt, None))
}
