use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::path::{drive, step_count, PathObserver, Recorder, SamplePath};
use super::rng::{path_seed, GaussianIncrements};
use super::DiffusionSpec;
use crate::error::{invalid, Result};
use crate::geometry::Point;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_paths: usize,
    pub base_seed: u64,
    pub horizon: f64,
    pub dt: f64,
}

impl EnsembleSpec {
    pub fn new(n_paths: usize, base_seed: u64, horizon: f64, dt: f64) -> Result<Self> {
        let e = EnsembleSpec {
            n_paths,
            base_seed,
            horizon,
            dt,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(invalid("n_paths must be positive"));
        }
        step_count(self.horizon, self.dt).map(|_| ())
    }

    /// Fixed step count `round(horizon / dt)`.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn path_seed(&self, index: usize) -> u64 {
        path_seed(self.base_seed, index as u64)
    }

    pub fn with_paths(self, n_paths: usize) -> Self {
        EnsembleSpec { n_paths, ..self }
    }

    pub fn with_horizon(self, horizon: f64) -> Self {
        EnsembleSpec { horizon, ..self }
    }
}

/// Simulates every ensemble member with its own observer and collects the
/// per-path results in path order. Results do not depend on the number of
/// worker threads; on failure the error of the lowest failing path index is
/// returned.
pub fn run_ensemble<O, R, F, G>(
    spec: &DiffusionSpec,
    x0: &Point,
    ens: &EnsembleSpec,
    make: F,
    finish: G,
) -> Result<Vec<R>>
where
    O: PathObserver,
    R: Send,
    F: Fn(usize) -> O + Sync,
    G: Fn(usize, O, Point) -> Result<R> + Sync,
{
    ens.validate()?;
    spec.check_point(x0)?;
    let n = ens.n_steps();
    let results: Vec<Result<R>> = (0..ens.n_paths)
        .into_par_iter()
        .map(|k| {
            let mut obs = make(k);
            let mut src = GaussianIncrements::new(ens.path_seed(k));
            let end = drive(spec, x0, ens.dt, n, &mut src, &mut obs).map_err(|e| e.on_path(k))?;
            finish(k, obs, end).map_err(|e| e.on_path(k))
        })
        .collect();
    results.into_iter().collect()
}

/// Retains every ensemble path.
pub fn simulate_ensemble(
    spec: &DiffusionSpec,
    x0: &Point,
    ens: &EnsembleSpec,
) -> Result<Vec<SamplePath>> {
    let n = ens.n_steps();
    run_ensemble(
        spec,
        x0,
        ens,
        |_| Recorder::new(x0, n, spec.noise_dim()),
        |k, rec, _| Ok(rec.finish(spec, ens.dt, Some(ens.path_seed(k)))),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Manifold, VectorFieldSpec, wrap_torus};
    use crate::sde::{simulate_path, Convention};

    fn spec() -> DiffusionSpec {
        DiffusionSpec::new(
            Manifold::Torus2,
            None,
            vec![VectorFieldSpec::TorusSinCos],
            Convention::Half,
        )
        .unwrap()
    }

    #[test]
    fn single_member_matches_simulate_path() {
        let x0 = wrap_torus([0.25, 0.0]).unwrap();
        let ens = EnsembleSpec::new(1, 42, 0.5, 1e-3).unwrap();
        let paths = simulate_ensemble(&spec(), &x0, &ens).unwrap();
        let single = simulate_path(&spec(), &x0, 0.5, 1e-3, ens.path_seed(0)).unwrap();
        assert_eq!(paths[0], single);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let x0 = wrap_torus([0.25, 0.0]).unwrap();
        let ens = EnsembleSpec::new(16, 3, 0.2, 1e-3).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_ensemble(&spec(), &x0, &ens).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn validation() {
        assert!(EnsembleSpec::new(0, 1, 1.0, 0.1).is_err());
        assert!(EnsembleSpec::new(1, 1, 1.0, -0.1).is_err());
        assert_eq!(EnsembleSpec::new(1, 1, 1.0, 0.3).unwrap().n_steps(), 3);
    }
}
