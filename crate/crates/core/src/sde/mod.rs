//! Stratonovich SDEs `dX = V(X) dt + Σ X_i(X) ∘ dW^i` on the sphere and the
//! torus, integrated with the Heun predictor–corrector scheme.

mod ensemble;
mod path;
pub mod rng;

use std::fmt;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Coords, Manifold, Point, VectorFieldSpec};

pub use ensemble::{run_ensemble, simulate_ensemble, EnsembleSpec};
pub use path::{
    drive, simulate_path, simulate_path_with_increments, LiftObserver, PathObserver, Recorder,
    SamplePath, StepView,
};

/// Normalisation of the second-order part of the generator: `½ Σ X_i²`
/// (the generator of the Stratonovich SDE) or `Σ X_i²`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Half,
    Unit,
}

impl Convention {
    pub fn coefficient(self) -> f64 {
        match self {
            Convention::Half => 0.5,
            Convention::Unit => 1.0,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Convention::Half => Convention::Unit,
            Convention::Unit => Convention::Half,
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::Half => "half",
            Convention::Unit => "unit",
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffusionSpec {
    manifold: Manifold,
    drift: Option<VectorFieldSpec>,
    noise: Vec<VectorFieldSpec>,
    convention: Convention,
    deterministic: bool,
}

impl DiffusionSpec {
    pub fn new(
        manifold: Manifold,
        drift: Option<VectorFieldSpec>,
        noise: Vec<VectorFieldSpec>,
        convention: Convention,
    ) -> Result<Self> {
        if noise.is_empty() {
            return Err(invalid(
                "a diffusion needs at least one noise field; use DiffusionSpec::deterministic",
            ));
        }
        Self::build(manifold, drift, noise, convention, false)
    }

    /// Pure drift flow, no noise fields.
    pub fn deterministic(manifold: Manifold, drift: Option<VectorFieldSpec>) -> Result<Self> {
        Self::build(manifold, drift, Vec::new(), Convention::Half, true)
    }

    fn build(
        manifold: Manifold,
        drift: Option<VectorFieldSpec>,
        noise: Vec<VectorFieldSpec>,
        convention: Convention,
        deterministic: bool,
    ) -> Result<Self> {
        if let Manifold::Sphere(0) = manifold {
            return Err(invalid("S^0 is not a connected manifold"));
        }
        if let Some(d) = &drift {
            d.check_manifold(manifold)?;
        }
        for f in &noise {
            f.check_manifold(manifold)?;
        }
        Ok(DiffusionSpec {
            manifold,
            drift,
            noise,
            convention,
            deterministic,
        })
    }

    pub fn with_convention(mut self, convention: Convention) -> Self {
        self.convention = convention;
        self
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn drift(&self) -> Option<&VectorFieldSpec> {
        self.drift.as_ref()
    }

    pub fn noise(&self) -> &[VectorFieldSpec] {
        &self.noise
    }

    pub fn noise_dim(&self) -> usize {
        self.noise.len()
    }

    pub fn convention(&self) -> Convention {
        self.convention
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    /// Identifies the SDE itself; the generator convention is not part of it.
    pub fn fingerprint(&self) -> String {
        let drift = self
            .drift
            .as_ref()
            .map_or_else(|| "none".to_string(), |d| d.to_string());
        let noise: Vec<String> = self.noise.iter().map(|n| n.to_string()).collect();
        format!("{}|drift={}|noise=[{}]", self.manifold, drift, noise.join(","))
    }

    pub(crate) fn check_point(&self, x: &Point) -> Result<()> {
        if x.manifold() != self.manifold {
            return Err(Error::ManifoldMismatch {
                expected: self.manifold,
                found: x.manifold(),
            });
        }
        Ok(())
    }

    /// Corrector of the Heun scheme before retraction.
    pub(crate) fn heun_unretracted(&self, x: &[f64], dt: f64, dw: &[f64]) -> Result<Coords> {
        let m = self.manifold;
        let d = x.len();
        let mut predictor: Coords = x.into();
        let mut corrector: Coords = x.into();
        let mut first: SmallVec<[Coords; 2]> = SmallVec::new();

        if let Some(v) = &self.drift {
            let v0 = v.eval_raw(m, x);
            for i in 0..d {
                predictor[i] += v0[i] * dt;
            }
            first.push(v0);
        }
        for (field, w) in self.noise.iter().zip(dw) {
            let b0 = field.eval_raw(m, x);
            for i in 0..d {
                predictor[i] += b0[i] * w;
            }
            first.push(b0);
        }
        if m.is_sphere() {
            m.retract_in_place(&mut predictor)?;
        }

        let mut slot = 0;
        if let Some(v) = &self.drift {
            let v1 = v.eval_raw(m, &predictor);
            for i in 0..d {
                corrector[i] += 0.5 * (first[slot][i] + v1[i]) * dt;
            }
            slot += 1;
        }
        for (field, w) in self.noise.iter().zip(dw) {
            let b1 = field.eval_raw(m, &predictor);
            for i in 0..d {
                corrector[i] += 0.5 * (first[slot][i] + b1[i]) * w;
            }
            slot += 1;
        }
        if corrector.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("Heun step".into()));
        }
        Ok(corrector)
    }
}

/// One Heun (predictor–corrector) Stratonovich step followed by retraction
/// onto the manifold.
pub fn step_stratonovich(spec: &DiffusionSpec, x: &Point, dt: f64, dw: &[f64]) -> Result<Point> {
    spec.check_point(x)?;
    if !(dt > 0.0) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    if dw.len() != spec.noise_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.noise_dim(),
            found: dw.len(),
        });
    }
    let mut next = spec.heun_unretracted(x.coords(), dt, dw)?;
    spec.manifold.retract_in_place(&mut next)?;
    Ok(Point::from_raw(spec.manifold, next))
}
