use stratoform::catalog::{sphere_example, torus_example};
use stratoform::cycles::{estimate_cycle, estimate_j_with_allowance, h1_basis};
use stratoform::geometry::{wrap_torus, Point, ScalarField};
use stratoform::measures::{occupation_from_ensemble, validate_invariant, Binning, RegionSpec};
use stratoform::sde::{Convention, EnsembleSpec};

#[test]
fn torus_occupation_concentrates_on_both_circles() {
    let spec = torus_example(Convention::Half);
    let ens = EnsembleSpec::new(20, 3, 100.0, 1e-3).unwrap();
    let mu = occupation_from_ensemble(&spec, &wrap_torus([0.25, 0.0]).unwrap(), &ens, Binning::TorusGrid { k: 64 }, 0.1)
        .unwrap();
    let near = |c: f64| mu.mass_where(|x| stratoform::geometry::torus_delta(c, x[0]).abs() < 0.05);
    let (a, b) = (near(0.0), near(0.5));
    assert!(a + b > 0.9, "mass near circles {a} + {b}");
    // both circles attract: paths start halfway between them
    assert!(a > 0.1 && b > 0.1, "{a} {b}");
}

#[test]
fn sphere_occupation_concentrates_at_the_poles() {
    // atanh(x_1) is a Brownian motion, so the time spent away from the poles
    // decays like 1/sqrt(t)
    let spec = sphere_example(2, Convention::Half);
    let x0 = Point::new(spec.manifold(), &[0.0, 1.0, 0.0]).unwrap();
    let poles = RegionSpec::SpherePoles { cap_radius: 0.2 };
    let cap_mass = |horizon: f64| {
        let ens = EnsembleSpec::new(20, 4, horizon, 1e-3).unwrap();
        occupation_from_ensemble(&spec, &x0, &ens, Binning::SphereBands { bands: 32, azimuth: 8 }, 0.1)
            .unwrap()
            .mass_where(|x| poles.contains(x))
    };
    let (short, long) = (cap_mass(50.0), cap_mass(500.0));
    assert!(long > short && long > 0.75, "{short} {long}");
}

#[test]
fn refinement_leaves_the_residuals_within_tolerance() {
    let spec = torus_example(Convention::Half);
    let x0 = wrap_torus([0.25, 0.0]).unwrap();
    let ens = EnsembleSpec::new(10, 8, 50.0, 1e-3).unwrap();
    let tests = [ScalarField::SinTwoPi(1), ScalarField::CosTwoPi(1)];
    let coarse = Binning::TorusGrid { k: 32 };
    let a = occupation_from_ensemble(&spec, &x0, &ens, coarse, 0.1).unwrap();
    let b = occupation_from_ensemble(&spec, &x0, &ens, coarse.refined(), 0.1).unwrap();
    let va = validate_invariant(&a, &spec, &tests).unwrap();
    let vb = validate_invariant(&b, &spec, &tests).unwrap();
    for (ra, rb) in va.residuals.iter().zip(&vb.residuals) {
        let allowance = ra.discretization + rb.discretization + 1e-12;
        assert!((ra.residual - rb.residual).abs() <= allowance, "{ra:?} {rb:?}");
    }
}

#[test]
fn cycle_and_j_agree_on_the_torus() {
    // the long-time average of a closed form and J on the occupation measure
    // estimate the same number
    let spec = torus_example(Convention::Half);
    let x0 = wrap_torus([0.25, 0.0]).unwrap();
    let ens = EnsembleSpec::new(20, 12, 50.0, 1e-3).unwrap();
    let basis = h1_basis(spec.manifold()).unwrap();
    let c = estimate_cycle(&spec, &x0, &basis, &ens).unwrap();
    let mu = occupation_from_ensemble(&spec, &x0, &ens, Binning::TorusGrid { k: 64 }, 0.1).unwrap();
    for (i, name) in ["dx", "dy"].iter().enumerate() {
        let j = estimate_j_with_allowance(&spec, &mu, &basis[i]).unwrap();
        let (pairing, ci) = c.pairing(name).unwrap();
        assert!(
            (pairing - j.value).abs() <= 3.0 * ci + j.quadrature_allowance,
            "{name}: {pairing} ± {ci} vs {j:?}"
        );
    }
}
