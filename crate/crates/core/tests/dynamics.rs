use std::f64::consts::PI;

use stratoform::catalog::{sphere_example, torus_example};
use stratoform::geometry::{torus_delta, wrap_torus, Point};
use stratoform::sde::rng::{brownian_increments, coarsen_increments, path_seed};
use stratoform::sde::{simulate_path_with_increments, Convention, SamplePath};

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

fn sphere_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Cumulative Brownian motion from the increments of a one-noise path.
fn brownian_at_end(dw: &[f64]) -> f64 {
    dw.iter().sum()
}

/// Lifted y displacement of a torus path.
fn lifted_dy(p: &SamplePath) -> f64 {
    (0..p.n_steps())
        .map(|k| torus_delta(p.coords_at(k)[1], p.coords_at(k + 1)[1]))
        .sum()
}

#[test]
fn heun_strong_order_on_the_sphere() {
    // endpoint error against a 1e-4 reference on the same Brownian path
    let spec = sphere_example(2, Convention::Half);
    let x0 = Point::new(spec.manifold(), &[0.0, 1.0, 0.0]).unwrap();
    let fine_dt = 1e-4;
    let n_fine = 10_000;
    let factors = [100usize, 50, 25];
    let mut errors = vec![Vec::new(); factors.len()];
    for k in 0..100 {
        let fine = brownian_increments(path_seed(77, k), fine_dt, n_fine, 1);
        let reference = simulate_path_with_increments(&spec, &x0, fine_dt, &fine).unwrap();
        let end = reference.coords_at(n_fine);
        for (i, &f) in factors.iter().enumerate() {
            let coarse = coarsen_increments(&fine, 1, f);
            let p = simulate_path_with_increments(&spec, &x0, fine_dt * f as f64, &coarse).unwrap();
            errors[i].push(sphere_gap(p.coords_at(p.n_steps()), end));
        }
    }
    let r: Vec<f64> = errors.iter().map(|e| rms(e)).collect();
    let rate = (r[0] / r[2]).log2() / 2.0;
    assert!(rate >= 0.9, "rms errors {r:?}, rate {rate}");
}

#[test]
fn torus_example_follows_its_closed_form() {
    // u = ln tan(πx) / 2π equals W, and y_T - y_0 = -ln cosh(2π W_T) / 2π
    let spec = torus_example(Convention::Half);
    let x0 = wrap_torus([0.25, 0.0]).unwrap();
    let dt = 1e-5;
    let n = 50_000;
    let (mut du, mut dy) = (Vec::new(), Vec::new());
    for k in 0..20 {
        let inc = brownian_increments(path_seed(5, k), dt, n, 1);
        let p = simulate_path_with_increments(&spec, &x0, dt, &inc).unwrap();
        let w = brownian_at_end(&inc);
        let x = p.coords_at(n)[0];
        du.push((PI * x).tan().ln() / (2.0 * PI) - w);
        dy.push(lifted_dy(&p) + (2.0 * PI * w).cosh().ln() / (2.0 * PI));
    }
    assert!(rms(&du) < 0.01, "u - W: {du:?}");
    assert!(rms(&dy) < 0.01, "y residual: {dy:?}");
}

#[test]
fn integrator_error_shrinks_with_the_step() {
    let spec = torus_example(Convention::Half);
    let x0 = wrap_torus([0.25, 0.0]).unwrap();
    let fine_dt = 1e-5;
    let n = 100_000;
    let mut gaps = [0.0f64; 2];
    for k in 0..10 {
        let fine = brownian_increments(path_seed(9, k), fine_dt, n, 1);
        let w = brownian_at_end(&fine);
        for (i, f) in [100usize, 10].into_iter().enumerate() {
            let inc = coarsen_increments(&fine, 1, f);
            let p = simulate_path_with_increments(&spec, &x0, fine_dt * f as f64, &inc).unwrap();
            let u = (PI * p.coords_at(p.n_steps())[0]).tan().ln() / (2.0 * PI);
            gaps[i] += (u - w).powi(2);
        }
    }
    assert!(gaps[1] < gaps[0] / 10.0, "{gaps:?}");
}
