//! Shared fixtures for the integration tests.

use hemato_core::model::ModelParams;
use rand::Rng;

#[allow(dead_code)]
pub fn pset_a() -> ModelParams {
    ModelParams::baseline()
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn optional_coeff<R: Rng>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        0.0
    } else {
        rng.random_range(0.05..1.5)
    }
}

/// A random parameter set satisfying the positivity assumptions, with
/// rates of order one so flows stay well conditioned.
#[allow(dead_code)]
pub fn random_valid_params<R: Rng>(rng: &mut R) -> ModelParams {
    ModelParams {
        a: log_uniform(rng, 0.3, 3.0),
        a_m: log_uniform(rng, 0.3, 3.0),
        q1: log_uniform(rng, 0.3, 3.0),
        q2: optional_coeff(rng),
        q3: optional_coeff(rng),
        q1m: log_uniform(rng, 0.3, 3.0),
        q2m: optional_coeff(rng),
        q3m: optional_coeff(rng),
        c1: log_uniform(rng, 0.3, 3.0),
        c2: optional_coeff(rng),
        c3: optional_coeff(rng),
        c1m: log_uniform(rng, 0.3, 3.0),
        c2m: optional_coeff(rng),
        c3m: optional_coeff(rng),
        d: log_uniform(rng, 0.3, 3.0),
        d_m: log_uniform(rng, 0.3, 3.0),
        alpha: rng.random_range(0.3..1.2),
        beta: rng.random_range(0.3..1.2),
    }
    .validated()
    .expect("generator produces valid parameters")
}

/// Random state in the ambient space, with the blood-cell densities
/// bounded away from zero so central differences stay in range.
#[allow(dead_code)]
pub fn random_state<R: Rng>(rng: &mut R, x2_max: f64, x3_max: f64) -> [f64; 3] {
    [
        rng.random_range(0.001..0.999),
        rng.random_range(0.001..x2_max),
        rng.random_range(0.001..x3_max),
    ]
}

/// Uniform point in the box; safe for zero-width axes (the box
/// degenerates in x1 when q2 = q3 = 0).
#[allow(dead_code)]
pub fn random_in_box<R: Rng>(rng: &mut R, bx: &hemato_core::model::InvariantBox) -> [f64; 3] {
    let mut x = [0.0; 3];
    for j in 0..3 {
        x[j] = bx.lo[j] + rng.random::<f64>() * bx.width(j);
    }
    x
}
