//! Flow-level properties: semigroup composition, positive invariance of
//! the box, absorption from outside, boundary-normal signs, and the
//! rank of the field/bracket span along accessible points.

mod common;

use common::{pset_a, random_valid_params};
use hemato_core::equilibrium::{flow, sample_accessible, solve_equilibrium};
use hemato_core::model::{
    hormander_rank, invariant_box, vector_field, HybridState, Regime, RANK_TOL,
};
use hemato_core::ode::{OdeOptions, Stepper};
use hemato_core::pdmp::simulate_pdmp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn flow_semigroup_property() {
    let mut rng = ChaCha8Rng::seed_from_u64(414);
    for case in 0..20 {
        let p = if case % 2 == 0 { pset_a() } else { random_valid_params(&mut rng) };
        let bx = invariant_box(&p);
        let x0 = common::random_in_box(&mut rng, &bx);
        let s = rng.random_range(0.0..5.0);
        let t = rng.random_range(0.0..5.0);
        for i in Regime::BOTH {
            let direct = flow(&p, x0, i, s + t, 1e-9).unwrap();
            let mid = flow(&p, x0, i, s, 1e-9).unwrap();
            let composed = flow(&p, mid, i, t, 1e-9).unwrap();
            for j in 0..3 {
                assert!(
                    (direct[j] - composed[j]).abs() < 1e-8,
                    "semigroup violated: {} vs {}",
                    direct[j],
                    composed[j]
                );
            }
        }
    }
}

/// Integrates a frozen flow while checking every accepted node and step
/// midpoint against the inflated box.
fn assert_flow_confined(
    p: &hemato_core::model::ModelParams,
    x0: [f64; 3],
    i: Regime,
    t_end: f64,
    slack: f64,
) {
    let bx = invariant_box(p);
    let field = |x: &[f64; 3]| vector_field(p, x, i);
    let mut stepper = Stepper::new(&field, 0.0, x0, OdeOptions::with_tolerance(1e-9));
    stepper
        .advance_to_with(t_end, |rec| {
            let mid = rec.interpolate(0.5 * (rec.t0 + rec.t1));
            assert!(
                bx.contains_inflated(&rec.y1, slack) && bx.contains_inflated(&mid, slack),
                "flow escaped the box at t = {}: {:?}",
                rec.t1,
                rec.y1
            );
        })
        .unwrap();
}

#[test]
fn box_is_positively_invariant_for_both_flows() {
    let p = pset_a();
    let bx = invariant_box(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for _ in 0..100 {
        let x0 = common::random_in_box(&mut rng, &bx);
        for i in Regime::BOTH {
            assert_flow_confined(&p, x0, i, 50.0, 1e-6);
        }
    }
}

#[test]
fn field_points_inward_on_the_box_faces() {
    let p = pset_a();
    let bx = invariant_box(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    // 6 faces x 100 samples; the outward component must be <= 0
    for face in 0..6 {
        let axis = face / 2;
        let upper = face % 2 == 1;
        for _ in 0..100 {
            let mut x = common::random_in_box(&mut rng, &bx);
            x[axis] = if upper { bx.hi[axis] } else { bx.lo[axis] };
            for i in Regime::BOTH {
                let g = vector_field(&p, &x, i);
                let outward = if upper { g[axis] } else { -g[axis] };
                assert!(
                    outward <= 1e-12,
                    "outward flow {outward:.3e} on face {face} at {x:?} regime {i:?}"
                );
            }
        }
    }
}

#[test]
fn trajectories_from_outside_are_absorbed_into_the_box() {
    let p = pset_a();
    let bx = invariant_box(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut tested = 0;
    while tested < 50 {
        let x0 = [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..5.0 * bx.hi[1]),
            rng.random_range(0.0..5.0 * bx.hi[2]),
        ];
        if bx.contains(&x0) {
            continue;
        }
        let regime = if rng.random::<bool>() { Regime::Active } else { Regime::Quiescent };
        let s0 = HybridState { x: x0, regime };
        let traj = simulate_pdmp(&p, &s0, 200.0, 1e-9, 0.5, 7000 + tested as u64).unwrap();
        let entry = traj.samples.iter().find(|s| bx.contains_inflated(&s.x, 1e-6));
        let entry_t = entry.map(|s| s.t);
        assert!(entry_t.is_some(), "start {x0:?} never reached the box by t = 200");
        tested += 1;
    }
}

#[test]
fn accessible_points_witness_full_rank_when_coupled() {
    let p = pset_a();
    let pts = sample_accessible(&p, 200, 10.0, 1234).unwrap();
    let bx = invariant_box(&p);
    let mut witnessed = false;
    for x in &pts {
        assert!(bx.contains_inflated(x, 1e-6));
        if hormander_rank(&p, x, RANK_TOL) == 3 {
            witnessed = true;
        }
    }
    assert!(witnessed, "no rank-3 point among 200 accessible samples");
}

#[test]
fn rank_stays_capped_without_mutant_coupling() {
    let mut p = pset_a();
    p.q3 = 0.0;
    p.c3 = 0.0;
    assert!(!p.regulation_dependent());
    let pts = sample_accessible(&p, 100, 10.0, 5678).unwrap();
    for x in &pts {
        assert!(
            hormander_rank(&p, x, RANK_TOL) <= 2,
            "decoupled parameters cannot span at {x:?}"
        );
    }
}

#[test]
fn equilibrium_residuals_vanish_across_random_parameter_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..3 {
        for _ in 0..100 {
            let mut p = random_valid_params(&mut rng);
            match case {
                0 => p.q2 = 0.0,
                1 => {
                    p.q2 = rng.random_range(0.1..1.5);
                    p.c2 = 0.0;
                }
                _ => {
                    p.q2 = rng.random_range(0.1..1.5);
                    p.c2 = rng.random_range(0.1..1.5);
                }
            }
            let eq = solve_equilibrium(&p, 1e-12).unwrap();
            let g = vector_field(&p, &eq.coords(), Regime::Quiescent);
            let res = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            assert!(res < 1e-10, "residual {res:.3e} for {p:?}");
        }
    }
}
