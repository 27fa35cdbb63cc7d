//! Occupation measures, ergodic residuals, weak-form residuals of the
//! stationary system, and the stationarity proxy, at module-test scale.

mod common;

use common::pset_a;
use hemato_core::model::{invariant_box, telegraph_active_fraction, HybridState, Regime};
use hemato_core::pdmp::{ensemble_pdmp, simulate_pdmp};
use hemato_core::ssa::{equilibrium_jump_state, simulate_ssa_full, ScaleFactors, SsaOptions};
use hemato_core::stats::{
    ergodic_residual, fraction_active, ks_distance, occupation_measure, tv_stationarity,
    weak_pde_residual,
};
use hemato_core::testfn::{monomial_basis, BumpFunction, Monomial};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn equilibrium_state(regime: Regime) -> HybridState {
    HybridState { x: [0.5, 1.0, 0.0], regime }
}

#[test]
fn occupation_measure_mass_and_regime_split() {
    let p = pset_a();
    let bx = invariant_box(&p);
    let traj = simulate_pdmp(&p, &equilibrium_state(Regime::Quiescent), 20_000.0, 1e-9, 0.05, 44)
        .unwrap();
    let m = occupation_measure(&traj, bx, [24, 24, 24], 200.0, 50).unwrap();

    assert!((m.total_mass() - 1.0).abs() < 1e-12);
    assert_eq!(m.out_fraction(), 0.0, "mass leaked out of the box after burn-in");

    let active = m.regime_mass(Regime::Active);
    let expected = telegraph_active_fraction(&p);
    assert!(
        (active - expected).abs() < 0.015,
        "active occupation {active:.4} vs telegraph {expected:.4}"
    );
}

#[test]
fn degenerate_occupation_is_a_point_mass() {
    // started at the quiescent equilibrium the flow is constant, so all
    // mass lands in one cell as long as no switch occurs; condition on
    // a seed whose first switch comes late
    let p = pset_a();
    let bx = invariant_box(&p);
    for seed in 0..40 {
        let traj = simulate_pdmp(&p, &equilibrium_state(Regime::Quiescent), 1.0, 1e-9, 0.01, seed)
            .unwrap();
        if !traj.switches.is_empty() {
            continue;
        }
        // 15 cells per axis keeps the equilibrium away from cell edges
        let m = occupation_measure(&traj, bx, [15, 15, 15], 0.0, 10).unwrap();
        let cell = m.cell_of(&[0.5, 1.0, 0.0]).unwrap();
        assert!((m.mass_at(cell, Regime::Quiescent) - 1.0).abs() < 1e-12);
        return;
    }
    panic!("no switch-free unit interval among 40 seeds");
}

#[test]
fn ergodic_residuals_vanish_for_the_monomial_basis() {
    let p = pset_a();
    let traj = simulate_pdmp(&p, &equilibrium_state(Regime::Quiescent), 5_000.0, 1e-9, 0.02, 321)
        .unwrap();
    for f in monomial_basis() {
        let (mean, se) = ergodic_residual(&p, &traj, &f, 100.0).unwrap();
        assert!(
            mean.abs() <= 4.0 * se + 1e-12,
            "time average of the generator on {} is {mean:.3e} with SE {se:.3e}",
            hemato_core::testfn::TestFunction::label(&f)
        );
    }

    // constants are killed exactly, not just within noise
    let (mean, se) = ergodic_residual(&p, &traj, &Monomial::plain([0, 0, 0]), 100.0).unwrap();
    assert_eq!(mean, 0.0);
    assert_eq!(se, 0.0);
}

#[test]
fn weak_residuals_accept_the_occupation_density_and_reject_a_shifted_one() {
    let p = pset_a();
    let bx = invariant_box(&p);
    let traj = simulate_pdmp(&p, &equilibrium_state(Regime::Quiescent), 50_000.0, 1e-9, 0.05, 77)
        .unwrap();
    let m = occupation_measure(&traj, bx, [32, 32, 32], 500.0, 50).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5150);
    let bumps: Vec<BumpFunction> = (0..5).map(|_| BumpFunction::random(&mut rng, &bx)).collect();

    for (k, bump) in bumps.iter().enumerate() {
        let (res, se) = weak_pde_residual(&p, &m, bump).unwrap();
        assert!(
            res.abs() <= 4.0 * se + 1e-12,
            "bump {k}: residual {res:.3e} with SE {se:.3e}"
        );
    }

    let perturbed = m.shifted(1, 3);
    let rejected = bumps.iter().any(|bump| {
        let (res, se) = weak_pde_residual(&p, &perturbed, bump).unwrap();
        res.abs() > 3.0 * se && res.abs() > 1e-9
    });
    assert!(rejected, "the shifted density slipped past every bump");
}

#[test]
fn occupation_and_terminal_estimators_of_the_active_mass_agree() {
    let p = pset_a();
    let bx = invariant_box(&p);
    let traj = simulate_pdmp(&p, &equilibrium_state(Regime::Quiescent), 20_000.0, 1e-9, 0.05, 10)
        .unwrap();
    let m = occupation_measure(&traj, bx, [16, 16, 16], 200.0, 50).unwrap();
    let occ = m.regime_mass(Regime::Active);
    let occ_se = m.regime_mass_se(Regime::Active);

    let n = 2000;
    let terminal = ensemble_pdmp(&p, &equilibrium_state(Regime::Quiescent), 50.0, n, 1e-9, 11)
        .unwrap();
    let ens = fraction_active(&terminal);
    let ens_se = (ens * (1.0 - ens) / n as f64).sqrt();

    let combined = (occ_se * occ_se + ens_se * ens_se).sqrt();
    assert!(
        (occ - ens).abs() <= 3.0 * combined,
        "estimators disagree: occupation {occ:.4} +- {occ_se:.4} vs ensemble {ens:.4} +- {ens_se:.4}"
    );
}

#[test]
fn stationarity_proxy_accepts_late_times_and_flags_the_transient() {
    let p = pset_a();
    let s0 = equilibrium_state(Regime::Quiescent);
    let report = tv_stationarity(&p, &s0, &[40.0, 80.0], 3000, 1e-9, 2_718).unwrap();
    for pair in &report.pairs {
        for axis in 0..3 {
            assert!(
                pair.ks[axis] < 0.05,
                "late-time KS on axis {axis} is {:.4}",
                pair.ks[axis]
            );
        }
    }

    // point mass far from stationarity separates immediately
    let far = HybridState { x: [1.0, 2.0, 1.0], regime: Regime::Quiescent };
    let transient = tv_stationarity(&p, &far, &[0.1, 0.2], 1000, 1e-9, 3_141).unwrap();
    let max_ks = transient.pairs[0].ks.iter().cloned().fold(0.0_f64, f64::max);
    assert!(max_ks > 0.05, "transient separation not detected: {max_ks:.4}");

    // same time, independent randomness: pure noise level
    let a = ensemble_pdmp(&p, &s0, 40.0, 3000, 1e-9, 1).unwrap();
    let b = ensemble_pdmp(&p, &s0, 40.0, 3000, 1e-9, 2).unwrap();
    for axis in 0..3 {
        let d = ks_distance(
            &hemato_core::stats::marginal(&a, axis),
            &hemato_core::stats::marginal(&b, axis),
        );
        assert!(d < 0.05, "independent same-law ensembles differ: {d:.4} on axis {axis}");
    }
}

#[test]
fn finite_k_ensemble_mean_approaches_the_limit_ensemble_mean() {
    let p = pset_a();
    let k = 400u64;
    let t_end = 10.0;
    let n = 2000usize;

    let ssa_x2: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(808);
            rng.set_stream(rep);
            let init = equilibrium_jump_state(&p, k, &mut rng).unwrap();
            let opts = SsaOptions { grid_dt: t_end, log_events: false, track_fluctuation: false };
            let out = simulate_ssa_full(&p, &init, t_end, &opts, &mut rng).unwrap();
            ScaleFactors::new(&p, k).scaled(&out.terminal)[1]
        })
        .collect();

    let active_prob = telegraph_active_fraction(&p);
    let pdmp_x2: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(809);
            rng.set_stream(rep);
            let regime = if rng.random::<f64>() < active_prob {
                Regime::Active
            } else {
                Regime::Quiescent
            };
            let s0 = HybridState { x: [0.5, 1.0, 0.0], regime };
            hemato_core::pdmp::simulate_pdmp_capture_with(&p, &s0, &[t_end], t_end, 1e-9, &mut rng)
                .unwrap()[0]
                .x[1]
        })
        .collect();

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| {
        let mu = mean(v);
        (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
    };
    let (m_ssa, m_pdmp) = (mean(&ssa_x2), mean(&pdmp_x2));
    let combined_se =
        ((sd(&ssa_x2).powi(2) + sd(&pdmp_x2).powi(2)) / n as f64).sqrt();
    assert!(
        (m_ssa - m_pdmp).abs() <= 3.0 * combined_se,
        "x2 means differ: {m_ssa:.5} vs {m_pdmp:.5} (3 SE = {:.5})",
        3.0 * combined_se
    );
}
