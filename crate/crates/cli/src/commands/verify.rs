//! `hemato verify`: runs one of the verification suites and writes a
//! JSON verdict with every measured number.

use hemato_core::equilibrium::{sample_accessible, solve_equilibrium};
use hemato_core::model::{
    hormander_rank, invariant_box, telegraph_active_fraction, vector_field, HybridState, Regime,
    RANK_TOL,
};
use hemato_core::ode::{OdeOptions, Stepper};
use hemato_core::pdmp::{ensemble_pdmp_capture, simulate_pdmp, simulate_pdmp_stream};
use hemato_core::stats::{
    convergence_report, ergodic_residual, ks_distance, occupation_measure, random_supported_bump,
    weak_pde_residual, ConvergenceReport, DEFAULT_BATCHES,
};
use hemato_core::testfn::{monomial_basis, BumpFunction, TestFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::output::write_json;
use crate::Suite;

#[derive(Serialize)]
struct Check {
    name: String,
    pass: bool,
    detail: String,
}

impl Check {
    fn new(name: impl Into<String>, pass: bool, detail: String) -> Self {
        Check { name: name.into(), pass, detail }
    }
}

#[derive(Serialize)]
struct SuiteReport<'a> {
    suite: &'static str,
    seed: u64,
    config_hash: &'a str,
    verdict: String,
    warnings: &'a [String],
    checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    convergence: Option<ConvergenceReport>,
}

pub fn run(loaded: &LoadedConfig, suite: Suite, seed: u64) -> anyhow::Result<bool> {
    let (name, checks, convergence, hypothesis_ok) = match suite {
        Suite::Box => ("box", box_suite(loaded, seed)?, None, true),
        Suite::Hormander => {
            let (checks, applicable) = hormander_suite(loaded, seed)?;
            ("hormander", checks, None, applicable)
        }
        Suite::Convergence => {
            let (checks, rep) = convergence_suite(loaded, seed)?;
            ("convergence", checks, Some(rep), true)
        }
        Suite::Stationary => ("stationary", stationary_suite(loaded, seed)?, None, true),
        Suite::Pde => ("pde", pde_suite(loaded, seed)?, None, true),
    };

    let pass = checks.iter().all(|c| c.pass);
    let verdict = if !hypothesis_ok {
        "hypothesis not satisfied".to_string()
    } else if pass {
        "pass".to_string()
    } else {
        let failing: Vec<&str> =
            checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        format!("fail: {}", failing.join(", "))
    };

    let report = SuiteReport {
        suite: name,
        seed,
        config_hash: &loaded.hash,
        verdict: verdict.clone(),
        warnings: &loaded.warnings,
        checks,
        convergence,
    };
    let path = write_json(&loaded.config.run.out_dir, &format!("verify_{name}.json"), &report)?;

    for c in &report.checks {
        println!("[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("suite {name}: {verdict} (report {})", path.display());
    Ok(pass)
}

// ---------------------------------------------------------------------------

fn in_box_point(rng: &mut ChaCha8Rng, bx: &hemato_core::model::InvariantBox) -> [f64; 3] {
    let mut x = [0.0; 3];
    for j in 0..3 {
        x[j] = bx.lo[j] + rng.random::<f64>() * bx.width(j);
    }
    x
}

fn box_suite(loaded: &LoadedConfig, seed: u64) -> anyhow::Result<Vec<Check>> {
    let p = &loaded.config.model;
    let tol = loaded.config.run.ode_tol;
    let bx = invariant_box(p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    // outward component of the field on 600 face samples
    let mut worst_outward = f64::NEG_INFINITY;
    for face in 0..6 {
        let axis = face / 2;
        let upper = face % 2 == 1;
        for _ in 0..100 {
            let mut x = in_box_point(&mut rng, &bx);
            x[axis] = if upper { bx.hi[axis] } else { bx.lo[axis] };
            for i in Regime::BOTH {
                let g = vector_field(p, &x, i);
                let outward = if upper { g[axis] } else { -g[axis] };
                worst_outward = worst_outward.max(outward);
            }
        }
    }
    checks.push(Check::new(
        "boundary normal sign",
        worst_outward <= 1e-12,
        format!("max outward component {worst_outward:.3e} on 600 face samples (limit 1e-12)"),
    ));

    // positive invariance of 100 interior starts under both flows
    let mut max_excursion = 0.0_f64;
    for _ in 0..100 {
        let x0 = in_box_point(&mut rng, &bx);
        for i in Regime::BOTH {
            let field = |x: &[f64; 3]| vector_field(p, x, i);
            let mut stepper = Stepper::new(&field, 0.0, x0, OdeOptions::with_tolerance(tol));
            stepper.advance_to_with(50.0, |rec| {
                for x in [rec.y1, rec.interpolate(0.5 * (rec.t0 + rec.t1))] {
                    for j in 0..3 {
                        max_excursion = max_excursion
                            .max(bx.lo[j] - x[j])
                            .max(x[j] - bx.hi[j]);
                    }
                }
            })?;
        }
    }
    checks.push(Check::new(
        "flow invariance",
        max_excursion < 1e-6,
        format!("max boundary excursion {max_excursion:.3e} over 200 flows to t = 50 (limit 1e-6)"),
    ));

    // absorption of 50 outside starts by t = 200
    let mut worst_entry: f64 = 0.0;
    let mut absorbed = 0;
    let mut tested = 0;
    while tested < 50 {
        let x0 = [
            rng.random::<f64>(),
            rng.random::<f64>() * 5.0 * bx.hi[1],
            rng.random::<f64>() * 5.0 * bx.hi[2],
        ];
        if bx.contains(&x0) {
            continue;
        }
        let regime = if rng.random::<bool>() { Regime::Active } else { Regime::Quiescent };
        let s0 = HybridState { x: x0, regime };
        let traj = simulate_pdmp_stream(p, &s0, 200.0, tol, 0.5, seed, 1_000 + tested as u64)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        if let Some(s) = traj.samples.iter().find(|s| bx.contains_inflated(&s.x, 1e-6)) {
            absorbed += 1;
            worst_entry = worst_entry.max(s.t);
        }
        tested += 1;
    }
    checks.push(Check::new(
        "absorption",
        absorbed == 50,
        format!("{absorbed}/50 outside starts entered the box; latest entry t = {worst_entry:.2}"),
    ));

    Ok(checks)
}

fn hormander_suite(loaded: &LoadedConfig, seed: u64) -> anyhow::Result<(Vec<Check>, bool)> {
    let p = &loaded.config.model;
    let points = sample_accessible(p, 200, 10.0, seed).map_err(|e| anyhow::anyhow!("{e}"))?;
    let ranks: Vec<usize> = points.iter().map(|x| hormander_rank(p, x, RANK_TOL)).collect();
    let max_rank = ranks.iter().copied().max().unwrap_or(0);

    if p.regulation_dependent() {
        let witness = points
            .iter()
            .zip(&ranks)
            .find(|(_, &r)| r == 3)
            .map(|(x, _)| *x);
        let pass = witness.is_some();
        let detail = match witness {
            Some(x) => format!(
                "rank-3 witness at ({:.6}, {:.6}, {:.6}) among 200 accessible samples",
                x[0], x[1], x[2]
            ),
            None => "no rank-3 point among 200 accessible samples".to_string(),
        };
        Ok((vec![Check::new("bracket spanning condition", pass, detail)], true))
    } else {
        let capped = max_rank <= 2;
        let detail = format!(
            "c3 + q3 = 0: max sampled rank {max_rank} (the spanning hypothesis does not apply)"
        );
        Ok((vec![Check::new("bracket spanning condition", capped, detail)], false))
    }
}

fn convergence_suite(
    loaded: &LoadedConfig,
    seed: u64,
) -> anyhow::Result<(Vec<Check>, ConvergenceReport)> {
    let cfg = &loaded.config;
    let report = convergence_report(
        &cfg.model,
        &cfg.run.k_list,
        cfg.run.horizon,
        cfg.run.replicates,
        cfg.run.ode_tol,
        seed,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;

    let mut checks = Vec::new();
    for axis in 0..3 {
        let pass = report.w1_nonincreasing(axis, 2.0);
        let values: Vec<String> =
            report.per_k.iter().map(|k| format!("{:.4}", k.w1[axis])).collect();
        checks.push(Check::new(
            format!("w1 nonincreasing (x{})", axis + 1),
            pass,
            format!("W1 over K: [{}] within 2 SE", values.join(", ")),
        ));
    }

    for (k_lo, k_hi, ratios) in report.variance_ratios() {
        let rho = k_hi as f64 / k_lo as f64;
        let expected_x1 = 1.0 / rho;
        let expected_x3 = rho.powf(-cfg.model.beta);
        let in_x1 = (0.6 * expected_x1..=1.6 * expected_x1).contains(&ratios[0]);
        let in_x3 = (0.7 * expected_x3..=1.4 * expected_x3).contains(&ratios[2]);
        checks.push(Check::new(
            format!("fluctuation variance ratio x1 (K {k_lo} -> {k_hi})"),
            in_x1,
            format!(
                "ratio {:.4}, expected {expected_x1:.4} in [{:.3}, {:.3}]",
                ratios[0],
                0.6 * expected_x1,
                1.6 * expected_x1
            ),
        ));
        checks.push(Check::new(
            format!("fluctuation variance ratio x3 (K {k_lo} -> {k_hi})"),
            in_x3,
            format!(
                "ratio {:.4}, expected {expected_x3:.4} in [{:.3}, {:.3}]",
                ratios[2],
                0.7 * expected_x3,
                1.4 * expected_x3
            ),
        ));
    }
    Ok((checks, report))
}

fn stationary_suite(loaded: &LoadedConfig, seed: u64) -> anyhow::Result<Vec<Check>> {
    let cfg = &loaded.config;
    let p = &cfg.model;
    let run = &cfg.run;
    let eq = solve_equilibrium(p, 1e-12).map_err(|e| anyhow::anyhow!("{e}"))?;
    let s0 = HybridState { x: eq.coords(), regime: Regime::Quiescent };
    let mut checks = Vec::new();

    let traj = simulate_pdmp(p, &s0, run.horizon, run.ode_tol, run.grid_dt, seed)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let measure = occupation_measure(
        &traj,
        invariant_box(p),
        run.grid_dims,
        run.burn_in,
        DEFAULT_BATCHES,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;

    let occ = measure.regime_mass(Regime::Active);
    if p.q2m == 0.0 && p.q3m == 0.0 {
        let expected = telegraph_active_fraction(p);
        checks.push(Check::new(
            "active occupation fraction",
            (occ - expected).abs() <= 0.01,
            format!("occupation {occ:.4} vs telegraph law {expected:.4} (limit 0.01)"),
        ));
    } else {
        checks.push(Check::new(
            "active occupation fraction",
            true,
            format!("occupation {occ:.4}; state-dependent switching, no closed-form reference"),
        ));
    }

    let mut worst_ratio = 0.0_f64;
    let mut worst_label = String::new();
    for f in monomial_basis() {
        let (mean, se) = ergodic_residual(p, &traj, &f, run.burn_in)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let ratio = mean.abs() / (3.0 * se + 1e-12);
        if ratio > worst_ratio {
            worst_ratio = ratio;
            worst_label = f.label();
        }
    }
    checks.push(Check::new(
        "ergodic generator identity",
        worst_ratio <= 1.0,
        format!("worst |mean| / (3 SE) = {worst_ratio:.3} at {worst_label} over 20 monomials"),
    ));

    // mixing proxy at the scale where the model has settled
    let per_rep = ensemble_pdmp_capture(
        p,
        &s0,
        &[50.0, 100.0],
        100.0,
        run.replicates,
        run.ode_tol,
        seed ^ 0x5151,
    )
    .map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut worst_ks = 0.0_f64;
    for axis in 0..3 {
        let a: Vec<f64> = per_rep.iter().map(|r| r[0].x[axis]).collect();
        let b: Vec<f64> = per_rep.iter().map(|r| r[1].x[axis]).collect();
        worst_ks = worst_ks.max(ks_distance(&a, &b));
    }
    checks.push(Check::new(
        "marginal stationarity (t = 50 vs 100)",
        worst_ks < 0.05,
        format!("max marginal KS {worst_ks:.4} (limit 0.05)"),
    ));

    // transient negative control from a point far off equilibrium
    let far = HybridState { x: [1.0, 2.0 * invariant_box(p).hi[1], 0.0], regime: Regime::Quiescent };
    let n_ctrl = run.replicates.min(1000);
    let ctrl = ensemble_pdmp_capture(p, &far, &[0.1, 0.2], 0.2, n_ctrl, run.ode_tol, seed ^ 0xC0)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let mut ctrl_ks = 0.0_f64;
    for axis in 0..3 {
        let a: Vec<f64> = ctrl.iter().map(|r| r[0].x[axis]).collect();
        let b: Vec<f64> = ctrl.iter().map(|r| r[1].x[axis]).collect();
        ctrl_ks = ctrl_ks.max(ks_distance(&a, &b));
    }
    checks.push(Check::new(
        "transient negative control (t = 0.1 vs 0.2)",
        ctrl_ks > 0.05,
        format!("max marginal KS {ctrl_ks:.4}, must exceed 0.05"),
    ));

    Ok(checks)
}

fn pde_suite(loaded: &LoadedConfig, seed: u64) -> anyhow::Result<Vec<Check>> {
    let cfg = &loaded.config;
    let p = &cfg.model;
    let run = &cfg.run;
    let bx = invariant_box(p);
    let eq = solve_equilibrium(p, 1e-12).map_err(|e| anyhow::anyhow!("{e}"))?;
    let s0 = HybridState { x: eq.coords(), regime: Regime::Quiescent };

    let traj = simulate_pdmp(p, &s0, run.horizon, run.ode_tol, run.grid_dt, seed)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let measure = occupation_measure(&traj, bx, run.grid_dims, run.burn_in, DEFAULT_BATCHES)
        .map_err(|e| anyhow::anyhow!("{e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB00);
    let bumps: Vec<BumpFunction> = (0..10)
        .map(|_| random_supported_bump(&mut rng, &measure, 1e-3, 200))
        .collect();

    let mut checks = Vec::new();
    for (k, bump) in bumps.iter().enumerate() {
        let (res, se) = weak_pde_residual(p, &measure, bump)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        checks.push(Check::new(
            format!("weak residual bump {k}"),
            res.abs() <= 3.0 * se + 1e-12,
            format!("residual {res:.3e}, 3 SE = {:.3e}", 3.0 * se),
        ));
    }

    let perturbed = measure.shifted(1, 3);
    let mut rejected = 0;
    for bump in &bumps {
        let (res, se) = weak_pde_residual(p, &perturbed, bump)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        if res.abs() > 3.0 * se && res.abs() > 1e-9 {
            rejected += 1;
        }
    }
    checks.push(Check::new(
        "perturbed-density negative control",
        rejected >= 1,
        format!("{rejected}/10 bumps reject the shifted density (need >= 1)"),
    ));

    Ok(checks)
}
