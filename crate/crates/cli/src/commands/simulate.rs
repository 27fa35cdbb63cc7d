//! `hemato simulate`: seeded replicate trajectories as CSV files plus a
//! manifest tying them to the configuration.

use anyhow::Context;
use hemato_core::equilibrium::solve_equilibrium;
use hemato_core::model::{telegraph_active_fraction, HybridState, ModelParams, Regime};
use hemato_core::pdmp::simulate_pdmp_with;
use hemato_core::ssa::{
    equilibrium_jump_state, simulate_ssa_full, simulate_tau_leap_with, SsaOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::output::{ensure_dir, trajectory_csv, write_json};
use crate::SimMode;

#[derive(Serialize)]
struct Manifest<'a> {
    mode: &'static str,
    seed: u64,
    config_hash: &'a str,
    model: &'a ModelParams,
    horizon: f64,
    grid_dt: f64,
    replicates: usize,
    k_values: Vec<u64>,
    files: Vec<String>,
    warnings: Vec<String>,
}

fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn run(loaded: &LoadedConfig, mode: SimMode, seed: u64) -> anyhow::Result<bool> {
    let cfg = &loaded.config;
    let p = &cfg.model;
    let run = &cfg.run;
    ensure_dir(&run.out_dir)?;

    let mut files = Vec::new();
    let mut warnings = loaded.warnings.clone();

    match mode {
        SimMode::Pdmp => {
            let eq = solve_equilibrium(p, 1e-12).map_err(|e| anyhow::anyhow!("{e}"))?;
            let active_prob = telegraph_active_fraction(p);
            let written: Vec<anyhow::Result<String>> = (0..run.replicates as u64)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = replicate_rng(seed, rep);
                    let regime = if rng.random::<f64>() < active_prob {
                        Regime::Active
                    } else {
                        Regime::Quiescent
                    };
                    let s0 = HybridState { x: eq.coords(), regime };
                    let traj = simulate_pdmp_with(p, &s0, run.horizon, run.ode_tol, run.grid_dt, &mut rng)
                        .map_err(|e| anyhow::anyhow!("{e}"))?;
                    let csv = trajectory_csv(
                        traj.samples.iter().map(|s| (s.t, s.x, s.regime.index())),
                    );
                    let name = format!("traj_pdmp_rep{rep:04}.csv");
                    std::fs::write(run.out_dir.join(&name), csv)
                        .with_context(|| format!("writing {name}"))?;
                    Ok(name)
                })
                .collect();
            for w in written {
                files.push(w?);
            }
        }
        SimMode::Ssa | SimMode::Tau => {
            for (ki, &k) in run.k_list.iter().enumerate() {
                let written: Vec<anyhow::Result<(String, bool)>> = (0..run.replicates as u64)
                    .into_par_iter()
                    .map(|rep| {
                        let mut rng = replicate_rng(seed, ((ki as u64) << 33) | rep);
                        let init = equilibrium_jump_state(p, k, &mut rng)
                            .map_err(|e| anyhow::anyhow!("{e}"))?;
                        let (csv, clamp_warning, tag) = match mode {
                            SimMode::Ssa => {
                                let opts = SsaOptions {
                                    grid_dt: run.grid_dt,
                                    log_events: false,
                                    track_fluctuation: false,
                                };
                                let out = simulate_ssa_full(p, &init, run.horizon, &opts, &mut rng)
                                    .map_err(|e| anyhow::anyhow!("{e}"))?;
                                let csv = trajectory_csv(out.samples.iter().map(|s| {
                                    (s.t, [s.x1, s.x2, s.x3], s.regime.index())
                                }));
                                (csv, false, "ssa")
                            }
                            _ => {
                                let out = simulate_tau_leap_with(
                                    p, &init, run.horizon, run.leap_dt, run.grid_dt, &mut rng,
                                )
                                .map_err(|e| anyhow::anyhow!("{e}"))?;
                                let csv = trajectory_csv(out.samples.iter().map(|s| {
                                    (s.t, [s.x1, s.x2, s.x3], s.regime.index())
                                }));
                                (csv, out.clamp_warning, "tau")
                            }
                        };
                        let name = format!("traj_{tag}_k{k}_rep{rep:04}.csv");
                        std::fs::write(run.out_dir.join(&name), csv)
                            .with_context(|| format!("writing {name}"))?;
                        Ok((name, clamp_warning))
                    })
                    .collect();
                for w in written {
                    let (name, clamped) = w?;
                    if clamped {
                        warnings.push(format!(
                            "{name}: more than 1% of leap steps clamped a count; \
                             shrink leap_dt for accuracy"
                        ));
                    }
                    files.push(name);
                }
            }
        }
    }

    let manifest = Manifest {
        mode: match mode {
            SimMode::Ssa => "ssa",
            SimMode::Pdmp => "pdmp",
            SimMode::Tau => "tau",
        },
        seed,
        config_hash: &loaded.hash,
        model: p,
        horizon: run.horizon,
        grid_dt: run.grid_dt,
        replicates: run.replicates,
        k_values: match mode {
            SimMode::Pdmp => Vec::new(),
            _ => run.k_list.clone(),
        },
        files,
        warnings,
    };
    let name = format!("manifest_{}.json", manifest.mode);
    let path = write_json(&run.out_dir, &name, &manifest)?;
    println!(
        "{} trajectories written to {} (manifest {})",
        manifest.files.len(),
        run.out_dir.display(),
        path.display()
    );
    for w in &manifest.warnings {
        println!("warning: {w}");
    }
    Ok(true)
}
