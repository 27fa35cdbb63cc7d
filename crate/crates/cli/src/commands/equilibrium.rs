//! `hemato equilibrium`: the quiescent-regime equilibrium, the
//! invariant box, and a divergence-negativity scan of the planar field.

use hemato_core::equilibrium::{solve_equilibrium, EquilibriumPoint};
use hemato_core::model::{divergence_2d, invariant_box, InvariantBox};
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::output::write_json;

#[derive(Serialize)]
struct DivergenceScan {
    grid: [usize; 2],
    max: f64,
    min: f64,
    all_negative: bool,
}

#[derive(Serialize)]
struct EquilibriumReport<'a> {
    seed: u64,
    config_hash: &'a str,
    regulation_dependent: bool,
    warnings: &'a [String],
    equilibrium: EquilibriumPoint,
    invariant_box: InvariantBox,
    divergence_scan: DivergenceScan,
}

pub fn run(loaded: &LoadedConfig, seed: u64) -> anyhow::Result<bool> {
    let p = &loaded.config.model;
    let eq = solve_equilibrium(p, 1e-12).map_err(|e| anyhow::anyhow!("{e}"))?;
    let bx = invariant_box(p);

    // 100 x 100 midpoint scan of the planar divergence over the box
    let n = 100;
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            let x1 = bx.lo[0] + (i as f64 + 0.5) / n as f64 * bx.width(0);
            let x2 = bx.lo[1] + (j as f64 + 0.5) / n as f64 * bx.width(1);
            let d = divergence_2d(p, x1, x2);
            max = max.max(d);
            min = min.min(d);
        }
    }
    let scan = DivergenceScan { grid: [n, n], max, min, all_negative: max < 0.0 };

    let report = EquilibriumReport {
        seed,
        config_hash: &loaded.hash,
        regulation_dependent: p.regulation_dependent(),
        warnings: &loaded.warnings,
        equilibrium: eq,
        invariant_box: bx,
        divergence_scan: scan,
    };
    let path = write_json(&loaded.config.run.out_dir, "equilibrium.json", &report)?;
    println!(
        "equilibrium p = ({:.6}, {:.6}, {:.6})  case {:?}  residual {:.2e}",
        eq.p1, eq.p2, eq.p3, eq.case_tag, eq.residual
    );
    println!(
        "invariant box [{:.6}, {:.6}] x [{:.6}, {:.6}] x [{:.6}, {:.6}]",
        bx.lo[0], bx.hi[0], bx.lo[1], bx.hi[1], bx.lo[2], bx.hi[2]
    );
    println!("divergence scan max {max:.6} (all negative: {})", max < 0.0);
    for w in &loaded.warnings {
        println!("warning: {w}");
    }
    println!("report written to {}", path.display());
    Ok(true)
}
