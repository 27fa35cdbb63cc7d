//! Turns simulations into verdicts: occupation-measure estimation of
//! the invariant densities, empirical distribution distances, scaling
//! diagnostics for the finite-population fluctuations, and ergodic /
//! weak-form residuals of the stationary regime.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::equilibrium::solve_equilibrium;
use crate::error::{Error, Result};
use crate::model::{
    generator_apply, telegraph_active_fraction, HybridState, InvariantBox, ModelParams, Regime,
};
use crate::pdmp::{ensemble_pdmp_capture, simulate_pdmp_capture_with, PdmpTrajectory};
use crate::ssa::{equilibrium_jump_state, simulate_ssa_full, ScaleFactors, SsaOptions};
use crate::testfn::{BumpFunction, TestFunction};

/// Number of batches used for batch-means standard errors.
pub const DEFAULT_BATCHES: usize = 50;

// ---------------------------------------------------------------------------
// occupation measure

/// Per-batch cell masses, normalized to unit total within the batch.
#[derive(Clone, Debug)]
struct BatchMass {
    entries: Vec<(u32, f64)>,
}

/// Time-weighted occupation histogram over a box partition, one density
/// per regime, normalized to total mass one.
///
/// Besides the cell masses, the measure keeps the visited centroid of
/// each cell: evaluating integrands there instead of at cell centers
/// removes the first-order binning bias, which otherwise dominates the
/// Monte-Carlo error of weak-form integrals on long runs.
#[derive(Clone, Debug)]
pub struct EmpiricalMeasure {
    pub domain: InvariantBox,
    pub dims: [usize; 3],
    /// Normalized mass indexed by `cell * 2 + regime`.
    mass: Vec<f64>,
    /// Mass-weighted position sums, same indexing as `mass`.
    moment: Vec<[f64; 3]>,
    /// Mass-weighted second-moment sums `(xx, xy, xz, yy, yz, zz)`.
    moment2: Vec<[f64; 6]>,
    /// Fraction of the weight that fell outside the box.
    out_fraction: f64,
    batches: Vec<BatchMass>,
}

fn outer6(x: &[f64; 3]) -> [f64; 6] {
    [
        x[0] * x[0],
        x[0] * x[1],
        x[0] * x[2],
        x[1] * x[1],
        x[1] * x[2],
        x[2] * x[2],
    ]
}

impl EmpiricalMeasure {
    pub fn n_cells(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        self.domain.width(axis) / self.dims[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_width(0) * self.cell_width(1) * self.cell_width(2)
    }

    /// Flat cell index of a point; None outside the closed box.
    pub fn cell_of(&self, x: &[f64; 3]) -> Option<usize> {
        self.cell_with_slack(x, 0.0)
    }

    /// Binning helper: points within `slack` box-widths of a face count
    /// as inside, absorbing interpolation dust at the closed boundary.
    fn cell_with_slack(&self, x: &[f64; 3], slack: f64) -> Option<usize> {
        let mut idx = [0usize; 3];
        for j in 0..3 {
            let pad = slack * self.domain.width(j);
            if x[j] < self.domain.lo[j] - pad || x[j] > self.domain.hi[j] + pad {
                return None;
            }
            let u = (x[j] - self.domain.lo[j]) / self.cell_width(j);
            idx[j] = (u.max(0.0) as usize).min(self.dims[j] - 1);
        }
        Some((idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2])
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 3] {
        let i2 = cell % self.dims[2];
        let rest = cell / self.dims[2];
        let i1 = rest % self.dims[1];
        let i0 = rest / self.dims[1];
        [
            self.domain.lo[0] + (i0 as f64 + 0.5) * self.cell_width(0),
            self.domain.lo[1] + (i1 as f64 + 0.5) * self.cell_width(1),
            self.domain.lo[2] + (i2 as f64 + 0.5) * self.cell_width(2),
        ]
    }

    pub fn mass_at(&self, cell: usize, regime: Regime) -> f64 {
        self.mass[cell * 2 + regime.index()]
    }

    /// Visited centroid of a cell under a regime; the cell center when
    /// no mass was recorded there.
    pub fn centroid(&self, cell: usize, regime: Regime) -> [f64; 3] {
        let key = cell * 2 + regime.index();
        let w = self.mass[key];
        if w > 0.0 {
            let m = self.moment[key];
            [m[0] / w, m[1] / w, m[2] / w]
        } else {
            self.cell_center(cell)
        }
    }

    /// Six equal-weight points reproducing the mean and covariance of
    /// the visits to a cell: the compressed weighted-sample view of the
    /// measure, used for integrating smooth functions against it.
    pub fn sigma_points(&self, cell: usize, regime: Regime) -> [[f64; 3]; 6] {
        let key = cell * 2 + regime.index();
        let w = self.mass[key];
        let mean = self.centroid(cell, regime);
        if w <= 0.0 {
            return [mean; 6];
        }
        let m2 = self.moment2[key];
        let raw = [
            m2[0] / w - mean[0] * mean[0],
            m2[1] / w - mean[0] * mean[1],
            m2[2] / w - mean[0] * mean[2],
            m2[3] / w - mean[1] * mean[1],
            m2[4] / w - mean[1] * mean[2],
            m2[5] / w - mean[2] * mean[2],
        ];
        let cov = crate::linalg::Matrix3([
            [raw[0], raw[1], raw[2]],
            [raw[1], raw[3], raw[4]],
            [raw[2], raw[4], raw[5]],
        ]);
        let (lambda, vectors) = crate::linalg::sym_eigen(&cov);
        let mut pts = [mean; 6];
        for k in 0..3 {
            let scale = (3.0 * lambda[k].max(0.0)).sqrt();
            let v = vectors.column(k);
            for j in 0..3 {
                pts[2 * k][j] = mean[j] + scale * v[j];
                pts[2 * k + 1][j] = mean[j] - scale * v[j];
            }
        }
        pts
    }

    /// Piecewise-constant density estimate on a cell.
    pub fn density(&self, cell: usize, regime: Regime) -> f64 {
        self.mass_at(cell, regime) / self.cell_volume()
    }

    pub fn regime_mass(&self, regime: Regime) -> f64 {
        self.mass.iter().skip(regime.index()).step_by(2).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.out_fraction
    }

    pub fn out_fraction(&self) -> f64 {
        self.out_fraction
    }

    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }

    /// Batch-means standard error of the mass assigned to a regime.
    pub fn regime_mass_se(&self, regime: Regime) -> f64 {
        let fractions: Vec<f64> = self
            .batches
            .iter()
            .map(|b| {
                b.entries
                    .iter()
                    .filter(|(key, _)| (key & 1) as usize == regime.index())
                    .map(|(_, w)| w)
                    .sum::<f64>()
            })
            .collect();
        if fractions.len() < 2 {
            return 0.0;
        }
        let nb = fractions.len() as f64;
        let mu = mean(&fractions);
        (fractions.iter().map(|f| (f - mu) * (f - mu)).sum::<f64>() / (nb * (nb - 1.0))).sqrt()
    }

    /// Synthetic measure: the whole mass in the cell containing `x`,
    /// replicated across all batches. A degenerate reference for tests.
    pub fn point_mass(
        domain: InvariantBox,
        dims: [usize; 3],
        x: &[f64; 3],
        regime: Regime,
        n_batches: usize,
    ) -> Result<Self> {
        let n_cells = dims[0] * dims[1] * dims[2];
        let mut m = EmpiricalMeasure {
            domain,
            dims,
            mass: vec![0.0; n_cells * 2],
            moment: vec![[0.0; 3]; n_cells * 2],
            moment2: vec![[0.0; 6]; n_cells * 2],
            out_fraction: 0.0,
            batches: Vec::new(),
        };
        let cell = m
            .cell_of(x)
            .ok_or_else(|| Error::Domain(format!("point {x:?} outside the box")))?;
        let key = (cell * 2 + regime.index()) as u32;
        m.mass[key as usize] = 1.0;
        m.moment[key as usize] = *x;
        m.moment2[key as usize] = outer6(x);
        m.batches = (0..n_batches)
            .map(|_| BatchMass { entries: vec![(key, 1.0)] })
            .collect();
        Ok(m)
    }

    /// Copy of the measure with every cell shifted by `offset` cells
    /// along `axis` (clamped at the faces). Deliberately *not* an
    /// invariant density; serves as the negative control for the
    /// weak-form residuals.
    pub fn shifted(&self, axis: usize, offset: i64) -> Self {
        let shift_key = |key: u32| -> u32 {
            let regime = key & 1;
            let cell = (key >> 1) as usize;
            let i2 = cell % self.dims[2];
            let rest = cell / self.dims[2];
            let i1 = rest % self.dims[1];
            let i0 = rest / self.dims[1];
            let mut idx = [i0 as i64, i1 as i64, i2 as i64];
            idx[axis] = (idx[axis] + offset).clamp(0, self.dims[axis] as i64 - 1);
            let cell =
                (idx[0] as usize * self.dims[1] + idx[1] as usize) * self.dims[2] + idx[2] as usize;
            ((cell * 2) as u32) | regime
        };

        let mut mass = vec![0.0; self.mass.len()];
        let mut moment = vec![[0.0; 3]; self.moment.len()];
        let mut moment2 = vec![[0.0; 6]; self.moment2.len()];
        for (key, &w) in self.mass.iter().enumerate() {
            if w != 0.0 {
                let new_key = shift_key(key as u32) as usize;
                mass[new_key] += w;
                // translate the stored moments by the center displacement
                let d = {
                    let old = self.cell_center(key >> 1);
                    let new = self.cell_center(new_key >> 1);
                    [new[0] - old[0], new[1] - old[1], new[2] - old[2]]
                };
                let m1 = self.moment[key];
                for j in 0..3 {
                    moment[new_key][j] += m1[j] + w * d[j];
                }
                let m2 = self.moment2[key];
                let shifted2 = [
                    m2[0] + m1[0] * d[0] + d[0] * m1[0] + w * d[0] * d[0],
                    m2[1] + m1[0] * d[1] + d[0] * m1[1] + w * d[0] * d[1],
                    m2[2] + m1[0] * d[2] + d[0] * m1[2] + w * d[0] * d[2],
                    m2[3] + m1[1] * d[1] + d[1] * m1[1] + w * d[1] * d[1],
                    m2[4] + m1[1] * d[2] + d[1] * m1[2] + w * d[1] * d[2],
                    m2[5] + m1[2] * d[2] + d[2] * m1[2] + w * d[2] * d[2],
                ];
                for j in 0..6 {
                    moment2[new_key][j] += shifted2[j];
                }
            }
        }
        let batches = self
            .batches
            .iter()
            .map(|b| {
                let mut acc: HashMap<u32, f64> = HashMap::new();
                for &(key, w) in &b.entries {
                    *acc.entry(shift_key(key)).or_insert(0.0) += w;
                }
                let mut entries: Vec<(u32, f64)> = acc.into_iter().collect();
                entries.sort_unstable_by_key(|e| e.0);
                BatchMass { entries }
            })
            .collect();
        EmpiricalMeasure {
            domain: self.domain,
            dims: self.dims,
            mass,
            moment,
            moment2,
            out_fraction: self.out_fraction,
            batches,
        }
    }
}

/// Time-weighted occupation histogram of a trajectory over
/// `[burn_in, horizon]`, with per-batch masses retained for batch-means
/// errors.
pub fn occupation_measure(
    traj: &PdmpTrajectory,
    domain: InvariantBox,
    dims: [usize; 3],
    burn_in: f64,
    n_batches: usize,
) -> Result<EmpiricalMeasure> {
    if !(burn_in >= 0.0) || burn_in >= traj.horizon() {
        return Err(Error::EmptyWindow(format!(
            "burn-in {burn_in} must lie inside the horizon {}",
            traj.horizon()
        )));
    }
    if dims.iter().any(|&d| d == 0) || n_batches == 0 {
        return Err(Error::Domain(
            "grid dimensions and batch count must be positive".into(),
        ));
    }

    let n_cells = dims[0] * dims[1] * dims[2];
    let mut measure = EmpiricalMeasure {
        domain,
        dims,
        mass: vec![0.0; n_cells * 2],
        moment: vec![[0.0; 3]; n_cells * 2],
        moment2: vec![[0.0; 6]; n_cells * 2],
        out_fraction: 0.0,
        batches: Vec::new(),
    };
    let span = traj.horizon() - burn_in;
    let batch_len = span / n_batches as f64;
    let mut batch_maps: Vec<HashMap<u32, f64>> = vec![HashMap::new(); n_batches];
    let mut batch_totals = vec![0.0_f64; n_batches];
    let mut out = 0.0_f64;
    let mut total = 0.0_f64;

    for pair in traj.samples.windows(2) {
        let (s, next) = (&pair[0], &pair[1]);
        let a = s.t.max(burn_in);
        let b = next.t.min(traj.horizon());
        if b <= a {
            continue;
        }
        let w = b - a;
        total += w;
        let batch = (((a - burn_in) / batch_len) as usize).min(n_batches - 1);
        // trapezoid-consistent weighting: half the interval at each
        // endpoint position, both under the interval's regime. A pure
        // left-endpoint rule would bias integrals of regime-dependent
        // functions by O(grid_dt) at every switch.
        for pos in [&s.x, &next.x] {
            let half = 0.5 * w;
            match measure.cell_with_slack(pos, 1e-9) {
                Some(cell) => {
                    let key = cell * 2 + s.regime.index();
                    measure.mass[key] += half;
                    let o = outer6(pos);
                    for j in 0..3 {
                        measure.moment[key][j] += half * pos[j];
                    }
                    for j in 0..6 {
                        measure.moment2[key][j] += half * o[j];
                    }
                    *batch_maps[batch].entry(key as u32).or_insert(0.0) += half;
                    batch_totals[batch] += half;
                }
                None => out += half,
            }
        }
    }

    if total <= 0.0 {
        return Err(Error::EmptyWindow("no trajectory mass after burn-in".into()));
    }
    for m in &mut measure.mass {
        *m /= total;
    }
    for m in &mut measure.moment {
        for j in 0..3 {
            m[j] /= total;
        }
    }
    for m in &mut measure.moment2 {
        for j in 0..6 {
            m[j] /= total;
        }
    }
    measure.out_fraction = out / total;
    measure.batches = batch_maps
        .into_iter()
        .zip(batch_totals)
        .map(|(map, bt)| {
            let mut entries: Vec<(u32, f64)> = map
                .into_iter()
                .map(|(k, w)| (k, if bt > 0.0 { w / bt } else { 0.0 }))
                .collect();
            entries.sort_unstable_by_key(|e| e.0);
            BatchMass { entries }
        })
        .collect();
    Ok(measure)
}

// ---------------------------------------------------------------------------
// sample distances

/// One marginal coordinate of a set of hybrid states.
pub fn marginal(states: &[HybridState], axis: usize) -> Vec<f64> {
    states.iter().map(|s| s.x[axis]).collect()
}

/// Fraction of states in the active regime.
pub fn fraction_active(states: &[HybridState]) -> f64 {
    states.iter().filter(|s| s.regime == Regime::Active).count() as f64 / states.len() as f64
}

/// Two-sample Kolmogorov-Smirnov statistic: sup-difference of the
/// empirical CDFs.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "ks_distance needs nonempty samples");
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        sup = sup.max((i as f64 / n - j as f64 / m).abs());
    }
    sup
}

fn strided_subsample(sorted: &[f64], m: usize) -> Vec<f64> {
    let n = sorted.len();
    (0..m)
        .map(|i| sorted[(((2 * i + 1) * n) / (2 * m)).min(n - 1)])
        .collect()
}

/// Empirical 1-Wasserstein distance by the sorted-sample coupling; an
/// unequal pair is reduced to the smaller size by quantile striding.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "wasserstein1 needs nonempty samples");
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_unstable_by(|p, q| p.partial_cmp(q).unwrap());
    let m = xs.len().min(ys.len());
    if xs.len() > m {
        xs = strided_subsample(&xs, m);
    }
    if ys.len() > m {
        ys = strided_subsample(&ys, m);
    }
    xs.iter().zip(&ys).map(|(x, y)| (x - y).abs()).sum::<f64>() / m as f64
}

/// Basic bootstrap standard error of the empirical W1 distance.
pub fn wasserstein1_se(a: &[f64], b: &[f64], n_boot: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reps = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let ra: Vec<f64> = (0..a.len()).map(|_| a[rng.random_range(0..a.len())]).collect();
        let rb: Vec<f64> = (0..b.len()).map(|_| b[rng.random_range(0..b.len())]).collect();
        reps.push(wasserstein1(&ra, &rb));
    }
    sd(&reps)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

fn sd(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

// ---------------------------------------------------------------------------
// convergence in K

/// Distances and fluctuation variances for one population scale.
#[derive(Clone, Debug, Serialize)]
pub struct KComparison {
    pub k: u64,
    /// Per-marginal W1 between the finite-K and limit terminal laws.
    pub w1: [f64; 3],
    pub w1_se: [f64; 3],
    /// Per-marginal two-sample KS, reported alongside.
    pub ks: [f64; 3],
    /// Sample variance of the terminal martingale part of the scaled
    /// path, per component. Scales like `K^-1`, `K^-(1+alpha)`,
    /// `K^-beta`.
    pub fluct_var: [f64; 3],
    pub fluct_var_se: [f64; 3],
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub horizon: f64,
    pub replicates: usize,
    pub per_k: Vec<KComparison>,
}

impl ConvergenceReport {
    /// Fluctuation-variance ratios between consecutive scales,
    /// `var(K_next) / var(K)` per component.
    pub fn variance_ratios(&self) -> Vec<(u64, u64, [f64; 3])> {
        self.per_k
            .windows(2)
            .map(|w| {
                let mut r = [0.0; 3];
                for j in 0..3 {
                    r[j] = w[1].fluct_var[j] / w[0].fluct_var[j];
                }
                (w[0].k, w[1].k, r)
            })
            .collect()
    }

    /// True when the W1 distance of the given marginal never increases
    /// by more than `n_se` combined standard errors between consecutive
    /// scales.
    pub fn w1_nonincreasing(&self, axis: usize, n_se: f64) -> bool {
        self.per_k.windows(2).all(|w| {
            let allowed = n_se * (w[0].w1_se[axis].powi(2) + w[1].w1_se[axis].powi(2)).sqrt();
            w[1].w1[axis] <= w[0].w1[axis] + allowed
        })
    }
}

const W1_BOOTSTRAP: usize = 200;

/// For each scale K, runs `n` exact finite-K replicates against `n`
/// limit replicates from matched initial laws and compares the terminal
/// ensembles. The fluctuation of a finite-K path is its terminal
/// martingale part, obtained by subtracting the accumulated drift.
pub fn convergence_report(
    p: &ModelParams,
    k_list: &[u64],
    t_end: f64,
    n: usize,
    tol: f64,
    seed: u64,
) -> Result<ConvergenceReport> {
    p.validate()?;
    if k_list.is_empty() || n < 2 {
        return Err(Error::Domain("need at least one K and two replicates".into()));
    }
    let eq = solve_equilibrium(p, 1e-12)?;
    let active_prob = telegraph_active_fraction(p);

    let mut per_k = Vec::with_capacity(k_list.len());
    for (ki, &k) in k_list.iter().enumerate() {
        let base = (ki as u64) << 33;

        let ssa_runs: Vec<([f64; 3], [f64; 3])> = (0..n as u64)
            .into_par_iter()
            .map(|rep| -> Result<([f64; 3], [f64; 3])> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(base | rep);
                let init = equilibrium_jump_state(p, k, &mut rng)?;
                let opts = SsaOptions {
                    grid_dt: t_end,
                    log_events: false,
                    track_fluctuation: true,
                };
                let out = simulate_ssa_full(p, &init, t_end, &opts, &mut rng)?;
                let sf = ScaleFactors::new(p, k);
                Ok((sf.scaled(&out.terminal), out.fluctuation.expect("tracking enabled")))
            })
            .collect::<Result<_>>()?;

        let pdmp_runs: Vec<HybridState> = (0..n as u64)
            .into_par_iter()
            .map(|rep| -> Result<HybridState> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(base | (1 << 32) | rep);
                let regime = if rng.random::<f64>() < active_prob {
                    Regime::Active
                } else {
                    Regime::Quiescent
                };
                let s0 = HybridState { x: eq.coords(), regime };
                simulate_pdmp_capture_with(p, &s0, &[t_end], t_end, tol, &mut rng)
                    .map(|mut v| v.pop().expect("one capture time"))
            })
            .collect::<Result<_>>()?;

        let mut w1 = [0.0; 3];
        let mut w1_se = [0.0; 3];
        let mut ks = [0.0; 3];
        let mut fluct_var = [0.0; 3];
        let mut fluct_var_se = [0.0; 3];
        for axis in 0..3 {
            let fin: Vec<f64> = ssa_runs.iter().map(|(x, _)| x[axis]).collect();
            let lim: Vec<f64> = pdmp_runs.iter().map(|s| s.x[axis]).collect();
            w1[axis] = wasserstein1(&fin, &lim);
            w1_se[axis] = wasserstein1_se(&fin, &lim, W1_BOOTSTRAP, seed ^ (axis as u64 + 1));
            ks[axis] = ks_distance(&fin, &lim);
            let fl: Vec<f64> = ssa_runs.iter().map(|(_, m)| m[axis]).collect();
            fluct_var[axis] = variance(&fl);
            fluct_var_se[axis] = fluct_var[axis] * (2.0 / (n as f64 - 1.0)).sqrt();
        }
        per_k.push(KComparison { k, w1, w1_se, ks, fluct_var, fluct_var_se });
    }

    Ok(ConvergenceReport { horizon: t_end, replicates: n, per_k })
}

// ---------------------------------------------------------------------------
// ergodic and weak-form residuals

/// Time average of the generator applied to `f` along the trajectory
/// over `[burn_in, horizon]`, with a batch-means standard error. The
/// average vanishes (within noise) in the stationary regime.
pub fn ergodic_residual<F: TestFunction + ?Sized>(
    p: &ModelParams,
    traj: &PdmpTrajectory,
    f: &F,
    burn_in: f64,
) -> Result<(f64, f64)> {
    if !(burn_in >= 0.0) || burn_in >= traj.horizon() {
        return Err(Error::EmptyWindow(format!(
            "burn-in {burn_in} must lie inside the horizon {}",
            traj.horizon()
        )));
    }
    let n_batches = DEFAULT_BATCHES;
    let span = traj.horizon() - burn_in;
    let batch_len = span / n_batches as f64;
    let mut batch_sums = vec![0.0_f64; n_batches];
    let mut batch_weights = vec![0.0_f64; n_batches];

    for pair in traj.samples.windows(2) {
        let (s, next) = (&pair[0], &pair[1]);
        let a = s.t.max(burn_in);
        let b = next.t.min(traj.horizon());
        if b <= a {
            continue;
        }
        let w = b - a;
        // the regime is constant on [s.t, next.t); evaluate both
        // endpoints under it
        let fa = generator_apply(p, f, &s.x, s.regime);
        let fb = generator_apply(p, f, &next.x, s.regime);
        let batch = (((a - burn_in) / batch_len) as usize).min(n_batches - 1);
        batch_sums[batch] += 0.5 * (fa + fb) * w;
        batch_weights[batch] += w;
    }

    let total_weight: f64 = batch_weights.iter().sum();
    if total_weight <= 0.0 {
        return Err(Error::EmptyWindow("no trajectory mass after burn-in".into()));
    }
    let grand_mean = batch_sums.iter().sum::<f64>() / total_weight;
    let batch_means: Vec<f64> = batch_sums
        .iter()
        .zip(&batch_weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(s, w)| s / w)
        .collect();
    let nb = batch_means.len() as f64;
    let se = if batch_means.len() > 1 {
        (batch_means
            .iter()
            .map(|m| (m - grand_mean) * (m - grand_mean))
            .sum::<f64>()
            / (nb * (nb - 1.0)))
            .sqrt()
    } else {
        0.0
    };
    Ok((grand_mean, se))
}

/// Weak-form residual of the stationary transport-switching system
/// against the estimated densities: the integral of the generator
/// applied to a compactly supported bump, which vanishes under the
/// invariant measure. Returns the residual and its batch-means standard
/// error.
///
/// The integrand is evaluated on each cell's sigma points, which match
/// the mean and covariance of the visits; the binning bias is then
/// third order in the cell width and stays below the Monte-Carlo error
/// even on very long runs.
pub fn weak_pde_residual(
    p: &ModelParams,
    m: &EmpiricalMeasure,
    f: &BumpFunction,
) -> Result<(f64, f64)> {
    p.validate()?;
    // re-validate the support against this measure's own domain
    BumpFunction::new(f.center, f.radius, f.weights, &m.domain)?;

    // per-cell integrand values over the support, per regime
    let lo = f.support_lo();
    let hi = f.support_hi();
    let mut range = [[0usize; 2]; 3];
    for j in 0..3 {
        let w = m.cell_width(j);
        let a = (((lo[j] - m.domain.lo[j]) / w) as usize).min(m.dims[j] - 1);
        let b = (((hi[j] - m.domain.lo[j]) / w) as usize).min(m.dims[j] - 1);
        range[j] = [a, b];
    }
    let mut values: HashMap<u32, f64> = HashMap::new();
    for i0 in range[0][0]..=range[0][1] {
        for i1 in range[1][0]..=range[1][1] {
            for i2 in range[2][0]..=range[2][1] {
                let cell = (i0 * m.dims[1] + i1) * m.dims[2] + i2;
                for regime in Regime::BOTH {
                    let v = m
                        .sigma_points(cell, regime)
                        .iter()
                        .map(|node| generator_apply(p, f, node, regime))
                        .sum::<f64>()
                        / 6.0;
                    values.insert((cell * 2 + regime.index()) as u32, v);
                }
            }
        }
    }

    let mut residual = 0.0;
    for (&key, &v) in &values {
        residual += m.mass[key as usize] * v;
    }

    let batch_residuals: Vec<f64> = m
        .batches
        .iter()
        .map(|b| {
            b.entries
                .iter()
                .filter_map(|(key, w)| values.get(key).map(|v| w * v))
                .sum::<f64>()
        })
        .collect();
    let se = if batch_residuals.len() > 1 {
        let nb = batch_residuals.len() as f64;
        let bm = mean(&batch_residuals);
        (batch_residuals
            .iter()
            .map(|r| (r - bm) * (r - bm))
            .sum::<f64>()
            / (nb * (nb - 1.0)))
            .sqrt()
    } else {
        0.0
    };
    Ok((residual, se))
}

/// Mass the measure assigns to the support box of a bump (both
/// regimes).
pub fn support_mass(m: &EmpiricalMeasure, f: &BumpFunction) -> f64 {
    let lo = f.support_lo();
    let hi = f.support_hi();
    let mut range = [[0usize; 2]; 3];
    for j in 0..3 {
        let w = m.cell_width(j);
        let a = (((lo[j] - m.domain.lo[j]) / w).max(0.0) as usize).min(m.dims[j] - 1);
        let b = (((hi[j] - m.domain.lo[j]) / w).max(0.0) as usize).min(m.dims[j] - 1);
        range[j] = [a, b];
    }
    let mut mass = 0.0;
    for i0 in range[0][0]..=range[0][1] {
        for i1 in range[1][0]..=range[1][1] {
            for i2 in range[2][0]..=range[2][1] {
                let cell = (i0 * m.dims[1] + i1) * m.dims[2] + i2;
                mass += m.mass_at(cell, Regime::Quiescent) + m.mass_at(cell, Regime::Active);
            }
        }
    }
    mass
}

/// Random bump conditioned on carrying at least `min_mass` of the
/// measure, so the weak-form test has statistical power; the support of
/// the invariant measure is a thin subset of the box and unconditioned
/// draws often land where both sides of the identity vanish. Falls back
/// to the heaviest candidate if the threshold is never met.
pub fn random_supported_bump<R: Rng>(
    rng: &mut R,
    m: &EmpiricalMeasure,
    min_mass: f64,
    max_tries: usize,
) -> BumpFunction {
    let mut best: Option<(f64, BumpFunction)> = None;
    for _ in 0..max_tries.max(1) {
        let bump = BumpFunction::random(rng, &m.domain);
        let mass = support_mass(m, &bump);
        if mass >= min_mass {
            return bump;
        }
        if best.as_ref().map(|(bm, _)| mass > *bm).unwrap_or(true) {
            best = Some((mass, bump));
        }
    }
    best.expect("at least one candidate").1
}

// ---------------------------------------------------------------------------
// stationarity proxy

#[derive(Clone, Debug, Serialize)]
pub struct MarginalPair {
    pub t_from: f64,
    pub t_to: f64,
    /// Per-marginal KS between the ensemble laws at the two times.
    pub ks: [f64; 3],
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarityReport {
    pub pairs: Vec<MarginalPair>,
    /// Least-squares slope of `ln KS` against time per marginal, when
    /// at least two positive distances are available. A mixing
    /// diagnostic; no decay constant is asserted.
    pub decay_slope: [Option<f64>; 3],
}

/// Per-marginal KS distances between ensemble marginals at consecutive
/// times, from one ensemble of `n` replicates sampled along the way.
pub fn tv_stationarity(
    p: &ModelParams,
    s0: &HybridState,
    times: &[f64],
    n: usize,
    tol: f64,
    seed: u64,
) -> Result<StationarityReport> {
    if times.len() < 2 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("need at least two strictly increasing times".into()));
    }
    if times[0] < 0.0 {
        return Err(Error::Domain("times must be nonnegative".into()));
    }
    if n < 2 {
        return Err(Error::Domain("need at least two replicates".into()));
    }
    let t_end = *times.last().unwrap();
    let per_rep = ensemble_pdmp_capture(p, s0, times, t_end, n, tol, seed)?;

    let mut pairs = Vec::with_capacity(times.len() - 1);
    for ti in 0..times.len() - 1 {
        let mut ks = [0.0; 3];
        for axis in 0..3 {
            let a: Vec<f64> = per_rep.iter().map(|r| r[ti].x[axis]).collect();
            let b: Vec<f64> = per_rep.iter().map(|r| r[ti + 1].x[axis]).collect();
            ks[axis] = ks_distance(&a, &b);
        }
        pairs.push(MarginalPair { t_from: times[ti], t_to: times[ti + 1], ks });
    }

    let mut decay_slope = [None; 3];
    for axis in 0..3 {
        let points: Vec<(f64, f64)> = pairs
            .iter()
            .filter(|pr| pr.ks[axis] > 0.0)
            .map(|pr| (pr.t_from, pr.ks[axis].ln()))
            .collect();
        if points.len() >= 2 {
            let np = points.len() as f64;
            let sx: f64 = points.iter().map(|(x, _)| x).sum();
            let sy: f64 = points.iter().map(|(_, y)| y).sum();
            let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
            let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
            let denom = np * sxx - sx * sx;
            if denom.abs() > 1e-12 {
                decay_slope[axis] = Some((np * sxy - sx * sy) / denom);
            }
        }
    }

    Ok(StationarityReport { pairs, decay_slope })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::invariant_box;
    use approx::assert_relative_eq;

    fn pset_a() -> ModelParams {
        ModelParams::baseline()
    }

    #[test]
    fn ks_trivial_values() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]), 0.0);
        assert_eq!(ks_distance(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]), 1.0);
        // hand-checked quarter shift
        assert_relative_eq!(ks_distance(&[1.0, 1.0, 4.0, 4.0], &[1.0, 1.0, 1.0, 4.0]), 0.25);
    }

    #[test]
    fn w1_trivial_values() {
        assert_eq!(wasserstein1(&[1.0, 2.0], &[2.0, 1.0]), 0.0);
        assert_eq!(wasserstein1(&[0.0], &[1.0]), 1.0);
        assert_eq!(wasserstein1(&[0.0, 1.0], &[1.0, 2.0]), 1.0);
    }

    #[test]
    fn distances_are_symmetric() {
        let a = [0.3, 1.2, -0.5, 0.9, 2.2];
        let b = [0.1, 0.8, 1.4, -0.2, 0.6];
        assert_eq!(ks_distance(&a, &b), ks_distance(&b, &a));
        assert_eq!(wasserstein1(&a, &b), wasserstein1(&b, &a));
    }

    #[test]
    fn point_mass_occupies_one_cell() {
        let p = pset_a();
        let bx = invariant_box(&p);
        let m = EmpiricalMeasure::point_mass(bx, [8, 8, 8], &[0.4, 1.0, 0.2], Regime::Quiescent, 10)
            .unwrap();
        assert_relative_eq!(m.total_mass(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.regime_mass(Regime::Quiescent), 1.0, epsilon = 1e-12);
        assert_eq!(m.regime_mass(Regime::Active), 0.0);
        let cell = m.cell_of(&[0.4, 1.0, 0.2]).unwrap();
        assert_relative_eq!(m.mass_at(cell, Regime::Quiescent), 1.0);
    }

    #[test]
    fn cells_cover_the_closed_box() {
        let p = pset_a();
        let bx = invariant_box(&p);
        let m = EmpiricalMeasure::point_mass(bx, [4, 5, 6], &bx.center(), Regime::Active, 1).unwrap();
        assert!(m.cell_of(&bx.lo).is_some());
        assert!(m.cell_of(&bx.hi).is_some());
        let mut outside = bx.hi;
        outside[1] += 1e-9;
        assert!(m.cell_of(&outside).is_none());
    }

    #[test]
    fn weak_residual_vanishes_on_disjoint_support() {
        // mass at the equilibrium, bump supported away from it
        let p = pset_a();
        let bx = invariant_box(&p);
        let m =
            EmpiricalMeasure::point_mass(bx, [16, 16, 16], &[0.5, 1.0, 0.0], Regime::Quiescent, 10)
                .unwrap();
        let bump = BumpFunction::new([0.42, 1.6, 0.7], [0.03, 0.2, 0.2], [1.0, 1.0], &bx).unwrap();
        let (res, se) = weak_pde_residual(&p, &m, &bump).unwrap();
        assert_eq!(res, 0.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn weak_residual_is_linear_in_the_test_function() {
        let p = pset_a();
        let bx = invariant_box(&p);
        let m =
            EmpiricalMeasure::point_mass(bx, [16, 16, 16], &[0.42, 1.2, 0.3], Regime::Active, 10)
                .unwrap();
        let b1 = BumpFunction::new([0.42, 1.2, 0.3], [0.05, 0.3, 0.25], [1.0, 0.4], &bx).unwrap();
        let scaled = BumpFunction::new(
            b1.center,
            b1.radius,
            [3.0 * b1.weights[0], 3.0 * b1.weights[1]],
            &bx,
        )
        .unwrap();
        let (r1, _) = weak_pde_residual(&p, &m, &b1).unwrap();
        let (r3, _) = weak_pde_residual(&p, &m, &scaled).unwrap();
        assert_relative_eq!(r3, 3.0 * r1, epsilon = 1e-12, max_relative = 1e-12);
    }

    #[test]
    fn bump_support_outside_the_measure_domain_is_a_contract_error() {
        let p = pset_a();
        let bx = invariant_box(&p);
        let m = EmpiricalMeasure::point_mass(bx, [8, 8, 8], &bx.center(), Regime::Active, 4).unwrap();
        // legal against an inflated box, illegal against the measure's own
        let big = InvariantBox {
            lo: [bx.lo[0] - 1.0, bx.lo[1] - 1.0, bx.lo[2] - 1.0],
            hi: [bx.hi[0] + 1.0, bx.hi[1] + 1.0, bx.hi[2] + 1.0],
        };
        let bump = BumpFunction::new(bx.center(), [1.0, 1.0, 1.0], [1.0, 1.0], &big).unwrap();
        assert!(weak_pde_residual(&p, &m, &bump).is_err());
    }

    #[test]
    fn shifted_measure_moves_mass() {
        let p = pset_a();
        let bx = invariant_box(&p);
        let m =
            EmpiricalMeasure::point_mass(bx, [8, 8, 8], &bx.center(), Regime::Quiescent, 4).unwrap();
        let shifted = m.shifted(1, 3);
        assert_relative_eq!(shifted.total_mass(), 1.0, epsilon = 1e-12);
        let cell = m.cell_of(&bx.center()).unwrap();
        assert_eq!(shifted.mass_at(cell, Regime::Quiescent), 0.0);
    }
}
