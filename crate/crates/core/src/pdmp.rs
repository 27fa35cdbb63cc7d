//! Simulation of the limit process: deterministic flow between regime
//! switches, switching out of quiescence at a constant rate and out of
//! activity by exact inversion of the accumulated hazard.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{vector_field, HybridState, ModelParams, Regime};
use crate::ode::{hermite, OdeOptions, StepRecord, Stepper};

/// Absolute time tolerance for locating a hazard crossing.
const SWITCH_TIME_TOL: f64 = 1e-10;

/// Receives the pieces of a trajectory as they are produced.
trait PdmpSink {
    fn on_step(&mut self, rec: &StepRecord<3>, regime: Regime);
    fn on_switch(&mut self, t: f64, x: &[f64; 3], new_regime: Regime);
}

fn project(rec: &StepRecord<4>) -> StepRecord<3> {
    StepRecord {
        t0: rec.t0,
        t1: rec.t1,
        y0: [rec.y0[0], rec.y0[1], rec.y0[2]],
        f0: [rec.f0[0], rec.f0[1], rec.f0[2]],
        y1: [rec.y1[0], rec.y1[1], rec.y1[2]],
        f1: [rec.f1[0], rec.f1[1], rec.f1[2]],
    }
}

/// First time in the step at which the accumulated hazard reaches the
/// threshold, located by bisection on the dense output.
fn localize_crossing(rec: &StepRecord<4>, threshold: f64) -> f64 {
    if rec.y0[3] >= threshold {
        return rec.t0;
    }
    let mut lo = rec.t0;
    let mut hi = rec.t1;
    while hi - lo > SWITCH_TIME_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if rec.interpolate(mid)[3] >= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Drives one trajectory from `s0` to `t_end`, feeding the sink.
/// Returns the terminal state.
fn run_pdmp<R: Rng, S: PdmpSink>(
    p: &ModelParams,
    s0: &HybridState,
    t_end: f64,
    opts: OdeOptions,
    rng: &mut R,
    sink: &mut S,
) -> Result<HybridState> {
    p.validate()?;
    HybridState::new(s0.x, s0.regime)?;
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::Domain(format!("horizon must be positive and finite, got {t_end}")));
    }

    let mut t = 0.0_f64;
    let mut x = s0.x;
    let mut regime = s0.regime;
    let mut h_hint: Option<f64> = None;

    while t < t_end {
        match regime {
            Regime::Quiescent => {
                let sojourn: f64 = rng.sample::<f64, _>(Exp1) / p.a_m;
                let t_switch = t + sojourn;
                let t_target = t_switch.min(t_end);
                let field = |y: &[f64; 3]| vector_field(p, y, Regime::Quiescent);
                let mut stepper = Stepper::new(&field, t, x, opts);
                if let Some(h) = h_hint {
                    stepper.suggest_step(h);
                }
                if t_target > t {
                    stepper.advance_to_with(t_target, |rec| sink.on_step(rec, Regime::Quiescent))?;
                }
                h_hint = Some(stepper.current_step());
                t = t_target;
                x = *stepper.state();
                if t_switch < t_end {
                    regime = Regime::Active;
                    sink.on_switch(t, &x, regime);
                }
            }
            Regime::Active => {
                // augment the flow with the hazard of the deactivation
                // clock and stop when it crosses an Exp(1) threshold
                let threshold: f64 = rng.sample(Exp1);
                let field = |y: &[f64; 4]| {
                    let g = vector_field(p, &[y[0], y[1], y[2]], Regime::Active);
                    [g[0], g[1], g[2], p.rates(y[1], y[2]).q_m]
                };
                let mut stepper = Stepper::new(&field, t, [x[0], x[1], x[2], 0.0], opts);
                if let Some(h) = h_hint {
                    stepper.suggest_step(h);
                }
                let mut switched = false;
                while stepper.time() < t_end {
                    let rec = stepper.step_toward(t_end)?;
                    if rec.y1[3] >= threshold {
                        let t_star = localize_crossing(&rec, threshold);
                        if t_star > rec.t0 {
                            // redo the partial step so the switch state
                            // is a node value, not an interpolation
                            let mut tail = Stepper::new(&field, rec.t0, rec.y0, opts);
                            tail.suggest_step(rec.t1 - rec.t0);
                            tail.advance_to_with(t_star, |r| {
                                sink.on_step(&project(r), Regime::Active);
                            })?;
                            let y = tail.state();
                            x = [y[0], y[1], y[2]];
                            t = t_star;
                            h_hint = Some(tail.current_step());
                        } else {
                            x = [rec.y0[0], rec.y0[1], rec.y0[2]];
                            t = rec.t0;
                        }
                        switched = true;
                        break;
                    }
                    sink.on_step(&project(&rec), Regime::Active);
                    h_hint = Some(stepper.current_step());
                }
                if switched {
                    regime = Regime::Quiescent;
                    sink.on_switch(t, &x, regime);
                } else {
                    let y = stepper.state();
                    x = [y[0], y[1], y[2]];
                    t = t_end;
                }
            }
        }
    }

    Ok(HybridState { x, regime })
}

/// One recorded point of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: [f64; 3],
    pub regime: Regime,
}

/// A regime switch: the continuous coordinates do not jump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwitchEvent {
    pub t: f64,
    pub new_regime: Regime,
}

/// Recorded trajectory: samples on a uniform grid plus exact states at
/// every switch, in time order, always including `t = 0` and the
/// horizon.
#[derive(Clone, Debug)]
pub struct PdmpTrajectory {
    pub samples: Vec<TrajectorySample>,
    pub switches: Vec<SwitchEvent>,
    pub t_end: f64,
    pub grid_dt: f64,
    /// Tolerances the flow was integrated with.
    pub ode: OdeOptions,
    /// Parameters the trajectory was generated under; interpolation
    /// re-evaluates the field with them.
    field_params: ModelParams,
}

impl PdmpTrajectory {
    pub fn horizon(&self) -> f64 {
        self.t_end
    }

    pub fn initial(&self) -> HybridState {
        let s = self.samples[0];
        HybridState { x: s.x, regime: s.regime }
    }

    pub fn terminal(&self) -> HybridState {
        let s = *self.samples.last().expect("trajectory holds at least the endpoints");
        HybridState { x: s.x, regime: s.regime }
    }

    /// State at an arbitrary time: cubic interpolation of the
    /// continuous coordinates between recorded samples (accurate to
    /// O(grid_dt^4)), exact right-continuous regime lookup.
    pub fn sample_at(&self, t: f64) -> Result<HybridState> {
        if !(0.0..=self.t_end).contains(&t) {
            return Err(Error::OutOfHorizon { t, horizon: self.t_end });
        }
        // last sample with time <= t; ties resolve to the later entry,
        // which carries the post-switch regime
        let idx = self.samples.partition_point(|s| s.t <= t);
        let k = idx.saturating_sub(1);
        let left = self.samples[k];
        if left.t == t || k + 1 >= self.samples.len() {
            return Ok(HybridState { x: left.x, regime: left.regime });
        }
        let right = self.samples[k + 1];
        let p = &self.field_params;
        let f0 = vector_field(p, &left.x, left.regime);
        let f1 = vector_field(p, &right.x, left.regime);
        let x = hermite(left.t, &left.x, &f0, right.t, &right.x, &f1, t);
        Ok(HybridState { x, regime: left.regime })
    }
}

struct Recorder {
    grid_dt: f64,
    t_end: f64,
    next_grid: u64,
    samples: Vec<TrajectorySample>,
    switches: Vec<SwitchEvent>,
}

impl Recorder {
    fn new(s0: &HybridState, t_end: f64, grid_dt: f64) -> Self {
        Recorder {
            grid_dt,
            t_end,
            next_grid: 1,
            samples: vec![TrajectorySample { t: 0.0, x: s0.x, regime: s0.regime }],
            switches: Vec::new(),
        }
    }

    fn finish(&mut self, terminal: &HybridState) {
        let last_t = self.samples.last().map(|s| s.t).unwrap_or(0.0);
        if last_t < self.t_end {
            self.samples.push(TrajectorySample {
                t: self.t_end,
                x: terminal.x,
                regime: terminal.regime,
            });
        }
    }
}

impl PdmpSink for Recorder {
    fn on_step(&mut self, rec: &StepRecord<3>, regime: Regime) {
        loop {
            let tg = self.next_grid as f64 * self.grid_dt;
            if tg > rec.t1 || tg > self.t_end {
                break;
            }
            if tg > rec.t0 {
                self.samples.push(TrajectorySample { t: tg, x: rec.interpolate(tg), regime });
            }
            self.next_grid += 1;
        }
    }

    fn on_switch(&mut self, t: f64, x: &[f64; 3], new_regime: Regime) {
        self.samples.push(TrajectorySample { t, x: *x, regime: new_regime });
        self.switches.push(SwitchEvent { t, new_regime });
    }
}

/// Simulates one trajectory and records it on a uniform grid.
pub fn simulate_pdmp(
    p: &ModelParams,
    s0: &HybridState,
    t_end: f64,
    tol: f64,
    grid_dt: f64,
    seed: u64,
) -> Result<PdmpTrajectory> {
    simulate_pdmp_stream(p, s0, t_end, tol, grid_dt, seed, 0)
}

/// Same as [`simulate_pdmp`] with an explicit generator stream, used by
/// ensembles to give each replicate independent randomness under one
/// seed.
pub fn simulate_pdmp_stream(
    p: &ModelParams,
    s0: &HybridState,
    t_end: f64,
    tol: f64,
    grid_dt: f64,
    seed: u64,
    stream: u64,
) -> Result<PdmpTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    simulate_pdmp_with(p, s0, t_end, tol, grid_dt, &mut rng)
}

/// Same as [`simulate_pdmp`] with a caller-owned generator.
pub fn simulate_pdmp_with<R: Rng>(
    p: &ModelParams,
    s0: &HybridState,
    t_end: f64,
    tol: f64,
    grid_dt: f64,
    rng: &mut R,
) -> Result<PdmpTrajectory> {
    if !(grid_dt > 0.0) {
        return Err(Error::Domain(format!("grid spacing must be positive, got {grid_dt}")));
    }
    let opts = OdeOptions::with_tolerance(tol);
    let mut recorder = Recorder::new(s0, t_end, grid_dt);
    let terminal = run_pdmp(p, s0, t_end, opts, rng, &mut recorder)?;
    recorder.finish(&terminal);
    Ok(PdmpTrajectory {
        samples: recorder.samples,
        switches: recorder.switches,
        t_end,
        grid_dt,
        ode: opts,
        field_params: *p,
    })
}

struct Capture<'a> {
    times: &'a [f64],
    idx: usize,
    states: Vec<HybridState>,
}

impl PdmpSink for Capture<'_> {
    fn on_step(&mut self, rec: &StepRecord<3>, regime: Regime) {
        while self.idx < self.times.len() {
            let ti = self.times[self.idx];
            if ti > rec.t1 {
                break;
            }
            let x = if ti <= rec.t0 { rec.y0 } else { rec.interpolate(ti) };
            self.states.push(HybridState { x, regime });
            self.idx += 1;
        }
    }

    fn on_switch(&mut self, t: f64, _x: &[f64; 3], new_regime: Regime) {
        // a capture time landing exactly on a switch takes the
        // post-switch regime
        if let Some(last) = self.states.last_mut() {
            if self.idx > 0 && self.times[self.idx - 1] == t {
                last.regime = new_regime;
            }
        }
    }
}

/// States of one trajectory at the given (sorted, within-horizon)
/// times.
pub fn simulate_pdmp_capture(
    p: &ModelParams,
    s0: &HybridState,
    times: &[f64],
    t_end: f64,
    tol: f64,
    seed: u64,
    stream: u64,
) -> Result<Vec<HybridState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    simulate_pdmp_capture_with(p, s0, times, t_end, tol, &mut rng)
}

/// Same as [`simulate_pdmp_capture`] with a caller-owned generator, for
/// callers that draw part of the replicate randomness themselves.
pub fn simulate_pdmp_capture_with<R: Rng>(
    p: &ModelParams,
    s0: &HybridState,
    times: &[f64],
    t_end: f64,
    tol: f64,
    rng: &mut R,
) -> Result<Vec<HybridState>> {
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Domain("capture times must be sorted".into()));
    }
    if let Some(&last) = times.last() {
        if last > t_end || times[0] < 0.0 {
            return Err(Error::OutOfHorizon { t: last, horizon: t_end });
        }
    }
    let mut capture = Capture { times, idx: 0, states: Vec::with_capacity(times.len()) };
    while capture.idx < times.len() && times[capture.idx] <= 0.0 {
        capture.states.push(*s0);
        capture.idx += 1;
    }
    let terminal = run_pdmp(p, s0, t_end, OdeOptions::with_tolerance(tol), rng, &mut capture)?;
    while capture.idx < times.len() {
        // only reachable when a capture time equals the horizon
        capture.states.push(terminal);
        capture.idx += 1;
    }
    Ok(capture.states)
}

/// Terminal states of `n` independent replicates (streams `0..n` of the
/// seed). Replicates run in parallel; the output order is by replicate,
/// so results are independent of thread count.
pub fn ensemble_pdmp(
    p: &ModelParams,
    s0: &HybridState,
    t_end: f64,
    n: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<HybridState>> {
    if n == 0 {
        return Err(Error::Domain("ensemble needs at least one replicate".into()));
    }
    let times = [t_end];
    (0..n as u64)
        .into_par_iter()
        .map(|rep| {
            simulate_pdmp_capture(p, s0, &times, t_end, tol, seed, rep)
                .map(|mut v| v.pop().expect("one capture time"))
        })
        .collect()
}

/// Per-replicate states at each of the given times.
pub fn ensemble_pdmp_capture(
    p: &ModelParams,
    s0: &HybridState,
    times: &[f64],
    t_end: f64,
    n: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<Vec<HybridState>>> {
    if n == 0 {
        return Err(Error::Domain("ensemble needs at least one replicate".into()));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|rep| simulate_pdmp_capture(p, s0, times, t_end, tol, seed, rep))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pset_a() -> ModelParams {
        ModelParams::baseline()
    }

    fn equilibrium_state() -> HybridState {
        HybridState { x: [0.5, 1.0, 0.0], regime: Regime::Quiescent }
    }

    #[test]
    fn stays_at_equilibrium_until_the_first_switch() {
        let p = pset_a();
        let traj = simulate_pdmp(&p, &equilibrium_state(), 20.0, 1e-9, 0.1, 4).unwrap();
        let first_switch = traj.switches.first().expect("a switch within 20 time units").t;
        for s in traj.samples.iter().take_while(|s| s.t <= first_switch) {
            for j in 0..3 {
                assert!((s.x[j] - equilibrium_state().x[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sample_at_endpoints_and_nodes() {
        let p = pset_a();
        let s0 = HybridState { x: [0.4, 0.8, 0.1], regime: Regime::Active };
        let traj = simulate_pdmp(&p, &s0, 5.0, 1e-9, 0.25, 9).unwrap();
        let at0 = traj.sample_at(0.0).unwrap();
        assert_eq!(at0.x, s0.x);
        assert_eq!(at0.regime, s0.regime);

        for s in &traj.samples {
            let v = traj.sample_at(s.t).unwrap();
            assert_eq!(v.x, s.x);
        }
        assert!(traj.sample_at(5.0 + 1e-9).is_err());
        assert!(traj.sample_at(-0.1).is_err());
    }

    #[test]
    fn regime_is_right_continuous_and_x_continuous_across_switches() {
        let p = pset_a();
        let traj = simulate_pdmp(&p, &equilibrium_state(), 50.0, 1e-9, 0.05, 21).unwrap();
        assert!(!traj.switches.is_empty());
        for sw in &traj.switches {
            let before = traj.sample_at((sw.t - 1e-9).max(0.0)).unwrap();
            let at = traj.sample_at(sw.t).unwrap();
            assert_eq!(at.regime, sw.new_regime);
            for j in 0..3 {
                assert!(
                    (before.x[j] - at.x[j]).abs() < 1e-7,
                    "x must be continuous across a switch"
                );
            }
        }
    }

    #[test]
    fn conditional_on_no_switch_the_active_flow_is_deterministic() {
        // the first Active sojourn exceeds 1 for some seeds; on those,
        // x3 follows the closed-form relaxation
        let p = pset_a();
        let s0 = HybridState { x: [0.5, 1.0, 0.0], regime: Regime::Active };
        let mut checked = false;
        for seed in 0..50 {
            let traj = simulate_pdmp(&p, &s0, 1.0, 1e-9, 0.05, seed).unwrap();
            if traj.switches.is_empty() {
                let x = traj.terminal().x;
                assert_relative_eq!(x[2], 1.0 - (-1.0_f64).exp(), epsilon = 1e-7);
                checked = true;
            }
        }
        assert!(checked, "no seed produced a switch-free unit interval");
    }

    #[test]
    fn ensemble_of_one_matches_the_single_run() {
        let p = pset_a();
        let s0 = equilibrium_state();
        let single = simulate_pdmp_capture(&p, &s0, &[10.0], 10.0, 1e-9, 33, 0).unwrap();
        let ensemble = ensemble_pdmp(&p, &s0, 10.0, 1, 1e-9, 33).unwrap();
        assert_eq!(single[0].x, ensemble[0].x);
        assert_eq!(single[0].regime, ensemble[0].regime);
    }

    #[test]
    fn capture_times_match_trajectory_interpolation() {
        let p = pset_a();
        let s0 = equilibrium_state();
        let times = [0.0, 1.5, 3.2, 7.0, 10.0];
        let captured = simulate_pdmp_capture(&p, &s0, &times, 10.0, 1e-9, 5, 0).unwrap();
        let traj = simulate_pdmp_stream(&p, &s0, 10.0, 1e-9, 0.05, 5, 0).unwrap();
        for (ti, cap) in times.iter().zip(&captured) {
            let via_traj = traj.sample_at(*ti).unwrap();
            assert_eq!(cap.regime, via_traj.regime, "regime mismatch at t = {ti}");
            for j in 0..3 {
                assert!(
                    (cap.x[j] - via_traj.x[j]).abs() < 1e-5,
                    "coordinate {j} at t = {ti}: {} vs {}",
                    cap.x[j],
                    via_traj.x[j]
                );
            }
        }
    }

    #[test]
    fn switch_states_are_consistent_between_runs_with_same_seed() {
        let p = pset_a();
        let s0 = equilibrium_state();
        let a = simulate_pdmp(&p, &s0, 30.0, 1e-9, 0.1, 77).unwrap();
        let b = simulate_pdmp(&p, &s0, 30.0, 1e-9, 0.1, 77).unwrap();
        assert_eq!(a.switches.len(), b.switches.len());
        for (x, y) in a.switches.iter().zip(&b.switches) {
            assert_eq!(x.t, y.t);
            assert_eq!(x.new_regime, y.new_regime);
        }
    }
}
