//! Event-driven simulation of the finite-population jump process, exact
//! (direct method) and approximate (Poisson tau-leaping), emitting
//! trajectories in the scaled coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::equilibrium::solve_equilibrium;
use crate::error::{Error, Result};
use crate::model::{telegraph_active_fraction, vector_field, ModelParams, Regime};

/// Integer state of the finite-population process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JumpState {
    /// Population scale: total number of healthy stem cells.
    pub k: u64,
    /// Active healthy stem cells, in `[0, k]`.
    pub n1: u64,
    /// Healthy red blood cells.
    pub n2: u64,
    /// Mutant red blood cells.
    pub n3: u64,
    pub regime: Regime,
}

impl JumpState {
    pub fn new(k: u64, n1: u64, n2: u64, n3: u64, regime: Regime) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("population scale K must be >= 1".into()));
        }
        if n1 > k {
            return Err(Error::Domain(format!(
                "active HSC count {n1} exceeds the population scale {k}"
            )));
        }
        Ok(JumpState { k, n1, n2, n3, regime })
    }
}

/// Precomputed powers of K used on every event.
#[derive(Clone, Copy, Debug)]
pub struct ScaleFactors {
    pub hsc: f64,
    pub rbc: f64,
    pub mutant: f64,
    pub amp_healthy: f64,
    pub amp_mutant: f64,
}

impl ScaleFactors {
    pub fn new(p: &ModelParams, k: u64) -> Self {
        let kf = k as f64;
        ScaleFactors {
            hsc: kf,
            rbc: kf.powf(1.0 + p.alpha),
            mutant: kf.powf(p.beta),
            amp_healthy: kf.powf(p.alpha),
            amp_mutant: kf.powf(p.beta),
        }
    }

    pub fn scaled(&self, s: &JumpState) -> [f64; 3] {
        [
            s.n1 as f64 / self.hsc,
            s.n2 as f64 / self.rbc,
            s.n3 as f64 / self.mutant,
        ]
    }
}

/// Intensities of the eight event channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRates {
    pub hsc_activate: f64,
    pub hsc_deactivate: f64,
    pub rbc_birth: f64,
    pub rbc_death: f64,
    pub mut_birth: f64,
    pub mut_death: f64,
    pub cancer_activate: f64,
    pub cancer_deactivate: f64,
}

impl EventRates {
    pub fn total(&self) -> f64 {
        self.as_array().iter().sum()
    }

    pub fn as_array(&self) -> [f64; 8] {
        [
            self.hsc_activate,
            self.hsc_deactivate,
            self.rbc_birth,
            self.rbc_death,
            self.mut_birth,
            self.mut_death,
            self.cancer_activate,
            self.cancer_deactivate,
        ]
    }
}

/// The eight event channels, in the order of `EventRates::as_array`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventChannel {
    HscActivate,
    HscDeactivate,
    RbcBirth,
    RbcDeath,
    MutBirth,
    MutDeath,
    CancerActivate,
    CancerDeactivate,
}

const CHANNELS: [EventChannel; 8] = [
    EventChannel::HscActivate,
    EventChannel::HscDeactivate,
    EventChannel::RbcBirth,
    EventChannel::RbcDeath,
    EventChannel::MutBirth,
    EventChannel::MutDeath,
    EventChannel::CancerActivate,
    EventChannel::CancerDeactivate,
];

fn rates_with_scales(p: &ModelParams, s: &JumpState, sf: &ScaleFactors) -> EventRates {
    let rt = p.rates(s.n2 as f64 / sf.rbc, s.n3 as f64 / sf.mutant);
    let ind = s.regime.indicator();
    EventRates {
        hsc_activate: p.a * (s.k - s.n1) as f64,
        hsc_deactivate: rt.q * s.n1 as f64,
        rbc_birth: sf.amp_healthy * rt.r * s.n1 as f64,
        rbc_death: p.d * s.n2 as f64,
        mut_birth: sf.amp_mutant * rt.r_m * ind,
        mut_death: p.d_m * s.n3 as f64,
        cancer_activate: p.a_m * (1.0 - ind),
        cancer_deactivate: rt.q_m * ind,
    }
}

/// Current intensities of the eight event channels.
pub fn event_rates(p: &ModelParams, s: &JumpState) -> EventRates {
    rates_with_scales(p, s, &ScaleFactors::new(p, s.k))
}

fn apply_event(s: &mut JumpState, channel: EventChannel) {
    match channel {
        EventChannel::HscActivate => s.n1 += 1,
        EventChannel::HscDeactivate => s.n1 -= 1,
        EventChannel::RbcBirth => s.n2 += 1,
        EventChannel::RbcDeath => s.n2 -= 1,
        EventChannel::MutBirth => s.n3 += 1,
        EventChannel::MutDeath => s.n3 -= 1,
        EventChannel::CancerActivate => s.regime = Regime::Active,
        EventChannel::CancerDeactivate => s.regime = Regime::Quiescent,
    }
}

/// One point of the rescaled trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledSample {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub regime: Regime,
}

impl ScaledSample {
    fn at(t: f64, s: &JumpState, sf: &ScaleFactors) -> Self {
        let x = sf.scaled(s);
        ScaledSample { t, x1: x[0], x2: x[1], x3: x[2], regime: s.regime }
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }
}

/// Logged event of an exact run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub channel: EventChannel,
}

#[derive(Clone, Copy, Debug)]
pub struct SsaOptions {
    /// Spacing of the uniform output grid.
    pub grid_dt: f64,
    /// Keep the full event log (grows like `K^(1+alpha) T`).
    pub log_events: bool,
    /// Accumulate the drift integral so the terminal martingale part of
    /// the scaled path can be read off.
    pub track_fluctuation: bool,
}

#[derive(Clone, Debug)]
pub struct SsaOutput {
    /// Right-continuous piecewise-constant samples on the uniform grid.
    pub samples: Vec<ScaledSample>,
    pub terminal: JumpState,
    pub events: Option<Vec<EventRecord>>,
    /// `X(T) - X(0) - integral of the drift` in scaled coordinates.
    pub fluctuation: Option<[f64; 3]>,
    pub n_events: u64,
}

/// Exact direct-method simulation, sampled on a uniform grid.
pub fn simulate_ssa(
    p: &ModelParams,
    init: &JumpState,
    t_end: f64,
    grid_dt: f64,
    seed: u64,
) -> Result<Vec<ScaledSample>> {
    let opts = SsaOptions { grid_dt, log_events: false, track_fluctuation: false };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(simulate_ssa_full(p, init, t_end, &opts, &mut rng)?.samples)
}

/// Exact direct-method simulation with optional event log and
/// fluctuation tracking. The generator is owned by the caller so that
/// ensembles can assign one stream per replicate.
pub fn simulate_ssa_full<R: Rng>(
    p: &ModelParams,
    init: &JumpState,
    t_end: f64,
    opts: &SsaOptions,
    rng: &mut R,
) -> Result<SsaOutput> {
    p.validate()?;
    if init.k == 0 || init.n1 > init.k {
        return Err(Error::Domain(format!("invalid initial jump state {init:?}")));
    }
    if !(t_end > 0.0) || !(opts.grid_dt > 0.0) {
        return Err(Error::Domain(format!(
            "horizon and grid spacing must be positive, got T = {t_end}, grid_dt = {}",
            opts.grid_dt
        )));
    }

    let sf = ScaleFactors::new(p, init.k);
    let mut state = *init;
    let mut t = 0.0_f64;
    let mut samples = Vec::with_capacity((t_end / opts.grid_dt) as usize + 2);
    let mut events = opts.log_events.then(Vec::new);
    let mut drift = [0.0_f64; 3];
    let x0 = sf.scaled(init);
    let mut grid_index = 0u64;
    let mut n_events = 0u64;

    loop {
        let rates = rates_with_scales(p, &state, &sf);
        let total = rates.total();
        if !total.is_finite() {
            return Err(Error::Numeric(format!(
                "total event rate diverged at t = {t}: {rates:?}"
            )));
        }
        debug_assert!(total > 0.0, "total rate vanished at {state:?}");
        let wait: f64 = rng.sample::<f64, _>(Exp1) / total;
        let t_next = t + wait;

        // grid points strictly before the next event keep the current
        // state; a grid point equal to the event time takes the
        // post-event state (right-continuity)
        while (grid_index as f64) * opts.grid_dt < t_next.min(t_end)
            || ((grid_index as f64) * opts.grid_dt <= t_end && t_next > t_end)
        {
            let tg = grid_index as f64 * opts.grid_dt;
            if tg > t_end {
                break;
            }
            if tg >= t_next && t_next <= t_end {
                break;
            }
            samples.push(ScaledSample::at(tg, &state, &sf));
            grid_index += 1;
        }

        if t_next > t_end {
            if opts.track_fluctuation {
                let g = vector_field(p, &sf.scaled(&state), state.regime);
                for j in 0..3 {
                    drift[j] += g[j] * (t_end - t);
                }
            }
            break;
        }

        if opts.track_fluctuation {
            let g = vector_field(p, &sf.scaled(&state), state.regime);
            for j in 0..3 {
                drift[j] += g[j] * wait;
            }
        }

        let u = rng.random::<f64>() * total;
        let mut cumulative = 0.0;
        let mut chosen = None;
        for (rate, channel) in rates.as_array().into_iter().zip(CHANNELS) {
            cumulative += rate;
            if u < cumulative {
                chosen = Some(channel);
                break;
            }
        }
        // rounding can leave u marginally above the accumulated total
        let channel = chosen.unwrap_or_else(|| {
            let arr = rates.as_array();
            *CHANNELS
                .iter()
                .zip(arr)
                .filter(|(_, r)| *r > 0.0)
                .map(|(c, _)| c)
                .next_back()
                .expect("positive total rate implies a positive channel")
        });

        apply_event(&mut state, channel);
        n_events += 1;
        t = t_next;
        debug_assert!(state.n1 <= state.k);
        if let Some(log) = events.as_mut() {
            log.push(EventRecord { t, channel });
        }
    }

    let fluctuation = opts.track_fluctuation.then(|| {
        let xt = sf.scaled(&state);
        [
            xt[0] - x0[0] - drift[0],
            xt[1] - x0[1] - drift[1],
            xt[2] - x0[2] - drift[2],
        ]
    });

    Ok(SsaOutput { samples, terminal: state, events, fluctuation, n_events })
}

#[derive(Clone, Debug)]
pub struct TauLeapOutput {
    pub samples: Vec<ScaledSample>,
    pub terminal: JumpState,
    pub clamped_steps: u64,
    pub total_steps: u64,
    /// Raised when more than 1% of the steps clamped a count.
    pub clamp_warning: bool,
}

fn poisson_count<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(lambda).expect("positive finite rate").sample(rng);
    draw as u64
}

/// Approximate accelerated stepper: all count channels advance by
/// Poisson increments with rates frozen over each step, the regime by
/// thinning. Counts are clamped into range and the clamping is
/// reported.
pub fn simulate_tau_leap(
    p: &ModelParams,
    init: &JumpState,
    t_end: f64,
    leap_dt: f64,
    grid_dt: f64,
    seed: u64,
) -> Result<TauLeapOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_tau_leap_with(p, init, t_end, leap_dt, grid_dt, &mut rng)
}

pub fn simulate_tau_leap_with<R: Rng>(
    p: &ModelParams,
    init: &JumpState,
    t_end: f64,
    leap_dt: f64,
    grid_dt: f64,
    rng: &mut R,
) -> Result<TauLeapOutput> {
    p.validate()?;
    if !(t_end > 0.0) || !(leap_dt > 0.0) || !(grid_dt > 0.0) {
        return Err(Error::Domain(
            "horizon, leap step and grid spacing must all be positive".into(),
        ));
    }

    let sf = ScaleFactors::new(p, init.k);
    let mut state = *init;
    let mut samples = Vec::with_capacity((t_end / grid_dt) as usize + 2);
    let mut grid_index = 0u64;
    let mut step_index = 0u64;
    let mut clamped_steps = 0u64;
    let mut total_steps = 0u64;

    loop {
        let t = step_index as f64 * leap_dt;
        if t >= t_end {
            break;
        }
        let dt = leap_dt.min(t_end - t);
        // the state is constant on [t, t + dt)
        while (grid_index as f64) * grid_dt < t + dt && (grid_index as f64) * grid_dt <= t_end {
            samples.push(ScaledSample::at(grid_index as f64 * grid_dt, &state, &sf));
            grid_index += 1;
        }

        let rates = rates_with_scales(p, &state, &sf);
        if !rates.total().is_finite() {
            return Err(Error::Numeric(format!("event rates diverged at t = {t}")));
        }
        total_steps += 1;

        let births1 = poisson_count(rng, rates.hsc_activate * dt) as i64;
        let deaths1 = poisson_count(rng, rates.hsc_deactivate * dt) as i64;
        let births2 = poisson_count(rng, rates.rbc_birth * dt) as i64;
        let deaths2 = poisson_count(rng, rates.rbc_death * dt) as i64;
        let births3 = poisson_count(rng, rates.mut_birth * dt) as i64;
        let deaths3 = poisson_count(rng, rates.mut_death * dt) as i64;

        let mut clamped = false;
        let mut clamp_range = |v: i64, hi: i64| -> u64 {
            if v < 0 {
                clamped = true;
                0
            } else if v > hi {
                clamped = true;
                hi as u64
            } else {
                v as u64
            }
        };
        state.n1 = clamp_range(state.n1 as i64 + births1 - deaths1, state.k as i64);
        state.n2 = clamp_range(state.n2 as i64 + births2 - deaths2, i64::MAX);
        state.n3 = clamp_range(state.n3 as i64 + births3 - deaths3, i64::MAX);
        if clamped {
            clamped_steps += 1;
        }

        let switch_rate = match state.regime {
            Regime::Quiescent => rates.cancer_activate,
            Regime::Active => rates.cancer_deactivate,
        };
        if switch_rate > 0.0 && rng.random::<f64>() < 1.0 - (-switch_rate * dt).exp() {
            state.regime = state.regime.flipped();
        }

        step_index += 1;
    }

    while (grid_index as f64) * grid_dt <= t_end {
        samples.push(ScaledSample::at(grid_index as f64 * grid_dt, &state, &sf));
        grid_index += 1;
    }

    let clamp_warning = total_steps > 0 && clamped_steps as f64 > 0.01 * total_steps as f64;
    Ok(TauLeapOutput { samples, terminal: state, clamped_steps, total_steps, clamp_warning })
}

/// Default initializer: integer rounding of the scaled equilibrium,
/// with the cancer regime drawn from its stationary switching law.
pub fn equilibrium_jump_state<R: Rng>(p: &ModelParams, k: u64, rng: &mut R) -> Result<JumpState> {
    let eq = solve_equilibrium(p, 1e-12)?;
    let sf = ScaleFactors::new(p, k);
    let n1 = (eq.p1 * sf.hsc).round().min(k as f64) as u64;
    let n2 = (eq.p2 * sf.rbc).round() as u64;
    let regime = if rng.random::<f64>() < telegraph_active_fraction(p) {
        Regime::Active
    } else {
        Regime::Quiescent
    };
    JumpState::new(k, n1, n2, 0, regime)
}
