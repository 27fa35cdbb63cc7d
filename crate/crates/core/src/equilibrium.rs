//! Equilibrium of the quiescent-regime field, regime-frozen flows, and
//! sampling of accessible points by composing flows from the
//! equilibrium.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm_inf;
use crate::model::{vector_field, ModelParams, Regime};
use crate::ode::{integrate, OdeOptions};

/// Which closed-form branch applies, split on the vanishing of the
/// feedback coefficients `q2` and `c2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseTag {
    Q2Zero,
    Q2NonzeroC2Zero,
    General,
}

/// The unique zero of `g(., Quiescent)`; the mutant density is exactly
/// zero there.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPoint {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub case_tag: CaseTag,
    /// Max-norm of the quiescent field at the computed point.
    pub residual: f64,
}

impl EquilibriumPoint {
    pub fn coords(&self) -> [f64; 3] {
        [self.p1, self.p2, self.p3]
    }
}

fn healthy_rbc_root(p: &ModelParams, p1: f64) -> f64 {
    // positive root of  d c2 x^2 + d x - c1 p1 = 0
    (-p.d + (p.d * (p.d + 4.0 * p.c1 * p.c2 * p1)).sqrt()) / (2.0 * p.d * p.c2)
}

/// Fixed-point map whose unique fixed point on [0, 1] is the
/// equilibrium HSC fraction in the fully coupled case. Strictly
/// decreasing, so the bisection bracket [0, 1] always contains exactly
/// one root of `map(p1) - p1`.
pub fn general_case_map(p: &ModelParams, p1: f64) -> f64 {
    let s = (p.d * (p.d + 4.0 * p.c1 * p.c2 * p1)).sqrt() - p.d;
    2.0 * p.d * p.c2 * p.a / (2.0 * p.d * p.c2 * (p.a + p.q1) + p.q2 * s)
}

/// Solves `g(p, Quiescent) = 0` by the case-split closed forms, falling
/// back to bisection of the fixed-point equation when both feedbacks
/// are active.
pub fn solve_equilibrium(p: &ModelParams, tol: f64) -> Result<EquilibriumPoint> {
    p.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }

    let (p1, p2, case_tag) = if p.q2 == 0.0 {
        let p1 = p.a / (p.a + p.q1);
        let p2 = if p.c2 == 0.0 {
            p.c1 * p1 / p.d
        } else {
            healthy_rbc_root(p, p1)
        };
        (p1, p2, CaseTag::Q2Zero)
    } else if p.c2 == 0.0 {
        let aq = p.a + p.q1;
        let p1 = p.d / (2.0 * p.q2 * p.c1)
            * ((aq * aq + 4.0 * p.a * p.q2 * p.c1 / p.d).sqrt() - aq);
        (p1, p.c1 * p1 / p.d, CaseTag::Q2NonzeroC2Zero)
    } else {
        let target = tol.min(1e-14);
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        // map(p1) - p1 is positive at 0 and negative at 1
        let mut iterations = 0;
        while hi - lo > target {
            iterations += 1;
            if iterations > 200 {
                return Err(Error::Convergence(format!(
                    "bisection did not reach width {target} within 200 iterations"
                )));
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if general_case_map(p, mid) - mid > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p1 = 0.5 * (lo + hi);
        (p1, healthy_rbc_root(p, p1), CaseTag::General)
    };

    let residual = norm_inf(vector_field(p, &[p1, p2, 0.0], Regime::Quiescent));
    if !residual.is_finite() || residual > 10.0 * tol {
        return Err(Error::Convergence(format!(
            "equilibrium residual {residual:.3e} exceeds 10 x tolerance {tol:.3e}"
        )));
    }
    Ok(EquilibriumPoint {
        p1,
        p2,
        p3: 0.0,
        case_tag,
        residual,
    })
}

/// Solution at time `t` of the regime-frozen flow `dx/dt = g(x, i)`.
pub fn flow(p: &ModelParams, x0: [f64; 3], i: Regime, t: f64, tol: f64) -> Result<[f64; 3]> {
    if !(0.0..=1.0).contains(&x0[0]) || !(x0[1] >= 0.0) || !(x0[2] >= 0.0) {
        return Err(Error::Domain(format!("flow start outside the state space: {x0:?}")));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("flow duration must be finite and nonnegative, got {t}")));
    }
    let field = |x: &[f64; 3]| vector_field(p, x, i);
    let x = integrate(&field, 0.0, x0, t, OdeOptions::with_tolerance(tol))?;
    // the state space is invariant for the exact flow; a material exit
    // can only be an integration failure and is reported, never clamped
    if x[0] < -1e-7 || x[0] > 1.0 + 1e-7 || x[1] < -1e-7 || x[2] < -1e-7 {
        return Err(Error::Numeric(format!(
            "flow left the state space at t = {t}: {x:?}"
        )));
    }
    Ok(x)
}

/// One leg of a composed orbit: a regime held for a duration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSegment {
    pub regime: Regime,
    pub duration: f64,
}

/// Composition of regime-frozen flows, applied left to right.
pub fn orbit_compose(
    p: &ModelParams,
    x0: [f64; 3],
    segments: &[FlowSegment],
    tol: f64,
) -> Result<[f64; 3]> {
    let mut x = x0;
    for seg in segments {
        x = flow(p, x, seg.regime, seg.duration, tol)?;
    }
    Ok(x)
}

const ACCESSIBLE_SEGMENTS: usize = 6;

/// Approximate accessible points: random flow compositions started at
/// the equilibrium. All returned points lie in the closed invariant
/// box.
pub fn sample_accessible(
    p: &ModelParams,
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<Vec<[f64; 3]>> {
    if n == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
    }
    let eq = solve_equilibrium(p, 1e-12)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let segments: Vec<FlowSegment> = (0..ACCESSIBLE_SEGMENTS)
            .map(|_| FlowSegment {
                regime: if rng.random::<bool>() {
                    Regime::Active
                } else {
                    Regime::Quiescent
                },
                duration: rng.random_range(0.0..horizon),
            })
            .collect();
        points.push(orbit_compose(p, eq.coords(), &segments, 1e-9)?);
    }
    Ok(points)
}
