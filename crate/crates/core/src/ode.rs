//! Embedded Dormand-Prince 5(4) stepper with adaptive step control and
//! cubic Hermite interpolation on accepted steps.
//!
//! The fields integrated here are smooth and bounded on the invariant
//! box, so a single explicit pair with FSAL reuse covers every flow in
//! the crate, including the hazard-augmented one used for switching.

use crate::error::{Error, Result};

// Dormand-Prince RK5(4)7M tableau. The fields here are autonomous, so
// the stage abscissae are not needed.
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 5.0;

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
}

impl OdeOptions {
    /// Relative tolerance `tol`, absolute tolerance `tol * 1e-3`.
    pub fn with_tolerance(tol: f64) -> Self {
        OdeOptions {
            rtol: tol,
            atol: tol * 1e-3,
            h_max: f64::INFINITY,
        }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions::with_tolerance(1e-9)
    }
}

/// One accepted step with the endpoint derivatives needed for
/// interpolation.
#[derive(Clone, Copy, Debug)]
pub struct StepRecord<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: [f64; N],
    pub f0: [f64; N],
    pub y1: [f64; N],
    pub f1: [f64; N],
}

impl<const N: usize> StepRecord<N> {
    /// Cubic Hermite interpolation inside the step.
    pub fn interpolate(&self, t: f64) -> [f64; N] {
        hermite(self.t0, &self.y0, &self.f0, self.t1, &self.y1, &self.f1, t)
    }
}

/// Cubic Hermite interpolation between two nodes with known derivatives.
pub fn hermite<const N: usize>(
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    t1: f64,
    y1: &[f64; N],
    f1: &[f64; N],
    t: f64,
) -> [f64; N] {
    let h = t1 - t0;
    if h == 0.0 {
        return *y1;
    }
    let th = (t - t0) / h;
    let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
    let h10 = th * (1.0 - th) * (1.0 - th);
    let h01 = th * th * (3.0 - 2.0 * th);
    let h11 = th * th * (th - 1.0);
    let mut out = [0.0; N];
    for j in 0..N {
        out[j] = h00 * y0[j] + h10 * h * f0[j] + h01 * y1[j] + h11 * h * f1[j];
    }
    out
}

/// Adaptive stepper owning the current node state.
pub struct Stepper<'a, F, const N: usize>
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    field: &'a F,
    opts: OdeOptions,
    t: f64,
    y: [f64; N],
    dy: [f64; N],
    h: f64,
}

impl<'a, F, const N: usize> Stepper<'a, F, N>
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    pub fn new(field: &'a F, t0: f64, y0: [f64; N], opts: OdeOptions) -> Self {
        let dy = field(&y0);
        let h = initial_step(&y0, &dy, &opts);
        Stepper {
            field,
            opts,
            t: t0,
            y: y0,
            dy,
            h,
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[f64; N] {
        &self.y
    }

    /// Reuse the step size reached by a previous stepper on the same
    /// kind of flow; avoids re-ramping after a regime switch.
    pub fn suggest_step(&mut self, h: f64) {
        if h.is_finite() && h > 0.0 {
            self.h = h.min(self.opts.h_max);
        }
    }

    pub fn current_step(&self) -> f64 {
        self.h
    }

    /// Advances by one accepted step, never past `t_limit`.
    pub fn step_toward(&mut self, t_limit: f64) -> Result<StepRecord<N>> {
        debug_assert!(t_limit > self.t);
        let mut h = self.h.min(self.opts.h_max);
        loop {
            let clipped = h >= t_limit - self.t;
            if clipped {
                h = t_limit - self.t;
            }
            if h < 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::Stiffness { t: self.t });
            }

            let mut k = [[0.0; N]; 7];
            k[0] = self.dy;
            for s in 1..7 {
                let mut ys = self.y;
                for j in 0..s {
                    let a = A[s][j];
                    if a != 0.0 {
                        for n in 0..N {
                            ys[n] += h * a * k[j][n];
                        }
                    }
                }
                k[s] = (self.field)(&ys);
            }
            // 7th stage is evaluated at the 5th-order solution (FSAL)
            let mut y1 = self.y;
            for j in 0..6 {
                let a = A[6][j];
                if a != 0.0 {
                    for n in 0..N {
                        y1[n] += h * a * k[j][n];
                    }
                }
            }
            let f1 = (self.field)(&y1);
            k[6] = f1;

            let mut err_sq = 0.0;
            for n in 0..N {
                let mut e = 0.0;
                for j in 0..7 {
                    e += E[j] * k[j][n];
                }
                e *= h;
                let sc = self.opts.atol + self.opts.rtol * self.y[n].abs().max(y1[n].abs());
                err_sq += (e / sc) * (e / sc);
            }
            let err = (err_sq / N as f64).sqrt();

            if err <= 1.0 {
                // land exactly on the limit when the step was clipped,
                // so callers can rely on reaching their target time
                let t1 = if clipped { t_limit } else { self.t + h };
                let record = StepRecord {
                    t0: self.t,
                    t1,
                    y0: self.y,
                    f0: self.dy,
                    y1,
                    f1,
                };
                self.t = t1;
                self.y = y1;
                self.dy = f1;
                let scale = if err == 0.0 {
                    MAX_SCALE
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_SCALE, MAX_SCALE)
                };
                self.h = (h * scale).min(self.opts.h_max);
                return Ok(record);
            }

            let scale = if err.is_finite() {
                (SAFETY * err.powf(-0.2)).clamp(MIN_SCALE, 1.0)
            } else {
                MIN_SCALE
            };
            h *= scale;
        }
    }

    /// Integrates up to `t_end` exactly, discarding intermediate steps.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        self.advance_to_with(t_end, |_| {})
    }

    /// Integrates up to `t_end`, handing every accepted step to `sink`.
    pub fn advance_to_with<S: FnMut(&StepRecord<N>)>(
        &mut self,
        t_end: f64,
        mut sink: S,
    ) -> Result<()> {
        while self.t < t_end {
            let rec = self.step_toward(t_end)?;
            sink(&rec);
            if rec.t1 >= t_end {
                break;
            }
        }
        Ok(())
    }
}

fn initial_step<const N: usize>(y0: &[f64; N], dy0: &[f64; N], opts: &OdeOptions) -> f64 {
    let mut y_scale = 0.0_f64;
    let mut f_scale = 0.0_f64;
    for n in 0..N {
        y_scale = y_scale.max(y0[n].abs());
        f_scale = f_scale.max(dy0[n].abs());
    }
    let h = 0.01 * (y_scale + 1.0) / (f_scale + 1e-6);
    h.clamp(1e-8, 0.1).min(opts.h_max)
}

/// Convenience wrapper: solution at `t_end` of `y' = field(y)`,
/// `y(t0) = y0`.
pub fn integrate<F, const N: usize>(
    field: &F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: OdeOptions,
) -> Result<[f64; N]>
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    if t_end < t0 {
        return Err(Error::Domain(format!(
            "cannot integrate backwards: t_end = {t_end} < t0 = {t0}"
        )));
    }
    if t_end == t0 {
        return Ok(y0);
    }
    let mut stepper = Stepper::new(field, t0, y0, opts);
    stepper.advance_to(t_end)?;
    Ok(*stepper.state())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_decay_to_high_accuracy() {
        let field = |y: &[f64; 1]| [-y[0]];
        let y = integrate(&field, 0.0, [1.0], 1.0, OdeOptions::default()).unwrap();
        assert_relative_eq!(y[0], (-1.0_f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn relaxation_toward_unit_level() {
        // x' = 1 - x from 0: x(1) = 1 - e^{-1}
        let field = |y: &[f64; 1]| [1.0 - y[0]];
        let y = integrate(&field, 0.0, [0.0], 1.0, OdeOptions::default()).unwrap();
        assert_relative_eq!(y[0], 1.0 - (-1.0_f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn harmonic_oscillator_period() {
        let field = |y: &[f64; 2]| [y[1], -y[0]];
        let y = integrate(
            &field,
            0.0,
            [1.0, 0.0],
            2.0 * std::f64::consts::PI,
            OdeOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(y[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(y[1], 0.0, epsilon = 1e-7);
    }

    #[test]
    fn dense_output_tracks_the_solution() {
        let field = |y: &[f64; 1]| [-2.0 * y[0]];
        let mut stepper = Stepper::new(&field, 0.0, [1.0], OdeOptions::with_tolerance(1e-9));
        let mut records = Vec::new();
        stepper.advance_to_with(2.0, |rec| records.push(*rec)).unwrap();
        assert!(records.len() > 3);
        for rec in &records {
            let tm = 0.5 * (rec.t0 + rec.t1);
            let interp = rec.interpolate(tm)[0];
            assert_relative_eq!(interp, (-2.0 * tm).exp(), epsilon = 1e-6);
            assert_eq!(rec.interpolate(rec.t0)[0], rec.y0[0]);
            assert_eq!(rec.interpolate(rec.t1)[0], rec.y1[0]);
        }
    }

    #[test]
    fn zero_duration_is_identity() {
        let field = |y: &[f64; 1]| [y[0]];
        let y = integrate(&field, 0.0, [0.7], 0.0, OdeOptions::default()).unwrap();
        assert_eq!(y[0], 0.7);
    }
}
