//! Test functions for generator and weak-form diagnostics: a monomial
//! basis over state and regime, and smooth compactly supported bumps.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{InvariantBox, Regime};

/// A function of `(x, i)` that supplies its value and analytic gradient
/// in the continuous coordinates for both regimes.
pub trait TestFunction {
    fn value(&self, x: &[f64; 3], i: Regime) -> f64;
    fn gradient(&self, x: &[f64; 3], i: Regime) -> [f64; 3];
    fn label(&self) -> String;
}

/// `x1^e1 x2^e2 x3^e3`, optionally multiplied by the active-regime
/// indicator.
#[derive(Clone, Copy, Debug)]
pub struct Monomial {
    pub powers: [u32; 3],
    pub active_only: bool,
}

impl Monomial {
    pub fn plain(powers: [u32; 3]) -> Self {
        Monomial { powers, active_only: false }
    }

    pub fn active_indicator(powers: [u32; 3]) -> Self {
        Monomial { powers, active_only: true }
    }

    fn regime_factor(&self, i: Regime) -> f64 {
        if self.active_only {
            i.indicator()
        } else {
            1.0
        }
    }
}

impl TestFunction for Monomial {
    fn value(&self, x: &[f64; 3], i: Regime) -> f64 {
        let m = x[0].powi(self.powers[0] as i32)
            * x[1].powi(self.powers[1] as i32)
            * x[2].powi(self.powers[2] as i32);
        m * self.regime_factor(i)
    }

    fn gradient(&self, x: &[f64; 3], i: Regime) -> [f64; 3] {
        let f = self.regime_factor(i);
        let mut grad = [0.0; 3];
        for j in 0..3 {
            let e = self.powers[j];
            if e == 0 {
                continue;
            }
            let mut part = e as f64 * x[j].powi(e as i32 - 1);
            for k in 0..3 {
                if k != j {
                    part *= x[k].powi(self.powers[k] as i32);
                }
            }
            grad[j] = part * f;
        }
        grad
    }

    fn label(&self) -> String {
        let mut s = String::new();
        for (j, name) in ["x1", "x2", "x3"].iter().enumerate() {
            match self.powers[j] {
                0 => {}
                1 => s.push_str(name),
                e => s.push_str(&format!("{name}^{e}")),
            }
        }
        if self.active_only {
            s.push('i');
        }
        if s.is_empty() {
            s.push('1');
        }
        s
    }
}

/// The 20 built-in monomials: every `x`-monomial of degree at most two,
/// once plain and once multiplied by the regime indicator (total degree
/// at most three counting the indicator).
pub fn monomial_basis() -> Vec<Monomial> {
    let mut basis = Vec::with_capacity(20);
    for total in 0..=2u32 {
        for e1 in 0..=total {
            for e2 in 0..=(total - e1) {
                let e3 = total - e1 - e2;
                basis.push(Monomial::plain([e1, e2, e3]));
                basis.push(Monomial::active_indicator([e1, e2, e3]));
            }
        }
    }
    basis
}

/// Smooth bump `w_i * prod_j psi((x_j - c_j) / r_j)` with
/// `psi(u) = exp(-1 / (1 - u^2))` inside `|u| < 1` and zero outside.
/// The support box `[c - r, c + r]` must sit strictly inside the domain.
#[derive(Clone, Copy, Debug)]
pub struct BumpFunction {
    pub center: [f64; 3],
    pub radius: [f64; 3],
    /// Amplitude per regime.
    pub weights: [f64; 2],
}

fn psi(u: f64) -> f64 {
    if u.abs() < 1.0 {
        (-1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

fn psi_prime(u: f64) -> f64 {
    if u.abs() < 1.0 {
        let s = 1.0 - u * u;
        psi(u) * (-2.0 * u / (s * s))
    } else {
        0.0
    }
}

impl BumpFunction {
    pub fn new(
        center: [f64; 3],
        radius: [f64; 3],
        weights: [f64; 2],
        domain: &InvariantBox,
    ) -> Result<Self> {
        for j in 0..3 {
            if !(radius[j] > 0.0) {
                return Err(Error::Contract(format!(
                    "bump radius must be positive, got {} on axis {j}",
                    radius[j]
                )));
            }
            if center[j] - radius[j] <= domain.lo[j] || center[j] + radius[j] >= domain.hi[j] {
                return Err(Error::Contract(format!(
                    "bump support [{}, {}] exceeds the open box ({}, {}) on axis {j}",
                    center[j] - radius[j],
                    center[j] + radius[j],
                    domain.lo[j],
                    domain.hi[j]
                )));
            }
        }
        Ok(BumpFunction { center, radius, weights })
    }

    /// Random bump with comfortable support inside the box and regime
    /// weights bounded away from zero.
    pub fn random<R: Rng>(rng: &mut R, domain: &InvariantBox) -> Self {
        let mut center = [0.0; 3];
        let mut radius = [0.0; 3];
        for j in 0..3 {
            let half = 0.5 * domain.width(j);
            let r = half * rng.random_range(0.35..0.7);
            let margin = 1e-9 * domain.width(j);
            let lo = domain.lo[j] + r + margin;
            let hi = domain.hi[j] - r - margin;
            center[j] = rng.random_range(lo..hi);
            radius[j] = r;
        }
        let weights = loop {
            let w: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            if w[0].abs() > 0.1 || w[1].abs() > 0.1 {
                break w;
            }
        };
        BumpFunction { center, radius, weights }
    }

    pub fn support_lo(&self) -> [f64; 3] {
        [
            self.center[0] - self.radius[0],
            self.center[1] - self.radius[1],
            self.center[2] - self.radius[2],
        ]
    }

    pub fn support_hi(&self) -> [f64; 3] {
        [
            self.center[0] + self.radius[0],
            self.center[1] + self.radius[1],
            self.center[2] + self.radius[2],
        ]
    }
}

impl TestFunction for BumpFunction {
    fn value(&self, x: &[f64; 3], i: Regime) -> f64 {
        let mut v = self.weights[i.index()];
        for j in 0..3 {
            if v == 0.0 {
                return 0.0;
            }
            v *= psi((x[j] - self.center[j]) / self.radius[j]);
        }
        v
    }

    fn gradient(&self, x: &[f64; 3], i: Regime) -> [f64; 3] {
        let w = self.weights[i.index()];
        let u: Vec<f64> = (0..3)
            .map(|j| (x[j] - self.center[j]) / self.radius[j])
            .collect();
        let vals: Vec<f64> = u.iter().map(|&uj| psi(uj)).collect();
        let mut grad = [0.0; 3];
        for j in 0..3 {
            let mut gj = w * psi_prime(u[j]) / self.radius[j];
            for k in 0..3 {
                if k != j {
                    gj *= vals[k];
                }
            }
            grad[j] = gj;
        }
        grad
    }

    fn label(&self) -> String {
        format!(
            "bump(c = [{:.3}, {:.3}, {:.3}], w = [{:.2}, {:.2}])",
            self.center[0], self.center[1], self.center[2], self.weights[0], self.weights[1]
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{invariant_box, ModelParams};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_has_twenty_members_and_expected_shapes() {
        let basis = monomial_basis();
        assert_eq!(basis.len(), 20);
        assert_eq!(basis.iter().filter(|m| m.active_only).count(), 10);
        // contains the constant and the bare indicator
        assert!(basis.iter().any(|m| m.powers == [0, 0, 0] && !m.active_only));
        assert!(basis.iter().any(|m| m.powers == [0, 0, 0] && m.active_only));
        assert!(basis.iter().all(|m| m.powers.iter().sum::<u32>() <= 2));
    }

    #[test]
    fn monomial_gradient_matches_finite_differences() {
        let x = [0.4, 1.3, 0.6];
        let h = 1e-6;
        for m in monomial_basis() {
            for i in Regime::BOTH {
                let grad = m.gradient(&x, i);
                for j in 0..3 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[j] += h;
                    xm[j] -= h;
                    let fd = (m.value(&xp, i) - m.value(&xm, i)) / (2.0 * h);
                    assert_relative_eq!(grad[j], fd, epsilon = 1e-7, max_relative = 1e-7);
                }
            }
        }
    }

    #[test]
    fn bump_vanishes_outside_support_and_is_smooth_inside() {
        let b = BumpFunction {
            center: [0.4, 1.0, 0.5],
            radius: [0.05, 0.3, 0.3],
            weights: [1.0, -0.5],
        };
        assert_eq!(b.value(&[0.46, 1.0, 0.5], Regime::Quiescent), 0.0);
        assert_eq!(b.gradient(&[0.46, 1.0, 0.5], Regime::Quiescent), [0.0; 3]);
        assert!(b.value(&[0.4, 1.0, 0.5], Regime::Quiescent) > 0.0);
        assert_relative_eq!(
            b.value(&[0.4, 1.0, 0.5], Regime::Active),
            -0.5 * b.value(&[0.4, 1.0, 0.5], Regime::Quiescent)
        );

        let h = 1e-7;
        let x = [0.42, 0.9, 0.45];
        let grad = b.gradient(&x, Regime::Quiescent);
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd = (b.value(&xp, Regime::Quiescent) - b.value(&xm, Regime::Quiescent)) / (2.0 * h);
            assert_relative_eq!(grad[j], fd, epsilon = 1e-6, max_relative = 1e-5);
        }
    }

    #[test]
    fn bump_constructor_enforces_interior_support() {
        let domain = invariant_box(&ModelParams::baseline());
        assert!(BumpFunction::new([0.4, 1.0, 0.5], [0.05, 0.3, 0.3], [1.0, 1.0], &domain).is_ok());
        // support reaching the x1 face is rejected
        assert!(BumpFunction::new([0.4, 1.0, 0.5], [0.2, 0.3, 0.3], [1.0, 1.0], &domain).is_err());
        assert!(BumpFunction::new([0.4, 1.0, 0.5], [0.05, -0.1, 0.3], [1.0, 1.0], &domain).is_err());
    }

    #[test]
    fn random_bumps_stay_inside_the_box() {
        let domain = invariant_box(&ModelParams::baseline());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let b = BumpFunction::random(&mut rng, &domain);
            BumpFunction::new(b.center, b.radius, b.weights, &domain).unwrap();
        }
    }
}
