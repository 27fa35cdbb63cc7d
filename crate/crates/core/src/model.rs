//! Model parameters, regulation rates, limit vector fields and their
//! analytic calculus (Jacobian, Lie bracket, divergence), the invariant
//! box, and the extended generator.
//!
//! Every other module evaluates the formulas defined here; nothing else
//! re-derives them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix3;
use crate::testfn::TestFunction;

/// The 18 model constants.
///
/// `a`/`a_m` are switching rates of healthy/cancer stem cells out of the
/// quiescent state; `q*` coefficients regulate deactivation, `c*`
/// coefficients regulate division, `d`/`d_m` are death rates and
/// `alpha`/`beta` the amplification exponents between the stem-cell and
/// blood-cell compartments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a: f64,
    #[serde(rename = "a_M")]
    pub a_m: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    #[serde(rename = "q1M")]
    pub q1m: f64,
    #[serde(rename = "q2M")]
    pub q2m: f64,
    #[serde(rename = "q3M")]
    pub q3m: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    #[serde(rename = "c1M")]
    pub c1m: f64,
    #[serde(rename = "c2M")]
    pub c2m: f64,
    #[serde(rename = "c3M")]
    pub c3m: f64,
    pub d: f64,
    #[serde(rename = "dM")]
    pub d_m: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ModelParams {
    /// Checks the standing positivity assumptions: the base rates
    /// (`a`, `a_m`, `q1`, `q1m`, `c1`, `c1m`, `d`, `d_m`) must be strictly
    /// positive, the regulation coefficients nonnegative, and the
    /// amplification exponents strictly positive.
    pub fn validate(&self) -> Result<()> {
        let strictly_positive = [
            ("a", self.a),
            ("a_M", self.a_m),
            ("q1", self.q1),
            ("q1M", self.q1m),
            ("c1", self.c1),
            ("c1M", self.c1m),
            ("d", self.d),
            ("dM", self.d_m),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ];
        for (name, v) in strictly_positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "{name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        let nonnegative = [
            ("q2", self.q2),
            ("q3", self.q3),
            ("q2M", self.q2m),
            ("q3M", self.q3m),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c2M", self.c2m),
            ("c3M", self.c3m),
        ];
        for (name, v) in nonnegative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "{name} must be nonnegative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// True when the healthy compartments feel the mutant one
    /// (`c3 + q3 > 0`). Uniqueness and absolute continuity of the
    /// invariant measure are only guaranteed under this coupling.
    pub fn regulation_dependent(&self) -> bool {
        self.c3 + self.q3 > 0.0
    }

    /// Reference parameter configuration used by the docs, the bundled
    /// config file and most of the test-suite.
    pub fn baseline() -> Self {
        ModelParams {
            a: 1.0,
            a_m: 0.5,
            q1: 1.0,
            q2: 0.0,
            q3: 1.0,
            q1m: 1.0,
            q2m: 0.0,
            q3m: 0.0,
            c1: 2.0,
            c2: 0.0,
            c3: 0.0,
            c1m: 1.0,
            c2m: 0.0,
            c3m: 0.0,
            d: 1.0,
            d_m: 1.0,
            alpha: 0.5,
            beta: 0.5,
        }
    }

    /// Raw regulation rates at scaled blood-cell densities. No domain
    /// checks; used on the hot paths and by finite-difference probes.
    #[inline]
    pub fn rates(&self, x2: f64, x3: f64) -> Rates {
        Rates {
            q: self.q1 + self.q2 * x2 + self.q3 * x3,
            q_m: self.q1m + self.q2m * x2 + self.q3m * x3,
            r: self.c1 / (1.0 + self.c2 * x2 + self.c3 * x3),
            r_m: self.c1m / (1.0 + self.c2m * x2 + self.c3m * x3),
        }
    }
}

/// The four regulation rates at a given pair of blood-cell densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rates {
    /// Deactivation rate of active healthy stem cells.
    pub q: f64,
    /// Deactivation rate of the active cancer stem cell.
    pub q_m: f64,
    /// Regulated division rate of healthy stem cells.
    pub r: f64,
    /// Regulated division rate of the cancer stem cell.
    pub r_m: f64,
}

/// Checked evaluation of the four regulation rates.
pub fn rate_functions(p: &ModelParams, x2: f64, x3: f64) -> Result<Rates> {
    p.validate()?;
    if !(x2 >= 0.0) || !(x3 >= 0.0) {
        return Err(Error::Domain(format!(
            "blood-cell densities must be nonnegative, got x2 = {x2}, x3 = {x3}"
        )));
    }
    Ok(p.rates(x2, x3))
}

/// Regulation rates seen by the finite-population process: the counts
/// `n2`, `n3` are rescaled by `K^(1+alpha)` and `K^beta` first.
pub fn scaled_rate_functions(p: &ModelParams, k: u64, n2: u64, n3: u64) -> Result<Rates> {
    p.validate()?;
    if k == 0 {
        return Err(Error::Domain("population scale K must be >= 1".into()));
    }
    let kf = k as f64;
    Ok(p.rates(
        n2 as f64 / kf.powf(1.0 + p.alpha),
        n3 as f64 / kf.powf(p.beta),
    ))
}

/// Regime of the single cancer stem cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Quiescent,
    Active,
}

impl Regime {
    #[inline]
    pub fn indicator(self) -> f64 {
        match self {
            Regime::Quiescent => 0.0,
            Regime::Active => 1.0,
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Regime::Quiescent => 0,
            Regime::Active => 1,
        }
    }

    #[inline]
    pub fn flipped(self) -> Regime {
        match self {
            Regime::Quiescent => Regime::Active,
            Regime::Active => Regime::Quiescent,
        }
    }

    pub fn from_index(i: usize) -> Result<Regime> {
        match i {
            0 => Ok(Regime::Quiescent),
            1 => Ok(Regime::Active),
            _ => Err(Error::Domain(format!("regime index must be 0 or 1, got {i}"))),
        }
    }

    pub const BOTH: [Regime; 2] = [Regime::Quiescent, Regime::Active];
}

/// State of the limit process: continuous coordinates plus the regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    /// (active healthy HSC fraction, healthy RBC density, mutant RBC density)
    pub x: [f64; 3],
    pub regime: Regime,
}

impl HybridState {
    pub fn new(x: [f64; 3], regime: Regime) -> Result<Self> {
        if !(0.0..=1.0).contains(&x[0]) || !(x[1] >= 0.0) || !(x[2] >= 0.0) {
            return Err(Error::Domain(format!(
                "state outside [0,1] x R+ x R+: {x:?}"
            )));
        }
        Ok(HybridState { x, regime })
    }
}

/// Velocity of the limit dynamics at `x` under regime `i`:
/// `(a - (a + q) x1, r x1 - d x2, r_m i - d_m x3)`.
#[inline]
pub fn vector_field(p: &ModelParams, x: &[f64; 3], i: Regime) -> [f64; 3] {
    let rt = p.rates(x[1], x[2]);
    [
        p.a - (p.a + rt.q) * x[0],
        rt.r * x[0] - p.d * x[1],
        rt.r_m * i.indicator() - p.d_m * x[2],
    ]
}

/// Analytic Jacobian of `vector_field` in the continuous coordinates.
pub fn jacobian(p: &ModelParams, x: &[f64; 3], i: Regime) -> Matrix3 {
    let t = 1.0 + p.c2 * x[1] + p.c3 * x[2];
    let tm = 1.0 + p.c2m * x[1] + p.c3m * x[2];
    let q = p.q1 + p.q2 * x[1] + p.q3 * x[2];
    let ind = i.indicator();
    Matrix3([
        [-p.a - q, -p.q2 * x[0], -p.q3 * x[0]],
        [
            p.c1 / t,
            -p.c2 * p.c1 * x[0] / (t * t) - p.d,
            -p.c3 * p.c1 * x[0] / (t * t),
        ],
        [
            0.0,
            -p.c1m * p.c2m * ind / (tm * tm),
            -p.c1m * p.c3m * ind / (tm * tm) - p.d_m,
        ],
    ])
}

/// Lie bracket of the two frozen fields,
/// `Dg(.,0)(x) g(x,1) - Dg(.,1)(x) g(x,0)`.
///
/// Computed from the matrix-product definition; the first two components
/// collapse to `(-q3 x1 r_m, -c3 c1 x1 r_m / T^2)`, which the test-suite
/// cross-checks by finite differences.
pub fn lie_bracket_01(p: &ModelParams, x: &[f64; 3]) -> [f64; 3] {
    let g0 = vector_field(p, x, Regime::Quiescent);
    let g1 = vector_field(p, x, Regime::Active);
    let d0 = jacobian(p, x, Regime::Quiescent);
    let d1 = jacobian(p, x, Regime::Active);
    let lhs = d0.mul_vec(g1);
    let rhs = d1.mul_vec(g0);
    [lhs[0] - rhs[0], lhs[1] - rhs[1], lhs[2] - rhs[2]]
}

/// Numerical rank of `[g(x,0) | g(x,1) | [g(.,0),g(.,1)](x)]`.
///
/// Rank 3 at an accessible point is the bracket-spanning condition that
/// yields uniqueness and absolute continuity of the invariant measure.
pub fn hormander_rank(p: &ModelParams, x: &[f64; 3], rel_tol: f64) -> usize {
    let m = Matrix3::from_columns(
        vector_field(p, x, Regime::Quiescent),
        vector_field(p, x, Regime::Active),
        lie_bracket_01(p, x),
    );
    m.numerical_rank(rel_tol)
}

/// Default relative tolerance for the rank decision.
pub const RANK_TOL: f64 = 1e-8;

/// Divergence of the planar field `(g1, g2)` restricted to `x3 = 0`,
/// regime 0: `-(a + q1 + q2 x2) - c1 c2 x1 / (1 + c2 x2)^2 - d`.
/// Strictly negative for valid parameters, which rules out periodic
/// orbits of the planar flow.
pub fn divergence_2d(p: &ModelParams, x1: f64, x2: f64) -> f64 {
    let t = 1.0 + p.c2 * x2;
    -(p.a + p.q1 + p.q2 * x2) - p.c1 * p.c2 * x1 / (t * t) - p.d
}

/// The compact box that both frozen flows keep positively invariant and
/// that absorbs every trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl InvariantBox {
    pub fn contains(&self, x: &[f64; 3]) -> bool {
        self.contains_inflated(x, 0.0)
    }

    /// Containment with every face pushed outward by `slack`.
    pub fn contains_inflated(&self, x: &[f64; 3], slack: f64) -> bool {
        (0..3).all(|j| x[j] >= self.lo[j] - slack && x[j] <= self.hi[j] + slack)
    }

    pub fn width(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
            0.5 * (self.lo[2] + self.hi[2]),
        ]
    }

    pub fn volume(&self) -> f64 {
        self.width(0) * self.width(1) * self.width(2)
    }
}

/// Bounds of the invariant box.
///
/// The lower healthy-RBC bound uses the proof-consistent denominator
/// `d (1 + c2 c1/d + c3 c1M/dM)`, which stays finite when `c2 = c3 = 0`.
pub fn invariant_box(p: &ModelParams) -> InvariantBox {
    let hi2 = p.c1 / p.d;
    let hi3 = p.c1m / p.d_m;
    let lo1 = p.a / (p.a + p.q1 + p.q2 * hi2 + p.q3 * hi3);
    let hi1 = p.a / (p.a + p.q1);
    let lo2 = p.c1 * lo1 / (p.d * (1.0 + p.c2 * hi2 + p.c3 * hi3));
    InvariantBox {
        lo: [lo1, lo2, 0.0],
        hi: [hi1, hi2, hi3],
    }
}

/// Stationary probability of the active regime for the two-state
/// switching process, `a_M / (a_M + q1M)`. Exact for the model when
/// `q2M = q3M = 0`, where the cancer-cell switching decouples.
pub fn telegraph_active_fraction(p: &ModelParams) -> f64 {
    p.a_m / (p.a_m + p.q1m)
}

/// Extended generator applied to a test function at `(x, i)`:
/// transport along `g(., i)` plus the two switching terms.
pub fn generator_apply<F: TestFunction + ?Sized>(
    p: &ModelParams,
    f: &F,
    x: &[f64; 3],
    i: Regime,
) -> f64 {
    let g = vector_field(p, x, i);
    let grad = f.gradient(x, i);
    let transport = grad[0] * g[0] + grad[1] * g[1] + grad[2] * g[2];
    let f0 = f.value(x, Regime::Quiescent);
    let f1 = f.value(x, Regime::Active);
    let q_m = p.rates(x[1], x[2]).q_m;
    let jump = match i {
        Regime::Quiescent => p.a_m * (f1 - f0),
        Regime::Active => q_m * (f0 - f1),
    };
    transport + jump
}
