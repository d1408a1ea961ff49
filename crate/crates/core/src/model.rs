//! Switching dynamic linear model of traffic flow speed.
//!
//! The hidden state is `(theta, beta)`: speed and its rate of change. A
//! discrete regime selects the evolution gain so that speed mean-reverts
//! toward the free-flow value in free flow and trends by `-beta` / `+beta`
//! during breakdown / recovery. Observations are noisy speed measurements,
//! optionally shifted by exogenous regressors.

use crate::error::{Error, Result};
use crate::math::{cholesky_in_place, forward_solve, Mat2, Vec2};
use crate::scalar::Real;

/// Traffic flow regime; the numeric codes are the trend signs on speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regime {
    Breakdown,
    FreeFlow,
    Recovery,
}

/// Regimes in canonical order (Breakdown, FreeFlow, Recovery); distribution
/// vectors and transition-matrix rows follow this order everywhere.
pub const REGIMES: [Regime; 3] = [Regime::Breakdown, Regime::FreeFlow, Regime::Recovery];

impl Regime {
    /// Numeric code: breakdown -1, free flow 0, recovery +1.
    #[inline]
    pub fn code(self) -> i8 {
        match self {
            Regime::Breakdown => -1,
            Regime::FreeFlow => 0,
            Regime::Recovery => 1,
        }
    }

    #[inline]
    pub fn from_code(code: i8) -> Option<Regime> {
        match code {
            -1 => Some(Regime::Breakdown),
            0 => Some(Regime::FreeFlow),
            1 => Some(Regime::Recovery),
            _ => None,
        }
    }

    /// Position in [`REGIMES`].
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Regime::Breakdown => 0,
            Regime::FreeFlow => 1,
            Regime::Recovery => 2,
        }
    }

    #[inline]
    pub fn from_index(i: usize) -> Option<Regime> {
        REGIMES.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Breakdown => "breakdown",
            Regime::FreeFlow => "free_flow",
            Regime::Recovery => "recovery",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "breakdown" | "-1" => Ok(Regime::Breakdown),
            "free_flow" | "freeflow" | "free-flow" | "0" => Ok(Regime::FreeFlow),
            "recovery" | "1" | "+1" => Ok(Regime::Recovery),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}

/// One value per regime, indexed in canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerRegime<T> {
    pub values: [T; 3],
}

impl<T> PerRegime<T> {
    pub fn new(breakdown: T, free_flow: T, recovery: T) -> Self {
        PerRegime {
            values: [breakdown, free_flow, recovery],
        }
    }

    pub fn uniform(value: T) -> Self
    where
        T: Clone,
    {
        PerRegime {
            values: [value.clone(), value.clone(), value],
        }
    }

    #[inline]
    pub fn get(&self, r: Regime) -> &T {
        &self.values[r.index()]
    }

    #[inline]
    pub fn get_mut(&mut self, r: Regime) -> &mut T {
        &mut self.values[r.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Regime, &T)> {
        REGIMES.iter().copied().zip(self.values.iter())
    }
}

impl<T> std::ops::Index<Regime> for PerRegime<T> {
    type Output = T;

    fn index(&self, r: Regime) -> &T {
        self.get(r)
    }
}

/// Hidden state: speed and its rate of change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVec<R> {
    /// Traffic flow speed (mi/h).
    pub theta: R,
    /// Rate of change of speed per step (mi/h per step).
    pub beta: R,
}

impl<R: Real> StateVec<R> {
    #[inline]
    pub fn new(theta: R, beta: R) -> Self {
        StateVec { theta, beta }
    }

    #[inline]
    pub fn as_vec2(self) -> Vec2<R> {
        Vec2::new(self.theta, self.beta)
    }

    #[inline]
    pub fn from_vec2(v: Vec2<R>) -> Self {
        StateVec::new(v.a, v.b)
    }
}

/// Static model parameters.
///
/// Defaults are calibrated for 5-minute freeway loop-detector speed series:
/// observation row `(1, 0)`, observation variance 4, free-flow reversion 0.5
/// toward 63 mi/h, and evolution covariance `diag(1.9, 4.5)` in every regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec<R> {
    /// Observation row vector `H` (1x2).
    pub h_row: [R; 2],
    /// Mean-reversion coefficient in free flow, `0 < f0 < 1`.
    pub f0: R,
    /// Free-flow speed (mi/h).
    pub v_free: R,
    /// Regression coefficients for exogenous observation regressors; may be empty.
    pub gamma: Vec<R>,
    /// Observation noise variance per regime, (mi/h)^2.
    pub obs_var: PerRegime<R>,
    /// Evolution noise covariance per regime.
    pub evo_cov: PerRegime<Mat2<R>>,
    /// Prior mean of the initial state.
    pub prior_mean: StateVec<R>,
    /// Prior covariance of the initial state.
    pub prior_cov: Mat2<R>,
    /// Prior distribution over the initial regime.
    pub prior_regime_probs: [R; 3],
}

impl<R: Real> Default for ModelSpec<R> {
    fn default() -> Self {
        let third = R::one() / R::cast(3.0);
        let w = Mat2::diag(R::cast(1.9), R::cast(4.5));
        ModelSpec {
            h_row: [R::one(), R::zero()],
            f0: R::cast(0.5),
            v_free: R::cast(63.0),
            gamma: Vec::new(),
            obs_var: PerRegime::uniform(R::cast(4.0)),
            evo_cov: PerRegime::uniform(w),
            prior_mean: StateVec::new(R::cast(63.0), R::zero()),
            prior_cov: Mat2::diag(R::cast(100.0), R::cast(25.0)),
            prior_regime_probs: [third, third, third],
        }
    }
}

/// Numeric slack on PSD checks.
pub const PSD_TOL: f64 = 1e-10;
/// Numeric slack on probability normalization checks.
pub const PROB_TOL: f64 = 1e-12;

impl<R: Real> ModelSpec<R> {
    /// Check every structural invariant, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > R::zero() && self.f0 < R::one()) {
            return Err(Error::InvalidSpec(format!(
                "f0 must lie strictly in (0, 1), got {}",
                self.f0
            )));
        }
        if !(self.v_free > R::zero()) {
            return Err(Error::InvalidSpec(format!(
                "v_free must be positive, got {}",
                self.v_free
            )));
        }
        for (r, v) in self.obs_var.iter() {
            if !(*v > R::zero()) {
                return Err(Error::InvalidSpec(format!(
                    "obs_var[{r}] must be positive, got {v}"
                )));
            }
        }
        let tol = R::cast(PSD_TOL);
        for (r, w) in self.evo_cov.iter() {
            if !w.is_psd(tol) {
                return Err(Error::InvalidSpec(format!(
                    "evo_cov[{r}] is not symmetric positive semidefinite"
                )));
            }
        }
        if !self.prior_cov.is_psd(tol) {
            return Err(Error::InvalidSpec(
                "prior_cov is not symmetric positive semidefinite".into(),
            ));
        }
        let mut sum = R::zero();
        for &p in &self.prior_regime_probs {
            if p < R::zero() {
                return Err(Error::InvalidSpec(format!(
                    "prior regime probability {p} is negative"
                )));
            }
            sum += p;
        }
        if (sum - R::one()).abs() > R::cast(PROB_TOL) {
            return Err(Error::InvalidSpec(format!(
                "prior regime probabilities sum to {sum}, expected 1"
            )));
        }
        for &x in &self.h_row {
            if !x.is_finite() {
                return Err(Error::InvalidSpec("h_row contains a non-finite entry".into()));
            }
        }
        for &g in &self.gamma {
            if !g.is_finite() {
                return Err(Error::InvalidSpec("gamma contains a non-finite entry".into()));
            }
        }
        Ok(())
    }

    /// Mean-reversion target `mu = (v_free, 0)`.
    #[inline]
    pub fn reversion_target(&self) -> Vec2<R> {
        Vec2::new(self.v_free, R::zero())
    }

    /// Regressor contribution `gamma^T z`.
    pub fn regressor_shift(&self, z: &[R]) -> Result<R> {
        if z.len() != self.gamma.len() {
            return Err(Error::DimensionMismatch {
                what: "regressor vector",
                expected: self.gamma.len(),
                got: z.len(),
            });
        }
        Ok(self
            .gamma
            .iter()
            .zip(z.iter())
            .map(|(&g, &x)| g * x)
            .sum())
    }
}

/// Evolution gain matrix for a regime.
///
/// Speed picks up the trend term through the regime code in the upper-right
/// entry; the rate `beta` always evolves as a random walk (bottom row `(0 1)`).
/// In free flow the diagonal carries the mean-reversion coefficient `f0`;
/// in breakdown and recovery the speed row is a pure unit gain.
#[inline]
pub fn build_gain<R: Real>(regime: Regime, spec: &ModelSpec<R>) -> Mat2<R> {
    let f = match regime {
        Regime::FreeFlow => spec.f0,
        _ => R::one(),
    };
    let alpha = R::cast(regime.code() as f64);
    Mat2::new(f, alpha, R::zero(), R::one())
}

/// Deterministic part of the state evolution: `G x + (I - G) mu`.
#[inline]
pub fn evolution_mean<R: Real>(x: StateVec<R>, regime: Regime, spec: &ModelSpec<R>) -> StateVec<R> {
    let g = build_gain(regime, spec);
    let mu = spec.reversion_target();
    let pulled = Mat2::identity().sub(g).mul_vec(mu);
    StateVec::from_vec2(g.mul_vec(x.as_vec2()).add(pulled))
}

/// Fraction of the covariance trace added as diagonal jitter before
/// factorization; near-singular predicted covariances occur after long
/// noise-free free-flow stretches.
pub const COV_JITTER: f64 = 1e-9;

/// Log density of `N(mean, cov)` at `x`, for any dimension `k >= 1`.
///
/// The covariance gets `COV_JITTER * trace / k` added to its diagonal before
/// the Cholesky factorization; a factorization failure after that signals an
/// invalid covariance upstream.
pub fn gaussian_logdensity<R: Real>(x: &[R], mean: &[R], cov: &[R]) -> Result<R> {
    let k = x.len();
    if mean.len() != k {
        return Err(Error::DimensionMismatch {
            what: "gaussian mean",
            expected: k,
            got: mean.len(),
        });
    }
    if cov.len() != k * k {
        return Err(Error::DimensionMismatch {
            what: "gaussian covariance",
            expected: k * k,
            got: cov.len(),
        });
    }
    let mut chol = cov.to_vec();
    let mut trace = R::zero();
    for i in 0..k {
        trace += cov[i * k + i];
    }
    let jitter = R::cast(COV_JITTER) * trace / R::cast(k as f64);
    for i in 0..k {
        chol[i * k + i] += jitter;
    }
    cholesky_in_place(&mut chol, k)?;

    let mut logdet = R::zero();
    for i in 0..k {
        logdet += chol[i * k + i].ln();
    }
    let mut resid: Vec<R> = x.iter().zip(mean.iter()).map(|(&a, &m)| a - m).collect();
    forward_solve(&chol, k, &mut resid);
    let quad: R = resid.iter().map(|&u| u * u).sum();
    let half = R::cast(0.5);
    Ok(-R::cast(k as f64) * half * (R::cast(2.0) * R::PI()).ln() - logdet - half * quad)
}

/// Log density of the scalar normal `N(mean, var)` at `y`.
#[inline]
pub fn normal_logpdf<R: Real>(y: R, mean: R, var: R) -> R {
    let half = R::cast(0.5);
    let d = y - mean;
    -half * ((R::cast(2.0) * R::PI() * var).ln() + d * d / var)
}
