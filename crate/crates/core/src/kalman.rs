//! Regime-conditional Kalman recursions.
//!
//! Conditional on a regime path, the model is linear-Gaussian, so the state
//! posterior stays Gaussian with moments `(m, C)`. These recursions propagate
//! those moments one observation at a time and expose the closed-form
//! predictive likelihood the particle filter weights with.

use crate::error::Result;
use crate::math::{logsumexp, Mat2, Vec2};
use crate::model::{build_gain, normal_logpdf, ModelSpec, Regime, StateVec, REGIMES};
use crate::regime::{ExogenousFeatures, RegimeKernel};
use crate::scalar::Real;

/// Conditional sufficient statistics of the Gaussian state: posterior mean
/// and covariance given the observations and a regime path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanStats<R> {
    pub mean: StateVec<R>,
    pub cov: Mat2<R>,
}

impl<R: Real> KalmanStats<R> {
    pub fn new(mean: StateVec<R>, cov: Mat2<R>) -> Self {
        KalmanStats { mean, cov }
    }

    /// Prior moments from the model spec.
    pub fn from_prior(spec: &ModelSpec<R>) -> Self {
        KalmanStats::new(spec.prior_mean, spec.prior_cov)
    }
}

/// One-step-ahead moments under a candidate regime: predicted state mean and
/// covariance plus the scalar observation predictive `N(obs_mean, obs_var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<R> {
    pub state_mean: StateVec<R>,
    pub state_cov: Mat2<R>,
    pub obs_mean: R,
    pub obs_var: R,
}

#[inline]
fn h_vec<R: Real>(spec: &ModelSpec<R>) -> Vec2<R> {
    Vec2::new(spec.h_row[0], spec.h_row[1])
}

/// Prediction with an explicit regressor shift and observation variance.
///
/// The particle-learning path substitutes per-particle parameter draws here;
/// the plain [`predict`] wrapper pulls both from the spec.
pub fn predict_with<R: Real>(
    stats: &KalmanStats<R>,
    regime: Regime,
    shift: R,
    obs_var: R,
    spec: &ModelSpec<R>,
) -> Prediction<R> {
    let g = build_gain(regime, spec);
    let pulled = Mat2::identity().sub(g).mul_vec(spec.reversion_target());
    let state_mean = g.mul_vec(stats.mean.as_vec2()).add(pulled);
    let state_cov = g
        .mul(stats.cov)
        .mul(g.transpose())
        .add(*spec.evo_cov.get(regime))
        .symmetrize();
    let h = h_vec(spec);
    let obs_mean = h.dot(state_mean) + shift;
    let obs_var = obs_var + h.dot(state_cov.mul_vec(h));
    Prediction {
        state_mean: StateVec::from_vec2(state_mean),
        state_cov,
        obs_mean,
        obs_var,
    }
}

/// One-step prediction under `regime` with regressors `z`.
pub fn predict<R: Real>(
    stats: &KalmanStats<R>,
    regime: Regime,
    z: &[R],
    spec: &ModelSpec<R>,
) -> Result<Prediction<R>> {
    let shift = spec.regressor_shift(z)?;
    Ok(predict_with(stats, regime, shift, *spec.obs_var.get(regime), spec))
}

/// Measurement update with an explicit observation variance.
///
/// Uses the Joseph-form covariance update, which stays PSD under round-off
/// where `(I - K H) Cf` does not; the two agree in exact arithmetic.
pub fn update_with<R: Real>(
    pred: &Prediction<R>,
    y: R,
    obs_var: R,
    spec: &ModelSpec<R>,
) -> KalmanStats<R> {
    let h = h_vec(spec);
    let cf = pred.state_cov;
    let s = pred.obs_var;
    let gain = cf.mul_vec(h).scale(R::one() / s);
    let mean = pred.state_mean.as_vec2().add(gain.scale(y - pred.obs_mean));
    let a = Mat2::identity().sub(gain.outer(h));
    let cov = a
        .mul(cf)
        .mul(a.transpose())
        .add(gain.outer(gain).scale(obs_var))
        .symmetrize();
    KalmanStats::new(StateVec::from_vec2(mean), cov)
}

/// Measurement update of a prediction with the observed speed `y`.
pub fn update<R: Real>(
    pred: &Prediction<R>,
    y: R,
    regime: Regime,
    spec: &ModelSpec<R>,
) -> KalmanStats<R> {
    update_with(pred, y, *spec.obs_var.get(regime), spec)
}

/// Full predict-then-update step under one regime: the recursion the particle
/// filter applies per particle.
pub fn step<R: Real>(
    stats: &KalmanStats<R>,
    regime: Regime,
    z: &[R],
    y: R,
    spec: &ModelSpec<R>,
) -> Result<KalmanStats<R>> {
    let pred = predict(stats, regime, z, spec)?;
    Ok(update(&pred, y, regime, spec))
}

/// Log predictive likelihood `log p(y | regime, stats)` with the state
/// marginalized out.
pub fn predictive_loglik<R: Real>(
    stats: &KalmanStats<R>,
    regime: Regime,
    z: &[R],
    y: R,
    spec: &ModelSpec<R>,
) -> Result<R> {
    let pred = predict(stats, regime, z, spec)?;
    Ok(normal_logpdf(y, pred.obs_mean, pred.obs_var))
}

/// Log predictive likelihood with the next regime marginalized over the
/// transition kernel: a three-component Gaussian mixture, evaluated in log
/// space.
pub fn mixture_predictive_loglik<R: Real>(
    stats: &KalmanStats<R>,
    current: Regime,
    feats: &ExogenousFeatures<R>,
    kernel: &RegimeKernel<R>,
    z: &[R],
    y: R,
    spec: &ModelSpec<R>,
) -> Result<R> {
    let row = kernel.transition_probs(current, feats)?;
    let shift = spec.regressor_shift(z)?;
    let mut terms = [R::neg_infinity(); 3];
    for (i, r) in REGIMES.iter().enumerate() {
        if row[i] > R::zero() {
            let pred = predict_with(stats, *r, shift, *spec.obs_var.get(*r), spec);
            terms[i] = row[i].ln() + normal_logpdf(y, pred.obs_mean, pred.obs_var);
        }
    }
    Ok(logsumexp(&terms))
}
