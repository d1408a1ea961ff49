//! Resample–propagate particle filter with Rao-Blackwellized states.
//!
//! Each particle carries a regime and the Kalman moments of the Gaussian
//! state conditional on that particle's regime path. A step resamples
//! ancestors by the marginal (regime-mixture) predictive likelihood of the
//! incoming observation, propagates each ancestor's regime, and applies the
//! Kalman recursion under the drawn regime.
//!
//! Two propagation modes are provided. `Adapted` (the default) draws the new
//! regime from its exact conditional posterior given the observation and
//! leaves weights uniform — the fully adapted filter. `Prior` draws the
//! regime from the transition kernel alone and corrects by importance
//! weights; both modes target the same posterior.
//!
//! All randomness derives from one root seed through [`crate::rng`]
//! substreams keyed by step, particle and purpose, so results are
//! bit-reproducible and independent of the number of worker threads.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kalman::{predict_with, update_with, KalmanStats, Prediction};
use crate::learning::{draw_parameters, update_suffstats, LearnConfig, ParticleLearn};
use crate::math::{logsumexp, normal_cdf};
use crate::model::{normal_logpdf, ModelSpec, Regime, StateVec, REGIMES};
use crate::regime::{sample_index, ExogenousFeatures, RegimeKernel};
use crate::rng::{substream, Purpose};
use crate::scalar::Real;

/// How the regime draw in the propagate step is proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PropagationMode {
    /// Conditional posterior given the new observation; weights stay uniform.
    #[default]
    Adapted,
    /// Transition kernel alone, corrected by importance weights.
    Prior,
}

impl std::str::FromStr for PropagationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adapted" => Ok(PropagationMode::Adapted),
            "prior" => Ok(PropagationMode::Prior),
            other => Err(format!("unknown propagation mode `{other}`")),
        }
    }
}

/// Ancestor-selection scheme. Multinomial matches the algorithm as stated;
/// systematic is a lower-variance alternative, never the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResamplingScheme {
    #[default]
    Multinomial,
    Systematic,
}

/// Filter run configuration.
#[derive(Debug, Clone)]
pub struct FilterConfig<R> {
    pub particles: usize,
    pub seed: u64,
    pub mode: PropagationMode,
    pub resampling: ResamplingScheme,
    pub learning: Option<LearnConfig<R>>,
}

impl<R: Real> FilterConfig<R> {
    pub fn new(particles: usize, seed: u64) -> Self {
        FilterConfig {
            particles,
            seed,
            mode: PropagationMode::default(),
            resampling: ResamplingScheme::default(),
            learning: None,
        }
    }

    pub fn with_mode(mut self, mode: PropagationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_learning(mut self, learning: LearnConfig<R>) -> Self {
        self.learning = Some(learning);
        self
    }
}

/// One particle: a regime, the Kalman moments of the state conditional on
/// the particle's regime path, optional learning state, and a weight.
#[derive(Debug, Clone)]
pub struct Particle<R> {
    pub regime: Regime,
    pub stats: KalmanStats<R>,
    pub learn: Option<ParticleLearn<R>>,
    pub weight: R,
}

/// Weighted posterior summary emitted after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary<R> {
    pub t: usize,
    pub mean_speed: R,
    pub mean_rate: R,
    /// (5%, 50%, 95%) quantiles of the speed mixture.
    pub speed_quantiles: [R; 3],
    /// `P(regime = r | data)` in canonical order.
    pub regime_probs: [R; 3],
    /// Effective sample size `1 / sum(w^2)`.
    pub ess: R,
}

/// Sequential filter state over a stream of observations.
#[derive(Debug, Clone)]
pub struct FilterState<R> {
    spec: ModelSpec<R>,
    kernel: RegimeKernel<R>,
    cfg: FilterConfig<R>,
    t: usize,
    particles: Vec<Particle<R>>,
    log_marginal_lik: R,
}

/// Per-particle evaluation of the incoming observation under each candidate
/// regime.
struct Eval<R> {
    row: [R; 3],
    loglik: [R; 3],
    preds: [Prediction<R>; 3],
    log_mix: R,
}

impl<R: Real> FilterState<R> {
    /// Initialize `cfg.particles` particles from the prior: regimes drawn
    /// from the prior regime distribution, Gaussian moments at the prior,
    /// uniform weights.
    pub fn init(spec: ModelSpec<R>, kernel: RegimeKernel<R>, cfg: FilterConfig<R>) -> Result<Self> {
        spec.validate()?;
        if cfg.particles == 0 {
            return Err(Error::InvalidSpec("particle count must be at least 1".into()));
        }
        if let Some(learning) = &cfg.learning {
            learning.validate(&spec)?;
        }
        let n = cfg.particles;
        let weight = R::one() / R::cast(n as f64);
        let stats = KalmanStats::from_prior(&spec);
        let particles: Vec<Particle<R>> = (0..n)
            .map(|i| {
                let mut rng = substream(cfg.seed, 0, i as u64, Purpose::Init);
                let regime = sample_index(&spec.prior_regime_probs, &mut rng);
                let learn = cfg.learning.as_ref().map(|lc| {
                    let suff = lc.empty_suffstats(&spec);
                    let mut prng = substream(cfg.seed, 0, i as u64, Purpose::ParamDraw);
                    let draw = draw_parameters(&suff, lc, &spec, &mut prng);
                    ParticleLearn { suff, draw }
                });
                Particle {
                    regime,
                    stats,
                    learn,
                    weight,
                }
            })
            .collect();
        Ok(FilterState {
            spec,
            kernel,
            cfg,
            t: 0,
            particles,
            log_marginal_lik: R::zero(),
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn particles(&self) -> &[Particle<R>] {
        &self.particles
    }

    pub fn spec(&self) -> &ModelSpec<R> {
        &self.spec
    }

    pub fn config(&self) -> &FilterConfig<R> {
        &self.cfg
    }

    /// Accumulated `sum_t log p(y_t | y_{1:t-1})`.
    pub fn log_marginal_lik(&self) -> R {
        self.log_marginal_lik
    }

    /// Assimilate the next observation. A missing observation performs a
    /// predict-only step: regimes propagate from the kernel, moments evolve
    /// without a measurement update, and weights are untouched.
    pub fn step(
        &mut self,
        y: Option<R>,
        z: &[R],
        feats: &ExogenousFeatures<R>,
    ) -> Result<PosteriorSummary<R>> {
        if z.len() != self.spec.gamma.len() {
            return Err(Error::DimensionMismatch {
                what: "regressor vector",
                expected: self.spec.gamma.len(),
                got: z.len(),
            });
        }
        let step_idx = self.t + 1;
        match y {
            Some(y) => self.step_observed(step_idx, y, z, feats)?,
            None => self.step_missing(step_idx, z, feats)?,
        }
        self.t = step_idx;
        Ok(self.summarize())
    }

    fn step_observed(
        &mut self,
        step_idx: usize,
        y: R,
        z: &[R],
        feats: &ExogenousFeatures<R>,
    ) -> Result<()> {
        let spec = &self.spec;
        let kernel = &self.kernel;

        let evals: Vec<Eval<R>> = self
            .particles
            .par_iter()
            .map(|p| -> Result<Eval<R>> {
                let row = kernel.transition_probs(p.regime, feats)?;
                let (obs_var, gamma) = effective_params(p, spec);
                let shift = dot(gamma, z);
                let mut loglik = [R::neg_infinity(); 3];
                let mut preds = [Prediction {
                    state_mean: StateVec::new(R::zero(), R::zero()),
                    state_cov: crate::math::Mat2::zero(),
                    obs_mean: R::zero(),
                    obs_var: R::one(),
                }; 3];
                let mut terms = [R::neg_infinity(); 3];
                for (ri, r) in REGIMES.iter().enumerate() {
                    let pred = predict_with(&p.stats, *r, shift, obs_var[ri], spec);
                    loglik[ri] = normal_logpdf(y, pred.obs_mean, pred.obs_var);
                    preds[ri] = pred;
                    if row[ri] > R::zero() {
                        terms[ri] = row[ri].ln() + loglik[ri];
                    }
                }
                Ok(Eval {
                    row,
                    loglik,
                    preds,
                    log_mix: logsumexp(&terms),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        // resampling weights: prior weight times marginal predictive
        let log_w: Vec<R> = self
            .particles
            .iter()
            .zip(evals.iter())
            .map(|(p, e)| p.weight.ln() + e.log_mix)
            .collect();
        let log_total = logsumexp(&log_w);
        if log_total == R::neg_infinity() {
            return Err(Error::AllWeightsZero {
                step: step_idx,
                y: y.to_f64_lossy(),
            });
        }
        let probs: Vec<R> = log_w.iter().map(|&lw| (lw - log_total).exp()).collect();
        self.log_marginal_lik += log_total;

        let mut resample_rng = substream(self.cfg.seed, step_idx as u64, 0, Purpose::Resample);
        let ancestors = match self.cfg.resampling {
            ResamplingScheme::Multinomial => {
                multinomial_indices(&probs, self.particles.len(), &mut resample_rng)
            }
            ResamplingScheme::Systematic => {
                systematic_indices(&probs, self.particles.len(), &mut resample_rng)
            }
        };

        let mode = self.cfg.mode;
        let seed = self.cfg.seed;
        let learning = self.cfg.learning.as_ref();
        let particles = &self.particles;
        let step64 = step_idx as u64;

        // (new particle, log importance weight in prior mode)
        let propagated: Vec<(Particle<R>, R)> = ancestors
            .par_iter()
            .enumerate()
            .map(|(j, &a)| {
                let parent = &particles[a];
                let eval = &evals[a];
                let mut rng = substream(seed, step64, j as u64, Purpose::RegimeDraw);
                let (regime, log_iw) = match mode {
                    PropagationMode::Adapted => {
                        // conditional posterior of the next regime given y
                        let mut cond = [R::zero(); 3];
                        for ri in 0..3 {
                            if eval.row[ri] > R::zero() {
                                cond[ri] =
                                    (eval.row[ri].ln() + eval.loglik[ri] - eval.log_mix).exp();
                            }
                        }
                        normalize3(&mut cond);
                        (sample_index(&cond, &mut rng), R::zero())
                    }
                    PropagationMode::Prior => {
                        let regime = sample_index(&eval.row, &mut rng);
                        let lw = eval.loglik[regime.index()] - eval.log_mix;
                        (regime, lw)
                    }
                };

                let (obs_var, _) = effective_params(parent, &self.spec);
                let stats = update_with(
                    &eval.preds[regime.index()],
                    y,
                    obs_var[regime.index()],
                    &self.spec,
                );

                let learn = match (&parent.learn, learning) {
                    (Some(pl), Some(lc)) => {
                        let mut srng = substream(seed, step64, j as u64, Purpose::StateDraw);
                        let x = sample_state(&stats, &mut srng);
                        let suff = update_suffstats(
                            &pl.suff,
                            x,
                            regime,
                            y,
                            z,
                            &pl.draw.gamma,
                            &self.spec,
                        );
                        let mut prng = substream(seed, step64, j as u64, Purpose::ParamDraw);
                        let draw = draw_parameters(&suff, lc, &self.spec, &mut prng);
                        Some(ParticleLearn { suff, draw })
                    }
                    _ => None,
                };

                (
                    Particle {
                        regime,
                        stats,
                        learn,
                        weight: R::zero(),
                    },
                    log_iw,
                )
            })
            .collect();

        let n = propagated.len();
        let mut new_particles: Vec<Particle<R>> = Vec::with_capacity(n);
        match mode {
            PropagationMode::Adapted => {
                let w = R::one() / R::cast(n as f64);
                for (mut p, _) in propagated {
                    p.weight = w;
                    new_particles.push(p);
                }
            }
            PropagationMode::Prior => {
                let log_iw: Vec<R> = propagated.iter().map(|&(_, lw)| lw).collect();
                let total = logsumexp(&log_iw);
                if total == R::neg_infinity() {
                    return Err(Error::AllWeightsZero {
                        step: step_idx,
                        y: y.to_f64_lossy(),
                    });
                }
                for (mut p, lw) in propagated {
                    p.weight = (lw - total).exp();
                    new_particles.push(p);
                }
            }
        }
        self.particles = new_particles;
        Ok(())
    }

    fn step_missing(
        &mut self,
        step_idx: usize,
        _z: &[R],
        feats: &ExogenousFeatures<R>,
    ) -> Result<()> {
        let kernel = &self.kernel;
        let spec = &self.spec;
        let seed = self.cfg.seed;
        let step64 = step_idx as u64;
        let updated: Vec<Particle<R>> = self
            .particles
            .par_iter()
            .enumerate()
            .map(|(i, p)| -> Result<Particle<R>> {
                let row = kernel.transition_probs(p.regime, feats)?;
                let mut rng = substream(seed, step64, i as u64, Purpose::RegimeDraw);
                let regime = sample_index(&row, &mut rng);
                let (obs_var, _) = effective_params(p, spec);
                let pred = predict_with(&p.stats, regime, R::zero(), obs_var[regime.index()], spec);
                Ok(Particle {
                    regime,
                    stats: KalmanStats::new(pred.state_mean, pred.state_cov),
                    learn: p.learn.clone(),
                    weight: p.weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.particles = updated;
        Ok(())
    }

    /// Posterior summary of the current particle set.
    pub fn summarize(&self) -> PosteriorSummary<R> {
        let mut regime_probs = [R::zero(); 3];
        let mut mean_speed = R::zero();
        let mut mean_rate = R::zero();
        let mut sum_sq = R::zero();
        for p in &self.particles {
            regime_probs[p.regime.index()] += p.weight;
            mean_speed += p.weight * p.stats.mean.theta;
            mean_rate += p.weight * p.stats.mean.beta;
            sum_sq += p.weight * p.weight;
        }
        let ess = if sum_sq > R::zero() {
            R::one() / sum_sq
        } else {
            R::zero()
        };

        let comps: Vec<(R, R, R)> = self
            .particles
            .iter()
            .map(|p| {
                (
                    p.weight,
                    p.stats.mean.theta,
                    p.stats.cov.m[0][0].max(R::zero()).sqrt(),
                )
            })
            .collect();
        let speed_quantiles = [
            mixture_quantile(&comps, R::cast(0.05)),
            mixture_quantile(&comps, R::cast(0.5)),
            mixture_quantile(&comps, R::cast(0.95)),
        ];

        PosteriorSummary {
            t: self.t,
            mean_speed,
            mean_rate,
            speed_quantiles,
            regime_probs,
            ess,
        }
    }

    /// Draw joint state samples from the particle mixture: pick a particle by
    /// weight, then draw from its Gaussian moments.
    pub fn sample_states<G: Rng + ?Sized>(&self, n_draws: usize, rng: &mut G) -> Vec<StateVec<R>> {
        let mut cdf = Vec::with_capacity(self.particles.len());
        let mut acc = R::zero();
        for p in &self.particles {
            acc += p.weight;
            cdf.push(acc);
        }
        (0..n_draws)
            .map(|_| {
                let u = R::sample_unit(rng) * acc;
                let idx = match cdf.binary_search_by(|c| {
                    c.partial_cmp(&u).unwrap_or(std::cmp::Ordering::Equal)
                }) {
                    Ok(i) => i,
                    Err(i) => i.min(self.particles.len() - 1),
                };
                sample_state(&self.particles[idx].stats, rng)
            })
            .collect()
    }
}

fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

fn effective_params<'a, R: Real>(
    p: &'a Particle<R>,
    spec: &'a ModelSpec<R>,
) -> ([R; 3], &'a [R]) {
    match &p.learn {
        Some(l) => (l.draw.obs_var.values, &l.draw.gamma),
        None => (spec.obs_var.values, &spec.gamma),
    }
}

fn normalize3<R: Real>(probs: &mut [R; 3]) {
    let total: R = probs.iter().copied().sum();
    if total > R::zero() {
        for p in probs.iter_mut() {
            *p /= total;
        }
    } else {
        let third = R::one() / R::cast(3.0);
        *probs = [third, third, third];
    }
}

/// One Gaussian draw from Kalman moments (PSD Cholesky, so zero covariance
/// degenerates to the mean).
pub fn sample_state<R: Real, G: Rng + ?Sized>(stats: &KalmanStats<R>, rng: &mut G) -> StateVec<R> {
    let l = stats.cov.cholesky_psd();
    let z0 = R::sample_standard_normal(rng);
    let z1 = R::sample_standard_normal(rng);
    StateVec::new(
        stats.mean.theta + l.m[0][0] * z0,
        stats.mean.beta + l.m[1][0] * z0 + l.m[1][1] * z1,
    )
}

/// Effective sample size `1 / sum(w_i^2)` of a normalized weight vector.
pub fn effective_sample_size<R: Real>(weights: &[R]) -> R {
    let sum_sq: R = weights.iter().map(|&w| w * w).sum();
    if sum_sq > R::zero() {
        R::one() / sum_sq
    } else {
        R::zero()
    }
}

/// Draw `n` ancestor indices i.i.d. from the weight distribution.
pub fn multinomial_indices<R: Real, G: Rng + ?Sized>(
    probs: &[R],
    n: usize,
    rng: &mut G,
) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = R::zero();
    for &p in probs {
        acc += p;
        cdf.push(acc);
    }
    let last = probs.len() - 1;
    (0..n)
        .map(|_| {
            let u = R::sample_unit(rng) * acc;
            match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap_or(std::cmp::Ordering::Equal))
            {
                Ok(i) => i,
                Err(i) => i.min(last),
            }
        })
        .collect()
}

/// Systematic resampling: one uniform offset, `n` evenly spaced points.
pub fn systematic_indices<R: Real, G: Rng + ?Sized>(
    probs: &[R],
    n: usize,
    rng: &mut G,
) -> Vec<usize> {
    let step = R::one() / R::cast(n as f64);
    let mut u = R::sample_unit(rng) * step;
    let mut out = Vec::with_capacity(n);
    let mut i = 0usize;
    let last = probs.len() - 1;
    let mut cum = probs[0];
    for _ in 0..n {
        while u > cum && i < last {
            i += 1;
            cum += probs[i];
        }
        out.push(i);
        u += step;
    }
    out
}

/// Quantile of a scalar Gaussian mixture by bisection on its CDF.
///
/// `comps` are `(weight, mean, sd)` triples; `sd` may be zero.
pub fn mixture_quantile<R: Real>(comps: &[(R, R, R)], q: R) -> R {
    debug_assert!(!comps.is_empty());
    let big = R::cast(10.0);
    let mut lo = R::infinity();
    let mut hi = R::neg_infinity();
    for &(_, m, sd) in comps {
        lo = lo.min(m - big * sd);
        hi = hi.max(m + big * sd);
    }
    if lo >= hi {
        return lo.min(hi); // all components degenerate at one point
    }
    // small cushion so the bracket strictly contains the quantile
    let pad = (hi - lo) * R::cast(1e-9) + R::cast(1e-9);
    lo -= pad;
    hi += pad;

    let cdf = |x: R| -> R {
        let mut f = R::zero();
        for &(w, m, sd) in comps {
            let term = if sd > R::zero() {
                normal_cdf((x - m) / sd)
            } else if x >= m {
                R::one()
            } else {
                R::zero()
            };
            f += w * term;
        }
        f
    };

    let tol = R::cast(1e-9) * (R::one() + hi.abs().max(lo.abs()));
    for _ in 0..200 {
        let mid = (lo + hi) * R::cast(0.5);
        if cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol {
            break;
        }
    }
    (lo + hi) * R::cast(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman;
    use crate::math::Mat2;
    use crate::regime::TransitionMatrix;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> ModelSpec<f64> {
        ModelSpec::default()
    }

    fn feats() -> ExogenousFeatures<f64> {
        ExogenousFeatures::default()
    }

    #[test]
    fn init_respects_prior_and_weights() {
        let s = spec();
        let kernel = RegimeKernel::fixed(TransitionMatrix::default());
        let st = FilterState::init(s.clone(), kernel.clone(), FilterConfig::new(3, 42)).unwrap();
        for p in st.particles() {
            assert_relative_eq!(p.weight, 1.0 / 3.0, epsilon = 1e-15);
            assert_eq!(p.stats.mean, s.prior_mean);
        }
        // reproducible regime assignment
        let st2 = FilterState::init(s.clone(), kernel.clone(), FilterConfig::new(3, 42)).unwrap();
        let r1: Vec<_> = st.particles().iter().map(|p| p.regime).collect();
        let r2: Vec<_> = st2.particles().iter().map(|p| p.regime).collect();
        assert_eq!(r1, r2);

        // single particle
        let st1 = FilterState::init(s.clone(), kernel.clone(), FilterConfig::new(1, 1)).unwrap();
        assert_eq!(st1.particles().len(), 1);
        assert_relative_eq!(st1.particles()[0].weight, 1.0);

        // degenerate prior puts every particle in free flow
        let mut s2 = s;
        s2.prior_regime_probs = [0.0, 1.0, 0.0];
        let st3 = FilterState::init(s2, kernel, FilterConfig::new(64, 9)).unwrap();
        assert!(st3.particles().iter().all(|p| p.regime == Regime::FreeFlow));
    }

    #[test]
    fn init_rejects_invalid_inputs() {
        let kernel = RegimeKernel::fixed(TransitionMatrix::<f64>::default());
        assert!(FilterState::init(spec(), kernel.clone(), FilterConfig::new(0, 1)).is_err());
        let mut bad = spec();
        bad.f0 = 2.0;
        assert!(FilterState::init(bad, kernel, FilterConfig::new(10, 1)).is_err());
    }

    #[test]
    fn degenerate_kernel_reproduces_exact_kalman_filter() {
        let s = spec();
        let kernel = RegimeKernel::degenerate(Regime::FreeFlow);
        let mut s_forced = s.clone();
        s_forced.prior_regime_probs = [0.0, 1.0, 0.0];
        let mut st = FilterState::init(
            s_forced.clone(),
            kernel,
            FilterConfig::new(1, 5),
        )
        .unwrap();

        let ys = [60.0, 58.0, 61.5, 59.0, 62.0];
        let mut exact = KalmanStats::from_prior(&s_forced);
        for &y in &ys {
            st.step(Some(y), &[], &feats()).unwrap();
            exact = kalman::step(&exact, Regime::FreeFlow, &[], y, &s_forced).unwrap();
            let p = &st.particles()[0];
            assert_relative_eq!(p.stats.mean.theta, exact.mean.theta, epsilon = 1e-12);
            assert_relative_eq!(p.stats.mean.beta, exact.mean.beta, epsilon = 1e-12);
            for i in 0..2 {
                for j in 0..2 {
                    assert_relative_eq!(p.stats.cov.m[i][j], exact.cov.m[i][j], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn log_marginal_matches_prediction_error_decomposition() {
        // with one reachable regime, the filter's marginal likelihood is the
        // exact Kalman one
        let mut s = spec();
        s.prior_regime_probs = [0.0, 1.0, 0.0];
        let kernel = RegimeKernel::degenerate(Regime::FreeFlow);
        let mut st = FilterState::init(s.clone(), kernel, FilterConfig::new(16, 3)).unwrap();

        let ys = [60.0, 54.0, 66.0, 63.0];
        let mut exact = KalmanStats::from_prior(&s);
        let mut exact_loglik = 0.0;
        for &y in &ys {
            st.step(Some(y), &[], &feats()).unwrap();
            let pred = kalman::predict(&exact, Regime::FreeFlow, &[], &s).unwrap();
            exact_loglik += normal_logpdf(y, pred.obs_mean, pred.obs_var);
            exact = kalman::update(&pred, y, Regime::FreeFlow, &s);
        }
        assert_relative_eq!(st.log_marginal_lik(), exact_loglik, epsilon = 1e-8);
    }

    #[test]
    fn weights_stay_normalized_and_covariances_psd() {
        let s = spec();
        let kernel = RegimeKernel::fixed(TransitionMatrix::default());
        for mode in [PropagationMode::Adapted, PropagationMode::Prior] {
            let cfg = FilterConfig::new(200, 11).with_mode(mode);
            let mut st = FilterState::init(s.clone(), kernel.clone(), cfg).unwrap();
            let ys = [60.0, 35.0, 30.0, 45.0, 62.0, 63.0];
            for &y in &ys {
                st.step(Some(y), &[], &feats()).unwrap();
                let total: f64 = st.particles().iter().map(|p| p.weight).sum();
                assert_relative_eq!(total, 1.0, epsilon = 1e-9);
                for p in st.particles() {
                    assert!(p.stats.cov.is_psd(1e-10));
                }
            }
        }
    }

    #[test]
    fn missing_observation_is_predict_only() {
        let s = spec();
        let kernel = RegimeKernel::degenerate(Regime::FreeFlow);
        let mut s_forced = s.clone();
        s_forced.prior_regime_probs = [0.0, 1.0, 0.0];
        let mut st =
            FilterState::init(s_forced.clone(), kernel, FilterConfig::new(1, 2)).unwrap();
        let before = st.log_marginal_lik();
        st.step(None, &[], &feats()).unwrap();
        assert_eq!(st.log_marginal_lik(), before);

        let exact_pred =
            kalman::predict(&KalmanStats::from_prior(&s_forced), Regime::FreeFlow, &[], &s_forced)
                .unwrap();
        let p = &st.particles()[0];
        assert_relative_eq!(p.stats.mean.theta, exact_pred.state_mean.theta, epsilon = 1e-12);
        assert_relative_eq!(
            p.stats.cov.m[0][0],
            exact_pred.state_cov.m[0][0],
            epsilon = 1e-12
        );
        assert_relative_eq!(p.weight, 1.0);
    }

    #[test]
    fn steps_are_reproducible_for_fixed_seed() {
        let s = spec();
        let kernel = RegimeKernel::fixed(TransitionMatrix::default());
        let run = || {
            let mut st =
                FilterState::init(s.clone(), kernel.clone(), FilterConfig::new(50, 77)).unwrap();
            let mut out = Vec::new();
            for &y in &[61.0, 40.0, 38.0, 52.0] {
                out.push(st.step(Some(y), &[], &feats()).unwrap());
            }
            out
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn summarize_identical_particles() {
        let s = spec();
        let kernel = RegimeKernel::degenerate(Regime::FreeFlow);
        let mut s2 = s.clone();
        s2.prior_regime_probs = [0.0, 1.0, 0.0];
        let st = FilterState::init(s2.clone(), kernel, FilterConfig::new(8, 1)).unwrap();
        let sum = st.summarize();
        assert_relative_eq!(sum.ess, 8.0, epsilon = 1e-9);
        assert_eq!(sum.regime_probs, [0.0, 1.0, 0.0]);
        assert_relative_eq!(sum.mean_speed, 63.0, epsilon = 1e-12);
        // quantiles of a single gaussian component
        let sd = s2.prior_cov.m[0][0].sqrt();
        let z95 = 1.6448536269514722;
        assert_relative_eq!(sum.speed_quantiles[1], 63.0, epsilon = 1e-6);
        assert_relative_eq!(sum.speed_quantiles[0], 63.0 - z95 * sd, epsilon = 1e-5);
        assert_relative_eq!(sum.speed_quantiles[2], 63.0 + z95 * sd, epsilon = 1e-5);
        assert!(sum.speed_quantiles.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn summarize_two_equal_particles_split_regimes() {
        let s = spec();
        let kernel = RegimeKernel::fixed(TransitionMatrix::default());
        let mut st = FilterState::init(s, kernel, FilterConfig::new(2, 1)).unwrap();
        st.particles[0].regime = Regime::Breakdown;
        st.particles[1].regime = Regime::Recovery;
        let sum = st.summarize();
        assert_eq!(sum.regime_probs, [0.5, 0.0, 0.5]);
    }

    #[test]
    fn mixture_quantile_matches_monte_carlo_median() {
        let comps = vec![
            (0.4, 50.0, 2.0),
            (0.35, 58.0, 1.0),
            (0.25, 63.0, 0.5),
        ];
        let med = mixture_quantile(&comps, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 2_000_000;
        let mut draws: Vec<f64> = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = f64::sample_unit(&mut rng);
            let (m, sd) = if u < 0.4 {
                (50.0, 2.0)
            } else if u < 0.75 {
                (58.0, 1.0)
            } else {
                (63.0, 0.5)
            };
            draws.push(m + sd * f64::sample_standard_normal(&mut rng));
        }
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mc_median = draws[n / 2];
        assert!(
            (med - mc_median).abs() < 0.01,
            "bisection {med} vs monte carlo {mc_median}"
        );
    }

    #[test]
    fn sample_states_degenerate_and_law_of_large_numbers() {
        let mut s = spec();
        s.prior_cov = Mat2::zero();
        s.prior_regime_probs = [0.0, 1.0, 0.0];
        let kernel = RegimeKernel::degenerate(Regime::FreeFlow);
        let st = FilterState::init(s, kernel.clone(), FilterConfig::new(1, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = st.sample_states(100, &mut rng);
        assert!(draws.iter().all(|d| d.theta == 63.0 && d.beta == 0.0));

        // reproducibility
        let mut rng_a = ChaCha8Rng::seed_from_u64(12);
        let mut rng_b = ChaCha8Rng::seed_from_u64(12);
        let st2 = FilterState::init(spec(), kernel, FilterConfig::new(32, 4)).unwrap();
        assert_eq!(st2.sample_states(16, &mut rng_a), st2.sample_states(16, &mut rng_b));

        // sample mean tracks the summary mean
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = st2.sample_states(n, &mut rng);
        let mean: f64 = draws.iter().map(|d| d.theta).sum::<f64>() / n as f64;
        let summary = st2.summarize();
        // prior sd is 10; 3 standard errors of the mean
        let se = 10.0 / (n as f64).sqrt();
        assert!((mean - summary.mean_speed).abs() < 3.0 * se);
    }

    #[test]
    fn effective_sample_size_reference_values() {
        assert_relative_eq!(effective_sample_size(&[0.25f64; 4]), 4.0, epsilon = 1e-12);
        assert_relative_eq!(
            effective_sample_size(&[1.0f64, 0.0, 0.0]),
            1.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            effective_sample_size(&[0.5f64, 0.25, 0.25]),
            1.0 / 0.375,
            epsilon = 1e-12
        );
    }

    #[test]
    fn resampling_schemes_cover_weighted_indices() {
        let probs = [0.7f64, 0.2, 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = multinomial_indices(&probs, 10_000, &mut rng);
        let f0 = m.iter().filter(|&&i| i == 0).count() as f64 / 10_000.0;
        assert!((f0 - 0.7).abs() < 0.02);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sidx = systematic_indices(&probs, 10_000, &mut rng);
        let f0 = sidx.iter().filter(|&&i| i == 0).count() as f64 / 10_000.0;
        assert!((f0 - 0.7).abs() < 0.001);
    }

    #[test]
    fn all_weights_zero_is_reported() {
        let mut s = spec();
        // absurdly tight observation noise makes a distant y underflow
        *s.obs_var.get_mut(Regime::Breakdown) = 1e-300;
        *s.obs_var.get_mut(Regime::FreeFlow) = 1e-300;
        *s.obs_var.get_mut(Regime::Recovery) = 1e-300;
        for r in REGIMES {
            *s.evo_cov.get_mut(r) = Mat2::zero();
        }
        s.prior_cov = Mat2::zero();
        let kernel = RegimeKernel::fixed(TransitionMatrix::default());
        let mut st = FilterState::init(s, kernel, FilterConfig::new(4, 3)).unwrap();
        let err = st.step(Some(1e6), &[], &feats()).unwrap_err();
        match err {
            Error::AllWeightsZero { step, y } => {
                assert_eq!(step, 1);
                assert_eq!(y, 1e6);
            }
            other => panic!("expected AllWeightsZero, got {other:?}"),
        }
    }

    #[test]
    fn filter_runs_in_f32() {
        let s: ModelSpec<f32> = ModelSpec::default();
        let kernel = RegimeKernel::fixed(TransitionMatrix::<f32>::default());
        let mut st = FilterState::init(s, kernel, FilterConfig::new(64, 10)).unwrap();
        for &y in &[60.0f32, 50.0, 45.0, 55.0] {
            let sum = st.step(Some(y), &[], &ExogenousFeatures::default()).unwrap();
            assert!(sum.mean_speed.is_finite());
        }
    }
}
