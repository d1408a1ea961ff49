//! Online learning of static parameters from conditional sufficient
//! statistics.
//!
//! Each particle tracks statistics that summarize everything the parameter
//! posterior needs about that particle's state path: per-regime innovation
//! counts and sums of squares for the observation variances, and
//! precision/moment accumulators for the regression coefficients. After
//! every step the statistics propagate deterministically from a realized
//! state draw and fresh parameter values are drawn offline from the
//! conjugate posteriors; those values replace the configured parameters in
//! that particle's subsequent likelihood evaluations.
//!
//! Learnable parameters are the observation variances (inverse-gamma) and
//! regression coefficients (Gaussian). Evolution covariances, the
//! mean-reversion coefficient, and the transition kernel are fit offline.

use rand::Rng;

use crate::error::{Error, Result};
use crate::filter::FilterState;
use crate::math::{backward_solve_transposed, cholesky_in_place, forward_solve};
use crate::model::{ModelSpec, PerRegime, Regime, StateVec, REGIMES};
use crate::scalar::Real;

/// Inverse-gamma prior `IG(shape, scale)` for an observation variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvGammaPrior<R> {
    pub shape: R,
    pub scale: R,
}

impl<R: Real> Default for InvGammaPrior<R> {
    /// Weakly informative default with prior mean 4 (scale / (shape - 1)).
    fn default() -> Self {
        InvGammaPrior {
            shape: R::cast(2.0),
            scale: R::cast(4.0),
        }
    }
}

/// Gaussian prior on the regression coefficients, parameterized by mean and
/// precision matrix (row major).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior<R> {
    pub mean: Vec<R>,
    pub precision: Vec<R>,
}

impl<R: Real> GaussianPrior<R> {
    /// Zero-mean, unit-precision prior of dimension `dim`.
    pub fn standard(dim: usize) -> Self {
        let mut precision = vec![R::zero(); dim * dim];
        for i in 0..dim {
            precision[i * dim + i] = R::one();
        }
        GaussianPrior {
            mean: vec![R::zero(); dim],
            precision,
        }
    }
}

/// Which parameters to learn and under which priors.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig<R> {
    pub learn_obs_var: bool,
    pub learn_gamma: bool,
    /// Shared prior for every regime's observation variance.
    pub obs_var_prior: InvGammaPrior<R>,
    /// Prior for the regression coefficients; `None` selects the standard
    /// zero-mean unit-precision prior of matching dimension.
    pub gamma_prior: Option<GaussianPrior<R>>,
}

impl<R: Real> Default for LearnConfig<R> {
    fn default() -> Self {
        LearnConfig {
            learn_obs_var: true,
            learn_gamma: false,
            obs_var_prior: InvGammaPrior::default(),
            gamma_prior: None,
        }
    }
}

impl<R: Real> LearnConfig<R> {
    pub fn validate(&self, spec: &ModelSpec<R>) -> Result<()> {
        if !(self.obs_var_prior.shape > R::zero() && self.obs_var_prior.scale > R::zero()) {
            return Err(Error::NonConjugateConfig(
                "inverse-gamma prior needs positive shape and scale".into(),
            ));
        }
        if self.learn_gamma {
            if spec.gamma.is_empty() {
                return Err(Error::NonConjugateConfig(
                    "learn_gamma is set but the model has no regressors".into(),
                ));
            }
            if let Some(prior) = &self.gamma_prior {
                let dim = spec.gamma.len();
                if prior.mean.len() != dim || prior.precision.len() != dim * dim {
                    return Err(Error::NonConjugateConfig(format!(
                        "gamma prior dimension does not match {dim} regressors"
                    )));
                }
                let mut chol = prior.precision.clone();
                if cholesky_in_place(&mut chol, dim).is_err() {
                    return Err(Error::NonConjugateConfig(
                        "gamma prior precision is not positive definite".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Zeroed sufficient statistics sized for `spec`.
    pub fn empty_suffstats(&self, spec: &ModelSpec<R>) -> ParamSuffStats<R> {
        ParamSuffStats::empty(spec.gamma.len())
    }

    fn gamma_prior_for(&self, dim: usize) -> GaussianPrior<R> {
        self.gamma_prior
            .clone()
            .unwrap_or_else(|| GaussianPrior::standard(dim))
    }
}

/// Per-regime innovation statistics for an observation variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsVarStat<R> {
    /// Number of observations assimilated under this regime.
    pub n: u64,
    /// Sum of squared innovations `(y - H x - gamma' z)^2`.
    pub ss: R,
}

/// Conditional sufficient statistics for the learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSuffStats<R> {
    pub obs: [ObsVarStat<R>; 3],
    /// Regressor precision accumulator `sum z z'` (row major, dim x dim).
    pub lambda: Vec<R>,
    /// Regressor moment accumulator `sum z (y - H x)`.
    pub b: Vec<R>,
}

impl<R: Real> ParamSuffStats<R> {
    pub fn empty(dim: usize) -> Self {
        ParamSuffStats {
            obs: [ObsVarStat { n: 0, ss: R::zero() }; 3],
            lambda: vec![R::zero(); dim * dim],
            b: vec![R::zero(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }
}

/// Current parameter values a particle filters with.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDrawValues<R> {
    pub obs_var: PerRegime<R>,
    pub gamma: Vec<R>,
}

/// Learning state carried by one particle.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleLearn<R> {
    pub suff: ParamSuffStats<R>,
    pub draw: ParamDrawValues<R>,
}

/// Deterministic sufficient-statistic recursion from a realized state draw.
///
/// `gamma` is the coefficient vector the residual is computed under (the
/// particle's current draw). Pure: returns the advanced statistics.
pub fn update_suffstats<R: Real>(
    stats: &ParamSuffStats<R>,
    x_draw: StateVec<R>,
    regime: Regime,
    y: R,
    z: &[R],
    gamma: &[R],
    spec: &ModelSpec<R>,
) -> ParamSuffStats<R> {
    debug_assert_eq!(z.len(), stats.dim());
    debug_assert_eq!(gamma.len(), stats.dim());
    let mut out = stats.clone();
    let hx = spec.h_row[0] * x_draw.theta + spec.h_row[1] * x_draw.beta;
    let shift: R = gamma.iter().zip(z.iter()).map(|(&g, &v)| g * v).sum();
    let resid = y - hx - shift;
    let slot = &mut out.obs[regime.index()];
    slot.n += 1;
    slot.ss += resid * resid;

    let dim = stats.dim();
    let resid_g = y - hx;
    for i in 0..dim {
        for j in 0..dim {
            out.lambda[i * dim + j] += z[i] * z[j];
        }
        out.b[i] += z[i] * resid_g;
    }
    out
}

/// Offline draw of the learnable parameters from their conjugate posteriors.
///
/// Observation variances: `V_r ~ IG(a0 + n_r/2, b0 + ss_r/2)`, regime by
/// regime. Coefficients: Gaussian with precision `P0 + Lambda / Vbar` and
/// mean `P^{-1} (P0 mu0 + b / Vbar)`, where `Vbar` is the count-weighted
/// average of the current variance values. Parameters not being learned are
/// taken from the spec.
pub fn draw_parameters<R: Real, G: Rng + ?Sized>(
    stats: &ParamSuffStats<R>,
    cfg: &LearnConfig<R>,
    spec: &ModelSpec<R>,
    rng: &mut G,
) -> ParamDrawValues<R> {
    let half = R::cast(0.5);
    let mut obs_var = spec.obs_var;
    if cfg.learn_obs_var {
        for r in REGIMES {
            let stat = stats.obs[r.index()];
            let shape = cfg.obs_var_prior.shape + R::cast(stat.n as f64) * half;
            let scale = cfg.obs_var_prior.scale + stat.ss * half;
            // V ~ IG(shape, scale)  <=>  1/V ~ Gamma(shape, scale 1/scale)
            let g = R::sample_gamma(rng, shape, R::one() / scale);
            *obs_var.get_mut(r) = R::one() / g;
        }
    }

    let dim = stats.dim();
    let gamma = if cfg.learn_gamma && dim > 0 {
        let prior = cfg.gamma_prior_for(dim);
        let v_bar = count_weighted_obs_var(&obs_var, stats);

        let mut precision = prior.precision.clone();
        let mut rhs = vec![R::zero(); dim];
        for i in 0..dim {
            for j in 0..dim {
                precision[i * dim + j] += stats.lambda[i * dim + j] / v_bar;
                rhs[i] += prior.precision[i * dim + j] * prior.mean[j];
            }
            rhs[i] += stats.b[i] / v_bar;
        }
        cholesky_in_place(&mut precision, dim).expect("posterior precision must be PD");
        // posterior mean: P m = rhs
        forward_solve(&precision, dim, &mut rhs);
        backward_solve_transposed(&precision, dim, &mut rhs);
        // draw: mean + L^{-T} zeta
        let mut zeta: Vec<R> = (0..dim).map(|_| R::sample_standard_normal(rng)).collect();
        backward_solve_transposed(&precision, dim, &mut zeta);
        rhs.iter().zip(zeta.iter()).map(|(&m, &e)| m + e).collect()
    } else {
        spec.gamma.clone()
    };

    ParamDrawValues { obs_var, gamma }
}

fn count_weighted_obs_var<R: Real>(obs_var: &PerRegime<R>, stats: &ParamSuffStats<R>) -> R {
    let mut total = R::zero();
    let mut weighted = R::zero();
    for r in REGIMES {
        let n = R::cast(stats.obs[r.index()].n as f64);
        total += n;
        weighted += n * *obs_var.get(r);
    }
    if total > R::zero() {
        weighted / total
    } else {
        (obs_var.values[0] + obs_var.values[1] + obs_var.values[2]) / R::cast(3.0)
    }
}

/// Weighted posterior summary of the per-particle parameter draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary<R> {
    pub obs_var_mean: [R; 3],
    pub obs_var_sd: [R; 3],
    pub gamma_mean: Vec<R>,
    pub gamma_sd: Vec<R>,
}

/// Summarize the parameter posterior across particles; `None` when the
/// filter runs without learning.
pub fn param_summary<R: Real>(state: &FilterState<R>) -> Option<ParamSummary<R>> {
    let particles = state.particles();
    particles.first()?.learn.as_ref()?;

    let dim = state.spec().gamma.len();
    let mut v_mean = [R::zero(); 3];
    let mut v_sq = [R::zero(); 3];
    let mut g_mean = vec![R::zero(); dim];
    let mut g_sq = vec![R::zero(); dim];
    for p in particles {
        let learn = p.learn.as_ref()?;
        let w = p.weight;
        for (i, r) in REGIMES.iter().enumerate() {
            let v = *learn.draw.obs_var.get(*r);
            v_mean[i] += w * v;
            v_sq[i] += w * v * v;
        }
        for (i, &g) in learn.draw.gamma.iter().enumerate() {
            g_mean[i] += w * g;
            g_sq[i] += w * g * g;
        }
    }
    let sd = |sq: R, mean: R| (sq - mean * mean).max(R::zero()).sqrt();
    Some(ParamSummary {
        obs_var_mean: v_mean,
        obs_var_sd: [
            sd(v_sq[0], v_mean[0]),
            sd(v_sq[1], v_mean[1]),
            sd(v_sq[2], v_mean[2]),
        ],
        gamma_mean: g_mean.clone(),
        gamma_sd: g_sq
            .iter()
            .zip(g_mean.iter())
            .map(|(&sq, &m)| sd(sq, m))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{FilterConfig, FilterState};
    use crate::regime::{ExogenousFeatures, RegimeKernel, TransitionMatrix};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> ModelSpec<f64> {
        ModelSpec::default()
    }

    #[test]
    fn zero_residual_updates_count_only() {
        let s = spec();
        let stats = ParamSuffStats::empty(0);
        let x = StateVec::new(55.0, 1.0);
        let y = 55.0; // equals H x with no regressors
        let out = update_suffstats(&stats, x, Regime::FreeFlow, y, &[], &[], &s);
        assert_eq!(out.obs[Regime::FreeFlow.index()].n, 1);
        assert_eq!(out.obs[Regime::FreeFlow.index()].ss, 0.0);
        assert_eq!(out.obs[Regime::Breakdown.index()].n, 0);
    }

    #[test]
    fn empty_regressors_leave_accumulators_untouched() {
        let s = spec();
        let stats = ParamSuffStats::empty(0);
        let out = update_suffstats(
            &stats,
            StateVec::new(50.0, 0.0),
            Regime::Breakdown,
            47.0,
            &[],
            &[],
            &s,
        );
        assert!(out.lambda.is_empty());
        assert!(out.b.is_empty());
        assert_relative_eq!(out.obs[0].ss, 9.0, epsilon = 1e-12);
    }

    #[test]
    fn sequential_updates_equal_batch_recomputation() {
        let mut s = spec();
        s.gamma = vec![1.5, -0.5];
        let gamma = [2.0, 0.25];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tuples: Vec<(StateVec<f64>, Regime, f64, Vec<f64>)> = (0..40)
            .map(|i| {
                let x = StateVec::new(
                    40.0 + 20.0 * f64::sample_unit(&mut rng),
                    -2.0 + 4.0 * f64::sample_unit(&mut rng),
                );
                let z = vec![f64::sample_unit(&mut rng), f64::sample_unit(&mut rng)];
                let y = 50.0 + 10.0 * f64::sample_unit(&mut rng);
                (x, REGIMES[i % 3], y, z)
            })
            .collect();

        let mut seq = ParamSuffStats::empty(2);
        for (x, r, y, z) in &tuples {
            seq = update_suffstats(&seq, *x, *r, *y, z, &gamma, &s);
        }
        let mut batch = ParamSuffStats::empty(2);
        for (x, r, y, z) in &tuples {
            batch = update_suffstats(&batch, *x, *r, *y, z, &gamma, &s);
        }
        assert_eq!(seq, batch);
    }

    #[test]
    fn prior_draws_when_no_data() {
        let s = spec();
        let cfg = LearnConfig::default();
        let stats = ParamSuffStats::empty(0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // 1/V ~ Gamma(2, rate 4): mean 0.5, var 0.125
        let n = 20_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let d = draw_parameters(&stats, &cfg, &s, &mut rng);
            sum += 1.0 / *d.obs_var.get(Regime::FreeFlow);
        }
        let mean = sum / n as f64;
        let se = (0.125f64 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn concentrated_stats_pin_variance_draws() {
        let s = spec();
        let cfg = LearnConfig::default();
        let mut stats = ParamSuffStats::empty(0);
        stats.obs[Regime::FreeFlow.index()] = ObsVarStat { n: 10_000, ss: 4.0 * 10_000.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut inside = 0;
        let n = 1000;
        for _ in 0..n {
            let d = draw_parameters(&stats, &cfg, &s, &mut rng);
            let v = *d.obs_var.get(Regime::FreeFlow);
            if (3.5..=4.5).contains(&v) {
                inside += 1;
            }
        }
        assert!(inside >= 950, "only {inside}/{n} draws inside [3.5, 4.5]");
    }

    #[test]
    fn draws_match_grid_posterior_in_total_variation() {
        // 1d test problem: y_i ~ N(0, V), IG(2, 4) prior on V. The oracle
        // evaluates prior x likelihood on a grid and normalizes numerically.
        let s = spec();
        let cfg = LearnConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let true_v: f64 = 3.0;
        let n_obs = 30usize;
        let ys: Vec<f64> = (0..n_obs)
            .map(|_| true_v.sqrt() * f64::sample_standard_normal(&mut rng))
            .collect();
        let ss: f64 = ys.iter().map(|y| y * y).sum();

        let mut stats = ParamSuffStats::empty(0);
        stats.obs[Regime::FreeFlow.index()] = ObsVarStat { n: n_obs as u64, ss };

        // grid oracle over log-spaced V values
        let grid_n = 20_000;
        let (v_lo, v_hi) = (0.2f64, 30.0f64);
        let log_lo = v_lo.ln();
        let step = (v_hi.ln() - log_lo) / grid_n as f64;
        let mut vs = Vec::with_capacity(grid_n);
        let mut dens = Vec::with_capacity(grid_n);
        for i in 0..grid_n {
            let v = (log_lo + (i as f64 + 0.5) * step).exp();
            // log prior IG(2, 4) + log likelihood of the raw data
            let lp = -3.0 * v.ln() - 4.0 / v;
            let ll = -(n_obs as f64) * 0.5 * (2.0 * std::f64::consts::PI * v).ln()
                - ss / (2.0 * v);
            vs.push(v);
            dens.push((lp + ll).exp() * v * step); // d v = v d(log v)
        }
        let total: f64 = dens.iter().sum();
        for d in dens.iter_mut() {
            *d /= total;
        }

        // bin both the oracle mass and the sampler draws
        let bins = 40;
        let (b_lo, b_hi) = (1.0f64, 9.0f64);
        let bw = (b_hi - b_lo) / bins as f64;
        let bin_of = |v: f64| -> Option<usize> {
            if v < b_lo || v >= b_hi {
                None
            } else {
                Some(((v - b_lo) / bw) as usize)
            }
        };
        let mut oracle_mass = vec![0.0f64; bins + 1];
        for (v, d) in vs.iter().zip(dens.iter()) {
            match bin_of(*v) {
                Some(b) => oracle_mass[b] += d,
                None => oracle_mass[bins] += d,
            }
        }

        let m = 400_000;
        let mut draw_mass = vec![0.0f64; bins + 1];
        for _ in 0..m {
            let d = draw_parameters(&stats, &cfg, &s, &mut rng);
            let v = *d.obs_var.get(Regime::FreeFlow);
            match bin_of(v) {
                Some(b) => draw_mass[b] += 1.0 / m as f64,
                None => draw_mass[bins] += 1.0 / m as f64,
            }
        }

        let tv: f64 = oracle_mass
            .iter()
            .zip(draw_mass.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "total variation {tv}");
    }

    #[test]
    fn gamma_posterior_concentrates_on_truth() {
        // direct conjugate check without the filter: z = 1, residuals around
        // gamma = 2 with noise variance 4
        let mut s = spec();
        s.gamma = vec![0.0];
        let cfg = LearnConfig {
            learn_obs_var: false,
            learn_gamma: true,
            ..LearnConfig::default()
        };
        cfg.validate(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut stats = ParamSuffStats::empty(1);
        let true_gamma = 2.0;
        for _ in 0..500 {
            let noise = 2.0 * f64::sample_standard_normal(&mut rng);
            // y - H x = gamma * z + v with z = 1
            let x = StateVec::new(50.0, 0.0);
            let y = 50.0 + true_gamma + noise;
            stats = update_suffstats(&stats, x, Regime::FreeFlow, y, &[1.0], &[0.0], &s);
        }
        stats.obs[Regime::FreeFlow.index()] = ObsVarStat { n: 500, ss: 4.0 * 500.0 };
        let mut draws = Vec::new();
        for _ in 0..2000 {
            let d = draw_parameters(&stats, &cfg, &s, &mut rng);
            draws.push(d.gamma[0]);
        }
        let mean: f64 = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - true_gamma).abs() < 0.3, "posterior mean {mean}");
    }

    #[test]
    fn disabled_learning_reduces_to_plain_filter() {
        let s = spec();
        let kernel = RegimeKernel::fixed(TransitionMatrix::default());
        let feats = ExogenousFeatures::default();
        let ys = [60.0, 45.0, 40.0, 50.0, 58.0];

        let mut plain =
            FilterState::init(s.clone(), kernel.clone(), FilterConfig::new(40, 13)).unwrap();
        let off = LearnConfig {
            learn_obs_var: false,
            learn_gamma: false,
            ..LearnConfig::default()
        };
        let mut noop = FilterState::init(
            s.clone(),
            kernel.clone(),
            FilterConfig::new(40, 13).with_learning(off),
        )
        .unwrap();

        for &y in &ys {
            let a = plain.step(Some(y), &[], &feats).unwrap();
            let b = noop.step(Some(y), &[], &feats).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(plain.log_marginal_lik(), noop.log_marginal_lik());
    }

    #[test]
    fn learning_filter_tightens_variance_posterior() {
        // observation variance learnable, simulated free-flow-ish data
        let s = spec();
        let kernel = RegimeKernel::fixed(TransitionMatrix::default());
        let feats = ExogenousFeatures::default();
        let cfg = FilterConfig::new(300, 21).with_learning(LearnConfig::default());
        let mut st = FilterState::init(s.clone(), kernel, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut sd_snapshots = Vec::new();
        let mut speed = 60.0;
        for t in 1..=120 {
            speed = 0.8 * speed + 0.2 * 63.0 + 0.5 * f64::sample_standard_normal(&mut rng);
            let y = speed + 2.0 * f64::sample_standard_normal(&mut rng);
            st.step(Some(y), &[], &feats).unwrap();
            if t == 40 || t == 80 || t == 120 {
                let summary = param_summary(&st).unwrap();
                let mean_sd = (summary.obs_var_sd[0]
                    + summary.obs_var_sd[1]
                    + summary.obs_var_sd[2])
                    / 3.0;
                sd_snapshots.push(mean_sd);
            }
        }
        assert!(
            sd_snapshots[2] < sd_snapshots[0],
            "posterior spread should shrink: {sd_snapshots:?}"
        );
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let s = spec();
        let mut cfg = LearnConfig::<f64>::default();
        cfg.obs_var_prior.shape = 0.0;
        assert!(cfg.validate(&s).is_err());

        let cfg = LearnConfig {
            learn_gamma: true,
            ..LearnConfig::default()
        };
        assert!(cfg.validate(&s).is_err()); // no regressors in spec

        let mut s2 = spec();
        s2.gamma = vec![1.0];
        let cfg = LearnConfig {
            learn_gamma: true,
            gamma_prior: Some(GaussianPrior {
                mean: vec![0.0],
                precision: vec![-1.0],
            }),
            ..LearnConfig::default()
        };
        assert!(cfg.validate(&s2).is_err());
    }
}
