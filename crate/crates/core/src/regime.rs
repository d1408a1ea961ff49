//! Switching evolution of the regime: `p(next regime | current regime, Z)`.
//!
//! Three kernel variants are supported: a fixed transition matrix, a lookup
//! table keyed by period-of-day and day-of-week, and a k-nearest-neighbour
//! empirical kernel over historical transitions. A MAP fitter estimates a
//! fixed matrix from labeled history.

use std::collections::HashMap;

use chrono::{Datelike, Timelike, Weekday};
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::solve_dense;
use crate::model::{Regime, PROB_TOL, REGIMES};
use crate::scalar::Real;

/// Row-stochastic 3x3 matrix over regimes in canonical order
/// (breakdown, free flow, recovery).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix<R> {
    rows: [[R; 3]; 3],
}

impl<R: Real> Default for TransitionMatrix<R> {
    /// Default freeway switching matrix: sticky regimes, with breakdown and
    /// recovery decaying back toward free flow.
    fn default() -> Self {
        let c = R::cast;
        TransitionMatrix {
            rows: [
                [c(0.6), c(0.3), c(0.1)],
                [c(0.15), c(0.7), c(0.15)],
                [c(0.3), c(0.1), c(0.6)],
            ],
        }
    }
}

impl<R: Real> TransitionMatrix<R> {
    /// Validate and wrap a matrix of rows; each row must be a distribution.
    pub fn new(rows: [[R; 3]; 3]) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            let mut sum = R::zero();
            for &p in row {
                if !(R::zero()..=R::one()).contains(&p) {
                    return Err(Error::InvalidSpec(format!(
                        "transition matrix row {i} has entry {p} outside [0, 1]"
                    )));
                }
                sum += p;
            }
            if (sum - R::one()).abs() > R::cast(PROB_TOL) {
                return Err(Error::InvalidSpec(format!(
                    "transition matrix row {i} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(TransitionMatrix { rows })
    }

    #[inline]
    pub fn row(&self, from: Regime) -> [R; 3] {
        self.rows[from.index()]
    }

    #[inline]
    pub fn prob(&self, from: Regime, to: Regime) -> R {
        self.rows[from.index()][to.index()]
    }

    pub fn rows(&self) -> &[[R; 3]; 3] {
        &self.rows
    }

    /// Stationary distribution `pi` with `pi P = pi`, by direct linear solve
    /// of `(P^T - I) pi = 0` under the normalization constraint.
    pub fn stationary(&self) -> Result<[R; 3]> {
        let mut a = vec![R::zero(); 9];
        for i in 0..3 {
            for j in 0..3 {
                a[i * 3 + j] = self.rows[j][i] - if i == j { R::one() } else { R::zero() };
            }
        }
        // replace the last (redundant) equation with sum(pi) = 1
        for j in 0..3 {
            a[2 * 3 + j] = R::one();
        }
        let mut b = vec![R::zero(), R::zero(), R::one()];
        solve_dense(&mut a, &mut b, 3)?;
        Ok([b[0], b[1], b[2]])
    }
}

/// Period of day used by the lookup kernel. Morning peak covers 06:00-10:00
/// and evening peak 15:00-19:00, matching recurrent congestion onset on urban
/// freeways.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Period {
    MorningPeak,
    EveningPeak,
    OffPeak,
}

impl Period {
    pub fn from_minutes(minutes_since_midnight: f64) -> Period {
        let m = minutes_since_midnight;
        if (360.0..600.0).contains(&m) {
            Period::MorningPeak
        } else if (900.0..1140.0).contains(&m) {
            Period::EveningPeak
        } else {
            Period::OffPeak
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Period::MorningPeak => "morning_peak",
            Period::EveningPeak => "evening_peak",
            Period::OffPeak => "off_peak",
        }
    }
}

impl std::str::FromStr for Period {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "morning_peak" | "morning" => Ok(Period::MorningPeak),
            "evening_peak" | "evening" => Ok(Period::EveningPeak),
            "off_peak" | "offpeak" => Ok(Period::OffPeak),
            other => Err(format!("unknown period `{other}`")),
        }
    }
}

/// Event flags carried through ingestion. The built-in kernels do not read
/// them; they are available to custom lookups and downstream analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventFlags {
    pub event: bool,
    pub accident: bool,
    pub weather: bool,
}

/// Exogenous features `Z` conditioning the switching kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousFeatures<R> {
    /// Minutes since midnight, in `[0, 1440)`.
    pub time_of_day_min: R,
    pub day_of_week: Weekday,
    /// Most recent filtered speeds, newest first; at most three entries.
    pub recent_speeds: Vec<R>,
    pub flags: EventFlags,
}

impl<R: Real> Default for ExogenousFeatures<R> {
    fn default() -> Self {
        ExogenousFeatures {
            time_of_day_min: R::zero(),
            day_of_week: Weekday::Mon,
            recent_speeds: Vec::new(),
            flags: EventFlags::default(),
        }
    }
}

impl<R: Real> ExogenousFeatures<R> {
    pub fn at(minutes_since_midnight: R, day_of_week: Weekday) -> Self {
        debug_assert!(
            minutes_since_midnight >= R::zero() && minutes_since_midnight < R::cast(1440.0)
        );
        ExogenousFeatures {
            time_of_day_min: minutes_since_midnight,
            day_of_week,
            recent_speeds: Vec::new(),
            flags: EventFlags::default(),
        }
    }

    /// Derive time-of-day and weekday from an epoch timestamp. Timestamps are
    /// interpreted in the clock of the data file (no timezone conversion).
    pub fn from_timestamp(epoch_secs: i64) -> Self {
        let dt = chrono::DateTime::from_timestamp(epoch_secs, 0)
            .unwrap_or_else(|| chrono::DateTime::from_timestamp(0, 0).expect("epoch"));
        let minutes = dt.hour() * 60 + dt.minute();
        ExogenousFeatures::at(R::cast(minutes as f64), dt.weekday())
    }

    pub fn with_recent_speeds(mut self, speeds: &[R]) -> Self {
        self.recent_speeds = speeds.iter().copied().take(3).collect();
        self
    }

    pub fn period(&self) -> Period {
        Period::from_minutes(self.time_of_day_min.to_f64_lossy())
    }

    /// Time of day on the unit circle, so distances respect the midnight
    /// wraparound.
    fn clock_point(&self) -> (R, R) {
        let two_pi = R::cast(2.0) * R::PI();
        let angle = two_pi * self.time_of_day_min / R::cast(1440.0);
        (angle.cos(), angle.sin())
    }
}

/// One historical transition for the kNN kernel: the conditioning features
/// and the regime that followed them.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnRecord<R> {
    pub regime: Regime,
    pub features: ExogenousFeatures<R>,
    pub next_regime: Regime,
}

/// Neighbour weighting scheme. Inverse-distance is the default; the
/// proportional variant (far neighbours count more) is kept selectable for
/// comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KnnWeighting {
    #[default]
    InverseDistance,
    ProportionalDistance,
}

/// Relative weights of the feature blocks in the kNN distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureWeights<R> {
    pub recent_speeds: R,
    pub time_of_day: R,
    pub regime: R,
}

impl<R: Real> Default for FeatureWeights<R> {
    fn default() -> Self {
        FeatureWeights {
            recent_speeds: R::one(),
            time_of_day: R::one(),
            regime: R::one(),
        }
    }
}

/// kNN kernel configuration. `speed_scale` normalizes speed differences
/// (typically `1 / v_free`); normalization constants are fixed configuration,
/// not learned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnParams<R> {
    pub k: usize,
    pub speed_scale: R,
    pub weights: FeatureWeights<R>,
    pub weighting: KnnWeighting,
}

impl<R: Real> Default for KnnParams<R> {
    fn default() -> Self {
        KnnParams {
            k: 50,
            speed_scale: R::one() / R::cast(63.0),
            weights: FeatureWeights::default(),
            weighting: KnnWeighting::default(),
        }
    }
}

/// Transition kernel `p(next | current, Z)`.
#[derive(Debug, Clone, PartialEq)]
pub enum RegimeKernel<R> {
    /// Exogenous features are ignored.
    Fixed(TransitionMatrix<R>),
    /// Matrix chosen by `(period, day of week)`; `default` covers missing keys.
    Lookup {
        table: HashMap<(Period, Weekday), TransitionMatrix<R>>,
        default: TransitionMatrix<R>,
    },
    /// Empirical kernel over historical transitions.
    Knn {
        records: Vec<KnnRecord<R>>,
        params: KnnParams<R>,
    },
}

impl<R: Real> RegimeKernel<R> {
    pub fn fixed(matrix: TransitionMatrix<R>) -> Self {
        RegimeKernel::Fixed(matrix)
    }

    pub fn lookup(
        table: HashMap<(Period, Weekday), TransitionMatrix<R>>,
        default: TransitionMatrix<R>,
    ) -> Self {
        RegimeKernel::Lookup { table, default }
    }

    pub fn knn(records: Vec<KnnRecord<R>>, params: KnnParams<R>) -> Self {
        RegimeKernel::Knn { records, params }
    }

    /// A kernel that never leaves `regime`; collapses the filter onto a
    /// single Kalman path.
    pub fn degenerate(regime: Regime) -> Self {
        let mut rows = [[R::zero(); 3]; 3];
        for row in rows.iter_mut() {
            row[regime.index()] = R::one();
        }
        RegimeKernel::Fixed(TransitionMatrix { rows })
    }

    /// Distribution of the next regime given the current one and features.
    pub fn transition_probs(
        &self,
        current: Regime,
        feats: &ExogenousFeatures<R>,
    ) -> Result<[R; 3]> {
        match self {
            RegimeKernel::Fixed(m) => Ok(m.row(current)),
            RegimeKernel::Lookup { table, default } => {
                let key = (feats.period(), feats.day_of_week);
                Ok(table.get(&key).unwrap_or(default).row(current))
            }
            RegimeKernel::Knn { records, params } => {
                knn_transition(records, params, current, feats)
            }
        }
    }

    /// Draw the next regime by inverse CDF on a single uniform.
    pub fn sample_next<G: Rng + ?Sized>(
        &self,
        current: Regime,
        feats: &ExogenousFeatures<R>,
        rng: &mut G,
    ) -> Result<Regime> {
        let probs = self.transition_probs(current, feats)?;
        Ok(sample_index(&probs, rng))
    }
}

/// Inverse-CDF draw from a normalized 3-vector of regime probabilities.
pub(crate) fn sample_index<R: Real, G: Rng + ?Sized>(probs: &[R; 3], rng: &mut G) -> Regime {
    let u = R::sample_unit(rng);
    let mut acc = R::zero();
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return REGIMES[i];
        }
    }
    // rounding can leave acc marginally below 1
    REGIMES[2]
}

/// Fit a fixed transition matrix from labeled history by the MAP mode of a
/// per-row Dirichlet-multinomial posterior.
///
/// Each row is `(counts + prior - 1)` clamped at zero and normalized; rows
/// with no mass at all fall back to uniform. A flat all-ones `prior`
/// reproduces the empirical transition frequencies.
pub fn fit_map_transition<R: Real>(
    history: &[(Regime, ExogenousFeatures<R>)],
    prior: &[[R; 3]; 3],
) -> Result<TransitionMatrix<R>> {
    if history.len() < 2 {
        return Err(Error::EmptyHistory);
    }
    let mut counts = [[R::zero(); 3]; 3];
    for pair in history.windows(2) {
        let from = pair[0].0.index();
        let to = pair[1].0.index();
        counts[from][to] += R::one();
    }
    let mut rows = [[R::zero(); 3]; 3];
    for i in 0..3 {
        let mut total = R::zero();
        for j in 0..3 {
            let v = (counts[i][j] + prior[i][j] - R::one()).max(R::zero());
            rows[i][j] = v;
            total += v;
        }
        if total > R::zero() {
            for j in 0..3 {
                rows[i][j] /= total;
            }
        } else {
            let third = R::one() / R::cast(3.0);
            rows[i] = [third, third, third];
        }
    }
    TransitionMatrix::new(rows)
}

/// Flat (all ones) Dirichlet pseudo-counts.
pub fn flat_prior<R: Real>() -> [[R; 3]; 3] {
    [[R::one(); 3]; 3]
}

fn knn_distance<R: Real>(
    query_regime: Regime,
    query: &ExogenousFeatures<R>,
    record: &KnnRecord<R>,
    params: &KnnParams<R>,
) -> R {
    let w = &params.weights;
    let mut d2 = R::zero();

    let n = query.recent_speeds.len().min(record.features.recent_speeds.len());
    for j in 0..n {
        let diff = (query.recent_speeds[j] - record.features.recent_speeds[j]) * params.speed_scale;
        d2 += w.recent_speeds * diff * diff;
    }

    let (qc, qs) = query.clock_point();
    let (rc, rs) = record.features.clock_point();
    let (dc, ds) = (qc - rc, qs - rs);
    d2 += w.time_of_day * (dc * dc + ds * ds);

    if query_regime != record.regime {
        d2 += w.regime;
    }

    d2.sqrt()
}

/// Boost factor for exact matches: a zero-distance neighbour gets the weight
/// of the nearest positive-distance neighbour times this.
const EXACT_MATCH_BOOST: f64 = 1e3;

/// Empirical next-regime distribution from the `k` nearest historical
/// transitions, weighted by the configured scheme.
pub fn knn_transition<R: Real>(
    records: &[KnnRecord<R>],
    params: &KnnParams<R>,
    current: Regime,
    feats: &ExogenousFeatures<R>,
) -> Result<[R; 3]> {
    if params.k == 0 || records.len() < params.k {
        return Err(Error::InsufficientHistory {
            k: params.k,
            got: records.len(),
        });
    }
    if feats.recent_speeds.is_empty() {
        return Err(Error::MissingFeatures);
    }

    let mut scored: Vec<(R, usize)> = records
        .iter()
        .enumerate()
        .map(|(i, rec)| (knn_distance(current, feats, rec, params), i))
        .collect();
    let k = params.k;
    // ties broken by original index so selection is deterministic
    let cmp = |a: &(R, usize), b: &(R, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    scored.select_nth_unstable_by(k - 1, cmp);
    let selected = &mut scored[..k];
    selected.sort_unstable_by(cmp);

    let min_positive = selected
        .iter()
        .map(|&(d, _)| d)
        .find(|&d| d > R::zero());

    let mut probs = [R::zero(); 3];
    let mut total = R::zero();
    for &(d, idx) in selected.iter() {
        let w = match params.weighting {
            KnnWeighting::InverseDistance => {
                if d > R::zero() {
                    R::one() / d
                } else {
                    match min_positive {
                        Some(dp) => R::cast(EXACT_MATCH_BOOST) / dp,
                        None => R::one(),
                    }
                }
            }
            KnnWeighting::ProportionalDistance => d,
        };
        probs[records[idx].next_regime.index()] += w;
        total += w;
    }
    if total <= R::zero() {
        // proportional weighting with all-zero distances
        let share = R::one() / R::cast(k as f64);
        total = R::one();
        probs = [R::zero(); 3];
        for &(_, idx) in selected.iter() {
            probs[records[idx].next_regime.index()] += share;
        }
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(probs)
}
