//! Naive reference filters for side-by-side comparison.
//!
//! Each filter maps a speed series to a per-step relative deviation
//! `y_f = (y_i - ref_i) / ref_i` against a trailing reference (window mean,
//! previous value, or window quantile), and a threshold classifier turns the
//! deviation into a regime trace. Warmup steps and zero divisors are flagged
//! as missing, never fabricated.

use crate::error::{Error, Result};
use crate::model::Regime;
use crate::scalar::Real;

/// Relative-deviation series plus its classified regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutput<R> {
    pub series: Vec<Option<R>>,
    pub regimes: Vec<Option<Regime>>,
}

fn check_window<R>(w: usize, len: usize) -> Result<()> {
    if w == 0 {
        return Err(Error::InvalidSpec("window length must be at least 1".into()));
    }
    if w >= len {
        return Err(Error::WindowTooLong { window: w, len });
    }
    Ok(())
}

/// Relative deviation from the trailing-window mean.
pub fn mean_filter<R: Real>(y: &[R], w: usize) -> Result<Vec<Option<R>>> {
    check_window::<R>(w, y.len())?;
    let mut out = vec![None; y.len()];
    for i in w..y.len() {
        let mut sum = R::zero();
        for &v in &y[i - w..i] {
            sum += v;
        }
        let mean = sum / R::cast(w as f64);
        if mean != R::zero() {
            out[i] = Some((y[i] - mean) / mean);
        }
    }
    Ok(out)
}

/// Relative change from the previous value.
pub fn diff_filter<R: Real>(y: &[R]) -> Vec<Option<R>> {
    let mut out = vec![None; y.len()];
    for i in 1..y.len() {
        if y[i - 1] != R::zero() {
            out[i] = Some((y[i] - y[i - 1]) / y[i - 1]);
        }
    }
    out
}

/// Relative deviation from a trailing-window quantile (default median),
/// with linear interpolation between order statistics.
pub fn quantile_filter<R: Real>(y: &[R], w: usize, q: R) -> Result<Vec<Option<R>>> {
    check_window::<R>(w, y.len())?;
    debug_assert!(q >= R::zero() && q <= R::one());
    let mut out = vec![None; y.len()];
    let mut window: Vec<R> = Vec::with_capacity(w);
    for i in w..y.len() {
        window.clear();
        window.extend_from_slice(&y[i - w..i]);
        window.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let quantile = interpolated_quantile(&window, q);
        if quantile != R::zero() {
            out[i] = Some((y[i] - quantile) / quantile);
        }
    }
    Ok(out)
}

fn interpolated_quantile<R: Real>(sorted: &[R], q: R) -> R {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = R::cast((n - 1) as f64) * q;
    let lo = h.floor();
    let idx = lo.to_f64_lossy() as usize;
    let hi = (idx + 1).min(n - 1);
    let frac = h - lo;
    sorted[idx] + frac * (sorted[hi] - sorted[idx])
}

/// Threshold classification of a deviation series. Requires
/// `down_threshold < 0 < up_threshold`.
pub fn classify<R: Real>(
    series: &[Option<R>],
    down_threshold: R,
    up_threshold: R,
) -> Vec<Option<Regime>> {
    assert!(
        down_threshold < R::zero() && up_threshold > R::zero(),
        "thresholds must straddle zero"
    );
    series
        .iter()
        .map(|v| {
            v.map(|x| {
                if x < down_threshold {
                    Regime::Breakdown
                } else if x > up_threshold {
                    Regime::Recovery
                } else {
                    Regime::FreeFlow
                }
            })
        })
        .collect()
}

/// Which naive filter to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Mean,
    Diff,
    Quantile,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Mean => "mean",
            BaselineKind::Diff => "diff",
            BaselineKind::Quantile => "quantile",
        }
    }
}

/// Run one baseline end to end: deviation series plus classified regimes.
pub fn run_baseline<R: Real>(
    kind: BaselineKind,
    y: &[R],
    w: usize,
    down_threshold: R,
    up_threshold: R,
) -> Result<BaselineOutput<R>> {
    let series = match kind {
        BaselineKind::Mean => mean_filter(y, w)?,
        BaselineKind::Diff => diff_filter(y),
        BaselineKind::Quantile => quantile_filter(y, w, R::cast(0.5))?,
    };
    let regimes = classify(&series, down_threshold, up_threshold);
    Ok(BaselineOutput { series, regimes })
}
