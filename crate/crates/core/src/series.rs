//! Numerical helpers for positive series given in log form: tail-ratio limit
//! estimation, ratio-test convergence verdicts with geometric tail bounds, and
//! power-law fits for the critical case.

use serde::{Deserialize, Serialize};

/// `ln(exp(a) + exp(b))` without overflow. Accepts `-inf` operands.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::INFINITY {
        return f64::INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(sum exp(x_i))` over an iterator.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() {
        return hi;
    }
    hi + xs.iter().map(|x| (x - hi).exp()).sum::<f64>().ln()
}

/// Limsup / liminf estimates of a ratio sequence `r(n) = a(n+1)/a(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioLimits {
    pub upper: f64,
    pub lower: f64,
    /// The limit, when the window indicates that one exists.
    pub limit: Option<f64>,
}

impl RatioLimits {
    pub fn exact(limit: f64) -> Self {
        RatioLimits { upper: limit, lower: limit, limit: Some(limit) }
    }

    /// Limits of `c * r(n)`.
    pub fn scaled(&self, c: f64) -> Self {
        RatioLimits {
            upper: self.upper * c,
            lower: self.lower * c,
            limit: self.limit.map(|l| l * c),
        }
    }

    /// Limits of `1 / r(n)`: upper and lower swap.
    pub fn reciprocal(&self) -> Self {
        RatioLimits {
            upper: 1.0 / self.lower,
            lower: 1.0 / self.upper,
            limit: self.limit.map(|l| 1.0 / l),
        }
    }
}

/// Second-order Richardson extrapolation in `h = 1/n` from samples at
/// `n`, `2n`, `4n` (error model `c1/n + c2/n^2`).
pub fn richardson(at_n: f64, at_2n: f64, at_4n: f64) -> f64 {
    (8.0 * at_4n - 6.0 * at_2n + at_n) / 3.0
}

/// Estimates the limits of `a(n+1)/a(n)` over the window `[trunc/2, trunc]`
/// where `ln_a(n) = ln a(n)`.
///
/// A window whose spread shrinks from its first half to its second half is
/// treated as convergent and the limit is extrapolated; a window that grows
/// monotonically by at least half again is treated as diverging to infinity;
/// anything else is reported as oscillating with window max/min.
pub fn estimate_ratio_limits<F: Fn(usize) -> f64>(ln_a: F, trunc: usize, tol: f64) -> RatioLimits {
    let trunc = trunc.max(16);
    let ratio = |n: usize| (ln_a(n + 1) - ln_a(n)).exp();
    let lo = trunc / 2;
    let mid = (3 * trunc) / 4;
    let rs: Vec<f64> = (lo..=trunc).map(ratio).collect();
    let split = mid - lo;
    let spread = |s: &[f64]| {
        let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mn = s.iter().copied().fold(f64::INFINITY, f64::min);
        (mx, mn, mx - mn)
    };
    let (mx, mn, _) = spread(&rs);
    let (_, _, first) = spread(&rs[..=split]);
    let (_, _, second) = spread(&rs[split..]);

    let monotone_up = rs.windows(2).all(|w| w[1] >= w[0]);
    let first_r = rs[0];
    let last_r = *rs.last().unwrap();
    if monotone_up && first_r > 0.0 && last_r >= 1.5 * first_r {
        return RatioLimits { upper: f64::INFINITY, lower: f64::INFINITY, limit: Some(f64::INFINITY) };
    }

    let scale = mx.abs().max(1.0);
    if second <= tol * scale || second <= 0.75 * first {
        let q = trunc / 4;
        let lim = if second <= tol * scale {
            last_r
        } else {
            richardson(ratio(q), ratio(2 * q), ratio(4 * q)).max(0.0)
        };
        RatioLimits::exact(lim)
    } else {
        RatioLimits { upper: mx, lower: mn, limit: None }
    }
}

/// Least-squares fit of `ln a(n) = ln alpha + p ln n` on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub alpha: f64,
    pub p: f64,
    /// Max absolute deviation of the fit in log space.
    pub residual: f64,
}

pub fn power_law_fit<F: Fn(usize) -> f64>(ln_a: F, lo: usize, hi: usize) -> PowerFit {
    let lo = lo.max(1);
    let pts: Vec<(f64, f64)> = (lo..=hi).map(|n| ((n as f64).ln(), ln_a(n))).collect();
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let mx = sx / m;
    let my = sy / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let p = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let ln_alpha = my - p * mx;
    let residual = pts
        .iter()
        .map(|(x, y)| (y - ln_alpha - p * x).abs())
        .fold(0.0, f64::max);
    PowerFit { alpha: ln_alpha.exp(), p, residual }
}

/// Max log-space residual accepted by the critical-case power fit.
pub const POWER_FIT_TOL: f64 = 1e-3;

/// Convergence verdict of a positive series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesStatus {
    /// Converges; `tail_bounded` is false when the reported value is a bare
    /// partial sum without a geometric tail bound.
    Converges { tail_bounded: bool },
    Diverges,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesEstimate {
    pub status: SeriesStatus,
    /// Sum estimate; `+inf` when divergent, the partial sum when inconclusive.
    pub value: f64,
}

/// Decides convergence of `sum_{n >= start} exp(ln_term(n))` from the
/// term-ratio limits, with power-law and partial-sum fallbacks.
pub fn analyse_series<F: Fn(usize) -> f64>(
    ln_term: F,
    start: usize,
    term_ratio: RatioLimits,
    trunc: usize,
    tol: f64,
) -> SeriesEstimate {
    let ln_partial = log_sum_exp((start..=trunc).map(&ln_term));
    let partial = ln_partial.exp();

    if term_ratio.upper < 1.0 - tol {
        let r = term_ratio.upper;
        let tail = (ln_term(trunc) + r.ln() - (1.0 - r).ln()).exp();
        return SeriesEstimate {
            status: SeriesStatus::Converges { tail_bounded: true },
            value: partial + tail,
        };
    }
    if term_ratio.lower > 1.0 + tol {
        return SeriesEstimate { status: SeriesStatus::Diverges, value: f64::INFINITY };
    }

    // Ratio test inconclusive: critical-case power-law route.
    let fit = power_law_fit(&ln_term, (trunc / 2).max(start + 1), trunc);
    if fit.residual <= POWER_FIT_TOL {
        return if fit.p < -1.0 - 1e-6 {
            SeriesEstimate { status: SeriesStatus::Converges { tail_bounded: false }, value: partial }
        } else {
            SeriesEstimate { status: SeriesStatus::Diverges, value: f64::INFINITY }
        };
    }

    let non_decreasing = ((trunc / 2)..trunc).all(|n| ln_term(n + 1) >= ln_term(n));
    if partial > 1.0 / tol && non_decreasing {
        SeriesEstimate { status: SeriesStatus::Diverges, value: f64::INFINITY }
    } else {
        SeriesEstimate { status: SeriesStatus::Inconclusive, value: partial }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_exp_handles_extremes() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 2.0), 2.0);
        assert!((log_add_exp(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((log_sum_exp([0.0, 0.0, 0.0]) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn ratio_limits_constant_and_decaying() {
        let c = estimate_ratio_limits(|n| -(n as f64) * 3f64.ln(), 10_000, 1e-9);
        assert!((c.limit.unwrap() - 1.0 / 3.0).abs() < 1e-12);

        // a(n) = 1/n!  =>  ratio 1/(n+1) -> 0
        let f = estimate_ratio_limits(|n| -statrs::function::factorial::ln_factorial(n as u64), 10_000, 1e-9);
        assert!(f.limit.unwrap().abs() < 1e-9, "{f:?}");
    }

    #[test]
    fn ratio_limits_oscillating_and_divergent() {
        // ratios alternate 0.5, 0.25
        let ln_a = |n: usize| {
            let pairs = (n / 2) as f64;
            let mut v = pairs * (0.125f64).ln();
            if n % 2 == 1 {
                v += 0.5f64.ln();
            }
            v
        };
        let o = estimate_ratio_limits(ln_a, 1000, 1e-9);
        assert!(o.limit.is_none());
        assert!((o.upper - 0.5).abs() < 1e-12 && (o.lower - 0.25).abs() < 1e-12);

        let d = estimate_ratio_limits(|n| statrs::function::factorial::ln_factorial(n as u64), 1000, 1e-9);
        assert_eq!(d.limit, Some(f64::INFINITY));
    }

    #[test]
    fn series_verdicts() {
        let geo = analyse_series(|n| n as f64 * 0.5f64.ln(), 0, RatioLimits::exact(0.5), 200, 1e-9);
        assert_eq!(geo.status, SeriesStatus::Converges { tail_bounded: true });
        assert!((geo.value - 2.0).abs() < 1e-12);

        let harmonic = analyse_series(|n| -((n + 1) as f64).ln(), 0, RatioLimits::exact(1.0), 10_000, 1e-9);
        assert_eq!(harmonic.status, SeriesStatus::Diverges);

        let square = analyse_series(|n| -2.0 * ((n + 1) as f64).ln(), 0, RatioLimits::exact(1.0), 10_000, 1e-9);
        assert!(matches!(square.status, SeriesStatus::Converges { .. }));
    }

    #[test]
    fn power_fit_recovers_exponent() {
        let fit = power_law_fit(|n| 2f64.ln() - 0.5 * (n as f64).ln(), 50, 100);
        assert!((fit.p + 0.5).abs() < 1e-12);
        assert!((fit.alpha - 2.0).abs() < 1e-10);
        assert!(fit.residual < 1e-12);
    }
}
