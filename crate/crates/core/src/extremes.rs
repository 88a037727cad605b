//! Extreme-value behaviour of the sample maximum `Y^(k)` of `k` cycles:
//! the continuous tail function `f`, Gumbel envelopes, stochastic
//! compactness diagnostics, norming constants and almost-sure normalisers.

use serde::{Deserialize, Serialize};

use crate::bdp::{BirthDeathSpec, Classification, Weights, DEFAULT_TOL};
use crate::cycle_max::CycleMaxDistribution;
use crate::error::{Error, Result};
use crate::lambert::lambert_wm1;
use crate::series::log_add_exp;

/// Knots kept in memory by default when building a tail function.
pub const DEFAULT_KNOTS: usize = 2000;

/// `f(y) = g(y)` for `y >= y0`, with `g` the linear interpolation of
/// `psi(n) rho^n`, and `f(y) = y0 - y + g(y0)` on `[0, y0]`.
#[derive(Debug, Clone)]
pub struct TailFunction {
    spec: BirthDeathSpec,
    y0: usize,
    ln_knots: Vec<f64>,
}

fn subcritical_check(c: &Classification) -> Result<()> {
    let beta_rho = c.beta_upper * c.rho;
    if beta_rho.is_finite() && beta_rho < 1.0 {
        Ok(())
    } else {
        Err(Error::NotSubcritical { beta_rho })
    }
}

/// Locates the start `y0` of the strictly decreasing regime within the
/// first `n_max` knots.
pub fn build_tail_function(spec: &BirthDeathSpec, n_max: usize) -> Result<TailFunction> {
    if spec.cap.is_some() {
        return Err(Error::NotApplicable("tail function of a capped chain".into()));
    }
    subcritical_check(&spec.classify())?;
    let n_max = n_max.max(2);
    let ln_knots: Vec<f64> = (0..=n_max).map(|n| spec.ln_weight(n)).collect();
    let last_rise = (0..n_max).rev().find(|&n| ln_knots[n + 1] >= ln_knots[n]);
    let y0 = last_rise.map_or(0, |n| n + 1);
    if y0 >= n_max {
        return Err(Error::NoMonotoneTail { n_max });
    }
    Ok(TailFunction { spec: spec.clone(), y0, ln_knots })
}

impl TailFunction {
    pub fn y0(&self) -> usize {
        self.y0
    }

    pub fn spec(&self) -> &BirthDeathSpec {
        &self.spec
    }

    /// `ln g(n) = ln psi(n) rho^n`.
    pub fn ln_knot(&self, n: usize) -> f64 {
        self.ln_knots.get(n).copied().unwrap_or_else(|| self.spec.ln_weight(n))
    }

    pub fn knot(&self, n: usize) -> f64 {
        self.ln_knot(n).exp()
    }

    /// `f(0) = y0 + g(y0)`, the largest invertible value.
    pub fn max_value(&self) -> f64 {
        self.y0 as f64 + self.knot(self.y0)
    }

    pub fn eval(&self, y: f64) -> f64 {
        let y = y.max(0.0);
        let y0 = self.y0 as f64;
        if y <= y0 {
            return y0 - y + self.knot(self.y0);
        }
        let n = y.floor() as usize;
        let t = y - n as f64;
        let (a, b) = (self.knot(n), self.knot(n + 1));
        a + t * (b - a)
    }

    /// `f^{-1}(exp(ln_v))`; the linear pieces are solved exactly.
    pub fn invert_ln(&self, ln_v: f64) -> Result<f64> {
        let max = self.max_value();
        if !(ln_v.is_finite() || ln_v == f64::NEG_INFINITY) || ln_v > max.ln() {
            return Err(Error::OutOfRange { value: ln_v.exp(), max });
        }
        if ln_v == f64::NEG_INFINITY {
            return Err(Error::OutOfRange { value: 0.0, max });
        }
        let g0 = self.ln_knot(self.y0);
        if ln_v >= g0 {
            return Ok(self.y0 as f64 + self.knot(self.y0) - ln_v.exp());
        }
        // bracket ln g(lo) >= ln v > ln g(hi)
        let mut lo = self.y0;
        let mut step = 1usize;
        let mut hi = lo + step;
        while self.ln_knot(hi) >= ln_v {
            lo = hi;
            step *= 2;
            hi = lo + step;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.ln_knot(mid) >= ln_v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let g_lo = self.ln_knot(lo);
        let num = -(ln_v - g_lo).exp_m1();
        let den = -(self.ln_knot(lo + 1) - g_lo).exp_m1();
        Ok(lo as f64 + num / den)
    }

    pub fn invert(&self, v: f64) -> Result<f64> {
        if v.is_nan() || v <= 0.0 {
            return Err(Error::OutOfRange { value: v, max: self.max_value() });
        }
        self.invert_ln(v.ln())
    }

    /// `f^{-1}(exp(ln_v))`, clamped to `0` above `f(0)`.
    fn invert_ln_clamped(&self, ln_v: f64) -> f64 {
        self.invert_ln(ln_v).unwrap_or(0.0)
    }
}

/// `[exp(-e^{-x} / (beta rho)), exp(-e^{-x})]`.
pub fn envelope(beta_rho: f64, x: f64) -> (f64, f64) {
    let ex = (-x).exp();
    ((-ex / beta_rho).exp(), (-ex).exp())
}

/// Thresholds and bound values at one `(x, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelBounds {
    pub x: f64,
    pub k: f64,
    /// `f^{-1}(e^{-x} / ((1 - beta_lower rho) k)) + 1`: liminf of
    /// `P(Y^(k) <= y_lower)` is at least `exp(-e^{-x})`.
    pub y_lower: f64,
    /// `f^{-1}(e^{-x} / ((1 - beta_upper rho) k))`: limsup of
    /// `P(Y^(k) <= y_upper)` is at most `upper`.
    pub y_upper: f64,
    /// Unshifted lower threshold, carrying `lower` when `beta_lower > 0`.
    pub y_sharp: Option<f64>,
    /// `exp(-(beta_lower rho)^{-1} e^{-x})` if `beta_lower > 0`, else `exp(-e^{-x})`
    /// (attained at `y_lower`).
    pub lower: f64,
    /// `exp(-e^{-x})`
    pub upper: f64,
}

pub fn gumbel_bounds(tail: &TailFunction, x: f64, k: f64) -> Result<GumbelBounds> {
    let c = tail.spec().classify();
    subcritical_check(&c)?;
    let rho = c.rho;
    let (hi_br, lo_br) = (c.beta_upper * rho, c.beta_lower * rho);
    let ln_k = k.ln();
    let y_sharp_val = tail.invert_ln_clamped(-x - (1.0 - lo_br).ln() - ln_k);
    let y_upper = tail.invert_ln_clamped(-x - (1.0 - hi_br).ln() - ln_k);
    let gumbel = (-(-x).exp()).exp();
    let (y_sharp, lower) = if c.beta_lower > DEFAULT_TOL {
        (Some(y_sharp_val), (-(-x).exp() / lo_br).exp())
    } else {
        (None, gumbel)
    };
    Ok(GumbelBounds { x, k, y_lower: y_sharp_val + 1.0, y_upper, y_sharp, lower, upper: gumbel })
}

/// Partial limits `exp(-exp(-x + eps))`: recurrent chains with
/// `0 < beta rho < 1` have `eps` in `[log(beta rho), 0]`, transient chains
/// (conditioned on `Y < inf`) with `beta rho > 1` have `eps` in
/// `[-log(beta rho), 0]`. Returned as `(lower, upper)`.
pub fn partial_limit_envelope(spec: &BirthDeathSpec, x: f64) -> Result<(f64, f64)> {
    let c = spec.classify();
    let beta = c.beta.ok_or_else(|| Error::NotApplicable("psi ratio has no limit".into()))?;
    if beta <= DEFAULT_TOL || !beta.is_finite() {
        return Err(Error::NotApplicable(format!("beta = {beta}")));
    }
    let br = beta * c.rho;
    if (br - 1.0).abs() <= DEFAULT_TOL {
        return Err(Error::NotApplicable("beta rho = 1".into()));
    }
    let shrink = br.min(1.0 / br);
    let ex = (-x).exp();
    Ok(((-ex).exp(), (-shrink * ex).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompactnessVerdict {
    Compact,
    NotCompact,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompactnessMode {
    Recurrent,
    /// The law of `Y | Y < inf` of a transient chain.
    TransientConditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactnessReport {
    pub mode: CompactnessMode,
    pub delta: f64,
    pub grid: Vec<f64>,
    /// `R(x)` at each grid point.
    pub ratios: Vec<f64>,
    #[serde(rename = "R_min")]
    pub r_min: f64,
    #[serde(rename = "R_max")]
    pub r_max: f64,
    /// `(1 - F(n-1)) / (1 - F(n))` at `n = floor(x)` for each grid point.
    pub hazard_ratios: Vec<f64>,
    /// `[log(beta rho), 0]` or `[-log(beta rho), 0]` for compact laws.
    pub epsilon_range: Option<[f64; 2]>,
    pub verdict: CompactnessVerdict,
}

/// Margin keeping `R` away from 0 and 1 for a compact verdict.
pub const COMPACT_MARGIN: f64 = 1e-3;

/// `R(x) = int_x^inf s^delta / (s(x) int_x^inf s^(delta-1))` for the step
/// survival `s`, summed exactly up to where terms are negligible and closed
/// with a geometric tail at ratio `r`.
fn compactness_ratio<F: Fn(usize) -> f64>(ln_s: &F, r: f64, delta: f64, x: f64) -> f64 {
    let m = x.max(0.0).floor() as usize;
    let frac = m as f64 + 1.0 - x.max(0.0);
    let base = ln_s(m);
    // normalised by s(m)^delta and s(m)^(delta-1)
    let mut num = frac.ln();
    let mut den = frac.ln();
    let mut n = m + 1;
    loop {
        let d = ln_s(n) - base;
        let tn = delta * d;
        let td = (delta - 1.0) * d;
        num = log_add_exp(num, tn);
        den = log_add_exp(den, td);
        if (td - den < -40.0 && tn - num < -40.0) || n > m + 200_000 {
            if r > 0.0 && r < 1.0 {
                let rd = r.powf(delta);
                let rd1 = r.powf(delta - 1.0);
                num = log_add_exp(num, tn + rd.ln() - (1.0 - rd).ln());
                if rd1 < 1.0 {
                    den = log_add_exp(den, td + rd1.ln() - (1.0 - rd1).ln());
                }
            }
            break;
        }
        n += 1;
    }
    (num - den).exp()
}

/// Evaluates the stochastic-compactness ratio `R(x)` on `x_grid` for the
/// law of `Y` (recurrent) or of `Y | Y < inf` (transient).
pub fn compactness_diagnostic(spec: &BirthDeathSpec, delta: f64, x_grid: &[f64]) -> Result<CompactnessReport> {
    if delta.is_nan() || delta <= 1.0 {
        return Err(Error::InvalidSpec(format!("delta must exceed 1 (got {delta})")));
    }
    let dist = CycleMaxDistribution::new(spec.clone());
    let c = dist.classification().clone();
    let transient = dist.is_transient();
    let mode = if transient { CompactnessMode::TransientConditional } else { CompactnessMode::Recurrent };
    let rho = c.rho;
    let ln_s = |n: usize| {
        if transient {
            dist.ln_conditional_survival(n).unwrap_or(f64::NEG_INFINITY)
        } else {
            dist.ln_survival(n)
        }
    };
    // tail ratio of s: beta rho (recurrent) or 1/(beta rho) (transient)
    let r = if transient {
        1.0 / (c.beta_lower * rho)
    } else {
        c.beta_upper * rho
    };

    let ratios: Vec<f64> = x_grid.iter().map(|&x| compactness_ratio(&ln_s, r, delta, x)).collect();
    let hazard_ratios: Vec<f64> = x_grid
        .iter()
        .map(|&x| {
            let n = (x.max(1.0).floor()) as usize;
            (ln_s(n - 1) - ln_s(n)).exp()
        })
        .collect();
    let r_min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let r_max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let br = c.beta.map(|b| b * rho);
    let degenerate = match (c.beta, transient) {
        (Some(b), false) => b <= DEFAULT_TOL,
        (Some(b), true) => !b.is_finite(),
        (None, _) => false,
    };
    let in_range = match (br, transient) {
        (Some(x), false) => x > DEFAULT_TOL && x < 1.0 - DEFAULT_TOL,
        (Some(x), true) => x > 1.0 + DEFAULT_TOL && x.is_finite(),
        _ => false,
    };
    let bounded = r_min > COMPACT_MARGIN && r_max < 1.0 - COMPACT_MARGIN;
    let verdict = if spec.cap.is_some() || degenerate {
        CompactnessVerdict::NotCompact
    } else if in_range && bounded {
        CompactnessVerdict::Compact
    } else {
        CompactnessVerdict::Inconclusive
    };
    let epsilon_range = match (verdict, br) {
        (CompactnessVerdict::Compact, Some(x)) => Some([-(x.ln().abs()), 0.0]),
        _ => None,
    };
    Ok(CompactnessReport {
        mode,
        delta,
        grid: x_grid.to_vec(),
        ratios,
        r_min,
        r_max,
        hazard_ratios,
        epsilon_range,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormingKind {
    /// `0 < beta rho < 1`
    Geometric,
    /// `psi(n) rho^n ~ gamma^n / n!`
    StirlingFactorial,
    /// `f(y) = y^c q^y`, inverted with Lambert W.
    LambertW,
    /// Inversion of the tail function.
    Numeric,
}

impl NormingKind {
    pub fn name(self) -> &'static str {
        match self {
            NormingKind::Geometric => "geometric",
            NormingKind::StirlingFactorial => "stirling_factorial",
            NormingKind::LambertW => "lambert_w",
            NormingKind::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormingConstants {
    pub kind: NormingKind,
    pub k: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

fn mismatch(kind: NormingKind, reason: impl Into<String>) -> Error {
    Error::KindMismatch { kind: kind.name(), reason: reason.into() }
}

/// `gamma` with `psi(n) rho^n ~ gamma^n / n!`, when the weights have that form.
pub fn factorial_rate(spec: &BirthDeathSpec) -> Option<f64> {
    match &spec.psi {
        Weights::InfiniteServer => Some(spec.rho()),
        Weights::Table { tail, .. } if tail.factorial == 1.0 && tail.power == 0.0 => Some(tail.ratio * spec.rho()),
        _ => None,
    }
}

/// `(c, q)` with `psi(n) rho^n ~ const * n^c q^n`, from a table tail rule
/// with a power correction.
pub fn power_geometric_tail(spec: &BirthDeathSpec) -> Option<(f64, f64)> {
    match &spec.psi {
        Weights::Table { tail, .. } if tail.factorial == 0.0 => {
            Some((tail.power, tail.ratio * spec.rho()))
        }
        _ => None,
    }
}

/// `ln f(x)` for `f(x) = (2 pi)^{-1/2} (gamma e)^x x^{-x-1/2}`.
fn ln_stirling(gamma: f64, x: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI).ln() + x * (gamma.ln() + 1.0) - (x + 0.5) * x.ln()
}

/// Large root of `f(x) = 1/k` for the Stirling tail.
pub fn stirling_inverse(gamma: f64, k: f64) -> f64 {
    let target = -k.ln();
    // f decreases past its mode near x = gamma
    let mut lo = gamma.max(1e-3);
    let mut hi = lo + 1.0;
    while ln_stirling(gamma, hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    if ln_stirling(gamma, lo) < target {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ln_stirling(gamma, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Large root `y` of `y^c q^y = v` (`0 < q < 1`), through the lower branch
/// of Lambert W; `c = 0` is the geometric case.
pub fn lambert_tail_inverse(c: f64, q: f64, v: f64) -> f64 {
    let l = -q.ln();
    if c == 0.0 {
        return -v.ln() / l;
    }
    // y e^{-l y / c} = v^{1/c}  =>  -l y / c = W(-(l / c) v^{1/c})
    let arg = -(l / c) * (v.ln() / c).exp();
    -(c / l) * lambert_wm1(arg)
}

fn lambert_constants(c: f64, q: f64, ks: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let l = -q.ln();
    let b: Vec<f64> = ks.iter().map(|&k| lambert_tail_inverse(c, q, 1.0 / k)).collect();
    let a = b.iter().map(|&bk| 1.0 / (l - c / bk)).collect();
    (a, b)
}

fn affine_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Grid used to fit `a_k` for the numeric kind.
pub fn numeric_fit_grid() -> Vec<f64> {
    (0..=70).map(|i| -2.0 + 0.1 * i as f64).collect()
}

pub fn norming_constants(spec: &BirthDeathSpec, kind: NormingKind, ks: &[f64]) -> Result<NormingConstants> {
    if ks.iter().any(|&k| k.is_nan() || k < 1.0) {
        return Err(Error::InvalidSpec("k must be at least 1".into()));
    }
    let c = spec.classify();
    let (a, b) = match kind {
        NormingKind::Geometric => {
            let br = c
                .beta
                .map(|b| b * c.rho)
                .filter(|br| *br > DEFAULT_TOL && *br < 1.0 - DEFAULT_TOL)
                .ok_or_else(|| mismatch(kind, format!("needs 0 < beta rho < 1 (beta = {:?})", c.beta)))?;
            let l = -br.ln();
            (vec![1.0 / l; ks.len()], ks.iter().map(|k| k.ln() / l).collect())
        }
        NormingKind::StirlingFactorial => {
            let gamma = factorial_rate(spec).ok_or_else(|| mismatch(kind, "weights are not of the form gamma^n / n!"))?;
            let b: Vec<f64> = ks.iter().map(|&k| stirling_inverse(gamma, k)).collect();
            let a = b.iter().map(|&bk| 1.0 / (bk.ln() + 0.5 / bk - gamma.ln())).collect();
            (a, b)
        }
        NormingKind::LambertW => {
            let (cp, q) = power_geometric_tail(spec)
                .filter(|(cp, q)| *cp >= 0.0 && *q > 0.0 && *q < 1.0)
                .ok_or_else(|| mismatch(kind, "needs a table tail n^c q^n with 0 < q < 1"))?;
            lambert_constants(cp, q, ks)
        }
        NormingKind::Numeric => {
            let tf = build_tail_function(spec, DEFAULT_KNOTS).map_err(|e| mismatch(kind, e.to_string()))?;
            let grid = numeric_fit_grid();
            let mut a = Vec::with_capacity(ks.len());
            let mut b = Vec::with_capacity(ks.len());
            for &k in ks {
                let ln_k = k.ln();
                b.push(tf.invert_ln_clamped(-ln_k));
                let ys: Vec<f64> = grid.iter().map(|&y| tf.invert_ln_clamped(-y - ln_k)).collect();
                a.push(affine_slope(&grid, &ys));
            }
            (a, b)
        }
    };
    Ok(NormingConstants { kind, k: ks.to_vec(), a, b })
}

/// `max |f^{-1}(e^{-y}/k) / (a y + b) - 1|` over `y_grid`, skipping points
/// where `e^{-y}/k` exceeds `f(0)`.
pub fn compatibility_error(tail: &TailFunction, k: f64, a: f64, b: f64, y_grid: &[f64]) -> f64 {
    y_grid
        .iter()
        .filter_map(|&y| tail.invert_ln(-y - k.ln()).ok().map(|inv| (inv / (a * y + b) - 1.0).abs()))
        .fold(0.0, f64::max)
}

/// Deterministic normaliser `b_k` with `Y^(k) / b_k -> 1` almost surely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LimitConstant {
    Exact { value: f64 },
    /// `[log k / log(1/(beta_lower rho)), log k / log(1/(beta_upper rho))]`
    /// when the ratio has no limit.
    Bracket { lower: f64, upper: f64 },
}

impl LimitConstant {
    pub fn value(&self) -> Option<f64> {
        match self {
            LimitConstant::Exact { value } => Some(*value),
            LimitConstant::Bracket { .. } => None,
        }
    }
}

pub fn as_limit_constant(spec: &BirthDeathSpec, k: f64) -> Result<LimitConstant> {
    if let Some(cap) = spec.cap {
        return Ok(LimitConstant::Exact { value: cap as f64 });
    }
    if let Some(gamma) = factorial_rate(spec) {
        return Ok(LimitConstant::Exact { value: stirling_inverse(gamma, k) });
    }
    let c = spec.classify();
    let rho = c.rho;
    match c.beta {
        Some(b) if b * rho > DEFAULT_TOL && b * rho < 1.0 - DEFAULT_TOL => {
            Ok(LimitConstant::Exact { value: k.ln() / -(b * rho).ln() })
        }
        None if c.beta_lower > 0.0 && c.beta_upper * rho < 1.0 => Ok(LimitConstant::Bracket {
            lower: k.ln() / -(c.beta_lower * rho).ln(),
            upper: k.ln() / -(c.beta_upper * rho).ln(),
        }),
        _ => Err(Error::NotApplicable(format!(
            "no almost-sure normaliser for beta = {:?}, rho = {rho}",
            c.beta
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm1(rho: f64) -> BirthDeathSpec {
        BirthDeathSpec::mm1(rho, 1.0).unwrap()
    }

    #[test]
    fn tail_function_y0() {
        let tf = build_tail_function(&mm1(0.5), 100).unwrap();
        assert_eq!(tf.y0(), 0);
        assert!((tf.eval(3.0) - 0.125).abs() < 1e-15);
        assert!((tf.eval(3.5) - 0.09375).abs() < 1e-15);

        let inf = build_tail_function(&BirthDeathSpec::mminf(2.0, 1.0).unwrap(), 100).unwrap();
        assert_eq!(inf.y0(), 2);
        assert!((inf.eval(0.0) - 4.0).abs() < 1e-12);
        assert!((inf.eval(1.0) - 3.0).abs() < 1e-12);

        let m2 = build_tail_function(&BirthDeathSpec::mms(2, 1.0, 1.0).unwrap(), 100).unwrap();
        assert_eq!(m2.y0(), 1);

        assert!(matches!(build_tail_function(&mm1(1.0), 100), Err(Error::NotSubcritical { .. })));
    }

    #[test]
    fn inversion() {
        let tf = build_tail_function(&mm1(0.5), 100).unwrap();
        for m in 1..40 {
            let y = tf.invert(0.5f64.powi(m)).unwrap();
            assert!((y - m as f64).abs() < 1e-9, "m={m}: {y}");
        }
        for y in [0.2, 1.5, 3.7, 12.25] {
            assert!((tf.invert(tf.eval(y)).unwrap() - y).abs() < 1e-9);
        }
        assert!(matches!(tf.invert(1.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(tf.invert(0.0), Err(Error::OutOfRange { .. })));

        let inf = build_tail_function(&BirthDeathSpec::mminf(2.0, 1.0).unwrap(), 100).unwrap();
        for y in [0.3, 1.9, 2.5, 7.1, 30.6] {
            assert!((inf.invert(inf.eval(y)).unwrap() - y).abs() < 1e-8, "y={y}");
        }
    }

    #[test]
    fn tail_function_monotone() {
        let tf = build_tail_function(&BirthDeathSpec::mminf(3.0, 1.0).unwrap(), 200).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..400 {
            let v = tf.eval(i as f64 * 0.1);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn envelopes() {
        let (lo, hi) = envelope(0.5, 0.0);
        assert!((lo - (-2f64).exp()).abs() < 1e-15 && (hi - (-1f64).exp()).abs() < 1e-15);
        let tf = build_tail_function(&mm1(0.5), 100).unwrap();
        let g = gumbel_bounds(&tf, 0.0, 1e4).unwrap();
        assert!((g.lower - (-2f64).exp()).abs() < 1e-12);
        assert!(g.y_lower > g.y_upper);
        let far = gumbel_bounds(&tf, 40.0, 1e4).unwrap();
        assert!(far.lower > 1.0 - 1e-12 && far.upper > 1.0 - 1e-12);

        let (lo, hi) = partial_limit_envelope(&mm1(0.5), 1.0).unwrap();
        assert!((lo - (-(-1f64).exp()).exp()).abs() < 1e-15);
        assert!((hi - (-0.5 * (-1f64).exp()).exp()).abs() < 1e-15);
        let (lo, hi) = partial_limit_envelope(&mm1(2.0), 1.0).unwrap();
        assert!(lo < hi && (hi - (-0.5 * (-1f64).exp()).exp()).abs() < 1e-15);
        assert!(partial_limit_envelope(&mm1(1.0), 0.0).is_err());
        assert!(partial_limit_envelope(&BirthDeathSpec::mminf(1.0, 1.0).unwrap(), 0.0).is_err());
    }

    #[test]
    fn norming_examples() {
        let s = BirthDeathSpec::mms(3, 1.5, 1.0).unwrap();
        let n = norming_constants(&s, NormingKind::Geometric, &[10f64.exp()]).unwrap();
        assert!((n.a[0] - 1.0 / 2f64.ln()).abs() < 1e-9);
        assert!((n.b[0] - 10.0 / 2f64.ln()).abs() < 1e-8);
        assert!(matches!(
            norming_constants(&BirthDeathSpec::mminf(1.0, 1.0).unwrap(), NormingKind::Geometric, &[10.0]),
            Err(Error::KindMismatch { .. })
        ));
        assert!(matches!(
            norming_constants(&s, NormingKind::StirlingFactorial, &[10.0]),
            Err(Error::KindMismatch { .. })
        ));

        let num = norming_constants(&mm1(0.5), NormingKind::Numeric, &[1e6]).unwrap();
        assert!((num.b[0] - 1e6f64.log2()).abs() < 0.1);
        assert!((num.a[0] - 1.0 / 2f64.ln()).abs() < 0.05);
    }

    #[test]
    fn lambert_inverse_against_bisection() {
        let (c, q, v) = (1.0f64, 0.5f64, 0.1f64);
        let y = lambert_tail_inverse(c, q, v);
        let h = |y: f64| y.ln() + y * q.ln() - v.ln();
        let (mut lo, mut hi) = (1.0 / -q.ln(), 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((y - lo).abs() < 1e-9, "{y} vs {lo}");
        assert!((y - 5.87).abs() < 0.05);
        assert!((lambert_tail_inverse(0.0, 0.5, 1.0 / 1024.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn stirling_inverse_solves() {
        for k in [1e3, 1e5, 1e8] {
            let b = stirling_inverse(1.0, k);
            assert!((ln_stirling(1.0, b) + k.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn limit_constants() {
        let s = BirthDeathSpec::mms(3, 1.5, 1.0).unwrap();
        let v = as_limit_constant(&s, 10f64.exp()).unwrap().value().unwrap();
        assert!((v - 14.427).abs() < 1e-3);
        let one = as_limit_constant(&mm1(0.5), 10f64.exp()).unwrap().value().unwrap();
        assert!((one - v).abs() < 1e-9);
        let capped = as_limit_constant(&mm1(1.0).with_cap(4).unwrap(), 1e6).unwrap();
        assert_eq!(capped, LimitConstant::Exact { value: 4.0 });
        assert!(as_limit_constant(&mm1(1.0), 1e3).is_err());
    }

    #[test]
    fn compactness_examples() {
        let grid: Vec<f64> = (5..=30).map(|x| x as f64 + 0.5).collect();
        let r = compactness_diagnostic(&mm1(0.5), 2.0, &grid).unwrap();
        assert_eq!(r.verdict, CompactnessVerdict::Compact);
        assert!(r.r_min > 0.0 && r.r_max < 1.0);

        let inf = compactness_diagnostic(&BirthDeathSpec::mminf(1.0, 1.0).unwrap(), 2.0, &[30.0]).unwrap();
        assert_eq!(inf.verdict, CompactnessVerdict::NotCompact);
        assert!(inf.hazard_ratios[0] > 10.0);

        let tr = compactness_diagnostic(&mm1(2.0), 2.0, &grid).unwrap();
        assert_eq!(tr.mode, CompactnessMode::TransientConditional);
        assert_eq!(tr.verdict, CompactnessVerdict::Compact);
        let eps = tr.epsilon_range.unwrap();
        assert!((eps[0] + 2f64.ln()).abs() < 1e-9 && eps[1] == 0.0);
    }

    #[test]
    fn compactness_ratio_geometric_closed_form() {
        // s(n) = r^n exactly: R(integer x) = (1 - r^(d-1)) / (1 - r^d)
        let r: f64 = 0.5;
        let ln_s = |n: usize| n as f64 * r.ln();
        let got = compactness_ratio(&ln_s, r, 2.0, 7.0);
        assert!((got - (1.0 - r) / (1.0 - r * r)).abs() < 1e-14);
    }
}
