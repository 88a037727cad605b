//! Law of the maximum `Y` of one regeneration cycle (0 -> 1 up to the next
//! return to 0):
//!
//! ```text
//! P(Y <= n) = 1 - [ sum_{i=0..n} (psi(i) rho^i)^-1 ]^-1
//! ```
//!
//! together with the discrete failure rate, the blocking probability at
//! births, the dual process and tail asymptotics.
//!
//! All sums are kept in log space so that factorial-type weights neither
//! overflow nor lose the tail: `survival(n) = 1 - P(Y <= n)` is computed
//! directly rather than by subtraction from one.

use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::bdp::{BirthDeathSpec, Classification, Verdict, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::series::{self, log_add_exp, power_law_fit, richardson, POWER_FIT_TOL};

/// Lazily extended table of `ln S(n)`, `S(n) = sum_{i<=n} (psi(i) rho^i)^-1`.
#[derive(Debug)]
pub struct CycleMaxDistribution {
    spec: BirthDeathSpec,
    classification: Classification,
    p_finite: f64,
    ln_sums: RwLock<Vec<f64>>,
}

impl Clone for CycleMaxDistribution {
    fn clone(&self) -> Self {
        CycleMaxDistribution {
            spec: self.spec.clone(),
            classification: self.classification.clone(),
            p_finite: self.p_finite,
            ln_sums: RwLock::new(self.ln_sums.read().unwrap().clone()),
        }
    }
}

impl CycleMaxDistribution {
    pub fn new(spec: BirthDeathSpec) -> Self {
        let c = spec.classify();
        Self::with_classification(spec, c)
    }

    pub fn with_classification(spec: BirthDeathSpec, classification: Classification) -> Self {
        let p_finite = if classification.verdict == Verdict::Transient {
            1.0 - classification.b_star()
        } else {
            1.0
        };
        let first = -spec.ln_weight(0);
        CycleMaxDistribution { spec, classification, p_finite, ln_sums: RwLock::new(vec![first]) }
    }

    pub fn spec(&self) -> &BirthDeathSpec {
        &self.spec
    }

    pub fn classification(&self) -> &Classification {
        &self.classification
    }

    /// `P(Y < inf)`: one for recurrent chains, `1 - B_*` for transient ones.
    pub fn p_finite(&self) -> f64 {
        self.p_finite
    }

    pub fn is_transient(&self) -> bool {
        self.classification.verdict == Verdict::Transient
    }

    fn clamp(&self, n: usize) -> usize {
        self.spec.cap.map_or(n, |c| n.min(c))
    }

    /// `ln S(n)`; capped chains saturate at the cap.
    pub fn ln_partial_sum(&self, n: usize) -> f64 {
        let n = self.clamp(n);
        {
            let t = self.ln_sums.read().unwrap();
            if n < t.len() {
                return t[n];
            }
        }
        let mut t = self.ln_sums.write().unwrap();
        while t.len() <= n {
            let i = t.len();
            let next = log_add_exp(t[i - 1], -self.spec.ln_weight(i));
            t.push(next);
        }
        t[n]
    }

    /// `ln(1 - P(Y <= n))`.
    pub fn ln_survival(&self, n: usize) -> f64 {
        -self.ln_partial_sum(n)
    }

    /// `1 - P(Y <= n)`.
    pub fn survival(&self, n: usize) -> f64 {
        self.ln_survival(n).exp()
    }

    /// `P(Y <= n)`.
    pub fn cdf(&self, n: usize) -> f64 {
        0.0 - self.ln_survival(n).exp_m1()
    }

    /// `P(Y = n | Y >= n)`; zero past the cap, where the law is flat.
    pub fn failure_rate(&self, n: usize) -> f64 {
        if matches!(self.spec.cap, Some(c) if n > c) {
            return 0.0;
        }
        (-self.spec.ln_weight(n) - self.ln_partial_sum(n)).exp()
    }

    /// `ln sum_{i>n} (psi(i) rho^i)^-1` for transient chains.
    fn ln_transient_tail(&self, n: usize) -> f64 {
        let ratio = self.classification.psi_ratio_limits().scaled(self.spec.rho()).reciprocal();
        let mut acc = f64::NEG_INFINITY;
        let mut i = n + 1;
        loop {
            let t = -self.spec.ln_weight(i);
            acc = log_add_exp(acc, t);
            if t - acc < -40.0 || i > n + 1_000_000 {
                let r = ratio.upper;
                if r < 1.0 {
                    acc = log_add_exp(acc, t + r.ln() - (1.0 - r).ln());
                }
                return acc;
            }
            i += 1;
        }
    }

    /// `ln(1 - P(Y <= n | Y < inf))`, computed from the tail of the series
    /// rather than by cancellation.
    pub fn ln_conditional_survival(&self, n: usize) -> Result<f64> {
        if !self.is_transient() {
            return Err(Error::NotTransient);
        }
        // 1 - F(n)/p = T / (S (S_inf - 1)), T = S_inf - S(n)
        let s_inf = self.classification.b_star_inv;
        Ok(self.ln_transient_tail(n) - self.ln_partial_sum(n) - (s_inf - 1.0).ln())
    }

    /// `P(Y <= n | Y < inf)`.
    pub fn conditional_cdf(&self, n: usize) -> Result<f64> {
        Ok(0.0 - self.ln_conditional_survival(n)?.exp_m1())
    }

    /// `cdf(n) / p_finite`, which is the conditional law for transient chains
    /// and the plain law otherwise.
    pub fn normalised_cdf(&self, n: usize) -> f64 {
        if self.is_transient() {
            self.conditional_cdf(n).unwrap_or(f64::NAN)
        } else {
            self.cdf(n)
        }
    }
}

/// `P_0(X = n | X <= n) = psi(n) rho^n / sum_{i<=n} psi(i) rho^i` with the
/// uncapped `psi` (Erlang B at `n = c` for `psi = 1/n!`).
pub fn blocking_prob(spec: &BirthDeathSpec, n: usize) -> f64 {
    let ln_total = series::log_sum_exp((0..=n).map(|i| spec.ln_weight(i)));
    (spec.ln_weight(n) - ln_total).exp()
}

/// Blocking probabilities for `n = 0..=n_max` with one running sum.
pub fn blocking_probs(spec: &BirthDeathSpec, n_max: usize) -> Vec<f64> {
    let mut acc = f64::NEG_INFINITY;
    (0..=n_max)
        .map(|n| {
            let w = spec.ln_weight(n);
            acc = log_add_exp(acc, w);
            (w - acc).exp()
        })
        .collect()
}

/// The dual process: birth `mu phi(n)/psi(n)`, death `lambda phi(n)/psi(n-1)`,
/// realised as `lambda <-> mu`, `psi -> 1/psi`, `phi -> 1/phi`.
pub fn dual_process(spec: &BirthDeathSpec) -> BirthDeathSpec {
    let label = match spec.label.strip_prefix("dual(").and_then(|s| s.strip_suffix(')')) {
        Some(inner) => inner.to_string(),
        None => format!("dual({})", spec.label),
    };
    BirthDeathSpec {
        label,
        lambda: spec.mu,
        mu: spec.lambda,
        cap: spec.cap,
        psi: spec.psi.reciprocal(),
        phi: spec.phi.reciprocal(),
    }
}

/// Max over `n = 1..=n_max` of
/// `|P_{M(mu)/M(lambda)/1}(Y = n | Y >= n) - P_{M(lambda)/M(mu)/1}(X = n | X <= n)|`.
pub fn duality_check(lambda: f64, mu: f64, n_max: usize) -> Result<f64> {
    if lambda >= mu {
        return Err(Error::NotStable { lambda, mu });
    }
    let stable = BirthDeathSpec::mm1(lambda, mu)?;
    let dual = CycleMaxDistribution::new(dual_process(&stable));
    let blocking = blocking_probs(&stable, n_max);
    Ok((1..=n_max)
        .map(|n| (dual.failure_rate(n) - blocking[n]).abs())
        .fold(0.0, f64::max))
}

/// For the Erlang loss queue `M/M/c/c`: the failure rate `P(Y = c | Y >= c)`
/// and the Erlang loss probability `P_0(X = c | X <= c)`. No identity links
/// the two in general; both are reported.
pub fn erlang_loss_relation(servers: usize, rho: f64) -> Result<(f64, f64)> {
    let spec = BirthDeathSpec::erlang_loss(servers, rho, 1.0)?;
    let dist = CycleMaxDistribution::new(spec.clone());
    Ok((dist.failure_rate(servers), blocking_prob(&spec, servers)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
    NoLimit,
}

/// The normalising sequence multiplying the tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailScale {
    /// `(1 - F(n)) / (psi(n) rho^n)`
    InverseWeight,
    /// `psi(n) rho^n (1 - F(n | Y < inf))`
    Weight,
    /// `n^(1-p) (1 - F(n))`
    Power,
    /// `log(n) (1 - F(n))`
    Log,
    /// `1 - F(n)`
    Unit,
}

/// A limit observed at finite `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    pub n: usize,
    pub value: f64,
    /// Richardson extrapolation from `n/4, n/2, n`.
    pub extrapolated: f64,
    /// `|value - extrapolated|`
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailAsymptotics {
    pub regime: Regime,
    pub beta_rho: f64,
    pub limit_constant: f64,
    /// `[1 - upper*rho, 1 - lower*rho]` when the ratio has no limit.
    pub interval: Option<[f64; 2]>,
    /// `[(beta rho - 1) B_* (B_* - 1)]^-1`, the supercritical constant with
    /// `B_*` where the brute-force limit has `B_*^-1`. Reported for
    /// comparison only; for `B_* < 1` it is negative.
    pub alternative_constant: Option<f64>,
    pub scale: TailScale,
    pub p_exponent: Option<f64>,
    pub alpha: Option<f64>,
    pub probe: LimitEstimate,
}

fn probe<F: Fn(usize) -> Result<f64>>(v: F, n: usize) -> Result<LimitEstimate> {
    let q = n / 4;
    let value = v(n)?;
    let extrapolated = richardson(v(q)?, v(2 * q)?, v(4 * q)?);
    Ok(LimitEstimate { n, value, extrapolated, residual: (value - extrapolated).abs() })
}

/// Tail behaviour of `P(Y <= n)` by regime of `beta * rho`.
pub fn tail_asymptotics(spec: &BirthDeathSpec, n_probe: usize) -> Result<TailAsymptotics> {
    if n_probe < 100 {
        return Err(Error::InvalidSpec(format!("n_probe must be at least 100 (got {n_probe})")));
    }
    if spec.cap.is_some() {
        return Err(Error::NotApplicable("tail asymptotics of a capped chain".into()));
    }
    let dist = CycleMaxDistribution::new(spec.clone());
    let c = dist.classification().clone();
    let rho = spec.rho();
    let tol = DEFAULT_TOL;

    let inverse_weight = |n: usize| Ok((dist.ln_survival(n) - spec.ln_weight(n)).exp());

    let Some(beta) = c.beta else {
        let hi = c.beta_upper * rho;
        if hi >= 1.0 {
            return Err(Error::NotApplicable(format!(
                "ratio has no limit and upper ratio times rho is {hi}"
            )));
        }
        let interval = [1.0 - hi, 1.0 - c.beta_lower * rho];
        let value = inverse_weight(n_probe)?;
        let dist_to_interval = (interval[0] - value).max(value - interval[1]).max(0.0);
        return Ok(TailAsymptotics {
            regime: Regime::NoLimit,
            beta_rho: f64::NAN,
            limit_constant: interval[0],
            interval: Some(interval),
            alternative_constant: None,
            scale: TailScale::InverseWeight,
            p_exponent: None,
            alpha: None,
            probe: LimitEstimate { n: n_probe, value, extrapolated: value, residual: dist_to_interval },
        });
    };

    let beta_rho = beta * rho;
    if beta_rho < 1.0 - tol {
        return Ok(TailAsymptotics {
            regime: Regime::Subcritical,
            beta_rho,
            limit_constant: 1.0 - beta_rho,
            interval: None,
            alternative_constant: None,
            scale: TailScale::InverseWeight,
            p_exponent: None,
            alpha: None,
            probe: probe(inverse_weight, n_probe)?,
        });
    }
    if beta_rho > 1.0 + tol {
        let s_inf = c.b_star_inv;
        let b_star = c.b_star();
        let weighted = |n: usize| Ok((spec.ln_weight(n) + dist.ln_conditional_survival(n)?).exp());
        return Ok(TailAsymptotics {
            regime: Regime::Supercritical,
            beta_rho,
            limit_constant: 1.0 / ((beta_rho - 1.0) * s_inf * (s_inf - 1.0)),
            interval: None,
            alternative_constant: Some(1.0 / ((beta_rho - 1.0) * b_star * (b_star - 1.0))),
            scale: TailScale::Weight,
            p_exponent: None,
            alpha: None,
            probe: probe(weighted, n_probe)?,
        });
    }

    let fit = power_law_fit(|n| spec.ln_weight(n), n_probe / 2, n_probe);
    if fit.residual > POWER_FIT_TOL || !(fit.alpha.is_finite() && fit.alpha > 0.0) {
        return Err(Error::FitFailed { residual: fit.residual, tolerance: POWER_FIT_TOL });
    }
    let p = fit.p;
    let (scale, gamma) = if (p - 1.0).abs() <= 1e-6 {
        (TailScale::Log, fit.alpha)
    } else if p < 1.0 {
        (TailScale::Power, fit.alpha * (1.0 - p))
    } else {
        (TailScale::Unit, c.b_star())
    };
    let scaled = |n: usize| {
        let nf = n as f64;
        let delta = match scale {
            TailScale::Log => nf.ln(),
            TailScale::Power => nf.powf(1.0 - p),
            _ => 1.0,
        };
        Ok(delta * dist.survival(n))
    };
    Ok(TailAsymptotics {
        regime: Regime::Critical,
        beta_rho,
        limit_constant: gamma,
        interval: None,
        alternative_constant: None,
        scale,
        p_exponent: Some(p),
        alpha: Some(fit.alpha),
        probe: probe(scaled, n_probe)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdp::{TailRule, Weights};

    fn mm1(rho: f64) -> BirthDeathSpec {
        BirthDeathSpec::mm1(rho, 1.0).unwrap()
    }

    #[test]
    fn cdf_examples() {
        let d = CycleMaxDistribution::new(mm1(0.5));
        assert!((d.cdf(1) - 2.0 / 3.0).abs() < 1e-15);

        let d = CycleMaxDistribution::new(mm1(1.0));
        assert!((d.cdf(1) - 0.5).abs() < 1e-15);

        let d = CycleMaxDistribution::new(mm1(2.0));
        assert!((d.cdf(2000) - 0.5).abs() < 1e-12);
        assert!((d.p_finite() - 0.5).abs() < 1e-12);

        let capped = CycleMaxDistribution::new(mm1(1.0).with_cap(3).unwrap());
        assert!((capped.cdf(3) - 0.75).abs() < 1e-15);
        assert_eq!(capped.cdf(10), capped.cdf(3));
    }

    #[test]
    fn cdf_is_monotone_and_below_p_finite() {
        for spec in [mm1(0.3), mm1(2.0), BirthDeathSpec::mms(3, 2.0, 1.0).unwrap()] {
            let d = CycleMaxDistribution::new(spec);
            let mut prev = 0.0;
            for n in 1..200 {
                let f = d.cdf(n);
                assert!(f >= prev);
                assert!(f < d.p_finite() || (d.p_finite() - f) < 1e-15);
                prev = f;
            }
        }
    }

    #[test]
    fn failure_rate_examples() {
        let d = CycleMaxDistribution::new(mm1(1.0));
        assert!((d.failure_rate(2) - 1.0 / 3.0).abs() < 1e-15);

        let d = CycleMaxDistribution::new(BirthDeathSpec::mminf(1.0, 1.0).unwrap());
        assert!(d.failure_rate(40) > 0.97);
        assert!(d.failure_rate(160) > 0.993);
    }

    #[test]
    fn hazard_identity() {
        for spec in [mm1(0.5), mm1(1.5), BirthDeathSpec::mms(2, 1.2, 1.0).unwrap(), BirthDeathSpec::mminf(3.0, 1.0).unwrap()] {
            let d = CycleMaxDistribution::new(spec);
            for n in 2..15 {
                let via_cdf = (d.cdf(n) - d.cdf(n - 1)) / (1.0 - d.cdf(n - 1));
                assert!((d.failure_rate(n) - via_cdf).abs() < 1e-12, "n={n}");
            }
        }
    }

    fn erlang_b(c: usize, rho: f64) -> f64 {
        (1..=c).fold(1.0, |b, k| rho * b / (k as f64 + rho * b))
    }

    #[test]
    fn blocking_examples() {
        let erl = BirthDeathSpec::erlang_loss(2, 1.0, 1.0).unwrap();
        assert!((blocking_prob(&erl, 2) - 0.2).abs() < 1e-15);
        assert!((blocking_prob(&mm1(0.5), 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(blocking_prob(&mm1(0.5), 0), 1.0);
        let table = blocking_probs(&erl, 5);
        assert!((table[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn erlang_b_cross_check() {
        for c in [1usize, 2, 5, 10, 25, 50] {
            for rho in [0.1, 1.0, 5.0, 20.0] {
                let spec = BirthDeathSpec::erlang_loss(c, rho, 1.0).unwrap();
                let b = blocking_prob(&spec, c);
                let want = erlang_b(c, rho);
                assert!(((b - want) / want).abs() < 1e-10, "c={c} rho={rho}: {b} vs {want}");
            }
        }
    }

    #[test]
    fn duality_examples() {
        assert!(duality_check(1.0, 2.0, 50).unwrap() <= 1e-12);
        assert!(duality_check(0.1, 10.0, 20).unwrap() <= 1e-12);
        assert!(matches!(duality_check(2.0, 2.0, 5), Err(Error::NotStable { .. })));
        let (hazard, loss) = erlang_loss_relation(3, 1.0).unwrap();
        assert!(hazard > 0.0 && hazard <= 1.0);
        assert!((loss - erlang_b(3, 1.0)).abs() < 1e-14);
    }

    #[test]
    fn dual_is_an_involution() {
        let specs = [
            mm1(0.7),
            BirthDeathSpec::mms(3, 2.0, 1.3).unwrap(),
            BirthDeathSpec::mminf(2.0, 0.5).unwrap(),
            BirthDeathSpec::new(
                "t",
                0.8,
                1.1,
                None,
                Weights::table(vec![1.0, 0.7, 0.4], 0.6).unwrap(),
                Weights::log_table(vec![0.0, -0.2], TailRule::geometric(0.9)).unwrap(),
            )
            .unwrap(),
        ];
        for s in specs {
            let back = dual_process(&dual_process(&s));
            assert_eq!(back, s);
            for n in 0..=100 {
                assert_eq!(back.birth_rate(n).unwrap(), s.birth_rate(n).unwrap());
                if n > 0 {
                    assert_eq!(back.death_rate(n).unwrap(), s.death_rate(n).unwrap());
                }
            }
        }
    }

    #[test]
    fn dual_rates_and_classification() {
        let s = mm1(0.5);
        let d = dual_process(&s);
        assert_eq!((d.lambda, d.mu), (1.0, 0.5));
        for n in 1..20 {
            assert!((d.birth_rate(n).unwrap() - 1.0).abs() < 1e-15);
            assert!((d.death_rate(n).unwrap() - 0.5).abs() < 1e-15);
        }
        let t = mm1(2.0);
        assert_eq!(dual_process(&t).classify().verdict, Verdict::PositiveRecurrent);

        let inf_dual = dual_process(&BirthDeathSpec::mminf(1.0, 1.0).unwrap()).classify();
        assert_eq!(inf_dual.beta, Some(f64::INFINITY));
    }

    #[test]
    fn conditional_cdf_examples() {
        let d = CycleMaxDistribution::new(mm1(2.0));
        assert!((d.conditional_cdf(1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.conditional_cdf(200).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            CycleMaxDistribution::new(mm1(0.5)).conditional_cdf(1),
            Err(Error::NotTransient)
        ));
    }

    #[test]
    fn survival_weight_recursion() {
        for spec in [mm1(0.3), mm1(0.9), BirthDeathSpec::mms(3, 1.5, 1.0).unwrap(), BirthDeathSpec::mminf(2.0, 1.0).unwrap()] {
            let d = CycleMaxDistribution::new(spec.clone());
            // 1/T(n) = psi(n) rho^n S(n)
            let inv_t = |n: usize| (spec.ln_weight(n) + d.ln_partial_sum(n)).exp();
            for n in 0..200 {
                let ratio = (spec.ln_weight(n + 1) - spec.ln_weight(n)).exp();
                let rhs = ratio * inv_t(n) + 1.0;
                assert!(((inv_t(n + 1) - rhs) / rhs).abs() < 1e-10, "n={n}");
            }
        }
    }

    #[test]
    fn tail_regimes() {
        let t = tail_asymptotics(&BirthDeathSpec::mms(3, 1.5, 1.0).unwrap(), 200).unwrap();
        assert_eq!(t.regime, Regime::Subcritical);
        assert!((t.limit_constant - 0.5).abs() < 1e-12);
        // (s/rho)^n (1-F) = (1-F)/(psi rho^n) * s^s/s!
        assert!((t.probe.value * 27.0 / 6.0 - 2.25).abs() < 1e-9);

        let t = tail_asymptotics(&mm1(1.0), 100).unwrap();
        assert_eq!(t.regime, Regime::Critical);
        assert_eq!(t.scale, TailScale::Power);
        assert!((t.limit_constant - 1.0).abs() < 1e-9);
        assert!((t.probe.extrapolated - 1.0).abs() < 1e-4);

        let t = tail_asymptotics(&BirthDeathSpec::mms(2, 2.0, 1.0).unwrap(), 200).unwrap();
        assert!((t.limit_constant - 2.0).abs() < 1e-9);

        let t = tail_asymptotics(&mm1(2.0), 100).unwrap();
        assert_eq!(t.regime, Regime::Supercritical);
        assert!((t.limit_constant - 0.5).abs() < 1e-12);
        assert!((t.alternative_constant.unwrap() + 4.0).abs() < 1e-9);
        assert!((t.probe.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn critical_fit_failure() {
        // psi(n) rho^n ~ n (log n)^2 is outside the pure power family
        let ln: Vec<f64> = (0..4000)
            .map(|n| {
                let x = (n + 2) as f64;
                x.ln() + 2.0 * x.ln().ln()
            })
            .collect();
        let psi = Weights::log_table(ln, TailRule::geometric(1.0)).unwrap();
        let s = BirthDeathSpec::new("nlog", 1.0, 1.0, None, psi.clone(), psi).unwrap();
        // ratio window inside the table
        let r = tail_asymptotics(&s, 200);
        assert!(matches!(r, Err(Error::FitFailed { .. }) ), "{r:?}");
    }
}
