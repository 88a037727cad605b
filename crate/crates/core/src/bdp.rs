//! Birth-death processes in the `(psi, phi)` parametrisation
//!
//! ```text
//! birth(n) = lambda * psi(n) / phi(n),   death(n) = mu * psi(n-1) / phi(n)
//! ```
//!
//! with recurrence classification and stationary / Palm distributions.
//!
//! Classification follows the standard birth-death criterion: the chain is
//! transient iff `sum (psi(n) rho^n)^-1 < inf`, null recurrent iff that series
//! and `sum phi(n) rho^n` both diverge, and positive recurrent iff the latter
//! converges while the former diverges.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::series::{self, RatioLimits, SeriesStatus};

pub const DEFAULT_TRUNC: usize = 10_000;
pub const DEFAULT_TOL: f64 = 1e-9;

fn ln_fact(n: usize) -> f64 {
    ln_factorial(n as u64)
}

/// Extrapolation rule for a table beyond its last entry `a = len - 1`:
///
/// `ln v(n) = ln v(a) + (n - a) ln ratio + power (ln n - ln a) - factorial (ln n! - ln a!)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRule {
    pub ratio: f64,
    pub power: f64,
    pub factorial: f64,
}

impl TailRule {
    pub fn geometric(ratio: f64) -> Self {
        TailRule { ratio, power: 0.0, factorial: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TableValues {
    Linear(Vec<f64>),
    Log(Vec<f64>),
}

impl TableValues {
    fn len(&self) -> usize {
        match self {
            TableValues::Linear(v) | TableValues::Log(v) => v.len(),
        }
    }

    fn ln_at(&self, n: usize) -> f64 {
        match self {
            TableValues::Linear(v) => v[n].ln(),
            TableValues::Log(v) => v[n],
        }
    }
}

/// A positive weight sequence `n -> psi(n)` (or `phi(n)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightsDoc", into = "WeightsDoc")]
pub enum Weights {
    /// `1` for all `n`.
    SingleServer,
    /// `1/n!` for `n <= s`, `s^(s-n)/s!` beyond.
    MultiServer { servers: u32 },
    /// `1/n!`.
    InfiniteServer,
    /// Explicit prefix with a tail extrapolation rule.
    Table { values: TableValues, tail: TailRule },
    /// `1 / w(n)`.
    Reciprocal(Box<Weights>),
}

impl Weights {
    pub fn table(values: Vec<f64>, tail_ratio: f64) -> Result<Self> {
        Weights::Table { values: TableValues::Linear(values), tail: TailRule::geometric(tail_ratio) }
            .validated()
    }

    pub fn log_table(ln_values: Vec<f64>, tail: TailRule) -> Result<Self> {
        Weights::Table { values: TableValues::Log(ln_values), tail }.validated()
    }

    /// The reciprocal sequence; `reciprocal(reciprocal(w)) == w` structurally.
    pub fn reciprocal(&self) -> Self {
        match self {
            Weights::Reciprocal(inner) => (**inner).clone(),
            other => Weights::Reciprocal(Box::new(other.clone())),
        }
    }

    fn validated(self) -> Result<Self> {
        match &self {
            Weights::MultiServer { servers } if *servers == 0 => {
                return Err(Error::InvalidSpec("multi-server preset needs s >= 1".into()))
            }
            Weights::Table { values, tail } => {
                if values.len() < 1 {
                    return Err(Error::InvalidSpec("table must have at least one value".into()));
                }
                let ok = match values {
                    TableValues::Linear(v) => v.iter().all(|x| x.is_finite() && *x > 0.0),
                    TableValues::Log(v) => v.iter().all(|x| x.is_finite()),
                };
                if !ok {
                    return Err(Error::InvalidSpec("table values must be finite and positive".into()));
                }
                if !(tail.ratio.is_finite() && tail.ratio > 0.0) {
                    return Err(Error::InvalidSpec("tail_ratio must be finite and positive".into()));
                }
                if !(tail.power.is_finite() && tail.factorial.is_finite()) {
                    return Err(Error::InvalidSpec("tail exponents must be finite".into()));
                }
                if tail.power != 0.0 && values.len() < 2 {
                    return Err(Error::InvalidSpec("tail_power needs at least two table values".into()));
                }
            }
            Weights::Reciprocal(inner) => {
                (**inner).clone().validated()?;
            }
            _ => {}
        }
        Ok(self)
    }

    /// `ln w(n)`.
    pub fn ln_value(&self, n: usize) -> f64 {
        match self {
            Weights::SingleServer => 0.0,
            Weights::MultiServer { servers } => {
                let s = *servers as usize;
                if n <= s {
                    -ln_fact(n)
                } else {
                    (s as f64 - n as f64) * (s as f64).ln() - ln_fact(s)
                }
            }
            Weights::InfiniteServer => -ln_fact(n),
            Weights::Table { values, tail } => {
                let len = values.len();
                if n < len {
                    return values.ln_at(n);
                }
                let a = len - 1;
                let mut v = values.ln_at(a) + (n - a) as f64 * tail.ratio.ln();
                if tail.power != 0.0 {
                    v += tail.power * ((n as f64).ln() - (a as f64).ln());
                }
                if tail.factorial != 0.0 {
                    v -= tail.factorial * (ln_fact(n) - ln_fact(a));
                }
                v
            }
            Weights::Reciprocal(inner) => -inner.ln_value(n),
        }
    }

    pub fn value(&self, n: usize) -> f64 {
        self.ln_value(n).exp()
    }

    /// Closed-form `lim w(n+1)/w(n)` when the representation makes it known.
    pub fn known_ratio_limit(&self) -> Option<f64> {
        match self {
            Weights::SingleServer => Some(1.0),
            Weights::MultiServer { servers } => Some(1.0 / *servers as f64),
            Weights::InfiniteServer => Some(0.0),
            Weights::Table { tail, .. } if tail.factorial > 0.0 => Some(0.0),
            Weights::Table { tail, .. } if tail.factorial < 0.0 => Some(f64::INFINITY),
            Weights::Table { tail, .. } => Some(tail.ratio),
            Weights::Reciprocal(inner) => inner.known_ratio_limit().map(|l| 1.0 / l),
        }
    }
}

/// JSON form of [`Weights`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum WeightsDoc {
    Preset {
        name: PresetName,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        s: Option<u32>,
    },
    Table {
        values: Vec<f64>,
        tail_ratio: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        tail_power: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        tail_factorial: f64,
    },
    LogTable {
        ln_values: Vec<f64>,
        tail_ratio: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        tail_power: f64,
        #[serde(default, skip_serializing_if = "is_zero")]
        tail_factorial: f64,
    },
    Reciprocal {
        of: Box<WeightsDoc>,
    },
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PresetName {
    Mm1,
    Mms,
    Mminf,
}

impl TryFrom<WeightsDoc> for Weights {
    type Error = Error;

    fn try_from(doc: WeightsDoc) -> Result<Self> {
        let w = match doc {
            WeightsDoc::Preset { name: PresetName::Mm1, .. } => Weights::SingleServer,
            WeightsDoc::Preset { name: PresetName::Mminf, .. } => Weights::InfiniteServer,
            WeightsDoc::Preset { name: PresetName::Mms, s } => Weights::MultiServer {
                servers: s.ok_or_else(|| Error::InvalidSpec("preset mms needs \"s\"".into()))?,
            },
            WeightsDoc::Table { values, tail_ratio, tail_power, tail_factorial } => Weights::Table {
                values: TableValues::Linear(values),
                tail: TailRule { ratio: tail_ratio, power: tail_power, factorial: tail_factorial },
            },
            WeightsDoc::LogTable { ln_values, tail_ratio, tail_power, tail_factorial } => Weights::Table {
                values: TableValues::Log(ln_values),
                tail: TailRule { ratio: tail_ratio, power: tail_power, factorial: tail_factorial },
            },
            WeightsDoc::Reciprocal { of } => Weights::Reciprocal(Box::new(Weights::try_from(*of)?)),
        };
        w.validated()
    }
}

impl From<Weights> for WeightsDoc {
    fn from(w: Weights) -> Self {
        match w {
            Weights::SingleServer => WeightsDoc::Preset { name: PresetName::Mm1, s: None },
            Weights::MultiServer { servers } => WeightsDoc::Preset { name: PresetName::Mms, s: Some(servers) },
            Weights::InfiniteServer => WeightsDoc::Preset { name: PresetName::Mminf, s: None },
            Weights::Table { values: TableValues::Linear(values), tail } => WeightsDoc::Table {
                values,
                tail_ratio: tail.ratio,
                tail_power: tail.power,
                tail_factorial: tail.factorial,
            },
            Weights::Table { values: TableValues::Log(ln_values), tail } => WeightsDoc::LogTable {
                ln_values,
                tail_ratio: tail.ratio,
                tail_power: tail.power,
                tail_factorial: tail.factorial,
            },
            Weights::Reciprocal(inner) => WeightsDoc::Reciprocal { of: Box::new((*inner).into()) },
        }
    }
}

/// A birth-death process on `{0, 1, ...}` (or `{0, ..., cap}`).
///
/// With a cap `c` the effective `psi(c)` is zero, so no birth leaves state
/// `c`. The underlying (uncapped) weight at `c` is still used by the
/// cycle-maximum law: there `P(Y <= c)` is read as the probability that the
/// cycle sees no blocked arrival, which equals the uncapped `P(Y <= c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecDoc", into = "SpecDoc")]
pub struct BirthDeathSpec {
    pub label: String,
    pub lambda: f64,
    pub mu: f64,
    pub cap: Option<usize>,
    pub psi: Weights,
    pub phi: Weights,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecDoc {
    #[serde(default)]
    label: String,
    lambda: f64,
    mu: f64,
    #[serde(default)]
    cap: Option<usize>,
    psi: Weights,
    phi: Weights,
}

impl TryFrom<SpecDoc> for BirthDeathSpec {
    type Error = Error;
    fn try_from(d: SpecDoc) -> Result<Self> {
        BirthDeathSpec::new(d.label, d.lambda, d.mu, d.cap, d.psi, d.phi)
    }
}

impl From<BirthDeathSpec> for SpecDoc {
    fn from(s: BirthDeathSpec) -> Self {
        SpecDoc { label: s.label, lambda: s.lambda, mu: s.mu, cap: s.cap, psi: s.psi, phi: s.phi }
    }
}

impl BirthDeathSpec {
    pub fn new(
        label: impl Into<String>,
        lambda: f64,
        mu: f64,
        cap: Option<usize>,
        psi: Weights,
        phi: Weights,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0 && mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "lambda and mu must be finite and positive (got {lambda}, {mu})"
            )));
        }
        if cap == Some(0) {
            return Err(Error::InvalidSpec("cap must be at least 1".into()));
        }
        let spec = BirthDeathSpec {
            label: label.into(),
            lambda,
            mu,
            cap,
            psi: psi.validated()?,
            phi: phi.validated()?,
        };
        Ok(spec)
    }

    /// `M(lambda)/M(mu)/1`.
    pub fn mm1(lambda: f64, mu: f64) -> Result<Self> {
        Self::new(format!("M/M/1 rho={}", lambda / mu), lambda, mu, None, Weights::SingleServer, Weights::SingleServer)
    }

    /// `M(lambda)/M(mu)/s`.
    pub fn mms(servers: u32, lambda: f64, mu: f64) -> Result<Self> {
        let w = Weights::MultiServer { servers };
        Self::new(format!("M/M/{servers} rho={}", lambda / mu), lambda, mu, None, w.clone(), w)
    }

    /// `M(lambda)/M(mu)/inf`.
    pub fn mminf(lambda: f64, mu: f64) -> Result<Self> {
        Self::new(
            format!("M/M/inf rho={}", lambda / mu),
            lambda,
            mu,
            None,
            Weights::InfiniteServer,
            Weights::InfiniteServer,
        )
    }

    /// Erlang loss queue `M/M/c/c`.
    pub fn erlang_loss(servers: usize, lambda: f64, mu: f64) -> Result<Self> {
        let mut s = Self::mminf(lambda, mu)?.with_cap(servers)?;
        s.label = format!("M/M/{servers}/{servers} rho={}", lambda / mu);
        Ok(s)
    }

    pub fn with_cap(mut self, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::InvalidSpec("cap must be at least 1".into()));
        }
        self.cap = Some(cap);
        Ok(self)
    }

    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }

    fn beyond_cap(&self, n: usize) -> bool {
        matches!(self.cap, Some(c) if n >= c)
    }

    /// `ln psi(n)` of the uncapped weight sequence.
    pub fn ln_psi_base(&self, n: usize) -> f64 {
        self.psi.ln_value(n)
    }

    /// Effective `psi(n)`: zero at and beyond the cap.
    pub fn psi(&self, n: usize) -> f64 {
        if self.beyond_cap(n) {
            0.0
        } else {
            self.psi.value(n)
        }
    }

    pub fn ln_phi(&self, n: usize) -> f64 {
        self.phi.ln_value(n)
    }

    pub fn phi(&self, n: usize) -> f64 {
        self.phi.value(n)
    }

    /// `ln(psi(n) rho^n)` with the uncapped `psi`.
    pub fn ln_weight(&self, n: usize) -> f64 {
        self.ln_psi_base(n) + n as f64 * self.rho().ln()
    }

    pub fn birth_rate(&self, n: usize) -> Result<f64> {
        if let Some(cap) = self.cap {
            if n >= cap {
                return Err(Error::CapExceeded { n, cap });
            }
        }
        Ok(self.lambda * (self.ln_psi_base(n) - self.ln_phi(n)).exp())
    }

    pub fn death_rate(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::NotApplicable("death rate is defined for n >= 1".into()));
        }
        if let Some(cap) = self.cap {
            if n > cap {
                return Err(Error::CapExceeded { n, cap });
            }
        }
        Ok(self.mu * (self.ln_psi_base(n - 1) - self.ln_phi(n)).exp())
    }

    /// Probability of an up-step of the embedded jump chain at `n >= 1`.
    pub fn up_probability(&self, n: usize) -> f64 {
        if self.beyond_cap(n) {
            return 0.0;
        }
        // birth/(birth+death) = 1 / (1 + psi(n-1) / (rho psi(n)))
        let ln_odds_down = self.ln_psi_base(n - 1) - self.ln_psi_base(n) - self.rho().ln();
        1.0 / (1.0 + ln_odds_down.exp())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        crate::error::from_json(s)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()? + "\n")?;
        Ok(())
    }

    /// Classification with the default truncation and tolerance.
    pub fn classify(&self) -> Classification {
        classify(self, DEFAULT_TRUNC, DEFAULT_TOL)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    PositiveRecurrent,
    NullRecurrent,
    Transient,
    Undetermined,
}

mod ext_real {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            Repr::Num(*x).serialize(s)
        } else if *x > 0.0 {
            Repr::Text("inf".into()).serialize(s)
        } else {
            Repr::Text("nan".into()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Num(x) => x,
            Repr::Text(t) if t == "inf" => f64::INFINITY,
            Repr::Text(_) => f64::NAN,
        })
    }
}

/// Recurrence verdict plus the three series and the tail ratio limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub verdict: Verdict,
    pub rho: f64,
    /// `sum phi(n) rho^n`
    #[serde(with = "ext_real")]
    pub b_phi_inv: f64,
    /// `sum psi(n) rho^n`
    #[serde(with = "ext_real")]
    pub b_psi_inv: f64,
    /// `sum (psi(n) rho^n)^-1`
    #[serde(with = "ext_real")]
    pub b_star_inv: f64,
    pub phi_series: SeriesStatus,
    pub psi_series: SeriesStatus,
    pub star_series: SeriesStatus,
    /// limsup of `psi(n+1)/psi(n)`
    #[serde(with = "ext_real")]
    pub beta_upper: f64,
    /// liminf of `psi(n+1)/psi(n)`
    #[serde(with = "ext_real")]
    pub beta_lower: f64,
    pub beta: Option<f64>,
    /// Whether `sum phi(n)/(psi(n)+psi(n-1))` is judged divergent.
    pub regularity_ok: bool,
}

impl Classification {
    pub fn b_phi(&self) -> f64 {
        1.0 / self.b_phi_inv
    }
    pub fn b_psi(&self) -> f64 {
        1.0 / self.b_psi_inv
    }
    pub fn b_star(&self) -> f64 {
        1.0 / self.b_star_inv
    }
    pub fn psi_ratio_limits(&self) -> RatioLimits {
        RatioLimits { upper: self.beta_upper, lower: self.beta_lower, limit: self.beta }
    }
    pub fn is_recurrent(&self) -> bool {
        matches!(self.verdict, Verdict::PositiveRecurrent | Verdict::NullRecurrent)
    }
}

fn table_len(w: &Weights) -> usize {
    match w {
        Weights::Table { values, .. } => values.len(),
        Weights::Reciprocal(inner) => table_len(inner),
        _ => 0,
    }
}

/// Truncation point pushed past any explicit table prefix, so that the
/// ratio window sees the tail rule.
pub fn effective_trunc(spec: &BirthDeathSpec, trunc: usize) -> usize {
    let len = table_len(&spec.psi).max(table_len(&spec.phi));
    if len == 0 {
        trunc
    } else {
        trunc.max(4 * len + 16)
    }
}

/// Ratio-test classification truncated at `trunc` with critical tolerance `tol`.
pub fn classify(spec: &BirthDeathSpec, trunc: usize, tol: f64) -> Classification {
    let trunc = effective_trunc(spec, trunc.max(10));
    let rho = spec.rho();
    let ln_rho = rho.ln();

    if let Some(cap) = spec.cap {
        let b_phi_inv = series::log_sum_exp((0..=cap).map(|n| spec.ln_phi(n) + n as f64 * ln_rho)).exp();
        let b_psi_inv = series::log_sum_exp((0..cap).map(|n| spec.ln_psi_base(n) + n as f64 * ln_rho)).exp();
        let finite = SeriesStatus::Converges { tail_bounded: true };
        return Classification {
            verdict: Verdict::PositiveRecurrent,
            rho,
            b_phi_inv,
            b_psi_inv,
            b_star_inv: f64::INFINITY,
            phi_series: finite,
            psi_series: finite,
            star_series: SeriesStatus::Diverges,
            beta_upper: 0.0,
            beta_lower: 0.0,
            beta: Some(0.0),
            regularity_ok: true,
        };
    }

    let psi_lim = series::estimate_ratio_limits(|n| spec.ln_psi_base(n), trunc, tol);
    let phi_lim = series::estimate_ratio_limits(|n| spec.ln_phi(n), trunc, tol);

    let phi_term = |n: usize| spec.ln_phi(n) + n as f64 * ln_rho;
    let psi_term = |n: usize| spec.ln_weight(n);
    let star_term = |n: usize| -spec.ln_weight(n);

    let phi_est = series::analyse_series(phi_term, 0, phi_lim.scaled(rho), trunc, tol);
    let psi_est = series::analyse_series(psi_term, 0, psi_lim.scaled(rho), trunc, tol);
    let star_est = series::analyse_series(star_term, 0, psi_lim.scaled(rho).reciprocal(), trunc, tol);

    let reg_term = |n: usize| spec.ln_phi(n) - series::log_add_exp(spec.ln_psi_base(n), spec.ln_psi_base(n - 1));
    let reg_lim = series::estimate_ratio_limits(|n| reg_term(n.max(1)), trunc, tol);
    let reg_est = series::analyse_series(reg_term, 1, reg_lim, trunc, tol);

    let verdict = match (star_est.status, phi_est.status) {
        (SeriesStatus::Converges { .. }, _) => Verdict::Transient,
        (SeriesStatus::Diverges, SeriesStatus::Converges { .. }) => Verdict::PositiveRecurrent,
        (SeriesStatus::Diverges, SeriesStatus::Diverges) => Verdict::NullRecurrent,
        _ => Verdict::Undetermined,
    };

    Classification {
        verdict,
        rho,
        b_phi_inv: phi_est.value,
        b_psi_inv: psi_est.value,
        b_star_inv: star_est.value,
        phi_series: phi_est.status,
        psi_series: psi_est.status,
        star_series: star_est.status,
        beta_upper: psi_lim.upper,
        beta_lower: psi_lim.lower,
        beta: psi_lim.limit,
        regularity_ok: !matches!(reg_est.status, SeriesStatus::Converges { .. }),
    }
}

fn states_upto(spec: &BirthDeathSpec, n_max: usize) -> usize {
    spec.cap.map_or(n_max, |c| c.min(n_max))
}

/// `pi_phi(n) = B_phi phi(n) rho^n` for `n = 0..=n_max` (clipped at the cap).
pub fn stationary_distribution(spec: &BirthDeathSpec, n_max: usize) -> Result<Vec<f64>> {
    let c = spec.classify();
    if c.verdict != Verdict::PositiveRecurrent {
        return Err(Error::NotPositiveRecurrent(format!("{:?}", c.verdict)));
    }
    let ln_norm = c.b_phi_inv.ln();
    let ln_rho = spec.rho().ln();
    Ok((0..=states_upto(spec, n_max))
        .map(|n| (spec.ln_phi(n) + n as f64 * ln_rho - ln_norm).exp())
        .collect())
}

/// `pi_psi(n) = B_psi psi(n) rho^n` for `n = 0..=n_max`, using the effective
/// (capped) `psi`.
pub fn palm_distribution(spec: &BirthDeathSpec, n_max: usize) -> Result<Vec<f64>> {
    let c = spec.classify();
    if !matches!(c.psi_series, SeriesStatus::Converges { .. }) {
        return Err(Error::PalmUndefined);
    }
    let ln_norm = c.b_psi_inv.ln();
    let ln_rho = spec.rho().ln();
    Ok((0..=states_upto(spec, n_max))
        .map(|n| {
            if spec.cap == Some(n) {
                0.0
            } else {
                (spec.ln_psi_base(n) + n as f64 * ln_rho - ln_norm).exp()
            }
        })
        .collect())
}
