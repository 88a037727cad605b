//! Regenerative Monte-Carlo simulation of cycle maxima.
//!
//! A cycle starts in state 1 right after the `0 -> 1` transition and runs
//! the embedded jump chain until it returns to 0. Holding times do not
//! affect the maximum and are never sampled.
//!
//! Work is split into fixed-size blocks, each with its own ChaCha stream
//! derived from the seed, so results are bit-identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bdp::BirthDeathSpec;
use crate::cycle_max::CycleMaxDistribution;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::extremes::{as_limit_constant, LimitConstant};
use crate::networks::{NetworkSpec, StationKind};

/// Cycles simulated per RNG stream.
pub const BLOCK: usize = 4096;

const MAXIMA_STREAM_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub cycles: usize,
    /// Level at which a cycle is declared escaped.
    pub escape_horizon: usize,
    pub replications: usize,
    pub execution: Execution,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            cycles: 100_000,
            escape_horizon: 10_000,
            replications: 1,
            execution: Execution::Parallel,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.escape_horizon < 10 {
            return Err(Error::InvalidSpec("escape_horizon must be at least 10".into()));
        }
        if self.cycles == 0 || self.replications == 0 {
            return Err(Error::InvalidSpec("cycles and replications must be positive".into()));
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleOutcome {
    Returned(usize),
    Escaped,
}

/// Histogram of cycle maxima plus the escaped count.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSample {
    /// `counts[n]` cycles had maximum `n`.
    pub counts: Vec<u64>,
    pub escaped: u64,
}

impl CycleSample {
    pub fn record(&mut self, outcome: CycleOutcome) {
        match outcome {
            CycleOutcome::Returned(m) => {
                if self.counts.len() <= m {
                    self.counts.resize(m + 1, 0);
                }
                self.counts[m] += 1;
            }
            CycleOutcome::Escaped => self.escaped += 1,
        }
    }

    pub fn merge(&mut self, other: &CycleSample) {
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.escaped += other.escaped;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.escaped
    }

    pub fn returned(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of all cycles with maximum `<= n`.
    pub fn empirical_cdf(&self, n: usize) -> f64 {
        let below: u64 = self.counts.iter().take(n + 1).sum();
        below as f64 / self.total() as f64
    }

    /// Fraction of returned cycles with maximum `<= n`.
    pub fn conditional_cdf(&self, n: usize) -> f64 {
        let below: u64 = self.counts.iter().take(n + 1).sum();
        below as f64 / self.returned() as f64
    }

    pub fn escaped_fraction(&self) -> f64 {
        self.escaped as f64 / self.total() as f64
    }

    pub fn max(&self) -> Option<usize> {
        self.counts.iter().rposition(|&c| c > 0)
    }
}

/// Up-step probabilities of the embedded chain at `1..horizon`.
#[derive(Debug, Clone)]
pub struct JumpChain {
    up: Vec<f64>,
    horizon: usize,
}

impl JumpChain {
    pub fn new(spec: &BirthDeathSpec, horizon: usize) -> Self {
        let top = spec.cap.map_or(horizon, |c| c.min(horizon));
        let mut up = vec![1.0];
        up.extend((1..=top).map(|n| spec.up_probability(n)));
        JumpChain { up, horizon }
    }

    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> CycleOutcome {
        let mut n = 1usize;
        let mut max = 1usize;
        loop {
            if n >= self.horizon {
                return CycleOutcome::Escaped;
            }
            if rng.random::<f64>() < self.up[n] {
                n += 1;
                max = max.max(n);
            } else {
                n -= 1;
                if n == 0 {
                    return CycleOutcome::Returned(max);
                }
            }
        }
    }
}

/// One cycle of the embedded jump chain.
pub fn simulate_cycle<R: Rng + ?Sized>(spec: &BirthDeathSpec, rng: &mut R, escape_horizon: usize) -> CycleOutcome {
    JumpChain::new(spec, escape_horizon).run(rng)
}

fn blocked<F>(cfg: &SimConfig, run_block: F) -> CycleSample
where
    F: Fn(&mut ChaCha8Rng, usize, &mut CycleSample) + Sync + Send,
{
    let blocks = cfg.cycles.div_ceil(BLOCK);
    let parts = cfg.execution.map(blocks, |b| {
        let mut rng = stream_rng(cfg.seed, b as u64);
        let len = BLOCK.min(cfg.cycles - b * BLOCK);
        let mut s = CycleSample::default();
        run_block(&mut rng, len, &mut s);
        s
    });
    let mut total = CycleSample::default();
    for p in &parts {
        total.merge(p);
    }
    total
}

/// `cfg.cycles` independent cycles.
pub fn simulate_cycles(spec: &BirthDeathSpec, cfg: &SimConfig) -> Result<CycleSample> {
    cfg.validate()?;
    let chain = JumpChain::new(spec, cfg.escape_horizon);
    Ok(blocked(cfg, |rng, len, s| {
        for _ in 0..len {
            s.record(chain.run(rng));
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// `k` simulated cycles per replication.
    JumpChain,
    /// One draw from `P(Y^(k) <= n) = F(n)^k` per replication.
    #[default]
    Inversion,
}

/// Smallest `n` with `k ln F(n) >= ln u`; capped chains stop at the cap.
fn invert_power_cdf(dist: &CycleMaxDistribution, k: f64, ln_u: f64) -> usize {
    let cap = dist.spec().cap;
    let ok = |n: usize| {
        if cap.is_some_and(|c| n >= c) {
            return true;
        }
        k * (-dist.ln_survival(n).exp()).ln_1p() >= ln_u
    };
    if ok(1) {
        return 1;
    }
    let mut lo = 1usize;
    let mut hi = 2usize;
    while !ok(hi) {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// `reps` realisations of `Y^(k) = max(Y_1, ..., Y_k)`, in replication order.
pub fn sample_maxima(
    spec: &BirthDeathSpec,
    k: u64,
    reps: usize,
    cfg: &SimConfig,
    mode: SamplingMode,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if k == 0 || reps == 0 {
        return Err(Error::InvalidSpec("k and reps must be positive".into()));
    }
    let rng_for = |r: usize| stream_rng(cfg.seed, MAXIMA_STREAM_OFFSET + r as u64);
    match mode {
        SamplingMode::JumpChain => {
            let chain = JumpChain::new(spec, cfg.escape_horizon);
            let out = cfg.execution.map(reps, |r| {
                let mut rng = rng_for(r);
                let mut best = 0usize;
                for _ in 0..k {
                    match chain.run(&mut rng) {
                        CycleOutcome::Returned(m) => best = best.max(m),
                        CycleOutcome::Escaped => return Err(Error::EscapedCycle { horizon: cfg.escape_horizon }),
                    }
                }
                Ok(best)
            });
            out.into_iter().collect()
        }
        SamplingMode::Inversion => {
            let dist = CycleMaxDistribution::new(spec.clone());
            if dist.is_transient() {
                return Err(Error::NotApplicable("inversion sampling of a transient chain".into()));
            }
            let kf = k as f64;
            Ok(cfg.execution.map(reps, |r| {
                let mut rng = rng_for(r);
                let u: f64 = 1.0 - rng.random::<f64>();
                invert_power_cdf(&dist, kf, u.ln())
            }))
        }
    }
}

/// Type-7 sample quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub k: u64,
    pub b_k: f64,
    pub mean_ratio: f64,
    pub median_ratio: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Summary statistics of `Y^(k) / b_k` per `k`, by inversion sampling.
pub fn verify_as_convergence(spec: &BirthDeathSpec, k_grid: &[u64], reps: usize, cfg: &SimConfig) -> Result<Vec<RatioSummary>> {
    let dist = CycleMaxDistribution::new(spec.clone());
    k_grid
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let b_k = match as_limit_constant(spec, k as f64)? {
                LimitConstant::Exact { value } => value,
                LimitConstant::Bracket { .. } => {
                    return Err(Error::NotApplicable("ratio has no limit; only a bracket is available".into()))
                }
            };
            let kf = k as f64;
            let seed = cfg.seed.wrapping_add(i as u64);
            let mut ratios: Vec<f64> = cfg.execution.map(reps, |r| {
                let mut rng = stream_rng(seed, MAXIMA_STREAM_OFFSET + r as u64);
                let u: f64 = 1.0 - rng.random::<f64>();
                invert_power_cdf(&dist, kf, u.ln()) as f64 / b_k
            });
            ratios.sort_by(f64::total_cmp);
            Ok(RatioSummary {
                k,
                b_k,
                mean_ratio: ratios.iter().sum::<f64>() / reps as f64,
                median_ratio: quantile(&ratios, 0.5),
                q05: quantile(&ratios, 0.05),
                q95: quantile(&ratios, 0.95),
            })
        })
        .collect()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[usize], b: &[usize]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic two-sample KS critical value at level `alpha`.
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Cycle maxima of the total population of an open network, simulated on
/// the full network jump chain (no Norton reduction involved).
pub fn simulate_network_cycles(net: &NetworkSpec, cfg: &SimConfig) -> Result<CycleSample> {
    cfg.validate()?;
    net.validate()?;
    let j = net.stations.len();
    let p = &net.routing;
    let entry: Vec<f64> = (1..=j).map(|k| p[0][k]).collect();
    let entry_total: f64 = entry.iter().sum();
    let horizon = cfg.escape_horizon;
    let depart_scale = |kind: StationKind, n: usize| match kind {
        StationKind::SingleServer => 1.0,
        StationKind::MultiServer(s) => n.min(s as usize) as f64,
        StationKind::InfiniteServer => n as f64,
    };
    let pick = |rng: &mut ChaCha8Rng, weights: &[f64], total: f64| {
        let mut u = rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    };

    Ok(blocked(cfg, |rng, len, sample| {
        let mut state = vec![0usize; j];
        let mut rates = vec![0.0; j + 1];
        for _ in 0..len {
            state.iter_mut().for_each(|x| *x = 0);
            state[pick(rng, &entry, entry_total)] = 1;
            let mut total = 1usize;
            let mut max = 1usize;
            let outcome = loop {
                if total >= horizon {
                    break CycleOutcome::Escaped;
                }
                // i = 0 is an external arrival, i >= 1 a service completion
                // that leaves the station (self-loops do not change the state)
                rates[0] = net.mu0 * entry_total;
                for i in 1..=j {
                    let n = state[i - 1];
                    rates[i] = if n == 0 {
                        0.0
                    } else {
                        let st = &net.stations[i - 1];
                        st.mu * depart_scale(st.kind, n) * (1.0 - p[i][i])
                    };
                }
                let sum: f64 = rates.iter().sum();
                let i = pick(rng, &rates, sum);
                if i == 0 {
                    state[pick(rng, &entry, entry_total)] += 1;
                    total += 1;
                    max = max.max(total);
                    continue;
                }
                let row: Vec<f64> = (0..=j).map(|t| if t == i { 0.0 } else { p[i][t] }).collect();
                let row_total = 1.0 - p[i][i];
                let dest = pick(rng, &row, row_total);
                state[i - 1] -= 1;
                if dest == 0 {
                    total -= 1;
                    if total == 0 {
                        break CycleOutcome::Returned(max);
                    }
                } else {
                    state[dest - 1] += 1;
                }
            };
            sample.record(outcome);
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64, cycles: usize) -> SimConfig {
        SimConfig { seed, cycles, ..SimConfig::default() }
    }

    #[test]
    fn capped_at_one_always_returns_one() {
        let s = BirthDeathSpec::mm1(5.0, 1.0).unwrap().with_cap(1).unwrap();
        let sample = simulate_cycles(&s, &cfg(1, 1000)).unwrap();
        assert_eq!(sample.counts, vec![0, 1000]);
    }

    #[test]
    fn mm1_first_level() {
        let s = BirthDeathSpec::mm1(0.5, 1.0).unwrap();
        let sample = simulate_cycles(&s, &cfg(7, 100_000)).unwrap();
        let p = 2.0 / 3.0;
        let sigma = (p * (1.0 - p) / 1e5f64).sqrt();
        assert!((sample.empirical_cdf(1) - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn transient_escape_fraction() {
        let s = BirthDeathSpec::mm1(2.0, 1.0).unwrap();
        let c = SimConfig { escape_horizon: 1000, ..cfg(3, 20_000) };
        let sample = simulate_cycles(&s, &c).unwrap();
        let sigma = (0.25 / 2e4f64).sqrt();
        assert!((sample.escaped_fraction() - 0.5).abs() < 3.0 * sigma);
        assert!(matches!(
            sample_maxima(&s, 10, 5, &c, SamplingMode::JumpChain),
            Err(Error::EscapedCycle { .. })
        ));
    }

    #[test]
    fn deterministic_across_execution_modes() {
        let s = BirthDeathSpec::mms(2, 1.0, 1.0).unwrap();
        let par = simulate_cycles(&s, &cfg(11, 20_000)).unwrap();
        let seq = simulate_cycles(&s, &SimConfig { execution: Execution::Sequential, ..cfg(11, 20_000) }).unwrap();
        assert_eq!(par, seq);
        let a = sample_maxima(&s, 50, 100, &cfg(5, 10), SamplingMode::JumpChain).unwrap();
        let b = sample_maxima(&s, 50, 100, &cfg(5, 10), SamplingMode::JumpChain).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inversion_matches_cdf() {
        let s = BirthDeathSpec::mm1(0.5, 1.0).unwrap();
        let draws = sample_maxima(&s, 1, 50_000, &cfg(9, 10), SamplingMode::Inversion).unwrap();
        let dist = CycleMaxDistribution::new(s);
        for n in 1..10 {
            let emp = draws.iter().filter(|&&y| y <= n).count() as f64 / 5e4;
            let p = dist.cdf(n);
            let sigma = (p * (1.0 - p) / 5e4).sqrt().max(1e-12);
            assert!((emp - p).abs() < 4.0 * sigma, "n={n}");
        }
        let capped = BirthDeathSpec::mm1(1.0, 1.0).unwrap().with_cap(3).unwrap();
        let d = sample_maxima(&capped, 1000, 50, &cfg(1, 10), SamplingMode::Inversion).unwrap();
        assert!(d.iter().all(|&y| y == 3));
    }

    #[test]
    fn ks_helpers() {
        assert_eq!(ks_statistic(&[1, 2, 3], &[1, 2, 3]), 0.0);
        assert!((ks_statistic(&[1, 1], &[2, 2]) - 1.0).abs() < 1e-15);
        assert!((ks_critical(100, 100, 0.05) - 1.358 * (0.02f64).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }
}
