//! Open Kelly-Whittle networks with single-, multi- and infinite-server
//! stations: traffic equations, the aggregate constants
//!
//! ```text
//! Psi(N) = sum_{|n| = N} psi(n) prod_j rho_j^{n_j}
//! ```
//!
//! and the Norton reduction of the total population to a birth-death
//! process.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bdp::{BirthDeathSpec, TailRule, Weights};
use crate::error::{Error, Result};
use crate::series::{log_add_exp, log_sum_exp};

/// Relative gap under which two loads count as equal.
pub const COINCIDENCE_TOL: f64 = 1e-9;

/// Max absolute deviation of a routing row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationKind {
    SingleServer,
    MultiServer(u32),
    InfiniteServer,
}

impl StationKind {
    /// Per-station `psi_i = phi_i`.
    pub fn weights(self) -> Weights {
        match self {
            StationKind::SingleServer => Weights::SingleServer,
            StationKind::MultiServer(s) => Weights::MultiServer { servers: s },
            StationKind::InfiniteServer => Weights::InfiniteServer,
        }
    }

    /// Number of servers; `None` for infinitely many.
    pub fn servers(self) -> Option<u32> {
        match self {
            StationKind::SingleServer => Some(1),
            StationKind::MultiServer(s) => Some(s),
            StationKind::InfiniteServer => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StationDoc", into = "StationDoc")]
pub struct Station {
    pub kind: StationKind,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Ss,
    Ms,
    Is,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct StationDoc {
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s: Option<u32>,
    mu: f64,
}

impl TryFrom<StationDoc> for Station {
    type Error = Error;
    fn try_from(d: StationDoc) -> Result<Self> {
        let kind = match (d.kind, d.s) {
            (KindTag::Ss, _) => StationKind::SingleServer,
            (KindTag::Is, _) => StationKind::InfiniteServer,
            (KindTag::Ms, Some(s)) if s >= 1 => StationKind::MultiServer(s),
            (KindTag::Ms, _) => return Err(Error::InvalidSpec("station kind \"ms\" needs s >= 1".into())),
        };
        Ok(Station { kind, mu: d.mu })
    }
}

impl From<Station> for StationDoc {
    fn from(s: Station) -> Self {
        let (kind, srv) = match s.kind {
            StationKind::SingleServer => (KindTag::Ss, None),
            StationKind::MultiServer(n) => (KindTag::Ms, Some(n)),
            StationKind::InfiniteServer => (KindTag::Is, None),
        };
        StationDoc { kind, s: srv, mu: s.mu }
    }
}

/// Routing index 0 is the outside world; station `i` is index `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub mu0: f64,
    pub stations: Vec<Station>,
    pub routing: Vec<Vec<f64>>,
}

impl NetworkSpec {
    pub fn new(mu0: f64, stations: Vec<Station>, routing: Vec<Vec<f64>>) -> Result<Self> {
        let net = NetworkSpec { mu0, stations, routing };
        net.validate()?;
        Ok(net)
    }

    pub fn j(&self) -> usize {
        self.stations.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.j();
        if j == 0 {
            return Err(Error::InvalidSpec("network needs at least one station".into()));
        }
        if !(self.mu0.is_finite() && self.mu0 > 0.0) {
            return Err(Error::InvalidSpec(format!("mu0 must be positive (got {})", self.mu0)));
        }
        if let Some(s) = self.stations.iter().find(|s| !(s.mu.is_finite() && s.mu > 0.0)) {
            return Err(Error::InvalidSpec(format!("station rate must be positive (got {})", s.mu)));
        }
        check_routing(&self.routing, j)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let net: NetworkSpec = crate::error::from_json(s)?;
        net.validate()?;
        Ok(net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// `lambda_j / mu_j`.
    pub fn loads(&self) -> Result<Vec<f64>> {
        let lambda = solve_traffic(&self.routing)?;
        Ok(lambda.iter().zip(&self.stations).map(|(l, s)| l / s.mu).collect())
    }
}

fn check_routing(p: &[Vec<f64>], j: usize) -> Result<()> {
    if p.len() != j + 1 || p.iter().any(|r| r.len() != j + 1) {
        return Err(Error::InvalidSpec(format!("routing must be {}x{}", j + 1, j + 1)));
    }
    for (i, row) in p.iter().enumerate() {
        if row.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidSpec(format!("routing row {i} has a negative or non-finite entry")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidSpec(format!("routing row {i} sums to {sum}")));
        }
    }
    if !strongly_connected(p) {
        return Err(Error::NotIrreducible);
    }
    Ok(())
}

fn reachable_all(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if !seen[v] && edge(u, v) {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn strongly_connected(p: &[Vec<f64>]) -> bool {
    let n = p.len();
    reachable_all(n, |u, v| p[u][v] > 0.0) && reachable_all(n, |u, v| p[v][u] > 0.0)
}

/// Solves `lambda_j = p_0j + sum_i lambda_i p_ij`, `j = 1..J`.
pub fn solve_traffic(routing: &[Vec<f64>]) -> Result<Vec<f64>> {
    let j = routing.len().saturating_sub(1);
    if j == 0 {
        return Err(Error::InvalidSpec("routing must include at least one station".into()));
    }
    check_routing(routing, j)?;
    let a = DMatrix::from_fn(j, j, |r, c| f64::from(r == c) - routing[c + 1][r + 1]);
    let b = DVector::from_fn(j, |r, _| routing[0][r + 1]);
    let x = a.clone().lu().solve(&b).ok_or(Error::SingularSystem { residual: f64::INFINITY })?;
    let residual = (&a * &x - &b).amax();
    let scale = x.amax().max(1.0);
    if !residual.is_finite() || residual > 1e-12 * scale || x.iter().any(|v| v.is_nan() || *v <= 0.0) {
        return Err(Error::SingularSystem { residual });
    }
    Ok(x.iter().copied().collect())
}

/// `ln Psi(N)` and `ln Phi(N)` for `N = 0..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateConstants {
    pub rho: Vec<f64>,
    pub ln_psi: Vec<f64>,
    pub ln_phi: Vec<f64>,
}

impl AggregateConstants {
    pub fn psi(&self, n: usize) -> f64 {
        self.ln_psi[n].exp()
    }

    pub fn phi(&self, n: usize) -> f64 {
        self.ln_phi[n].exp()
    }
}

/// Log-domain convolution of per-station sequences `ln(psi_i(n) rho_i^n)`.
pub fn convolve_log(stations: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = stations[0].clone();
    for seq in &stations[1..] {
        acc = (0..acc.len())
            .map(|n| log_sum_exp((0..=n).map(|m| acc[m] + seq[n - m])))
            .collect();
    }
    acc
}

fn station_sequence(kind: StationKind, rho: f64, n_max: usize) -> Vec<f64> {
    let w = kind.weights();
    let lr = rho.ln();
    (0..=n_max).map(|n| w.ln_value(n) + n as f64 * lr).collect()
}

pub fn aggregate_constants(net: &NetworkSpec, n_max: usize) -> Result<AggregateConstants> {
    net.validate()?;
    let rho = net.loads()?;
    let seqs: Vec<Vec<f64>> = net
        .stations
        .iter()
        .zip(&rho)
        .map(|(s, &r)| station_sequence(s.kind, r, n_max))
        .collect();
    let ln_psi = convolve_log(&seqs);
    if let Some(n) = ln_psi.iter().position(|v| !v.is_finite()) {
        return Err(Error::Overflow(n));
    }
    // psi_i = phi_i for every supported station kind
    let ln_phi = ln_psi.clone();
    Ok(AggregateConstants { rho, ln_psi, ln_phi })
}

/// Largest lattice handled by [`lattice_constants`].
pub const LATTICE_MAX_J: usize = 3;
pub const LATTICE_MAX_N: usize = 20;

/// `ln sum_{|n| = N} exp(ln_weight(n)) prod rho_j^{n_j}` by explicit
/// enumeration, for non-separable weights on small lattices.
pub fn lattice_constants<F: Fn(&[usize]) -> f64>(rho: &[f64], n_max: usize, ln_weight: F) -> Result<Vec<f64>> {
    let j = rho.len();
    if j == 0 || j > LATTICE_MAX_J || n_max > LATTICE_MAX_N {
        return Err(Error::NotApplicable(format!(
            "lattice summation supports J <= {LATTICE_MAX_J} and N <= {LATTICE_MAX_N}"
        )));
    }
    let ln_rho: Vec<f64> = rho.iter().map(|r| r.ln()).collect();
    let mut out = vec![f64::NEG_INFINITY; n_max + 1];
    let mut n = vec![0usize; j];
    loop {
        let total: usize = n.iter().sum();
        if total <= n_max {
            let t = ln_weight(&n) + n.iter().zip(&ln_rho).map(|(k, l)| *k as f64 * l).sum::<f64>();
            out[total] = log_add_exp(out[total], t);
        }
        // odometer over {0..n_max}^J
        let mut d = 0;
        loop {
            if d == j {
                return Ok(out);
            }
            n[d] += 1;
            if n[d] <= n_max {
                break;
            }
            n[d] = 0;
            d += 1;
        }
    }
}

/// `sum_j rho_j^{N+J-1} / prod_{i != j} (rho_j - rho_i)` for distinct loads.
pub fn harrison_closed_form(rho: &[f64], n: usize) -> Result<f64> {
    let j = rho.len();
    for a in 0..j {
        for b in (a + 1)..j {
            let scale = rho[a].abs().max(rho[b].abs());
            if (rho[a] - rho[b]).abs() <= COINCIDENCE_TOL * scale {
                return Err(Error::CoincidentLoads(rho[a], rho[b]));
            }
        }
    }
    Ok((0..j)
        .map(|a| {
            let den: f64 = (0..j).filter(|&b| b != a).map(|b| rho[a] - rho[b]).product();
            rho[a].powi((n + j - 1) as i32) / den
        })
        .sum())
}

/// `nu_i = rho_i / s_i` (`0` for infinite-server stations).
pub fn station_slopes(net: &NetworkSpec) -> Result<Vec<f64>> {
    let rho = net.loads()?;
    Ok(net
        .stations
        .iter()
        .zip(&rho)
        .map(|(s, r)| s.kind.servers().map_or(0.0, |k| r / k as f64))
        .collect())
}

/// `(max nu_i, |B|)` with `B` the stations attaining the max.
pub fn network_beta(net: &NetworkSpec) -> Result<(f64, usize)> {
    let nu = station_slopes(net)?;
    let beta = nu.iter().copied().fold(0.0, f64::max);
    let mult = nu
        .iter()
        .filter(|&&v| (v - beta).abs() <= COINCIDENCE_TOL * beta.abs().max(f64::MIN_POSITIVE))
        .count();
    Ok((beta, mult))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NortonReduction {
    pub constants: AggregateConstants,
    /// Solved traffic `lambda_j`.
    pub traffic: Vec<f64>,
    pub beta_net: f64,
    pub multiplicity: usize,
    /// Birth rate `mu0 (1 - p00) Psi(N) / Phi(N)`, death rate
    /// `(1 - p00) Psi(N-1) / Phi(N)`.
    pub induced: BirthDeathSpec,
}

/// Reduces the total population to a birth-death process with
/// `psi = phi = Psi` and `rho = mu0`.
///
/// The common factor `1 - p00` is the share of exogenous arrivals that
/// enter a station; it rescales time but not the jump chain.
pub fn norton_reduce(net: &NetworkSpec, n_max: usize) -> Result<NortonReduction> {
    let n_max = n_max.max(1);
    let constants = aggregate_constants(net, n_max)?;
    let traffic = solve_traffic(&net.routing)?;
    let (beta_net, multiplicity) = network_beta(net)?;
    let all_infinite = net.stations.iter().all(|s| s.kind == StationKind::InfiniteServer);
    let tail = if all_infinite {
        TailRule { ratio: constants.rho.iter().sum(), power: 0.0, factorial: 1.0 }
    } else {
        TailRule { ratio: beta_net, power: (multiplicity - 1) as f64, factorial: 0.0 }
    };
    let psi = Weights::log_table(constants.ln_psi.clone(), tail)?;
    let phi = Weights::log_table(constants.ln_phi.clone(), tail)?;
    let enter = 1.0 - net.routing[0][0];
    let label = format!("norton J={} mu0={}", net.j(), net.mu0);
    let induced = BirthDeathSpec::new(label, net.mu0 * enter, enter, None, psi, phi)?;
    Ok(NortonReduction { constants, traffic, beta_net, multiplicity, induced })
}
