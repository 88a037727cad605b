use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cyclemax::bdp::BirthDeathSpec;
use cyclemax::cycle_max::{blocking_probs, tail_asymptotics, CycleMaxDistribution};
use cyclemax::extremes::{
    as_limit_constant, compactness_diagnostic, factorial_rate, norming_constants, partial_limit_envelope,
    power_geometric_tail, NormingKind,
};
use cyclemax::networks::{norton_reduce, NetworkSpec};
use cyclemax::simulate::{simulate_cycles, verify_as_convergence, SimConfig};
use cyclemax::verify::{run_suite, Suite};
use cyclemax::{configure_threads, Error};

#[derive(Parser, Debug)]
#[command(name = "cyclemax", version, about = "Cycle maxima of birth-death processes and product-form networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recurrence verdict, series sums and tail ratio limits.
    Classify(SpecArgs),
    /// Exact cycle-maximum law on `0..=nmax`.
    Cdf(CdfArgs),
    /// Tail regime and limit constant.
    Tail(CdfArgs),
    /// Norming constants, limit envelopes and compactness of sample maxima.
    Extremes(ExtremesArgs),
    /// Monte-Carlo cycles against the exact law, or `Y^(k)/b_k` summaries with `--k`.
    Simulate(SimulateArgs),
    /// Norton reduction of an open network to an induced birth-death spec.
    NetworkReduce(ReduceArgs),
    /// Run the self-check suite and print a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct SpecArgs {
    #[arg(long, alias = "in", value_name = "PATH")]
    spec: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct CdfArgs {
    #[arg(long, alias = "in", value_name = "PATH")]
    spec: PathBuf,
    #[arg(long, default_value_t = 50)]
    nmax: usize,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Table {
    Norming,
    Envelope,
    Compactness,
    Limit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Kind {
    Auto,
    Geometric,
    Stirling,
    Lambert,
    Numeric,
}

#[derive(Args, Debug)]
struct ExtremesArgs {
    #[arg(long, alias = "in", value_name = "PATH")]
    spec: PathBuf,
    #[arg(long, value_enum, default_value_t = Table::Norming)]
    table: Table,
    #[arg(long, value_delimiter = ',', default_values_t = [1_000.0, 10_000.0, 100_000.0])]
    k: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Kind::Auto)]
    kind: Kind,
    /// Exponent of the compactness ratio.
    #[arg(long, default_value_t = 2.0)]
    delta: f64,
    /// Upper end of the compactness grid `[10, nmax]`.
    #[arg(long, default_value_t = 40)]
    nmax: usize,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, alias = "in", value_name = "PATH")]
    spec: PathBuf,
    #[arg(long, default_value_t = 20)]
    nmax: usize,
    #[arg(long, default_value_t = 100_000)]
    cycles: usize,
    #[arg(long, value_delimiter = ',')]
    k: Vec<u64>,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct ReduceArgs {
    #[arg(long = "in", alias = "spec", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, default_value_t = 500)]
    nmax: usize,
    #[arg(long, value_name = "PATH", default_value = "induced.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    Fast,
    Full,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::Fast)]
    suite: SuiteArg,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

/// A failure to report: library error or a plain usage problem.
enum Failure {
    Lib(Error),
    Usage(String),
    Checks(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Lib(Error::Io(io::Error::other(e)))
    }
}

type Outcome = Result<(), Failure>;

fn sink(out: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Outcome {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::Json)?;
    writeln!(w)?;
    Ok(())
}

fn write_rows<T: Serialize>(out: &Option<PathBuf>, format: Format, rows: &[T]) -> Outcome {
    match format {
        Format::Json => write_json(out, &rows),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(sink(out)?);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn load_spec(path: &PathBuf) -> Result<BirthDeathSpec, Failure> {
    Ok(BirthDeathSpec::load(path)?)
}

#[derive(Serialize)]
struct CdfRow {
    n: usize,
    cdf: f64,
    conditional_cdf: f64,
    failure_rate: f64,
    blocking_prob: f64,
}

fn cdf(a: CdfArgs) -> Outcome {
    let spec = load_spec(&a.spec)?;
    let blocking = blocking_probs(&spec, a.nmax);
    let dist = CycleMaxDistribution::new(spec);
    let rows: Vec<CdfRow> = (0..=a.nmax)
        .map(|n| CdfRow {
            n,
            cdf: dist.cdf(n),
            conditional_cdf: dist.normalised_cdf(n),
            failure_rate: dist.failure_rate(n),
            blocking_prob: blocking[n],
        })
        .collect();
    write_rows(&a.out, a.format, &rows)
}

fn tail(a: CdfArgs) -> Outcome {
    let spec = load_spec(&a.spec)?;
    write_json(&a.out, &tail_asymptotics(&spec, a.nmax.max(100))?)
}

fn auto_kind(spec: &BirthDeathSpec) -> NormingKind {
    let c = spec.classify();
    if factorial_rate(spec).is_some() {
        NormingKind::StirlingFactorial
    } else if power_geometric_tail(spec).is_some_and(|(power, _)| power != 0.0) {
        NormingKind::LambertW
    } else if c.beta.is_some_and(|b| b * c.rho > 0.0 && b * c.rho < 1.0) {
        NormingKind::Geometric
    } else {
        NormingKind::Numeric
    }
}

#[derive(Serialize)]
struct NormingRow {
    k: f64,
    a_k: f64,
    b_k: f64,
}

#[derive(Serialize)]
struct EnvelopeRow {
    x: f64,
    lower: f64,
    upper: f64,
}

#[derive(Serialize)]
struct LimitRow {
    k: f64,
    #[serde(flatten)]
    limit: cyclemax::extremes::LimitConstant,
}

fn extremes(a: ExtremesArgs) -> Outcome {
    let spec = load_spec(&a.spec)?;
    match a.table {
        Table::Norming => {
            let kind = match a.kind {
                Kind::Auto => auto_kind(&spec),
                Kind::Geometric => NormingKind::Geometric,
                Kind::Stirling => NormingKind::StirlingFactorial,
                Kind::Lambert => NormingKind::LambertW,
                Kind::Numeric => NormingKind::Numeric,
            };
            let nc = norming_constants(&spec, kind, &a.k)?;
            let rows: Vec<NormingRow> =
                (0..nc.k.len()).map(|i| NormingRow { k: nc.k[i], a_k: nc.a[i], b_k: nc.b[i] }).collect();
            write_rows(&a.out, a.format, &rows)
        }
        Table::Envelope => {
            let rows = (0..=16)
                .map(|i| {
                    let x = -3.0 + 0.5 * i as f64;
                    let (lower, upper) = partial_limit_envelope(&spec, x)?;
                    Ok(EnvelopeRow { x, lower, upper })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            write_rows(&a.out, a.format, &rows)
        }
        Table::Compactness => {
            if a.nmax < 10 {
                return Err(Failure::Usage(format!("--nmax must be at least 10 (got {})", a.nmax)));
            }
            let grid: Vec<f64> = (0..=2 * (a.nmax - 10)).map(|i| 10.0 + 0.5 * i as f64).collect();
            write_json(&a.out, &compactness_diagnostic(&spec, a.delta, &grid)?)
        }
        Table::Limit => {
            let rows = a
                .k
                .iter()
                .map(|&k| Ok(LimitRow { k, limit: as_limit_constant(&spec, k)? }))
                .collect::<Result<Vec<_>, Error>>()?;
            write_json(&a.out, &rows)
        }
    }
}

#[derive(Serialize)]
struct SimRow {
    n: usize,
    empirical_cdf: f64,
    exact_cdf: f64,
    abs_err: f64,
}

#[derive(Serialize)]
struct RatioRow {
    k: u64,
    mean_ratio: f64,
    median_ratio: f64,
    q05: f64,
    q95: f64,
}

fn simulate(a: SimulateArgs) -> Outcome {
    let spec = load_spec(&a.spec)?;
    let cfg = SimConfig { seed: a.seed, cycles: a.cycles, ..SimConfig::default() };
    if a.k.is_empty() {
        let sample = simulate_cycles(&spec, &cfg)?;
        let dist = CycleMaxDistribution::new(spec);
        let rows: Vec<SimRow> = (0..=a.nmax)
            .map(|n| {
                let (emp, exact) = (sample.empirical_cdf(n), dist.cdf(n));
                SimRow { n, empirical_cdf: emp, exact_cdf: exact, abs_err: (emp - exact).abs() }
            })
            .collect();
        return write_rows(&a.out, a.format, &rows);
    }
    let summaries = verify_as_convergence(&spec, &a.k, a.reps, &cfg)?;
    let rows: Vec<RatioRow> = summaries
        .iter()
        .map(|s| RatioRow { k: s.k, mean_ratio: s.mean_ratio, median_ratio: s.median_ratio, q05: s.q05, q95: s.q95 })
        .collect();
    write_rows(&a.out, a.format, &rows)
}

fn network_reduce(a: ReduceArgs) -> Outcome {
    let net = NetworkSpec::load(&a.input)?;
    let red = norton_reduce(&net, a.nmax)?;
    red.induced.save(&a.out)?;
    eprintln!(
        "induced spec written to {} (beta_net = {}, multiplicity = {})",
        a.out.display(),
        red.beta_net,
        red.multiplicity
    );
    Ok(())
}

#[derive(Serialize)]
struct VerifyRow<'a> {
    id: &'a str,
    check: &'a str,
    result: &'a str,
    detail: &'a str,
}

fn verify(a: VerifyArgs) -> Outcome {
    let suite = match a.suite {
        SuiteArg::Fast => Suite::Fast,
        SuiteArg::Full => Suite::Full,
    };
    let checks = run_suite(suite, a.seed);
    let rows: Vec<VerifyRow> = checks
        .iter()
        .map(|c| VerifyRow { id: &c.id, check: &c.name, result: if c.passed { "PASS" } else { "FAIL" }, detail: &c.detail })
        .collect();
    write_rows(&a.out, a.format, &rows)?;
    match checks.iter().filter(|c| !c.passed).count() {
        0 => Ok(()),
        n => Err(Failure::Checks(n)),
    }
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Classify(a) => {
            let spec = load_spec(&a.spec)?;
            let c = spec.classify();
            match a.format {
                Format::Json => write_json(&a.out, &c),
                Format::Csv => write_rows(&a.out, a.format, &[ClassifyRow::from(&c)]),
            }
        }
        Command::Cdf(a) => cdf(a),
        Command::Tail(a) => tail(a),
        Command::Extremes(a) => extremes(a),
        Command::Simulate(a) => simulate(a),
        Command::NetworkReduce(a) => network_reduce(a),
        Command::Verify(a) => verify(a),
    }
}

#[derive(Serialize)]
struct ClassifyRow {
    verdict: String,
    rho: f64,
    b_phi_inv: f64,
    b_psi_inv: f64,
    b_star_inv: f64,
    beta_lower: f64,
    beta_upper: f64,
    beta: Option<f64>,
}

impl From<&cyclemax::Classification> for ClassifyRow {
    fn from(c: &cyclemax::Classification) -> Self {
        let verdict = serde_json::to_value(c.verdict).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        ClassifyRow {
            verdict,
            rho: c.rho,
            b_phi_inv: c.b_phi_inv,
            b_psi_inv: c.b_psi_inv,
            b_star_inv: c.b_star_inv,
            beta_lower: c.beta_lower,
            beta_upper: c.beta_upper,
            beta: c.beta,
        }
    }
}

fn broken_pipe(e: &Error) -> bool {
    match e {
        Error::Io(io) => io.kind() == io::ErrorKind::BrokenPipe,
        Error::Json(j) => j.io_error_kind() == Some(io::ErrorKind::BrokenPipe),
        _ => false,
    }
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("CYCLEMAX_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                configure_threads(n);
            }
            _ => {
                eprintln!("ERROR InvalidSpec: CYCLEMAX_THREADS must be a positive integer (got {v:?})");
                return ExitCode::from(2);
            }
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("ERROR {}: {e}", e.code());
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("ERROR InvalidSpec: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Checks(n)) => {
            eprintln!("ERROR VerifyFailed: {n} check(s) failed");
            ExitCode::from(1)
        }
    }
}
