use thiserror::Error;

/// Errors raised by the library.
///
/// Every variant carries a stable machine-readable code (see [`Error::code`])
/// which the CLI prints as `ERROR <code>: <msg>`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state {n} is at or beyond the cap {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("invalid input: {0}")]
    InvalidSpec(String),
    #[error("process is not positive recurrent ({0})")]
    NotPositiveRecurrent(String),
    #[error("Palm distribution at births is undefined: the series sum psi(n) rho^n diverges")]
    PalmUndefined,
    #[error("queue is not stable: lambda = {lambda} >= mu = {mu}")]
    NotStable { lambda: f64, mu: f64 },
    #[error("process is not transient")]
    NotTransient,
    #[error("power-law fit failed: residual {residual:.3e} exceeds {tolerance:.1e}")]
    FitFailed { residual: f64, tolerance: f64 },
    #[error("no monotone decreasing tail found within {n_max} knots")]
    NoMonotoneTail { n_max: usize },
    #[error("value {value} outside the range (0, {max}] of the tail function")]
    OutOfRange { value: f64, max: f64 },
    #[error("tail is not subcritical: upper ratio times rho = {beta_rho}")]
    NotSubcritical { beta_rho: f64 },
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("norming kind {kind} does not fit this process: {reason}")]
    KindMismatch { kind: &'static str, reason: String },
    #[error("routing matrix is not irreducible")]
    NotIrreducible,
    #[error("traffic equations are singular or badly conditioned (residual {residual:.3e})")]
    SingularSystem { residual: f64 },
    #[error("normalising constant overflowed at N = {0}")]
    Overflow(usize),
    #[error("station weights are not separable; use the lattice path")]
    NonSeparable,
    #[error("loads {0} and {1} coincide within the relative threshold")]
    CoincidentLoads(f64, f64),
    #[error("a cycle reached the escape horizon {horizon} in jump-chain mode")]
    EscapedCycle { horizon: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::CapExceeded { .. } => "CapExceeded",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::NotPositiveRecurrent(_) => "NotPositiveRecurrent",
            Error::PalmUndefined => "PalmUndefined",
            Error::NotStable { .. } => "NotStable",
            Error::NotTransient => "NotTransient",
            Error::FitFailed { .. } => "FitFailed",
            Error::NoMonotoneTail { .. } => "NoMonotoneTail",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::NotSubcritical { .. } => "NotSubcritical",
            Error::NotApplicable(_) => "NotApplicable",
            Error::KindMismatch { .. } => "KindMismatch",
            Error::NotIrreducible => "NotIrreducible",
            Error::SingularSystem { .. } => "SingularSystem",
            Error::Overflow(_) => "Overflow",
            Error::NonSeparable => "NonSeparable",
            Error::CoincidentLoads(..) => "CoincidentLoads",
            Error::EscapedCycle { .. } => "EscapedCycle",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }

    /// True for errors caused by malformed input rather than by the computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_) | Error::Json(_) | Error::Io(_) | Error::NotIrreducible
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

const INVALID_PREFIX: &str = "invalid input: ";

/// Parses JSON, surfacing validation failures raised during deserialisation
/// as [`Error::InvalidSpec`] instead of [`Error::Json`].
pub(crate) fn from_json<T: serde::de::DeserializeOwned>(s: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix(INVALID_PREFIX) {
            Some(rest) if e.is_data() => {
                // drop serde's " at line L column C" suffix
                let rest = rest.rsplit_once(" at line ").map_or(rest, |(head, _)| head);
                Error::InvalidSpec(rest.to_string())
            }
            _ => Error::Json(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use crate::bdp::BirthDeathSpec;

    #[test]
    fn validation_inside_serde_keeps_its_code() {
        let bad = r#"{"lambda":-1,"mu":1,"psi":{"kind":"preset","name":"mm1"},"phi":{"kind":"preset","name":"mm1"}}"#;
        let e = BirthDeathSpec::from_json_str(bad).unwrap_err();
        assert_eq!(e.code(), "InvalidSpec");
        assert!(!e.to_string().contains(" at line "));
        assert_eq!(BirthDeathSpec::from_json_str("{").unwrap_err().code(), "Json");
    }
}
