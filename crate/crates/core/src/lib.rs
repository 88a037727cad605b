//! Cycle maxima of birth-death processes: exact laws, extreme-value
//! asymptotics of sample maxima, Monte-Carlo validation and Norton
//! reduction of open product-form networks.

pub mod bdp;
pub mod cycle_max;
pub mod error;
pub mod exec;
pub mod extremes;
pub mod lambert;
pub mod networks;
pub mod series;
pub mod simulate;
pub mod verify;

pub use bdp::{BirthDeathSpec, Classification, TailRule, Verdict, Weights};
pub use cycle_max::CycleMaxDistribution;
pub use error::{Error, Result};
pub use exec::{configure_threads, Execution};
pub use extremes::{NormingKind, TailFunction};
pub use networks::{NetworkSpec, NortonReduction, Station, StationKind};
pub use simulate::{SamplingMode, SimConfig};
