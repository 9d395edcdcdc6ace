//! Drift detection over business process event streams.
//!
//! Traces are abstracted into partially ordered runs under a windowed alpha
//! concurrency relation. A chi-square test of independence between two
//! adjacent run populations flags sudden drifts; pairs of consecutive sudden
//! drifts are then tested for a linear mixture to recognise gradual drifts.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod concurrency;
pub mod error;
pub mod eval;
pub mod generator;
pub mod gradual;
pub mod log;
pub mod pipeline;
pub mod run;
pub mod scalar;
pub mod stats;
pub mod sudden;

pub use concurrency::{AlphaOracle, ConcurrencyOracle, ConcurrencyRelation, ConcurrencyState, ConcurrentPairs};
pub use error::{ConfigError, InvariantViolation, LogError, ModelError, SpecError, StatsError};
pub use eval::{score_gradual, score_sudden, EvalResult};
pub use generator::{DriftSpec, GoldStandard, Node, Pattern};
pub use log::{parse_csv, parse_xes, stream_traces, Event, EventLog, Trace};
pub use run::{run_histogram, run_key, trace_to_run, Histogram, Run};
pub use scalar::Scalar;
pub use sudden::{adapt_window, Interval, SuddenDrift};

pub type DetectorConfig = sudden::DetectorConfig<f64>;
pub type SuddenDetector = sudden::SuddenDetector<f64>;
pub type PValue = sudden::PValue<f64>;
pub type GradualDrift = gradual::GradualDrift<f64>;
pub type GradualDetector = gradual::GradualDetector<f64>;
pub type Detection = pipeline::Detection<f64>;
pub type DriftReport = pipeline::DriftReport<f64>;
