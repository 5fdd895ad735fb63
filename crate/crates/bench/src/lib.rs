//! Problem catalog, experiment runner and output writers for `aarmr-core`.

pub mod error;
pub mod experiment;
pub mod preset;
pub mod report;
pub mod spec;

pub use error::BenchError;
pub use experiment::{compare, run, sweep, Comparison};
pub use preset::Preset;
pub use report::{RunReport, Totals};
pub use spec::ProblemSpec;
