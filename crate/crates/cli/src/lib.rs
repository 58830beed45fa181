//! Scenario harness for the HM4 place-recognition engine: configuration,
//! world preparation, the two scenario arms, and report emission.

pub mod config;
pub mod report;
pub mod scenario;
pub mod world;

pub use config::{DescriptorWorld, ParamBlock, ScenarioConfig, WorldSource};
pub use report::{emit_report, evaluate, Arm, EvaluationReport, SequenceMetrics, TraceRow};
pub use scenario::{cluster_store, encode_to_store, run_baseline, run_scenario};
