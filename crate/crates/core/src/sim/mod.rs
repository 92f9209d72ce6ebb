//! Synthetic annotators driving a real project end to end.

mod analytic;
mod model;
mod run;

pub use analytic::{analytic_mv_accuracy, analytic_split_distribution};
pub use model::{calibrate, Confusion, ModelError, WorkerModel};
pub use run::{materialize, Materialized, SimConfig, SimError, SimSummary, Simulation, Sink, WorkerGroup};
