//! Simulation and analysis of multiserver-job queues under balanced
//! splitting and classical scheduling policies.
//!
//! A [`SystemConfig`] describes `k` servers fed by a Poisson stream of jobs
//! drawn from classes with a server need and a service-time law. The
//! [`engine`] runs any [`PolicySpec`] over that stream; [`analytics`] and
//! [`partition`] give the closed-form side.

pub mod analytics;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod normal;
pub mod partition;
pub mod policies;
pub mod trace;
pub mod workload;

pub use engine::{run, run_replications, ReplicationSummary, RunOptions, SimOutcome};
pub use error::{Error, Result};
pub use experiment::{ExperimentKind, ExperimentPlan};
pub use partition::{compute_partition, Partition};
pub use policies::PolicySpec;
pub use trace::{ClassModel, TraceJob};
pub use workload::{Job, JobClass, ServiceDistribution, SystemConfig};
