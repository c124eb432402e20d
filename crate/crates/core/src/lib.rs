//! Simulator and analytical model for data-diffusion task farms: executors that cache
//! the data they read, a dispatcher that steers tasks toward cached copies, and a
//! provisioner that grows the pool with load.

pub mod cache;
pub mod config;
pub mod metrics;
pub mod microbench;
pub mod model;
pub mod provisioner;
pub mod scheduler;
pub mod sim;
pub mod types;
pub mod workload;

pub use config::{ConfigError, RunConfig};
pub use metrics::{MetricsLedger, RunReport};
pub use scheduler::{DispatchPolicy, SchedulerConfig, SchedulerState};
pub use sim::{run, SimError};
pub use types::{Bits, ExecutorId, Micros, ObjectId, TaskId};
