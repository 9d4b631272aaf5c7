//! Fixtures shared by the benchmarks.

use msj_core::workload::figure1_workload;
use msj_core::{PolicySpec, RunOptions, SystemConfig};

/// Policies timed by the simulation benchmark.
pub const POLICIES: [&str; 8] = [
    "fcfs",
    "ff-backfill",
    "lsf",
    "msf",
    "ff-srpt",
    "serverfilling",
    "serverfilling-srpt",
    "bs:fcfs",
];

/// Critically loaded figure-1 workload on `k` servers.
pub fn critical(k: usize) -> SystemConfig {
    figure1_workload(k, 0.7).expect("k >= 32")
}

pub fn policy(name: &str) -> PolicySpec {
    name.parse().expect("known policy")
}

/// A short run: long enough to reach steady state at k = 256.
pub fn short_run(arrivals: usize) -> RunOptions {
    RunOptions {
        arrivals,
        seed: 11,
        ..RunOptions::default()
    }
}
