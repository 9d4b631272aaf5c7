//! Static balanced sub-partition of the servers into per-class pools plus a
//! shared helper pool.
//!
//! Class `i` gets `s_i = floor(psi * q_i)` slots of `n_i` servers, where
//! `q_i = k * demand_i / (n_i * demand)`. When every `q_i` is an integer the
//! split is exact and the helper pool is empty. Otherwise `psi` is the
//! largest value in `[0, 1]` that leaves at least `max_i n_i` helper servers.
//!
//! The helper count only changes where some `psi * q_i` crosses an integer,
//! so the search runs over the breakpoints `m / q_i`. The feasible set is
//! `[0, b)` for the first infeasible breakpoint `b`; the reported `psi` is
//! the largest feasible breakpoint, whose slot vector is the one used on the
//! whole interval up to `b`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::workload::SystemConfig;

/// Relative tolerance used to snap near-integers produced by float demands.
pub const INTEGRALITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    /// Servers dedicated to each class (`a_i`).
    pub servers: Vec<usize>,
    /// Concurrent class-`i` jobs the dedicated pool can hold (`s_i`).
    pub slots: Vec<usize>,
    /// Helper pool size.
    pub helper: usize,
    /// Realized scaling factor.
    pub psi: f64,
    /// Classes with no dedicated slot; all their jobs go to the helper pool.
    pub helper_only: Vec<bool>,
}

impl Partition {
    pub fn num_classes(&self) -> usize {
        self.slots.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionOptions {
    /// Allow classes with zero slots and mark them helper-only instead of
    /// failing.
    pub fold_to_helper: bool,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        Self {
            fold_to_helper: true,
        }
    }
}

fn snapped_floor(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= INTEGRALITY_TOLERANCE * r.abs().max(1.0) {
        r.max(0.0) as usize
    } else {
        x.floor().max(0.0) as usize
    }
}

fn is_integral(x: f64) -> bool {
    (x - x.round()).abs() <= INTEGRALITY_TOLERANCE * x.abs().max(1.0)
}

/// Unscaled slot targets `q_i = k * demand_i / (n_i * demand)`.
pub fn slot_targets(config: &SystemConfig) -> Vec<f64> {
    let total = config.total_demand();
    let k = config.k() as f64;
    config
        .classes()
        .iter()
        .map(|c| k * c.relative_demand() / (c.need as f64 * total))
        .collect()
}

pub fn compute_partition(config: &SystemConfig) -> Result<Partition> {
    compute_partition_with(config, PartitionOptions::default())
}

pub fn compute_partition_with(config: &SystemConfig, opts: PartitionOptions) -> Result<Partition> {
    let needs: Vec<usize> = config.classes().iter().map(|c| c.need).collect();
    let k = config.k();
    let max_need = config.max_need();
    if k < max_need {
        return Err(Error::Partition(format!(
            "k = {k} is below the largest need {max_need}"
        )));
    }
    let targets = slot_targets(config);

    let (psi, slots) = if targets.iter().all(|&q| is_integral(q)) {
        (1.0, targets.iter().map(|&q| snapped_floor(q)).collect())
    } else {
        search(k, &needs, &targets)
    };

    let servers: Vec<usize> = slots.iter().zip(&needs).map(|(s, n)| s * n).collect();
    let used: usize = servers.iter().sum();
    debug_assert!(used <= k);
    let helper = k - used;
    let helper_only: Vec<bool> = slots.iter().map(|&s| s == 0).collect();
    if !opts.fold_to_helper {
        if let Some(i) = helper_only.iter().position(|&h| h) {
            return Err(Error::Partition(format!(
                "class {i} receives no dedicated slot; enable fold-to-helper to route it to the helper pool"
            )));
        }
    }
    Ok(Partition {
        servers,
        slots,
        helper,
        psi,
        helper_only,
    })
}

// Slots at the breakpoint where class `j` reaches `m` slots.
fn slots_at(targets: &[f64], j: usize, m: usize) -> Vec<usize> {
    targets
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            if i == j {
                m
            } else {
                snapped_floor(m as f64 * q / targets[j])
            }
        })
        .collect()
}

fn helper_left(k: usize, needs: &[usize], slots: &[usize]) -> Option<usize> {
    let used: usize = slots.iter().zip(needs).map(|(s, n)| s * n).sum();
    k.checked_sub(used)
}

fn search(k: usize, needs: &[usize], targets: &[f64]) -> (f64, Vec<usize>) {
    let max_need = needs.iter().copied().max().unwrap_or(0);
    let feasible = |slots: &[usize]| helper_left(k, needs, slots).is_some_and(|h| h >= max_need);

    let full: Vec<usize> = targets.iter().map(|&q| snapped_floor(q)).collect();
    if feasible(&full) {
        return (1.0, full);
    }

    // (psi, class, slot count) for every breakpoint strictly inside (0, 1).
    let mut breakpoints: Vec<(f64, usize, usize)> = Vec::new();
    for (j, &q) in targets.iter().enumerate() {
        for m in 1..=snapped_floor(q) {
            let x = m as f64 / q;
            if x < 1.0 && !is_integral_one(x) {
                breakpoints.push((x, j, m));
            }
        }
    }
    breakpoints.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(x, j, m) in &breakpoints {
        let slots = slots_at(targets, j, m);
        if feasible(&slots) {
            return (x, slots);
        }
    }
    (0.0, vec![0; targets.len()])
}

fn is_integral_one(x: f64) -> bool {
    (x - 1.0).abs() <= INTEGRALITY_TOLERANCE
}
