//! Closed-form loss-system machinery: Erlang-B, the M/GI/s/s mean response
//! time, the Halfin-Whitt limit constant, the helper-set stability test and
//! the helper-routing bounds of the balanced-splitting policies.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::normal;
use crate::partition::Partition;
use crate::workload::{JobClass, SystemConfig, SHARE_TOLERANCE};

/// Blocking probability of an M/GI/s/s system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErlangResult {
    pub servers: usize,
    pub offered_load: f64,
    pub blocking: f64,
}

impl ErlangResult {
    pub fn compute(servers: usize, offered_load: f64) -> Result<Self> {
        Ok(Self {
            servers,
            offered_load,
            blocking: erlang_b(servers, offered_load)?,
        })
    }
}

fn check_load(a: f64) -> Result<()> {
    if a.is_finite() && a >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "offered load {a} must be finite and non-negative"
        )))
    }
}

/// Erlang's loss formula `E_s(a)` via `E_0 = 1`,
/// `E_j = a E_{j-1} / (j + a E_{j-1})`.
pub fn erlang_b(s: usize, a: f64) -> Result<f64> {
    check_load(a)?;
    Ok(erlang_b_unchecked(s, a))
}

pub(crate) fn erlang_b_unchecked(s: usize, a: f64) -> f64 {
    let mut e = 1.0;
    for j in 1..=s {
        let ae = a * e;
        e = ae / (j as f64 + ae);
    }
    e
}

/// Mean response time of an M/GI/s/s system counting blocked jobs as zero:
/// `d * (1 - E_s(a))`.
pub fn mgss_mean_response(d: f64, s: usize, a: f64) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mean service {d} must be positive"
        )));
    }
    Ok(d * (1.0 - erlang_b(s, a)?))
}

fn check_theta(theta: f64) -> Result<()> {
    if theta.is_finite() && theta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "theta {theta} must be positive"
        )))
    }
}

/// `phi(theta) / Phi(theta)`, the limit of `sqrt(s) E_s(s (1 - theta/sqrt(s)))`.
pub fn halfin_whitt_constant(theta: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(normal::pdf(theta) / normal::cdf(theta))
}

fn check_partition(config: &SystemConfig, partition: &Partition) -> Result<()> {
    let classes = config.classes();
    if partition.slots.len() != classes.len() || partition.servers.len() != classes.len() {
        return Err(Error::InvalidArgument(format!(
            "partition has {} classes, config has {}",
            partition.slots.len(),
            classes.len()
        )));
    }
    let used: usize = partition.servers.iter().sum();
    if used + partition.helper != config.k() {
        return Err(Error::InvalidArgument(format!(
            "partition covers {} servers, config has k = {}",
            used + partition.helper,
            config.k()
        )));
    }
    for (i, class) in classes.iter().enumerate() {
        if partition.servers[i] != partition.slots[i] * class.need {
            return Err(Error::InvalidArgument(format!(
                "class {i}: {} servers is not {} slots of need {}",
                partition.servers[i], partition.slots[i], class.need
            )));
        }
    }
    Ok(())
}

/// Per-class blocking `E_{s_i}(lambda alpha_i d_i)` of the dedicated pools.
pub fn class_blocking(config: &SystemConfig, partition: &Partition) -> Result<Vec<f64>> {
    check_partition(config, partition)?;
    Ok(config
        .classes()
        .iter()
        .zip(&partition.slots)
        .map(|(c, &s)| erlang_b_unchecked(s, config.lambda() * c.share * c.mean_service()))
        .collect())
}

/// Left side of the helper-set stability test,
/// `(lambda / h) * sum_i demand_i * E_{s_i}(lambda alpha_i d_i)`; zero when the
/// helper set is empty. Balanced splitting is stable when this is below one
/// and the load is below one.
pub fn stability_lhs(config: &SystemConfig, partition: &Partition) -> Result<f64> {
    let blocking = class_blocking(config, partition)?;
    if partition.helper == 0 {
        return Ok(0.0);
    }
    let weighted: f64 = config
        .classes()
        .iter()
        .zip(&blocking)
        .map(|(c, e)| c.relative_demand() * e)
        .sum();
    Ok(config.lambda() / partition.helper as f64 * weighted)
}

/// Probability that an arrival is routed to the helper set when routing is
/// irrevocable, `sum_i alpha_i E_{s_i}(lambda alpha_i d_i)`. Upper-bounds the
/// same probability under the pulling variant.
pub fn helper_routing_bound(config: &SystemConfig, partition: &Partition) -> Result<f64> {
    let blocking = class_blocking(config, partition)?;
    Ok(config
        .classes()
        .iter()
        .zip(&blocking)
        .map(|(c, e)| c.share * e)
        .sum())
}

/// Per-class Halfin-Whitt parameters `theta_i = theta sqrt(demand_i / (n_i demand))`.
pub fn class_thetas(theta: f64, classes: &[JobClass]) -> Result<Vec<f64>> {
    check_theta(theta)?;
    if classes.is_empty() {
        return Err(Error::InvalidArgument("class list is empty".into()));
    }
    let shares: f64 = classes.iter().map(|c| c.share).sum();
    if (shares - 1.0).abs() > SHARE_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "class shares sum to {shares}"
        )));
    }
    let total: f64 = classes.iter().map(JobClass::relative_demand).sum();
    if !(total.is_finite() && total > 0.0) || classes.iter().any(|c| c.need == 0) {
        return Err(Error::InvalidArgument("degenerate class list".into()));
    }
    Ok(classes
        .iter()
        .map(|c| theta * (c.relative_demand() / (c.need as f64 * total)).sqrt())
        .collect())
}

/// Limit bound on `sqrt(k / f_k) * P_H` in the critically loaded regime:
/// `theta * sum_i (alpha_i / theta_i) phi(theta_i) / Phi(theta_i)`.
/// `classes` carry unit-scale needs.
pub fn critical_bound(theta: f64, classes: &[JobClass]) -> Result<f64> {
    let thetas = class_thetas(theta, classes)?;
    Ok(theta
        * classes
            .iter()
            .zip(&thetas)
            .map(|(c, &t)| c.share / t * normal::pdf(t) / normal::cdf(t))
            .sum::<f64>())
}
