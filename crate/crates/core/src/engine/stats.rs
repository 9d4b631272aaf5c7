use serde::Serialize;

/// z-value of a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

/// Number of batches used for single-run batch-means intervals.
pub const BATCHES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassOutcome {
    pub arrivals: u64,
    pub completed: u64,
    pub mean_response: f64,
    /// Fraction served by the helper pool (balanced splitting) or waiting
    /// fraction.
    pub p_helper: f64,
    /// Fraction routed to the helper pool on arrival, including jobs later
    /// pulled back (equals `p_helper` without a helper pool).
    pub p_routed: f64,
    /// Counted jobs that started service in their dedicated pool.
    pub admitted_dedicated: u64,
}

/// Metrics of one simulation run. Statistics cover jobs that arrive after the
/// warmup prefix and complete before the calendar drains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutcome {
    pub policy: String,
    pub seed: u64,
    pub arrivals: usize,
    pub warmup_fraction: f64,
    pub completed: u64,
    pub mean_response: f64,
    /// Half-width of a 95% batch-means interval on the mean response.
    pub response_ci95: f64,
    /// For balanced splitting, the fraction of counted arrivals served by
    /// the helper pool. For single-pool policies, the fraction that could not
    /// start on arrival.
    pub p_helper: f64,
    /// Fraction of counted arrivals routed to the helper pool on arrival,
    /// whether or not they were pulled back later.
    pub p_routed: f64,
    /// Fraction of counted arrivals that could not start on arrival.
    pub p_wait: f64,
    pub per_class: Vec<ClassOutcome>,
    /// Time-average fraction of busy helper servers (0 without a helper pool).
    pub helper_utilization: f64,
    /// Time-average fraction of busy servers over all pools.
    pub utilization: f64,
    /// Time-average number of jobs in system over the measurement window.
    pub mean_in_system: f64,
    /// Counted arrivals per unit time over the measurement window.
    pub observed_arrival_rate: f64,
    pub warmup_discarded: u64,
    pub total_arrivals: u64,
    pub total_completions: u64,
    pub in_system_at_end: u64,
    pub preemptions: u64,
}

/// Sample mean and normal-approximation 95% half-width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Z95 * (var / n as f64).sqrt())
}

/// Batch-means half-width over observations kept in arrival order.
pub fn batch_means_ci95(ordered: &[f64]) -> f64 {
    let n = ordered.len();
    if n < 2 * BATCHES {
        return f64::NAN;
    }
    let size = n / BATCHES;
    let means: Vec<f64> = (0..BATCHES)
        .map(|b| {
            let chunk = &ordered[b * size..(b + 1) * size];
            chunk.iter().sum::<f64>() / size as f64
        })
        .collect();
    mean_ci95(&means).1
}

/// Aggregate of independent replications of one (config, policy) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub policy: String,
    pub replications: usize,
    pub mean_response: f64,
    pub mean_response_ci95: f64,
    pub p_helper: f64,
    pub p_helper_ci95: f64,
    pub p_routed: f64,
    pub p_routed_ci95: f64,
    pub per_class_p_helper: Vec<(f64, f64)>,
    pub per_class_mean_response: Vec<(f64, f64)>,
}

impl ReplicationSummary {
    pub fn from_outcomes(outcomes: &[SimOutcome]) -> Self {
        let pick = |f: &dyn Fn(&SimOutcome) -> f64| {
            let v: Vec<f64> = outcomes.iter().map(f).collect();
            mean_ci95(&v)
        };
        let (mean_response, mean_response_ci95) = pick(&|o| o.mean_response);
        let (p_helper, p_helper_ci95) = pick(&|o| o.p_helper);
        let (p_routed, p_routed_ci95) = pick(&|o| o.p_routed);
        let classes = outcomes.first().map_or(0, |o| o.per_class.len());
        let per_class_p_helper = (0..classes)
            .map(|i| pick(&|o| o.per_class[i].p_helper))
            .collect();
        let per_class_mean_response = (0..classes)
            .map(|i| pick(&|o| o.per_class[i].mean_response))
            .collect();
        Self {
            policy: outcomes
                .first()
                .map(|o| o.policy.clone())
                .unwrap_or_default(),
            replications: outcomes.len(),
            mean_response,
            mean_response_ci95,
            p_helper,
            p_helper_ci95,
            p_routed,
            p_routed_ci95,
            per_class_p_helper,
            per_class_mean_response,
        }
    }

    /// True when this mean response lies below `other`'s with the two
    /// intervals disjoint.
    pub fn response_clearly_below(&self, other: &Self) -> bool {
        self.mean_response + self.mean_response_ci95
            < other.mean_response - other.mean_response_ci95
    }
}
