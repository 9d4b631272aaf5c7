//! Job classes, service-time laws, the Poisson job stream and the
//! many-server scalings used by the experiments.

use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of class shares.
pub const SHARE_TOLERANCE: f64 = 1e-9;

/// Service-time law of one job class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum ServiceDistribution {
    Exponential {
        mean: f64,
    },
    Deterministic {
        value: f64,
    },
    /// Resampled uniformly with replacement.
    Empirical {
        samples: Arc<Vec<f64>>,
    },
}

impl ServiceDistribution {
    pub fn exponential(mean: f64) -> Self {
        Self::Exponential { mean }
    }

    pub fn deterministic(value: f64) -> Self {
        Self::Deterministic { value }
    }

    pub fn empirical(samples: Vec<f64>) -> Self {
        Self::Empirical {
            samples: Arc::new(samples),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { mean } => *mean,
            Self::Deterministic { value } => *value,
            Self::Empirical { samples } => samples.iter().sum::<f64>() / samples.len() as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Exponential { mean } => mean.is_finite() && *mean > 0.0,
            Self::Deterministic { value } => value.is_finite() && *value > 0.0,
            Self::Empirical { samples } => {
                !samples.is_empty() && samples.iter().all(|s| s.is_finite() && *s > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidWorkload(format!(
                "service distribution {self:?} must have a positive finite mean and positive samples"
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exponential { mean } => {
                let e: f64 = Exp1.sample(rng);
                mean * e
            }
            Self::Deterministic { value } => *value,
            Self::Empirical { samples } => samples[rng.random_range(0..samples.len())],
        }
    }
}

/// One job class: server need, arrival share and service-time law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobClass {
    #[serde(skip)]
    pub index: usize,
    pub need: usize,
    pub share: f64,
    #[serde(rename = "dist")]
    pub service: ServiceDistribution,
}

impl JobClass {
    pub fn new(index: usize, need: usize, share: f64, service: ServiceDistribution) -> Self {
        Self {
            index,
            need,
            share,
            service,
        }
    }

    pub fn mean_service(&self) -> f64 {
        self.service.mean()
    }

    /// Expected server-time consumed per arrival: share * mean * need.
    pub fn relative_demand(&self) -> f64 {
        self.share * self.service.mean() * self.need as f64
    }
}

fn validate_classes(classes: &[JobClass]) -> Result<()> {
    if classes.is_empty() {
        return Err(Error::InvalidWorkload("class list is empty".into()));
    }
    let mut total = 0.0;
    for (pos, class) in classes.iter().enumerate() {
        if class.index != pos {
            return Err(Error::InvalidWorkload(format!(
                "class at position {pos} has index {}; indices must be unique and positional",
                class.index
            )));
        }
        if class.need == 0 {
            return Err(Error::InvalidWorkload(format!(
                "class {pos} has zero server need"
            )));
        }
        if !(class.share > 0.0 && class.share <= 1.0) {
            return Err(Error::InvalidWorkload(format!(
                "class {pos} share {} is outside (0, 1]",
                class.share
            )));
        }
        class.service.validate()?;
        total += class.share;
    }
    if (total - 1.0).abs() > SHARE_TOLERANCE {
        return Err(Error::InvalidWorkload(format!(
            "class shares sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Sum of relative demands over a class list.
pub fn total_demand(classes: &[JobClass]) -> f64 {
    classes.iter().map(JobClass::relative_demand).sum()
}

/// A cluster of `k` servers fed by a Poisson stream of rate `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    k: usize,
    lambda: f64,
    classes: Vec<JobClass>,
    require_stable: bool,
}

#[derive(Serialize, Deserialize)]
struct ConfigDoc {
    k: usize,
    lambda: f64,
    classes: Vec<JobClass>,
}

impl SystemConfig {
    /// Builds a config and rejects it unless the load is below one.
    pub fn new(k: usize, lambda: f64, classes: Vec<JobClass>) -> Result<Self> {
        Self::build(k, lambda, classes, true)
    }

    /// Same as [`SystemConfig::new`] but accepts overloaded systems.
    pub fn new_allow_unstable(k: usize, lambda: f64, classes: Vec<JobClass>) -> Result<Self> {
        Self::build(k, lambda, classes, false)
    }

    fn build(k: usize, lambda: f64, classes: Vec<JobClass>, require_stable: bool) -> Result<Self> {
        validate_classes(&classes)?;
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidWorkload(format!(
                "arrival rate {lambda} must be positive and finite"
            )));
        }
        let max_need = classes.iter().map(|c| c.need).max().unwrap_or(0);
        if k < max_need {
            return Err(Error::InvalidWorkload(format!(
                "k = {k} is smaller than the largest server need {max_need}"
            )));
        }
        let config = Self {
            k,
            lambda,
            classes,
            require_stable,
        };
        if require_stable && config.load() >= 1.0 {
            return Err(Error::InvalidWorkload(format!(
                "load {:.6} is not below one",
                config.load()
            )));
        }
        Ok(config)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn classes(&self) -> &[JobClass] {
        &self.classes
    }

    pub fn require_stable(&self) -> bool {
        self.require_stable
    }

    pub fn max_need(&self) -> usize {
        self.classes.iter().map(|c| c.need).max().unwrap_or(0)
    }

    pub fn relative_demand(&self, class: usize) -> f64 {
        self.classes[class].relative_demand()
    }

    pub fn total_demand(&self) -> f64 {
        total_demand(&self.classes)
    }

    /// Offered work per unit of capacity, `lambda * sum(demand) / k`.
    pub fn load(&self) -> f64 {
        self.lambda * self.total_demand() / self.k as f64
    }

    /// Mean service time of an arbitrary job, `sum(share * mean)`.
    pub fn mean_service(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.share * c.mean_service())
            .sum()
    }

    /// Same classes and k with a different arrival rate.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::build(self.k, lambda, self.classes.clone(), self.require_stable)
    }

    /// Same classes and k with the arrival rate chosen to hit `rho`.
    pub fn with_load(&self, rho: f64) -> Result<Self> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "load {rho} must be positive"
            )));
        }
        self.with_lambda(rho * self.k as f64 / self.total_demand())
    }

    /// Lifts the stability requirement on an existing config.
    pub fn allow_unstable(mut self) -> Self {
        self.require_stable = false;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ConfigDoc {
            k: self.k,
            lambda: self.lambda,
            classes: self.classes.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with(text, true)
    }

    pub fn from_json_with(text: &str, require_stable: bool) -> Result<Self> {
        let doc: ConfigDoc = serde_json::from_str(text)?;
        let classes = doc
            .classes
            .into_iter()
            .enumerate()
            .map(|(i, c)| JobClass { index: i, ..c })
            .collect();
        Self::build(doc.k, doc.lambda, classes, require_stable)
    }

    pub fn load_file(path: &Path, require_stable: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_with(&text, require_stable)
    }
}

/// A realized job of the arrival stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub id: u64,
    pub class_index: usize,
    pub arrival_time: f64,
    pub service_time: f64,
    pub need: usize,
}

// Sub-stream identifiers for the root seed.
const STREAM_ARRIVALS: u64 = 0;
const STREAM_LABELS: u64 = 1;
const STREAM_SERVICE_BASE: u64 = 2;

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Infinite Poisson job stream. Inter-arrival gaps, class labels and each
/// class's service times come from independent sub-streams of one seed, so
/// the same seed yields the same jobs regardless of who consumes them.
#[derive(Debug, Clone)]
pub struct ArrivalStream {
    classes: Vec<JobClass>,
    lambda: f64,
    labels: WeightedIndex<f64>,
    arrival_rng: ChaCha8Rng,
    label_rng: ChaCha8Rng,
    service_rngs: Vec<ChaCha8Rng>,
    clock: f64,
    next_id: u64,
}

impl ArrivalStream {
    pub fn new(config: &SystemConfig, seed: u64) -> Self {
        let classes = config.classes().to_vec();
        let labels = WeightedIndex::new(classes.iter().map(|c| c.share))
            .expect("validated shares are positive");
        let service_rngs = (0..classes.len() as u64)
            .map(|i| substream(seed, STREAM_SERVICE_BASE + i))
            .collect();
        Self {
            classes,
            lambda: config.lambda(),
            labels,
            arrival_rng: substream(seed, STREAM_ARRIVALS),
            label_rng: substream(seed, STREAM_LABELS),
            service_rngs,
            clock: 0.0,
            next_id: 0,
        }
    }
}

impl Iterator for ArrivalStream {
    type Item = Job;

    fn next(&mut self) -> Option<Job> {
        let gap: f64 = Exp1.sample(&mut self.arrival_rng);
        let mut time = self.clock + gap / self.lambda;
        // Keep arrival times strictly increasing even for a zero draw.
        if time <= self.clock && self.next_id > 0 {
            time = f64::from_bits(self.clock.to_bits() + 1);
        }
        self.clock = time;
        let class_index = self.labels.sample(&mut self.label_rng);
        let class = &self.classes[class_index];
        let service_time = class.service.sample(&mut self.service_rngs[class_index]);
        let job = Job {
            id: self.next_id,
            class_index,
            arrival_time: time,
            service_time,
            need: class.need,
        };
        self.next_id += 1;
        Some(job)
    }
}

/// The first `count` jobs of the stream seeded by `seed`.
pub fn arrival_stream(config: &SystemConfig, count: usize, seed: u64) -> Result<Vec<Job>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "job count must be at least 1".into(),
        ));
    }
    Ok(ArrivalStream::new(config, seed).take(count).collect())
}

/// Subcritical many-server scaling: the arrival rate grows as `k / f_k`
/// (relative to the base cluster size) and needs grow by `f_k`, which keeps
/// the load of `base` unchanged.
pub fn scale_subcritical(base: &SystemConfig, k: usize, f_k: usize) -> Result<SystemConfig> {
    if f_k == 0 {
        return Err(Error::InvalidArgument("f_k must be at least 1".into()));
    }
    if k < f_k * base.max_need() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} cannot hold the scaled need {}",
            f_k * base.max_need()
        )));
    }
    let classes = scale_needs(base.classes(), f_k);
    let lambda = base.lambda() * k as f64 / (f_k as f64 * base.k() as f64);
    SystemConfig::build(k, lambda, classes, base.require_stable())
}

fn scale_needs(classes: &[JobClass], f_k: usize) -> Vec<JobClass> {
    classes
        .iter()
        .map(|c| JobClass {
            need: c.need * f_k,
            ..c.clone()
        })
        .collect()
}

/// Load targeted by the Halfin-Whitt scaling: `1 - theta * sqrt(f_k / k)`.
pub fn halfin_whitt_load(k: usize, f_k: usize, theta: f64) -> f64 {
    1.0 - theta * (f_k as f64 / k as f64).sqrt()
}

/// Critically loaded scaling: needs grow by `f_k` and the arrival rate is set
/// so that `(1 - rho) * sqrt(k / f_k) = theta`. `base_classes` carry
/// unit-scale needs.
pub fn scale_halfin_whitt(
    base_classes: &[JobClass],
    k: usize,
    f_k: usize,
    theta: f64,
) -> Result<SystemConfig> {
    validate_classes(base_classes)?;
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "theta {theta} must be positive"
        )));
    }
    if f_k == 0 || k == 0 {
        return Err(Error::InvalidArgument(
            "k and f_k must be at least 1".into(),
        ));
    }
    let rho = halfin_whitt_load(k, f_k, theta);
    if rho <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "theta = {theta} with k = {k}, f_k = {f_k} gives non-positive load {rho}"
        )));
    }
    let lambda = rho * k as f64 / (f_k as f64 * total_demand(base_classes));
    SystemConfig::build(k, lambda, scale_needs(base_classes, f_k), true)
}

/// `floor((k / 32)^(2/3))`, computed exactly as the largest `m` with
/// `1024 * m^3 <= k^2`.
pub fn figure1_fk(k: usize) -> usize {
    let target = (k as u128) * (k as u128);
    let mut m = ((k as f64 / 32.0).powf(2.0 / 3.0)).floor() as u128;
    while m > 0 && 1024 * m * m * m > target {
        m -= 1;
    }
    while 1024 * (m + 1) * (m + 1) * (m + 1) <= target {
        m += 1;
    }
    m as usize
}

/// Unit-scale "many small, few large" classes: need 1 with exponential mean 1
/// (share 0.95), and needs 2, 4, 8 with means 40, 20, 10 (share 0.05/3 each).
pub fn figure1_classes() -> Vec<JobClass> {
    let large = 0.05 / 3.0;
    vec![
        JobClass::new(0, 1, 0.95, ServiceDistribution::exponential(1.0)),
        JobClass::new(1, 2, large, ServiceDistribution::exponential(40.0)),
        JobClass::new(2, 4, large, ServiceDistribution::exponential(20.0)),
        JobClass::new(3, 8, large, ServiceDistribution::exponential(10.0)),
    ]
}

/// The critically loaded workload: figure-1 classes scaled by
/// `f_k = floor((k/32)^(2/3))` under the Halfin-Whitt rule.
pub fn figure1_workload(k: usize, theta: f64) -> Result<SystemConfig> {
    if k < 32 {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be at least 32"
        )));
    }
    let f_k = figure1_fk(k);
    if f_k == 0 {
        return Err(Error::InvalidArgument(format!("k = {k} gives f_k = 0")));
    }
    scale_halfin_whitt(&figure1_classes(), k, f_k, theta)
}
