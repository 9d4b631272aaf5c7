//! Discrete-event simulation core.
//!
//! Servers are fungible counters grouped into pools. A [`Policy`] owns its
//! queues and answers arrival and departure hooks with start and preemption
//! decisions; the engine validates every decision against pool capacities,
//! tracks remaining service under preempt-resume and collects metrics.

mod calendar;
mod stats;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

pub use calendar::{Event, EventCalendar, EventKind};
pub use stats::{
    batch_means_ci95, mean_ci95, ClassOutcome, ReplicationSummary, SimOutcome, BATCHES, Z95,
};

use crate::error::{Error, Result};
use crate::policies::PolicySpec;
use crate::workload::{ArrivalStream, Job, SystemConfig};

pub type JobId = u64;
pub type PoolId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub preemptive: bool,
    pub size_aware: bool,
}

/// A job while it is in the system.
#[derive(Debug, Clone)]
pub struct JobState {
    pub id: JobId,
    pub class_index: usize,
    pub need: usize,
    pub arrival_time: f64,
    pub service_time: f64,
    remaining: f64,
    started_at: Option<f64>,
    pool: Option<PoolId>,
    token: u64,
    first_pool: Option<PoolId>,
    routed: bool,
}

impl JobState {
    fn new(job: &Job) -> Self {
        Self {
            id: job.id,
            class_index: job.class_index,
            need: job.need,
            arrival_time: job.arrival_time,
            service_time: job.service_time,
            remaining: job.service_time,
            started_at: None,
            pool: None,
            token: 0,
            first_pool: None,
            routed: false,
        }
    }

    pub fn is_running(&self) -> bool {
        self.pool.is_some()
    }

    pub fn pool(&self) -> Option<PoolId> {
        self.pool
    }

    /// Pool the job first started in, if it ever started.
    pub fn first_pool(&self) -> Option<PoolId> {
        self.first_pool
    }

    pub fn has_started(&self) -> bool {
        self.first_pool.is_some()
    }

    /// Remaining service time at `now`.
    pub fn remaining_at(&self, now: f64) -> f64 {
        match self.started_at {
            Some(t) => (self.remaining - (now - t)).max(0.0),
            None => self.remaining,
        }
    }
}

/// Read-only view of the cluster handed to policy hooks.
pub struct SimView<'a> {
    now: f64,
    jobs: &'a HashMap<JobId, JobState>,
    busy: &'a [usize],
    capacity: &'a [usize],
}

impl SimView<'_> {
    pub fn now(&self) -> f64 {
        self.now
    }

    /// Panics if the job is not in the system; policies only ask about jobs
    /// they were told about.
    pub fn job(&self, id: JobId) -> &JobState {
        &self.jobs[&id]
    }

    pub fn remaining(&self, id: JobId) -> f64 {
        self.job(id).remaining_at(self.now)
    }

    pub fn idle(&self, pool: PoolId) -> usize {
        self.capacity[pool] - self.busy[pool]
    }

    pub fn busy(&self, pool: PoolId) -> usize {
        self.busy[pool]
    }

    pub fn capacity(&self, pool: PoolId) -> usize {
        self.capacity[pool]
    }

    pub fn in_system(&self) -> usize {
        self.jobs.len()
    }
}

/// What a policy wants done after a hook.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Decisions {
    pub starts: Vec<(JobId, PoolId)>,
    pub preemptions: Vec<JobId>,
    /// Set on arrival when the job was sent to the helper pool. A routed job
    /// that later first starts outside the helper pool counts as pulled.
    pub routed_to_helper: bool,
}

impl Decisions {
    pub fn start(&mut self, job: JobId, pool: PoolId) {
        self.starts.push((job, pool));
    }

    pub fn preempt(&mut self, job: JobId) {
        self.preemptions.push(job);
    }

    pub fn clear(&mut self) {
        self.starts.clear();
        self.preemptions.clear();
        self.routed_to_helper = false;
    }
}

/// Scheduling policy driven by the engine.
///
/// Hooks run after the engine has updated its state: on arrival the job is
/// already registered, on departure its servers are already free. The engine
/// applies preemptions before starts.
pub trait Policy: Send {
    fn name(&self) -> String;

    fn capabilities(&self) -> Capabilities;

    /// Capacities of the server pools this policy schedules onto.
    fn pool_capacities(&self) -> Vec<usize>;

    /// Pool that plays the helper role, if any.
    fn helper_pool(&self) -> Option<PoolId> {
        None
    }

    fn on_arrival(&mut self, view: &SimView<'_>, job: &JobState, out: &mut Decisions);

    fn on_departure(
        &mut self,
        view: &SimView<'_>,
        job: &JobState,
        pool: PoolId,
        out: &mut Decisions,
    );
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub arrivals: usize,
    pub seed: u64,
    pub warmup_fraction: f64,
    /// Abort with an instability error beyond this many jobs in system.
    pub max_in_system: usize,
    pub record_lifecycle: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            arrivals: 100_000,
            seed: 1,
            warmup_fraction: 0.1,
            max_in_system: 1_000_000,
            record_lifecycle: false,
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        if self.arrivals == 0 {
            return Err(Error::InvalidArgument("arrivals must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidArgument(format!(
                "warmup fraction {} must lie in [0, 1)",
                self.warmup_fraction
            )));
        }
        Ok(())
    }

    pub fn warmup_count(&self) -> u64 {
        (self.warmup_fraction * self.arrivals as f64).floor() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LifecycleKind {
    Arrival,
    Start { pool: PoolId },
    Preempt { pool: PoolId },
    Departure { pool: PoolId },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LifecycleEvent {
    pub time: f64,
    pub job: JobId,
    pub class_index: usize,
    pub kind: LifecycleKind,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub outcome: SimOutcome,
    pub lifecycle: Vec<LifecycleEvent>,
}

#[derive(Debug, Default, Clone)]
struct ClassCounters {
    arrivals: u64,
    routed: u64,
    pulled: u64,
    waited: u64,
    completed: u64,
    response_sum: f64,
    admitted_dedicated: u64,
}

struct Engine<'p> {
    policy: &'p mut dyn Policy,
    name: String,
    caps: Capabilities,
    capacity: Vec<usize>,
    busy: Vec<usize>,
    helper: Option<PoolId>,
    jobs: HashMap<JobId, JobState>,
    calendar: EventCalendar,
    now: f64,
    next_token: u64,
    load: f64,
    opts: RunOptions,
    warm: u64,
    // Measurement window accounting.
    accumulating: bool,
    last_time: f64,
    window_start: f64,
    window_end: f64,
    busy_area: Vec<f64>,
    in_system_area: f64,
    // Counters.
    classes: Vec<ClassCounters>,
    responses: Vec<f64>,
    counted_arrivals: u64,
    routed: u64,
    pulled: u64,
    waited: u64,
    total_arrivals: u64,
    total_completions: u64,
    preemptions: u64,
    lifecycle: Vec<LifecycleEvent>,
}

impl<'p> Engine<'p> {
    fn new(policy: &'p mut dyn Policy, opts: &RunOptions, load: f64) -> Self {
        let capacity = policy.pool_capacities();
        let pools = capacity.len();
        let counted = opts.arrivals as u64 - opts.warmup_count();
        Self {
            name: policy.name(),
            caps: policy.capabilities(),
            helper: policy.helper_pool(),
            policy,
            busy: vec![0; pools],
            capacity,
            jobs: HashMap::new(),
            calendar: EventCalendar::new(),
            now: 0.0,
            next_token: 1,
            load,
            opts: opts.clone(),
            warm: opts.warmup_count(),
            accumulating: false,
            last_time: 0.0,
            window_start: 0.0,
            window_end: 0.0,
            busy_area: vec![0.0; pools],
            in_system_area: 0.0,
            classes: Vec::new(),
            responses: vec![f64::NAN; counted as usize],
            counted_arrivals: 0,
            routed: 0,
            pulled: 0,
            waited: 0,
            total_arrivals: 0,
            total_completions: 0,
            preemptions: 0,
            lifecycle: Vec::new(),
        }
    }

    fn violation(&self, detail: String) -> Error {
        let running: Vec<(JobId, PoolId, usize)> = {
            let mut v: Vec<_> = self
                .jobs
                .values()
                .filter_map(|j| j.pool.map(|p| (j.id, p, j.need)))
                .collect();
            v.sort_unstable();
            v
        };
        Error::PolicyViolation {
            policy: self.name.clone(),
            detail: format!(
                "{detail}; state at t={}: busy={:?} capacity={:?} in_system={} running(job,pool,need)={:?}",
                self.now,
                self.busy,
                self.capacity,
                self.jobs.len(),
                running
            ),
        }
    }

    fn record(&mut self, job: JobId, class_index: usize, kind: LifecycleKind) {
        if self.opts.record_lifecycle {
            self.lifecycle.push(LifecycleEvent {
                time: self.now,
                job,
                class_index,
                kind,
            });
        }
    }

    fn class_counters(&mut self, class: usize) -> &mut ClassCounters {
        if self.classes.len() <= class {
            self.classes.resize(class + 1, ClassCounters::default());
        }
        &mut self.classes[class]
    }

    fn advance(&mut self, t: f64) {
        if self.accumulating {
            let dt = t - self.last_time;
            for (area, &b) in self.busy_area.iter_mut().zip(&self.busy) {
                *area += b as f64 * dt;
            }
            self.in_system_area += self.jobs.len() as f64 * dt;
        }
        self.last_time = t;
        self.now = t;
    }

    fn apply(&mut self, decisions: &Decisions) -> Result<()> {
        for &id in &decisions.preemptions {
            if !self.caps.preemptive {
                return Err(self.violation(format!("nonpreemptive policy preempted job {id}")));
            }
            let now = self.now;
            let Some(job) = self.jobs.get_mut(&id) else {
                return Err(self.violation(format!("preempted unknown job {id}")));
            };
            let Some(pool) = job.pool else {
                return Err(self.violation(format!("preempted job {id} which is not running")));
            };
            job.remaining = job.remaining_at(now);
            job.started_at = None;
            job.pool = None;
            job.token = 0;
            let (need, class) = (job.need, job.class_index);
            self.busy[pool] -= need;
            self.preemptions += 1;
            self.record(id, class, LifecycleKind::Preempt { pool });
        }
        for &(id, pool) in &decisions.starts {
            if pool >= self.capacity.len() {
                return Err(self.violation(format!("job {id} started on unknown pool {pool}")));
            }
            let Some(job) = self.jobs.get(&id) else {
                return Err(self.violation(format!("started unknown job {id}")));
            };
            if job.pool.is_some() {
                return Err(self.violation(format!("started job {id} which is already running")));
            }
            if let Some(first) = job.first_pool {
                if first != pool {
                    return Err(self.violation(format!(
                        "job {id} resumed on pool {pool} after first running on pool {first}"
                    )));
                }
            }
            let need = job.need;
            if self.busy[pool] + need > self.capacity[pool] {
                return Err(self.violation(format!(
                    "starting job {id} (need {need}) overflows pool {pool}"
                )));
            }
            let token = self.next_token;
            self.next_token += 1;
            let now = self.now;
            let job = self.jobs.get_mut(&id).expect("checked above");
            let first_start = job.first_pool.is_none();
            let pulled = first_start && job.routed && Some(pool) != self.helper;
            job.pool = Some(pool);
            job.started_at = Some(now);
            job.token = token;
            job.first_pool.get_or_insert(pool);
            let (remaining, class) = (job.remaining, job.class_index);
            self.busy[pool] += need;
            self.calendar.schedule(
                now + remaining,
                EventKind::Departure {
                    job: id,
                    pool,
                    token,
                },
            );
            if first_start && id >= self.warm && Some(pool) != self.helper {
                self.class_counters(class).admitted_dedicated += 1;
                if pulled {
                    self.class_counters(class).pulled += 1;
                    self.pulled += 1;
                }
            }
            self.record(id, class, LifecycleKind::Start { pool });
        }
        debug_assert!(self.busy.iter().zip(&self.capacity).all(|(b, c)| b <= c));
        Ok(())
    }

    fn on_arrival(&mut self, job: Job, source: &mut dyn Iterator<Item = Job>) -> Result<()> {
        self.total_arrivals += 1;
        if self.total_arrivals < self.opts.arrivals as u64 {
            if let Some(next) = source.next() {
                self.calendar
                    .schedule(next.arrival_time.max(self.now), EventKind::Arrival(next));
            }
        }
        let counted = job.id >= self.warm;
        if counted && !self.accumulating && self.counted_arrivals == 0 {
            self.accumulating = true;
            self.window_start = self.now;
        }
        let id = job.id;
        let class = job.class_index;
        self.jobs.insert(id, JobState::new(&job));
        self.record(id, class, LifecycleKind::Arrival);

        let mut decisions = Decisions::default();
        {
            let view = SimView {
                now: self.now,
                jobs: &self.jobs,
                busy: &self.busy,
                capacity: &self.capacity,
            };
            self.policy
                .on_arrival(&view, &self.jobs[&id], &mut decisions);
        }
        if decisions.routed_to_helper {
            if let Some(j) = self.jobs.get_mut(&id) {
                j.routed = true;
            }
        }
        self.apply(&decisions)?;

        if counted {
            self.counted_arrivals += 1;
            let started = self.jobs[&id].is_running();
            let routed = decisions.routed_to_helper;
            let c = self.class_counters(class);
            c.arrivals += 1;
            if routed {
                c.routed += 1;
            }
            if !started {
                c.waited += 1;
            }
            if routed {
                self.routed += 1;
            }
            if !started {
                self.waited += 1;
            }
        }
        if self.total_arrivals == self.opts.arrivals as u64 {
            self.accumulating = false;
            self.window_end = self.now;
        }
        if self.jobs.len() > self.opts.max_in_system {
            return Err(Error::Instability {
                policy: self.name.clone(),
                load: self.load,
                in_system: self.jobs.len(),
                time: self.now,
            });
        }
        Ok(())
    }

    fn on_departure(&mut self, id: JobId, pool: PoolId, token: u64) -> Result<()> {
        match self.jobs.get(&id) {
            Some(j) if j.token == token && j.pool == Some(pool) => {}
            _ => return Ok(()), // stale: the job was preempted after this was scheduled
        }
        let mut job = self.jobs.remove(&id).expect("checked above");
        job.remaining = 0.0;
        job.pool = None;
        job.started_at = None;
        self.busy[pool] -= job.need;
        self.total_completions += 1;
        self.record(id, job.class_index, LifecycleKind::Departure { pool });
        if id >= self.warm {
            let response = self.now - job.arrival_time;
            self.responses[(id - self.warm) as usize] = response;
            let c = self.class_counters(job.class_index);
            c.completed += 1;
            c.response_sum += response;
        }

        let mut decisions = Decisions::default();
        {
            let view = SimView {
                now: self.now,
                jobs: &self.jobs,
                busy: &self.busy,
                capacity: &self.capacity,
            };
            self.policy.on_departure(&view, &job, pool, &mut decisions);
        }
        self.apply(&decisions)
    }

    fn run(mut self, mut source: impl Iterator<Item = Job>) -> Result<SimReport> {
        if let Some(first) = source.next() {
            self.calendar
                .schedule(first.arrival_time, EventKind::Arrival(first));
        }
        while let Some(event) = self.calendar.pop() {
            self.advance(event.time);
            match event.kind {
                EventKind::Arrival(job) => self.on_arrival(job, &mut source)?,
                EventKind::Departure { job, pool, token } => self.on_departure(job, pool, token)?,
            }
        }
        if self.accumulating {
            // The source ran dry before `arrivals` jobs.
            self.accumulating = false;
            self.window_end = self.now;
        }
        Ok(self.finish())
    }

    fn finish(self) -> SimReport {
        let ordered: Vec<f64> = self
            .responses
            .iter()
            .copied()
            .filter(|r| !r.is_nan())
            .collect();
        let completed = ordered.len() as u64;
        let mean_response = if completed > 0 {
            ordered.iter().sum::<f64>() / completed as f64
        } else {
            f64::NAN
        };
        let frac = |num: u64, den: u64| {
            if den > 0 {
                num as f64 / den as f64
            } else {
                f64::NAN
            }
        };
        let has_helper = self.helper.is_some();
        let window = self.window_end - self.window_start;
        let per_window = |area: f64, scale: f64| {
            if window > 0.0 && scale > 0.0 {
                area / (window * scale)
            } else {
                0.0
            }
        };
        let helper_utilization = self.helper.map_or(0.0, |h| {
            per_window(self.busy_area[h], self.capacity[h] as f64)
        });
        let total_capacity: usize = self.capacity.iter().sum();
        let per_class = self
            .classes
            .iter()
            .map(|c| ClassOutcome {
                arrivals: c.arrivals,
                completed: c.completed,
                mean_response: if c.completed > 0 {
                    c.response_sum / c.completed as f64
                } else {
                    f64::NAN
                },
                p_helper: frac(
                    if has_helper {
                        c.routed - c.pulled
                    } else {
                        c.waited
                    },
                    c.arrivals,
                ),
                p_routed: frac(if has_helper { c.routed } else { c.waited }, c.arrivals),
                admitted_dedicated: c.admitted_dedicated,
            })
            .collect();
        let outcome = SimOutcome {
            policy: self.name.clone(),
            seed: self.opts.seed,
            arrivals: self.opts.arrivals,
            warmup_fraction: self.opts.warmup_fraction,
            completed,
            mean_response,
            response_ci95: batch_means_ci95(&ordered),
            p_helper: frac(
                if has_helper {
                    self.routed - self.pulled
                } else {
                    self.waited
                },
                self.counted_arrivals,
            ),
            p_routed: frac(
                if has_helper { self.routed } else { self.waited },
                self.counted_arrivals,
            ),
            p_wait: frac(self.waited, self.counted_arrivals),
            per_class,
            helper_utilization,
            utilization: per_window(self.busy_area.iter().sum(), total_capacity as f64),
            mean_in_system: per_window(self.in_system_area, 1.0),
            observed_arrival_rate: per_window(self.counted_arrivals as f64, 1.0),
            warmup_discarded: self.warm,
            total_arrivals: self.total_arrivals,
            total_completions: self.total_completions,
            in_system_at_end: self.jobs.len() as u64,
            preemptions: self.preemptions,
        };
        SimReport {
            outcome,
            lifecycle: self.lifecycle,
        }
    }
}

/// Runs `policy` over the first `opts.arrivals` jobs of `jobs`, then drains
/// the calendar. `load` is only used in instability diagnostics.
pub fn simulate(
    policy: &mut dyn Policy,
    jobs: impl Iterator<Item = Job>,
    opts: &RunOptions,
    load: f64,
) -> Result<SimReport> {
    opts.validate()?;
    Engine::new(policy, opts, load).run(jobs)
}

/// Builds the policy for `config` and simulates its Poisson stream.
pub fn run_report(
    config: &SystemConfig,
    spec: &PolicySpec,
    opts: &RunOptions,
) -> Result<SimReport> {
    let mut policy = spec.build(config)?;
    let pools: usize = policy.pool_capacities().iter().sum();
    if pools != config.k() {
        return Err(Error::PolicyViolation {
            policy: policy.name(),
            detail: format!("pools cover {pools} servers, config has k = {}", config.k()),
        });
    }
    let mut report = simulate(
        policy.as_mut(),
        ArrivalStream::new(config, opts.seed),
        opts,
        config.load(),
    )?;
    let classes = config.classes().len();
    if report.outcome.per_class.len() < classes {
        report.outcome.per_class.resize(
            classes,
            ClassOutcome {
                arrivals: 0,
                completed: 0,
                mean_response: f64::NAN,
                p_helper: f64::NAN,
                p_routed: f64::NAN,
                admitted_dedicated: 0,
            },
        );
    }
    Ok(report)
}

pub fn run(config: &SystemConfig, spec: &PolicySpec, opts: &RunOptions) -> Result<SimOutcome> {
    run_report(config, spec, opts).map(|r| r.outcome)
}

/// Seed of replication `r` under root seed `root`.
pub fn replication_seed(root: u64, r: usize) -> u64 {
    root.wrapping_add(r as u64)
}

/// Independent replications with seeds `opts.seed + r`, run in parallel and
/// returned in replication order.
pub fn run_replications(
    config: &SystemConfig,
    spec: &PolicySpec,
    opts: &RunOptions,
    replications: usize,
) -> Result<Vec<SimOutcome>> {
    if replications == 0 {
        return Err(Error::InvalidArgument(
            "replications must be at least 1".into(),
        ));
    }
    (0..replications)
        .into_par_iter()
        .map(|r| {
            let opts = RunOptions {
                seed: replication_seed(opts.seed, r),
                ..opts.clone()
            };
            run(config, spec, &opts)
        })
        .collect()
}
