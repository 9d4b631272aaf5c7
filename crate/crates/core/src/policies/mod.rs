//! Scheduling policies for the multiserver-job model.
//!
//! | policy              | preemptive | size-aware |
//! |---------------------|------------|------------|
//! | FCFS                | no         | no         |
//! | Least-Servers-First | yes        | no         |
//! | Most-Servers-First  | yes        | no         |
//! | First-Fit Backfill  | no         | no         |
//! | First-Fit SRPT      | yes        | yes        |
//! | ServerFilling       | yes        | no         |
//! | ServerFilling-SRPT  | yes        | yes        |
//! | BS / ModifiedBS     | no         | no         |

mod priority;
mod queue;
mod splitting;

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::engine::{Capabilities, Decisions, JobState, Policy, PoolId, SimView};
use crate::error::{Error, Result};
use crate::partition::compute_partition;
use crate::workload::SystemConfig;

pub use priority::{PriorityPolicy, PriorityRule};
pub use queue::{Discipline, WaitQueue};
pub use splitting::BalancedSplitting;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PolicySpec {
    Fcfs,
    LeastServersFirst,
    MostServersFirst,
    FirstFitBackfill,
    FirstFitSrpt,
    ServerFilling,
    ServerFillingSrpt,
    /// Balanced splitting with the given helper-pool policy.
    BalancedSplitting(Box<PolicySpec>),
    /// Balanced splitting without pulling helper jobs back.
    ModifiedBalancedSplitting(Box<PolicySpec>),
}

impl PolicySpec {
    pub fn bs(aux: PolicySpec) -> Self {
        Self::BalancedSplitting(Box::new(aux))
    }

    pub fn modified_bs(aux: PolicySpec) -> Self {
        Self::ModifiedBalancedSplitting(Box::new(aux))
    }

    pub fn capabilities(&self) -> Capabilities {
        let (preemptive, size_aware) = match self {
            Self::Fcfs | Self::FirstFitBackfill => (false, false),
            Self::LeastServersFirst | Self::MostServersFirst | Self::ServerFilling => (true, false),
            Self::FirstFitSrpt | Self::ServerFillingSrpt => (true, true),
            Self::BalancedSplitting(_) | Self::ModifiedBalancedSplitting(_) => (false, false),
        };
        Capabilities {
            preemptive,
            size_aware,
        }
    }

    pub fn aux(&self) -> Option<&PolicySpec> {
        match self {
            Self::BalancedSplitting(aux) | Self::ModifiedBalancedSplitting(aux) => Some(aux),
            _ => None,
        }
    }

    /// Nonpreemptive discipline usable on a single pool, if this is one.
    pub fn discipline(&self) -> Option<Discipline> {
        match self {
            Self::Fcfs => Some(Discipline::Fcfs),
            Self::FirstFitBackfill => Some(Discipline::FirstFit),
            _ => None,
        }
    }

    pub fn build(&self, config: &SystemConfig) -> Result<Box<dyn Policy>> {
        let k = config.k();
        Ok(match self {
            Self::Fcfs | Self::FirstFitBackfill => Box::new(SinglePool::new(
                self.to_string(),
                self.discipline().expect("nonpreemptive"),
                k,
            )),
            Self::LeastServersFirst => {
                Box::new(PriorityPolicy::new(PriorityRule::LeastServersFirst, k))
            }
            Self::MostServersFirst => {
                Box::new(PriorityPolicy::new(PriorityRule::MostServersFirst, k))
            }
            Self::FirstFitSrpt => Box::new(PriorityPolicy::new(PriorityRule::FirstFitSrpt, k)),
            Self::ServerFilling => Box::new(PriorityPolicy::new(PriorityRule::ServerFilling, k)),
            Self::ServerFillingSrpt => {
                Box::new(PriorityPolicy::new(PriorityRule::ServerFillingSrpt, k))
            }
            Self::BalancedSplitting(aux) | Self::ModifiedBalancedSplitting(aux) => {
                let caps = aux.capabilities();
                let discipline = match aux.discipline() {
                    Some(d) if !caps.preemptive && !caps.size_aware => d,
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "helper policy `{aux}` must be nonpreemptive and size-oblivious"
                        )))
                    }
                };
                let partition = compute_partition(config)?;
                let needs = config.classes().iter().map(|c| c.need).collect();
                let pull = matches!(self, Self::BalancedSplitting(_));
                Box::new(BalancedSplitting::new(
                    self.to_string(),
                    partition,
                    needs,
                    discipline,
                    pull,
                ))
            }
        })
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fcfs => f.write_str("fcfs"),
            Self::LeastServersFirst => f.write_str("lsf"),
            Self::MostServersFirst => f.write_str("msf"),
            Self::FirstFitBackfill => f.write_str("ff-backfill"),
            Self::FirstFitSrpt => f.write_str("ff-srpt"),
            Self::ServerFilling => f.write_str("serverfilling"),
            Self::ServerFillingSrpt => f.write_str("serverfilling-srpt"),
            Self::BalancedSplitting(aux) => write!(f, "bs:{aux}"),
            Self::ModifiedBalancedSplitting(aux) => write!(f, "modbs:{aux}"),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some((head, aux)) = lower.split_once(':') {
            let aux: PolicySpec = aux.parse()?;
            return match head {
                "bs" | "balancedsplitting" | "balanced-splitting" => Ok(Self::bs(aux)),
                "modbs" | "mbs" | "modifiedbs" | "modified-bs" => Ok(Self::modified_bs(aux)),
                _ => Err(Error::UnknownPolicy(s.to_string())),
            };
        }
        Ok(match lower.as_str() {
            "fcfs" => Self::Fcfs,
            "lsf" | "least-servers-first" => Self::LeastServersFirst,
            "msf" | "most-servers-first" => Self::MostServersFirst,
            "ff-backfill" | "backfill" | "first-fit-backfilling" => Self::FirstFitBackfill,
            "ff-srpt" | "first-fit-srpt" => Self::FirstFitSrpt,
            "serverfilling" | "sf" | "server-filling" => Self::ServerFilling,
            "serverfilling-srpt" | "sf-srpt" | "server-filling-srpt" => Self::ServerFillingSrpt,
            "bs" | "balancedsplitting" => Self::bs(Self::Fcfs),
            "modbs" | "mbs" | "modifiedbs" => Self::modified_bs(Self::Fcfs),
            _ => return Err(Error::UnknownPolicy(s.to_string())),
        })
    }
}

impl Serialize for PolicySpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// A nonpreemptive discipline running on one pool of `k` servers.
pub struct SinglePool {
    name: String,
    k: usize,
    queue: WaitQueue,
    scratch: Vec<u64>,
}

impl SinglePool {
    pub fn new(name: String, discipline: Discipline, k: usize) -> Self {
        Self {
            name,
            k,
            queue: WaitQueue::new(discipline),
            scratch: Vec::new(),
        }
    }

    fn dispatch(&mut self, view: &SimView<'_>, out: &mut Decisions) {
        self.scratch.clear();
        self.queue.dispatch(view.idle(0), &mut self.scratch);
        for &id in &self.scratch {
            out.start(id, 0);
        }
    }
}

impl Policy for SinglePool {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            preemptive: false,
            size_aware: false,
        }
    }

    fn pool_capacities(&self) -> Vec<usize> {
        vec![self.k]
    }

    fn on_arrival(&mut self, view: &SimView<'_>, job: &JobState, out: &mut Decisions) {
        self.queue.push(job.id, job.need);
        self.dispatch(view, out);
    }

    fn on_departure(
        &mut self,
        view: &SimView<'_>,
        _job: &JobState,
        _pool: PoolId,
        out: &mut Decisions,
    ) {
        self.dispatch(view, out);
    }
}


#[cfg(test)]
mod traces;
