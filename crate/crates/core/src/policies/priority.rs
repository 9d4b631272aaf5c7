//! Preemptive single-pool policies that rebuild the running set at every
//! event: Least/Most-Servers-First, First-Fit SRPT, ServerFilling and
//! ServerFilling-SRPT.

use std::collections::{btree_set, BTreeMap, BTreeSet, HashMap, HashSet};
use std::iter::Peekable;

use crate::engine::{Capabilities, Decisions, JobId, JobState, Policy, PoolId, SimView};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorityRule {
    LeastServersFirst,
    MostServersFirst,
    FirstFitSrpt,
    ServerFilling,
    ServerFillingSrpt,
}

impl PriorityRule {
    fn name(self) -> &'static str {
        match self {
            Self::LeastServersFirst => "lsf",
            Self::MostServersFirst => "msf",
            Self::FirstFitSrpt => "ff-srpt",
            Self::ServerFilling => "serverfilling",
            Self::ServerFillingSrpt => "serverfilling-srpt",
        }
    }

    fn size_aware(self) -> bool {
        matches!(self, Self::FirstFitSrpt | Self::ServerFillingSrpt)
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    need: usize,
    running: bool,
    /// Remaining service while waiting, completion time while running.
    key: u64,
}

/// Jobs of one server need. Running jobs are keyed by completion time so
/// their order survives the passage of time.
#[derive(Debug, Default)]
struct NeedGroup {
    ids: BTreeSet<JobId>,
    running: BTreeSet<(u64, JobId)>,
    waiting: BTreeSet<(u64, JobId)>,
}

fn key_bits(x: f64) -> u64 {
    // Non-negative floats order like their bit patterns; `+ 0.0` clears -0.
    (x.max(0.0) + 0.0).to_bits()
}

struct Cursor<'a> {
    need: usize,
    running: bool,
    iter: Peekable<btree_set::Iter<'a, (u64, JobId)>>,
}

impl Cursor<'_> {
    /// Remaining service (times need if `weighted`) of the next job.
    fn peek(&mut self, now: f64, weighted: bool) -> Option<(f64, JobId)> {
        let &&(bits, id) = self.iter.peek()?;
        let raw = f64::from_bits(bits);
        let remaining = if self.running {
            (raw - now).max(0.0)
        } else {
            raw
        };
        let key = if weighted {
            remaining * self.need as f64
        } else {
            remaining
        };
        Some((key, id))
    }
}

pub struct PriorityPolicy {
    rule: PriorityRule,
    k: usize,
    entries: HashMap<JobId, Entry>,
    groups: BTreeMap<usize, NeedGroup>,
    arrival_order: BTreeMap<JobId, usize>,
    running: BTreeSet<JobId>,
    target: Vec<JobId>,
}

impl PriorityPolicy {
    pub fn new(rule: PriorityRule, k: usize) -> Self {
        Self {
            rule,
            k,
            entries: HashMap::new(),
            groups: BTreeMap::new(),
            arrival_order: BTreeMap::new(),
            running: BTreeSet::new(),
            target: Vec::new(),
        }
    }

    fn insert(&mut self, id: JobId, need: usize, remaining: f64) {
        let key = key_bits(remaining);
        self.entries.insert(
            id,
            Entry {
                need,
                running: false,
                key,
            },
        );
        let group = self.groups.entry(need).or_default();
        group.ids.insert(id);
        group.waiting.insert((key, id));
        self.arrival_order.insert(id, need);
    }

    fn remove(&mut self, id: JobId) {
        let Some(entry) = self.entries.remove(&id) else {
            return;
        };
        let group = self.groups.get_mut(&entry.need).expect("group exists");
        group.ids.remove(&id);
        if entry.running {
            group.running.remove(&(entry.key, id));
        } else {
            group.waiting.remove(&(entry.key, id));
        }
        if group.ids.is_empty() {
            self.groups.remove(&entry.need);
        }
        self.arrival_order.remove(&id);
        self.running.remove(&id);
    }

    fn cursors(&self) -> Vec<Cursor<'_>> {
        let mut cursors = Vec::with_capacity(2 * self.groups.len());
        for (&need, group) in &self.groups {
            for (running, set) in [(true, &group.running), (false, &group.waiting)] {
                if !set.is_empty() {
                    cursors.push(Cursor {
                        need,
                        running,
                        iter: set.iter().peekable(),
                    });
                }
            }
        }
        cursors
    }

    /// Index of the cursor whose next job has the smallest key.
    fn best_cursor(cursors: &mut [Cursor<'_>], now: f64, weighted: bool) -> Option<usize> {
        let mut best: Option<(usize, (f64, JobId))> = None;
        for (i, c) in cursors.iter_mut().enumerate() {
            if let Some(key) = c.peek(now, weighted) {
                let better = match best {
                    None => true,
                    Some((_, b)) => key.0.total_cmp(&b.0).then(key.1.cmp(&b.1)).is_lt(),
                };
                if better {
                    best = Some((i, key));
                }
            }
        }
        best.map(|(i, _)| i)
    }

    fn target_by_need(&self, ascending: bool) -> Vec<JobId> {
        let mut free = self.k;
        let mut out = Vec::new();
        let groups: Box<dyn Iterator<Item = (&usize, &NeedGroup)>> = if ascending {
            Box::new(self.groups.iter())
        } else {
            Box::new(self.groups.iter().rev())
        };
        for (&need, group) in groups {
            if need > free {
                if ascending {
                    break;
                }
                continue;
            }
            let take = (free / need).min(group.ids.len());
            out.extend(group.ids.iter().take(take));
            free -= take * need;
            if free == 0 {
                break;
            }
        }
        out
    }

    fn target_first_fit_srpt(&self, now: f64) -> Vec<JobId> {
        let mut free = self.k;
        let mut out = Vec::new();
        let mut cursors = self.cursors();
        loop {
            cursors.retain(|c| c.need <= free);
            let Some(i) = Self::best_cursor(&mut cursors, now, false) else {
                break;
            };
            let c = &mut cursors[i];
            let &(_, id) = c.iter.next().expect("peeked");
            free -= c.need;
            out.push(id);
        }
        out
    }

    /// Places `prefix` (need, tiebreak key, id) by decreasing need.
    fn fill(&self, mut prefix: Vec<(usize, f64, JobId)>, block_later_arrivals: bool) -> Vec<JobId> {
        prefix.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut free = self.k;
        let mut cutoff = JobId::MAX;
        let mut out = Vec::new();
        for (need, _, id) in prefix {
            if id > cutoff {
                continue;
            }
            if need <= free {
                free -= need;
                out.push(id);
            } else if block_later_arrivals {
                cutoff = id;
            } else {
                break;
            }
        }
        out
    }

    fn target_server_filling(&self) -> Vec<JobId> {
        let mut total = 0;
        let mut prefix = Vec::new();
        for (&id, &need) in &self.arrival_order {
            prefix.push((need, id as f64, id));
            total += need;
            if total >= self.k {
                break;
            }
        }
        if total < self.k {
            return prefix.into_iter().map(|(_, _, id)| id).collect();
        }
        self.fill(prefix, true)
    }

    fn target_server_filling_srpt(&self, now: f64) -> Vec<JobId> {
        let mut total = 0;
        let mut prefix = Vec::new();
        let mut cursors = self.cursors();
        while total < self.k {
            let Some(i) = Self::best_cursor(&mut cursors, now, true) else {
                break;
            };
            let c = &mut cursors[i];
            let (size, id) = c.peek(now, true).expect("peeked");
            c.iter.next();
            prefix.push((c.need, size, id));
            total += c.need;
        }
        if total < self.k {
            return prefix.into_iter().map(|(_, _, id)| id).collect();
        }
        self.fill(prefix, false)
    }

    fn reschedule(&mut self, view: &SimView<'_>, out: &mut Decisions) {
        // Size-oblivious rules keep every key at zero and never look at sizes.
        let now = view.now();
        let target = match self.rule {
            PriorityRule::LeastServersFirst => self.target_by_need(true),
            PriorityRule::MostServersFirst => self.target_by_need(false),
            PriorityRule::FirstFitSrpt => self.target_first_fit_srpt(now),
            PriorityRule::ServerFilling => self.target_server_filling(),
            PriorityRule::ServerFillingSrpt => self.target_server_filling_srpt(now),
        };
        let keep: HashSet<JobId> = target.iter().copied().collect();
        let evicted: Vec<JobId> = self
            .running
            .iter()
            .copied()
            .filter(|id| !keep.contains(id))
            .collect();
        for id in evicted {
            let remaining = if self.rule.size_aware() {
                view.remaining(id)
            } else {
                0.0
            };
            let entry = self.entries.get_mut(&id).expect("tracked");
            let group = self.groups.get_mut(&entry.need).expect("group exists");
            group.running.remove(&(entry.key, id));
            entry.running = false;
            entry.key = key_bits(remaining);
            group.waiting.insert((entry.key, id));
            self.running.remove(&id);
            out.preempt(id);
        }
        for &id in &target {
            if self.running.contains(&id) {
                continue;
            }
            let entry = self.entries.get_mut(&id).expect("tracked");
            let group = self.groups.get_mut(&entry.need).expect("group exists");
            group.waiting.remove(&(entry.key, id));
            entry.running = true;
            entry.key = key_bits(now + f64::from_bits(entry.key));
            group.running.insert((entry.key, id));
            self.running.insert(id);
            out.start(id, 0);
        }
        self.target = target;
    }

    /// Jobs chosen to run at the last event, in placement order.
    pub fn last_target(&self) -> &[JobId] {
        &self.target
    }
}

impl Policy for PriorityPolicy {
    fn name(&self) -> String {
        self.rule.name().to_string()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            preemptive: true,
            size_aware: self.rule.size_aware(),
        }
    }

    fn pool_capacities(&self) -> Vec<usize> {
        vec![self.k]
    }

    fn on_arrival(&mut self, view: &SimView<'_>, job: &JobState, out: &mut Decisions) {
        // Size-oblivious rules never read the key.
        let remaining = if self.rule.size_aware() {
            job.service_time
        } else {
            0.0
        };
        self.insert(job.id, job.need, remaining);
        self.reschedule(view, out);
    }

    fn on_departure(
        &mut self,
        view: &SimView<'_>,
        job: &JobState,
        _pool: PoolId,
        out: &mut Decisions,
    ) {
        self.remove(job.id);
        self.reschedule(view, out);
    }
}
