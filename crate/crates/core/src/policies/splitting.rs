use std::collections::BTreeSet;

use crate::engine::{Capabilities, Decisions, JobId, JobState, Policy, PoolId, SimView};
use crate::partition::Partition;

use super::queue::{Discipline, WaitQueue};

/// Balanced splitting: class `i` owns pool `i` with `a_i` servers and the
/// leftover servers form a shared helper pool (the last pool) run by a
/// nonpreemptive auxiliary discipline.
///
/// With `pull` set, a departure from pool `i` pulls the oldest class-`i` job
/// still waiting in the helper queue into pool `i`. Without it, helper jobs
/// stay there (the modified variant).
pub struct BalancedSplitting {
    name: String,
    partition: Partition,
    needs: Vec<usize>,
    pull: bool,
    helper: WaitQueue,
    waiting_by_class: Vec<BTreeSet<JobId>>,
    scratch: Vec<JobId>,
}

impl BalancedSplitting {
    pub fn new(
        name: String,
        partition: Partition,
        needs: Vec<usize>,
        discipline: Discipline,
        pull: bool,
    ) -> Self {
        let classes = needs.len();
        Self {
            name,
            partition,
            needs,
            pull,
            helper: WaitQueue::new(discipline),
            waiting_by_class: vec![BTreeSet::new(); classes],
            scratch: Vec::new(),
        }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    fn helper_id(&self) -> PoolId {
        self.needs.len()
    }

    /// Number of helper-queue jobs still waiting.
    pub fn helper_waiting(&self) -> usize {
        self.helper.len()
    }

    fn dispatch_helper(&mut self, view: &SimView<'_>, out: &mut Decisions) {
        let pool = self.helper_id();
        self.scratch.clear();
        self.helper.dispatch(view.idle(pool), &mut self.scratch);
        for &id in &self.scratch {
            let class = view.job(id).class_index;
            self.waiting_by_class[class].remove(&id);
            out.start(id, pool);
        }
    }
}

impl Policy for BalancedSplitting {
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
        let mut pools = self.partition.servers.clone();
        pools.push(self.partition.helper);
        pools
    }

    fn helper_pool(&self) -> Option<PoolId> {
        Some(self.helper_id())
    }

    fn on_arrival(&mut self, view: &SimView<'_>, job: &JobState, out: &mut Decisions) {
        let class = job.class_index;
        if !self.partition.helper_only[class] && view.idle(class) >= self.needs[class] {
            out.start(job.id, class);
            return;
        }
        out.routed_to_helper = true;
        self.helper.push(job.id, job.need);
        self.waiting_by_class[class].insert(job.id);
        self.dispatch_helper(view, out);
    }

    fn on_departure(
        &mut self,
        view: &SimView<'_>,
        job: &JobState,
        pool: PoolId,
        out: &mut Decisions,
    ) {
        if pool != self.helper_id() {
            if !self.pull {
                return;
            }
            let Some(oldest) = self.waiting_by_class[pool].pop_first() else {
                return;
            };
            self.helper.remove(oldest);
            out.start(oldest, pool);
            debug_assert_eq!(job.class_index, pool);
        }
        // A pull may unblock the helper queue head, so re-dispatch either way.
        self.dispatch_helper(view, out);
    }
}
