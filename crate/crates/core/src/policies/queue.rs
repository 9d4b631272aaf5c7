use std::collections::{BTreeMap, BTreeSet};

use crate::engine::JobId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discipline {
    /// Start jobs in arrival order; the head blocks everyone behind it.
    Fcfs,
    /// Start every waiting job that fits, in arrival order.
    FirstFit,
}

/// Waiting jobs of a nonpreemptive pool, in arrival (id) order.
///
/// Jobs are also grouped by need so first-fit only looks at one candidate
/// per distinct need.
#[derive(Debug, Clone)]
pub struct WaitQueue {
    discipline: Discipline,
    waiting: BTreeMap<JobId, usize>,
    by_need: BTreeMap<usize, BTreeSet<JobId>>,
}

impl WaitQueue {
    pub fn new(discipline: Discipline) -> Self {
        Self {
            discipline,
            waiting: BTreeMap::new(),
            by_need: BTreeMap::new(),
        }
    }

    pub fn discipline(&self) -> Discipline {
        self.discipline
    }

    pub fn len(&self) -> usize {
        self.waiting.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waiting.is_empty()
    }

    pub fn contains(&self, id: JobId) -> bool {
        self.waiting.contains_key(&id)
    }

    pub fn push(&mut self, id: JobId, need: usize) {
        if self.waiting.insert(id, need).is_none() {
            self.by_need.entry(need).or_default().insert(id);
        }
    }

    pub fn remove(&mut self, id: JobId) -> Option<usize> {
        let need = self.waiting.remove(&id)?;
        if let Some(group) = self.by_need.get_mut(&need) {
            group.remove(&id);
            if group.is_empty() {
                self.by_need.remove(&need);
            }
        }
        Some(need)
    }

    /// Removes the jobs to start on `idle` free servers and appends them to
    /// `out` in start order.
    pub fn dispatch(&mut self, mut idle: usize, out: &mut Vec<JobId>) {
        match self.discipline {
            Discipline::Fcfs => {
                while let Some((&id, &need)) = self.waiting.first_key_value() {
                    if need > idle {
                        break;
                    }
                    idle -= need;
                    self.remove(id);
                    out.push(id);
                }
            }
            Discipline::FirstFit => loop {
                let next = self
                    .by_need
                    .range(..=idle)
                    .filter_map(|(_, group)| group.first().copied())
                    .min();
                let Some(id) = next else { break };
                idle -= self.remove(id).expect("queued");
                out.push(id);
            },
        }
    }
}
