//! Hand traces of every policy driven through the engine.

use std::collections::{BTreeMap, BTreeSet};

use super::*;
use crate::engine::{simulate, JobId, LifecycleKind, RunOptions, SimReport};
use crate::partition::Partition;
use crate::workload::Job;

fn job(id: JobId, class_index: usize, at: f64, service: f64, need: usize) -> Job {
    Job {
        id,
        class_index,
        arrival_time: at,
        service_time: service,
        need,
    }
}

/// (arrival time, service time, need) triples, single class.
fn jobs(spec: &[(f64, f64, usize)]) -> Vec<Job> {
    spec.iter()
        .enumerate()
        .map(|(id, &(at, s, n))| job(id as JobId, 0, at, s, n))
        .collect()
}

fn trace(policy: &mut dyn Policy, jobs: Vec<Job>) -> SimReport {
    let opts = RunOptions {
        arrivals: jobs.len(),
        warmup_fraction: 0.0,
        record_lifecycle: true,
        ..RunOptions::default()
    };
    simulate(policy, jobs.into_iter(), &opts, 0.0).unwrap()
}

fn single(name: &str, k: usize) -> Box<dyn Policy> {
    let spec: PolicySpec = name.parse().unwrap();
    match spec.discipline() {
        Some(d) => Box::new(SinglePool::new(name.into(), d, k)),
        None => {
            let rule = match spec {
                PolicySpec::LeastServersFirst => PriorityRule::LeastServersFirst,
                PolicySpec::MostServersFirst => PriorityRule::MostServersFirst,
                PolicySpec::FirstFitSrpt => PriorityRule::FirstFitSrpt,
                PolicySpec::ServerFilling => PriorityRule::ServerFilling,
                PolicySpec::ServerFillingSrpt => PriorityRule::ServerFillingSrpt,
                _ => unreachable!(),
            };
            Box::new(PriorityPolicy::new(rule, k))
        }
    }
}

/// Running set (job -> pool) after all events at each distinct time.
fn snapshots(report: &SimReport) -> Vec<(f64, BTreeMap<JobId, PoolId>)> {
    let mut running = BTreeMap::new();
    let mut out: Vec<(f64, BTreeMap<JobId, PoolId>)> = Vec::new();
    for e in &report.lifecycle {
        match e.kind {
            LifecycleKind::Start { pool } => {
                running.insert(e.job, pool);
            }
            LifecycleKind::Preempt { .. } | LifecycleKind::Departure { .. } => {
                running.remove(&e.job);
            }
            LifecycleKind::Arrival => {}
        }
        match out.last_mut() {
            Some((t, snap)) if *t == e.time => *snap = running.clone(),
            _ => out.push((e.time, running.clone())),
        }
    }
    out
}

fn running_at(report: &SimReport, time: f64) -> BTreeSet<JobId> {
    snapshots(report)
        .into_iter()
        .rfind(|(t, _)| *t <= time)
        .map(|(_, s)| s.into_keys().collect())
        .unwrap_or_default()
}

fn starts(report: &SimReport, id: JobId) -> Vec<(f64, PoolId)> {
    report
        .lifecycle
        .iter()
        .filter(|e| e.job == id)
        .filter_map(|e| match e.kind {
            LifecycleKind::Start { pool } => Some((e.time, pool)),
            _ => None,
        })
        .collect()
}

#[test]
fn fcfs_head_of_line_blocking() {
    // k = 4: a need-2 job runs, the head needs 3 with 2 idle, a need-1 job waits behind it.
    let js = jobs(&[(0.0, 10.0, 2), (1.0, 1.0, 3), (2.0, 1.0, 1)]);
    let r = trace(single("fcfs", 4).as_mut(), js.clone());
    assert_eq!(running_at(&r, 2.5), BTreeSet::from([0]));
    assert_eq!(starts(&r, 1), vec![(10.0, 0)]);
    assert_eq!(starts(&r, 2), vec![(10.0, 0)]);

    let r = trace(single("ff-backfill", 4).as_mut(), js);
    assert_eq!(running_at(&r, 2.5), BTreeSet::from([0, 2]));
    assert_eq!(r.outcome.preemptions, 0);
}

#[test]
fn backfill_starts_later_job_that_fits() {
    let js = jobs(&[(0.0, 10.0, 2), (1.0, 1.0, 4), (2.0, 1.0, 2)]);
    let r = trace(single("ff-backfill", 4).as_mut(), js);
    assert_eq!(starts(&r, 2), vec![(2.0, 0)]);
    // The head starts once both need-2 jobs are gone.
    assert_eq!(starts(&r, 1), vec![(10.0, 0)]);
}

#[test]
fn msf_preempts_small_for_large() {
    let js = jobs(&[(0.0, 10.0, 1), (1.0, 2.0, 4)]);
    let r = trace(single("msf", 4).as_mut(), js);
    assert_eq!(running_at(&r, 1.5), BTreeSet::from([1]));
    assert_eq!(r.outcome.preemptions, 1);
    // Job 0 resumes at 3 with 9 units left.
    assert_eq!(starts(&r, 0), vec![(0.0, 0), (3.0, 0)]);
}

#[test]
fn lone_job_runs_under_every_policy() {
    for name in [
        "fcfs",
        "lsf",
        "msf",
        "ff-backfill",
        "ff-srpt",
        "serverfilling",
        "serverfilling-srpt",
    ] {
        let r = trace(single(name, 4).as_mut(), jobs(&[(0.5, 2.0, 3)]));
        assert_eq!(starts(&r, 0), vec![(0.5, 0)], "{name}");
        assert_eq!(r.outcome.mean_response, 2.0);
    }
}

#[test]
fn lsf_never_runs_larger_job_over_waiting_smaller() {
    let k = 4;
    let services = [[3.0, 2.0, 1.5], [1.0, 5.0, 2.5], [2.2, 1.1, 4.4]];
    for a in 1..=k {
        for b in 1..=k {
            for c in 1..=k {
                for s in &services {
                    let js = jobs(&[(0.0, s[0], a), (0.3, s[1], b), (0.7, s[2], c)]);
                    let needs: Vec<usize> = js.iter().map(|j| j.need).collect();
                    let r = trace(single("lsf", k).as_mut(), js);
                    let mut present = BTreeSet::new();
                    let mut i = 0;
                    for (t, snap) in snapshots(&r) {
                        while i < r.lifecycle.len() && r.lifecycle[i].time <= t {
                            match r.lifecycle[i].kind {
                                LifecycleKind::Arrival => present.insert(r.lifecycle[i].job),
                                LifecycleKind::Departure { .. } => {
                                    present.remove(&r.lifecycle[i].job)
                                }
                                _ => false,
                            };
                            i += 1;
                        }
                        for &w in present.iter().filter(|w| !snap.contains_key(w)) {
                            for &run in snap.keys() {
                                assert!(
                                    needs[run as usize] <= needs[w as usize],
                                    "needs {needs:?} at t={t}: {run} runs while {w} waits"
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn first_fit_srpt_prefers_least_remaining() {
    // At t = 1 the remaining sizes are (5, 1) with needs (4, 4).
    let js = jobs(&[(0.0, 6.0, 4), (1.0, 1.0, 4)]);
    let r = trace(single("ff-srpt", 4).as_mut(), js);
    assert_eq!(running_at(&r, 1.5), BTreeSet::from([1]));
    assert_eq!(starts(&r, 0), vec![(0.0, 0), (2.0, 0)]);
    assert!((r.lifecycle.last().unwrap().time - 7.0).abs() < 1e-12);
}

#[test]
fn first_fit_srpt_skips_jobs_that_do_not_fit() {
    // k = 4: a need-3 job holds 3 servers with the least remaining time;
    // the need-2 job is skipped and the need-1 job takes the last server.
    let js = jobs(&[(0.0, 1.0, 3), (0.1, 5.0, 2), (0.2, 9.0, 1)]);
    let r = trace(single("ff-srpt", 4).as_mut(), js);
    assert_eq!(running_at(&r, 0.5), BTreeSet::from([0, 2]));
}

#[test]
fn server_filling_packs_minimal_prefix() {
    let js = jobs(&[
        (0.0, 10.0, 2),
        (0.1, 10.0, 2),
        (0.2, 10.0, 4),
        (0.3, 10.0, 8),
    ]);
    let r = trace(single("serverfilling", 8).as_mut(), js);
    assert_eq!(running_at(&r, 0.35), BTreeSet::from([0, 1, 2]));
}

#[test]
fn server_filling_blocks_later_arrivals_after_a_misfit() {
    // k = 7, needs [1, 4, 4]: the prefix is all three; placing by need puts
    // job 1 in, job 2 does not fit and blocks everything that arrived after
    // it, and job 0 (earlier) still gets a server.
    let js = jobs(&[(0.0, 10.0, 1), (0.1, 10.0, 4), (0.2, 10.0, 4)]);
    let r = trace(single("serverfilling", 7).as_mut(), js);
    assert_eq!(running_at(&r, 0.25), BTreeSet::from([0, 1]));

    // k = 6, needs [4, 4, 2]: job 1 is the misfit and job 2 is outside the prefix.
    let js = jobs(&[(0.0, 10.0, 4), (0.1, 10.0, 4), (0.2, 10.0, 2)]);
    let r = trace(single("serverfilling", 6).as_mut(), js);
    assert_eq!(running_at(&r, 0.25), BTreeSet::from([0]));
}

#[test]
fn server_filling_fills_power_of_two_systems() {
    // Exhaustive over need sequences from {1, 2, 4, 8} of length 4 with k = 8.
    let choices = [1usize, 2, 4, 8];
    for code in 0..choices.len().pow(4) {
        let needs: Vec<usize> = (0..4).map(|p| choices[(code >> (2 * p)) & 3]).collect();
        let spec: Vec<(f64, f64, usize)> = needs
            .iter()
            .enumerate()
            .map(|(i, &n)| (i as f64 * 0.1, 100.0, n))
            .collect();
        let r = trace(single("serverfilling", 8).as_mut(), jobs(&spec));
        for (t, snap) in snapshots(&r) {
            if t > 0.35 {
                break;
            }
            let arrived: usize = needs.iter().take((t / 0.1).round() as usize + 1).sum();
            let busy: usize = snap.keys().map(|&j| needs[j as usize]).sum();
            assert_eq!(busy, arrived.min(8), "needs {needs:?} at t={t}");
        }
    }
}

#[test]
fn server_filling_srpt_uses_size_prefix() {
    // At t = 0.2 sizes are 4 * 10 = 40, 2 * 1 and 2 * 1.
    let js = jobs(&[(0.0, 10.2, 4), (0.1, 1.0, 2), (0.2, 1.0, 2)]);
    let r = trace(single("serverfilling-srpt", 4).as_mut(), js);
    assert_eq!(running_at(&r, 0.15), BTreeSet::from([0]));
    assert_eq!(running_at(&r, 0.25), BTreeSet::from([1, 2]));
}

fn two_class_bs(pull: bool) -> BalancedSplitting {
    // Class 0 (need 1) owns 1 server, class 1 (need 2) owns 2, helper has 2.
    let partition = Partition {
        servers: vec![1, 2],
        slots: vec![1, 1],
        helper: 2,
        psi: 1.0,
        helper_only: vec![false, false],
    };
    let name = if pull { "bs:fcfs" } else { "modbs:fcfs" };
    BalancedSplitting::new(name.into(), partition, vec![1, 2], Discipline::Fcfs, pull)
}

fn bs_trace_jobs() -> Vec<Job> {
    vec![
        job(0, 0, 0.0, 10.0, 1), // class pool 0
        job(1, 0, 1.0, 10.0, 1), // helper, starts at once
        job(2, 0, 2.0, 1.0, 1),  // helper, starts at once
        job(3, 0, 3.0, 1.0, 1),  // helper, waits
        job(4, 0, 4.0, 1.0, 1),  // helper, waits
        job(5, 1, 5.0, 1.0, 2),  // class pool 1
    ]
}

#[test]
fn bs_admits_to_own_pool_when_a_slot_is_free() {
    let r = trace(&mut two_class_bs(true), bs_trace_jobs());
    assert_eq!(starts(&r, 0), vec![(0.0, 0)]);
    assert_eq!(starts(&r, 5), vec![(5.0, 1)]);
    assert_eq!(starts(&r, 1), vec![(1.0, 2)]);
    assert_eq!(starts(&r, 2), vec![(2.0, 2)]);
    assert_eq!(r.outcome.per_class[1].mean_response, 1.0);
}

#[test]
fn bs_pulls_oldest_waiting_helper_job() {
    let r = trace(&mut two_class_bs(true), bs_trace_jobs());
    // Job 2 leaves the helper at 3 and job 3 takes its place, so job 4 is
    // the oldest class-0 job still waiting when job 0 departs at 10.
    assert_eq!(starts(&r, 3), vec![(3.0, 2)]);
    assert_eq!(starts(&r, 4), vec![(4.0, 2)]);

    // Keep the helper saturated so jobs queue there.
    let mut js = bs_trace_jobs();
    js[1].service_time = 12.0;
    js[2].service_time = 20.0;
    let r = trace(&mut two_class_bs(true), js);
    assert_eq!(starts(&r, 3), vec![(10.0, 0)]);
    assert_eq!(starts(&r, 4), vec![(11.0, 0)]);
    assert_eq!(r.outcome.p_routed, 4.0 / 6.0);
    assert_eq!(r.outcome.p_helper, 2.0 / 6.0);
    // Jobs in helper service are never migrated.
    assert_eq!(starts(&r, 1), vec![(1.0, 2)]);
    assert_eq!(starts(&r, 2), vec![(2.0, 2)]);
    assert_eq!(r.outcome.preemptions, 0);
}

#[test]
fn modified_bs_keeps_helper_jobs_in_helper() {
    let mut js = bs_trace_jobs();
    js[2].service_time = 20.0;
    let r = trace(&mut two_class_bs(false), js);
    assert_eq!(starts(&r, 3), vec![(11.0, 2)]);
    assert_eq!(starts(&r, 4), vec![(12.0, 2)]);
    assert_eq!(r.outcome.p_helper, 4.0 / 6.0);
    assert_eq!(r.outcome.p_routed, 4.0 / 6.0);
}

#[test]
fn bs_with_backfilling_helper() {
    // The helper head needs 2 while only 1 helper server is free; a later
    // need-1 job backfills.
    let partition = Partition {
        servers: vec![1, 2],
        slots: vec![1, 1],
        helper: 2,
        psi: 1.0,
        helper_only: vec![false, false],
    };
    let mut policy = BalancedSplitting::new(
        "bs:ff-backfill".into(),
        partition,
        vec![1, 2],
        Discipline::FirstFit,
        true,
    );
    let js = vec![
        job(0, 0, 0.0, 10.0, 1),
        job(1, 0, 0.5, 10.0, 1),
        job(2, 1, 1.0, 10.0, 2),
        job(3, 1, 2.0, 10.0, 2),
        job(4, 0, 3.0, 10.0, 1),
    ];
    let r = trace(&mut policy, js);
    assert_eq!(starts(&r, 4), vec![(3.0, 2)]);
    // Job 3 is still waiting when job 2 leaves pool 1 and gets pulled.
    assert_eq!(starts(&r, 3), vec![(11.0, 1)]);
}

#[test]
fn nonpreemptive_policies_never_preempt_and_bs_isolates_classes() {
    let config = crate::workload::figure1_workload(64, 0.5).unwrap();
    let opts = RunOptions {
        arrivals: 20_000,
        seed: 9,
        record_lifecycle: true,
        ..RunOptions::default()
    };
    for name in [
        "fcfs",
        "ff-backfill",
        "bs:fcfs",
        "modbs:fcfs",
        "bs:ff-backfill",
    ] {
        let spec: PolicySpec = name.parse().unwrap();
        let report = crate::engine::run_report(&config, &spec, &opts).unwrap();
        assert_eq!(report.outcome.preemptions, 0, "{name}");
        if spec.aux().is_none() {
            continue;
        }
        let helper = config.classes().len();
        let mut pools: BTreeMap<JobId, BTreeSet<PoolId>> = BTreeMap::new();
        let mut class_of = BTreeMap::new();
        for e in &report.lifecycle {
            class_of.insert(e.job, e.class_index);
            if let LifecycleKind::Start { pool } = e.kind {
                pools.entry(e.job).or_default().insert(pool);
            }
        }
        for (id, used) in pools {
            assert_eq!(used.len(), 1, "{name}: job {id} used {used:?}");
            let pool = *used.iter().next().unwrap();
            assert!(
                pool == class_of[&id] || pool == helper,
                "{name}: job {id} on {pool}"
            );
        }
    }
}

#[test]
fn pull_admits_at_least_as_many_to_class_pools() {
    let config = crate::workload::figure1_workload(128, 0.7).unwrap();
    for seed in 1..=5 {
        let opts = RunOptions {
            arrivals: 20_000,
            seed,
            ..RunOptions::default()
        };
        let bs = crate::engine::run(&config, &PolicySpec::bs(PolicySpec::Fcfs), &opts).unwrap();
        let modbs =
            crate::engine::run(&config, &PolicySpec::modified_bs(PolicySpec::Fcfs), &opts).unwrap();
        for (a, b) in bs.per_class.iter().zip(&modbs.per_class) {
            assert!(a.admitted_dedicated >= b.admitted_dedicated, "seed {seed}");
        }
        assert_eq!(modbs.p_helper, modbs.p_routed);
        assert!(bs.p_helper <= modbs.p_helper, "seed {seed}");
    }
}
