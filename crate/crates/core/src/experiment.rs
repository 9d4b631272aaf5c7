//! Parameter sweeps over loads and cluster sizes, written as CSV.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{critical_bound, helper_routing_bound};
use crate::engine::{self, replication_seed, RunOptions, SimOutcome};
use crate::error::{Error, Result};
use crate::partition::compute_partition;
use crate::policies::PolicySpec;
use crate::workload::{
    figure1_fk, halfin_whitt_load, scale_halfin_whitt, scale_subcritical, total_demand, JobClass,
    SystemConfig,
};

/// Smallest run length a plan accepts.
pub const MIN_ARRIVALS: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Fixed `k`, needs scaled by `f_k`, one run per load.
    SweepLoad {
        k: usize,
        f_k: usize,
        rhos: Vec<f64>,
    },
    /// Load `rho` on a `base_k` cluster, scaled to each `k` with
    /// `f_k = floor((k/32)^(2/3))`.
    ScaleSubcritical {
        ks: Vec<usize>,
        rho: f64,
        base_k: usize,
    },
    /// Halfin-Whitt scaling with spare-capacity parameter `theta`.
    ScaleCritical { ks: Vec<usize>, theta: f64 },
    /// Load sweep over classes extracted from a trace.
    TraceSweep { k: usize, rhos: Vec<f64> },
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentPlan {
    #[serde(flatten)]
    pub kind: ExperimentKind,
    /// Where the unit-scale classes came from, for the manifest.
    pub workload: String,
    #[serde(skip)]
    pub classes: Vec<JobClass>,
    pub policies: Vec<PolicySpec>,
    pub arrivals: usize,
    pub replications: usize,
    pub seed: u64,
    pub warmup_fraction: f64,
    pub max_in_system: usize,
    pub allow_unstable: bool,
}

/// One grid point with its workload.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub k: usize,
    pub f_k: usize,
    pub rho: f64,
    pub theta: Option<f64>,
    pub config: SystemConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub policy: String,
    pub k: usize,
    pub f_k: usize,
    pub rho: f64,
    pub theta: f64,
    pub seed: u64,
    pub arrivals: usize,
    pub warmup: f64,
    /// `None` when the run aborted as unstable.
    pub outcome: Option<SimOutcome>,
    pub helper_bound: f64,
    pub critical_bound: f64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.policies.is_empty() {
            return bad("no policies given".into());
        }
        if self.classes.is_empty() {
            return bad("no job classes given".into());
        }
        if self.arrivals < MIN_ARRIVALS {
            return bad(format!("arrivals {} below {MIN_ARRIVALS}", self.arrivals));
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        let rho_ok = |rho: f64| rho > 0.0 && (rho < 1.0 || self.allow_unstable) && rho.is_finite();
        match &self.kind {
            ExperimentKind::SweepLoad { rhos, f_k, .. } => {
                if *f_k == 0 {
                    return bad("f_k must be at least 1".into());
                }
                if rhos.is_empty() {
                    return bad("empty load grid".into());
                }
                if let Some(r) = rhos.iter().find(|&&r| !rho_ok(r)) {
                    return bad(format!(
                        "load {r} needs to lie in (0, 1); pass allow-unstable to go beyond"
                    ));
                }
            }
            ExperimentKind::TraceSweep { rhos, .. } => {
                if rhos.is_empty() {
                    return bad("empty load grid".into());
                }
                if let Some(r) = rhos.iter().find(|&&r| !(r > 0.0 && r < 1.0)) {
                    return bad(format!("trace load {r} must lie in (0, 1)"));
                }
            }
            ExperimentKind::ScaleSubcritical { ks, rho, base_k } => {
                if ks.is_empty() {
                    return bad("empty k grid".into());
                }
                if !(*rho > 0.0 && *rho < 1.0) {
                    return bad(format!("load {rho} must lie in (0, 1)"));
                }
                if *base_k == 0 {
                    return bad("base k must be at least 1".into());
                }
            }
            ExperimentKind::ScaleCritical { ks, theta } => {
                if ks.is_empty() {
                    return bad("empty k grid".into());
                }
                if !(*theta > 0.0 && theta.is_finite()) {
                    return bad(format!("theta {theta} must be positive"));
                }
            }
        }
        if let ExperimentKind::ScaleSubcritical { ks, .. }
        | ExperimentKind::ScaleCritical { ks, .. } = &self.kind
        {
            if let Some(k) = ks.iter().find(|&&k| figure1_fk(k) == 0) {
                return bad(format!(
                    "k = {k} gives f_k = 0; the scaled grids need k >= 32"
                ));
            }
        }
        Ok(())
    }

    fn config_at(&self, k: usize, f_k: usize, rho: f64) -> Result<SystemConfig> {
        let classes: Vec<JobClass> = self
            .classes
            .iter()
            .map(|c| JobClass {
                need: c.need * f_k,
                ..c.clone()
            })
            .collect();
        let lambda = rho * k as f64 / total_demand(&classes);
        if self.allow_unstable {
            SystemConfig::new_allow_unstable(k, lambda, classes)
        } else {
            SystemConfig::new(k, lambda, classes)
        }
    }

    /// Grid points in grid order.
    pub fn grid(&self) -> Result<Vec<GridPoint>> {
        self.validate()?;
        let point = |k, f_k, rho, theta, config| GridPoint {
            k,
            f_k,
            rho,
            theta,
            config,
        };
        match &self.kind {
            ExperimentKind::SweepLoad { k, f_k, rhos } => rhos
                .iter()
                .map(|&rho| Ok(point(*k, *f_k, rho, None, self.config_at(*k, *f_k, rho)?)))
                .collect(),
            ExperimentKind::TraceSweep { k, rhos } => rhos
                .iter()
                .map(|&rho| Ok(point(*k, 1, rho, None, self.config_at(*k, 1, rho)?)))
                .collect(),
            ExperimentKind::ScaleSubcritical { ks, rho, base_k } => {
                let base = self.config_at(*base_k, 1, *rho)?;
                ks.iter()
                    .map(|&k| {
                        let f_k = figure1_fk(k);
                        Ok(point(k, f_k, *rho, None, scale_subcritical(&base, k, f_k)?))
                    })
                    .collect()
            }
            ExperimentKind::ScaleCritical { ks, theta } => ks
                .iter()
                .map(|&k| {
                    let f_k = figure1_fk(k);
                    let config = scale_halfin_whitt(&self.classes, k, f_k, *theta)?;
                    Ok(point(
                        k,
                        f_k,
                        halfin_whitt_load(k, f_k, *theta),
                        Some(*theta),
                        config,
                    ))
                })
                .collect(),
        }
    }

    fn run_options(&self, seed: u64) -> RunOptions {
        RunOptions {
            arrivals: self.arrivals,
            seed,
            warmup_fraction: self.warmup_fraction,
            max_in_system: self.max_in_system,
            record_lifecycle: false,
        }
    }

    /// Runs every (grid point, policy, replication) in parallel. Rows come
    /// back sorted by grid point, then policy in plan order, then seed.
    pub fn run(&self) -> Result<Vec<Row>> {
        let grid = self.grid()?;
        let mut tasks = Vec::new();
        for (g, point) in grid.iter().enumerate() {
            let helper_bound = compute_partition(&point.config)
                .and_then(|p| helper_routing_bound(&point.config, &p))
                .unwrap_or(f64::NAN);
            let critical = point
                .theta
                .map_or(Ok(f64::NAN), |t| critical_bound(t, &self.classes))?;
            for policy in &self.policies {
                for r in 0..self.replications {
                    tasks.push((
                        g,
                        policy,
                        replication_seed(self.seed, r),
                        helper_bound,
                        critical,
                    ));
                }
            }
        }
        tasks
            .into_par_iter()
            .map(|(g, policy, seed, helper_bound, critical_bound)| {
                let point = &grid[g];
                let outcome = match engine::run(&point.config, policy, &self.run_options(seed)) {
                    Ok(o) => Some(o),
                    Err(Error::Instability { .. }) => None,
                    Err(e) => return Err(e),
                };
                Ok(Row {
                    policy: policy.to_string(),
                    k: point.k,
                    f_k: point.f_k,
                    rho: point.rho,
                    theta: point.theta.unwrap_or(f64::NAN),
                    seed,
                    arrivals: self.arrivals,
                    warmup: self.warmup_fraction,
                    outcome,
                    helper_bound,
                    critical_bound,
                })
            })
            .collect()
    }

    /// Comment line recording the full parameterization.
    pub fn manifest(&self) -> Result<String> {
        Ok(format!(
            "# msj {} plan={}",
            env!("CARGO_PKG_VERSION"),
            serde_json::to_string(self)?
        ))
    }
}

/// CSV header for `classes` job classes.
pub fn csv_header(classes: usize) -> String {
    let mut h = String::from(
        "policy,k,f_k,rho,theta,seed,arrivals,warmup,mean_response,ci95,p_helper,helper_util",
    );
    for i in 0..classes {
        h.push_str(&format!(",p_helper_{i},mean_response_{i}"));
    }
    h.push_str(",p_routed,helper_bound,critical_bound");
    h
}

fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x}")
    }
}

impl Row {
    /// One CSV line; unstable runs report `inf` mean response and blank
    /// metrics.
    pub fn to_csv(&self, classes: usize) -> String {
        let mut cells = vec![
            self.policy.clone(),
            self.k.to_string(),
            self.f_k.to_string(),
            num(self.rho),
            num(self.theta),
            self.seed.to_string(),
            self.arrivals.to_string(),
            num(self.warmup),
        ];
        match &self.outcome {
            Some(o) => {
                cells.extend([
                    num(o.mean_response),
                    num(o.response_ci95),
                    num(o.p_helper),
                    num(o.helper_utilization),
                ]);
                for i in 0..classes {
                    let c = o.per_class.get(i);
                    cells.push(num(c.map_or(f64::NAN, |c| c.p_helper)));
                    cells.push(num(c.map_or(f64::NAN, |c| c.mean_response)));
                }
                cells.push(num(o.p_routed));
            }
            None => {
                cells.push("inf".into());
                cells.extend(std::iter::repeat_n(String::new(), 3 + 2 * classes + 1));
            }
        }
        cells.push(num(self.helper_bound));
        cells.push(num(self.critical_bound));
        cells.join(",")
    }
}

/// Writes the manifest line, the header and every row.
pub fn write_csv<W: Write>(plan: &ExperimentPlan, rows: &[Row], mut out: W) -> Result<()> {
    let classes = plan.classes.len();
    writeln!(out, "{}", plan.manifest()?)?;
    writeln!(out, "{}", csv_header(classes))?;
    for r in rows {
        writeln!(out, "{}", r.to_csv(classes))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::figure1_classes;

    fn plan(kind: ExperimentKind) -> ExperimentPlan {
        ExperimentPlan {
            kind,
            workload: "figure1".into(),
            classes: figure1_classes(),
            policies: vec![PolicySpec::Fcfs, PolicySpec::bs(PolicySpec::Fcfs)],
            arrivals: 2_000,
            replications: 2,
            seed: 5,
            warmup_fraction: 0.1,
            max_in_system: 1_000_000,
            allow_unstable: false,
        }
    }

    #[test]
    fn validation() {
        let ok = plan(ExperimentKind::SweepLoad {
            k: 64,
            f_k: 1,
            rhos: vec![0.5],
        });
        assert!(ok.validate().is_ok());
        let mut p = ok.clone();
        p.arrivals = 999;
        assert!(p.validate().is_err());
        let mut p = ok.clone();
        p.replications = 0;
        assert!(p.validate().is_err());
        let mut p = ok.clone();
        p.policies.clear();
        assert!(p.validate().is_err());
        let mut p = ok.clone();
        p.kind = ExperimentKind::SweepLoad {
            k: 64,
            f_k: 1,
            rhos: vec![],
        };
        assert!(p.validate().is_err());
        p.kind = ExperimentKind::SweepLoad {
            k: 64,
            f_k: 1,
            rhos: vec![1.2],
        };
        assert!(p.validate().is_err());
        p.allow_unstable = true;
        assert!(p.validate().is_ok());
        p.kind = ExperimentKind::ScaleCritical {
            ks: vec![16, 64],
            theta: 0.7,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn grids() {
        let p = plan(ExperimentKind::ScaleCritical {
            ks: vec![32, 128, 512],
            theta: 0.7,
        });
        let g = p.grid().unwrap();
        assert_eq!(g.iter().map(|p| p.f_k).collect::<Vec<_>>(), vec![1, 2, 6]);
        assert_eq!(g[0].config.classes()[3].need, 8);
        assert!((g[1].rho - (1.0 - 0.7 * (2.0f64 / 128.0).sqrt())).abs() < 1e-15);

        let p = plan(ExperimentKind::ScaleSubcritical {
            ks: vec![64, 256],
            rho: 0.7,
            base_k: 32,
        });
        for point in p.grid().unwrap() {
            assert!((point.config.load() - 0.7).abs() < 1e-12);
        }

        let p = plan(ExperimentKind::SweepLoad {
            k: 256,
            f_k: 4,
            rhos: vec![0.5, 0.9],
        });
        let g = p.grid().unwrap();
        assert_eq!(g[1].config.classes()[0].need, 4);
        assert!((g[1].config.load() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn rows_are_ordered_and_deterministic() {
        let p = plan(ExperimentKind::SweepLoad {
            k: 64,
            f_k: 1,
            rhos: vec![0.3, 0.6],
        });
        let rows = p.run().unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2);
        let keys: Vec<(String, u64)> = rows.iter().map(|r| (r.policy.clone(), r.seed)).collect();
        assert_eq!(keys[0], ("fcfs".to_string(), 5));
        assert_eq!(keys[1], ("fcfs".to_string(), 6));
        assert_eq!(keys[2], ("bs:fcfs".to_string(), 5));
        assert_eq!(rows[4].rho, 0.6);
        // NaN cells defeat PartialEq, so compare the rendered rows.
        let render = |rows: &[Row]| rows.iter().map(|r| r.to_csv(4)).collect::<Vec<_>>();
        assert_eq!(render(&rows), render(&p.run().unwrap()));
    }

    #[test]
    fn csv_layout() {
        let p = plan(ExperimentKind::ScaleCritical {
            ks: vec![32],
            theta: 0.7,
        });
        let rows = p.run().unwrap();
        let mut buf = Vec::new();
        write_csv(&p, &rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# msj ") && lines[0].contains("\"theta\":0.7"));
        assert_eq!(lines[1], csv_header(4));
        let width = lines[1].split(',').count();
        assert_eq!(width, 12 + 8 + 3);
        for l in &lines[2..] {
            assert_eq!(l.split(',').count(), width, "{l}");
        }
        assert_eq!(lines.len(), 2 + 4);
        let cells: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(&cells[..3], &["fcfs", "32", "1"]);
        assert_eq!(cells[4], "0.7");
        assert!(!cells[width - 1].is_empty());
    }

    #[test]
    fn unstable_rows_report_infinity() {
        let row = Row {
            policy: "fcfs".into(),
            k: 4,
            f_k: 1,
            rho: 1.5,
            theta: f64::NAN,
            seed: 1,
            arrivals: 1000,
            warmup: 0.1,
            outcome: None,
            helper_bound: f64::NAN,
            critical_bound: f64::NAN,
        };
        let line = row.to_csv(2);
        assert_eq!(line.split(',').count(), csv_header(2).split(',').count());
        assert!(line.contains(",inf,"));
    }
}
