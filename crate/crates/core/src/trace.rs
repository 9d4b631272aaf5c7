//! Standard Workload Format (SWF) ingestion and per-need class models.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::workload::{Job, JobClass, ServiceDistribution, SystemConfig};

/// The three SWF fields the pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceJob {
    pub submit_time: f64,
    pub run_time: f64,
    pub processors: usize,
}

/// SWF field positions (1-based, as in the format definition).
const SUBMIT_FIELD: usize = 2;
const RUN_FIELD: usize = 4;
const PROCS_FIELD: usize = 5;
const SWF_FIELDS: usize = 18;

pub fn parse_swf(path: &Path) -> Result<Vec<TraceJob>> {
    let text = std::fs::read_to_string(path)?;
    parse_swf_str(&text).map_err(|e| match e {
        Error::Swf { line, msg, .. } => Error::Swf {
            path: path.to_path_buf(),
            line,
            msg,
        },
        other => other,
    })
}

/// Parses SWF text. Records with a non-positive run time or processor count
/// (including the `-1` sentinel) are dropped.
pub fn parse_swf_str(text: &str) -> Result<Vec<TraceJob>> {
    let err = |line: usize, msg: String| Error::Swf {
        path: Default::default(),
        line,
        msg,
    };
    let mut jobs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < PROCS_FIELD {
            return Err(err(
                line_no,
                format!(
                    "expected at least {PROCS_FIELD} fields, found {}",
                    fields.len()
                ),
            ));
        }
        let num = |pos: usize| -> Result<f64> {
            let s = fields[pos - 1];
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line_no, format!("field {pos} is not a number: `{s}`")))
        };
        let submit_time = num(SUBMIT_FIELD)?;
        let run_time = num(RUN_FIELD)?;
        let processors = num(PROCS_FIELD)?;
        if run_time <= 0.0 || processors <= 0.0 {
            continue;
        }
        if processors.fract() != 0.0 {
            return Err(err(
                line_no,
                format!("fractional processor count {processors}"),
            ));
        }
        jobs.push(TraceJob {
            submit_time,
            run_time,
            processors: processors as usize,
        });
    }
    if jobs.is_empty() {
        return Err(err(0, "no usable records".into()));
    }
    Ok(jobs)
}

/// Writes jobs as 18-field SWF lines, `-1` in every unused field.
pub fn to_swf(jobs: &[TraceJob]) -> String {
    let mut out = String::from("; synthetic SWF written by msj\n");
    for (i, j) in jobs.iter().enumerate() {
        let mut fields = vec!["-1".to_string(); SWF_FIELDS];
        fields[0] = (i + 1).to_string();
        fields[SUBMIT_FIELD - 1] = j.submit_time.to_string();
        fields[RUN_FIELD - 1] = j.run_time.to_string();
        fields[PROCS_FIELD - 1] = j.processors.to_string();
        let _ = writeln!(out, "{}", fields.join(" "));
    }
    out
}

/// Keeps jobs whose processor count is a power of two no larger than `max_need`.
pub fn filter_power_of_two(jobs: &[TraceJob], max_need: usize) -> Vec<TraceJob> {
    jobs.iter()
        .filter(|j| j.processors.is_power_of_two() && j.processors <= max_need)
        .copied()
        .collect()
}

/// Fraction of jobs with a power-of-two processor count (any size).
pub fn power_of_two_fraction(jobs: &[TraceJob]) -> f64 {
    if jobs.is_empty() {
        return f64::NAN;
    }
    let n = jobs
        .iter()
        .filter(|j| j.processors.is_power_of_two())
        .count();
    n as f64 / jobs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceClass {
    pub need: usize,
    pub share: f64,
    pub mean: f64,
    /// Sample standard deviation (divisor `count - 1`; 0 for one sample).
    pub std: f64,
    pub count: usize,
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// One class per distinct need, classes sorted by need.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassModel {
    pub total: usize,
    pub classes: Vec<TraceClass>,
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

impl ClassModel {
    pub fn from_jobs(jobs: &[TraceJob]) -> Result<Self> {
        if jobs.is_empty() {
            return Err(Error::InvalidWorkload(
                "class model needs at least one job".into(),
            ));
        }
        let mut by_need: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for j in jobs {
            by_need.entry(j.processors).or_default().push(j.run_time);
        }
        let total = jobs.len();
        let classes = by_need
            .into_iter()
            .map(|(need, mut samples)| {
                // Sorted samples make the model independent of input order.
                samples.sort_by(f64::total_cmp);
                let (mean, std) = mean_std(&samples);
                TraceClass {
                    need,
                    share: samples.len() as f64 / total as f64,
                    mean,
                    std,
                    count: samples.len(),
                    samples,
                }
            })
            .collect();
        Ok(Self { total, classes })
    }

    pub fn max_need(&self) -> usize {
        self.classes.iter().map(|c| c.need).max().unwrap_or(0)
    }

    pub fn job_classes(&self) -> Vec<JobClass> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, c)| {
                JobClass::new(
                    i,
                    c.need,
                    c.share,
                    ServiceDistribution::empirical(c.samples.clone()),
                )
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table: mean, std, need, share.
    pub fn table(&self) -> String {
        let rows: Vec<[String; 4]> = self
            .classes
            .iter()
            .map(|c| {
                [
                    format!("{:.2}", c.mean),
                    format!("{:.2}", c.std),
                    c.need.to_string(),
                    format!("{:.4}", c.share),
                ]
            })
            .collect();
        let header = ["E[D]", "std(D)", "n", "alpha"];
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |cells: [&str; 4], out: &mut String| {
            let padded: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", padded.join("  "));
        };
        line(header, &mut out);
        for r in &rows {
            line([&r[0], &r[1], &r[2], &r[3]], &mut out);
        }
        out
    }
}

/// Poisson workload on `k` servers with the model's empirical service laws
/// and arrival rate chosen so the load equals `target_rho`.
pub fn trace_to_config(model: &ClassModel, k: usize, target_rho: f64) -> Result<SystemConfig> {
    if !(target_rho > 0.0 && target_rho < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target load {target_rho} must lie in (0, 1)"
        )));
    }
    let classes = model.job_classes();
    let demand = crate::workload::total_demand(&classes);
    let lambda = target_rho * k as f64 / demand;
    SystemConfig::new(k, lambda, classes)
}

/// Jobs in submit order with times shifted to start at zero and real run
/// times, for replay instead of a synthetic Poisson stream. Every processor
/// count must be a class of `model`.
pub fn replay_jobs(jobs: &[TraceJob], model: &ClassModel) -> Result<Vec<Job>> {
    let index: BTreeMap<usize, usize> = model
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.need, i))
        .collect();
    let mut sorted = jobs.to_vec();
    sorted.sort_by(|a, b| a.submit_time.total_cmp(&b.submit_time));
    let origin = sorted.first().map_or(0.0, |j| j.submit_time);
    sorted
        .iter()
        .enumerate()
        .map(|(id, j)| {
            let class_index = *index.get(&j.processors).ok_or_else(|| {
                Error::InvalidWorkload(format!("no class with need {}", j.processors))
            })?;
            Ok(Job {
                id: id as u64,
                class_index,
                arrival_time: j.submit_time - origin,
                service_time: j.run_time,
                need: j.processors,
            })
        })
        .collect()
}
