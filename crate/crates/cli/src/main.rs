//! `msj`: simulate multiserver-job scheduling policies, sweep loads and
//! cluster sizes, extract class models from SWF traces and evaluate the
//! Erlang-B based bounds.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use msj_core::analytics::{
    class_blocking, critical_bound, erlang_b, helper_routing_bound, mgss_mean_response,
    stability_lhs,
};
use msj_core::engine::simulate;
use msj_core::experiment::{csv_header, write_csv, ExperimentKind, ExperimentPlan, Row};
use msj_core::trace::{filter_power_of_two, parse_swf, power_of_two_fraction, replay_jobs};
use msj_core::workload::{figure1_classes, figure1_fk, halfin_whitt_load, scale_halfin_whitt};
use msj_core::{
    compute_partition, run, ClassModel, Error, JobClass, PolicySpec, RunOptions,
    ServiceDistribution, SystemConfig,
};

/// Exit status for runs aborted as unstable.
const EXIT_UNSTABLE: u8 = 3;

#[derive(Parser)]
#[command(name = "msj", version, about = "Multiserver-job scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one policy on a JSON workload and print CSV rows.
    Simulate(SimulateArgs),
    /// Sweep the load on a fixed cluster.
    SweepLoad(SweepLoadArgs),
    /// Scale the cluster size in the subcritical or critical regime.
    Scale(ScaleArgs),
    /// Extract per-need classes from an SWF trace and sweep the load.
    AnalyzeTrace(TraceArgs),
    /// Erlang-B blocking probability E_s(a).
    Erlang(ErlangArgs),
    /// Dedicated pools and helper size for a workload.
    Partition(PartitionArgs),
    /// Helper-routing bounds of balanced splitting.
    Bounds(BoundsArgs),
}

/// Run-length and output flags shared by the simulating subcommands.
#[derive(Args, Clone)]
struct RunFlags {
    /// Arrivals per run.
    #[arg(long, default_value_t = 100_000)]
    arrivals: usize,
    /// Root seed; replication r uses seed + r.
    #[arg(long, env = "MSJ_SEED", default_value_t = 1)]
    seed: u64,
    /// Fraction of arrivals discarded as warmup.
    #[arg(long, default_value_t = 0.1)]
    warmup: f64,
    /// Abort a run as unstable beyond this many jobs in system.
    #[arg(long, default_value_t = 1_000_000)]
    max_in_system: usize,
    /// Accept loads at or above one.
    #[arg(long)]
    allow_unstable: bool,
    /// Write CSV here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl RunFlags {
    fn options(&self, seed: u64) -> RunOptions {
        RunOptions {
            arrivals: self.arrivals,
            seed,
            warmup_fraction: self.warmup,
            max_in_system: self.max_in_system,
            record_lifecycle: false,
        }
    }
}

#[derive(Args, Clone)]
struct SweepFlags {
    #[command(flatten)]
    run: RunFlags,
    /// Comma-separated policies, e.g. `fcfs,bs:fcfs,sf-srpt`.
    #[arg(long, value_delimiter = ',', default_value = "fcfs,bs:fcfs")]
    policies: Vec<PolicySpec>,
    /// Independent replications per grid point and policy.
    #[arg(long, default_value_t = 5)]
    replications: usize,
    /// JSON workload whose classes (unit-scale needs) replace the default
    /// figure-1 mix; its `k` and `lambda` are ignored.
    #[arg(long)]
    workload: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON workload: `{"k": .., "lambda": .., "classes": [..]}`.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "bs:fcfs")]
    policy: PolicySpec,
    /// Override the cluster size of the file.
    #[arg(long)]
    k: Option<usize>,
    /// Override the arrival rate of the file.
    #[arg(long, conflicts_with = "rho")]
    lambda: Option<f64>,
    /// Set the arrival rate to reach this load.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 1)]
    replications: usize,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct SweepLoadArgs {
    #[arg(long, default_value_t = 256)]
    k: usize,
    /// Need multiplier; defaults to floor((k/32)^(2/3)).
    #[arg(long)]
    f_k: Option<usize>,
    /// Loads as a list `0.5,0.7` or a range `0.5:0.95:0.05`.
    #[arg(long, default_value = "0.5:0.95:0.05")]
    rhos: Grid,
    #[command(flatten)]
    sweep: SweepFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum Regime {
    Subcritical,
    Critical,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long, value_enum)]
    regime: Regime,
    /// Cluster sizes, comma-separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "32,64,128,256,512,1024,2048"
    )]
    ks: Vec<usize>,
    /// Critical regime: (1 - rho) sqrt(k / f_k) = theta.
    #[arg(long, default_value_t = 0.7)]
    theta: f64,
    /// Subcritical regime: load of the base cluster.
    #[arg(long, default_value_t = 0.7)]
    rho: f64,
    /// Subcritical regime: size of the base cluster.
    #[arg(long, default_value_t = 32)]
    base_k: usize,
    #[command(flatten)]
    sweep: SweepFlags,
}

#[derive(Args)]
struct TraceArgs {
    /// SWF trace file.
    swf: PathBuf,
    /// Largest power-of-two need kept.
    #[arg(long, default_value_t = 64)]
    max_need: usize,
    #[arg(long, default_value_t = 512)]
    k: usize,
    #[arg(long, default_value = "0.5:0.9:0.1")]
    rhos: Grid,
    /// Also write the class model as JSON.
    #[arg(long)]
    model_json: Option<PathBuf>,
    /// Only print the class table.
    #[arg(long)]
    table_only: bool,
    /// Replay real submit and run times instead of a Poisson load sweep.
    #[arg(long)]
    replay: bool,
    #[command(flatten)]
    sweep: SweepFlags,
}

#[derive(Args)]
struct ErlangArgs {
    /// Number of servers.
    s: usize,
    /// Offered load.
    a: f64,
    /// Also print the M/G/s/s mean response for mean service `d`, counting
    /// a blocked job as zero.
    #[arg(long)]
    mean_service: Option<f64>,
}

/// Workload selection for the calculators: a JSON file, explicit classes,
/// or the figure-1 mix scaled by `f_k`.
#[derive(Args)]
struct ClassFlags {
    /// JSON workload file.
    #[arg(long, conflicts_with = "class")]
    config: Option<PathBuf>,
    /// Class as `need:share[:mean]`; shares are arrival shares, normalized
    /// to sum to one, and the mean service defaults to 1. Repeatable.
    #[arg(long = "class")]
    class: Vec<ClassArg>,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long, default_value_t = 256)]
    k: usize,
    /// Need multiplier for the figure-1 mix; defaults to floor((k/32)^(2/3)).
    #[arg(long)]
    f_k: Option<usize>,
    #[command(flatten)]
    classes: ClassFlags,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long, default_value_t = 0.7)]
    theta: f64,
    /// Also evaluate the finite-k quantities on this cluster.
    #[arg(long)]
    k: Option<usize>,
    /// Need multiplier at `k`; defaults to floor((k/32)^(2/3)).
    #[arg(long)]
    f_k: Option<usize>,
    #[command(flatten)]
    classes: ClassFlags,
}

/// Numbers given as `a,b,c` or `start:stop:step` (stop included).
#[derive(Clone, Debug)]
struct Grid(Vec<f64>);

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() == 3 {
            let (start, stop, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
            if step.is_nan() || step <= 0.0 || stop < start {
                return Err(format!("bad range `{s}`"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            // Round to the step's precision so 0.1 * 3 prints as 0.3.
            let round = |x: f64| (x * 1e9).round() / 1e9;
            return Ok(Grid(
                (0..=n).map(|i| round(start + i as f64 * step)).collect(),
            ));
        }
        if parts.len() != 1 {
            return Err(format!("expected a list or start:stop:step, got `{s}`"));
        }
        let values = s.split(',').map(parse).collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err("empty grid".into());
        }
        Ok(Grid(values))
    }
}

#[derive(Clone, Debug)]
struct ClassArg {
    need: usize,
    share: f64,
    mean: f64,
}

impl FromStr for ClassArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(2..=3).contains(&parts.len()) {
            return Err(format!("expected need:share[:mean], got `{s}`"));
        }
        let need = parts[0]
            .parse()
            .map_err(|e| format!("need `{}`: {e}", parts[0]))?;
        let share = parts[1]
            .parse()
            .map_err(|e| format!("share `{}`: {e}", parts[1]))?;
        let mean = match parts.get(2) {
            Some(m) => m.parse().map_err(|e| format!("mean `{m}`: {e}"))?,
            None => 1.0,
        };
        Ok(ClassArg { need, share, mean })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::SweepLoad(a) => cmd_sweep_load(a),
        Command::Scale(a) => cmd_scale(a),
        Command::AnalyzeTrace(a) => cmd_analyze_trace(a),
        Command::Erlang(a) => cmd_erlang(a),
        Command::Partition(a) => cmd_partition(a),
        Command::Bounds(a) => cmd_bounds(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let unstable = e
                .downcast_ref::<Error>()
                .is_some_and(|e| matches!(e, Error::Instability { .. }));
            ExitCode::from(if unstable { EXIT_UNSTABLE } else { 1 })
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_config(path: &Path, allow_unstable: bool) -> Result<SystemConfig> {
    SystemConfig::load_file(path, !allow_unstable)
        .with_context(|| format!("cannot load workload {}", path.display()))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let file = load_config(&a.config, true)?;
    let k = a.k.unwrap_or(file.k());
    let classes = file.classes().to_vec();
    let lambda = match (a.lambda, a.rho) {
        (Some(l), _) => l,
        (None, Some(rho)) => rho * k as f64 / msj_core::workload::total_demand(&classes),
        (None, None) => file.lambda() * k as f64 / file.k() as f64,
    };
    let config = if a.run.allow_unstable {
        SystemConfig::new_allow_unstable(k, lambda, classes)?
    } else {
        SystemConfig::new(k, lambda, classes)?
    };
    let part = compute_partition(&config).ok();
    let helper_bound = part
        .as_ref()
        .and_then(|p| helper_routing_bound(&config, p).ok())
        .unwrap_or(f64::NAN);
    let n = config.classes().len();
    let mut rows = Vec::new();
    for r in 0..a.replications.max(1) {
        let seed = msj_core::engine::replication_seed(a.run.seed, r);
        let outcome = run(&config, &a.policy, &a.run.options(seed))?;
        rows.push(Row {
            policy: a.policy.to_string(),
            k,
            f_k: 1,
            rho: config.load(),
            theta: f64::NAN,
            seed,
            arrivals: a.run.arrivals,
            warmup: a.run.warmup,
            outcome: Some(outcome),
            helper_bound,
            critical_bound: f64::NAN,
        });
    }
    let mut out = output(a.run.out.as_deref())?;
    writeln!(out, "{}", csv_header(n))?;
    for row in &rows {
        writeln!(out, "{}", row.to_csv(n))?;
    }
    out.flush()?;
    Ok(())
}

fn base_classes(path: Option<&Path>) -> Result<(String, Vec<JobClass>)> {
    match path {
        Some(p) => {
            let c = load_config(p, false)?;
            Ok((p.display().to_string(), c.classes().to_vec()))
        }
        None => Ok(("figure1".into(), figure1_classes())),
    }
}

fn run_plan(
    kind: ExperimentKind,
    workload: String,
    classes: Vec<JobClass>,
    s: &SweepFlags,
) -> Result<()> {
    let plan = ExperimentPlan {
        kind,
        workload,
        classes,
        policies: s.policies.clone(),
        arrivals: s.run.arrivals,
        replications: s.replications,
        seed: s.run.seed,
        warmup_fraction: s.run.warmup,
        max_in_system: s.run.max_in_system,
        allow_unstable: s.run.allow_unstable,
    };
    let rows = plan.run()?;
    let unstable = rows.iter().filter(|r| r.outcome.is_none()).count();
    if unstable > 0 {
        eprintln!(
            "warning: {unstable} of {} runs aborted as unstable (mean_response = inf)",
            rows.len()
        );
    }
    let mut out = output(s.run.out.as_deref())?;
    write_csv(&plan, &rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_sweep_load(a: SweepLoadArgs) -> Result<()> {
    let (name, classes) = base_classes(a.sweep.workload.as_deref())?;
    let f_k = a.f_k.unwrap_or_else(|| figure1_fk(a.k).max(1));
    let kind = ExperimentKind::SweepLoad {
        k: a.k,
        f_k,
        rhos: a.rhos.0,
    };
    run_plan(kind, name, classes, &a.sweep)
}

fn cmd_scale(a: ScaleArgs) -> Result<()> {
    let (name, classes) = base_classes(a.sweep.workload.as_deref())?;
    let kind = match a.regime {
        Regime::Subcritical => ExperimentKind::ScaleSubcritical {
            ks: a.ks,
            rho: a.rho,
            base_k: a.base_k,
        },
        Regime::Critical => ExperimentKind::ScaleCritical {
            ks: a.ks,
            theta: a.theta,
        },
    };
    run_plan(kind, name, classes, &a.sweep)
}

fn cmd_analyze_trace(a: TraceArgs) -> Result<()> {
    if a.sweep.workload.is_some() {
        bail!("--workload does not apply to analyze-trace; the classes come from the trace");
    }
    let jobs =
        parse_swf(&a.swf).with_context(|| format!("cannot read trace {}", a.swf.display()))?;
    let kept = filter_power_of_two(&jobs, a.max_need);
    let model = ClassModel::from_jobs(&kept)?;
    let csv_to_stdout = a.sweep.run.out.is_none() && !a.table_only;
    let summary = format!(
        "{}: {} usable jobs, {:.2}% power-of-two, {} kept (needs <= {})\n{}",
        a.swf.display(),
        jobs.len(),
        100.0 * power_of_two_fraction(&jobs),
        kept.len(),
        a.max_need,
        model.table()
    );
    // Keep stdout clean for the CSV when it goes there.
    if csv_to_stdout {
        eprint!("{summary}");
    } else {
        print!("{summary}");
    }
    if let Some(path) = &a.model_json {
        std::fs::write(path, model.to_json()?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    if a.table_only {
        return Ok(());
    }
    if a.replay {
        return replay(&a, &kept, &model);
    }
    let kind = ExperimentKind::TraceSweep {
        k: a.k,
        rhos: a.rhos.0.clone(),
    };
    run_plan(
        kind,
        a.swf.display().to_string(),
        model.job_classes(),
        &a.sweep,
    )
}

fn replay(a: &TraceArgs, kept: &[msj_core::TraceJob], model: &ClassModel) -> Result<()> {
    let jobs = replay_jobs(kept, model)?;
    let span = jobs.last().map_or(0.0, |j| j.arrival_time);
    if span <= 0.0 {
        bail!("trace spans no time; cannot replay");
    }
    let config =
        SystemConfig::new_allow_unstable(a.k, jobs.len() as f64 / span, model.job_classes())?;
    let n = model.classes.len();
    let mut out = output(a.sweep.run.out.as_deref())?;
    writeln!(out, "{}", csv_header(n))?;
    for spec in &a.sweep.policies {
        let mut policy = spec.build(&config)?;
        let mut opts = a.sweep.run.options(a.sweep.run.seed);
        opts.arrivals = opts.arrivals.min(jobs.len());
        let outcome = match simulate(policy.as_mut(), jobs.iter().cloned(), &opts, config.load()) {
            Ok(r) => Some(r.outcome),
            Err(Error::Instability { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        let row = Row {
            policy: spec.to_string(),
            k: a.k,
            f_k: 1,
            rho: config.load(),
            theta: f64::NAN,
            seed: opts.seed,
            arrivals: opts.arrivals,
            warmup: opts.warmup_fraction,
            outcome,
            helper_bound: f64::NAN,
            critical_bound: f64::NAN,
        };
        writeln!(out, "{}", row.to_csv(n))?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_erlang(a: ErlangArgs) -> Result<()> {
    let e = erlang_b(a.s, a.a)?;
    match a.mean_service {
        Some(d) => println!("{e}\t{}", mgss_mean_response(d, a.s, a.a)?),
        None => println!("{e}"),
    }
    Ok(())
}

/// Unit-scale classes from the flags, or `None` for the figure-1 mix.
fn explicit_classes(flags: &ClassFlags) -> Result<Option<(Option<usize>, Vec<JobClass>)>> {
    if let Some(path) = &flags.config {
        let c = load_config(path, false)?;
        return Ok(Some((Some(c.k()), c.classes().to_vec())));
    }
    if flags.class.is_empty() {
        return Ok(None);
    }
    let total: f64 = flags.class.iter().map(|c| c.share).sum();
    let classes = flags
        .class
        .iter()
        .enumerate()
        .map(|(i, c)| {
            JobClass::new(
                i,
                c.need,
                c.share / total,
                ServiceDistribution::exponential(c.mean),
            )
        })
        .collect();
    Ok(Some((None, classes)))
}

fn cmd_partition(a: PartitionArgs) -> Result<()> {
    let (k, classes) = match explicit_classes(&a.classes)? {
        Some((file_k, classes)) => (file_k.unwrap_or(a.k), classes),
        None => {
            let f_k = a.f_k.unwrap_or_else(|| figure1_fk(a.k).max(1));
            let classes = figure1_classes()
                .into_iter()
                .map(|c| JobClass {
                    need: c.need * f_k,
                    ..c
                })
                .collect();
            (a.k, classes)
        }
    };
    // The partition only depends on relative demands, so any rate will do.
    let config = SystemConfig::new_allow_unstable(k, 1e-3, classes)?;
    let p = compute_partition(&config)?;
    println!("class\tneed\tslots\tservers");
    for (i, c) in config.classes().iter().enumerate() {
        println!("{i}\t{}\t{}\t{}", c.need, p.slots[i], p.servers[i]);
    }
    println!("helper\t{}", p.helper);
    println!("psi\t{}", p.psi);
    Ok(())
}

fn cmd_bounds(a: BoundsArgs) -> Result<()> {
    let classes = match explicit_classes(&a.classes)? {
        Some((_, c)) => c,
        None => figure1_classes(),
    };
    println!("critical_bound\t{}", critical_bound(a.theta, &classes)?);
    let Some(k) = a.k else { return Ok(()) };
    let f_k = a.f_k.unwrap_or_else(|| figure1_fk(k).max(1));
    let config = scale_halfin_whitt(&classes, k, f_k, a.theta)?;
    let p = compute_partition(&config)?;
    println!("k\t{k}");
    println!("f_k\t{f_k}");
    println!("rho\t{}", halfin_whitt_load(k, f_k, a.theta));
    println!("helper\t{}", p.helper);
    println!(
        "helper_routing_bound\t{}",
        helper_routing_bound(&config, &p)?
    );
    println!(
        "scaled_routing_bound\t{}",
        (k as f64 / f_k as f64).sqrt() * helper_routing_bound(&config, &p)?
    );
    println!("stability_lhs\t{}", stability_lhs(&config, &p)?);
    for (i, b) in class_blocking(&config, &p)?.iter().enumerate() {
        println!("blocking_{i}\t{b}");
    }
    Ok(())
}
