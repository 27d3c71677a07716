//! `holdsim`: scenario generation, baselines, simulation, search and
//! comparison of hold-fulfillment and browser-reserve policies.
//!
//! Every failure prints exactly one line `error[Kind]: message` to stderr and
//! exits nonzero. Set `HOLDSIM_THREADS` to bound the worker pool; results do
//! not depend on it.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use holdsim::fulfillment::{usage_rewards, RewardVector};
use holdsim::model::{Fulfillment, PolicySpec, Scenario};
use holdsim::objectives::{self, Evaluation};
use holdsim::optimizer::{self, ParetoArchive, SearchConfig, SimEvaluator};
use holdsim::oracles::{self, SmallInstance};
use holdsim::scenario::{self, GeneratorConfig};
use holdsim::simulator::{self, Baselines, SimConfig, SimOutput};

const DEFAULT_REPS: u32 = 10;
const DEFAULT_SEED: u64 = 0;
const THREADS_VAR: &str = "HOLDSIM_THREADS";

#[derive(Debug)]
enum CliError {
    Core(holdsim::Error),
    MissingBaseline(PathBuf),
    Usage(String),
    File(PathBuf, String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::MissingBaseline(_) => "MissingBaseline",
            CliError::Usage(_) => "UsageError",
            CliError::File(..) => "FileError",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::MissingBaseline(path) => format!(
                "no baseline at {}; run `holdsim baseline` first",
                path.display()
            ),
            CliError::Usage(msg) => msg.clone(),
            CliError::File(path, msg) => format!("{}: {msg}", path.display()),
        }
    }
}

impl From<holdsim::Error> for CliError {
    fn from(e: holdsim::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "holdsim", version, about = "Library holds fulfillment and browser reserve simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario.
    GenScenario(GenArgs),
    /// Simulate the reference policies and store the objective denominators
    /// next to the scenario.
    Baseline(BaselineArgs),
    /// Simulate one policy and write metrics.csv, flows.csv and summary.csv.
    Simulate(SimulateArgs),
    /// Search reserve fractions for the usage/experience frontier.
    Optimize(OptimizeArgs),
    /// Turn a near-optimal policy into a tiered one.
    Tierify(TierifyArgs),
    /// Exact values and bounds for a small instance.
    Oracle(OracleArgs),
    /// Evaluate several policies on identical random streams.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generator configuration (JSON); defaults to the 50-branch desk scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the full-size 84-branch, 3,809-title preset.
    #[arg(long, conflicts_with = "config")]
    full_size: bool,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = DEFAULT_REPS)]
    reps: u32,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Measured days after warm-up; defaults to the scenario's sim_days.
    #[arg(long)]
    days: Option<u32>,
    /// Where to write the baselines; defaults to `<scenario>.baseline.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Scenario plus its frozen baselines and the evaluation settings.
#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Baselines file; defaults to `<scenario>.baseline.json`.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Replications; defaults to the baseline's.
    #[arg(long)]
    reps: Option<u32>,
    /// Master seed; defaults to the baseline's.
    #[arg(long)]
    seed: Option<u64>,
    /// Near-optimal fulfillment with unit rewards instead of usage-aligned
    /// ones (the setting the usage baseline is measured under).
    #[arg(long)]
    uniform_rewards: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    policy: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Search configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Also re-evaluate every frontier point as a tiered policy.
    #[arg(long)]
    tiered: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TierifyArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// A NearOptimal policy.
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    local_first: bool,
    /// Output policy file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// Small instance (JSON).
    #[arg(long)]
    instance: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Policies to compare; without any, runs the four-way lever comparison.
    #[arg(long = "policy")]
    policies: Vec<PathBuf>,
    /// Reserve fractions for the four-way comparison's balanced policies
    /// (a policy file); defaults to 0.5 at every branch.
    #[arg(long)]
    balanced: Option<PathBuf>,
    /// Output directory for compare.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn baseline_path(scenario: &Path) -> PathBuf {
    let stem = scenario.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
    scenario.with_file_name(format!("{stem}.baseline.json"))
}

fn ensure_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| CliError::File(dir.to_path_buf(), e.to_string()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult {
    let fail = |e: csv::Error| CliError::File(path.to_path_buf(), e.to_string());
    let mut writer = csv::Writer::from_path(path).map_err(fail)?;
    for row in rows {
        writer.serialize(row).map_err(fail)?;
    }
    writer.flush().map_err(|e| CliError::File(path.to_path_buf(), e.to_string()))
}

/// Writes rows whose column set is only known at run time.
fn write_records(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult {
    let fail = |e: csv::Error| CliError::File(path.to_path_buf(), e.to_string());
    let mut writer = csv::Writer::from_path(path).map_err(fail)?;
    writer.write_record(header).map_err(fail)?;
    for row in rows {
        writer.write_record(row).map_err(fail)?;
    }
    writer.flush().map_err(|e| CliError::File(path.to_path_buf(), e.to_string()))
}

struct Context {
    scenario: Scenario,
    baselines: Baselines,
    config: SimConfig,
    rewards: RewardVector,
}

impl Context {
    fn load(args: &EvalArgs) -> CliResult<Self> {
        let scenario = Scenario::load(&args.scenario)?;
        let path = args.baseline.clone().unwrap_or_else(|| baseline_path(&args.scenario));
        if !path.exists() {
            return Err(CliError::MissingBaseline(path));
        }
        let baselines = Baselines::load(&path)?;
        if baselines.baseline_co.len() != scenario.branch_count() {
            return Err(CliError::Usage(format!(
                "baseline {} does not match the scenario's {} branches",
                path.display(),
                scenario.branch_count()
            )));
        }
        let config = SimConfig::new(
            args.reps.unwrap_or(baselines.replications),
            args.seed.unwrap_or(baselines.master_seed),
            baselines.measure_days,
        );
        let rewards = if args.uniform_rewards {
            RewardVector::uniform(scenario.branch_count())
        } else {
            usage_rewards(&scenario, &baselines.baseline_co)?
        };
        Ok(Context {
            scenario,
            baselines,
            config,
            rewards,
        })
    }

    fn load_policy(&self, path: &Path) -> CliResult<PolicySpec> {
        Ok(PolicySpec::load(path, self.scenario.branch_count())?)
    }

    fn simulate(&self, policy: &PolicySpec) -> CliResult<(SimOutput, Evaluation)> {
        let output = simulator::run(&self.scenario, policy, Some(&self.rewards), &self.config)?;
        let evaluation = objectives::evaluate(&self.scenario, &self.baselines, &output)?;
        Ok((output, evaluation))
    }

    fn tierify(&self, policy: &PolicySpec) -> CliResult<PolicySpec> {
        Ok(simulator::tierify(&self.scenario, policy, &self.rewards, &self.config)?)
    }
}

fn gen_scenario(args: GenArgs) -> CliResult {
    let mut config = match (&args.config, args.full_size) {
        (Some(path), _) => GeneratorConfig::load(path)?,
        (None, true) => GeneratorConfig::full_size(),
        (None, false) => GeneratorConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let scenario = scenario::generate(&config)?;
    scenario.save(&args.out)?;
    println!(
        "wrote {} ({} branches, {} titles, {} copies)",
        args.out.display(),
        scenario.branch_count(),
        scenario.title_count(),
        scenario.total_copies()
    );
    Ok(())
}

fn baseline(args: BaselineArgs) -> CliResult {
    let scenario = Scenario::load(&args.scenario)?;
    let config = SimConfig::new(args.reps, args.seed, args.days.unwrap_or(scenario.sim_days));
    let baselines = simulator::freeze_baselines(&scenario, &config)?;
    let out = args.out.unwrap_or_else(|| baseline_path(&args.scenario));
    baselines.save(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    branch: usize,
    label: &'a str,
    #[serde(rename = "CO_browse")]
    co_browse: f64,
    #[serde(rename = "CO_hold")]
    co_hold: f64,
    #[serde(rename = "CQ")]
    cq: f64,
    usage_ratio: f64,
    quality_ratio: f64,
    net_inflow: f64,
}

#[derive(Serialize)]
struct FlowRow {
    source: usize,
    destination: usize,
    weighted_count: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    f: f64,
    g: f64,
    #[serde(rename = "g_Nash")]
    g_nash: f64,
    rejections: f64,
}

fn simulate(args: SimulateArgs) -> CliResult {
    let ctx = Context::load(&args.eval)?;
    let policy = ctx.load_policy(&args.policy)?;
    let (output, evaluation) = ctx.simulate(&policy)?;
    ensure_dir(&args.out)?;

    let metrics = &output.metrics;
    let cq = objectives::collection_quality(metrics, &ctx.scenario.desirabilities());
    let point = &evaluation.point;
    let rows: Vec<MetricsRow> = (0..ctx.scenario.branch_count())
        .map(|i| MetricsRow {
            branch: i,
            label: &ctx.scenario.branches[i].label,
            co_browse: metrics.co_browse[i],
            co_hold: metrics.co_hold[i],
            cq: cq[i],
            usage_ratio: point.usage_ratio[i],
            quality_ratio: point.quality_ratio[i],
            net_inflow: point.net_inflow[i],
        })
        .collect();
    write_csv(&args.out.join("metrics.csv"), &rows)?;

    let n = ctx.scenario.branch_count();
    let flows: Vec<FlowRow> = (0..n)
        .flat_map(|s| (0..n).map(move |d| (s, d)))
        .filter(|&(s, d)| s != d && metrics.flows.units(s, d) != 0)
        .map(|(s, d)| FlowRow {
            source: s,
            destination: d,
            weighted_count: metrics.flow(s, d),
        })
        .collect();
    write_csv(&args.out.join("flows.csv"), &flows)?;

    write_csv(
        &args.out.join("summary.csv"),
        &[SummaryRow {
            f: point.f,
            g: point.g,
            g_nash: point.g_nash,
            rejections: metrics.rejected_holds,
        }],
    )?;
    println!(
        "f={} g={} g_Nash={} rejections={}",
        point.f, point.g, point.g_nash, metrics.rejected_holds
    );
    Ok(())
}

fn optimize(args: OptimizeArgs) -> CliResult {
    let ctx = Context::load(&args.eval)?;
    let mut search = match &args.config {
        Some(path) => holdsim::io::load_json::<SearchConfig>(path)?,
        None => SearchConfig::default(),
    };
    if let Some(iterations) = args.iterations {
        search.iterations = iterations;
    }
    if let Some(batch) = args.batch_size {
        search.batch_size = batch;
    }
    search.replications = ctx.config.replications;
    search.seed = ctx.config.master_seed;

    let evaluator = SimEvaluator::new(&ctx.scenario, &ctx.baselines, ctx.config.clone())?;
    let result = optimizer::optimize(&evaluator, &search)?;
    ensure_dir(&args.out)?;
    write_pareto(&args.out, &result.archive, ctx.scenario.branch_count())?;

    if args.tiered {
        let points = optimizer::reevaluate_tiered(&result.archive, &evaluator)?;
        let header: Vec<String> = ["point", "f_nearopt", "g_nearopt", "f_tiered", "g_tiered"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut rows = Vec::new();
        for (k, p) in points.iter().enumerate() {
            p.policy.save(args.out.join(format!("tiered_{k:03}.json")))?;
            rows.push(vec![
                k.to_string(),
                p.f_nearopt.to_string(),
                p.g_nearopt.to_string(),
                p.f_tiered.to_string(),
                p.g_tiered.to_string(),
            ]);
        }
        write_records(&args.out.join("tiered.csv"), &header, &rows)?;
    }
    println!(
        "{} frontier points, hypervolume {}",
        result.archive.len(),
        result.archive.hypervolume()
    );
    Ok(())
}

fn write_pareto(dir: &Path, archive: &ParetoArchive, branch_count: usize) -> CliResult {
    let mut header: Vec<String> = (0..branch_count).map(|i| format!("beta_{i}")).collect();
    header.extend(["f", "g", "hypervolume"].map(String::from));
    let mut rows = Vec::new();
    for (k, entry) in archive.sorted().iter().enumerate() {
        PolicySpec::new(entry.beta.clone(), Fulfillment::NearOptimal).save(dir.join(format!("policy_{k:03}.json")))?;
        let mut row: Vec<String> = entry.beta.iter().map(f64::to_string).collect();
        row.extend([entry.f, entry.g, entry.hypervolume].map(|v| v.to_string()));
        rows.push(row);
    }
    write_records(&dir.join("pareto.csv"), &header, &rows)
}

fn tierify(args: TierifyArgs) -> CliResult {
    let ctx = Context::load(&args.eval)?;
    let policy = ctx.load_policy(&args.policy)?;
    let mut tiered = ctx.tierify(&policy)?;
    tiered.local_first = args.local_first;
    tiered.save(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn oracle(args: OracleArgs) -> CliResult {
    let instance = SmallInstance::load(&args.instance)?;
    let report = oracles::evaluate(&instance)?;
    println!("V_1={}", report.dp_value);
    println!("LP={}", report.lp_value);
    println!("H_1={}", report.approx_value);
    println!("R_1={}", report.policy_value);
    println!("R_1/V_1={}", report.policy_ratio());
    println!("H_1/LP={}", report.approx_ratio());
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    policy: String,
    f: f64,
    g: f64,
    #[serde(rename = "g_Nash")]
    g_nash: f64,
    rejected_holds: f64,
}

fn compare(args: CompareArgs) -> CliResult {
    let ctx = Context::load(&args.eval)?;
    let n = ctx.scenario.branch_count();
    let mut runs: Vec<(String, PolicySpec)> = Vec::new();
    if args.policies.is_empty() {
        let balanced = match &args.balanced {
            Some(path) => ctx.load_policy(path)?.beta,
            None => vec![0.5; n],
        };
        let balanced_near = PolicySpec::new(balanced, Fulfillment::NearOptimal);
        let zero_near = PolicySpec::uniform(n, 0.0, Fulfillment::NearOptimal);
        let balanced_tiered = ctx.tierify(&balanced_near)?;
        // same tiers, reserves removed
        let mut zero_tiered = balanced_tiered.clone();
        zero_tiered.beta = vec![0.0; n];
        runs.push(("beta0_random".into(), PolicySpec::uniform(n, 0.0, Fulfillment::RandomAvailable)));
        runs.push(("beta0_nearopt".into(), zero_near));
        runs.push(("balanced_tiered".into(), balanced_tiered));
        runs.push(("balanced_tiers_beta0".into(), zero_tiered));
    } else {
        if args.policies.len() < 2 {
            return Err(CliError::Usage("compare needs at least two policies".into()));
        }
        for path in &args.policies {
            let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
            runs.push((name, ctx.load_policy(path)?));
        }
    }

    let mut rows = Vec::with_capacity(runs.len());
    for (name, policy) in &runs {
        let (output, evaluation) = ctx.simulate(policy)?;
        rows.push(CompareRow {
            policy: name.clone(),
            f: evaluation.point.f,
            g: evaluation.point.g,
            g_nash: evaluation.point.g_nash,
            rejected_holds: output.metrics.rejected_holds,
        });
    }
    println!("{:<24} {:>10} {:>10} {:>10} {:>14}", "policy", "f", "g", "g_Nash", "rejected_holds");
    for r in &rows {
        println!(
            "{:<24} {:>10.4} {:>10.4} {:>10.4} {:>14.1}",
            r.policy, r.f, r.g, r.g_nash, r.rejected_holds
        );
    }
    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        write_csv(&dir.join("compare.csv"), &rows)?;
    }
    Ok(())
}

fn configure_threads() -> CliResult {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> CliResult {
    configure_threads()?;
    match cli.command {
        Command::GenScenario(a) => gen_scenario(a),
        Command::Baseline(a) => baseline(a),
        Command::Simulate(a) => simulate(a),
        Command::Optimize(a) => optimize(a),
        Command::Tierify(a) => tierify(a),
        Command::Oracle(a) => oracle(a),
        Command::Compare(a) => compare(a),
    }
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let detail: Vec<&str> = text.lines().take_while(|l| !l.starts_with("Usage:")).collect();
            eprintln!("error[UsageError]: {}", one_line(detail.join(" ").trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), one_line(&e.message()));
            ExitCode::FAILURE
        }
    }
}
