use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use depolar_core::agent::{train::log_to_csv, Policy, TrainVariant, Trainer};
use depolar_core::harness::plot::emit_plots;
use depolar_core::harness::{
    make_plan, read_trajectories, run_benchmark, write_report, ExperimentConfig, Policies, ResultRow, TrainSpec,
};
use depolar_core::io::{ingest_dataset, read_csv, read_instance_dir, read_plan, trajectory_rows, write_csv, write_instance_dir, write_plan, write_plan_to};
use depolar_core::metrics::{camps_from_opinions, dataset_stats};
use depolar_core::synthgen::{generate_instance, CostMode, OpinionMode};
use depolar_core::{Error, GenConfig, Method, Normalization, Variant};

const THREADS_VAR: &str = "DEPOLAR_THREADS";

#[derive(Parser)]
#[command(name = "depolar", version, about = "Plan and evaluate opinion-moderation interventions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic two-camp instances as instance directories.
    Generate(GenerateArgs),
    /// Print structural statistics of an instance or labelled dataset as CSV.
    Stats(StatsArgs),
    /// Plan an intervention sequence for one instance.
    Plan(PlanArgs),
    /// Train a policy and write a checkpoint plus a CSV log.
    Train(TrainArgs),
    /// Replay plans and write per-step trajectories and an ANP summary.
    Evaluate(EvaluateArgs),
    /// Run a methods x instances x seeds sweep from a config file.
    Bench(BenchArgs),
    /// Render SVG charts from a bench output directory.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    PerNode,
    Raw,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::PerNode => Normalization::PerNode,
            NormArg::Raw => Normalization::Raw,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OpinionArg {
    Binary,
    Continuous,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    Unit,
    Uniform,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 18)]
    n_min: usize,
    #[arg(long, default_value_t = 50)]
    n_max: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = OpinionArg::Binary)]
    opinion_mode: OpinionArg,
    #[arg(long, value_enum, default_value_t = CostArg::Uniform)]
    cost_mode: CostArg,
    #[arg(long, default_value_t = 0.5)]
    cost_low: f64,
    #[arg(long, default_value_t = 1.5)]
    cost_high: f64,
    #[arg(long, default_value = "mi")]
    variant: Variant,
    /// Fixed budget for every instance instead of a sampled fraction of n.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long, conflicts_with_all = ["edges", "labels"])]
    instance: Option<PathBuf>,
    #[arg(long, requires = "labels")]
    edges: Option<PathBuf>,
    #[arg(long, requires = "edges")]
    labels: Option<PathBuf>,
    /// Accept self-loops (dropped) and disconnected graphs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    method: Method,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides the instance budget.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = NormArg::PerNode)]
    normalization: NormArg,
    /// Plan CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML with `version`, `[agent]` and `[generator]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long, default_value = "policy.ckpt")]
    out: PathBuf,
    #[arg(long, default_value = "train_log.csv")]
    log: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Rl,
    Greedy,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    instance: PathBuf,
    /// One or more plan CSV files.
    #[arg(long, required = true, num_args = 1..)]
    plan: Vec<PathBuf>,
    /// Overrides the instance budget.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, value_enum, default_value_t = NormArg::PerNode)]
    normalization: NormArg,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall time per run (makes results.csv machine dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory holding results.csv and trajectories/.
    #[arg(long)]
    results: PathBuf,
    /// Defaults to `<results>/plots`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A run that finished but recorded failures.
#[derive(Debug)]
struct Partial(usize);

impl std::fmt::Display for Partial {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} runs failed", self.0)
    }
}

impl std::error::Error for Partial {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Partial>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::Ingest { .. }
            | Error::InvalidInput(_)
            | Error::InvalidBudget { .. }
            | Error::Io(_)
            | Error::Checkpoint(_),
        ) => 2,
        _ => 1,
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = configure_threads().and_then(|_| match cli.command {
        Command::Generate(a) => generate(a),
        Command::Stats(a) => stats(a),
        Command::Plan(a) => plan(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => bench(a),
        Command::Plot(a) => plot(a),
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let cfg = GenConfig {
        n_min: a.n_min,
        n_max: a.n_max,
        opinion_mode: match a.opinion_mode {
            OpinionArg::Binary => OpinionMode::Binary,
            OpinionArg::Continuous => OpinionMode::Continuous,
        },
        cost_mode: match a.cost_mode {
            CostArg::Unit => CostMode::Unit,
            CostArg::Uniform => CostMode::Uniform {
                low: a.cost_low,
                high: a.cost_high,
            },
        },
        variant: a.variant,
        seed: a.seed,
        ..GenConfig::default()
    };
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let width = a.count.saturating_sub(1).to_string().len().max(3);
    for i in 0..a.count {
        let name = format!("inst-{i:0width$}");
        let mut inst = generate_instance(&cfg, &mut rng)?.with_name(name.clone());
        if let Some(k) = a.budget {
            inst = inst.with_budget(k)?;
        }
        write_instance_dir(&a.out.join(&name), &inst)?;
    }
    eprintln!("wrote {} instances to {}", a.count, a.out.display());
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let s = if let Some(dir) = a.instance {
        let inst = read_instance_dir(&dir)?;
        let name = if inst.name.is_empty() { dir.display().to_string() } else { inst.name.clone() };
        dataset_stats(&name, &inst.graph, &camps_from_opinions(&inst.s0))?
    } else {
        let (Some(e), Some(l)) = (a.edges, a.labels) else {
            return Err(Error::Config("give --instance or both --edges and --labels".into()).into());
        };
        let ds = ingest_dataset(&e, &l, a.force)?;
        for w in &ds.warnings {
            eprintln!("warning: {w}");
        }
        dataset_stats(&ds.name, &ds.graph, &ds.camps)?
    };
    println!("{}", depolar_core::DatasetStats::CSV_HEADER);
    println!("{}", s.csv_row());
    Ok(())
}

fn policies_for(method: Method, checkpoint: Option<&Path>) -> Result<Policies> {
    let mut p = Policies::default();
    if method.is_learned() {
        let path = checkpoint.ok_or_else(|| Error::Config(format!("method {method} needs --checkpoint")))?;
        let policy = Policy::load(path).with_context(|| format!("loading {}", path.display()))?;
        match method {
            Method::PacifierRl => p.rl = Some(policy),
            _ => p.greedy = Some(policy),
        }
    }
    Ok(p)
}

fn plan(a: PlanArgs) -> Result<()> {
    let mut inst = read_instance_dir(&a.instance)?;
    if let Some(k) = a.budget {
        inst = inst.with_budget(k)?;
    }
    let policies = policies_for(a.method, a.checkpoint.as_deref())?;
    let z0 = inst.initial_settled()?;
    let plan = make_plan(a.method, &inst, &z0, a.seed, &policies, a.normalization.into())?;
    match a.out {
        Some(path) => write_plan(&path, &plan.actions, &plan.scores)?,
        None => write_plan_to(std::io::stdout().lock(), &plan.actions, &plan.scores)?,
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => TrainSpec::load(p)?,
        None => TrainSpec::from_toml("version = 1")?,
    };
    if let Some(s) = a.seed {
        spec.agent.seed = s;
    }
    if let Some(e) = a.episodes {
        spec.agent.episodes = e;
    }
    if let Some(v) = a.variant {
        spec.agent.variant = match v {
            VariantArg::Rl => TrainVariant::Rl,
            VariantArg::Greedy => TrainVariant::Greedy,
        };
    }
    let mut trainer = Trainer::new(spec.agent, spec.generator)?;
    let outcome = trainer.run()?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    outcome.policy.save(&a.out)?;
    fs::write(&a.log, log_to_csv(&outcome.log))?;
    if let Some(v) = outcome.log.iter().rev().find_map(|r| r.validation_anp) {
        eprintln!("final validation ANP {v:.6}");
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut inst = read_instance_dir(&a.instance)?;
    if let Some(k) = a.budget {
        inst = inst.with_budget(k)?;
    }
    fs::create_dir_all(&a.out)?;
    let mut summary = String::from("plan,k,anp,final_pol\n");
    for p in &a.plan {
        let actions = read_plan(p)?;
        let traj = depolar_core::evaluate_plan(&inst, &actions, a.normalization.into())?;
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "plan".into());
        write_csv(&a.out.join(format!("{stem}.trajectory.csv")), &trajectory_rows(&traj))?;
        summary.push_str(&format!("{stem},{},{},{}\n", actions.len(), traj.anp, traj.final_pol()));
    }
    fs::write(a.out.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let out = a
        .out
        .or_else(|| cfg.output_dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from("bench_out"));
    let instances = cfg.load_instances(base)?;
    let policies = Policies::load(&cfg.checkpoints, base)?;
    let report = run_benchmark(&instances, &cfg.methods, &cfg.seeds, &policies, cfg.normalization, a.timing);
    write_report(&out, &report)?;
    eprintln!(
        "{} runs written to {}, {} failed",
        report.runs.len(),
        out.display(),
        report.errors.len()
    );
    for e in &report.errors {
        eprintln!("  {} / {} / seed {}: {}", e.dataset, e.method, e.seed, e.error);
    }
    if report.errors.is_empty() {
        Ok(())
    } else {
        Err(Partial(report.errors.len()).into())
    }
}

fn plot(a: PlotArgs) -> Result<()> {
    let rows: Vec<ResultRow> = read_csv(&a.results.join("results.csv"))?;
    let trajectories = read_trajectories(&a.results, &rows)?;
    let out = a.out.unwrap_or_else(|| a.results.join("plots"));
    let res = emit_plots(&rows, &trajectories, &out)?;
    for w in &res.warnings {
        eprintln!("warning: {w}");
    }
    for f in &res.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}
