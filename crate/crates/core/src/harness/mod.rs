//! Experiment orchestration: config files, method dispatch and benchmark
//! sweeps producing result and trajectory tables.

pub mod plot;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, Policy};
use crate::baselines::{
    plan_bomp, plan_exhaustive, plan_extreme_expressed, plan_extreme_neighbours, plan_pagerank, plan_random,
    Method, Plan, PlanningContext,
};
use crate::environment::{evaluate_plan, Instance, Variant};
use crate::error::{Error, Result};
use crate::io::{ingest_dataset, read_instance_dir, trajectory_rows, write_csv, write_csv_with_header, TrajectoryRow};
use crate::metrics::{Normalization, Trajectory};
use crate::synthgen::{generate_instance, GenConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BudgetSpec {
    Absolute { k: usize },
    Fraction { frac: f64 },
}

impl BudgetSpec {
    pub fn resolve(self, n: usize) -> Result<usize> {
        let k = match self {
            BudgetSpec::Absolute { k } => k,
            BudgetSpec::Fraction { frac } => {
                if !(frac > 0.0 && frac <= 1.0) {
                    return Err(Error::Config(format!("budget fraction {frac} outside (0, 1]")));
                }
                ((frac * n as f64).round() as usize).max(1)
            }
        };
        if k == 0 || k > n {
            return Err(Error::InvalidBudget { k, n });
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub edges: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSource {
    pub count: usize,
    #[serde(default)]
    pub config: GenConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceSources {
    /// Directories in the instance format.
    pub dirs: Vec<PathBuf>,
    /// Edge list plus camp labels, unit costs.
    pub datasets: Vec<DatasetSource>,
    pub generator: Option<GeneratorSource>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Checkpoints {
    pub rl: Option<PathBuf>,
    pub greedy: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Overrides every instance's own budget when set.
    #[serde(default)]
    pub budget: Option<BudgetSpec>,
    /// Overrides every instance's own variant when set.
    #[serde(default)]
    pub variant: Option<Variant>,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub instances: InstanceSources,
    #[serde(default)]
    pub checkpoints: Checkpoints,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let src = &self.instances;
        if src.dirs.is_empty() && src.datasets.is_empty() && src.generator.is_none() {
            return Err(Error::Config("at least one instance source is required".into()));
        }
        if !src.datasets.is_empty() && self.budget.is_none() {
            return Err(Error::Config("datasets need an explicit budget".into()));
        }
        Ok(())
    }

    /// Materialises every instance; relative paths resolve against `base`.
    pub fn load_instances(&self, base: &Path) -> Result<Vec<Instance>> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let mut out = Vec::new();
        for dir in &self.instances.dirs {
            let dir = resolve(dir);
            let mut inst = read_instance_dir(&dir)?;
            if inst.name.is_empty() {
                inst.name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            }
            out.push(inst);
        }
        for d in &self.instances.datasets {
            let ds = ingest_dataset(&resolve(&d.edges), &resolve(&d.labels), d.force)?;
            let n = ds.graph.node_count();
            let variant = self.variant.unwrap_or(Variant::Mi);
            let inst = Instance::new(std::sync::Arc::new(ds.graph), ds.s0, vec![1.0; n], 1, variant)?.with_name(ds.name);
            out.push(inst);
        }
        if let Some(g) = &self.instances.generator {
            let mut rng = ChaCha8Rng::seed_from_u64(g.config.seed);
            for i in 0..g.count {
                out.push(generate_instance(&g.config, &mut rng)?.with_name(format!("gen-{i}")));
            }
        }
        out.into_iter()
            .map(|mut inst| {
                if let Some(v) = self.variant {
                    inst = inst.with_variant(v);
                }
                if let Some(b) = self.budget {
                    let k = b.resolve(inst.node_count())?;
                    inst = inst.with_budget(k)?;
                }
                Ok(inst)
            })
            .collect()
    }
}

/// Training run description: agent hyper-parameters plus the instance
/// distribution episodes are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub version: u32,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub generator: GenConfig,
}

impl TrainSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if spec.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                spec.version
            )));
        }
        spec.agent.validate()?;
        spec.generator.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

/// Loaded learned policies, keyed by method.
#[derive(Debug, Default)]
pub struct Policies {
    pub rl: Option<Policy>,
    pub greedy: Option<Policy>,
}

impl Policies {
    pub fn load(ckpt: &Checkpoints, base: &Path) -> Result<Self> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        Ok(Self {
            rl: ckpt.rl.as_deref().map(|p| Policy::load(&resolve(p))).transpose()?,
            greedy: ckpt.greedy.as_deref().map(|p| Policy::load(&resolve(p))).transpose()?,
        })
    }
}

/// Runs one planner. `z0` must be the settled state of the untouched
/// instance; `seed` only matters for randomised planners.
pub fn make_plan(
    method: Method,
    inst: &Instance,
    z0: &[f64],
    seed: u64,
    policies: &Policies,
    mode: Normalization,
) -> Result<Plan> {
    let ctx = PlanningContext::new(inst, z0);
    let missing = |m: Method| Error::Config(format!("method {m} needs a checkpoint"));
    match method {
        Method::Random => plan_random(&ctx, &mut ChaCha8Rng::seed_from_u64(seed)),
        Method::Pagerank => plan_pagerank(&ctx),
        Method::ExtremeExpressed => plan_extreme_expressed(&ctx),
        Method::ExtremeNeighbours => plan_extreme_neighbours(&ctx),
        Method::Bomp => plan_bomp(&ctx),
        Method::Exhaustive => plan_exhaustive(inst, inst.budget, mode).map(|(p, _)| p),
        Method::PacifierRl => policies.rl.as_ref().ok_or_else(|| missing(method))?.deploy(inst, inst.budget),
        Method::PacifierGreedy => policies
            .greedy
            .as_ref()
            .ok_or_else(|| missing(method))?
            .deploy(inst, inst.budget),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub anp: f64,
    pub final_pol: f64,
    pub wall_time_ms: u64,
}

impl ResultRow {
    pub const HEADER: [&'static str; 8] = ["dataset", "method", "seed", "n", "k", "anp", "final_pol", "wall_time_ms"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub error: String,
}

/// One finished (instance, method, seed) run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub row: ResultRow,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub runs: Vec<RunRecord>,
    pub errors: Vec<ErrorRow>,
}

impl BenchReport {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }
}

/// Plans and evaluates every (instance, method, seed) triple.
///
/// Failures are recorded per row and never stop the sweep. Wall time is
/// only measured when `timing` is set, which keeps the tables reproducible.
pub fn run_benchmark(
    instances: &[Instance],
    methods: &[Method],
    seeds: &[u64],
    policies: &Policies,
    mode: Normalization,
    timing: bool,
) -> BenchReport {
    let z0s: Vec<Result<Vec<f64>>> = instances.par_iter().map(|i| i.initial_settled()).collect();
    let mut jobs = Vec::new();
    for (ii, _) in instances.iter().enumerate() {
        for &m in methods {
            for &s in seeds {
                jobs.push((ii, m, s));
            }
        }
    }
    let results: Vec<std::result::Result<RunRecord, ErrorRow>> = jobs
        .par_iter()
        .map(|&(ii, method, seed)| {
            let inst = &instances[ii];
            let fail = |e: Error| ErrorRow {
                dataset: inst.name.clone(),
                method: method.to_string(),
                seed,
                error: e.to_string(),
            };
            let z0 = z0s[ii].as_ref().map_err(|e| fail(Error::NumericalFailure(e.to_string())))?;
            let start = Instant::now();
            let plan = make_plan(method, inst, z0, seed, policies, mode).map_err(fail)?;
            let elapsed = start.elapsed().as_millis() as u64;
            let trajectory = evaluate_plan(inst, &plan.actions, mode).map_err(fail)?;
            Ok(RunRecord {
                row: ResultRow {
                    dataset: inst.name.clone(),
                    method: method.to_string(),
                    seed,
                    n: inst.node_count(),
                    k: plan.actions.len(),
                    anp: trajectory.anp,
                    final_pol: trajectory.final_pol(),
                    wall_time_ms: if timing { elapsed } else { 0 },
                },
                trajectory,
            })
        })
        .collect();
    let mut report = BenchReport::default();
    for r in results {
        match r {
            Ok(run) => report.runs.push(run),
            Err(e) => report.errors.push(e),
        }
    }
    report
}

/// File-name-safe version of a label.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub fn trajectory_file_name(dataset: &str, method: &str, seed: u64) -> String {
    format!("{}__{}__s{seed}.csv", slug(dataset), slug(method))
}

/// Writes `results.csv`, `errors.csv` (only when something failed) and one
/// trajectory table per run under `trajectories/`.
pub fn write_report(out_dir: &Path, report: &BenchReport) -> Result<()> {
    fs::create_dir_all(out_dir.join("trajectories"))?;
    write_csv_with_header(&out_dir.join("results.csv"), &ResultRow::HEADER, &report.rows())?;
    let errors = out_dir.join("errors.csv");
    if report.errors.is_empty() {
        if errors.exists() {
            fs::remove_file(&errors)?;
        }
    } else {
        write_csv(&errors, &report.errors)?;
    }
    for run in &report.runs {
        let r = &run.row;
        let path = out_dir
            .join("trajectories")
            .join(trajectory_file_name(&r.dataset, &r.method, r.seed));
        write_csv(&path, &trajectory_rows(&run.trajectory))?;
    }
    Ok(())
}

/// Reads the trajectory tables that belong to `rows`.
pub fn read_trajectories(out_dir: &Path, rows: &[ResultRow]) -> Result<HashMap<(String, String, u64), Vec<TrajectoryRow>>> {
    let mut out = HashMap::new();
    for r in rows {
        let path = out_dir
            .join("trajectories")
            .join(trajectory_file_name(&r.dataset, &r.method, r.seed));
        if path.exists() {
            out.insert((r.dataset.clone(), r.method.clone(), r.seed), crate::io::read_csv(&path)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::read_csv;
    use crate::synthgen::GenConfig;

    fn config(methods: &str) -> String {
        format!(
            r#"
version = 1
methods = [{methods}]
seeds = [3]

[instances.generator]
count = 1
[instances.generator.config]
n_min = 20
n_max = 20
seed = 4
"#
        )
    }

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::from_toml(&config(r#""random", "bomp""#)).unwrap();
        assert_eq!(cfg.methods, vec![Method::Random, Method::Bomp]);
        assert_eq!(cfg.instances.generator.as_ref().unwrap().config.n_min, 20);
        let unknown = config(r#""random""#) + "\nmystery = 1\n";
        assert!(matches!(ExperimentConfig::from_toml(&unknown), Err(Error::Config(_))));
        let none = "version = 1\nmethods = []\n[instances.generator]\ncount = 1\n";
        assert!(matches!(ExperimentConfig::from_toml(none), Err(Error::Config(_))));
        let no_src = "version = 1\nmethods = [\"random\"]\n";
        assert!(matches!(ExperimentConfig::from_toml(no_src), Err(Error::Config(_))));
        let wrong = config(r#""random""#).replace("version = 1", "version = 9");
        assert!(matches!(ExperimentConfig::from_toml(&wrong), Err(Error::Config(_))));
    }

    #[test]
    fn budgets() {
        assert_eq!(BudgetSpec::Fraction { frac: 0.1 }.resolve(50).unwrap(), 5);
        assert_eq!(BudgetSpec::Fraction { frac: 0.01 }.resolve(20).unwrap(), 1);
        assert!(BudgetSpec::Absolute { k: 21 }.resolve(20).is_err());
        assert!(BudgetSpec::Fraction { frac: 1.5 }.resolve(20).is_err());
    }

    #[test]
    fn one_instance_two_methods_two_rows() {
        let cfg = ExperimentConfig::from_toml(&config(r#""random", "bomp""#)).unwrap();
        let insts = cfg.load_instances(Path::new(".")).unwrap();
        let report = run_benchmark(&insts, &cfg.methods, &cfg.seeds, &Policies::default(), cfg.normalization, false);
        assert_eq!(report.runs.len(), 2);
        assert!(report.errors.is_empty());
        assert!(report.runs.iter().all(|r| r.row.anp >= 0.0 && r.row.wall_time_ms == 0));
    }

    #[test]
    fn failures_stay_on_their_row() {
        let cfg = ExperimentConfig::from_toml(&config(r#""exhaustive", "pagerank", "pacifier-rl""#)).unwrap();
        let insts = cfg.load_instances(Path::new(".")).unwrap();
        let report = run_benchmark(&insts, &cfg.methods, &cfg.seeds, &Policies::default(), cfg.normalization, false);
        assert_eq!(report.runs.len(), 1);
        assert_eq!(report.runs[0].row.method, "pagerank");
        assert_eq!(report.errors.len(), 2);
        assert!(report.errors[0].error.contains("refused"));
    }

    #[test]
    fn reports_are_reproducible() {
        let cfg = ExperimentConfig::from_toml(&config(r#""random", "extreme-neighbours""#)).unwrap();
        let insts = cfg.load_instances(Path::new(".")).unwrap();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let report = run_benchmark(&insts, &cfg.methods, &cfg.seeds, &Policies::default(), cfg.normalization, false);
            write_report(d.path(), &report).unwrap();
        }
        let a = fs::read(dirs[0].path().join("results.csv")).unwrap();
        let b = fs::read(dirs[1].path().join("results.csv")).unwrap();
        assert_eq!(a, b);
        let rows: Vec<ResultRow> = read_csv(&dirs[0].path().join("results.csv")).unwrap();
        assert_eq!(rows.len(), 2);
        let trajs = read_trajectories(dirs[0].path(), &rows).unwrap();
        assert_eq!(trajs.len(), 2);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("dataset,method,seed,n,k,anp,final_pol,wall_time_ms\n"));
    }

    #[test]
    fn overrides_apply_to_every_instance() {
        let mut cfg = ExperimentConfig::from_toml(&config(r#""random""#)).unwrap();
        cfg.variant = Some(Variant::Me);
        cfg.budget = Some(BudgetSpec::Absolute { k: 3 });
        cfg.instances.generator = Some(GeneratorSource {
            count: 3,
            config: GenConfig::default(),
        });
        let insts = cfg.load_instances(Path::new(".")).unwrap();
        assert_eq!(insts.len(), 3);
        assert!(insts.iter().all(|i| i.variant == Variant::Me && i.budget == 3));
    }
}
