//! Command-line orchestration: config loading, per-experiment runners, artifacts and manifests.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::child_seed;
use crate::burgers::{generate_word, reduce_and_track, scaling_estimates};
use crate::error::SimError;
use crate::exploration::{
    assign_order_variables, color_order_matrix, explore_branching_with, extract_loops_with, write_tree_json, ExplorationConfig,
    ExtractedLoop,
};
use crate::lqg::{embed_disk, sample_quantum_disk, DiskConfig};
use crate::mating::{
    ancestor_free_times, cone_transform, local_time_and_jumps, sample_cone_excursion, sample_half_plane_excursion, AncestorFreeSet,
    ConeSamplerConfig, JumpLedger, LedgerConfig, PlanarPath,
};
use crate::radial_sle::{simulate_theta, uniform_cle4_driving, ThetaParams};
use crate::verify::{run_suite, Suite, SuiteReport, VerifyConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("checks failed: {0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Sim(SimError::InvalidParameter(_)) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "motsim", version, about = "Simulate and verify CLE, LQG and mating-of-trees objects")]
pub struct Cli {
    /// TOML run config with per-experiment sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true, env = "MOTSIM_OUT_DIR", default_value = "motsim-out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Skip SVG output.
    #[arg(long, global = true)]
    pub no_plot: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reflected theta process of radial SLE_k'(k'-6).
    SimulateTheta {
        #[arg(long)]
        kappa_prime: Option<f64>,
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
    },
    /// Uniform CLE_4 exploration driver with excursions cut at 2^-n.
    SimulateCle4 {
        #[arg(long)]
        n: Option<i32>,
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
    },
    /// Branching exploration towards a set of targets.
    Explore {
        #[arg(long)]
        kappa_prime: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Target as `re,im`; repeat for several.
        #[arg(long = "target", value_parser = parse_point)]
        targets: Vec<[f64; 2]>,
    },
    /// Unit-boundary quantum disk on the strip.
    SimulateDisk {
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        ny: Option<usize>,
    },
    /// Half-plane (epsilon = 0) or cone excursion with its ancestor-free set and jump ledger.
    SimulateExcursion(ExcursionArgs),
    /// Hamburger-cheeseburger word, its reduction and scaling.
    SimulateBurgers {
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run verification suites and write a JSON report.
    Verify {
        #[arg(long, value_enum, required = true)]
        suite: Vec<SuiteArg>,
    },
    /// SVG of the first nested loops around a target.
    RenderLoops {
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        kappa_prime: Option<f64>,
        #[arg(long, value_parser = parse_point)]
        target: Option<[f64; 2]>,
    },
    /// SVG of an excursion with its ancestor-free set and ledger.
    RenderExcursion(ExcursionArgs),
    /// Re-run from a manifest.json.
    Replay { manifest: PathBuf },
}

#[derive(Debug, Args)]
pub struct ExcursionArgs {
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SuiteArg {
    All,
    Loewner,
    Modulus,
    Uniformization,
    Tau0,
    Order,
    Disk,
    MatingVariance,
    MatingPpp,
    Ledger,
    Burgers,
    Calibration,
}

impl SuiteArg {
    fn expand(self) -> Vec<Suite> {
        use SuiteArg as A;
        let s = match self {
            A::All => return Suite::ALL.to_vec(),
            A::Loewner => Suite::Loewner,
            A::Modulus => Suite::Modulus,
            A::Uniformization => Suite::Uniformization,
            A::Tau0 => Suite::Tau0,
            A::Order => Suite::Order,
            A::Disk => Suite::Disk,
            A::MatingVariance => Suite::MatingVariance,
            A::MatingPpp => Suite::MatingPpp,
            A::Ledger => Suite::Ledger,
            A::Burgers => Suite::Burgers,
            A::Calibration => Suite::Calibration,
        };
        vec![s]
    }
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected re,im, got {s:?}"))?;
    let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    Ok([p(a)?, p(b)?])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Cle4Config {
    pub n: i32,
    pub t_max: f64,
    pub step: f64,
}

impl Default for Cle4Config {
    fn default() -> Self {
        Self { n: 8, t_max: 400.0, step: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExploreConfig {
    pub kappa_prime: f64,
    pub horizon: f64,
    pub targets: Vec<[f64; 2]>,
    pub exploration: ExplorationConfig,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            kappa_prime: 4.0,
            horizon: 40.0,
            targets: vec![[0.3, 0.0], [-0.3, 0.0], [0.0, 0.5]],
            exploration: ExplorationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiskRunConfig {
    pub gamma: f64,
    /// Also push the field forward to the unit disk.
    pub embed: bool,
    pub disk: DiskConfig,
}

impl Default for DiskRunConfig {
    fn default() -> Self {
        Self { gamma: 2.0, embed: true, disk: DiskConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcursionConfig {
    pub epsilon: f64,
    /// Grid step of the half-plane excursion; cone excursions use `cone.step`.
    pub step: f64,
    /// Reference time as a fraction of the excursion duration.
    pub reference_fraction: f64,
    pub cone: ConeSamplerConfig,
    pub ledger: LedgerConfig,
}

impl Default for ExcursionConfig {
    fn default() -> Self {
        Self { epsilon: 0.0, step: 1e-5, reference_fraction: 0.5, cone: ConeSamplerConfig::default(), ledger: LedgerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurgersRunConfig {
    pub p: f64,
    pub n: usize,
    /// Trials for the scaling estimate; 0 skips it.
    pub trials: usize,
}

impl Default for BurgersRunConfig {
    fn default() -> Self {
        Self { p: 0.25, n: 10_000, trials: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopsConfig {
    pub kappa_prime: f64,
    pub target: [f64; 2],
    pub levels: usize,
    pub horizon: f64,
    pub points_per_loop: usize,
    pub exploration: ExplorationConfig,
}

impl Default for LoopsConfig {
    fn default() -> Self {
        Self {
            kappa_prime: 6.0,
            target: [0.0, 0.0],
            levels: 3,
            horizon: 400.0,
            points_per_loop: 256,
            exploration: ExplorationConfig { loops: true, ..ExplorationConfig::default() },
        }
    }
}

/// The resolved configuration of one run: config file first, then command-line flags.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub theta: ThetaParams,
    pub cle4: Cle4Config,
    pub explore: ExploreConfig,
    pub disk: DiskRunConfig,
    pub excursion: ExcursionConfig,
    pub burgers: BurgersRunConfig,
    pub loops: LoopsConfig,
    pub verify: VerifyConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::from_toml(&fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    SimulateTheta,
    SimulateCle4,
    Explore,
    SimulateDisk,
    SimulateExcursion,
    SimulateBurgers,
    Verify { suites: Vec<Suite> },
    RenderLoops,
    RenderExcursion,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub task: Task,
    pub plot: bool,
    pub config: RunConfig,
    pub artifacts: Vec<Artifact>,
}

/// Folds the subcommand's flags into `cfg` and returns the task to run.
fn resolve(cmd: Command, cfg: &mut RunConfig) -> CliResult<Task> {
    fn set<T>(slot: &mut T, v: Option<T>) {
        if let Some(v) = v {
            *slot = v;
        }
    }
    Ok(match cmd {
        Command::SimulateTheta { kappa_prime, x0, t_max, step } => {
            set(&mut cfg.theta.kappa_prime, kappa_prime);
            set(&mut cfg.theta.x0, x0);
            set(&mut cfg.theta.t_max, t_max);
            set(&mut cfg.theta.step, step);
            Task::SimulateTheta
        }
        Command::SimulateCle4 { n, t_max, step } => {
            set(&mut cfg.cle4.n, n);
            set(&mut cfg.cle4.t_max, t_max);
            set(&mut cfg.cle4.step, step);
            Task::SimulateCle4
        }
        Command::Explore { kappa_prime, horizon, targets } => {
            set(&mut cfg.explore.kappa_prime, kappa_prime);
            set(&mut cfg.explore.horizon, horizon);
            if !targets.is_empty() {
                cfg.explore.targets = targets;
            }
            Task::Explore
        }
        Command::SimulateDisk { gamma, nx, ny } => {
            set(&mut cfg.disk.gamma, gamma);
            set(&mut cfg.disk.disk.nx, nx);
            set(&mut cfg.disk.disk.ny, ny);
            Task::SimulateDisk
        }
        Command::SimulateExcursion(a) => {
            set(&mut cfg.excursion.epsilon, a.epsilon);
            set(&mut cfg.excursion.step, a.step);
            Task::SimulateExcursion
        }
        Command::RenderExcursion(a) => {
            set(&mut cfg.excursion.epsilon, a.epsilon);
            set(&mut cfg.excursion.step, a.step);
            Task::RenderExcursion
        }
        Command::SimulateBurgers { p, n, trials } => {
            set(&mut cfg.burgers.p, p);
            set(&mut cfg.burgers.n, n);
            set(&mut cfg.burgers.trials, trials);
            Task::SimulateBurgers
        }
        Command::Verify { suite } => {
            let mut suites: Vec<Suite> = Vec::new();
            for s in suite.into_iter().flat_map(SuiteArg::expand) {
                if !suites.contains(&s) {
                    suites.push(s);
                }
            }
            Task::Verify { suites }
        }
        Command::RenderLoops { levels, kappa_prime, target } => {
            set(&mut cfg.loops.levels, levels);
            set(&mut cfg.loops.kappa_prime, kappa_prime);
            set(&mut cfg.loops.target, target);
            Task::RenderLoops
        }
        Command::Replay { .. } => return Err(CliError::Config("replay cannot be nested".into())),
    })
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    match run_cli(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("motsim: {e}");
            e.exit_code()
        }
    }
}

pub fn run_cli(cli: Cli) -> CliResult<()> {
    init_workers(cli.workers)?;
    let (task, cfg, plot) = match cli.command {
        Command::Replay { manifest } => {
            let text = fs::read_to_string(&manifest).map_err(|e| CliError::Config(format!("{}: {e}", manifest.display())))?;
            let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
            (m.task, m.config, m.plot)
        }
        cmd => {
            let mut cfg = RunConfig::load(cli.config.as_deref())?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let task = resolve(cmd, &mut cfg)?;
            (task, cfg, !cli.no_plot)
        }
    };
    execute(&task, &cfg, plot, &cli.out)
}

fn init_workers(workers: Option<usize>) -> CliResult<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = workers {
        // a second call in the same process keeps the first pool, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
    Ok(())
}

/// Runs `task` and writes its artifacts and `manifest.json` into `out`.
pub fn execute(task: &Task, cfg: &RunConfig, plot: bool, out: &Path) -> CliResult<()> {
    fs::create_dir_all(out)?;
    let mut sink = Sink { dir: out, artifacts: Vec::new() };
    let outcome = run_task(task, cfg, plot, &mut sink);
    let manifest = Manifest { version: VERSION.into(), task: task.clone(), plot, config: cfg.clone(), artifacts: sink.artifacts };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(out.join("manifest.json"), text + "\n")?;
    outcome
}

struct Sink<'a> {
    dir: &'a Path,
    artifacts: Vec<Artifact>,
}

impl Sink<'_> {
    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> CliResult<()> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(fs::File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        drop(w);
        self.artifacts.push(Artifact { path: name.into(), bytes: fs::metadata(&path)?.len() });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        self.write(name, |w| writeln!(w, "{text}"))
    }
}

fn run_task(task: &Task, cfg: &RunConfig, plot: bool, sink: &mut Sink) -> CliResult<()> {
    let seed = cfg.seed;
    match task {
        Task::SimulateTheta => {
            let path = simulate_theta(&cfg.theta, seed)?;
            sink.write("theta.csv", |w| {
                writeln!(w, "t,theta,zero_touch")?;
                for (k, (v, z)) in path.values.iter().zip(&path.zero_touch).enumerate() {
                    writeln!(w, "{},{},{}", k as f64 * path.step, v, u8::from(*z))?;
                }
                Ok(())
            })?;
            sink.json(
                "theta_summary.json",
                &serde_json::json!({ "kappa_prime": path.kappa_prime, "duration": path.duration(), "tau0": path.tau0 }),
            )
        }
        Task::SimulateCle4 => {
            let c = &cfg.cle4;
            let (dec, roots) = uniform_cle4_driving(c.n, c.t_max, c.step, seed)?;
            sink.write("excursions.csv", |w| {
                writeln!(w, "index,start_time,end_time,max_height,reached_top,root_angle")?;
                for (i, r) in dec.records.iter().enumerate() {
                    let root = roots.get(i).copied().unwrap_or(f64::NAN);
                    writeln!(w, "{i},{},{},{},{},{root}", r.start_time, r.end_time, r.max_height, u8::from(r.reached_top))?;
                }
                Ok(())
            })?;
            sink.write("driving.csv", |w| {
                writeln!(w, "t,angle")?;
                for (k, a) in dec.cut_driving.angles.iter().enumerate() {
                    writeln!(w, "{},{a}", k as f64 * dec.cut_driving.step)?;
                }
                Ok(())
            })?;
            sink.json(
                "cle4_summary.json",
                &serde_json::json!({ "n": c.n, "excursions": dec.records.len(), "tau0": dec.cut_duration(), "stop_index": dec.stop_index }),
            )
        }
        Task::Explore => {
            let e = &cfg.explore;
            let targets: Vec<C> = e.targets.iter().map(|&[x, y]| C::new(x, y)).collect();
            let exp = explore_branching_with(e.kappa_prime, &targets, seed, e.horizon, &e.exploration)?;
            let order =
                if e.kappa_prime == 4.0 { Some(assign_order_variables(&exp, child_seed(seed, 1))?) } else { color_order_matrix(&exp).ok() };
            sink.write("tree.json", |w| write_tree_json(&exp, order.as_ref(), w))
        }
        Task::SimulateDisk => {
            let d = &cfg.disk;
            let s = sample_quantum_disk(d.gamma, &d.disk, seed)?;
            let f = &s.field;
            sink.write("field.csv", |w| {
                writeln!(w, "ix,iy,value,mass")?;
                for iy in 0..f.ny {
                    for ix in 0..f.nx {
                        let k = iy * f.nx + ix;
                        writeln!(w, "{ix},{iy},{},{}", f.values[k], s.bulk.cell_masses[k])?;
                    }
                }
                Ok(())
            })?;
            let mut masses = s.bulk.cell_masses.clone();
            masses.sort_by(f64::total_cmp);
            let q = |p: f64| masses[((masses.len() - 1) as f64 * p).round() as usize];
            let mut summary = serde_json::json!({
                "gamma": s.gamma, "nx": f.nx, "ny": f.ny, "K": f.half_width, "delta": f.delta,
                "boundary_length": s.boundary_length, "raw_boundary_length": s.raw_boundary_length,
                "area": s.area, "shift": s.shift, "importance_weight": s.importance_weight,
                "bulk": { "total": s.bulk.total, "floored": s.bulk.floored,
                          "cell_quantiles": { "0.5": q(0.5), "0.9": q(0.9), "0.99": q(0.99), "1": q(1.0) } }
            });
            if d.embed {
                let emb = embed_disk(&s, child_seed(seed, 1), d.disk.disk_resolution)?;
                let g = &emb.field;
                sink.write("disk_field.csv", |w| {
                    writeln!(w, "ix,iy,value")?;
                    for iy in 0..g.ny {
                        for ix in 0..g.nx {
                            writeln!(w, "{ix},{iy},{}", g.values[iy * g.nx + ix])?;
                        }
                    }
                    Ok(())
                })?;
                summary["embedding"] =
                    serde_json::json!({ "z0": [emb.z0.re, emb.z0.im], "total_mass": emb.total_mass(), "resamples": emb.resamples });
            }
            sink.json("disk_summary.json", &summary)
        }
        Task::SimulateExcursion | Task::RenderExcursion => {
            let (path, set, ledger) = excursion_with_ledger(&cfg.excursion, seed)?;
            if *task == Task::SimulateExcursion {
                sink.write("path.csv", |w| path.write_csv(w))?;
                sink.json("ledger.json", &ledger)?;
            }
            if plot || *task == Task::RenderExcursion {
                let svg = excursion_svg(&path, &set, &ledger);
                sink.write("excursion.svg", |w| w.write_all(svg.as_bytes()))?;
            }
            Ok(())
        }
        Task::SimulateBurgers => {
            let b = &cfg.burgers;
            let word = generate_word(b.p, b.n, seed)?;
            let tr = reduce_and_track(&word);
            sink.write("word.txt", |w| writeln!(w, "{}", word.to_string_compact()))?;
            sink.write("trajectory.csv", |w| {
                writeln!(w, "k,c,d")?;
                for (k, (c, d)) in tr.c_path.iter().zip(&tr.d_path).enumerate() {
                    writeln!(w, "{k},{c},{d}")?;
                }
                Ok(())
            })?;
            let scaling = if b.trials > 0 { Some(scaling_estimates(b.p, b.n, b.trials, child_seed(seed, 1))?) } else { None };
            sink.json(
                "burgers_summary.json",
                &serde_json::json!({ "p": b.p, "n": b.n, "final_c": tr.c_path.last(), "final_d": tr.d_path.last(), "scaling": scaling }),
            )
        }
        Task::Verify { suites } => {
            let reports: Vec<SuiteReport> = suites.iter().map(|&s| run_suite(s, &cfg.verify, seed)).collect::<Result<_, _>>()?;
            let pass = reports.iter().all(|r| r.pass);
            sink.json("report.json", &serde_json::json!({ "pass": pass, "suites": reports }))?;
            for r in &reports {
                for c in &r.checks {
                    println!("{} {}/{}: {}", if c.pass { "PASS" } else { "FAIL" }, r.suite, c.name, c.statistic);
                }
            }
            if pass {
                Ok(())
            } else {
                let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.suite.as_str()).collect();
                Err(CliError::Failed(failed.join(", ")))
            }
        }
        Task::RenderLoops => {
            let l = &cfg.loops;
            let exp = explore_branching_with(l.kappa_prime, &[C::new(l.target[0], l.target[1])], seed, l.horizon, &l.exploration)?;
            let loops = extract_loops_with(&exp, 0, l.levels, l.points_per_loop, 1e-3)?;
            let times: Vec<_> = loops.iter().map(|x| x.times).collect();
            sink.json("loops.json", &times)?;
            let svg = loops_svg(&loops, C::new(l.target[0], l.target[1]));
            sink.write("loops.svg", |w| w.write_all(svg.as_bytes()))
        }
    }
}

/// Samples the configured excursion and its ancestor-free set at the end time.
pub fn excursion_with_ledger(e: &ExcursionConfig, seed: u64) -> CliResult<(PlanarPath, AncestorFreeSet, JumpLedger)> {
    let path = if e.epsilon == 0.0 {
        sample_half_plane_excursion(seed, e.step)?
    } else {
        cone_transform(&sample_cone_excursion(e.epsilon, 0.0, seed, &e.cone)?)?
    };
    let set = ancestor_free_times(&path, e.reference_fraction * path.duration())?;
    let ledger = local_time_and_jumps(&set, &path, &e.ledger)?;
    Ok((path, set, ledger))
}

/// Evenly thinned indices, always keeping the last.
fn thin(n: usize, max: usize) -> impl Iterator<Item = usize> {
    let stride = n.div_ceil(max).max(1);
    (0..n).step_by(stride).chain((!(n - 1).is_multiple_of(stride)).then_some(n - 1))
}

struct Frame2 {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    lo: (f64, f64),
    hi: (f64, f64),
}

impl Frame2 {
    fn new(x0: f64, y0: f64, w: f64, h: f64, xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (a, b) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if b > a {
                (a, b)
            } else {
                (a - 0.5, a + 0.5)
            }
        };
        let (xl, xh) = range(&mut xs.clone());
        let (yl, yh) = range(&mut ys.clone());
        Self { x0, y0, w, h, lo: (xl, yl), hi: (xh, yh) }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.x0 + (x - self.lo.0) / (self.hi.0 - self.lo.0) * self.w,
            self.y0 + self.h - (y - self.lo.1) / (self.hi.1 - self.lo.1) * self.h,
        )
    }

    fn polyline(&self, pts: impl Iterator<Item = (f64, f64)>, style: &str) -> String {
        let mut s = String::from("<polyline fill=\"none\" ");
        s.push_str(style);
        s.push_str(" points=\"");
        for (x, y) in pts {
            let (u, v) = self.map(x, y);
            let _ = write!(s, "{u:.2},{v:.2} ");
        }
        s.push_str("\"/>\n");
        s
    }
}

/// Three panels: the planar trace, both coordinates against time with the ancestor-free set
/// marked, and the jump ledger against local time.
pub fn excursion_svg(path: &PlanarPath, set: &AncestorFreeSet, ledger: &JumpLedger) -> String {
    let n = path.len();
    let idx: Vec<usize> = thin(n, 3000).collect();
    let mut s = String::from("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"900\" height=\"900\" viewBox=\"0 0 900 900\">\n<rect width=\"900\" height=\"900\" fill=\"white\"/>\n");
    let _ = writeln!(
        s,
        "<text x=\"20\" y=\"24\" font-size=\"14\">epsilon = {} duration = {:.4} ancestor-free measure = {:.4}</text>",
        path.epsilon,
        path.duration(),
        set.free_measure()
    );

    let trace = Frame2::new(60.0, 40.0, 380.0, 380.0, idx.iter().map(|&k| path.x[k]), idx.iter().map(|&k| path.y[k]));
    s += &trace.polyline(idx.iter().map(|&k| (path.x[k], path.y[k])), "stroke=\"#444\" stroke-width=\"0.7\"");
    s.push_str("<g fill=\"#c00\">\n");
    for k in thin(n, 3000).filter(|&k| set.free[k.min(set.free.len() - 1)]) {
        let (u, v) = trace.map(path.x[k], path.y[k]);
        let _ = writeln!(s, "<circle cx=\"{u:.2}\" cy=\"{v:.2}\" r=\"1.2\"/>");
    }
    s.push_str("</g>\n");

    let ts =
        Frame2::new(480.0, 40.0, 380.0, 380.0, [path.t[0], path.t[n - 1]].into_iter(), idx.iter().flat_map(|&k| [path.x[k], path.y[k]]));
    s += &ts.polyline(idx.iter().map(|&k| (path.t[k], path.x[k])), "stroke=\"#1f5fbf\" stroke-width=\"0.8\" class=\"A\"");
    s += &ts.polyline(idx.iter().map(|&k| (path.t[k], path.y[k])), "stroke=\"#2a9d3a\" stroke-width=\"0.8\" class=\"B\"");
    s.push_str("<g stroke=\"#c00\" stroke-width=\"1\" class=\"ancestor-free\">\n");
    for iv in &set.intervals {
        let (a, _) = ts.map(iv[0], 0.0);
        let (b, _) = ts.map(iv[1], 0.0);
        let _ = writeln!(s, "<line x1=\"{a:.2}\" y1=\"425\" x2=\"{:.2}\" y2=\"425\"/>", b.max(a + 0.5));
    }
    s.push_str("</g>\n");

    let mut cum = 0.0;
    let steps: Vec<(f64, f64)> = std::iter::once((0.0, 0.0))
        .chain(ledger.jumps.iter().map(|j| {
            cum += f64::from(j.sign) * j.magnitude;
            (j.local_time, cum)
        }))
        .collect();
    let lt_max = ledger.local_time.max(steps.last().map_or(0.0, |p| p.0));
    let lf = Frame2::new(60.0, 480.0, 800.0, 380.0, steps.iter().map(|p| p.0).chain([lt_max]), steps.iter().map(|p| p.1));
    let _ = writeln!(
        s,
        "<text x=\"60\" y=\"474\" font-size=\"13\">signed jump sum against local time ({} jumps, residual {:.4})</text>",
        ledger.jumps.len(),
        ledger.residual()
    );
    let mut stair = Vec::with_capacity(2 * steps.len());
    for w in steps.windows(2) {
        stair.push((w[1].0, w[0].1));
        stair.push(w[1]);
    }
    stair.insert(0, steps[0]);
    let k = stair.len();
    s += &lf.polyline(thin(k, 4000).map(|i| stair[i]), "stroke=\"#7a3fb0\" stroke-width=\"0.8\" class=\"ledger\"");
    s.push_str("</svg>\n");
    s
}

/// Nested loops on the unit disk, each tagged with its level and orientation.
pub fn loops_svg(loops: &[ExtractedLoop], target: C) -> String {
    let (size, r) = (600.0, 280.0);
    let map = |z: C| (size / 2.0 + r * z.re, size / 2.0 - r * z.im);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n");
    let _ = writeln!(s, "<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n<circle cx=\"300\" cy=\"300\" r=\"{r}\" fill=\"none\" stroke=\"black\"/>");
    let palette = ["#1f5fbf", "#c03a2b", "#2a9d3a", "#b07a1f", "#7a3fb0"];
    for (i, lp) in loops.iter().enumerate() {
        let orient = if lp.times.clockwise { "clockwise" } else { "counterclockwise" };
        let _ = write!(
            s,
            "<path class=\"loop\" data-level=\"{}\" data-orientation=\"{orient}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" d=\"",
            lp.times.level,
            palette[i % palette.len()]
        );
        for (j, &z) in lp.polyline.iter().enumerate() {
            let (u, v) = map(z);
            let _ = write!(s, "{}{u:.2},{v:.2} ", if j == 0 { "M" } else { "L" });
        }
        s.push_str("Z\"/>\n");
        if let Some(&z) = lp.polyline.first() {
            let (u, v) = map(z);
            let _ = writeln!(
                s,
                "<text x=\"{u:.2}\" y=\"{v:.2}\" font-size=\"12\">{} {}</text>",
                lp.times.level,
                if lp.times.clockwise { "cw" } else { "ccw" }
            );
        }
    }
    let (u, v) = map(target);
    let _ = writeln!(s, "<circle cx=\"{u:.2}\" cy=\"{v:.2}\" r=\"3\" fill=\"black\"/>\n</svg>");
    s
}
