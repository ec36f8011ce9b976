use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use bds_bench::{
    run_algorithm, run_benchmark, sweep_beta, write_bench_csv, write_sweep_csv, Algorithm,
    BenchError, Models, MANIFEST_FILE,
};
use bds_core::bilevel::{co_train, CoTrainConfig, RunManifest, SolveConfig, WindowPlacement};
use bds_core::instance::{generate, read_instance, write_instance, GenConfig, OpTimeDist};
use bds_core::lower_gpn::{LowerCheckpoint, LowerConfig};
use bds_core::upper_ddqn::{UpperCheckpoint, UpperConfig};
use bds_core::Instance;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "bds",
    version,
    about = "Bilevel deep scheduler for hybrid flow shops"
)]
struct Cli {
    /// Seed for every random choice
    #[arg(long, global = true, env = "BDS_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random instances
    Gen(GenArgs),
    /// Solve one instance and write its schedule
    Solve(SolveArgs),
    /// Co-train both levels and write a checkpoint directory
    Train(TrainArgs),
    /// Run algorithms over instance files and write a CSV table
    Bench(BenchArgs),
    /// Solve instances at several window sizes
    Sweep(SweepArgs),
    /// Write a Gantt CSV for one solved instance
    ExportGantt(SolveArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Uniform,
    ChiSquare,
}

#[derive(Args)]
struct Topology {
    #[arg(long)]
    jobs: usize,
    #[arg(long, default_value_t = 5)]
    stages: usize,
    #[arg(long, default_value_t = 10)]
    machines: usize,
    #[arg(long, value_enum, default_value_t = Dist::Uniform)]
    dist: Dist,
    #[arg(long, default_value_t = 0.0)]
    low: f64,
    #[arg(long, default_value_t = 1.0)]
    high: f64,
    /// Degrees of freedom of the chi-square distribution
    #[arg(long, default_value_t = 2.0)]
    dof: f64,
}

impl Topology {
    fn config(&self, seed: u64) -> GenConfig {
        let dist = match self.dist {
            Dist::Uniform => OpTimeDist::Uniform {
                low: self.low,
                high: self.high,
            },
            Dist::ChiSquare => OpTimeDist::ChiSquare { dof: self.dof },
        };
        GenConfig::new(self.jobs, self.stages, self.machines, dist, seed)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    topology: Topology,
    /// Number of instances; more than one writes into the output directory
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint directory written by `train`
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    beta: usize,
    #[arg(long, default_value_t = 2)]
    loops: usize,
}

impl ModelArgs {
    fn solve_config(&self, seed: u64, pool: Option<usize>) -> SolveConfig {
        SolveConfig {
            beta: self.beta,
            loops: self.loops,
            placement: WindowPlacement::Aligned,
            candidate_pool: pool,
            seed,
        }
    }

    fn models(&self) -> Result<Option<Models>, BenchError> {
        self.checkpoint.as_ref().map(Models::load).transpose()
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, default_value = "greedy")]
    algo: Algorithm,
    #[command(flatten)]
    model: ModelArgs,
    instance: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    topology: Topology,
    /// Number of generated training instances
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Train on these instance files instead of generated ones
    #[arg(long = "train-file")]
    train_files: Vec<PathBuf>,
    #[arg(long, default_value_t = 25)]
    beta: usize,
    #[arg(long, default_value_t = 2)]
    loops: usize,
    #[arg(long, default_value_t = 200)]
    upper_epochs: usize,
    #[arg(long, default_value_t = 200)]
    lower_epochs: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "greedy,neh")]
    algos: Vec<Algorithm>,
    #[command(flatten)]
    model: ModelArgs,
    /// Instance files or directories of them
    #[arg(required = true)]
    instances: Vec<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    betas: Vec<usize>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 2)]
    loops: usize,
    #[arg(required = true)]
    instances: Vec<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn load_instances(paths: &[PathBuf]) -> Result<Vec<Instance>, BenchError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    files
        .iter()
        .map(|f| read_instance(f).map_err(BenchError::from))
        .collect()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, BenchError> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn gen(args: &GenArgs, seed: u64) -> Result<(), BenchError> {
    if args.count <= 1 {
        let inst = generate(&args.topology.config(seed))?;
        write_instance(&inst, &args.output)?;
        println!("wrote {} ({} jobs)", args.output.display(), inst.n_jobs);
        return Ok(());
    }
    fs::create_dir_all(&args.output)?;
    for k in 0..args.count as u64 {
        let inst = generate(&args.topology.config(seed + k))?;
        write_instance(&inst, args.output.join(format!("{}.json", inst.name)))?;
    }
    println!(
        "wrote {} instances to {}",
        args.count,
        args.output.display()
    );
    Ok(())
}

fn solve_one(args: &SolveArgs, seed: u64) -> Result<(Instance, bds_core::Schedule), BenchError> {
    let inst = read_instance(&args.instance)?;
    let models = args.model.models()?;
    let pool = models.as_ref().and_then(|m| m.candidate_pool);
    let schedule = run_algorithm(
        &inst,
        args.algo,
        models.as_ref(),
        &args.model.solve_config(seed, pool),
    )?;
    Ok((inst, schedule))
}

fn solve_cmd(args: &SolveArgs, seed: u64) -> Result<(), BenchError> {
    let (inst, schedule) = solve_one(args, seed)?;
    let path = args.output.clone().unwrap_or_else(|| {
        let stem = args
            .instance
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy();
        args.instance
            .with_file_name(format!("{stem}.{}.schedule.json", args.algo))
    });
    fs::write(&path, schedule.to_json(&inst))?;
    println!("{} makespan {}", args.algo, schedule.makespan);
    println!("schedule written to {}", path.display());
    Ok(())
}

fn gantt_cmd(args: &SolveArgs, seed: u64) -> Result<(), BenchError> {
    let (inst, schedule) = solve_one(args, seed)?;
    output(args.output.as_deref())?.write_all(schedule.gantt_csv(&inst).as_bytes())?;
    Ok(())
}

fn train_cmd(args: &TrainArgs, seed: u64) -> Result<(), BenchError> {
    let instances: Vec<Arc<Instance>> = if args.train_files.is_empty() {
        (0..args.instances as u64)
            .map(|k| {
                generate(
                    &args
                        .topology
                        .config(seed.wrapping_mul(1_000_003).wrapping_add(k)),
                )
                .map(Arc::new)
            })
            .collect::<Result<_, _>>()?
    } else {
        load_instances(&args.train_files)?
            .into_iter()
            .map(Arc::new)
            .collect()
    };
    let config = CoTrainConfig {
        beta: args.beta,
        loops: args.loops,
        upper: UpperConfig {
            epochs: args.upper_epochs,
            seed,
            ..UpperConfig::default()
        },
        lower: LowerConfig {
            epochs: args.lower_epochs,
            seed,
            ..LowerConfig::default()
        },
        seed,
        ..CoTrainConfig::default()
    };
    let outcome = co_train(&instances, &config)?;
    for l in &outcome.loops {
        println!(
            "loop {}: rollout {:.4} best {:.4} accepted {} rejected {}",
            l.index, l.mean_rollout_makespan, l.mean_best_makespan, l.accepted, l.rejected
        );
    }
    Models::save(
        &UpperCheckpoint::new(&outcome.qnet, &config.upper),
        &LowerCheckpoint::new(&outcome.gpn, &config.lower),
        &args.output,
    )?;
    let manifest = RunManifest::new(&config, &outcome);
    fs::write(
        args.output.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    println!("checkpoint written to {}", args.output.display());
    Ok(())
}

fn bench_cmd(args: &BenchArgs, seed: u64) -> Result<(), BenchError> {
    let instances = load_instances(&args.instances)?;
    let models = args.model.models()?;
    let pool = models.as_ref().and_then(|m| m.candidate_pool);
    let rows = run_benchmark(
        &instances,
        &args.algos,
        models.as_ref(),
        &args.model.solve_config(seed, pool),
    )?;
    write_bench_csv(&rows, output(args.output.as_deref())?)
}

fn sweep_cmd(args: &SweepArgs, seed: u64) -> Result<(), BenchError> {
    let instances = load_instances(&args.instances)?;
    let models = Models::load(&args.checkpoint)?;
    let base = SolveConfig {
        loops: args.loops,
        candidate_pool: models.candidate_pool,
        seed,
        ..SolveConfig::default()
    };
    let sweep = sweep_beta(&instances, &args.betas, &models, &base)?;
    write_sweep_csv(&sweep, output(args.output.as_deref())?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let seed = cli.seed;
    let result = match &cli.command {
        Command::Gen(a) => gen(a, seed),
        Command::Solve(a) => solve_cmd(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::Bench(a) => bench_cmd(a, seed),
        Command::Sweep(a) => sweep_cmd(a, seed),
        Command::ExportGantt(a) => gantt_cmd(a, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
