//! Benchmark harness for the bilevel scheduler: runs algorithms over
//! instance sets, times them, revalidates every schedule and writes CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use bds_core::bilevel::{solve, SolveConfig};
use bds_core::engine::{
    decode_schedule, makespan_lower_bound, validate_schedule, Schedule, ValidatorConfig,
};
use bds_core::heuristics::{greedy_sequence, neh_sequence};
use bds_core::lower_gpn::{GpnModel, LowerCheckpoint};
use bds_core::upper_ddqn::{greedy_rollout, QNet, UpperCheckpoint};
use bds_core::Instance;
use serde::{Deserialize, Serialize};

pub const UPPER_FILE: &str = "upper.json";
pub const LOWER_FILE: &str = "lower.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] bds_core::Error),
    #[error("{algorithm} needs a checkpoint: {reason}")]
    MissingCheckpoint {
        algorithm: Algorithm,
        reason: String,
    },
    #[error("{algorithm} produced an invalid schedule for {dataset}: {detail}")]
    InvalidSchedule {
        algorithm: Algorithm,
        dataset: String,
        detail: String,
    },
    #[error("unknown algorithm `{0}` (expected greedy, neh, ddqn or bds)")]
    UnknownAlgorithm(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Greedy,
    Neh,
    Ddqn,
    Bds,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Greedy,
        Algorithm::Neh,
        Algorithm::Ddqn,
        Algorithm::Bds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Greedy => "greedy",
            Algorithm::Neh => "neh",
            Algorithm::Ddqn => "ddqn",
            Algorithm::Bds => "bds",
        }
    }

    pub fn needs_models(self) -> bool {
        matches!(self, Algorithm::Ddqn | Algorithm::Bds)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(Algorithm::Greedy),
            "neh" => Ok(Algorithm::Neh),
            "ddqn" => Ok(Algorithm::Ddqn),
            "bds" => Ok(Algorithm::Bds),
            _ => Err(BenchError::UnknownAlgorithm(s.to_string())),
        }
    }
}

/// Trained upper and lower models.
#[derive(Debug, Clone)]
pub struct Models {
    pub qnet: QNet,
    pub gpn: GpnModel,
    pub candidate_pool: Option<usize>,
}

impl Models {
    /// Loads `upper.json` and `lower.json` from a checkpoint directory.
    pub fn load(dir: impl AsRef<Path>) -> Result<Models> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).map_err(|source| BenchError::Read { path, source })
        };
        let upper: UpperCheckpoint = serde_json::from_slice(&read(UPPER_FILE)?)?;
        let lower: LowerCheckpoint = serde_json::from_slice(&read(LOWER_FILE)?)?;
        Ok(Models {
            qnet: upper.restore()?,
            gpn: lower.restore()?,
            candidate_pool: upper.config.candidate_pool,
        })
    }

    /// Writes both checkpoints into `dir`, creating it if needed.
    pub fn save(
        upper: &UpperCheckpoint,
        lower: &LowerCheckpoint,
        dir: impl AsRef<Path>,
    ) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(UPPER_FILE), serde_json::to_vec(upper)?)?;
        fs::write(dir.join(LOWER_FILE), serde_json::to_vec(lower)?)?;
        Ok(())
    }
}

/// Runs one algorithm. `models` is required for the learned ones.
pub fn run_algorithm(
    inst: &Instance,
    algorithm: Algorithm,
    models: Option<&Models>,
    solve_config: &SolveConfig,
) -> Result<Schedule> {
    let models = || {
        models.ok_or_else(|| BenchError::MissingCheckpoint {
            algorithm,
            reason: "no checkpoint directory given".into(),
        })
    };
    let schedule = match algorithm {
        Algorithm::Greedy => decode_schedule(inst, &greedy_sequence(inst))?,
        Algorithm::Neh => decode_schedule(inst, &neh_sequence(inst))?,
        Algorithm::Ddqn => {
            let m = models()?;
            decode_schedule(inst, &greedy_rollout(&m.qnet, inst, m.candidate_pool)?)?
        }
        Algorithm::Bds => {
            let m = models()?;
            solve(inst, &m.qnet, &m.gpn, solve_config)?.schedule
        }
    };
    Ok(schedule)
}

fn revalidate(inst: &Instance, algorithm: Algorithm, schedule: &Schedule) -> Result<()> {
    let report = validate_schedule(inst, schedule, &ValidatorConfig::for_instance(inst));
    if let Some(v) = report.violations.first() {
        return Err(BenchError::InvalidSchedule {
            algorithm,
            dataset: inst.name.clone(),
            detail: format!("{} violation(s), first: {v}", report.violations.len()),
        });
    }
    let bound = makespan_lower_bound(inst);
    if schedule.makespan < bound - 1e-9 {
        return Err(BenchError::InvalidSchedule {
            algorithm,
            dataset: inst.name.clone(),
            detail: format!("makespan {} below lower bound {bound}", schedule.makespan),
        });
    }
    Ok(())
}

/// Seconds rounded to millisecond resolution.
fn seconds(start: Instant) -> f64 {
    (start.elapsed().as_secs_f64() * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub jobs: usize,
    pub makespan: f64,
    pub time_s: f64,
    pub seed: u64,
}

/// One row per (instance, algorithm). Time covers the algorithm call only.
/// Learned algorithms fail with [`BenchError::MissingCheckpoint`] when
/// `models` is `None`; heuristics always run.
pub fn run_benchmark(
    instances: &[Instance],
    algorithms: &[Algorithm],
    models: Option<&Models>,
    solve_config: &SolveConfig,
) -> Result<Vec<BenchRow>> {
    if models.is_none() {
        if let Some(&a) = algorithms.iter().find(|a| a.needs_models()) {
            return Err(BenchError::MissingCheckpoint {
                algorithm: a,
                reason: "no checkpoint directory given".into(),
            });
        }
    }
    let mut rows = Vec::with_capacity(instances.len() * algorithms.len());
    for inst in instances {
        for &algorithm in algorithms {
            let start = Instant::now();
            let schedule = run_algorithm(inst, algorithm, models, solve_config)?;
            let time_s = seconds(start);
            revalidate(inst, algorithm, &schedule)?;
            rows.push(BenchRow {
                dataset: inst.name.clone(),
                algorithm,
                jobs: inst.n_jobs,
                makespan: schedule.makespan,
                time_s,
                seed: solve_config.seed,
            });
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub jobs: usize,
    pub beta: usize,
    pub makespan: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    /// Mean over the instances of each size.
    pub rows: Vec<SweepRow>,
    /// `(jobs, beta)` pairs skipped because the window exceeds the instance.
    pub skipped: Vec<(usize, usize)>,
    /// Window size with the lowest mean makespan per instance size.
    pub best: BTreeMap<usize, usize>,
}

/// Solves every instance at every window size.
pub fn sweep_beta(
    instances: &[Instance],
    betas: &[usize],
    models: &Models,
    base: &SolveConfig,
) -> Result<Sweep> {
    let mut by_size: BTreeMap<usize, Vec<&Instance>> = BTreeMap::new();
    for inst in instances {
        by_size.entry(inst.n_jobs).or_default().push(inst);
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut best: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&jobs, group) in &by_size {
        for &beta in betas {
            if beta == 0 || beta > jobs {
                skipped.push((jobs, beta));
                continue;
            }
            let cfg = SolveConfig {
                beta,
                ..base.clone()
            };
            let (mut total, mut time) = (0.0, 0.0);
            for inst in group {
                let start = Instant::now();
                let schedule = run_algorithm(inst, Algorithm::Bds, Some(models), &cfg)?;
                time += start.elapsed().as_secs_f64();
                revalidate(inst, Algorithm::Bds, &schedule)?;
                total += schedule.makespan;
            }
            let n = group.len() as f64;
            let makespan = total / n;
            if best.get(&jobs).is_none_or(|b| makespan < b.0) {
                best.insert(jobs, (makespan, beta));
            }
            rows.push(SweepRow {
                jobs,
                beta,
                makespan,
                time_s: ((time / n) * 1000.0).round() / 1000.0,
            });
        }
    }
    Ok(Sweep {
        rows,
        skipped,
        best: best.into_iter().map(|(k, v)| (k, v.1)).collect(),
    })
}

/// CSV rows followed by `#` comment lines for skipped cells and the best
/// window size per instance size.
pub fn write_sweep_csv<W: Write>(sweep: &Sweep, mut out: W) -> Result<()> {
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for r in &sweep.rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    for (jobs, beta) in &sweep.skipped {
        writeln!(
            out,
            "# skipped jobs={jobs} beta={beta}: window larger than instance"
        )?;
    }
    for (jobs, beta) in &sweep.best {
        writeln!(out, "# best beta for jobs={jobs}: {beta}")?;
    }
    Ok(())
}
