//! Problem instances: jobs flowing through ordered stages, each stage holding
//! a pool of identical parallel machines.
//!
//! Because machines inside a stage are interchangeable, an operation time is
//! indexed by `(stage, job)` only.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default topology of a production line: 5 stages of 10 machines.
pub const DEFAULT_STAGES: usize = 5;
pub const DEFAULT_MACHINES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub name: String,
    pub n_jobs: usize,
    pub n_stages: usize,
    pub machines_per_stage: Vec<usize>,
    /// `op_times[stage][job]`.
    pub op_times: Vec<Vec<f64>>,
}

impl Instance {
    /// Builds an instance and rejects it if any invariant is violated.
    pub fn new(
        name: impl Into<String>,
        machines_per_stage: Vec<usize>,
        op_times: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n_stages = op_times.len();
        let n_jobs = op_times.first().map_or(0, Vec::len);
        let inst = Instance {
            name: name.into(),
            n_jobs,
            n_stages,
            machines_per_stage,
            op_times,
        };
        inst.check()?;
        Ok(inst)
    }

    #[inline]
    pub fn op(&self, stage: usize, job: usize) -> f64 {
        self.op_times[stage][job]
    }

    /// Column of operation times for one job, one entry per stage.
    pub fn job_column(&self, job: usize) -> Vec<f64> {
        self.op_times.iter().map(|row| row[job]).collect()
    }

    pub fn job_total(&self, job: usize) -> f64 {
        self.op_times.iter().map(|row| row[job]).sum()
    }

    pub fn total_processing(&self) -> f64 {
        self.op_times.iter().flatten().sum()
    }

    pub fn mean_op_time(&self) -> f64 {
        let count = (self.n_jobs * self.n_stages).max(1);
        self.total_processing() / count as f64
    }

    /// Sub-instance restricted to `jobs`, in the given order.
    pub fn restrict(&self, jobs: &[usize]) -> Instance {
        Instance {
            name: format!("{}[sub{}]", self.name, jobs.len()),
            n_jobs: jobs.len(),
            n_stages: self.n_stages,
            machines_per_stage: self.machines_per_stage.clone(),
            op_times: self
                .op_times
                .iter()
                .map(|row| jobs.iter().map(|&j| row[j]).collect())
                .collect(),
        }
    }

    /// Returns an error built from the violation report if it is non-empty.
    pub fn check(&self) -> Result<()> {
        let report = validate_instance(self);
        if report.is_empty() {
            Ok(())
        } else {
            let msg = report
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::Validation(msg))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from(self)).expect("instance serializes")
    }
}

/// One broken instance invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum InstanceViolation {
    NoJobs,
    NoStages,
    MachineCountLength {
        expected: usize,
        found: usize,
    },
    NoMachines {
        stage: usize,
    },
    RowCount {
        expected: usize,
        found: usize,
    },
    RowLength {
        stage: usize,
        expected: usize,
        found: usize,
    },
    NonPositiveDuration {
        stage: usize,
        job: usize,
        value: f64,
    },
}

impl fmt::Display for InstanceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use InstanceViolation::*;
        match self {
            NoJobs => write!(f, "instance has no jobs"),
            NoStages => write!(f, "instance has no stages"),
            MachineCountLength { expected, found } => write!(
                f,
                "dimension mismatch: expected {expected} machine counts, found {found}"
            ),
            NoMachines { stage } => write!(f, "stage {stage} has no machines"),
            RowCount { expected, found } => write!(
                f,
                "dimension mismatch: expected {expected} op_times rows, found {found}"
            ),
            RowLength {
                stage,
                expected,
                found,
            } => write!(
                f,
                "dimension mismatch: op_times row {stage} has {found} entries, expected {expected}"
            ),
            NonPositiveDuration { stage, job, value } => write!(
                f,
                "duration at (stage {stage}, job {job}) must be positive and finite, got {value}"
            ),
        }
    }
}

/// Lists every invariant violation of `inst`. Never fails.
pub fn validate_instance(inst: &Instance) -> Vec<InstanceViolation> {
    let mut report = Vec::new();
    if inst.n_jobs == 0 {
        report.push(InstanceViolation::NoJobs);
    }
    if inst.n_stages == 0 {
        report.push(InstanceViolation::NoStages);
    }
    if inst.machines_per_stage.len() != inst.n_stages {
        report.push(InstanceViolation::MachineCountLength {
            expected: inst.n_stages,
            found: inst.machines_per_stage.len(),
        });
    }
    for (stage, &m) in inst.machines_per_stage.iter().enumerate() {
        if m == 0 {
            report.push(InstanceViolation::NoMachines { stage });
        }
    }
    if inst.op_times.len() != inst.n_stages {
        report.push(InstanceViolation::RowCount {
            expected: inst.n_stages,
            found: inst.op_times.len(),
        });
    }
    for (stage, row) in inst.op_times.iter().enumerate() {
        if row.len() != inst.n_jobs {
            report.push(InstanceViolation::RowLength {
                stage,
                expected: inst.n_jobs,
                found: row.len(),
            });
        }
        for (job, &value) in row.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                report.push(InstanceViolation::NonPositiveDuration { stage, job, value });
            }
        }
    }
    report
}

/// On-disk layout of an instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub name: String,
    pub jobs: usize,
    pub stages: usize,
    pub machines: Vec<usize>,
    pub op_times: Vec<Vec<f64>>,
}

impl From<&Instance> for InstanceFile {
    fn from(inst: &Instance) -> Self {
        InstanceFile {
            name: inst.name.clone(),
            jobs: inst.n_jobs,
            stages: inst.n_stages,
            machines: inst.machines_per_stage.clone(),
            op_times: inst.op_times.clone(),
        }
    }
}

/// Parses an instance file and validates it.
///
/// Floats are written by the serializer in shortest round-trip form, so
/// `parse_instance(inst.to_json())` reproduces every duration bit-for-bit.
pub fn parse_instance(text: &[u8]) -> Result<Instance> {
    let file: InstanceFile = serde_json::from_slice(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let inst = Instance {
        name: file.name,
        n_jobs: file.jobs,
        n_stages: file.stages,
        machines_per_stage: file.machines,
        op_times: file.op_times,
    };
    inst.check()?;
    Ok(inst)
}

pub fn read_instance(path: impl AsRef<std::path::Path>) -> Result<Instance> {
    let bytes = std::fs::read(path)?;
    parse_instance(&bytes)
}

pub fn write_instance(inst: &Instance, path: impl AsRef<std::path::Path>) -> Result<()> {
    std::fs::write(path, inst.to_json())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpTimeDist {
    /// Uniform on `[low, high]`.
    Uniform { low: f64, high: f64 },
    /// Chi-square with `dof` degrees of freedom.
    ChiSquare { dof: f64 },
}

impl Default for OpTimeDist {
    fn default() -> Self {
        OpTimeDist::Uniform {
            low: 0.0,
            high: 1.0,
        }
    }
}

impl OpTimeDist {
    pub fn default_chi_square() -> Self {
        OpTimeDist::ChiSquare { dof: 2.0 }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            OpTimeDist::Uniform { low, high } => 0.5 * (low + high),
            OpTimeDist::ChiSquare { dof } => dof,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            OpTimeDist::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite()) {
                    return Err(Error::Config("uniform bounds must be finite".into()));
                }
                if low < 0.0 || high <= 0.0 {
                    return Err(Error::Config(format!(
                        "uniform range [{low}, {high}] must lie in the non-negative reals with high > 0"
                    )));
                }
                if high < low {
                    return Err(Error::Config(format!(
                        "uniform range is empty: low {low} > high {high}"
                    )));
                }
            }
            OpTimeDist::ChiSquare { dof } => {
                if !(dof.is_finite() && dof > 0.0) {
                    return Err(Error::Config(format!(
                        "chi-square degrees of freedom must be positive, got {dof}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_jobs: usize,
    pub n_stages: usize,
    pub machines_per_stage: Vec<usize>,
    pub distribution: OpTimeDist,
    pub seed: u64,
}

impl GenConfig {
    /// `n_jobs` jobs on the default 5 × 10 line with Uniform(0, 1) times.
    pub fn line(n_jobs: usize, seed: u64) -> Self {
        GenConfig {
            n_jobs,
            n_stages: DEFAULT_STAGES,
            machines_per_stage: vec![DEFAULT_MACHINES; DEFAULT_STAGES],
            distribution: OpTimeDist::default(),
            seed,
        }
    }

    pub fn new(
        n_jobs: usize,
        n_stages: usize,
        machines: usize,
        distribution: OpTimeDist,
        seed: u64,
    ) -> Self {
        GenConfig {
            n_jobs,
            n_stages,
            machines_per_stage: vec![machines; n_stages],
            distribution,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_jobs == 0 || self.n_stages == 0 {
            return Err(Error::Config("need at least one job and one stage".into()));
        }
        if self.machines_per_stage.len() != self.n_stages {
            return Err(Error::Config(format!(
                "{} machine counts given for {} stages",
                self.machines_per_stage.len(),
                self.n_stages
            )));
        }
        if self.machines_per_stage.contains(&0) {
            return Err(Error::Config("every stage needs a machine".into()));
        }
        self.distribution.validate()
    }
}

/// Draws a positive duration; exact zeros (possible at a zero lower bound)
/// are redrawn so the instance stays valid.
fn draw_positive<R: Rng, D: rand_distr::Distribution<f64>>(dist: &D, rng: &mut R) -> f64 {
    loop {
        let v = dist.sample(rng);
        if v > 0.0 {
            return v;
        }
    }
}

/// Generates an instance with i.i.d. operation times. The same config always
/// yields the same instance.
pub fn generate(config: &GenConfig) -> Result<Instance> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cells = config.n_stages * config.n_jobs;
    let flat: Vec<f64> = match config.distribution {
        OpTimeDist::Uniform { low, high } => {
            let dist = Uniform::new_inclusive(low, high)
                .map_err(|e| Error::Config(format!("uniform: {e}")))?;
            (0..cells).map(|_| draw_positive(&dist, &mut rng)).collect()
        }
        OpTimeDist::ChiSquare { dof } => {
            let dist =
                ChiSquared::new(dof).map_err(|e| Error::Config(format!("chi-square: {e}")))?;
            (0..cells).map(|_| draw_positive(&dist, &mut rng)).collect()
        }
    };
    let op_times = flat.chunks(config.n_jobs).map(<[f64]>::to_vec).collect();
    let name = match config.distribution {
        OpTimeDist::Uniform { .. } => format!("uniform-n{}-s{}", config.n_jobs, config.seed),
        OpTimeDist::ChiSquare { .. } => format!("chisq-n{}-s{}", config.n_jobs, config.seed),
    };
    Instance::new(name, config.machines_per_stage.clone(), op_times)
}

/// Generates `count` instances with consecutive seeds starting at `config.seed`.
pub fn generate_set(config: &GenConfig, count: usize) -> Result<Vec<Instance>> {
    (0..count as u64)
        .map(|k| {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(k);
            generate(&c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Instance {
        Instance::new(
            "small",
            vec![1, 2, 1],
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
        )
        .unwrap()
    }

    #[test]
    fn degenerate_uniform_range() {
        let cfg = GenConfig::new(
            2,
            1,
            1,
            OpTimeDist::Uniform {
                low: 1.0,
                high: 1.0,
            },
            7,
        );
        let inst = generate(&cfg).unwrap();
        assert_eq!(inst.op_times, vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = GenConfig::new(30, 3, 2, OpTimeDist::default_chi_square(), 42);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        let bits = |i: &Instance| -> Vec<u64> {
            i.op_times.iter().flatten().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn uniform_mean_law_of_large_numbers() {
        let inst = generate(&GenConfig::line(1000, 1)).unwrap();
        let mean = inst.mean_op_time();
        assert!((0.47..=0.53).contains(&mean), "mean {mean}");
    }

    #[test]
    fn chi_square_mean_within_five_percent() {
        let cfg = GenConfig::new(1000, 5, 10, OpTimeDist::default_chi_square(), 3);
        let mean = generate(&cfg).unwrap().mean_op_time();
        assert!((mean - 2.0).abs() <= 0.1, "mean {mean}");
    }

    #[test]
    fn bad_distribution_params_rejected() {
        let bad = [
            OpTimeDist::Uniform {
                low: -1.0,
                high: 1.0,
            },
            OpTimeDist::Uniform {
                low: 0.0,
                high: 0.0,
            },
            OpTimeDist::Uniform {
                low: 2.0,
                high: 1.0,
            },
            OpTimeDist::ChiSquare { dof: 0.0 },
        ];
        for d in bad {
            let cfg = GenConfig::new(3, 1, 1, d, 0);
            assert!(matches!(generate(&cfg), Err(Error::Config(_))), "{d:?}");
        }
    }

    #[test]
    fn well_formed_instance_has_empty_report() {
        assert!(validate_instance(&small()).is_empty());
    }

    #[test]
    fn zero_duration_is_one_violation() {
        let mut inst = small();
        inst.op_times[1][0] = 0.0;
        let report = validate_instance(&inst);
        assert_eq!(report.len(), 1);
        assert!(matches!(
            report[0],
            InstanceViolation::NonPositiveDuration {
                stage: 1,
                job: 0,
                ..
            }
        ));
    }

    #[test]
    fn zero_machines_is_one_violation() {
        let inst = Instance {
            name: "m0".into(),
            n_jobs: 1,
            n_stages: 1,
            machines_per_stage: vec![0],
            op_times: vec![vec![1.0]],
        };
        assert_eq!(
            validate_instance(&inst),
            vec![InstanceViolation::NoMachines { stage: 0 }]
        );
    }

    #[test]
    fn parse_rejects_row_count_mismatch() {
        let text = br#"{"name":"x","jobs":2,"stages":3,"machines":[1,1,1],
            "op_times":[[1,2],[3,4]]}"#;
        let err = parse_instance(text).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn parse_names_negative_duration() {
        let text = br#"{"name":"x","jobs":2,"stages":2,"machines":[1,1],
            "op_times":[[1,2],[3,-4]]}"#;
        let err = parse_instance(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stage 1, job 1"), "{msg}");
    }

    #[test]
    fn parse_reports_position_of_syntax_error() {
        let text = b"{\n  \"name\": \"x\",\n  \"jobs\": ,\n}";
        match parse_instance(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let cfg = GenConfig::new(17, 4, 3, OpTimeDist::default_chi_square(), 9);
        let inst = generate(&cfg).unwrap();
        let back = parse_instance(inst.to_json().as_bytes()).unwrap();
        assert_eq!(inst, back);
    }
}
