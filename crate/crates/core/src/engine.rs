//! Sequence decoding, makespan evaluation and schedule validation.
//!
//! A job sequence is turned into a schedule by list scheduling: the first
//! stage dispatches jobs in sequence order, every later stage dispatches them
//! in order of arrival (completion at the previous stage, ties by sequence
//! position), and each dispatched job takes the machine that frees up first
//! (ties to the lowest machine index).

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// An ordered list of job indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sequence(pub Vec<usize>);

impl Sequence {
    pub fn identity(n: usize) -> Self {
        Sequence((0..n).collect())
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    pub fn is_permutation_of(&self, n_jobs: usize) -> bool {
        self.len() == n_jobs && check_partial(&self.0, n_jobs).is_ok()
    }
}

impl Deref for Sequence {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for Sequence {
    fn from(v: Vec<usize>) -> Self {
        Sequence(v)
    }
}

/// Checks that `seq` holds distinct job indices below `n_jobs`.
pub fn check_partial(seq: &[usize], n_jobs: usize) -> Result<()> {
    let mut seen = vec![false; n_jobs];
    for &j in seq {
        if j >= n_jobs {
            return Err(Error::Input(format!(
                "job index {j} out of range for {n_jobs} jobs"
            )));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::Input(format!("job {j} appears more than once")));
        }
    }
    Ok(())
}

/// Checks that `seq` is a permutation of `0..n_jobs`.
pub fn check_full(seq: &[usize], n_jobs: usize) -> Result<()> {
    if seq.len() != n_jobs {
        return Err(Error::Input(format!(
            "sequence has {} jobs, instance has {n_jobs}",
            seq.len()
        )));
    }
    check_partial(seq, n_jobs)
}

/// Per-position trace of one list-scheduling pass.
struct Trace {
    /// `[stage][position]`
    start: Vec<Vec<f64>>,
    machine: Vec<Vec<usize>>,
    /// Start time of the job dispatched just before this one at the same
    /// stage, `NEG_INFINITY` for the first dispatch.
    prev_dispatch_start: Vec<Vec<f64>>,
    completion: Vec<f64>,
}

/// Core list scheduler. Returns the makespan; fills `trace` when given.
fn simulate(inst: &Instance, seq: &[usize], mut trace: Option<&mut Trace>) -> f64 {
    let n = seq.len();
    if n == 0 {
        return 0.0;
    }
    let mut ready = vec![0.0_f64; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut free: Vec<f64> = Vec::new();
    for stage in 0..inst.n_stages {
        if stage > 0 {
            order.sort_unstable_by(|&a, &b| ready[a].total_cmp(&ready[b]).then(a.cmp(&b)));
        }
        free.clear();
        free.resize(inst.machines_per_stage[stage], 0.0);
        let row = &inst.op_times[stage];
        let mut prev_start = f64::NEG_INFINITY;
        for &pos in &order {
            let mut k = 0;
            for m in 1..free.len() {
                if free[m] < free[k] {
                    k = m;
                }
            }
            let start = ready[pos].max(free[k]);
            let end = start + row[seq[pos]];
            free[k] = end;
            ready[pos] = end;
            if let Some(t) = trace.as_deref_mut() {
                t.start[stage][pos] = start;
                t.machine[stage][pos] = k;
                t.prev_dispatch_start[stage][pos] = prev_start;
            }
            prev_start = start;
        }
    }
    if let Some(t) = trace {
        t.completion.copy_from_slice(&ready);
    }
    ready.iter().copied().fold(0.0, f64::max)
}

/// Identifies a machine: `machine` is the index within `stage`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MachineSlot {
    pub stage: usize,
    pub machine: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    /// Stage-level start time, `[stage][job]`.
    pub start: Vec<Vec<f64>>,
    /// Machine index within the stage, `[stage][job]`.
    pub machine_of: Vec<Vec<usize>>,
    /// Machine-level start time of a job on a machine slot.
    pub machine_start: BTreeMap<(usize, MachineSlot), f64>,
    pub makespan: f64,
    /// Time the critical job spent queued behind earlier dispatches.
    pub stage_wait_total: f64,
    /// Time the critical job spent waiting for a free machine once at the
    /// head of its stage queue.
    pub machine_wait_total: f64,
    /// Own processing time of the critical job.
    pub critical_processing: f64,
    /// Job whose last-stage completion defines the makespan.
    pub critical_job: usize,
    /// The sequence the schedule was decoded from.
    pub sequence: Sequence,
}

impl Schedule {
    pub fn end(&self, inst: &Instance, stage: usize, job: usize) -> f64 {
        self.start[stage][job] + inst.op(stage, job)
    }

    pub fn records(&self, inst: &Instance) -> Vec<ScheduleRecord> {
        let mut out = Vec::with_capacity(inst.n_jobs * inst.n_stages);
        for stage in 0..inst.n_stages {
            for &job in self.sequence.iter() {
                out.push(ScheduleRecord {
                    job,
                    stage,
                    machine: self.machine_of[stage][job],
                    start: self.start[stage][job],
                    end: self.end(inst, stage, job),
                });
            }
        }
        out
    }

    pub fn to_json(&self, inst: &Instance) -> String {
        let export = ScheduleExport {
            makespan: self.makespan,
            stage_wait: self.stage_wait_total,
            machine_wait: self.machine_wait_total,
            records: self.records(inst),
        };
        serde_json::to_string_pretty(&export).expect("schedule serializes")
    }

    /// Gantt rows `stage,machine,job,start,end`, ordered by stage, machine, start.
    pub fn gantt_csv(&self, inst: &Instance) -> String {
        let mut recs = self.records(inst);
        recs.sort_by(|a, b| {
            (a.stage, a.machine)
                .cmp(&(b.stage, b.machine))
                .then(a.start.total_cmp(&b.start))
        });
        let mut out = String::from("stage,machine,job,start,end\n");
        for r in recs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.stage, r.machine, r.job, r.start, r.end
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub job: usize,
    pub stage: usize,
    pub machine: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleExport {
    pub makespan: f64,
    pub stage_wait: f64,
    pub machine_wait: f64,
    pub records: Vec<ScheduleRecord>,
}

/// Decodes a full permutation into a feasible schedule.
pub fn decode_schedule(inst: &Instance, seq: &[usize]) -> Result<Schedule> {
    check_full(seq, inst.n_jobs)?;
    let n = seq.len();
    let s = inst.n_stages;
    let mut trace = Trace {
        start: vec![vec![0.0; n]; s],
        machine: vec![vec![0; n]; s],
        prev_dispatch_start: vec![vec![f64::NEG_INFINITY; n]; s],
        completion: vec![0.0; n],
    };
    let makespan = simulate(inst, seq, Some(&mut trace));

    let mut start = vec![vec![0.0; n]; s];
    let mut machine_of = vec![vec![0; n]; s];
    let mut machine_start = BTreeMap::new();
    for stage in 0..s {
        for (pos, &job) in seq.iter().enumerate() {
            let t = trace.start[stage][pos];
            let machine = trace.machine[stage][pos];
            start[stage][job] = t;
            machine_of[stage][job] = machine;
            machine_start.insert((job, MachineSlot { stage, machine }), t);
        }
    }

    // Critical job: latest last-stage completion, earliest sequence position on ties.
    let mut crit_pos = 0;
    for pos in 1..n {
        if trace.completion[pos] > trace.completion[crit_pos] {
            crit_pos = pos;
        }
    }
    let mut stage_wait = 0.0;
    let mut machine_wait = 0.0;
    let mut processing = 0.0;
    let mut ready = 0.0;
    for stage in 0..s {
        let st = trace.start[stage][crit_pos];
        let wait = st - ready;
        let queued = (trace.prev_dispatch_start[stage][crit_pos] - ready).clamp(0.0, wait);
        stage_wait += queued;
        machine_wait += wait - queued;
        let p = inst.op(stage, seq[crit_pos]);
        processing += p;
        ready = st + p;
    }

    Ok(Schedule {
        start,
        machine_of,
        machine_start,
        makespan,
        stage_wait_total: stage_wait,
        machine_wait_total: machine_wait,
        critical_processing: processing,
        critical_job: seq[crit_pos],
        sequence: Sequence(seq.to_vec()),
    })
}

/// Makespan of a full permutation.
pub fn makespan(inst: &Instance, seq: &[usize]) -> Result<f64> {
    check_full(seq, inst.n_jobs)?;
    Ok(simulate(inst, seq, None))
}

/// Makespan of scheduling only the jobs in `prefix`.
pub fn partial_makespan(inst: &Instance, prefix: &[usize]) -> Result<f64> {
    check_partial(prefix, inst.n_jobs)?;
    Ok(simulate(inst, prefix, None))
}

/// Makespan without input checks, for hot loops whose sequences are
/// permutations by construction.
#[inline]
pub fn makespan_unchecked(inst: &Instance, seq: &[usize]) -> f64 {
    debug_assert!(check_partial(seq, inst.n_jobs).is_ok());
    simulate(inst, seq, None)
}

/// `max(longest job, max over stages of stage load / machine count)`.
pub fn makespan_lower_bound(inst: &Instance) -> f64 {
    let job_bound = (0..inst.n_jobs)
        .map(|j| inst.job_total(j))
        .fold(0.0, f64::max);
    let load_bound = inst
        .op_times
        .iter()
        .zip(&inst.machines_per_stage)
        .map(|(row, &m)| row.iter().sum::<f64>() / m as f64)
        .fold(0.0, f64::max);
    job_bound.max(load_bound)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatorConfig {
    /// Big-M constant per stage.
    pub xi: Vec<f64>,
    pub tolerance: f64,
}

impl ValidatorConfig {
    /// `xi[i] = 10 × total processing time`, tolerance `1e-9`.
    pub fn for_instance(inst: &Instance) -> Self {
        let big_m = 10.0 * inst.total_processing();
        ValidatorConfig {
            xi: vec![big_m; inst.n_stages],
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintFamily {
    /// Every job occupies every stage exactly once.
    StageAssignment,
    /// Stage-to-stage precedence of a job.
    Precedence,
    /// Exactly one machine per (stage, job) and no overlap on a machine.
    MachineOverlap,
    /// Machine-level start agrees with stage-level start.
    MachineLink,
    /// Reported makespan agrees with the schedule.
    Makespan,
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConstraintFamily::StageAssignment => "(2) stage assignment",
            ConstraintFamily::Precedence => "(3) precedence",
            ConstraintFamily::MachineOverlap => "(4) machine non-overlap",
            ConstraintFamily::MachineLink => "(6) machine link",
            ConstraintFamily::Makespan => "makespan",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleViolation {
    pub family: ConstraintFamily,
    pub stage: usize,
    pub jobs: Vec<usize>,
    pub detail: String,
}

impl fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated at stage {} for jobs {:?}: {}",
            self.family, self.stage, self.jobs, self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<ScheduleViolation>,
    /// Per stage, `Σ_j start + Σ_j duration`: the smallest admissible
    /// inverse lower-level reward for that stage.
    pub implied_inverse_reward: Vec<f64>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a schedule against every constraint family. Never fails; problems
/// are listed in the report.
pub fn validate_schedule(
    inst: &Instance,
    sched: &Schedule,
    cfg: &ValidatorConfig,
) -> ValidationReport {
    let tol = cfg.tolerance;
    let mut report = ValidationReport::default();
    let mut push = |family, stage, jobs: Vec<usize>, detail: String| {
        report.violations.push(ScheduleViolation {
            family,
            stage,
            jobs,
            detail,
        })
    };

    let dims_ok = sched.start.len() == inst.n_stages
        && sched.machine_of.len() == inst.n_stages
        && sched.start.iter().all(|r| r.len() == inst.n_jobs)
        && sched.machine_of.iter().all(|r| r.len() == inst.n_jobs);
    if !dims_ok {
        push(
            ConstraintFamily::StageAssignment,
            0,
            vec![],
            "schedule dimensions do not match the instance".into(),
        );
        return report;
    }

    for stage in 0..inst.n_stages {
        for job in 0..inst.n_jobs {
            let t = sched.start[stage][job];
            if !(t.is_finite() && t >= -tol) {
                push(
                    ConstraintFamily::StageAssignment,
                    stage,
                    vec![job],
                    format!("start time {t} is not a valid non-negative time"),
                );
            }
            let m = sched.machine_of[stage][job];
            if m >= inst.machines_per_stage[stage] {
                push(
                    ConstraintFamily::MachineOverlap,
                    stage,
                    vec![job],
                    format!(
                        "machine {m} does not exist (stage has {})",
                        inst.machines_per_stage[stage]
                    ),
                );
            }
        }
    }

    for stage in 0..inst.n_stages.saturating_sub(1) {
        for job in 0..inst.n_jobs {
            let done = sched.start[stage][job] + inst.op(stage, job);
            let next = sched.start[stage + 1][job];
            if next < done - tol {
                push(
                    ConstraintFamily::Precedence,
                    stage + 1,
                    vec![job],
                    format!("starts at {next} before stage {stage} completes at {done}"),
                );
            }
        }
    }

    for stage in 0..inst.n_stages {
        let mut by_machine: BTreeMap<usize, Vec<(f64, f64, usize)>> = BTreeMap::new();
        for job in 0..inst.n_jobs {
            let s = sched.start[stage][job];
            by_machine
                .entry(sched.machine_of[stage][job])
                .or_default()
                .push((s, s + inst.op(stage, job), job));
        }
        for (machine, mut iv) in by_machine {
            iv.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
            for w in iv.windows(2) {
                if w[1].0 < w[0].1 - tol {
                    push(
                        ConstraintFamily::MachineOverlap,
                        stage,
                        vec![w[0].2, w[1].2],
                        format!(
                            "machine {machine}: [{}, {}) overlaps [{}, {})",
                            w[0].0, w[0].1, w[1].0, w[1].1
                        ),
                    );
                }
            }
        }
    }

    for stage in 0..inst.n_stages {
        for job in 0..inst.n_jobs {
            let slot = MachineSlot {
                stage,
                machine: sched.machine_of[stage][job],
            };
            if !sched.machine_start.contains_key(&(job, slot)) {
                push(
                    ConstraintFamily::MachineLink,
                    stage,
                    vec![job],
                    format!(
                        "no machine-level start recorded on machine {}",
                        slot.machine
                    ),
                );
            }
        }
    }
    for (&(job, slot), &v) in &sched.machine_start {
        if job >= inst.n_jobs || slot.stage >= inst.n_stages {
            push(
                ConstraintFamily::MachineLink,
                slot.stage,
                vec![job],
                "machine-level entry outside the instance".into(),
            );
            continue;
        }
        let u = sched.start[slot.stage][job];
        let assigned = sched.machine_of[slot.stage][job] == slot.machine;
        let bound = if assigned { tol } else { cfg.xi[slot.stage] };
        if (v - u).abs() > bound {
            push(
                ConstraintFamily::MachineLink,
                slot.stage,
                vec![job],
                format!(
                    "machine {} start {v} differs from stage start {u} by more than {bound}",
                    slot.machine
                ),
            );
        }
    }

    if inst.n_stages > 0 {
        let last = inst.n_stages - 1;
        let actual = (0..inst.n_jobs)
            .map(|j| sched.start[last][j] + inst.op(last, j))
            .fold(0.0, f64::max);
        if (actual - sched.makespan).abs() > tol.max(tol * actual.abs()) {
            push(
                ConstraintFamily::Makespan,
                last,
                vec![],
                format!("reported {} but schedule ends at {actual}", sched.makespan),
            );
        }
    }

    report.implied_inverse_reward = (0..inst.n_stages)
        .map(|i| sched.start[i].iter().sum::<f64>() + inst.op_times[i].iter().sum::<f64>())
        .collect();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_job() -> Instance {
        Instance::new("one", vec![1, 1, 1], vec![vec![2.0], vec![3.0], vec![4.0]]).unwrap()
    }

    fn parallel_stage() -> Instance {
        Instance::new("par", vec![3], vec![vec![5.0, 7.0, 2.0]]).unwrap()
    }

    fn two_stage() -> Instance {
        Instance::new(
            "two",
            vec![1, 1],
            vec![vec![3.0, 1.0, 2.0], vec![2.0, 4.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn single_job_is_serial_sum() {
        let s = decode_schedule(&single_job(), &[0]).unwrap();
        assert_eq!(s.makespan, 9.0);
        assert_eq!(s.start, vec![vec![0.0], vec![2.0], vec![5.0]]);
    }

    #[test]
    fn enough_machines_gives_max() {
        let inst = parallel_stage();
        for seq in [[0, 1, 2], [2, 1, 0], [1, 0, 2]] {
            assert_eq!(makespan(&inst, &seq).unwrap(), 7.0);
        }
    }

    #[test]
    fn two_stage_hand_simulation() {
        let inst = two_stage();
        let s = decode_schedule(&inst, &[0, 1, 2]).unwrap();
        let stage1_done: Vec<f64> = (0..3).map(|j| s.end(&inst, 0, j)).collect();
        assert_eq!(stage1_done, vec![3.0, 4.0, 6.0]);
        assert_eq!(s.start[1], vec![3.0, 5.0, 9.0]);
        assert_eq!(s.makespan, 10.0);
    }

    #[test]
    fn partial_makespan_examples() {
        assert_eq!(partial_makespan(&two_stage(), &[]).unwrap(), 0.0);
        assert_eq!(partial_makespan(&single_job(), &[0]).unwrap(), 9.0);
        assert_eq!(partial_makespan(&two_stage(), &[0, 1]).unwrap(), 9.0);
        assert!(matches!(
            partial_makespan(&two_stage(), &[1, 1]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn rejects_non_permutations() {
        let inst = two_stage();
        assert!(decode_schedule(&inst, &[0, 1]).is_err());
        assert!(decode_schedule(&inst, &[0, 1, 1]).is_err());
        assert!(makespan(&inst, &[0, 1, 3]).is_err());
    }

    #[test]
    fn lower_bound_examples() {
        assert_eq!(makespan_lower_bound(&single_job()), 9.0);
        let one_machine = Instance::new("lb", vec![1], vec![vec![5.0, 7.0, 2.0]]).unwrap();
        assert_eq!(makespan_lower_bound(&one_machine), 14.0);
        // jobs: 5, 5, 3; stage loads: 6, 7
        assert_eq!(makespan_lower_bound(&two_stage()), 7.0);
    }

    #[test]
    fn decomposition_adds_up() {
        let inst = two_stage();
        let s = decode_schedule(&inst, &[0, 1, 2]).unwrap();
        // critical job 2: first stage queued until job 1 dispatches at 3, then
        // 1 more for the machine; second stage arrives at 6, machine free at 9.
        assert_eq!(s.critical_job, 2);
        assert_eq!(s.critical_processing, 3.0);
        let total = s.stage_wait_total + s.machine_wait_total + s.critical_processing;
        assert!((total - s.makespan).abs() < 1e-12);
        assert_eq!(s.stage_wait_total, 3.0);
        assert_eq!(s.machine_wait_total, 4.0);
    }

    #[test]
    fn decoded_schedule_validates() {
        let inst = two_stage();
        let s = decode_schedule(&inst, &[2, 0, 1]).unwrap();
        let r = validate_schedule(&inst, &s, &ValidatorConfig::for_instance(&inst));
        assert!(r.is_empty(), "{:?}", r.violations);
        assert_eq!(r.implied_inverse_reward.len(), 2);
    }

    #[test]
    fn overlap_is_reported() {
        let inst = parallel_stage();
        let mut s = decode_schedule(&inst, &[0, 1, 2]).unwrap();
        s.machine_of[0][1] = s.machine_of[0][0];
        let r = validate_schedule(&inst, &s, &ValidatorConfig::for_instance(&inst));
        assert!(r
            .violations
            .iter()
            .any(|v| v.family == ConstraintFamily::MachineOverlap));
    }

    #[test]
    fn early_stage_start_is_reported() {
        let inst = single_job();
        let mut s = decode_schedule(&inst, &[0]).unwrap();
        s.start[1][0] = 1.0;
        s.machine_start.insert(
            (
                0,
                MachineSlot {
                    stage: 1,
                    machine: 0,
                },
            ),
            1.0,
        );
        let r = validate_schedule(&inst, &s, &ValidatorConfig::for_instance(&inst));
        assert_eq!(r.violations.len(), 1, "{:?}", r.violations);
        assert_eq!(r.violations[0].family, ConstraintFamily::Precedence);
        assert_eq!(r.violations[0].jobs, vec![0]);
    }

    #[test]
    fn machine_link_mismatch_is_reported() {
        let inst = single_job();
        let mut s = decode_schedule(&inst, &[0]).unwrap();
        s.machine_start.insert(
            (
                0,
                MachineSlot {
                    stage: 2,
                    machine: 0,
                },
            ),
            5.5,
        );
        let r = validate_schedule(&inst, &s, &ValidatorConfig::for_instance(&inst));
        assert_eq!(r.violations[0].family, ConstraintFamily::MachineLink);
    }

    #[test]
    fn gantt_and_json_exports() {
        let inst = two_stage();
        let s = decode_schedule(&inst, &[0, 1, 2]).unwrap();
        let csv = s.gantt_csv(&inst);
        assert!(csv.starts_with("stage,machine,job,start,end\n"));
        assert_eq!(csv.lines().count(), 7);
        let v: serde_json::Value = serde_json::from_str(&s.to_json(&inst)).unwrap();
        assert_eq!(v["makespan"], 10.0);
        assert_eq!(v["records"].as_array().unwrap().len(), 6);
    }
}
