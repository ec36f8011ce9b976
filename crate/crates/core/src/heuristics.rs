//! Constructive baselines and the exhaustive oracle.

use crate::engine::{makespan_unchecked, Sequence};
use crate::error::{Error, Result};
use crate::instance::Instance;

/// Largest instance the exhaustive oracle accepts (9! = 362 880 permutations).
pub const ORACLE_MAX_JOBS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_seq: Sequence,
    pub best_makespan: f64,
    pub evaluated: usize,
}

/// Greedy append: repeatedly add the unscheduled job that yields the smallest
/// partial makespan. Ties go to the lowest job index.
pub fn greedy_sequence(inst: &Instance) -> Sequence {
    let n = inst.n_jobs;
    let mut seq = Vec::with_capacity(n);
    let mut remaining: Vec<usize> = (0..n).collect();
    while !remaining.is_empty() {
        let mut best = (f64::INFINITY, 0);
        for (idx, &job) in remaining.iter().enumerate() {
            seq.push(job);
            let m = makespan_unchecked(inst, &seq);
            seq.pop();
            if m < best.0 {
                best = (m, idx);
            }
        }
        seq.push(remaining.remove(best.1));
    }
    Sequence(seq)
}

/// NEH: order jobs by descending total processing time (ties by index), then
/// insert each at the position minimizing the partial makespan (ties to the
/// earliest position).
pub fn neh_sequence(inst: &Instance) -> Sequence {
    let mut order: Vec<usize> = (0..inst.n_jobs).collect();
    let totals: Vec<f64> = order.iter().map(|&j| inst.job_total(j)).collect();
    order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]).then(a.cmp(&b)));

    let mut seq: Vec<usize> = Vec::with_capacity(inst.n_jobs);
    let mut trial: Vec<usize> = Vec::with_capacity(inst.n_jobs);
    for job in order {
        let mut best = (f64::INFINITY, 0);
        for pos in 0..=seq.len() {
            trial.clear();
            trial.extend_from_slice(&seq[..pos]);
            trial.push(job);
            trial.extend_from_slice(&seq[pos..]);
            let m = makespan_unchecked(inst, &trial);
            if m < best.0 {
                best = (m, pos);
            }
        }
        seq.insert(best.1, job);
    }
    Sequence(seq)
}

/// Exact minimum over all permutations. Ties keep the lexicographically
/// first permutation.
pub fn brute_force_optimal(inst: &Instance) -> Result<OracleResult> {
    let n = inst.n_jobs;
    if n > ORACLE_MAX_JOBS {
        return Err(Error::Refused(format!(
            "exhaustive search over {n}! permutations (limit {ORACLE_MAX_JOBS} jobs)"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = OracleResult {
        best_seq: Sequence(perm.clone()),
        best_makespan: makespan_unchecked(inst, &perm),
        evaluated: 1,
    };
    while next_permutation(&mut perm) {
        let m = makespan_unchecked(inst, &perm);
        best.evaluated += 1;
        if m < best.best_makespan {
            best.best_makespan = m;
            best.best_seq = Sequence(perm.clone());
        }
    }
    Ok(best)
}

/// Advances `v` to the next permutation in lexicographic order; returns
/// `false` after the last one.
pub fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
