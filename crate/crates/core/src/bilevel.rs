//! Coordinator between the two levels: an upper rollout builds a global
//! sequence, fixed-size windows of it are re-ordered by the lower model, and
//! a re-ordering is kept only when it strictly shortens the makespan.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    check_full, decode_schedule, makespan_unchecked, Schedule, Sequence, DEFAULT_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::lower_gpn::{
    decode_window, splice, DecodeMode, GpnModel, LowerConfig, LowerEpochStats, LowerTrainer,
    Window, WindowTask,
};
use crate::upper_ddqn::{
    greedy_rollout, Frontier, QNet, UpperConfig, UpperEpochStats, UpperTrainer,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptRule {
    IfImproved,
}

/// Where each pass places its windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowPlacement {
    /// Every pass starts at position 0.
    Aligned,
    /// Odd passes are shifted by half a window.
    Staggered,
    /// Each pass starts at a random offset drawn from the seed.
    RandomStart,
}

/// Windows of `seq` with stride `beta`, starting at 0. Each carries the
/// machine availability left by the prefix before it.
pub fn sample_windows(inst: &Instance, seq: &[usize], beta: usize) -> Result<Vec<Window>> {
    sample_windows_from(inst, seq, beta, 0)
}

/// Like [`sample_windows`] but with the first window cut short to `offset`
/// jobs when `0 < offset < beta`.
pub fn sample_windows_from(
    inst: &Instance,
    seq: &[usize],
    beta: usize,
    offset: usize,
) -> Result<Vec<Window>> {
    if beta == 0 {
        return Err(Error::Input("window size must be at least 1".into()));
    }
    let mut bounds = Vec::new();
    let mut start = 0;
    let first = offset % beta;
    if first > 0 && first < seq.len() {
        bounds.push((0, first));
        start = first;
    }
    while start < seq.len() {
        let end = (start + beta).min(seq.len());
        bounds.push((start, end));
        start = end;
    }
    let mut frontier = Frontier::new(inst);
    let mut done = 0;
    let mut out = Vec::with_capacity(bounds.len());
    for (a, b) in bounds {
        while done < a {
            frontier.append(inst, seq[done]);
            done += 1;
        }
        out.push(Window {
            start: a,
            jobs: seq[a..b].to_vec(),
            context: frontier.free.clone(),
        });
    }
    Ok(out)
}

/// Outcome of one merge attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub pass: usize,
    pub window_start: usize,
    pub window_len: usize,
    pub before: f64,
    pub after: f64,
    pub accepted: bool,
}

/// Replaces the window with `order` when that makespan is below
/// `current − tolerance`. Returns the kept sequence, whether it changed and
/// its makespan.
pub fn merge_order(
    inst: &Instance,
    seq: &[usize],
    window: &Window,
    order: &[usize],
    current: f64,
    tolerance: f64,
) -> (Vec<usize>, bool, f64) {
    let candidate = splice(seq, window, order);
    let m = makespan_unchecked(inst, &candidate);
    if m < current - tolerance {
        (candidate, true, m)
    } else {
        (seq.to_vec(), false, current)
    }
}

/// Lets the lower model propose an order for `window` and merges it with
/// the accept-if-improved rule.
pub fn refine_and_merge<R: Rng>(
    inst: &Instance,
    seq: &[usize],
    window: &Window,
    gpn: &GpnModel,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<(Sequence, bool)> {
    let current = makespan_unchecked(inst, seq);
    let (order, _) = decode_window(gpn, inst, window, mode, rng)?;
    let (out, accepted, _) = merge_order(inst, seq, window, &order, current, DEFAULT_TOLERANCE);
    Ok((Sequence(out), accepted))
}

fn pass_offset(
    placement: WindowPlacement,
    pass: usize,
    beta: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    match placement {
        WindowPlacement::Aligned => 0,
        WindowPlacement::Staggered => (pass % 2) * (beta / 2),
        WindowPlacement::RandomStart => rng.random_range(0..beta),
    }
}

/// Runs `passes` sweeps of windowed refinement over `seq`.
#[allow(clippy::too_many_arguments)]
fn refine_passes(
    inst: &Instance,
    seq: Vec<usize>,
    gpn: &GpnModel,
    beta: usize,
    passes: usize,
    placement: WindowPlacement,
    mode: DecodeMode,
    rng: &mut ChaCha8Rng,
    events: &mut Vec<MergeEvent>,
) -> Result<(Vec<usize>, f64)> {
    let mut seq = seq;
    let mut current = makespan_unchecked(inst, &seq);
    for pass in 0..passes {
        let offset = pass_offset(placement, pass, beta, rng);
        // windows keep their positions; only their contents change
        let windows = sample_windows_from(inst, &seq, beta, offset)?;
        for w in windows {
            let window = Window {
                jobs: seq[w.start..w.end()].to_vec(),
                ..w
            };
            if window.len() < 2 {
                continue;
            }
            let (order, _) = decode_window(gpn, inst, &window, mode, rng)?;
            let (next, accepted, m) =
                merge_order(inst, &seq, &window, &order, current, DEFAULT_TOLERANCE);
            events.push(MergeEvent {
                pass,
                window_start: window.start,
                window_len: window.len(),
                before: current,
                after: m,
                accepted,
            });
            seq = next;
            current = m;
        }
    }
    Ok((seq, current))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub beta: usize,
    pub loops: usize,
    pub placement: WindowPlacement,
    pub candidate_pool: Option<usize>,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            beta: 50,
            loops: 2,
            placement: WindowPlacement::Aligned,
            candidate_pool: Some(32),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub schedule: Schedule,
    pub initial_sequence: Sequence,
    pub initial_makespan: f64,
    pub events: Vec<MergeEvent>,
}

impl SolveReport {
    pub fn accepted(&self) -> usize {
        self.events.iter().filter(|e| e.accepted).count()
    }

    /// Makespan after the rollout and after every merge attempt.
    pub fn makespan_series(&self) -> Vec<f64> {
        std::iter::once(self.initial_makespan)
            .chain(self.events.iter().map(|e| e.after))
            .collect()
    }
}

/// Greedy upper rollout followed by `loops` passes of greedy window
/// refinement. Deterministic for fixed models, instance and config.
pub fn solve(
    inst: &Instance,
    qnet: &QNet,
    gpn: &GpnModel,
    config: &SolveConfig,
) -> Result<SolveReport> {
    if config.beta == 0 {
        return Err(Error::Config("window size must be at least 1".into()));
    }
    if qnet.n_stages() != inst.n_stages || gpn.n_stages != inst.n_stages {
        return Err(Error::Shape(format!(
            "models expect {} and {} stages, instance has {}",
            qnet.n_stages(),
            gpn.n_stages,
            inst.n_stages
        )));
    }
    let initial = greedy_rollout(qnet, inst, config.candidate_pool)?;
    refine_sequence(inst, initial, gpn, config)
}

/// `loops` passes of greedy window refinement starting from `initial`.
pub fn refine_sequence(
    inst: &Instance,
    initial: Sequence,
    gpn: &GpnModel,
    config: &SolveConfig,
) -> Result<SolveReport> {
    if config.beta == 0 {
        return Err(Error::Config("window size must be at least 1".into()));
    }
    let initial_makespan = sequence_makespan(inst, &initial)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut events = Vec::new();
    let (seq, _) = refine_passes(
        inst,
        initial.0.clone(),
        gpn,
        config.beta,
        config.loops,
        config.placement,
        DecodeMode::Greedy,
        &mut rng,
        &mut events,
    )?;
    Ok(SolveReport {
        schedule: decode_schedule(inst, &seq)?,
        initial_sequence: initial,
        initial_makespan,
        events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTrainConfig {
    pub beta: usize,
    pub loops: usize,
    pub accept: AcceptRule,
    pub placement: WindowPlacement,
    /// Upper-level settings; `epochs` is the budget per loop.
    pub upper: UpperConfig,
    /// Lower-level settings; `epochs` is the budget per loop.
    pub lower: LowerConfig,
    /// Refinement passes over each training sequence per loop.
    pub refine_passes: usize,
    pub seed: u64,
}

impl Default for CoTrainConfig {
    fn default() -> Self {
        CoTrainConfig {
            beta: 25,
            loops: 2,
            accept: AcceptRule::IfImproved,
            placement: WindowPlacement::Aligned,
            upper: UpperConfig::default(),
            lower: LowerConfig::default(),
            refine_passes: 1,
            seed: 0,
        }
    }
}

impl CoTrainConfig {
    pub fn validate(&self, n_jobs: usize) -> Result<()> {
        if self.beta == 0 || self.beta > n_jobs {
            return Err(Error::Config(format!(
                "window size {} outside [1, {n_jobs}]",
                self.beta
            )));
        }
        if self.loops == 0 {
            return Err(Error::Config("at least one loop is required".into()));
        }
        self.upper.validate()?;
        self.lower.validate()
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            beta: self.beta,
            loops: self.loops,
            placement: self.placement,
            candidate_pool: self.upper.candidate_pool,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopStats {
    pub index: usize,
    /// Per training instance, the best makespan known after this loop.
    pub best_makespans: Vec<f64>,
    pub mean_best_makespan: f64,
    /// Mean makespan of this loop's greedy upper rollouts.
    pub mean_rollout_makespan: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub upper_seconds: f64,
    pub lower_seconds: f64,
    pub refine_seconds: f64,
    pub upper_epochs: Vec<UpperEpochStats>,
    pub lower_epochs: Vec<LowerEpochStats>,
    pub events: Vec<MergeEvent>,
}

pub struct CoTrainOutcome {
    pub qnet: QNet,
    pub gpn: GpnModel,
    pub loops: Vec<LoopStats>,
}

/// Alternates upper training, lower training on windows of the current
/// sequences, refinement and feedback of the refined sequences into the
/// upper replay buffer.
pub fn co_train(instances: &[Arc<Instance>], config: &CoTrainConfig) -> Result<CoTrainOutcome> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Config("no training instances".into()))?;
    if let Some(bad) = instances.iter().find(|i| i.n_stages != first.n_stages) {
        return Err(Error::Config(format!(
            "instance {} has {} stages, expected {}",
            bad.name, bad.n_stages, first.n_stages
        )));
    }
    let min_jobs = instances.iter().map(|i| i.n_jobs).min().unwrap_or(0);
    config.validate(min_jobs)?;
    let mut upper = UpperTrainer::new(first.n_stages, config.upper.clone())?;
    let mut lower = LowerTrainer::new(first.n_stages, config.lower.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Vec<Option<(Vec<usize>, f64)>> = vec![None; instances.len()];
    let mut loops = Vec::with_capacity(config.loops);
    let mut upper_epoch = 0;
    for index in 0..config.loops {
        let t = Instant::now();
        let mut upper_epochs = Vec::with_capacity(config.upper.epochs);
        for _ in 0..config.upper.epochs {
            upper_epochs
                .push(upper.run_epoch(instances, upper_epoch.min(config.upper.epochs - 1))?);
            upper_epoch += 1;
        }
        let mut rollout_total = 0.0;
        for (inst, slot) in instances.iter().zip(best.iter_mut()) {
            let seq = greedy_rollout(&upper.qnet, inst, config.upper.candidate_pool)?;
            let m = makespan_unchecked(inst, &seq);
            rollout_total += m;
            if slot.as_ref().is_none_or(|(_, b)| m < *b) {
                *slot = Some((seq.0, m));
            }
        }
        let upper_seconds = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut pool = Vec::new();
        for (inst, slot) in instances.iter().zip(&best) {
            let (seq, _) = slot.as_ref().expect("filled above");
            for w in sample_windows(inst, seq, config.beta)? {
                if w.len() >= 2 {
                    pool.push(WindowTask {
                        instance: Arc::clone(inst),
                        parent: seq.clone(),
                        window: w,
                    });
                }
            }
        }
        let mut lower_epochs = Vec::with_capacity(config.lower.epochs);
        if !pool.is_empty() {
            for e in 0..config.lower.epochs {
                lower_epochs.push(lower.epoch(&pool, e)?);
            }
        }
        let lower_seconds = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut events = Vec::new();
        for (inst, slot) in instances.iter().zip(best.iter_mut()) {
            let (seq, _) = slot.take().expect("filled above");
            let before = events.len();
            let (refined, m) = refine_passes(
                inst,
                seq,
                &lower.model,
                config.beta,
                config.refine_passes,
                config.placement,
                DecodeMode::Greedy,
                &mut rng,
                &mut events,
            )?;
            if events[before..].iter().any(|e| e.accepted) {
                upper.replay_sequence(inst, &refined)?;
            }
            *slot = Some((refined, m));
        }
        let refine_seconds = t.elapsed().as_secs_f64();

        let best_makespans: Vec<f64> = best
            .iter()
            .map(|s| s.as_ref().map_or(0.0, |b| b.1))
            .collect();
        let accepted = events.iter().filter(|e| e.accepted).count();
        loops.push(LoopStats {
            index,
            mean_best_makespan: best_makespans.iter().sum::<f64>() / instances.len() as f64,
            best_makespans,
            mean_rollout_makespan: rollout_total / instances.len() as f64,
            accepted,
            rejected: events.len() - accepted,
            upper_seconds,
            lower_seconds,
            refine_seconds,
            upper_epochs,
            lower_epochs,
            events,
        });
    }
    Ok(CoTrainOutcome {
        qnet: upper.qnet,
        gpn: lower.model,
        loops,
    })
}

/// Config echo, per-loop stats and final makespans of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: CoTrainConfig,
    pub loops: Vec<LoopStats>,
    pub final_makespans: Vec<f64>,
}

impl RunManifest {
    pub fn new(config: &CoTrainConfig, outcome: &CoTrainOutcome) -> Self {
        RunManifest {
            config: config.clone(),
            final_makespans: outcome
                .loops
                .last()
                .map(|l| l.best_makespans.clone())
                .unwrap_or_default(),
            loops: outcome.loops.clone(),
        }
    }
}

/// Checks that no merge raised the makespan and that every accepted merge
/// strictly lowered it.
pub fn check_monotone(events: &[MergeEvent]) -> Result<()> {
    for e in events {
        if e.accepted && !(e.after < e.before) {
            return Err(Error::Numeric(format!(
                "accepted merge at {} went from {} to {}",
                e.window_start, e.before, e.after
            )));
        }
        if e.after > e.before {
            return Err(Error::Numeric(format!(
                "makespan rose from {} to {} at window {}",
                e.before, e.after, e.window_start
            )));
        }
    }
    Ok(())
}

/// Makespan of `seq` when it is a full permutation.
pub fn sequence_makespan(inst: &Instance, seq: &[usize]) -> Result<f64> {
    check_full(seq, inst.n_jobs)?;
    Ok(makespan_unchecked(inst, seq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::makespan;
    use crate::heuristics::brute_force_optimal;
    use crate::instance::{generate, GenConfig, OpTimeDist};

    fn inst(n: usize, s: usize, m: usize, seed: u64) -> Arc<Instance> {
        Arc::new(generate(&GenConfig::new(n, s, m, OpTimeDist::default(), seed)).unwrap())
    }

    fn sizes(ws: &[Window]) -> Vec<usize> {
        ws.iter().map(|w| w.len()).collect()
    }

    #[test]
    fn window_examples() {
        let i = inst(10, 2, 2, 1);
        let seq: Vec<usize> = (0..10).collect();
        let w = sample_windows(&i, &seq, 5).unwrap();
        assert_eq!(sizes(&w), vec![5, 5]);
        assert_eq!((w[0].start, w[1].start), (0, 5));
        assert_eq!(sizes(&sample_windows(&i, &seq, 4).unwrap()), vec![4, 4, 2]);
        assert_eq!(sizes(&sample_windows(&i, &seq, 10).unwrap()), vec![10]);
        assert_eq!(sizes(&sample_windows(&i, &seq, 99).unwrap()), vec![10]);
        assert!(sample_windows(&i, &[], 3).unwrap().is_empty());
        assert!(sample_windows(&i, &seq, 0).is_err());
        assert!(w[0].context.iter().flatten().all(|&t| t == 0.0));
        assert!(w[1].context.iter().flatten().any(|&t| t > 0.0));
    }

    #[test]
    fn offset_windows_cover_every_position_once() {
        let i = inst(11, 2, 1, 2);
        let seq: Vec<usize> = (0..11).rev().collect();
        for beta in 1..13 {
            for off in 0..beta {
                let ws = sample_windows_from(&i, &seq, beta, off).unwrap();
                let mut covered = Vec::new();
                for w in &ws {
                    assert_eq!(w.jobs, seq[w.start..w.end()]);
                    covered.extend(w.start..w.end());
                }
                assert_eq!(covered, (0..11).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn identical_proposal_is_rejected() {
        let i = inst(6, 2, 1, 3);
        let seq: Vec<usize> = (0..6).collect();
        let w = &sample_windows(&i, &seq, 3).unwrap()[1];
        let m = makespan(&i, &seq).unwrap();
        let (out, accepted, after) = merge_order(&i, &seq, w, &w.jobs, m, DEFAULT_TOLERANCE);
        assert!(!accepted);
        assert_eq!(out, seq);
        assert_eq!(after, m);
    }

    #[test]
    fn oracle_order_is_accepted() {
        let i = Instance::new(
            "two",
            vec![1, 1],
            vec![vec![3.0, 1.0, 2.0], vec![2.0, 4.0, 1.0]],
        )
        .unwrap();
        let seq = vec![0, 1, 2];
        let oracle = brute_force_optimal(&i).unwrap();
        let w = &sample_windows(&i, &seq, 3).unwrap()[0];
        let (out, accepted, after) =
            merge_order(&i, &seq, w, &oracle.best_seq, 10.0, DEFAULT_TOLERANCE);
        assert!(accepted);
        assert_eq!(after, 8.0);
        assert_eq!(out, oracle.best_seq.0);
    }

    #[test]
    fn merges_never_increase_makespan() {
        let i = inst(12, 3, 2, 4);
        let gpn = GpnModel::new(3, 8, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seq: Vec<usize> = (0..12).collect();
        for _ in 0..20 {
            for w in sample_windows(&i, &seq, 4).unwrap() {
                let before = makespan(&i, &seq).unwrap();
                let (next, accepted) =
                    refine_and_merge(&i, &seq, &w, &gpn, DecodeMode::Sample, &mut rng).unwrap();
                let after = makespan(&i, &next).unwrap();
                assert!(after <= before);
                assert!(next.is_permutation_of(12));
                if accepted {
                    assert!(after < before);
                } else {
                    assert_eq!(next.0, seq);
                }
                seq = next.0;
            }
        }
    }

    fn tiny_config() -> CoTrainConfig {
        CoTrainConfig {
            beta: 4,
            loops: 3,
            upper: UpperConfig {
                epochs: 4,
                hidden: 8,
                batch_size: 8,
                episodes_per_epoch: 2,
                train_steps_per_epoch: 2,
                ..UpperConfig::default()
            },
            lower: LowerConfig {
                epochs: 3,
                hidden: 8,
                windows_per_epoch: 2,
                samples_per_window: 2,
                ..LowerConfig::default()
            },
            ..CoTrainConfig::default()
        }
    }

    #[test]
    fn co_train_best_series_is_non_increasing() {
        let set: Vec<Arc<Instance>> = (0..3).map(|k| inst(8, 2, 2, 10 + k)).collect();
        let out = co_train(&set, &tiny_config()).unwrap();
        assert_eq!(out.loops.len(), 3);
        for pair in out.loops.windows(2) {
            for (a, b) in pair[0].best_makespans.iter().zip(&pair[1].best_makespans) {
                assert!(b <= a);
            }
        }
        for l in &out.loops {
            check_monotone(&l.events).unwrap();
        }
    }

    #[test]
    fn single_loop_whole_window_degenerates() {
        let set = vec![inst(5, 2, 1, 20)];
        let cfg = CoTrainConfig {
            beta: 5,
            loops: 1,
            ..tiny_config()
        };
        let out = co_train(&set, &cfg).unwrap();
        let l = &out.loops[0];
        assert_eq!(l.events.len(), 1);
        assert_eq!(l.events[0].window_len, 5);
        assert!(l.best_makespans[0] <= l.mean_rollout_makespan);
    }

    #[test]
    fn solve_properties() {
        let set: Vec<Arc<Instance>> = (0..2).map(|k| inst(7, 2, 1, 30 + k)).collect();
        let out = co_train(&set, &tiny_config()).unwrap();
        let held = inst(7, 2, 1, 99);
        let cfg = SolveConfig {
            beta: 3,
            ..SolveConfig::default()
        };
        let a = solve(&held, &out.qnet, &out.gpn, &cfg).unwrap();
        let b = solve(&held, &out.qnet, &out.gpn, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.schedule.makespan <= a.initial_makespan);
        check_monotone(&a.events).unwrap();
        let oracle = brute_force_optimal(&held).unwrap();
        assert!(a.schedule.makespan >= oracle.best_makespan - 1e-12);
    }

    #[test]
    fn one_job_solve_is_trivial() {
        let one = Instance::new("one", vec![1, 3], vec![vec![2.0], vec![5.0]]).unwrap();
        let q = QNet::new(2, 8, 10, 0);
        let g = GpnModel::new(2, 8, 0).unwrap();
        let r = solve(&one, &q, &g, &SolveConfig::default()).unwrap();
        assert_eq!(r.schedule.makespan, 7.0);
        assert!(r.events.is_empty());
    }

    #[test]
    fn stage_mismatch_is_rejected() {
        let i = inst(4, 3, 1, 5);
        let q = QNet::new(2, 8, 10, 0);
        let g = GpnModel::new(2, 8, 0).unwrap();
        assert!(solve(&i, &q, &g, &SolveConfig::default()).is_err());
    }

    #[test]
    fn config_rejects_oversized_window() {
        let set = vec![inst(4, 2, 1, 6)];
        let cfg = CoTrainConfig {
            beta: 5,
            ..tiny_config()
        };
        assert!(co_train(&set, &cfg).is_err());
    }
}
