//! Upper level: a double deep Q-network that builds a full job sequence by
//! appending one job at a time.
//!
//! The state is the scheduled prefix, summarized by the machine availability
//! it leaves at each stage. A candidate job is scored by a small MLP over
//! `[frontier summary ‖ candidate operation times ‖ fraction scheduled]`.
//! Training follows the double-Q rule: the online network picks the next
//! action, the periodically synced target network evaluates it.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{check_partial, decode_schedule, makespan_unchecked, Sequence};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::neural::{
    adam_update, clip_global_norm, Activation, AdamConfig, AdamState, Checkpoint, Dense, ParamStore,
};

/// Per-step reward used when recording episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `1 / partial makespan` of the prefix after the action.
    PartialMakespan,
    /// `1 / (partial makespan − machine wait)` of the prefix: the reciprocal
    /// of the stage-level part of the makespan.
    StageWait,
    /// `−(M_t − M_{t−1}) / mean operation time`. The undiscounted return of
    /// an episode is `−makespan / mean operation time`.
    MakespanIncrement,
    /// The increment reward plus the chosen job's mean operation time over
    /// the instance mean. Shifts every undiscounted return by the same
    /// constant, `n_jobs`, so the ordering of sequences is unchanged.
    ShapedIncrement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperConfig {
    pub hidden: usize,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub sync_interval: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the epochs over which epsilon is annealed linearly.
    pub eps_decay_fraction: f64,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub train_steps_per_epoch: usize,
    pub grad_clip: f64,
    pub reward: RewardMode,
    /// Number of unscheduled jobs scored per step, taken in order of
    /// descending total processing time. `None` scores every unscheduled job.
    pub candidate_pool: Option<usize>,
    pub seed: u64,
}

impl Default for UpperConfig {
    fn default() -> Self {
        UpperConfig {
            hidden: 64,
            gamma: 1.0,
            lr: 1e-3,
            batch_size: 200,
            replay_capacity: 100_000,
            sync_interval: 100,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.5,
            epochs: 500,
            episodes_per_epoch: 4,
            train_steps_per_epoch: 16,
            grad_clip: 1.0,
            reward: RewardMode::ShapedIncrement,
            candidate_pool: Some(32),
            seed: 0,
        }
    }
}

impl UpperConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "epochs, batch size and hidden width must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "discount {} outside [0, 1]",
                self.gamma
            )));
        }
        if self.candidate_pool == Some(0) {
            return Err(Error::Config(
                "candidate pool must hold at least one job".into(),
            ));
        }
        if self.sync_interval == 0 {
            return Err(Error::Config("sync interval must be positive".into()));
        }
        Ok(())
    }

    pub fn epsilon_at(&self, epoch: usize) -> f64 {
        let span = (self.eps_decay_fraction * self.epochs as f64).max(1.0);
        let t = (epoch as f64 / span).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * t
    }
}

/// Length of the feature vector for an instance with `n_stages` stages.
pub fn feature_len(n_stages: usize) -> usize {
    3 * n_stages + n_stages + 1
}

/// Machine availability per stage after appending the scheduled jobs one by
/// one, each dispatched after every earlier job at every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    pub free: Vec<Vec<f64>>,
}

impl Frontier {
    pub fn new(inst: &Instance) -> Self {
        Frontier {
            free: inst
                .machines_per_stage
                .iter()
                .map(|&m| vec![0.0; m])
                .collect(),
        }
    }

    pub fn append(&mut self, inst: &Instance, job: usize) {
        let mut ready = 0.0_f64;
        for (stage, free) in self.free.iter_mut().enumerate() {
            let mut k = 0;
            for m in 1..free.len() {
                if free[m] < free[k] {
                    k = m;
                }
            }
            let end = ready.max(free[k]) + inst.op(stage, job);
            free[k] = end;
            ready = end;
        }
    }

    /// Latest machine availability at the last stage.
    pub fn horizon(&self) -> f64 {
        self.free
            .last()
            .map_or(0.0, |f| f.iter().copied().fold(0.0, f64::max))
    }

    /// `[min, mean, max]` per stage of availability relative to the earliest
    /// free machine of the first stage, clamped at zero and divided by `scale`.
    pub fn summary(&self, scale: f64) -> Vec<f64> {
        let base = self.free[0].iter().copied().fold(f64::INFINITY, f64::min);
        let mut out = Vec::with_capacity(3 * self.free.len());
        for free in &self.free {
            let rel = |t: f64| ((t - base) / scale).max(0.0);
            let min = free.iter().map(|&t| rel(t)).fold(f64::INFINITY, f64::min);
            let max = free.iter().map(|&t| rel(t)).fold(0.0, f64::max);
            let mean = free.iter().map(|&t| rel(t)).sum::<f64>() / free.len() as f64;
            out.extend_from_slice(&[min, mean, max]);
        }
        out
    }
}

/// Upper-level state: the scheduled prefix and what it leaves behind.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperState {
    pub scheduled: Vec<usize>,
    pub is_scheduled: Vec<bool>,
    pub frontier: Frontier,
    /// Mean operation time of the instance; every time feature is divided by it.
    pub scale: f64,
    /// Jobs by descending total processing time, ties by index.
    pool_order: Arc<Vec<usize>>,
}

impl UpperState {
    pub fn new(inst: &Instance) -> Self {
        let totals: Vec<f64> = (0..inst.n_jobs).map(|j| inst.job_total(j)).collect();
        let mut order: Vec<usize> = (0..inst.n_jobs).collect();
        order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]).then(a.cmp(&b)));
        UpperState {
            scheduled: Vec::with_capacity(inst.n_jobs),
            is_scheduled: vec![false; inst.n_jobs],
            frontier: Frontier::new(inst),
            scale: inst.mean_op_time(),
            pool_order: Arc::new(order),
        }
    }

    pub fn push(&mut self, inst: &Instance, job: usize) -> Result<()> {
        if self.is_scheduled.get(job).copied().unwrap_or(true) {
            return Err(Error::Input(format!("job {job} cannot be scheduled again")));
        }
        self.is_scheduled[job] = true;
        self.scheduled.push(job);
        self.frontier.append(inst, job);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.scheduled.len() == self.is_scheduled.len()
    }

    /// Frontier makespan of the prefix.
    pub fn elapsed(&self) -> f64 {
        self.frontier.horizon()
    }

    /// Unscheduled jobs eligible at this step, ascending by job index.
    pub fn candidates(&self, pool: Option<usize>) -> Vec<usize> {
        let limit = pool.unwrap_or(usize::MAX);
        let mut out: Vec<usize> = self
            .pool_order
            .iter()
            .copied()
            .filter(|&j| !self.is_scheduled[j])
            .take(limit)
            .collect();
        out.sort_unstable();
        out
    }
}

/// Feature vector of appending `candidate` to `state`.
pub fn encode(inst: &Instance, state: &UpperState, candidate: usize) -> Result<Vec<f64>> {
    if candidate >= inst.n_jobs {
        return Err(Error::Input(format!("job {candidate} out of range")));
    }
    if state.is_scheduled[candidate] {
        return Err(Error::Input(format!(
            "job {candidate} is already scheduled"
        )));
    }
    let mut f = state.frontier.summary(state.scale);
    f.extend(inst.op_times.iter().map(|row| row[candidate] / state.scale));
    f.push(state.scheduled.len() as f64 / inst.n_jobs as f64);
    Ok(f)
}

/// Online and target Q-networks sharing one architecture.
#[derive(Debug, Clone)]
pub struct QNet {
    pub online: ParamStore,
    pub target: ParamStore,
    layers: [Dense; 3],
    pub input_dim: usize,
    pub hidden: usize,
    pub sync_interval: u64,
    pub updates: u64,
}

impl QNet {
    pub fn new(n_stages: usize, hidden: usize, sync_interval: u64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_dim = feature_len(n_stages);
        let mut store = ParamStore::new();
        let layers = [
            Dense::new(
                &mut store,
                "q.l1",
                input_dim,
                hidden,
                Activation::Relu,
                &mut rng,
            ),
            Dense::new(
                &mut store,
                "q.l2",
                hidden,
                hidden,
                Activation::Relu,
                &mut rng,
            ),
            Dense::new(
                &mut store,
                "q.out",
                hidden,
                1,
                Activation::Identity,
                &mut rng,
            ),
        ];
        QNet {
            target: store.clone(),
            online: store,
            layers,
            input_dim,
            hidden,
            sync_interval,
            updates: 0,
        }
    }

    pub fn n_stages(&self) -> usize {
        (self.input_dim - 1) / 4
    }

    fn eval(&self, params: &ParamStore, features: &[f64]) -> f64 {
        let h1 = self.layers[0].infer(params, features);
        let h2 = self.layers[1].infer(params, &h1);
        self.layers[2].infer(params, &h2)[0]
    }

    pub fn q_online(&self, features: &[f64]) -> f64 {
        self.eval(&self.online, features)
    }

    pub fn q_target(&self, features: &[f64]) -> f64 {
        self.eval(&self.target, features)
    }

    /// θ* ← θ.
    pub fn sync(&mut self) {
        self.target
            .copy_from(&self.online)
            .expect("online and target share a layout");
    }

    /// Squared-error loss over `(features, target)` pairs and its gradient
    /// with respect to the online parameters.
    pub fn loss_and_grad(&self, batch: &[(Vec<f64>, f64)]) -> Result<(f64, ParamStore)> {
        let mut grads = self.online.zeros_like();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (x, y) in batch {
            let c1 = self.layers[0].forward(&self.online, x)?;
            let c2 = self.layers[1].forward(&self.online, &c1.output)?;
            let c3 = self.layers[2].forward(&self.online, &c2.output)?;
            let err = c3.output[0] - y;
            loss += err * err * scale;
            let g3 =
                self.layers[2].backward(&self.online, &c3, &[2.0 * err * scale], &mut grads)?;
            let g2 = self.layers[1].backward(&self.online, &c2, &g3, &mut grads)?;
            self.layers[0].backward(&self.online, &c1, &g2, &mut grads)?;
        }
        Ok((loss, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.online.to_checkpoint()
    }

    /// Loads online parameters and syncs the target.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        self.online.load_checkpoint(ck)?;
        self.sync();
        Ok(())
    }
}

/// Shared context for the transitions of one episode.
#[derive(Debug)]
pub struct EpisodeContext {
    pub instance: Arc<Instance>,
    pub sequence: Vec<usize>,
    /// Frontier after each step: `frontiers[t]` follows `sequence[..=t]`.
    pub frontiers: Vec<Frontier>,
    pub candidate_pool: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub features: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub terminal: bool,
    episode: Arc<EpisodeContext>,
    step: usize,
}

impl Transition {
    /// Features of every candidate in the next state; empty when terminal.
    pub fn next_features(&self) -> Vec<Vec<f64>> {
        if self.terminal {
            return Vec::new();
        }
        let ep = &self.episode;
        let inst = &ep.instance;
        let mut state = UpperState::new(inst);
        for &j in &ep.sequence[..=self.step] {
            state.is_scheduled[j] = true;
        }
        state.scheduled = ep.sequence[..=self.step].to_vec();
        state.frontier = ep.frontiers[self.step].clone();
        state
            .candidates(ep.candidate_pool)
            .into_iter()
            .map(|c| encode(inst, &state, c).expect("candidate is unscheduled"))
            .collect()
    }
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        ReplayBuffer {
            items: Vec::new(),
            capacity: capacity.max(1),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `count` transitions drawn uniformly with replacement.
    pub fn sample(&mut self, count: usize) -> Vec<&Transition> {
        let n = self.items.len();
        let idx: Vec<usize> = (0..count).map(|_| self.rng.random_range(0..n)).collect();
        idx.into_iter().map(|i| &self.items[i]).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

/// ε-greedy choice among the eligible candidates. Greedy ties go to the
/// lowest job index.
pub fn select_action<R: Rng>(
    qnet: &QNet,
    inst: &Instance,
    state: &UpperState,
    epsilon: f64,
    candidate_pool: Option<usize>,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Input(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let candidates = state.candidates(candidate_pool);
    if candidates.is_empty() {
        return Err(Error::Input("no unscheduled job left".into()));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(candidates[rng.random_range(0..candidates.len())]);
    }
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for &c in &candidates {
        let q = qnet.q_online(&encode(inst, state, c)?);
        if q > best.0 {
            best = (q, c);
        }
    }
    Ok(best.1)
}

/// `1 / partial_makespan(prefix_after)`, where `prefix_after` must extend
/// `prefix_before` by exactly one job.
pub fn step_reward(
    inst: &Instance,
    prefix_before: &[usize],
    prefix_after: &[usize],
) -> Result<f64> {
    if prefix_after.len() != prefix_before.len() + 1 || !prefix_after.starts_with(prefix_before) {
        return Err(Error::Input(
            "the new prefix must extend the old one by one job".into(),
        ));
    }
    check_partial(prefix_after, inst.n_jobs)?;
    let m = makespan_unchecked(inst, prefix_after);
    if m <= 0.0 {
        return Err(Error::Numeric("zero partial makespan".into()));
    }
    Ok(1.0 / m)
}

/// Reward for each step of `seq` (a full or partial sequence) under `mode`.
pub fn episode_rewards(inst: &Instance, seq: &[usize], mode: RewardMode) -> Result<Vec<f64>> {
    check_partial(seq, inst.n_jobs)?;
    let scale = inst.mean_op_time();
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(seq.len());
    for t in 1..=seq.len() {
        let prefix = &seq[..t];
        let r = match mode {
            RewardMode::PartialMakespan => step_reward(inst, &seq[..t - 1], prefix)?,
            RewardMode::StageWait => {
                let sub = inst.restrict(prefix);
                let ident: Vec<usize> = (0..t).collect();
                let s = decode_schedule(&sub, &ident)?;
                1.0 / (s.makespan - s.machine_wait_total)
            }
            RewardMode::MakespanIncrement | RewardMode::ShapedIncrement => {
                let m = makespan_unchecked(inst, prefix);
                let mut r = -(m - prev) / scale;
                prev = m;
                if mode == RewardMode::ShapedIncrement {
                    r += inst.job_total(seq[t - 1]) / (inst.n_stages as f64 * scale);
                }
                r
            }
        };
        out.push(r);
    }
    Ok(out)
}

/// How actions are chosen during an episode.
pub enum Policy<'a, R: Rng> {
    EpsilonGreedy {
        epsilon: f64,
        rng: &'a mut R,
    },
    /// Replays a fixed full sequence.
    Forced(&'a [usize]),
}

/// Plays one episode from the empty prefix. When `buffer` is given, one
/// transition per step is recorded, the last marked terminal.
pub fn play_episode<R: Rng>(
    qnet: &QNet,
    inst: &Arc<Instance>,
    policy: Policy<'_, R>,
    candidate_pool: Option<usize>,
    reward: RewardMode,
    buffer: Option<&mut ReplayBuffer>,
) -> Result<Sequence> {
    let n = inst.n_jobs;
    let mut state = UpperState::new(inst);
    let mut features = Vec::with_capacity(n);
    let mut frontiers = Vec::with_capacity(n);
    let record = buffer.is_some();
    match policy {
        Policy::EpsilonGreedy { epsilon, rng } => {
            while !state.is_complete() {
                let a = select_action(qnet, inst, &state, epsilon, candidate_pool, rng)?;
                if record {
                    features.push(encode(inst, &state, a)?);
                }
                state.push(inst, a)?;
                if record {
                    frontiers.push(state.frontier.clone());
                }
            }
        }
        Policy::Forced(seq) => {
            crate::engine::check_full(seq, n)?;
            for &a in seq {
                if record {
                    features.push(encode(inst, &state, a)?);
                }
                state.push(inst, a)?;
                if record {
                    frontiers.push(state.frontier.clone());
                }
            }
        }
    }
    let seq = state.scheduled;
    if let Some(buffer) = buffer {
        let rewards = episode_rewards(inst, &seq, reward)?;
        let ctx = Arc::new(EpisodeContext {
            instance: Arc::clone(inst),
            sequence: seq.clone(),
            frontiers,
            candidate_pool,
        });
        for (t, (f, r)) in features.into_iter().zip(rewards).enumerate() {
            buffer.push(Transition {
                features: f,
                action: seq[t],
                reward: r,
                terminal: t + 1 == n,
                episode: Arc::clone(&ctx),
                step: t,
            });
        }
    }
    Ok(Sequence(seq))
}

/// Convenience wrapper: an ε-greedy episode, optionally recorded.
pub fn rollout<R: Rng>(
    qnet: &QNet,
    inst: &Arc<Instance>,
    epsilon: f64,
    config: &UpperConfig,
    rng: &mut R,
    buffer: Option<&mut ReplayBuffer>,
) -> Result<Sequence> {
    play_episode(
        qnet,
        inst,
        Policy::EpsilonGreedy { epsilon, rng },
        config.candidate_pool,
        config.reward,
        buffer,
    )
}

/// Greedy (ε = 0) rollout; deterministic for fixed parameters.
pub fn greedy_rollout(
    qnet: &QNet,
    inst: &Instance,
    candidate_pool: Option<usize>,
) -> Result<Sequence> {
    let mut state = UpperState::new(inst);
    let mut rng = NoRng;
    while !state.is_complete() {
        let a = select_action(qnet, inst, &state, 0.0, candidate_pool, &mut rng)?;
        state.push(inst, a)?;
    }
    Ok(Sequence(state.scheduled))
}

/// Double-Q regression targets for a batch of transitions.
pub fn ddqn_targets(qnet: &QNet, batch: &[&Transition], gamma: f64) -> Vec<(Vec<f64>, f64)> {
    batch
        .iter()
        .map(|t| {
            let mut y = t.reward;
            if !t.terminal && gamma > 0.0 {
                let next = t.next_features();
                let mut best = (f64::NEG_INFINITY, 0);
                for (k, f) in next.iter().enumerate() {
                    let q = qnet.q_online(f);
                    if q > best.0 {
                        best = (q, k);
                    }
                }
                y += gamma * qnet.q_target(&next[best.1]);
            }
            (t.features.clone(), y)
        })
        .collect()
}

/// One double-Q update on a uniformly sampled batch. Returns the batch loss
/// before the step.
pub fn ddqn_train_step(
    qnet: &mut QNet,
    adam: &mut AdamState,
    buffer: &mut ReplayBuffer,
    batch_size: usize,
    gamma: f64,
    grad_clip: f64,
) -> Result<f64> {
    if buffer.len() < batch_size || batch_size == 0 {
        return Err(Error::Input(format!(
            "replay buffer holds {} transitions, batch needs {batch_size}",
            buffer.len()
        )));
    }
    let batch = buffer.sample(batch_size);
    let pairs = ddqn_targets(qnet, &batch, gamma);
    let (loss, mut grads) = qnet.loss_and_grad(&pairs)?;
    if grad_clip > 0.0 {
        clip_global_norm(&mut grads, grad_clip);
    }
    adam_update(&mut qnet.online, &grads, adam)?;
    qnet.updates += 1;
    if qnet.updates.is_multiple_of(qnet.sync_interval) {
        qnet.sync();
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperEpochStats {
    pub epoch: usize,
    pub epsilon: f64,
    pub mean_makespan: f64,
    pub mean_loss: Option<f64>,
}

/// Owns everything that changes while the upper level trains.
pub struct UpperTrainer {
    pub qnet: QNet,
    pub adam: AdamState,
    pub buffer: ReplayBuffer,
    pub config: UpperConfig,
    rng: ChaCha8Rng,
}

impl UpperTrainer {
    pub fn new(n_stages: usize, config: UpperConfig) -> Result<Self> {
        config.validate()?;
        let qnet = QNet::new(n_stages, config.hidden, config.sync_interval, config.seed);
        let adam = AdamState::new(&qnet.online, AdamConfig::with_lr(config.lr));
        Ok(UpperTrainer {
            buffer: ReplayBuffer::new(config.replay_capacity, config.seed ^ 0x5eed_b0ff),
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
            qnet,
            adam,
            config,
        })
    }

    /// Episodes on randomly drawn instances followed by training steps.
    pub fn run_epoch(
        &mut self,
        instances: &[Arc<Instance>],
        epoch: usize,
    ) -> Result<UpperEpochStats> {
        let epsilon = self.config.epsilon_at(epoch);
        let mut makespans = 0.0;
        for _ in 0..self.config.episodes_per_epoch {
            let inst = &instances[self.rng.random_range(0..instances.len())];
            let seq = play_episode(
                &self.qnet,
                inst,
                Policy::EpsilonGreedy {
                    epsilon,
                    rng: &mut self.rng,
                },
                self.config.candidate_pool,
                self.config.reward,
                Some(&mut self.buffer),
            )?;
            makespans += makespan_unchecked(inst, &seq);
        }
        let mean_loss = self.train(self.config.train_steps_per_epoch)?;
        Ok(UpperEpochStats {
            epoch,
            epsilon,
            mean_makespan: makespans / self.config.episodes_per_epoch.max(1) as f64,
            mean_loss,
        })
    }

    /// Up to `steps` updates; none while the buffer is smaller than a batch.
    pub fn train(&mut self, steps: usize) -> Result<Option<f64>> {
        if self.buffer.len() < self.config.batch_size || steps == 0 {
            return Ok(None);
        }
        let mut total = 0.0;
        for _ in 0..steps {
            total += ddqn_train_step(
                &mut self.qnet,
                &mut self.adam,
                &mut self.buffer,
                self.config.batch_size,
                self.config.gamma,
                self.config.grad_clip,
            )?;
        }
        Ok(Some(total / steps as f64))
    }

    /// Records `seq` on `inst` as an episode (used to feed refined sequences
    /// back from the lower level).
    pub fn replay_sequence(&mut self, inst: &Arc<Instance>, seq: &[usize]) -> Result<()> {
        play_episode::<ChaCha8Rng>(
            &self.qnet,
            inst,
            Policy::Forced(seq),
            self.config.candidate_pool,
            self.config.reward,
            Some(&mut self.buffer),
        )?;
        Ok(())
    }
}

/// Trains a Q-network on instances drawn from `instances`.
pub fn train_upper(
    instances: &[Arc<Instance>],
    config: &UpperConfig,
) -> Result<(QNet, Vec<UpperEpochStats>)> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Config("no training instances".into()))?;
    let mut trainer = UpperTrainer::new(first.n_stages, config.clone())?;
    let mut stats = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        stats.push(trainer.run_epoch(instances, epoch)?);
    }
    Ok((trainer.qnet, stats))
}

/// Serialized upper-level model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpperCheckpoint {
    pub n_stages: usize,
    pub config: UpperConfig,
    pub params: Checkpoint,
}

impl UpperCheckpoint {
    pub fn new(qnet: &QNet, config: &UpperConfig) -> Self {
        UpperCheckpoint {
            n_stages: qnet.n_stages(),
            config: config.clone(),
            params: qnet.to_checkpoint(),
        }
    }

    pub fn restore(&self) -> Result<QNet> {
        let mut q = QNet::new(
            self.n_stages,
            self.config.hidden,
            self.config.sync_interval,
            self.config.seed,
        );
        q.load_checkpoint(&self.params)?;
        Ok(q)
    }
}

/// An RNG for call sites that never draw (ε = 0).
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("greedy selection does not draw random numbers")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("greedy selection does not draw random numbers")
    }
    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("greedy selection does not draw random numbers")
    }
}
