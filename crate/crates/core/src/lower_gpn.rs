//! Lower level: a graph pointer network that re-orders a window of jobs.
//!
//! Each job's operation-time vector is embedded together with the mean of
//! the other jobs in the window. An LSTM encoder reads the embeddings and
//! hands its final state to an LSTM decoder, whose additive-attention
//! pointer over the embeddings emits the new order one job at a time. Training is REINFORCE with an exponential
//! moving-average baseline.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{check_full, makespan_unchecked};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::neural::{
    adam_update, clip_global_norm, log_softmax_backward, masked_log_softmax, masked_softmax,
    outer_add, AdamConfig, AdamState, Checkpoint, LstmCache, LstmCell, LstmState, ParamId,
    ParamStore, Pointer, PointerCache,
};

/// A contiguous slice of a parent sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// Position of the first job in the parent sequence.
    pub start: usize,
    pub jobs: Vec<usize>,
    /// Machine availability per stage after the parent prefix before the window.
    pub context: Vec<Vec<f64>>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn end(&self) -> usize {
        self.start + self.jobs.len()
    }
}

/// `parent` with the window segment replaced by `order`.
pub fn splice(parent: &[usize], window: &Window, order: &[usize]) -> Vec<usize> {
    let mut out = parent.to_vec();
    out[window.start..window.end()].copy_from_slice(order);
    out
}

fn check_window_order(window: &Window, order: &[usize]) -> Result<()> {
    let mut a = window.jobs.clone();
    let mut b = order.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(Error::Input(format!(
            "order {order:?} is not a permutation of the window jobs {:?}",
            window.jobs
        )));
    }
    Ok(())
}

/// `1 / makespan` of the parent sequence with the window re-ordered.
pub fn window_reward(
    inst: &Instance,
    parent: &[usize],
    window: &Window,
    order: &[usize],
) -> Result<f64> {
    check_full(parent, inst.n_jobs)?;
    if window.end() > parent.len() || parent[window.start..window.end()] != window.jobs[..] {
        return Err(Error::Input(
            "window is not drawn from the parent sequence".into(),
        ));
    }
    check_window_order(window, order)?;
    Ok(1.0 / makespan_unchecked(inst, &splice(parent, window, order)))
}

/// Operation-time vectors of the window jobs divided by their overall mean.
pub fn window_features(inst: &Instance, jobs: &[usize]) -> Vec<Vec<f64>> {
    let total: f64 = jobs.iter().map(|&j| inst.job_total(j)).sum();
    let scale = if total > 0.0 {
        total / (jobs.len() * inst.n_stages) as f64
    } else {
        1.0
    };
    jobs.iter()
        .map(|&j| inst.op_times.iter().map(|row| row[j] / scale).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone)]
pub struct GpnModel {
    pub params: ParamStore,
    embed_self: ParamId,
    embed_neighbor: ParamId,
    embed_bias: ParamId,
    encoder: LstmCell,
    decoder: LstmCell,
    /// Decoder input at the first step.
    start: ParamId,
    pointer: Pointer,
    pub n_stages: usize,
    pub hidden: usize,
    pub baseline: Option<f64>,
}

struct EmbedCache {
    inputs: Vec<Vec<f64>>,
    means: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

struct DecodeStep {
    input: Option<usize>,
    lstm: LstmCache,
    pointer: PointerCache,
    probs: Vec<f64>,
    chosen: usize,
}

struct Tape {
    embed: EmbedCache,
    embedded: Vec<Vec<f64>>,
    encoder: Vec<LstmCache>,
    steps: Vec<DecodeStep>,
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

impl GpnModel {
    pub fn new(n_stages: usize, hidden: usize, seed: u64) -> Result<Self> {
        if hidden <= n_stages {
            return Err(Error::Config(format!(
                "hidden width {hidden} must exceed the number of stages {n_stages}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let embed_self = params.add_matrix("embed.self", hidden, n_stages, &mut rng);
        let embed_neighbor = params.add_matrix("embed.neighbor", hidden, n_stages, &mut rng);
        let embed_bias = params.add_zeros("embed.bias", &[hidden]);
        let encoder = LstmCell::new(&mut params, "encoder", hidden, hidden, &mut rng);
        let decoder = LstmCell::new(&mut params, "decoder", hidden, hidden, &mut rng);
        let start = params.add_matrix("decoder.start", 1, hidden, &mut rng);
        let pointer = Pointer::new(&mut params, "decoder.pointer", hidden, &mut rng);
        Ok(GpnModel {
            params,
            embed_self,
            embed_neighbor,
            embed_bias,
            encoder,
            decoder,
            start,
            pointer,
            n_stages,
            hidden,
            baseline: None,
        })
    }

    fn embed_with(
        &self,
        params: &ParamStore,
        xs: &[Vec<f64>],
    ) -> Result<(Vec<Vec<f64>>, EmbedCache)> {
        let s = self.n_stages;
        if let Some(x) = xs.iter().find(|x| x.len() != s) {
            return Err(Error::Shape(format!(
                "job vector has length {}, expected {s}",
                x.len()
            )));
        }
        let n = xs.len();
        let mut sum = vec![0.0; s];
        for x in xs {
            for k in 0..s {
                sum[k] += x[k];
            }
        }
        let w = &params.get(self.embed_self).data;
        let u = &params.get(self.embed_neighbor).data;
        let b = &params.get(self.embed_bias).data;
        let mut means = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for x in xs {
            let m: Vec<f64> = if n > 1 {
                (0..s).map(|k| (sum[k] - x[k]) / (n - 1) as f64).collect()
            } else {
                vec![0.0; s]
            };
            let z: Vec<f64> = (0..self.hidden)
                .map(|r| {
                    let row = r * s;
                    b[r] + (0..s)
                        .map(|k| w[row + k] * x[k] + u[row + k] * m[k])
                        .sum::<f64>()
                })
                .collect();
            out.push(z.iter().map(|&v| relu(v)).collect());
            pre.push(z);
            means.push(m);
        }
        Ok((
            out,
            EmbedCache {
                inputs: xs.to_vec(),
                means,
                pre,
            },
        ))
    }

    /// `ReLU(W·x_j + U·mean_{k≠j} x_k + b)` for every job vector.
    pub fn graph_embed(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.embed_with(&self.params, xs)?.0)
    }

    /// Encodes the window and decodes one position per step with `choose`
    /// picking from the step's probabilities.
    fn run(
        &self,
        params: &ParamStore,
        xs: &[Vec<f64>],
        choose: &mut dyn FnMut(&[f64]) -> usize,
    ) -> Result<(Vec<usize>, f64, Tape)> {
        let n = xs.len();
        let (embedded, embed) = self.embed_with(params, xs)?;
        let mut state = LstmState::zeros(self.hidden);
        let mut encoder = Vec::with_capacity(n);
        for e in &embedded {
            let (next, cache) = self.encoder.step(params, e, &state)?;
            encoder.push(cache);
            state = next;
        }
        let projected = self.pointer.project_refs(params, &embedded)?;
        let mut masked = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut steps = Vec::with_capacity(n);
        let mut log_prob = 0.0;
        let mut input: Option<usize> = None;
        for _ in 0..n {
            let x = match input {
                Some(i) => &embedded[i],
                None => &params.get(self.start).data,
            };
            let (next, lstm) = self.decoder.step(params, x, &state)?;
            let (logits, pointer) = self
                .pointer
                .scores_projected(params, &next.h, &projected, &masked)?;
            let probs = masked_softmax(&logits, &masked)?;
            let chosen = choose(&probs);
            if chosen >= n || masked[chosen] {
                return Err(Error::Numeric("selection fell on a masked job".into()));
            }
            log_prob += masked_log_softmax(&logits, &masked)?[chosen];
            masked[chosen] = true;
            order.push(chosen);
            steps.push(DecodeStep {
                input,
                lstm,
                pointer,
                probs,
                chosen,
            });
            input = Some(chosen);
            state = next;
        }
        Ok((
            order,
            log_prob,
            Tape {
                embed,
                embedded,
                encoder,
                steps,
            },
        ))
    }

    /// Adds `scale · ∂ log p(order) / ∂θ` into `grads`.
    fn backward(&self, params: &ParamStore, tape: &Tape, scale: f64, grads: &mut ParamStore) {
        let n = tape.embedded.len();
        let d = self.hidden;
        let mut d_projected = vec![vec![0.0; d]; n];
        let mut d_embedded = vec![vec![0.0; d]; n];
        let mut dh = vec![0.0; d];
        let mut dc = vec![0.0; d];
        for step in tape.steps.iter().rev() {
            let d_logits = log_softmax_backward(&step.probs, step.chosen, scale);
            let dq = self.pointer.backward_projected(
                params,
                &step.pointer,
                &d_logits,
                &mut d_projected,
                grads,
            );
            for k in 0..d {
                dh[k] += dq[k];
            }
            let (dx, dh_prev, dc_prev) = self.decoder.backward(params, &step.lstm, &dh, &dc, grads);
            let target = match step.input {
                Some(i) => &mut d_embedded[i],
                None => &mut grads.get_mut(self.start).data,
            };
            for k in 0..d {
                target[k] += dx[k];
            }
            dh = dh_prev;
            dc = dc_prev;
        }
        let d_refs = self
            .pointer
            .backward_refs(params, &tape.embedded, &d_projected, grads);
        for (de, dr) in d_embedded.iter_mut().zip(&d_refs) {
            for k in 0..d {
                de[k] += dr[k];
            }
        }
        for j in (0..n).rev() {
            let (dx, dh_prev, dc_prev) =
                self.encoder
                    .backward(params, &tape.encoder[j], &dh, &dc, grads);
            for k in 0..d {
                d_embedded[j][k] += dx[k];
            }
            dh = dh_prev;
            dc = dc_prev;
        }
        let s = self.n_stages;
        for j in 0..n {
            let dz: Vec<f64> = tape.embed.pre[j]
                .iter()
                .zip(&d_embedded[j])
                .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
                .collect();
            outer_add(
                &mut grads.get_mut(self.embed_self).data,
                s,
                &dz,
                &tape.embed.inputs[j],
            );
            outer_add(
                &mut grads.get_mut(self.embed_neighbor).data,
                s,
                &dz,
                &tape.embed.means[j],
            );
            for (b, g) in grads.get_mut(self.embed_bias).data.iter_mut().zip(&dz) {
                *b += g;
            }
        }
    }

    /// Decodes positions `0..xs.len()` into an order. Returns the positions
    /// and the summed log-probability of the choices.
    pub fn decode_positions<R: Rng>(
        &self,
        xs: &[Vec<f64>],
        mode: DecodeMode,
        rng: &mut R,
    ) -> Result<(Vec<usize>, f64)> {
        let (order, log_prob, _) = match mode {
            DecodeMode::Greedy => self.run(&self.params, xs, &mut argmax)?,
            DecodeMode::Sample => self.run(&self.params, xs, &mut |p| sample_index(p, rng))?,
        };
        Ok((order, log_prob))
    }

    /// Summed log-probability of decoding `positions` under `params`.
    fn forced_log_prob(
        &self,
        params: &ParamStore,
        xs: &[Vec<f64>],
        positions: &[usize],
    ) -> Result<(f64, Tape)> {
        let mut t = 0;
        let (_, lp, tape) = self.run(params, xs, &mut |_| {
            t += 1;
            positions[t - 1]
        })?;
        Ok((lp, tape))
    }

    /// Log-probability of `positions` under the current parameters.
    pub fn log_prob_of(&self, xs: &[Vec<f64>], positions: &[usize]) -> Result<f64> {
        if positions.len() != xs.len() {
            return Err(Error::Input("order length differs from the window".into()));
        }
        Ok(self.forced_log_prob(&self.params, xs, positions)?.0)
    }

    /// `−mean[(reward − baseline) · log p]` at `params` and its gradient.
    pub fn reinforce_loss(
        &self,
        params: &ParamStore,
        batch: &[Episode],
        baseline: f64,
    ) -> Result<(f64, ParamStore)> {
        let mut grads = params.zeros_like();
        let mut loss = 0.0;
        let inv = 1.0 / batch.len() as f64;
        for ep in batch {
            let adv = ep.reward - baseline;
            let (lp, tape) = self.forced_log_prob(params, &ep.features, &ep.positions)?;
            loss -= adv * lp * inv;
            if adv != 0.0 {
                self.backward(params, &tape, -adv * inv, &mut grads);
            }
        }
        Ok((loss, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.params.to_checkpoint()
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Re-orders the window's jobs. Returns the new job order and its
/// log-probability.
pub fn decode_window<R: Rng>(
    model: &GpnModel,
    inst: &Instance,
    window: &Window,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<(Vec<usize>, f64)> {
    if window.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    let xs = window_features(inst, &window.jobs);
    let (pos, lp) = model.decode_positions(&xs, mode, rng)?;
    Ok((pos.iter().map(|&p| window.jobs[p]).collect(), lp))
}

/// One sampled decode and its reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub features: Vec<Vec<f64>>,
    pub positions: Vec<usize>,
    pub reward: f64,
}

/// One REINFORCE step on `batch`. The baseline starts at the first batch's
/// mean reward and then follows an exponential moving average.
pub fn reinforce_update(
    model: &mut GpnModel,
    adam: &mut AdamState,
    batch: &[Episode],
    baseline_decay: f64,
    grad_clip: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    if let Some(ep) = batch.iter().find(|e| !e.reward.is_finite()) {
        return Err(Error::Numeric(format!("non-finite reward {}", ep.reward)));
    }
    let mean = batch.iter().map(|e| e.reward).sum::<f64>() / batch.len() as f64;
    let baseline = *model.baseline.get_or_insert(mean);
    let (loss, mut grads) = model.reinforce_loss(&model.params, batch, baseline)?;
    if grad_clip > 0.0 {
        clip_global_norm(&mut grads, grad_clip);
    }
    adam_update(&mut model.params, &grads, adam)?;
    model.baseline = Some(baseline_decay * baseline + (1.0 - baseline_decay) * mean);
    Ok(loss)
}

/// A window to train on, with the sequence it was cut from.
#[derive(Debug, Clone)]
pub struct WindowTask {
    pub instance: Arc<Instance>,
    pub parent: Vec<usize>,
    pub window: Window,
}

impl WindowTask {
    /// The whole of `parent` as one window.
    pub fn whole(instance: Arc<Instance>, parent: Vec<usize>) -> Self {
        let context = instance
            .machines_per_stage
            .iter()
            .map(|&m| vec![0.0; m])
            .collect();
        WindowTask {
            window: Window {
                start: 0,
                jobs: parent.clone(),
                context,
            },
            instance,
            parent,
        }
    }

    pub fn current_makespan(&self) -> f64 {
        makespan_unchecked(&self.instance, &self.parent)
    }

    pub fn makespan_with(&self, order: &[usize]) -> f64 {
        makespan_unchecked(&self.instance, &splice(&self.parent, &self.window, order))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub windows_per_epoch: usize,
    pub samples_per_window: usize,
    pub baseline_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for LowerConfig {
    fn default() -> Self {
        LowerConfig {
            hidden: 64,
            lr: 1e-3,
            epochs: 500,
            windows_per_epoch: 4,
            samples_per_window: 8,
            baseline_decay: 0.9,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl LowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.windows_per_epoch == 0 || self.samples_per_window == 0 {
            return Err(Error::Config(
                "epochs, windows and samples per epoch must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Config(format!(
                "baseline decay {} outside [0, 1)",
                self.baseline_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerEpochStats {
    pub epoch: usize,
    pub mean_reward: f64,
    pub loss: f64,
    pub baseline: f64,
}

pub struct LowerTrainer {
    pub model: GpnModel,
    pub adam: AdamState,
    pub config: LowerConfig,
    rng: ChaCha8Rng,
}

impl LowerTrainer {
    pub fn new(n_stages: usize, config: LowerConfig) -> Result<Self> {
        config.validate()?;
        let model = GpnModel::new(n_stages, config.hidden, config.seed)?;
        let adam = AdamState::new(&model.params, AdamConfig::with_lr(config.lr));
        Ok(LowerTrainer {
            model,
            adam,
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(7)),
            config,
        })
    }

    /// Samples orders for `tasks` and takes one policy-gradient step. The
    /// reward of an order is the current makespan divided by the makespan
    /// with the window re-ordered.
    pub fn step(&mut self, tasks: &[&WindowTask], epoch: usize) -> Result<LowerEpochStats> {
        let mut batch = Vec::with_capacity(tasks.len() * self.config.samples_per_window);
        for task in tasks {
            let xs = window_features(&task.instance, &task.window.jobs);
            let current = task.current_makespan();
            for _ in 0..self.config.samples_per_window {
                let (pos, _) =
                    self.model
                        .decode_positions(&xs, DecodeMode::Sample, &mut self.rng)?;
                let order: Vec<usize> = pos.iter().map(|&p| task.window.jobs[p]).collect();
                batch.push(Episode {
                    features: xs.clone(),
                    positions: pos,
                    reward: current / task.makespan_with(&order),
                });
            }
        }
        let mean_reward = batch.iter().map(|e| e.reward).sum::<f64>() / batch.len() as f64;
        let loss = reinforce_update(
            &mut self.model,
            &mut self.adam,
            &batch,
            self.config.baseline_decay,
            self.config.grad_clip,
        )?;
        Ok(LowerEpochStats {
            epoch,
            mean_reward,
            loss,
            baseline: self.model.baseline.unwrap_or(mean_reward),
        })
    }

    /// One epoch on windows drawn uniformly from `pool`.
    pub fn epoch(&mut self, pool: &[WindowTask], epoch: usize) -> Result<LowerEpochStats> {
        if pool.is_empty() {
            return Err(Error::Input("no windows to train on".into()));
        }
        let picks: Vec<&WindowTask> = (0..self.config.windows_per_epoch)
            .map(|_| &pool[self.rng.random_range(0..pool.len())])
            .collect();
        self.step(&picks, epoch)
    }
}

/// Trains a model on windows drawn from `pool`.
pub fn train_lower(
    pool: &[WindowTask],
    config: &LowerConfig,
) -> Result<(GpnModel, Vec<LowerEpochStats>)> {
    let first = pool
        .first()
        .ok_or_else(|| Error::Config("no training windows".into()))?;
    let mut trainer = LowerTrainer::new(first.instance.n_stages, config.clone())?;
    let mut stats = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        stats.push(trainer.epoch(pool, epoch)?);
    }
    Ok((trainer.model, stats))
}

/// Serialized lower-level model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowerCheckpoint {
    pub n_stages: usize,
    pub baseline: Option<f64>,
    pub config: LowerConfig,
    pub params: Checkpoint,
}

impl LowerCheckpoint {
    pub fn new(model: &GpnModel, config: &LowerConfig) -> Self {
        LowerCheckpoint {
            n_stages: model.n_stages,
            baseline: model.baseline,
            config: config.clone(),
            params: model.to_checkpoint(),
        }
    }

    pub fn restore(&self) -> Result<GpnModel> {
        let mut m = GpnModel::new(self.n_stages, self.config.hidden, self.config.seed)?;
        m.params.load_checkpoint(&self.params)?;
        m.baseline = self.baseline;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::makespan;
    use crate::heuristics::next_permutation;
    use crate::instance::{generate, GenConfig, OpTimeDist};
    use crate::neural::{grad_check, GradCheckConfig};

    fn inst(n: usize, s: usize, m: usize, seed: u64) -> Arc<Instance> {
        Arc::new(generate(&GenConfig::new(n, s, m, OpTimeDist::default(), seed)).unwrap())
    }

    fn whole(inst: &Arc<Instance>) -> WindowTask {
        WindowTask::whole(Arc::clone(inst), (0..inst.n_jobs).collect())
    }

    #[test]
    fn identical_jobs_embed_identically() {
        let m = GpnModel::new(3, 8, 1).unwrap();
        let x = vec![0.5, 1.5, 1.0];
        let e = m.graph_embed(&[x.clone(), x.clone(), x]).unwrap();
        assert_eq!(e[0], e[1]);
        assert_eq!(e[1], e[2]);
    }

    #[test]
    fn single_job_has_no_neighbor_term() {
        let mut m = GpnModel::new(2, 4, 1).unwrap();
        let before = m.graph_embed(&[vec![1.0, 2.0]]).unwrap();
        let u = m.embed_neighbor;
        m.params.get_mut(u).data.iter_mut().for_each(|v| *v = 100.0);
        assert_eq!(m.graph_embed(&[vec![1.0, 2.0]]).unwrap(), before);
    }

    #[test]
    fn embedding_is_permutation_equivariant() {
        let m = GpnModel::new(2, 6, 2).unwrap();
        let xs = vec![
            vec![0.1, 0.9],
            vec![1.2, 0.4],
            vec![0.7, 0.7],
            vec![2.0, 0.0],
        ];
        let e = m.graph_embed(&xs).unwrap();
        let perm = [2, 0, 3, 1];
        let px: Vec<Vec<f64>> = perm.iter().map(|&i| xs[i].clone()).collect();
        let pe = m.graph_embed(&px).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for (a, b) in pe[k].iter().zip(&e[i]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_vector_length_is_rejected() {
        let m = GpnModel::new(2, 4, 1).unwrap();
        assert!(m.graph_embed(&[vec![1.0, 2.0, 3.0]]).is_err());
        assert!(GpnModel::new(4, 4, 1).is_err());
    }

    #[test]
    fn one_job_window_has_zero_log_prob() {
        let i = inst(3, 2, 1, 1);
        let m = GpnModel::new(2, 8, 1).unwrap();
        let w = Window {
            start: 1,
            jobs: vec![2],
            context: vec![vec![0.0]; 2],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (order, lp) = decode_window(&m, &i, &w, DecodeMode::Sample, &mut rng).unwrap();
        assert_eq!(order, vec![2]);
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn decodes_are_permutations_with_consistent_log_prob() {
        let i = inst(7, 3, 2, 2);
        let m = GpnModel::new(3, 8, 2).unwrap();
        let task = whole(&i);
        let xs = window_features(&i, &task.window.jobs);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let (order, lp) =
                decode_window(&m, &i, &task.window, DecodeMode::Sample, &mut rng).unwrap();
            let mut sorted = order.clone();
            sorted.sort();
            assert_eq!(sorted, task.window.jobs);
            assert!(lp <= 0.0);
            let pos: Vec<usize> = order.clone();
            assert!((m.log_prob_of(&xs, &pos).unwrap() - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_decode_is_deterministic() {
        let i = inst(9, 2, 2, 3);
        let m = GpnModel::new(2, 8, 3).unwrap();
        let task = whole(&i);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(
            decode_window(&m, &i, &task.window, DecodeMode::Greedy, &mut r1).unwrap(),
            decode_window(&m, &i, &task.window, DecodeMode::Greedy, &mut r2).unwrap()
        );
    }

    #[test]
    fn identical_jobs_have_equal_first_step_probabilities() {
        let m = GpnModel::new(2, 8, 4).unwrap();
        let xs = vec![vec![1.0, 1.0]; 4];
        let (_, _, tape) = m.run(&m.params, &xs, &mut argmax).unwrap();
        let p = &tape.steps[0].probs;
        for v in p {
            assert!((v - 0.25).abs() < 1e-12);
        }
        // masked jobs are never selectable again
        for (t, step) in tape.steps.iter().enumerate() {
            for prior in &tape.steps[..t] {
                assert_eq!(step.probs[prior.chosen], 0.0);
            }
        }
    }

    #[test]
    fn reward_examples() {
        let two = Instance::new(
            "two",
            vec![1, 1],
            vec![vec![3.0, 1.0, 2.0], vec![2.0, 4.0, 1.0]],
        )
        .unwrap();
        let parent = vec![0, 1, 2];
        let w = Window {
            start: 0,
            jobs: parent.clone(),
            context: vec![vec![0.0]; 2],
        };
        assert_eq!(window_reward(&two, &parent, &w, &parent).unwrap(), 0.1);
        let mut best = f64::INFINITY;
        let mut order = vec![0, 1, 2];
        loop {
            best = best.min(makespan(&two, &order).unwrap());
            let r = window_reward(&two, &parent, &w, &order).unwrap();
            assert_eq!(r, 1.0 / makespan(&two, &order).unwrap());
            if !next_permutation(&mut order) {
                break;
            }
        }
        assert_eq!(best, 8.0);
        assert!(window_reward(&two, &parent, &w, &[0, 1, 1]).is_err());
    }

    #[test]
    fn centered_rewards_leave_parameters_unchanged() {
        let i = inst(4, 2, 1, 5);
        let mut m = GpnModel::new(2, 6, 5).unwrap();
        m.baseline = Some(0.5);
        let before = m.params.clone();
        let mut adam = AdamState::new(&m.params, AdamConfig::default());
        let xs = window_features(&i, &[0, 1, 2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch: Vec<Episode> = (0..3)
            .map(|_| Episode {
                features: xs.clone(),
                positions: m
                    .decode_positions(&xs, DecodeMode::Sample, &mut rng)
                    .unwrap()
                    .0,
                reward: 0.5,
            })
            .collect();
        reinforce_update(&mut m, &mut adam, &batch, 0.9, 1.0).unwrap();
        assert_eq!(m.params, before);
    }

    #[test]
    fn reinforce_gradient_matches_finite_differences() {
        let i = inst(3, 2, 1, 6);
        let m = GpnModel::new(2, 4, 6).unwrap();
        let xs = window_features(&i, &[0, 1, 2]);
        let batch = vec![
            Episode {
                features: xs.clone(),
                positions: vec![2, 0, 1],
                reward: 1.3,
            },
            Episode {
                features: xs,
                positions: vec![0, 1, 2],
                reward: 0.4,
            },
        ];
        let (_, grads) = m.reinforce_loss(&m.params, &batch, 0.7).unwrap();
        let loss = |p: &ParamStore| m.reinforce_loss(p, &batch, 0.7).unwrap().0;
        let report = grad_check(&loss, &m.params, &grads, &GradCheckConfig::default());
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn seeded_updates_are_reproducible() {
        let i = inst(5, 2, 1, 7);
        let pool = vec![whole(&i)];
        let cfg = LowerConfig {
            epochs: 3,
            hidden: 8,
            ..LowerConfig::default()
        };
        let (a, sa) = train_lower(&pool, &cfg).unwrap();
        let (b, sb) = train_lower(&pool, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(sa, sb);
    }

    #[test]
    fn non_finite_reward_is_rejected() {
        let mut m = GpnModel::new(2, 4, 1).unwrap();
        let mut adam = AdamState::new(&m.params, AdamConfig::default());
        let batch = vec![Episode {
            features: vec![vec![1.0, 1.0]],
            positions: vec![0],
            reward: f64::NAN,
        }];
        assert!(reinforce_update(&mut m, &mut adam, &batch, 0.9, 1.0).is_err());
        assert!(reinforce_update(&mut m, &mut adam, &[], 0.9, 1.0).is_err());
    }

    #[test]
    fn trained_at_five_decodes_eight() {
        let i = inst(5, 2, 1, 8);
        let cfg = LowerConfig {
            epochs: 2,
            hidden: 8,
            ..LowerConfig::default()
        };
        let (m, _) = train_lower(&[whole(&i)], &cfg).unwrap();
        let big = inst(8, 2, 1, 9);
        let task = whole(&big);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (order, _) =
            decode_window(&m, &big, &task.window, DecodeMode::Greedy, &mut rng).unwrap();
        assert_eq!(order.len(), 8);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = GpnModel::new(3, 8, 11).unwrap();
        let ck = LowerCheckpoint::new(
            &m,
            &LowerConfig {
                hidden: 8,
                seed: 11,
                ..LowerConfig::default()
            },
        );
        let text = serde_json::to_string(&ck).unwrap();
        let back: LowerCheckpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back.restore().unwrap().params, m.params);
    }
}
