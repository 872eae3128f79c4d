//! Reward-driven training of the denoiser.
//!
//! Each epoch samples one trajectory per random target, scores the emitted
//! graphs, and takes one Adam step along the trajectory-level policy
//! gradient
//!
//! ```text
//! L = -(1/B) * sum_i adv_i * sum_t log p(x_{t-1} | x_t, t, cond_i)
//! ```
//!
//! with `adv_i = reward_i - b` for an exponential moving-average baseline
//! `b`. Gradients are replayed from the recorded states, summed in
//! trajectory order and then step order, and clipped by global norm.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    build_features, check_logits, feature_dim, sample_trajectory, step_logit_gradient,
    NoiseSchedule, Trajectory,
};
use crate::fresnel::{self, greedy_baseline, ineffective_link_count, random_baseline};
use crate::graph::{Condition, Scenario, NUM_CATEGORIES};
use crate::nn::{DenoiserCheckpoint, Mlp};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

const STREAM_EPOCH: u64 = 1;
const STREAM_TRAJECTORY: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_RANDOM: u64 = 4;
const STREAM_VALIDATION_TARGETS: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub baseline_decay: f64,
    pub entropy_coef: f64,
    pub grad_clip_norm: f64,
    pub learning_rate: f64,
    pub validation: Vec<Condition>,
    pub eval_seed: u64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn reference(scenario: &Scenario, seed: u64) -> Self {
        let eval_seed = 2024;
        Self {
            epochs: 300,
            batch_size: 64,
            baseline_decay: 0.9,
            entropy_coef: 0.0,
            grad_clip_norm: 5.0,
            learning_rate: 1e-3,
            validation: validation_targets(scenario, 32, eval_seed),
            eval_seed,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::domain("epochs and batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::domain(format!(
                "baseline decay must lie in [0, 1), got {}",
                self.baseline_decay
            )));
        }
        if !positive(self.grad_clip_norm) || !positive(self.learning_rate) {
            return Err(Error::domain(
                "grad_clip_norm and learning_rate must be positive",
            ));
        }
        if self.entropy_coef.is_nan() || self.entropy_coef < 0.0 {
            return Err(Error::domain("entropy_coef must be non-negative"));
        }
        Ok(())
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Fixed validation conditions drawn uniformly over the area.
pub fn validation_targets(scenario: &Scenario, count: usize, seed: u64) -> Vec<Condition> {
    let mut rng = seeded(derive_seed(seed, STREAM_VALIDATION_TARGETS, 0));
    (0..count)
        .map(|_| Condition {
            target: scenario.area.sample(&mut rng),
        })
        .collect()
}

/// One row of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mean: f64,
    pub train_min: f64,
    pub train_max: f64,
    pub val_mean: f64,
    pub greedy_mean: f64,
    pub random_mean: f64,
    /// Over the training batch's emitted graphs.
    pub mean_active_links: f64,
    pub mean_ineffective_links: f64,
    /// Global gradient norm after clipping.
    pub grad_norm: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_mean,train_min,train_max,val_mean,greedy_mean,random_mean,mean_active_links,mean_ineffective_links,grad_norm";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_mean,
            self.train_min,
            self.train_max,
            self.val_mean,
            self.greedy_mean,
            self.random_mean,
            self.mean_active_links,
            self.mean_ineffective_links,
            self.grad_norm
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            return Err(Error::format(format!("metrics row has {} fields", f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse()
                .map_err(|_| Error::format(format!("bad metrics field {:?}", f[i])))
        };
        Ok(Self {
            epoch: f[0]
                .parse()
                .map_err(|_| Error::format(format!("bad epoch {:?}", f[0])))?,
            train_mean: num(1)?,
            train_min: num(2)?,
            train_max: num(3)?,
            val_mean: num(4)?,
            greedy_mean: num(5)?,
            random_mean: num(6)?,
            mean_active_links: num(7)?,
            mean_ineffective_links: num(8)?,
            grad_norm: num(9)?,
        })
    }
}

/// Append-only CSV sink that enforces increasing epoch indices.
pub struct MetricsWriter<W: Write> {
    out: W,
    last_epoch: Option<usize>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self {
            out,
            last_epoch: None,
        })
    }

    pub fn append(&mut self, m: &EpochMetrics) -> std::io::Result<()> {
        if self.last_epoch.is_some_and(|e| m.epoch <= e) {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("epoch {} after {:?}", m.epoch, self.last_epoch),
            ));
        }
        self.last_epoch = Some(m.epoch);
        writeln!(self.out, "{}", m.csv_row())?;
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Scores each trajectory's emitted graph and attaches the breakdown.
pub fn score_batch(trajs: &mut [Trajectory], scenario: &Scenario) -> Result<Vec<f64>> {
    trajs
        .iter_mut()
        .map(|traj| {
            let r = fresnel::reward(traj.final_graph(), scenario, &traj.condition)?;
            let total = r.total;
            traj.reward = Some(r);
            Ok(total)
        })
        .collect()
}

/// Exponential moving average of batch-mean rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBaseline {
    pub decay: f64,
    pub value: Option<f64>,
}

impl RewardBaseline {
    pub fn new(decay: f64) -> Self {
        Self { decay, value: None }
    }
}

/// `adv_i = r_i - b`, then `b <- decay * b + (1 - decay) * mean(r)`.
/// The first batch seeds `b` with its own mean.
pub fn compute_advantages(rewards: &[f64], baseline: &mut RewardBaseline) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let before = *baseline.value.get_or_insert(mean);
    baseline.value = Some(baseline.decay * before + (1.0 - baseline.decay) * mean);
    rewards.iter().map(|r| r - before).collect()
}

/// Gradient of the batch policy loss (minus `entropy_coef` times the mean
/// summed per-step entropy) with respect to the denoiser parameters.
pub fn policy_gradient(
    trajs: &[Trajectory],
    advantages: &[f64],
    net: &Mlp,
    scenario: &Scenario,
    sched: &NoiseSchedule,
    entropy_coef: f64,
) -> Result<Vec<f64>> {
    if trajs.len() != advantages.len() {
        return Err(Error::domain(format!(
            "{} trajectories but {} advantages",
            trajs.len(),
            advantages.len()
        )));
    }
    let mut total = vec![0.0; net.num_params()];
    if trajs.is_empty() {
        return Ok(total);
    }
    let scale = 1.0 / trajs.len() as f64;
    let steps = sched.steps();
    let m = scenario.num_edges();
    let mut upstream = vec![0.0; m * NUM_CATEGORIES];
    let mut local = vec![0.0; net.num_params()];
    for (id, (traj, &adv)) in trajs.iter().zip(advantages).enumerate() {
        if adv == 0.0 && entropy_coef == 0.0 {
            continue;
        }
        if traj.steps() != steps {
            return Err(Error::domain(format!(
                "trajectory {id} has {} steps, schedule has {steps}",
                traj.steps()
            )));
        }
        local.iter_mut().for_each(|g| *g = 0.0);
        for t in (1..=steps).rev() {
            let features =
                build_features(&traj.states[t], t, steps, &traj.condition, &scenario.area);
            let (logits, cache) = net.forward(&features)?;
            check_logits(&logits, m, t)?;
            step_logit_gradient(
                &logits,
                &traj.states[t],
                &traj.states[t - 1],
                t,
                sched,
                scale * adv,
                scale * entropy_coef,
                &mut upstream,
            );
            net.backward_into(&cache, &upstream, &mut local)?;
        }
        if let Some(pos) = local.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric(
                "policy_gradient",
                format!("trajectory {id}: gradient[{pos}] = {}", local[pos]),
            ));
        }
        for (t, l) in total.iter_mut().zip(&local) {
            *t += l;
        }
    }
    Ok(total)
}

/// Scales `grads` to global norm at most `max_norm`; returns the norm
/// after clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
        grads.iter().map(|g| g * g).sum::<f64>().sqrt()
    } else {
        norm
    }
}

/// Results of one evaluation pass over a target list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rewards: Vec<f64>,
    pub greedy_rewards: Vec<f64>,
    pub random_rewards: Vec<f64>,
    pub mean_reward: f64,
    pub greedy_mean: f64,
    pub random_mean: f64,
    pub mean_active_links: f64,
    pub mean_ineffective_links: f64,
    pub trajectories: Vec<Trajectory>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// One sampled trajectory per target plus the greedy and random baselines
/// on the same targets, all driven by `seed`.
pub fn evaluate(
    net: &Mlp,
    targets: &[Condition],
    scenario: &Scenario,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<Evaluation> {
    let m = scenario.num_edges();
    let mut trajectories = Vec::with_capacity(targets.len());
    for (i, cond) in targets.iter().enumerate() {
        let mut rng = seeded(derive_seed(seed, STREAM_EVAL, i as u64));
        trajectories.push(sample_trajectory(net, cond, scenario, sched, &mut rng)?);
    }
    let rewards = score_batch(&mut trajectories, scenario)?;
    let mut greedy_rewards = Vec::with_capacity(targets.len());
    let mut random_rewards = Vec::with_capacity(targets.len());
    let mut ineffective = 0usize;
    let mut active = 0usize;
    for (i, (cond, traj)) in targets.iter().zip(&trajectories).enumerate() {
        greedy_rewards
            .push(fresnel::reward(&greedy_baseline(scenario, cond)?, scenario, cond)?.total);
        let mut rng = seeded(derive_seed(seed, STREAM_RANDOM, i as u64));
        random_rewards.push(fresnel::reward(&random_baseline(&mut rng, m), scenario, cond)?.total);
        ineffective += ineffective_link_count(traj.final_graph(), scenario, cond)?;
        active += traj.final_graph().active_count();
    }
    let n = targets.len().max(1) as f64;
    Ok(Evaluation {
        mean_reward: mean(&rewards),
        greedy_mean: mean(&greedy_rewards),
        random_mean: mean(&random_rewards),
        mean_active_links: active as f64 / n,
        mean_ineffective_links: ineffective as f64 / n,
        rewards,
        greedy_rewards,
        random_rewards,
        trajectories,
    })
}

/// Training loop state: the checkpoint being optimized plus the baseline.
pub struct Trainer {
    pub checkpoint: DenoiserCheckpoint,
    pub baseline: RewardBaseline,
    pub config: TrainConfig,
    pub scenario: Scenario,
    pub schedule: NoiseSchedule,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(
        checkpoint: DenoiserCheckpoint,
        config: TrainConfig,
        scenario: Scenario,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        config.validate()?;
        let expected_in = feature_dim(scenario.num_edges());
        let arch = checkpoint.net.architecture();
        if arch.input_dim != expected_in || arch.output_dim != scenario.num_edges() * NUM_CATEGORIES
        {
            return Err(Error::domain(format!(
                "architecture {}->{} does not fit a {}-edge scenario",
                arch.input_dim,
                arch.output_dim,
                scenario.num_edges()
            )));
        }
        Ok(Self {
            baseline: RewardBaseline::new(config.baseline_decay),
            checkpoint,
            config,
            scenario,
            schedule,
            epoch: 0,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.checkpoint.net
    }

    /// Runs one epoch and returns its metrics.
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        let epoch = self.epoch;
        let cfg = &self.config;
        let mut rng = seeded(derive_seed(cfg.seed, STREAM_EPOCH, epoch as u64));
        let conditions: Vec<Condition> = (0..cfg.batch_size)
            .map(|_| sample_condition(&self.scenario, &mut rng))
            .collect();
        let mut trajs = Vec::with_capacity(cfg.batch_size);
        for (i, cond) in conditions.iter().enumerate() {
            let index = (epoch * cfg.batch_size + i) as u64;
            let mut traj_rng = seeded(derive_seed(cfg.seed, STREAM_TRAJECTORY, index));
            trajs.push(sample_trajectory(
                &self.checkpoint.net,
                cond,
                &self.scenario,
                &self.schedule,
                &mut traj_rng,
            )?);
        }
        let rewards = score_batch(&mut trajs, &self.scenario)?;
        let advantages = compute_advantages(&rewards, &mut self.baseline);
        let mut grads = policy_gradient(
            &trajs,
            &advantages,
            &self.checkpoint.net,
            &self.scenario,
            &self.schedule,
            cfg.entropy_coef,
        )?;
        let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip_norm);
        self.checkpoint
            .adam
            .step(self.checkpoint.net.params_mut(), &grads)?;
        self.checkpoint.train_step += 1;

        let mut active = 0usize;
        let mut ineffective = 0usize;
        for traj in &trajs {
            active += traj.final_graph().active_count();
            ineffective +=
                ineffective_link_count(traj.final_graph(), &self.scenario, &traj.condition)?;
        }
        let val = evaluate(
            &self.checkpoint.net,
            &cfg.validation,
            &self.scenario,
            &self.schedule,
            cfg.eval_seed,
        )?;
        let b = cfg.batch_size as f64;
        self.epoch += 1;
        Ok(EpochMetrics {
            epoch,
            train_mean: mean(&rewards),
            train_min: rewards.iter().copied().fold(f64::INFINITY, f64::min),
            train_max: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            val_mean: val.mean_reward,
            greedy_mean: val.greedy_mean,
            random_mean: val.random_mean,
            mean_active_links: active as f64 / b,
            mean_ineffective_links: ineffective as f64 / b,
            grad_norm,
        })
    }

    /// Runs the remaining epochs, handing each row to `on_epoch`.
    pub fn run<F>(&mut self, mut on_epoch: F) -> Result<Vec<EpochMetrics>>
    where
        F: FnMut(&EpochMetrics) -> Result<()>,
    {
        let mut all = Vec::with_capacity(self.config.epochs.saturating_sub(self.epoch));
        while self.epoch < self.config.epochs {
            let m = self.train_epoch()?;
            on_epoch(&m)?;
            all.push(m);
        }
        Ok(all)
    }
}

/// Draws a training condition the way `train_epoch` does.
pub fn sample_condition<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Condition {
    Condition {
        target: scenario.area.sample(rng),
    }
}
