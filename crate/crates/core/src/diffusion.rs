//! Discrete diffusion over edge graphs.
//!
//! Forward: each edge is resampled uniformly with rate `beta_t`, so after
//! `t` steps it keeps its clean value with probability
//! `1/2 + alpha_bar/2` (K = 2). Reverse: the denoising network maps
//! `(x_t, t, condition)` to one categorical per edge and `x_{t-1}` is drawn
//! edge by edge. Each reverse step is one action of a Markov decision
//! process whose per-step log-probability feeds the policy gradient.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fresnel::RewardBreakdown;
use crate::graph::{
    sample_uniform_graph, Area, Condition, EdgeGraph, Point, Scenario, NUM_CATEGORIES,
};
use crate::nn::Mlp;
use crate::{Error, Result};

/// Offset `s` of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;
const MIN_BETA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Cosine,
}

/// How the network output becomes the reverse transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReverseKernel {
    /// The per-edge softmax is the distribution of `x_{t-1}` itself.
    #[default]
    Direct,
    /// The softmax predicts the clean graph `x_0`; `x_{t-1}` is drawn from
    /// the forward-process posterior `q(x_{t-1} | x_t, x_0)` marginalized
    /// over that prediction.
    Posterior,
}

/// Per-step corruption rates; index `i` describes step `t = i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub kernel: ReverseKernel,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn with_kernel(mut self, kernel: ReverseKernel) -> Self {
        self.kernel = kernel;
        self
    }

    /// `alpha_bar` after `t` steps, with `alpha_bar(0) = 1`.
    fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Log of the reverse transition matrix for one edge at step `t`:
    /// entry `[j][k]` is `log P(x_{t-1} = k | x_t = xt, clean = j)` under the
    /// posterior kernel, or `log [j == k]` under the direct kernel.
    pub fn log_transition(&self, t: usize, xt: u8) -> [[f64; NUM_CATEGORIES]; NUM_CATEGORIES] {
        let mut out = [[f64::NEG_INFINITY; NUM_CATEGORIES]; NUM_CATEGORIES];
        match self.kernel {
            ReverseKernel::Direct => {
                for (j, row) in out.iter_mut().enumerate() {
                    row[j] = 0.0;
                }
            }
            ReverseKernel::Posterior => {
                let k = NUM_CATEGORIES as f64;
                let beta = self.beta[t - 1];
                let ab = self.alpha_bar_at(t - 1);
                for (j, row) in out.iter_mut().enumerate() {
                    let mut w = [0.0; NUM_CATEGORIES];
                    for (b, wb) in w.iter_mut().enumerate() {
                        let step = (1.0 - beta) * f64::from(xt as usize == b) + beta / k;
                        let marginal = ab * f64::from(b == j) + (1.0 - ab) / k;
                        *wb = step * marginal;
                    }
                    let z: f64 = w.iter().sum();
                    for (b, v) in row.iter_mut().enumerate() {
                        *v = (w[b] / z).ln();
                    }
                }
            }
        }
        out
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::domain(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::domain("schedule needs at least one step"));
    }
    let f = |t: f64| {
        let s = COSINE_OFFSET;
        let num = ((t / steps as f64 + s) / (1.0 + s) * FRAC_PI_2)
            .cos()
            .powi(2);
        num / (s * FRAC_PI_2).cos().powi(2)
    };
    let mut beta = Vec::with_capacity(steps);
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut running = 1.0;
    for t in 1..=steps {
        let raw = 1.0 - f(t as f64) / f((t - 1) as f64);
        let b = raw.clamp(MIN_BETA, MAX_BETA);
        running *= 1.0 - b;
        beta.push(b);
        alpha_bar.push(running);
    }
    Ok(NoiseSchedule {
        kind,
        kernel: ReverseKernel::default(),
        beta,
        alpha_bar,
    })
}

/// Probability that an edge still holds its clean value after `t` steps.
pub fn keep_probability(alpha_bar: f64) -> f64 {
    let k = NUM_CATEGORIES as f64;
    alpha_bar + (1.0 - alpha_bar) / k
}

/// Samples `x_t ~ q(x_t | x_0)`.
pub fn forward_noising<R: Rng + ?Sized>(
    x0: &EdgeGraph,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<EdgeGraph> {
    sched.check_step(t)?;
    let keep = keep_probability(sched.alpha_bar[t - 1]);
    let edges = x0
        .edges
        .iter()
        .map(|&e| if rng.gen::<f64>() < keep { e } else { 1 - e })
        .collect();
    Ok(EdgeGraph { edges })
}

pub fn feature_dim(num_edges: usize) -> usize {
    num_edges * NUM_CATEGORIES + 3
}

/// Input columns that carry the normalized target position.
pub fn condition_columns(num_edges: usize) -> std::ops::Range<usize> {
    let start = num_edges * NUM_CATEGORIES + 1;
    start..start + 2
}

/// `[one-hot(x_t) | t/T | target normalized to the area]`.
pub fn build_features(
    xt: &EdgeGraph,
    t: usize,
    steps: usize,
    cond: &Condition,
    area: &Area,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(feature_dim(xt.len()));
    write_features(xt, t, steps, cond, area, &mut out);
    out
}

fn write_features(
    xt: &EdgeGraph,
    t: usize,
    steps: usize,
    cond: &Condition,
    area: &Area,
    out: &mut Vec<f64>,
) {
    out.clear();
    for &e in &xt.edges {
        for k in 0..NUM_CATEGORIES {
            out.push(if e as usize == k { 1.0 } else { 0.0 });
        }
    }
    out.push(t as f64 / steps as f64);
    let Point { x, y } = area.normalize(cond.target);
    out.push(x);
    out.push(y);
}

/// Per-edge log-probabilities from raw logits (`M x K`, row-major).
pub fn log_softmax_rows(logits: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(NUM_CATEGORIES) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&z| z - lse));
    }
    out
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-edge log-probabilities of `x_{t-1}` given the network logits.
pub fn reverse_log_probs(
    logits: &[f64],
    xt: &EdgeGraph,
    t: usize,
    sched: &NoiseSchedule,
) -> Vec<f64> {
    let log_pi = log_softmax_rows(logits);
    if sched.kernel == ReverseKernel::Direct {
        return log_pi;
    }
    let mut out = Vec::with_capacity(log_pi.len());
    for (row, &x) in log_pi.chunks_exact(NUM_CATEGORIES).zip(&xt.edges) {
        let log_q = sched.log_transition(t, x);
        out.extend((0..NUM_CATEGORIES).map(|k| {
            let terms: [f64; NUM_CATEGORIES] = std::array::from_fn(|j| row[j] + log_q[j][k]);
            log_sum_exp(&terms)
        }));
    }
    out
}

/// Writes `d loss / d logits` for one reverse step into `upstream`, where
/// `loss = -weight * log p(chosen) - entropy_weight * H(p)` summed over edges.
#[allow(clippy::too_many_arguments)]
pub(crate) fn step_logit_gradient(
    logits: &[f64],
    xt: &EdgeGraph,
    chosen: &EdgeGraph,
    t: usize,
    sched: &NoiseSchedule,
    weight: f64,
    entropy_weight: f64,
    upstream: &mut [f64],
) {
    const K: usize = NUM_CATEGORIES;
    let log_pi = log_softmax_rows(logits);
    let log_p = reverse_log_probs(logits, xt, t, sched);
    for e in 0..xt.len() {
        let lpi = &log_pi[e * K..(e + 1) * K];
        let lp = &log_p[e * K..(e + 1) * K];
        let log_q = sched.log_transition(t, xt.edges[e]);
        let c = chosen.edges[e] as usize;
        let entropy: f64 = -lp
            .iter()
            .filter(|v| v.is_finite())
            .map(|&v| v.exp() * v)
            .sum::<f64>();
        for i in 0..K {
            let pi = lpi[i].exp();
            // d log p_c / d z_i = pi_i * Q_ic / p_c - pi_i
            let dlogp = (lpi[i] + log_q[i][c] - lp[c]).exp() - pi;
            let mut g = -weight * dlogp;
            if entropy_weight != 0.0 {
                // d H / d z_i = -pi_i * (sum_k Q_ik log p_k + H)
                let cross: f64 = (0..K)
                    .filter(|&k| log_q[i][k].is_finite())
                    .map(|k| log_q[i][k].exp() * lp[k])
                    .sum();
                g += entropy_weight * pi * (cross + entropy);
            }
            upstream[e * K + i] = g;
        }
    }
}

/// The reverse kernel `p(x_{t-1} | x_t, t, cond)` for one step.
#[derive(Debug, Clone)]
pub struct StepDistribution {
    /// `M x K` log-probabilities.
    pub log_probs: Vec<f64>,
}

impl StepDistribution {
    pub fn probability(&self, edge: usize, category: usize) -> f64 {
        self.log_probs[edge * NUM_CATEGORIES + category].exp()
    }

    /// Log-probability of drawing exactly `x`.
    pub fn log_prob_of(&self, x: &EdgeGraph) -> f64 {
        x.edges
            .iter()
            .enumerate()
            .map(|(m, &e)| self.log_probs[m * NUM_CATEGORIES + e as usize])
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (EdgeGraph, f64) {
        let mut edges = Vec::with_capacity(self.log_probs.len() / NUM_CATEGORIES);
        let mut logp = 0.0;
        for row in self.log_probs.chunks_exact(NUM_CATEGORIES) {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = NUM_CATEGORIES - 1;
            for (k, &lp) in row.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    chosen = k;
                    break;
                }
            }
            logp += row[chosen];
            edges.push(chosen as u8);
        }
        (EdgeGraph { edges }, logp)
    }
}

/// Runs the denoiser on `x_t` and returns the reverse-step distribution.
pub fn step_distribution(
    net: &Mlp,
    xt: &EdgeGraph,
    t: usize,
    cond: &Condition,
    scenario: &Scenario,
    sched: &NoiseSchedule,
) -> Result<StepDistribution> {
    sched.check_step(t)?;
    let features = build_features(xt, t, sched.steps(), cond, &scenario.area);
    let (logits, _) = net.forward(&features)?;
    check_logits(&logits, xt.len(), t)?;
    Ok(StepDistribution {
        log_probs: reverse_log_probs(&logits, xt, t, sched),
    })
}

pub(crate) fn check_logits(logits: &[f64], num_edges: usize, t: usize) -> Result<()> {
    if logits.len() != num_edges * NUM_CATEGORIES {
        return Err(Error::domain(format!(
            "denoiser emits {} logits, graph needs {}",
            logits.len(),
            num_edges * NUM_CATEGORIES
        )));
    }
    if let Some(pos) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "reverse_step",
            format!(
                "step {t}: logit {pos} (edge {}, category {}) = {}",
                pos / NUM_CATEGORIES,
                pos % NUM_CATEGORIES,
                logits[pos]
            ),
        ));
    }
    Ok(())
}

/// Draws `x_{t-1}` and its log-probability.
pub fn reverse_step<R: Rng + ?Sized>(
    net: &Mlp,
    xt: &EdgeGraph,
    t: usize,
    cond: &Condition,
    scenario: &Scenario,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(EdgeGraph, f64)> {
    Ok(step_distribution(net, xt, t, cond, scenario, sched)?.sample(rng))
}

/// One full denoising run from pure noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `states[t]` is `x_t`; `states[T]` is the noise draw, `states[0]` the
    /// emitted graph.
    pub states: Vec<EdgeGraph>,
    /// `log_probs[t - 1]` is `log p(x_{t-1} | x_t)`.
    pub log_probs: Vec<f64>,
    pub condition: Condition,
    pub reward: Option<RewardBreakdown>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.log_probs.len()
    }

    pub fn final_graph(&self) -> &EdgeGraph {
        &self.states[0]
    }

    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// The graph after `k` denoising steps (`k = 0` is the noise).
    pub fn after_steps(&self, k: usize) -> Option<&EdgeGraph> {
        self.steps()
            .checked_sub(k)
            .and_then(|idx| self.states.get(idx))
    }
}

pub fn sample_trajectory<R: Rng + ?Sized>(
    net: &Mlp,
    cond: &Condition,
    scenario: &Scenario,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Trajectory> {
    let steps = sched.steps();
    let area = &scenario.area;
    let mut states = Vec::with_capacity(steps + 1);
    let mut log_probs = vec![0.0; steps];
    states.push(sample_uniform_graph(rng, scenario.num_edges()));
    let mut features = Vec::with_capacity(feature_dim(scenario.num_edges()));
    for t in (1..=steps).rev() {
        let xt = states.last().unwrap();
        write_features(xt, t, steps, cond, area, &mut features);
        let (logits, _) = net.forward(&features)?;
        check_logits(&logits, xt.len(), t)?;
        let dist = StepDistribution {
            log_probs: reverse_log_probs(&logits, xt, t, sched),
        };
        let (next, logp) = dist.sample(rng);
        log_probs[t - 1] = logp;
        states.push(next);
    }
    states.reverse();
    Ok(Trajectory {
        states,
        log_probs,
        condition: *cond,
        reward: None,
    })
}

/// Denoising steps shown for progressive snapshots.
pub const DEFAULT_SNAPSHOT_STEPS: [usize; 6] = [0, 10, 20, 30, 40, 50];

/// A trajectory state in the scenario's text format, tagged with its step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub step: usize,
    pub target: Point,
    pub nodes: Vec<Point>,
    pub frequency_hz: f64,
    pub area: Area,
    pub edges: Vec<u8>,
}

impl SnapshotRecord {
    pub fn new(step: usize, graph: &EdgeGraph, scenario: &Scenario, cond: &Condition) -> Self {
        Self {
            step,
            target: cond.target,
            nodes: scenario.nodes.clone(),
            frequency_hz: scenario.frequency_hz,
            area: scenario.area,
            edges: graph.edges.clone(),
        }
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ACTIVE;
    use crate::nn::{Activation, Architecture};
    use crate::rng::seeded;

    fn reference_net_zero(scenario: &Scenario) -> Mlp {
        let m = scenario.num_edges();
        Mlp::zeros(Architecture::reference(feature_dim(m), m * NUM_CATEGORIES)).unwrap()
    }

    #[test]
    fn cosine_schedule_properties() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        assert_eq!(s.steps(), 50);
        assert!(s.alpha_bar[49] < 0.01);
        assert!((s.alpha_bar[0] - 1.0).abs() < 0.01);
        assert!(s.beta.iter().all(|&b| b > 0.0 && b <= MAX_BETA));
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        for i in 0..50 {
            let prev = if i == 0 { 1.0 } else { s.alpha_bar[i - 1] };
            assert!((s.alpha_bar[i] - prev * (1.0 - s.beta[i])).abs() < 1e-15);
        }
        assert!(make_schedule(0, ScheduleKind::Cosine).is_err());
    }

    #[test]
    fn cosine_closed_form_at_terminal_step() {
        // Closed form evaluated independently: f(1) / f(0) with s = 0.008.
        let f = |t: f64| {
            ((t + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2)
        };
        let closed = f(1.0) / f(0.0);
        assert!(closed < 0.01);
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        assert!(s.alpha_bar[49] <= 0.01 && s.alpha_bar[48] > closed);
    }

    #[test]
    fn forward_noising_marginals() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        assert!(1.0 - keep_probability(s.alpha_bar[0]) < 0.01);
        assert_eq!(keep_probability(0.0), 0.5);

        let x0 = EdgeGraph::full(36);
        let mut rng = seeded(1);
        let mut flips = 0;
        for _ in 0..200 {
            flips += forward_noising(&x0, 1, &s, &mut rng).unwrap().hamming(&x0);
        }
        assert!((flips as f64) / (200.0 * 36.0) < 0.01);
        assert!(forward_noising(&x0, 0, &s, &mut rng).is_err());
        assert!(forward_noising(&x0, 51, &s, &mut rng).is_err());
    }

    #[test]
    fn feature_layout() {
        let s = Scenario::reference();
        let mut g = EdgeGraph::empty(36);
        g.edges[1] = ACTIVE;
        let f = build_features(&g, 50, 50, &Condition::at(0.0, 0.0), &s.area);
        assert_eq!(f.len(), 75);
        assert_eq!(&f[..4], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(f[72], 1.0);
        assert_eq!(&f[73..], &[0.0, 0.0]);
        let f = build_features(&g, 10, 50, &Condition::at(10.0, 5.0), &s.area);
        assert_eq!(&f[72..], &[0.2, 1.0, 0.5]);
    }

    #[test]
    fn zero_network_is_uniform() {
        let s = Scenario::reference();
        let net = reference_net_zero(&s);
        let sched = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let xt = EdgeGraph::empty(36);
        let cond = Condition::at(3.0, 4.0);
        let (_, logp) = reverse_step(&net, &xt, 10, &cond, &s, &sched, &mut seeded(0)).unwrap();
        assert!((logp - 36.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((logp + 24.953).abs() < 1e-3);
        let d = step_distribution(&net, &xt, 10, &cond, &s, &sched).unwrap();
        for m in 0..36 {
            assert!((d.probability(m, 0) + d.probability(m, 1) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reverse_step_is_deterministic() {
        let s = Scenario::reference();
        let m = s.num_edges();
        let net = Mlp::init(
            Architecture::reference(feature_dim(m), 2 * m),
            &mut seeded(4),
        )
        .unwrap();
        let sched = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let xt = sample_uniform_graph(&mut seeded(5), m);
        let cond = Condition::at(7.0, 2.0);
        let a = reverse_step(&net, &xt, 25, &cond, &s, &sched, &mut seeded(6)).unwrap();
        let b = reverse_step(&net, &xt, 25, &cond, &s, &sched, &mut seeded(6)).unwrap();
        assert_eq!(a, b);
        let d = step_distribution(&net, &xt, 25, &cond, &s, &sched).unwrap();
        assert!((d.log_prob_of(&a.0) - a.1).abs() < 1e-12);
    }

    #[test]
    fn three_node_log_prob_matches_enumeration() {
        let mut s = Scenario::reference();
        s.nodes.truncate(3);
        let m = s.num_edges();
        assert_eq!(m, 3);
        let arch = Architecture {
            input_dim: feature_dim(m),
            hidden_dims: vec![6],
            output_dim: 2 * m,
            activation: Activation::Silu,
        };
        let net = Mlp::init(arch, &mut seeded(12)).unwrap();
        let sched = make_schedule(5, ScheduleKind::Cosine).unwrap();
        let xt = EdgeGraph::from_states(vec![1, 0, 1]).unwrap();
        let cond = Condition::at(4.0, 1.0);
        let f = build_features(&xt, 3, 5, &cond, &s.area);
        let (logits, _) = net.forward(&f).unwrap();
        // Per-edge softmax by hand, then the product over every outcome.
        let p_active: Vec<f64> = (0..m)
            .map(|e| {
                let (z0, z1) = (logits[2 * e], logits[2 * e + 1]);
                z1.exp() / (z0.exp() + z1.exp())
            })
            .collect();
        let prob = |bits: [u8; 3]| -> f64 {
            (0..m)
                .map(|e| {
                    if bits[e] == 1 {
                        p_active[e]
                    } else {
                        1.0 - p_active[e]
                    }
                })
                .product()
        };
        let mut total = 0.0;
        for code in 0..8u8 {
            total += prob([code & 1, (code >> 1) & 1, (code >> 2) & 1]);
        }
        assert!((total - 1.0).abs() < 1e-12);
        let (x, logp) = reverse_step(&net, &xt, 3, &cond, &s, &sched, &mut seeded(1)).unwrap();
        let bits = [x.edges[0], x.edges[1], x.edges[2]];
        assert!((logp - prob(bits).ln()).abs() < 1e-12);
    }

    #[test]
    fn trajectory_shape() {
        let s = Scenario::reference();
        let net = reference_net_zero(&s);
        let sched = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let traj =
            sample_trajectory(&net, &Condition::at(5.0, 5.0), &s, &sched, &mut seeded(2)).unwrap();
        assert_eq!(traj.states.len(), 51);
        assert_eq!(traj.log_probs.len(), 50);
        assert!(traj.total_log_prob().is_finite() && traj.total_log_prob() <= 0.0);
        assert!(traj.log_probs.iter().all(|&l| l <= 0.0));
        for k in DEFAULT_SNAPSHOT_STEPS {
            assert_eq!(traj.after_steps(k), Some(&traj.states[50 - k]));
        }
        assert_eq!(traj.after_steps(51), None);
        // The noise draw is the first thing taken from the stream.
        assert_eq!(traj.states[50], sample_uniform_graph(&mut seeded(2), 36));
    }

    #[test]
    fn saturated_policy_emits_empty_graph() {
        let s = Scenario::reference();
        let mut net = reference_net_zero(&s);
        let last = net.num_layers() - 1;
        for pair in net.bias_mut(last).chunks_exact_mut(2) {
            pair[0] = 20.0;
            pair[1] = -20.0;
        }
        let sched = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let mut rng = seeded(3);
        for _ in 0..20 {
            let traj =
                sample_trajectory(&net, &Condition::at(1.0, 9.0), &s, &sched, &mut rng).unwrap();
            assert_eq!(traj.final_graph(), &EdgeGraph::empty(36));
        }
        // P(all 36 inactive) = (1 + e^-40)^-36.
        let d = step_distribution(
            &net,
            &EdgeGraph::full(36),
            1,
            &Condition::at(1.0, 9.0),
            &s,
            &sched,
        )
        .unwrap();
        assert!(d.log_prob_of(&EdgeGraph::empty(36)).exp() > 0.999);
    }

    #[test]
    fn non_finite_logits_are_reported() {
        let s = Scenario::reference();
        let mut net = reference_net_zero(&s);
        let last = net.num_layers() - 1;
        net.bias_mut(last)[5] = f64::NAN;
        let sched = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let err = reverse_step(
            &net,
            &EdgeGraph::empty(36),
            4,
            &Condition::at(1.0, 1.0),
            &s,
            &sched,
            &mut seeded(0),
        )
        .unwrap_err();
        match err {
            Error::Numeric { detail, .. } => assert!(detail.contains("edge 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn snapshot_text_has_graph_fields() {
        let s = Scenario::reference();
        let rec = SnapshotRecord::new(30, &EdgeGraph::empty(36), &s, &Condition::at(2.0, 3.0));
        let text = rec.to_text().unwrap();
        assert!(text.contains("step = 30"));
        assert!(text.contains("edges = ["));
        assert!(text.contains("frequency_hz"));
        let back: SnapshotRecord = toml::from_str(&text).unwrap();
        assert_eq!(back, rec);
    }

    /// `q(x_t = a | x_0 = j)` from the closed-form marginal.
    fn marginal(ab: f64, a: usize, j: usize) -> f64 {
        ab * f64::from(a == j) + (1.0 - ab) / 2.0
    }

    #[test]
    fn posterior_transition_matches_bayes_rule() {
        let sched = make_schedule(50, ScheduleKind::Cosine)
            .unwrap()
            .with_kernel(ReverseKernel::Posterior);
        for t in [1, 2, 17, 50] {
            let ab_t = sched.alpha_bar[t - 1];
            let ab_prev = if t == 1 { 1.0 } else { sched.alpha_bar[t - 2] };
            let beta = sched.beta[t - 1];
            for a in 0..2usize {
                let q = sched.log_transition(t, a as u8);
                for (j, row) in q.iter().enumerate() {
                    for (b, &entry) in row.iter().enumerate() {
                        let step = (1.0 - beta) * f64::from(a == b) + beta / 2.0;
                        let bayes = step * marginal(ab_prev, b, j) / marginal(ab_t, a, j);
                        assert!(
                            (entry.exp() - bayes).abs() < 1e-9,
                            "t={t} a={a} j={j} b={b}"
                        );
                    }
                }
            }
        }
        let direct = make_schedule(5, ScheduleKind::Cosine).unwrap();
        let q = direct.log_transition(3, 1);
        assert_eq!(q[0][0], 0.0);
        assert_eq!(q[1][1], 0.0);
        assert_eq!(q[0][1], f64::NEG_INFINITY);
    }

    #[test]
    fn posterior_at_first_step_returns_prediction() {
        let s = Scenario::reference();
        let net = reference_net_zero(&s);
        let sched = make_schedule(50, ScheduleKind::Cosine)
            .unwrap()
            .with_kernel(ReverseKernel::Posterior);
        let cond = Condition::at(3.0, 4.0);
        let d = step_distribution(&net, &EdgeGraph::full(36), 1, &cond, &s, &sched).unwrap();
        assert!((d.log_prob_of(&EdgeGraph::empty(36)) - 36.0 * 0.5f64.ln()).abs() < 1e-12);
        // Later steps lean toward keeping the current state.
        let d = step_distribution(&net, &EdgeGraph::full(36), 40, &cond, &s, &sched).unwrap();
        assert!(d.probability(0, ACTIVE as usize) > 0.5);
        assert!((d.probability(0, 0) + d.probability(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let xt = EdgeGraph::from_states(vec![1, 0, 1]).unwrap();
        let chosen = EdgeGraph::from_states(vec![0, 0, 1]).unwrap();
        let logits = vec![0.3, -1.2, 2.0, 0.5, -0.7, 0.1];
        let (w, h) = (0.8, 0.3);
        for kernel in [ReverseKernel::Direct, ReverseKernel::Posterior] {
            let sched = make_schedule(8, ScheduleKind::Cosine)
                .unwrap()
                .with_kernel(kernel);
            for t in [1, 4, 8] {
                let loss = |z: &[f64]| -> f64 {
                    let lp = reverse_log_probs(z, &xt, t, &sched);
                    let mut total = 0.0;
                    for e in 0..3 {
                        let row = &lp[2 * e..2 * e + 2];
                        let entropy: f64 = -row.iter().map(|v| v.exp() * v).sum::<f64>();
                        total += -w * row[chosen.edges[e] as usize] - h * entropy;
                    }
                    total
                };
                let mut grad = vec![0.0; 6];
                step_logit_gradient(&logits, &xt, &chosen, t, &sched, w, h, &mut grad);
                for i in 0..6 {
                    let mut up = logits.clone();
                    let mut down = logits.clone();
                    up[i] += 1e-6;
                    down[i] -= 1e-6;
                    let numeric = (loss(&up) - loss(&down)) / 2e-6;
                    assert!(
                        (numeric - grad[i]).abs() < 1e-7,
                        "{kernel:?} t={t} i={i}: {numeric} vs {}",
                        grad[i]
                    );
                }
            }
        }
    }
}
