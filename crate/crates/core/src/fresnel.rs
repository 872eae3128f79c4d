//! Fresnel-zone geometry and the link-selection reward.
//!
//! The first Fresnel zone of a link is the ellipse of points whose path
//! `tx -> p -> rx` is at most half a wavelength longer than the direct path.
//! A link senses a target well when the target sits inside (or near) that
//! ellipse. The reward trades a saturating sensing gain against a constant
//! cost per active link:
//!
//! ```text
//! total = G0 * (1 - exp(-sum q_i)) - c * L,   q_i = exp(-max(0, s_i) / sigma)
//! ```
//!
//! where `s_i` is the target's excess path over link `i` and `L` the number
//! of active links.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{self, Condition, EdgeGraph, Point, Scenario, Violation};
use crate::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Reward constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Saturation level `G0` of the sensing gain.
    pub gain_scale: f64,
    /// Cost `c` per active link.
    pub link_cost: f64,
    /// Decay length `sigma` of link quality outside the zone, meters.
    pub decay_length_m: f64,
    /// Excess path beyond which an active link counts as ineffective, meters.
    pub ineffective_threshold_m: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            gain_scale: 400.0,
            link_cost: 25.0,
            decay_length_m: 0.5,
            ineffective_threshold_m: 1.0,
        }
    }
}

impl RewardParams {
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut positive = |v: f64, code: &'static str, name: &str| {
            if !(v.is_finite() && v > 0.0) {
                out.push(Violation::new(
                    code,
                    format!("{name} must be positive, got {v}"),
                ));
            }
        };
        positive(self.gain_scale, "nonpositive_gain_scale", "gain_scale");
        positive(self.link_cost, "nonpositive_link_cost", "link_cost");
        positive(
            self.decay_length_m,
            "nonpositive_decay_length",
            "decay_length_m",
        );
        positive(
            self.ineffective_threshold_m,
            "nonpositive_ineffective_threshold",
            "ineffective_threshold_m",
        );
        if self.gain_scale <= self.link_cost {
            out.push(Violation::new(
                "gain_not_above_cost",
                format!(
                    "gain_scale ({}) must exceed link_cost ({})",
                    self.gain_scale, self.link_cost
                ),
            ));
        }
        out
    }
}

pub fn wavelength(frequency_hz: f64) -> Result<f64> {
    if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
        return Err(Error::domain(format!(
            "frequency must be positive, got {frequency_hz}"
        )));
    }
    Ok(SPEED_OF_LIGHT / frequency_hz)
}

/// Semi-minor axis of the first Fresnel ellipse of a link of length `d`.
///
/// The ellipse is `|TP| + |PR| = d + lambda/2`, so its semi-major axis is
/// `a = (d + lambda/2) / 2` and `b^2 = a^2 - (d/2)^2 = (lambda d + lambda^2/4) / 4`.
pub fn fresnel_semi_minor(d: f64, lambda: f64) -> Result<f64> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::domain(format!(
            "link length must be positive, got {d}"
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain(format!(
            "wavelength must be non-negative, got {lambda}"
        )));
    }
    Ok(0.5 * (lambda * d + lambda * lambda / 4.0).sqrt())
}

pub fn fresnel_semi_major(d: f64, lambda: f64) -> f64 {
    (d + lambda / 2.0) / 2.0
}

/// One transmitter/receiver pair at a given wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub tx: Point,
    pub rx: Point,
    pub length: f64,
    pub wavelength: f64,
}

impl LinkGeometry {
    pub fn new(tx: Point, rx: Point, wavelength: f64) -> Result<Self> {
        let length = tx.distance(rx);
        if length.is_nan() || length <= 0.0 {
            return Err(Error::domain("link endpoints coincide"));
        }
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::domain(format!(
                "wavelength must be positive, got {wavelength}"
            )));
        }
        Ok(Self {
            tx,
            rx,
            length,
            wavelength,
        })
    }

    pub fn semi_major(&self) -> f64 {
        fresnel_semi_major(self.length, self.wavelength)
    }

    pub fn semi_minor(&self) -> f64 {
        0.5 * (self.wavelength * self.length + self.wavelength * self.wavelength / 4.0).sqrt()
    }

    pub fn midpoint(&self) -> Point {
        Point::new((self.tx.x + self.rx.x) / 2.0, (self.tx.y + self.rx.y) / 2.0)
    }

    /// Orientation of the major axis, radians.
    pub fn angle(&self) -> f64 {
        (self.rx.y - self.tx.y).atan2(self.rx.x - self.tx.x)
    }
}

/// Path-length excess of `p` over the first Fresnel ellipse of `link`.
/// Non-positive exactly when `p` is inside or on the ellipse.
pub fn excess_path(p: Point, link: &LinkGeometry) -> f64 {
    p.distance(link.tx) + p.distance(link.rx) - (link.length + link.wavelength / 2.0)
}

pub fn link_quality(s: f64, sigma: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::domain(format!(
            "decay length must be positive, got {sigma}"
        )));
    }
    Ok((-s.max(0.0) / sigma).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub total: f64,
    pub gain_term: f64,
    pub cost_term: f64,
    /// Quality of each active link, in canonical edge order.
    pub per_link_quality: Vec<f64>,
    pub active_link_count: usize,
}

/// Geometry of every candidate link of `scenario`, in canonical order.
pub fn link_geometries(scenario: &Scenario) -> Result<Vec<LinkGeometry>> {
    let lambda = wavelength(scenario.frequency_hz)?;
    scenario
        .links()
        .map(|(i, j)| LinkGeometry::new(scenario.nodes[i], scenario.nodes[j], lambda))
        .collect()
}

fn check_len(g: &EdgeGraph, scenario: &Scenario) -> Result<()> {
    if g.len() != scenario.num_edges() {
        return Err(Error::domain(format!(
            "graph has {} edges, scenario has {}",
            g.len(),
            scenario.num_edges()
        )));
    }
    Ok(())
}

/// Scores `g` for sensing the target in `cond`.
pub fn reward(g: &EdgeGraph, scenario: &Scenario, cond: &Condition) -> Result<RewardBreakdown> {
    check_len(g, scenario)?;
    let params = &scenario.reward;
    let lambda = wavelength(scenario.frequency_hz)?;
    let mut qualities = Vec::new();
    for (m, (i, j)) in scenario.links().enumerate() {
        if !g.is_active(m) {
            continue;
        }
        let link = LinkGeometry::new(scenario.nodes[i], scenario.nodes[j], lambda)?;
        qualities.push(link_quality(
            excess_path(cond.target, &link),
            params.decay_length_m,
        )?);
    }
    Ok(reward_from_qualities(qualities, params))
}

/// Reward of a set of active links given their qualities.
pub fn reward_from_qualities(qualities: Vec<f64>, params: &RewardParams) -> RewardBreakdown {
    let coverage: f64 = qualities.iter().sum();
    let gain_term = params.gain_scale * (1.0 - (-coverage).exp());
    let cost_term = params.link_cost * qualities.len() as f64;
    RewardBreakdown {
        total: gain_term - cost_term,
        gain_term,
        cost_term,
        active_link_count: qualities.len(),
        per_link_quality: qualities,
    }
}

/// All links among the four devices nearest the target.
pub fn greedy_baseline(scenario: &Scenario, cond: &Condition) -> Result<EdgeGraph> {
    const CHOSEN: usize = 4;
    let n = scenario.num_nodes();
    if n < CHOSEN {
        return Err(Error::domain(format!(
            "greedy baseline needs at least {CHOSEN} nodes, scenario has {n}"
        )));
    }
    let mut order: Vec<(f64, usize)> = scenario
        .nodes
        .iter()
        .enumerate()
        .map(|(id, p)| (p.distance(cond.target), id))
        .collect();
    order.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    let chosen: Vec<usize> = order[..CHOSEN].iter().map(|&(_, id)| id).collect();
    let mut links = Vec::with_capacity(CHOSEN * (CHOSEN - 1) / 2);
    for (a, &i) in chosen.iter().enumerate() {
        for &j in &chosen[a + 1..] {
            links.push((i, j));
        }
    }
    EdgeGraph::from_links(n, &links)
}

/// Each link active independently with probability one half.
pub fn random_baseline<R: Rng + ?Sized>(rng: &mut R, m: usize) -> EdgeGraph {
    graph::sample_uniform_graph(rng, m)
}

/// Active links whose excess path exceeds the ineffective threshold.
pub fn ineffective_link_count(
    g: &EdgeGraph,
    scenario: &Scenario,
    cond: &Condition,
) -> Result<usize> {
    check_len(g, scenario)?;
    let lambda = wavelength(scenario.frequency_hz)?;
    let threshold = scenario.reward.ineffective_threshold_m;
    let mut count = 0;
    for (m, (i, j)) in scenario.links().enumerate() {
        if g.is_active(m) {
            let link = LinkGeometry::new(scenario.nodes[i], scenario.nodes[j], lambda)?;
            if excess_path(cond.target, &link) > threshold {
                count += 1;
            }
        }
    }
    Ok(count)
}
