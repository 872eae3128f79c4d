//! Scenario description and the categorical edge graph that the diffusion
//! model generates.
//!
//! Candidate links are the `M = N(N-1)/2` unordered device pairs, stored in
//! canonical order `(0,1), (0,2), .., (0,N-1), (1,2), ..`. A graph stores one
//! category per link; node activation is always derived from the links.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fresnel::RewardParams;
use crate::{Error, Result};

/// Number of categories per edge (inactive, active).
pub const NUM_CATEGORIES: usize = 2;

pub const INACTIVE: u8 = 0;
pub const ACTIVE: u8 = 1;

/// A 2-D coordinate in meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned rectangle. Serialized as `[xmin, ymin, xmax, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Area {
    pub min: Point,
    pub max: Point,
}

impl Area {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self {
            min: Point::new(xmin, ymin),
            max: Point::new(xmax, ymax),
        }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Maps `p` into `[0,1]^2` relative to the rectangle.
    pub fn normalize(&self, p: Point) -> Point {
        Point::new(
            (p.x - self.min.x) / self.width(),
            (p.y - self.min.y) / self.height(),
        )
    }

    /// Uniform random point inside the rectangle.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        Point::new(
            self.min.x + rng.gen::<f64>() * self.width(),
            self.min.y + rng.gen::<f64>() * self.height(),
        )
    }
}

impl From<[f64; 4]> for Area {
    fn from([a, b, c, d]: [f64; 4]) -> Self {
        Area::new(a, b, c, d)
    }
}

impl From<Area> for [f64; 4] {
    fn from(a: Area) -> Self {
        [a.min.x, a.min.y, a.max.x, a.max.y]
    }
}

/// The generation condition: where the target to be sensed is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub target: Point,
}

impl Condition {
    pub const fn at(x: f64, y: f64) -> Self {
        Self {
            target: Point::new(x, y),
        }
    }
}

/// Immutable world description.
///
/// Only the geometry is serialized; reward constants come from the `reward`
/// block of the run configuration and are attached with
/// [`Scenario::with_reward`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub nodes: Vec<Point>,
    pub frequency_hz: f64,
    pub area: Area,
    #[serde(skip, default)]
    pub reward: RewardParams,
}

/// Minimum separation for two node positions to count as distinct.
pub const MIN_NODE_SEPARATION: f64 = 1e-9;

impl Scenario {
    pub fn new(nodes: Vec<Point>, frequency_hz: f64, area: Area, reward: RewardParams) -> Self {
        Self {
            nodes,
            frequency_hz,
            area,
            reward,
        }
    }

    /// Nine devices on the `{0,5,10}^2` grid in a 10 m square, 2.4 GHz.
    pub fn reference() -> Self {
        let mut nodes = Vec::with_capacity(9);
        for y in [0.0, 5.0, 10.0] {
            for x in [0.0, 5.0, 10.0] {
                nodes.push(Point::new(x, y));
            }
        }
        Self::new(
            nodes,
            2.4e9,
            Area::new(0.0, 0.0, 10.0, 10.0),
            RewardParams::default(),
        )
    }

    pub fn with_reward(mut self, reward: RewardParams) -> Self {
        self.reward = reward;
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        num_edges(self.nodes.len())
    }

    /// Endpoint pairs of every candidate link, in canonical order.
    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> {
        let n = self.nodes.len();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
    }

    /// Returns `Ok(())` or every violated invariant.
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        validate_scenario(self)
    }
}

/// Number of unordered pairs among `n` nodes.
pub const fn num_edges(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Canonical index of the unordered pair `{i, j}` among `n` nodes.
pub fn edge_index(i: usize, j: usize, n: usize) -> Result<usize> {
    if i >= n || j >= n {
        return Err(Error::domain(format!(
            "node id out of range: ({i}, {j}) with {n} nodes"
        )));
    }
    if i == j {
        return Err(Error::domain(format!(
            "self-loop ({i}, {j}) has no edge index"
        )));
    }
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    Ok(i * n - i * (i + 1) / 2 + (j - i - 1))
}

/// Inverse of [`edge_index`]: the endpoints `(i, j)` with `i < j`.
pub fn edge_endpoints(index: usize, n: usize) -> Result<(usize, usize)> {
    if index >= num_edges(n) {
        return Err(Error::domain(format!(
            "edge index {index} out of range for {n} nodes"
        )));
    }
    let mut start = 0;
    for i in 0..n {
        let row = n - i - 1;
        if index < start + row {
            return Ok((i, i + 1 + index - start));
        }
        start += row;
    }
    unreachable!("index bounded by num_edges")
}

/// Categorical activation state of every candidate link.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeGraph {
    pub edges: Vec<u8>,
}

impl EdgeGraph {
    pub fn empty(m: usize) -> Self {
        Self {
            edges: vec![INACTIVE; m],
        }
    }

    pub fn full(m: usize) -> Self {
        Self {
            edges: vec![ACTIVE; m],
        }
    }

    /// Builds a graph, rejecting categories outside `{0, 1}`.
    pub fn from_states(edges: Vec<u8>) -> Result<Self> {
        if let Some(pos) = edges.iter().position(|&e| e as usize >= NUM_CATEGORIES) {
            return Err(Error::domain(format!(
                "edge {pos} has category {} (expected 0 or 1)",
                edges[pos]
            )));
        }
        Ok(Self { edges })
    }

    /// Graph with exactly the listed node pairs active.
    pub fn from_links(n: usize, links: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(num_edges(n));
        for &(i, j) in links {
            g.edges[edge_index(i, j, n)?] = ACTIVE;
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn is_active(&self, index: usize) -> bool {
        self.edges[index] == ACTIVE
    }

    pub fn active_count(&self) -> usize {
        self.edges.iter().filter(|&&e| e == ACTIVE).count()
    }

    /// Canonical indices of the active edges.
    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, &e)| e == ACTIVE)
            .map(|(m, _)| m)
    }

    /// Number of edges whose state differs from `other`.
    pub fn hamming(&self, other: &EdgeGraph) -> usize {
        self.edges
            .iter()
            .zip(&other.edges)
            .filter(|(a, b)| a != b)
            .count()
    }
}

impl fmt::Display for EdgeGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.edges {
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Row-per-edge one-hot matrix (`rows x categories`, row-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotGraph {
    rows: usize,
    categories: usize,
    data: Vec<u8>,
}

impl OneHotGraph {
    pub fn from_raw(rows: usize, categories: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != rows * categories {
            return Err(Error::format(format!(
                "one-hot data has {} entries, expected {rows}x{categories}",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            categories,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn row(&self, m: usize) -> &[u8] {
        &self.data[m * self.categories..(m + 1) * self.categories]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }
}

pub fn encode_one_hot(g: &EdgeGraph) -> OneHotGraph {
    let mut data = vec![0u8; g.len() * NUM_CATEGORIES];
    for (m, &e) in g.edges.iter().enumerate() {
        data[m * NUM_CATEGORIES + e as usize] = 1;
    }
    OneHotGraph {
        rows: g.len(),
        categories: NUM_CATEGORIES,
        data,
    }
}

pub fn decode_one_hot(x: &OneHotGraph) -> Result<EdgeGraph> {
    if x.categories != NUM_CATEGORIES {
        return Err(Error::format(format!(
            "one-hot graph has {} categories, expected {NUM_CATEGORIES}",
            x.categories
        )));
    }
    let mut edges = Vec::with_capacity(x.rows);
    for m in 0..x.rows {
        let row = x.row(m);
        let ones = row.iter().filter(|&&v| v == 1).count();
        let zeros = row.iter().filter(|&&v| v == 0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::format(format!("row {m} is not one-hot: {row:?}")));
        }
        edges.push(row.iter().position(|&v| v == 1).unwrap() as u8);
    }
    Ok(EdgeGraph { edges })
}

/// Nodes incident to at least one active edge.
pub fn active_nodes(g: &EdgeGraph, n: usize) -> BTreeSet<usize> {
    let mut nodes = BTreeSet::new();
    for m in g.active_indices() {
        if let Ok((i, j)) = edge_endpoints(m, n) {
            nodes.insert(i);
            nodes.insert(j);
        }
    }
    nodes
}

/// Each edge independently uniform over the categories.
pub fn sample_uniform_graph<R: Rng + ?Sized>(rng: &mut R, m: usize) -> EdgeGraph {
    EdgeGraph {
        edges: (0..m)
            .map(|_| rng.gen_range(0..NUM_CATEGORIES as u8))
            .collect(),
    }
}

/// One violated scenario invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: &'static str,
    pub message: String,
}

impl Violation {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

pub fn validate_scenario(s: &Scenario) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let n = s.nodes.len();
    if n < 2 {
        out.push(Violation::new(
            "too_few_nodes",
            format!("scenario needs at least 2 nodes, has {n}"),
        ));
    }
    if !(s.frequency_hz.is_finite() && s.frequency_hz > 0.0) {
        out.push(Violation::new(
            "nonpositive_frequency",
            format!("carrier frequency must be positive, got {}", s.frequency_hz),
        ));
    }
    let area_ok = s.area.min.is_finite()
        && s.area.max.is_finite()
        && s.area.width() > 0.0
        && s.area.height() > 0.0;
    if !area_ok {
        out.push(Violation::new(
            "invalid_area",
            format!(
                "area must be a finite rectangle with positive extent, got {:?}",
                s.area
            ),
        ));
    }
    for (i, p) in s.nodes.iter().enumerate() {
        if !p.is_finite() {
            out.push(Violation::new(
                "nonfinite_node",
                format!("node {i} has non-finite position"),
            ));
        } else if area_ok && !s.area.contains(*p) {
            out.push(Violation::new(
                "node_outside_area",
                format!("node {i} at ({}, {}) lies outside the area", p.x, p.y),
            ));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if s.nodes[i].distance(s.nodes[j]) <= MIN_NODE_SEPARATION {
                out.push(Violation::new(
                    "duplicate_node",
                    format!("nodes {i} and {j} share a position"),
                ));
            }
        }
    }
    out.extend(s.reward.violations());
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn edge_index_examples() {
        assert_eq!(edge_index(0, 1, 9).unwrap(), 0);
        assert_eq!(edge_index(1, 0, 9).unwrap(), 0);
        assert_eq!(edge_index(7, 8, 9).unwrap(), 35);
    }

    #[test]
    fn edge_index_last_pair_by_enumeration() {
        // Enumerate pairs in canonical order; the last one is (7,8).
        let mut count = 0;
        let mut last = None;
        for i in 0..9 {
            for j in i + 1..9 {
                last = Some((i, j, count));
                count += 1;
            }
        }
        let (i, j, k) = last.unwrap();
        assert_eq!((i, j), (7, 8));
        assert_eq!(edge_index(i, j, 9).unwrap(), k);
        assert_eq!(count, 36);
    }

    #[test]
    fn edge_index_rejects_bad_ids() {
        assert!(matches!(edge_index(3, 3, 9), Err(Error::Domain(_))));
        assert!(matches!(edge_index(0, 9, 9), Err(Error::Domain(_))));
        assert!(matches!(edge_index(12, 1, 9), Err(Error::Domain(_))));
    }

    #[test]
    fn edge_index_is_bijective_for_small_n() {
        for n in 2..=12 {
            let mut seen = vec![false; num_edges(n)];
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let k = edge_index(i, j, n).unwrap();
                    assert_eq!(k, edge_index(j, i, n).unwrap());
                    if i < j {
                        assert!(!seen[k], "n={n}: index {k} hit twice");
                        seen[k] = true;
                        assert_eq!(edge_endpoints(k, n).unwrap(), (i, j));
                    }
                }
            }
            assert!(seen.iter().all(|&s| s), "n={n}: image not onto");
        }
    }

    #[test]
    fn links_follow_canonical_order() {
        let s = Scenario::reference();
        for (k, (i, j)) in s.links().enumerate() {
            assert_eq!(edge_index(i, j, 9).unwrap(), k);
        }
        assert_eq!(s.links().count(), 36);
    }

    #[test]
    fn one_hot_examples() {
        let x = encode_one_hot(&EdgeGraph::empty(36));
        assert_eq!(x.rows(), 36);
        assert!((0..36).all(|m| x.row(m) == [1, 0]));

        let x = encode_one_hot(&EdgeGraph::full(36));
        assert!((0..36).all(|m| x.row(m) == [0, 1]));

        let mut g = EdgeGraph::empty(36);
        g.edges[0] = ACTIVE;
        let x = encode_one_hot(&g);
        assert_eq!(x.row(0), [0, 1]);
        assert!((1..36).all(|m| x.row(m) == [1, 0]));

        let back = decode_one_hot(&OneHotGraph::from_raw(36, 2, [1, 0].repeat(36)).unwrap());
        assert_eq!(back.unwrap(), EdgeGraph::empty(36));
    }

    #[test]
    fn decode_rejects_non_one_hot_rows() {
        let mut data = [1u8, 0].repeat(36);
        data[10] = 1;
        data[11] = 1;
        let x = OneHotGraph::from_raw(36, 2, data).unwrap();
        assert!(matches!(decode_one_hot(&x), Err(Error::Format(_))));

        let x = OneHotGraph::from_raw(2, 2, vec![0, 0, 1, 0]).unwrap();
        assert!(matches!(decode_one_hot(&x), Err(Error::Format(_))));
    }

    #[test]
    fn one_hot_round_trip_on_random_graphs() {
        let mut rng = seeded(11);
        for _ in 0..1000 {
            let m = rng.gen_range(1..80);
            let g = sample_uniform_graph(&mut rng, m);
            assert_eq!(decode_one_hot(&encode_one_hot(&g)).unwrap(), g);
        }
    }

    #[test]
    fn active_nodes_examples() {
        assert!(active_nodes(&EdgeGraph::empty(36), 9).is_empty());
        let g = EdgeGraph::from_links(9, &[(0, 1)]).unwrap();
        assert_eq!(active_nodes(&g, 9), BTreeSet::from([0, 1]));

        let g = EdgeGraph::from_links(9, &[(0, 1), (1, 2)]).unwrap();
        // Brute-force incidence scan over every node and pair.
        let mut expected = BTreeSet::new();
        for v in 0..9 {
            for (k, (i, j)) in Scenario::reference().links().enumerate() {
                if g.is_active(k) && (i == v || j == v) {
                    expected.insert(v);
                }
            }
        }
        assert_eq!(expected, BTreeSet::from([0, 1, 2]));
        assert_eq!(active_nodes(&g, 9), expected);
    }

    #[test]
    fn uniform_graph_is_deterministic_per_seed() {
        let a = sample_uniform_graph(&mut seeded(5), 36);
        let b = sample_uniform_graph(&mut seeded(5), 36);
        assert_eq!(a, b);
        assert_eq!(sample_uniform_graph(&mut seeded(5), 1).len(), 1);
    }

    #[test]
    fn uniform_graph_edge_frequency_is_one_half() {
        // 4-sigma binomial band on 10,000 draws is +-0.02.
        let mut rng = seeded(2024);
        let mut counts = [0usize; 36];
        for _ in 0..10_000 {
            let g = sample_uniform_graph(&mut rng, 36);
            for m in g.active_indices() {
                counts[m] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.5).abs() <= 0.02, "frequency {f}");
        }
    }

    #[test]
    fn reference_scenario_is_valid() {
        assert_eq!(Scenario::reference().validate(), Ok(()));
    }

    #[test]
    fn validation_reports_codes() {
        let mut s = Scenario::reference();
        s.nodes[4] = s.nodes[0];
        let errs = s.validate().unwrap_err();
        assert!(errs.iter().any(|v| v.code == "duplicate_node"));

        let mut s = Scenario::reference();
        s.frequency_hz = 0.0;
        let errs = s.validate().unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].code, "nonpositive_frequency");

        let mut s = Scenario::reference();
        s.nodes.truncate(1);
        s.nodes[0] = Point::new(20.0, 0.0);
        let codes: Vec<_> = s.validate().unwrap_err().iter().map(|v| v.code).collect();
        assert!(codes.contains(&"too_few_nodes"));
        assert!(codes.contains(&"node_outside_area"));
    }

    #[test]
    fn scenario_text_format_uses_fixed_field_names() {
        let s = Scenario::reference();
        let text = toml::to_string(&s).unwrap();
        assert!(text.contains("nodes = "));
        assert!(text.contains("frequency_hz = 2400000000"));
        assert!(text.contains("area = [0.0, 0.0, 10.0, 10.0]"));
        let back: Scenario = toml::from_str(&text).unwrap();
        assert_eq!(back, s);

        let g = EdgeGraph::from_links(9, &[(0, 1)]).unwrap();
        let text = toml::to_string(&g).unwrap();
        assert!(text.starts_with("edges = [1, 0,"));
    }

    proptest! {
        #[test]
        fn active_nodes_bounded_by_edges(bits in proptest::collection::vec(0u8..2, 36)) {
            let g = EdgeGraph::from_states(bits).unwrap();
            let nodes = active_nodes(&g, 9);
            prop_assert!(nodes.iter().all(|&v| v < 9));
            prop_assert!(nodes.len() <= 2 * g.active_count());
        }
    }
}
