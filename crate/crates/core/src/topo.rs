//! Router-level topologies and shortest-path routing.
//!
//! A [`Topology`] is an undirected, connected graph of routers. Links carry a
//! routing weight plus the physical properties the simulator needs
//! (capacity, propagation delay, buffer size). [`RoutingState`] holds the
//! all-pairs shortest paths for one set of weight overrides and disabled
//! links.
//!
//! # Topology file grammar
//!
//! ```text
//! # comment
//! node <id>
//! link <idA> <idB> <weight> <capacity_bps> <prop_delay_s> <buffer_pkts>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Router ids are
//! whitespace-free strings. Every router referenced by a `link` line must be
//! declared by a `node` line (in any order).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque router identifier. Ordering is plain lexicographic string order.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RouterId(String);

impl RouterId {
    pub fn new(id: impl Into<String>) -> Self {
        RouterId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RouterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for RouterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<&str> for RouterId {
    fn from(s: &str) -> Self {
        RouterId(s.to_string())
    }
}

/// Dense router index. Indices follow ascending [`RouterId`] order.
pub type RouterIdx = usize;

/// Link identifier. Links are numbered in ascending order of their
/// (smaller endpoint id, larger endpoint id) pair.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// Endpoint with the smaller router index.
    pub a: RouterIdx,
    /// Endpoint with the larger router index.
    pub b: RouterIdx,
    pub weight: f64,
    pub capacity_bps: f64,
    pub prop_delay_s: f64,
    pub buffer_pkts: u32,
}

impl Link {
    /// The endpoint opposite to `r`. Panics if `r` is not an endpoint.
    pub fn other(&self, r: RouterIdx) -> RouterIdx {
        if r == self.a {
            self.b
        } else {
            assert_eq!(r, self.b, "router is not an endpoint of this link");
            self.a
        }
    }
}

/// Link description used to build a [`Topology`] from router names.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    pub a: RouterId,
    pub b: RouterId,
    pub weight: f64,
    pub capacity_bps: f64,
    pub prop_delay_s: f64,
    pub buffer_pkts: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("topology has no routers")]
    Empty,
    #[error("link references unknown router `{0}`")]
    UnknownRouter(RouterId),
    #[error("duplicate router `{0}`")]
    DuplicateRouter(RouterId),
    #[error("duplicate link between `{0}` and `{1}`")]
    DuplicateLink(RouterId, RouterId),
    #[error("self-loop on router `{0}`")]
    SelfLoop(RouterId),
    #[error("link `{0}`-`{1}`: {2}")]
    InvalidLink(RouterId, RouterId, String),
    #[error("topology is not connected: `{0}` is unreachable from `{1}`")]
    Disconnected(RouterId, RouterId),
    #[error("unknown link `{0}`")]
    UnknownLink(String),
}

/// An undirected, connected, simple router graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    routers: Vec<RouterId>,
    index: BTreeMap<RouterId, RouterIdx>,
    links: Vec<Link>,
    /// Per router: (neighbor, link) sorted by neighbor index.
    adjacency: Vec<Vec<(RouterIdx, LinkId)>>,
}

impl Topology {
    pub fn new(
        routers: impl IntoIterator<Item = RouterId>,
        links: impl IntoIterator<Item = LinkSpec>,
    ) -> Result<Self, TopologyError> {
        let mut ids = Vec::new();
        let mut seen = BTreeSet::new();
        for r in routers {
            if !seen.insert(r.clone()) {
                return Err(TopologyError::DuplicateRouter(r));
            }
            ids.push(r);
        }
        if ids.is_empty() {
            return Err(TopologyError::Empty);
        }
        ids.sort();
        let index: BTreeMap<RouterId, RouterIdx> =
            ids.iter().cloned().enumerate().map(|(i, r)| (r, i)).collect();

        let mut by_pair: BTreeMap<(RouterIdx, RouterIdx), Link> = BTreeMap::new();
        for spec in links {
            let ia = *index
                .get(&spec.a)
                .ok_or_else(|| TopologyError::UnknownRouter(spec.a.clone()))?;
            let ib = *index
                .get(&spec.b)
                .ok_or_else(|| TopologyError::UnknownRouter(spec.b.clone()))?;
            if ia == ib {
                return Err(TopologyError::SelfLoop(spec.a));
            }
            let invalid = |msg: &str| TopologyError::InvalidLink(spec.a.clone(), spec.b.clone(), msg.into());
            if !(spec.weight > 0.0 && spec.weight.is_finite()) {
                return Err(invalid("weight must be positive"));
            }
            if !(spec.capacity_bps > 0.0 && spec.capacity_bps.is_finite()) {
                return Err(invalid("capacity must be positive"));
            }
            if !(spec.prop_delay_s > 0.0 && spec.prop_delay_s.is_finite()) {
                return Err(invalid("propagation delay must be positive"));
            }
            if spec.buffer_pkts < 1 {
                return Err(invalid("buffer must hold at least one packet"));
            }
            let (a, b) = if ia < ib { (ia, ib) } else { (ib, ia) };
            if by_pair.contains_key(&(a, b)) {
                return Err(TopologyError::DuplicateLink(ids[a].clone(), ids[b].clone()));
            }
            by_pair.insert(
                (a, b),
                Link {
                    a,
                    b,
                    weight: spec.weight,
                    capacity_bps: spec.capacity_bps,
                    prop_delay_s: spec.prop_delay_s,
                    buffer_pkts: spec.buffer_pkts,
                },
            );
        }
        let links: Vec<Link> = by_pair.into_values().collect();
        let mut adjacency = vec![Vec::new(); ids.len()];
        for (i, l) in links.iter().enumerate() {
            adjacency[l.a].push((l.b, LinkId(i)));
            adjacency[l.b].push((l.a, LinkId(i)));
        }
        for adj in &mut adjacency {
            adj.sort();
        }
        let topo = Topology {
            routers: ids,
            index,
            links,
            adjacency,
        };
        let reach = topo.hop_distances_from(&[0]);
        if let Some(missing) = reach.iter().position(Option::is_none) {
            return Err(TopologyError::Disconnected(
                topo.routers[missing].clone(),
                topo.routers[0].clone(),
            ));
        }
        Ok(topo)
    }

    pub fn router_count(&self) -> usize {
        self.routers.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn routers(&self) -> &[RouterId] {
        &self.routers
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn router_id(&self, idx: RouterIdx) -> &RouterId {
        &self.routers[idx]
    }

    pub fn router_index(&self, id: &RouterId) -> Option<RouterIdx> {
        self.index.get(id).copied()
    }

    pub fn require_router(&self, id: &RouterId) -> Result<RouterIdx, TopologyError> {
        self.router_index(id)
            .ok_or_else(|| TopologyError::UnknownRouter(id.clone()))
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn neighbors(&self, r: RouterIdx) -> &[(RouterIdx, LinkId)] {
        &self.adjacency[r]
    }

    pub fn degree(&self, r: RouterIdx) -> usize {
        self.adjacency[r].len()
    }

    pub fn link_between(&self, a: RouterIdx, b: RouterIdx) -> Option<LinkId> {
        self.adjacency[a]
            .binary_search_by_key(&b, |&(n, _)| n)
            .ok()
            .map(|pos| self.adjacency[a][pos].1)
    }

    /// Resolves `"A-B"` (either endpoint order) to a link id.
    pub fn link_by_name(&self, name: &str) -> Result<LinkId, TopologyError> {
        let unknown = || TopologyError::UnknownLink(name.to_string());
        let (a, b) = name.split_once('-').ok_or_else(unknown)?;
        let ia = self.router_index(&RouterId::from(a)).ok_or_else(unknown)?;
        let ib = self.router_index(&RouterId::from(b)).ok_or_else(unknown)?;
        self.link_between(ia, ib).ok_or_else(unknown)
    }

    /// `"A-B"` with the endpoints in ascending id order.
    pub fn link_name(&self, id: LinkId) -> String {
        let l = self.link(id);
        format!("{}-{}", self.routers[l.a], self.routers[l.b])
    }

    pub fn total_capacity_bps(&self) -> f64 {
        self.links.iter().map(|l| l.capacity_bps).sum()
    }

    /// Unweighted hop distance from the nearest router of `sources`, over all
    /// links. `None` marks unreachable routers.
    pub fn hop_distances_from(&self, sources: &[RouterIdx]) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.routers.len()];
        let mut queue = VecDeque::new();
        for &s in sources {
            if dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &(v, _) in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Serializes back into the topology file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.routers {
            out.push_str(&format!("node {r}\n"));
        }
        for l in &self.links {
            out.push_str(&format!(
                "link {} {} {} {} {} {}\n",
                self.routers[l.a], self.routers[l.b], l.weight, l.capacity_bps, l.prop_delay_s, l.buffer_pkts
            ));
        }
        out
    }
}

/// Parses the plain-text topology format described in the module docs.
pub fn parse_topology(text: &str) -> Result<Topology, TopologyError> {
    let mut routers = Vec::new();
    let mut links = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| TopologyError::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "node" => {
                if fields.len() != 2 {
                    return Err(parse_err(format!("expected `node <id>`, got `{line}`")));
                }
                routers.push(RouterId::from(fields[1]));
            }
            "link" => {
                if fields.len() != 7 {
                    return Err(parse_err(format!(
                        "expected `link <a> <b> <weight> <capacity_bps> <prop_delay_s> <buffer_pkts>`, got {} fields",
                        fields.len()
                    )));
                }
                let num = |i: usize, what: &str| -> Result<f64, TopologyError> {
                    fields[i]
                        .parse::<f64>()
                        .map_err(|_| parse_err(format!("invalid {what} `{}`", fields[i])))
                };
                let buffer = fields[6]
                    .parse::<u32>()
                    .map_err(|_| parse_err(format!("invalid buffer `{}`", fields[6])))?;
                links.push(LinkSpec {
                    a: RouterId::from(fields[1]),
                    b: RouterId::from(fields[2]),
                    weight: num(3, "weight")?,
                    capacity_bps: num(4, "capacity")?,
                    prop_delay_s: num(5, "propagation delay")?,
                    buffer_pkts: buffer,
                });
            }
            other => return Err(parse_err(format!("unknown record `{other}`"))),
        }
    }
    Topology::new(routers, links)
}

/// A loop-free router sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path(pub Vec<RouterIdx>);

impl Path {
    pub fn routers(&self) -> &[RouterIdx] {
        &self.0
    }

    pub fn hop_count(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn reversed(&self) -> Path {
        Path(self.0.iter().rev().copied().collect())
    }

    /// Links traversed in order.
    pub fn links<'a>(&'a self, topo: &'a Topology) -> impl Iterator<Item = LinkId> + 'a {
        self.0
            .windows(2)
            .map(move |w| topo.link_between(w[0], w[1]).expect("path follows links"))
    }

    pub fn names(&self, topo: &Topology) -> Vec<RouterId> {
        self.0.iter().map(|&r| topo.router_id(r).clone()).collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: RouterIdx,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Relative tolerance used when comparing path costs for ties.
const COST_EPS: f64 = 1e-9;

fn same_cost(x: f64, y: f64) -> bool {
    (x - y).abs() <= COST_EPS * (1.0 + x.abs().max(y.abs()))
}

/// All-pairs shortest paths for one (overrides, disabled links) combination.
///
/// For `src < dst` the route is the lexicographically smallest router
/// sequence among minimum-cost paths; `route(dst, src)` is its reverse, so
/// routes are symmetric by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingState {
    overrides: BTreeMap<LinkId, f64>,
    disabled: BTreeSet<LinkId>,
    weights: Vec<f64>,
    enabled: Vec<bool>,
    /// `dist[d][u]`: cost from `u` to `d`.
    dist: Vec<Vec<f64>>,
    /// `next[d][u]`: next hop from `u` toward `d` on the canonical route.
    next: Vec<Vec<Option<RouterIdx>>>,
}

impl RoutingState {
    pub fn baseline(topo: &Topology) -> Self {
        recompute_routes(topo, &BTreeMap::new(), &BTreeSet::new())
    }

    pub fn overrides(&self) -> &BTreeMap<LinkId, f64> {
        &self.overrides
    }

    pub fn disabled(&self) -> &BTreeSet<LinkId> {
        &self.disabled
    }

    pub fn is_enabled(&self, link: LinkId) -> bool {
        self.enabled[link.0]
    }

    pub fn effective_weight(&self, link: LinkId) -> f64 {
        self.weights[link.0]
    }

    /// Shortest-path cost, `None` if unroutable.
    pub fn cost(&self, src: RouterIdx, dst: RouterIdx) -> Option<f64> {
        let c = self.dist[dst][src];
        c.is_finite().then_some(c)
    }

    pub fn is_routable(&self, src: RouterIdx, dst: RouterIdx) -> bool {
        self.dist[dst][src].is_finite()
    }

    /// The route from `src` to `dst`, or `None` when no enabled path exists.
    pub fn route(&self, src: RouterIdx, dst: RouterIdx) -> Option<Path> {
        if !self.is_routable(src, dst) {
            return None;
        }
        if src > dst {
            return self.route(dst, src).map(|p| p.reversed());
        }
        let mut path = vec![src];
        let mut cur = src;
        while cur != dst {
            cur = self.next[dst][cur].expect("routable pair has a next hop");
            path.push(cur);
        }
        Some(Path(path))
    }

    pub fn hop_count(&self, src: RouterIdx, dst: RouterIdx) -> Option<usize> {
        if !self.is_routable(src, dst) {
            return None;
        }
        let (a, b) = if src < dst { (src, dst) } else { (dst, src) };
        let mut hops = 0;
        let mut cur = a;
        while cur != b {
            cur = self.next[b][cur].expect("routable pair has a next hop");
            hops += 1;
        }
        Some(hops)
    }
}

/// Recomputes all-pairs routes under `overrides` (replacement weights) with
/// the `disabled` links removed. Pairs left without a path are unroutable.
pub fn recompute_routes(
    topo: &Topology,
    overrides: &BTreeMap<LinkId, f64>,
    disabled: &BTreeSet<LinkId>,
) -> RoutingState {
    let n = topo.router_count();
    let mut weights: Vec<f64> = topo.links().iter().map(|l| l.weight).collect();
    for (&id, &w) in overrides {
        assert!(w > 0.0, "override weights must be positive");
        weights[id.0] = w;
    }
    let mut enabled = vec![true; topo.link_count()];
    for id in disabled {
        enabled[id.0] = false;
    }

    let mut dist = Vec::with_capacity(n);
    let mut next = Vec::with_capacity(n);
    for d in 0..n {
        let dd = dijkstra(topo, &weights, &enabled, d);
        let mut nd = vec![None; n];
        for u in 0..n {
            if u == d || !dd[u].is_finite() {
                continue;
            }
            // neighbors are sorted by index, i.e. by router id
            nd[u] = topo.neighbors(u).iter().find_map(|&(v, l)| {
                (enabled[l.0] && dd[v].is_finite() && same_cost(weights[l.0] + dd[v], dd[u]))
                    .then_some(v)
            });
        }
        dist.push(dd);
        next.push(nd);
    }
    RoutingState {
        overrides: overrides.clone(),
        disabled: disabled.clone(),
        weights,
        enabled,
        dist,
        next,
    }
}

fn dijkstra(topo: &Topology, weights: &[f64], enabled: &[bool], source: RouterIdx) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; topo.router_count()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry {
        cost: 0.0,
        node: source,
    });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        for &(v, l) in topo.neighbors(node) {
            if !enabled[l.0] {
                continue;
            }
            let c = cost + weights[l.0];
            if c < dist[v] {
                dist[v] = c;
                heap.push(HeapEntry { cost: c, node: v });
            }
        }
    }
    dist
}
