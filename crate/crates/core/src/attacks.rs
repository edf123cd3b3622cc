//! Attack and fault scenarios, and the network timeline they modify.
//!
//! Every scenario is reduced to its effect on the network: links disabled,
//! link weights scaled, or flows redirected to a different destination. The
//! [`NetworkTimeline`] holds those effects as piecewise-constant epochs over
//! simulation time, each with its own routing table.
//!
//! # Scenario file grammar
//!
//! Scenario files are TOML:
//!
//! ```toml
//! kind = "link-weight-distortion"   # see AttackKind
//! attacker = "R07"                  # router id; optional for none/benign kinds
//! victims = ["R03-R09"]             # routers, or links as "A-B" for link kinds
//! intensity = 1.0                   # (0, 1], DNS kinds only
//! windows = [[900, 1500]]           # [start, end) in TU from measurement start
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::TrafficMatrix;
use crate::topo::{recompute_routes, LinkId, RouterId, RouterIdx, RoutingState, Topology};

/// Weight multiplier of the link-weight distortion attack.
pub const DISTORTION_FACTOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    None,
    PartialDisconnect,
    LinkWeightDistortion,
    DnsCachePoisoning,
    AuthoritativeDnsPoisoning,
    BenignLinkFailure,
}

impl AttackKind {
    /// Whether active windows count as attack time in the ground truth.
    pub fn is_malicious(self) -> bool {
        !matches!(self, AttackKind::None | AttackKind::BenignLinkFailure)
    }

    fn victims_are_links(self) -> bool {
        matches!(self, AttackKind::LinkWeightDistortion | AttackKind::BenignLinkFailure)
    }

    fn needs_attacker(self) -> bool {
        !matches!(self, AttackKind::None | AttackKind::BenignLinkFailure)
    }
}

fn default_intensity() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackScenario {
    pub kind: AttackKind,
    #[serde(default)]
    pub attacker: Option<String>,
    #[serde(default)]
    pub victims: Vec<String>,
    #[serde(default = "default_intensity")]
    pub intensity: f64,
    /// `[start, end)` in TU, relative to the start of measurement.
    #[serde(default)]
    pub windows: Vec<(u64, u64)>,
}

impl AttackScenario {
    pub fn none() -> Self {
        AttackScenario {
            kind: AttackKind::None,
            attacker: None,
            victims: Vec::new(),
            intensity: 1.0,
            windows: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("unknown router `{0}`")]
    UnknownRouter(String),
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("scenario kind {0:?} requires an attacker")]
    MissingAttacker(AttackKind),
    #[error("scenario kind {0:?} requires at least one victim")]
    MissingVictims(AttackKind),
    #[error("attacker `{0}` is also a victim")]
    AttackerIsVictim(String),
    #[error("intensity must lie in (0, 1], got {0}")]
    Intensity(f64),
    #[error("window [{0}, {1}) is empty or exceeds the run duration {2}")]
    Window(u64, u64, u64),
    #[error("windows [{0}, {1}) and [{2}, {3}) overlap")]
    OverlappingWindows(u64, u64, u64, u64),
    #[error("disconnecting the victims would isolate attacker `{0}`")]
    IsolatesAttacker(String),
}

/// The network-level effect of a scenario while one of its windows is active.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Effects {
    pub weight_factors: BTreeMap<LinkId, f64>,
    pub disabled: BTreeSet<LinkId>,
    /// Flow `(src, dst)` delivered to a different destination.
    pub diversions: BTreeMap<(RouterIdx, RouterIdx), RouterIdx>,
}

impl Effects {
    fn merge(&mut self, other: &Effects) {
        for (&l, &f) in &other.weight_factors {
            *self.weight_factors.entry(l).or_insert(1.0) *= f;
        }
        self.disabled.extend(other.disabled.iter().copied());
        for (&k, &v) in &other.diversions {
            self.diversions.entry(k).or_insert(v);
        }
    }

    fn is_empty(&self) -> bool {
        self.weight_factors.is_empty() && self.disabled.is_empty() && self.diversions.is_empty()
    }
}

/// A scenario resolved against a concrete topology and traffic matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledScenario {
    pub kind: AttackKind,
    pub windows: Vec<(u64, u64)>,
    pub effects: Effects,
    /// Routers whose behaviour the scenario targets; link victims contribute
    /// both endpoints.
    pub victim_routers: BTreeSet<RouterIdx>,
    /// DNS kinds: flows eligible for redirection, per victim.
    pub eligible_flows: BTreeMap<RouterIdx, usize>,
}

/// Validates `scenario` and derives its effects. `seed` drives the DNS flow
/// selection; draws are independent per victim.
pub fn compile_scenario(
    scenario: &AttackScenario,
    topo: &Topology,
    matrix: &TrafficMatrix,
    duration_tu: u64,
    seed: u64,
) -> Result<CompiledScenario, ScenarioError> {
    let kind = scenario.kind;
    let mut windows = scenario.windows.clone();
    windows.sort();
    for &(s, e) in &windows {
        if s >= e || e > duration_tu {
            return Err(ScenarioError::Window(s, e, duration_tu));
        }
    }
    for w in windows.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(ScenarioError::OverlappingWindows(w[0].0, w[0].1, w[1].0, w[1].1));
        }
    }
    let mut compiled = CompiledScenario {
        kind,
        windows,
        effects: Effects::default(),
        victim_routers: BTreeSet::new(),
        eligible_flows: BTreeMap::new(),
    };
    if kind == AttackKind::None {
        return Ok(compiled);
    }
    if scenario.victims.is_empty() {
        return Err(ScenarioError::MissingVictims(kind));
    }
    if matches!(kind, AttackKind::DnsCachePoisoning | AttackKind::AuthoritativeDnsPoisoning)
        && !(scenario.intensity > 0.0 && scenario.intensity <= 1.0)
    {
        return Err(ScenarioError::Intensity(scenario.intensity));
    }
    let router = |name: &str| {
        topo.router_index(&RouterId::from(name))
            .ok_or_else(|| ScenarioError::UnknownRouter(name.to_string()))
    };
    let attacker = match (&scenario.attacker, kind.needs_attacker()) {
        (Some(a), _) => Some(router(a)?),
        (None, true) => return Err(ScenarioError::MissingAttacker(kind)),
        (None, false) => None,
    };

    let mut victim_links = Vec::new();
    let mut victim_routers = Vec::new();
    if kind.victims_are_links() {
        for v in &scenario.victims {
            let l = topo
                .link_by_name(v)
                .map_err(|_| ScenarioError::UnknownLink(v.clone()))?;
            let link = topo.link(l);
            victim_links.push(l);
            compiled.victim_routers.extend([link.a, link.b]);
        }
    } else {
        for v in &scenario.victims {
            let r = router(v)?;
            if Some(r) == attacker {
                return Err(ScenarioError::AttackerIsVictim(v.clone()));
            }
            victim_routers.push(r);
            compiled.victim_routers.insert(r);
        }
    }

    let fx = &mut compiled.effects;
    match kind {
        AttackKind::None => {}
        AttackKind::LinkWeightDistortion => {
            for &l in &victim_links {
                *fx.weight_factors.entry(l).or_insert(1.0) *= DISTORTION_FACTOR;
            }
        }
        AttackKind::BenignLinkFailure => {
            fx.disabled.extend(victim_links.iter().copied());
        }
        AttackKind::PartialDisconnect => {
            for &v in &victim_routers {
                let mut incident: Vec<LinkId> = topo.neighbors(v).iter().map(|&(_, l)| l).collect();
                incident.sort();
                let half = incident.len().div_ceil(2);
                fx.disabled.extend(incident.into_iter().take(half));
            }
            let a = attacker.expect("checked above");
            let routing = recompute_routes(topo, &BTreeMap::new(), &fx.disabled);
            for &v in &victim_routers {
                if !routing.is_routable(a, v) {
                    return Err(ScenarioError::IsolatesAttacker(topo.router_id(a).to_string()));
                }
            }
        }
        AttackKind::DnsCachePoisoning | AttackKind::AuthoritativeDnsPoisoning => {
            let a = attacker.expect("checked above");
            let baseline = RoutingState::baseline(topo);
            for &v in &victim_routers {
                let mut eligible: Vec<(RouterIdx, RouterIdx)> = matrix
                    .flows()
                    .filter(|&(s, d, _)| s != a && d != a)
                    .filter(|&(s, d, _)| {
                        if kind == AttackKind::AuthoritativeDnsPoisoning {
                            d == v
                        } else {
                            baseline
                                .route(s, d)
                                .is_some_and(|p| p.routers().contains(&v))
                        }
                    })
                    .map(|(s, d, _)| (s, d))
                    .collect();
                compiled.eligible_flows.insert(v, eligible.len());
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(v as u64 + 1);
                eligible.shuffle(&mut rng);
                let take = (scenario.intensity * eligible.len() as f64).round() as usize;
                for &(s, d) in eligible.iter().take(take) {
                    fx.diversions.entry((s, d)).or_insert(a);
                }
            }
        }
    }
    Ok(compiled)
}

/// One piecewise-constant stretch of the timeline, `[start, end)` in
/// absolute simulation TU.
#[derive(Clone, Debug)]
pub struct Epoch {
    pub start: u64,
    pub end: u64,
    pub effects: Effects,
    pub routing: Arc<RoutingState>,
    pub malicious: bool,
    pub benign_fault: bool,
}

/// Routing and flow redirection over the whole run, warmup included.
#[derive(Clone, Debug)]
pub struct NetworkTimeline {
    warmup_tu: u64,
    horizon_tu: u64,
    epochs: Vec<Epoch>,
    victim_routers: BTreeSet<RouterIdx>,
}

impl NetworkTimeline {
    pub fn new(topo: &Topology, warmup_tu: u64, duration_tu: u64) -> Self {
        let horizon = warmup_tu + duration_tu;
        NetworkTimeline {
            warmup_tu,
            horizon_tu: horizon,
            epochs: vec![Epoch {
                start: 0,
                end: horizon,
                effects: Effects::default(),
                routing: Arc::new(RoutingState::baseline(topo)),
                malicious: false,
                benign_fault: false,
            }],
            victim_routers: BTreeSet::new(),
        }
    }

    pub fn warmup_tu(&self) -> u64 {
        self.warmup_tu
    }

    pub fn horizon_tu(&self) -> u64 {
        self.horizon_tu
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn baseline(&self) -> &RoutingState {
        &self.epochs[0].routing
    }

    /// Routers targeted by the malicious scenarios applied so far.
    pub fn victim_routers(&self) -> &BTreeSet<RouterIdx> {
        &self.victim_routers
    }

    /// Epoch covering absolute TU `slot`; slots past the horizon map to the
    /// last epoch.
    pub fn epoch_at(&self, slot: u64) -> &Epoch {
        let pos = self.epochs.partition_point(|e| e.end <= slot);
        &self.epochs[pos.min(self.epochs.len() - 1)]
    }

    fn split_at(&mut self, t: u64) {
        if let Some(pos) = self.epochs.iter().position(|e| e.start < t && t < e.end) {
            let mut tail = self.epochs[pos].clone();
            tail.start = t;
            self.epochs[pos].end = t;
            self.epochs.insert(pos + 1, tail);
        }
    }

    /// Overlays a compiled scenario. Times outside its windows are untouched.
    pub fn apply(&mut self, topo: &Topology, scenario: &CompiledScenario) {
        if scenario.kind.is_malicious() {
            self.victim_routers.extend(scenario.victim_routers.iter().copied());
        }
        let mut cache: BTreeMap<RoutingKey, Arc<RoutingState>> = BTreeMap::new();
        for e in &self.epochs {
            cache.entry(routing_key(topo, &e.effects)).or_insert_with(|| e.routing.clone());
        }
        for &(s, e) in &scenario.windows {
            let (s, e) = (s + self.warmup_tu, e + self.warmup_tu);
            self.split_at(s);
            self.split_at(e);
            for epoch in self.epochs.iter_mut().filter(|ep| ep.start >= s && ep.end <= e) {
                if scenario.kind.is_malicious() {
                    epoch.malicious = true;
                }
                if scenario.kind == AttackKind::BenignLinkFailure {
                    epoch.benign_fault = true;
                }
                if scenario.effects.is_empty() {
                    continue;
                }
                epoch.effects.merge(&scenario.effects);
                let key = routing_key(topo, &epoch.effects);
                let fx = &epoch.effects;
                epoch.routing = cache
                    .entry(key)
                    .or_insert_with(|| {
                        let overrides = fx
                            .weight_factors
                            .iter()
                            .map(|(&l, &f)| (l, topo.link(l).weight * f))
                            .collect();
                        Arc::new(recompute_routes(topo, &overrides, &fx.disabled))
                    })
                    .clone();
            }
        }
    }
}

type RoutingKey = (Vec<(LinkId, u64)>, Vec<LinkId>);

fn routing_key(_topo: &Topology, fx: &Effects) -> RoutingKey {
    (
        fx.weight_factors.iter().map(|(&l, f)| (l, f.to_bits())).collect(),
        fx.disabled.iter().copied().collect(),
    )
}

/// Compiles `scenario` and overlays it on `timeline`.
pub fn apply_scenario(
    timeline: &mut NetworkTimeline,
    scenario: &AttackScenario,
    topo: &Topology,
    matrix: &TrafficMatrix,
    seed: u64,
) -> Result<CompiledScenario, ScenarioError> {
    let duration = timeline.horizon_tu - timeline.warmup_tu;
    let compiled = compile_scenario(scenario, topo, matrix, duration, seed)?;
    timeline.apply(topo, &compiled);
    Ok(compiled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo::parse_topology;

    const TRIANGLE: &str = "node A\nnode B\nnode C\n\
        link A B 1 1e8 0.001 100\nlink B C 1 1e8 0.001 100\nlink A C 1 1e8 0.001 100\n";

    fn uniform_matrix(topo: &Topology) -> TrafficMatrix {
        let n = topo.router_count();
        let mut m = TrafficMatrix::zeros(n);
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    m.set(a, b, 1e6);
                }
            }
        }
        m
    }

    fn scenario(kind: AttackKind, attacker: Option<&str>, victims: &[&str], windows: Vec<(u64, u64)>) -> AttackScenario {
        AttackScenario {
            kind,
            attacker: attacker.map(str::to_string),
            victims: victims.iter().map(|s| s.to_string()).collect(),
            intensity: 1.0,
            windows,
        }
    }

    #[test]
    fn none_kind_leaves_timeline_unchanged() {
        let t = parse_topology(TRIANGLE).unwrap();
        let m = uniform_matrix(&t);
        let mut tl = NetworkTimeline::new(&t, 10, 100);
        let before = tl.clone();
        apply_scenario(&mut tl, &AttackScenario::none(), &t, &m, 1).unwrap();
        assert_eq!(tl.epochs().len(), before.epochs().len());
        assert_eq!(*tl.epoch_at(50).routing, *before.epoch_at(50).routing);
        assert!(!tl.epoch_at(50).malicious);
    }

    #[test]
    fn distortion_flips_route_inside_window_only() {
        let t = parse_topology(TRIANGLE).unwrap();
        let m = uniform_matrix(&t);
        let mut tl = NetworkTimeline::new(&t, 10, 100);
        let s = scenario(AttackKind::LinkWeightDistortion, Some("B"), &["A-C"], vec![(20, 40)]);
        apply_scenario(&mut tl, &s, &t, &m, 1).unwrap();
        let route = |slot| tl.epoch_at(slot).routing.route(0, 2).unwrap().names(&t);
        let direct: Vec<RouterId> = vec!["A".into(), "C".into()];
        let detour: Vec<RouterId> = vec!["A".into(), "B".into(), "C".into()];
        assert_eq!(route(29), direct);
        assert_eq!(route(30), detour);
        assert_eq!(route(49), detour);
        assert_eq!(route(50), direct);
        assert!(tl.epoch_at(30).malicious && !tl.epoch_at(50).malicious);
        assert_eq!(*tl.epoch_at(55).routing, *tl.baseline());
    }

    #[test]
    fn partial_disconnect_takes_half_the_interfaces() {
        // D has four links; the first two by link id get disabled
        let t = parse_topology(
            "node A\nnode B\nnode C\nnode D\nnode E\n\
             link A D 1 1 1 1\nlink B D 1 1 1 1\nlink C D 1 1 1 1\nlink D E 1 1 1 1\n\
             link A B 1 1 1 1\nlink B C 1 1 1 1\nlink C E 1 1 1 1\n",
        )
        .unwrap();
        let m = uniform_matrix(&t);
        let s = scenario(AttackKind::PartialDisconnect, Some("A"), &["D"], vec![(0, 5)]);
        let c = compile_scenario(&s, &t, &m, 10, 0).unwrap();
        let names: Vec<String> = c.effects.disabled.iter().map(|&l| t.link_name(l)).collect();
        assert_eq!(names, ["A-D", "B-D"]);
    }

    #[test]
    fn isolating_attacker_is_rejected() {
        let t = parse_topology("node A\nnode B\nlink A B 1 1 1 1\n").unwrap();
        let m = uniform_matrix(&t);
        let s = scenario(AttackKind::PartialDisconnect, Some("A"), &["B"], vec![(0, 5)]);
        assert!(matches!(compile_scenario(&s, &t, &m, 10, 0), Err(ScenarioError::IsolatesAttacker(_))));
    }

    #[test]
    fn validation_errors() {
        let t = parse_topology(TRIANGLE).unwrap();
        let m = uniform_matrix(&t);
        let same = scenario(AttackKind::DnsCachePoisoning, Some("A"), &["A"], vec![(0, 5)]);
        assert!(matches!(compile_scenario(&same, &t, &m, 10, 0), Err(ScenarioError::AttackerIsVictim(_))));
        let unknown = scenario(AttackKind::PartialDisconnect, Some("A"), &["Q"], vec![(0, 5)]);
        assert!(matches!(compile_scenario(&unknown, &t, &m, 10, 0), Err(ScenarioError::UnknownRouter(_))));
        let bad_link = scenario(AttackKind::LinkWeightDistortion, Some("A"), &["A-Q"], vec![(0, 5)]);
        assert!(matches!(compile_scenario(&bad_link, &t, &m, 10, 0), Err(ScenarioError::UnknownLink(_))));
        let late = scenario(AttackKind::LinkWeightDistortion, Some("A"), &["A-B"], vec![(5, 20)]);
        assert!(matches!(compile_scenario(&late, &t, &m, 10, 0), Err(ScenarioError::Window(..))));
        let overlap = scenario(AttackKind::LinkWeightDistortion, Some("A"), &["A-B"], vec![(0, 5), (4, 8)]);
        assert!(matches!(compile_scenario(&overlap, &t, &m, 10, 0), Err(ScenarioError::OverlappingWindows(..))));
        let mut weak = scenario(AttackKind::DnsCachePoisoning, Some("A"), &["B"], vec![(0, 5)]);
        weak.intensity = 0.0;
        assert!(matches!(compile_scenario(&weak, &t, &m, 10, 0), Err(ScenarioError::Intensity(_))));
        let no_attacker = scenario(AttackKind::PartialDisconnect, None, &["B"], vec![(0, 5)]);
        assert!(matches!(compile_scenario(&no_attacker, &t, &m, 10, 0), Err(ScenarioError::MissingAttacker(_))));
    }

    #[test]
    fn dns_selection_is_proportional_nested_and_seeded() {
        let mut text = String::new();
        for i in 0..8 {
            text.push_str(&format!("node N{i}\n"));
        }
        for i in 1..8 {
            text.push_str(&format!("link N0 N{i} 1 1e8 0.001 100\n"));
        }
        let t = parse_topology(&text).unwrap();
        let m = uniform_matrix(&t);
        let mut previous: BTreeSet<(RouterIdx, RouterIdx)> = BTreeSet::new();
        for step in 1..=10 {
            let intensity = step as f64 / 10.0;
            let mut s = scenario(AttackKind::DnsCachePoisoning, Some("N7"), &["N0"], vec![(0, 5)]);
            s.intensity = intensity;
            let c = compile_scenario(&s, &t, &m, 10, 42).unwrap();
            let eligible = c.eligible_flows[&0] as f64;
            let chosen: BTreeSet<_> = c.effects.diversions.keys().copied().collect();
            assert!((chosen.len() as f64 - intensity * eligible).abs() <= 1.0);
            assert!(previous.is_subset(&chosen));
            assert!(c.effects.diversions.values().all(|&d| d == 7));
            assert_eq!(c, compile_scenario(&s, &t, &m, 10, 42).unwrap());
            previous = chosen;
        }
    }

    #[test]
    fn scenario_toml_round_trip() {
        let text = "kind = \"dns-cache-poisoning\"\nattacker = \"R28\"\nvictims = [\"R1\", \"R2\"]\nintensity = 0.4\nwindows = [[100, 200]]\n";
        let s = AttackScenario::parse(text).unwrap();
        assert_eq!(s.kind, AttackKind::DnsCachePoisoning);
        assert_eq!(s.windows, vec![(100, 200)]);
        assert_eq!(AttackScenario::parse(&s.to_text()).unwrap(), s);
        assert!(AttackScenario::parse("kind = \"volumetric\"").is_err());
    }
}
