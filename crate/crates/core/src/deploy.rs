//! Setup-phase planning: partitioning routers into Sensors and choosing
//! which router pairs exchange probes.
//!
//! Plans serialize to a line-oriented text format in the same dialect as
//! topology files:
//!
//! ```text
//! sensor <sensor_id> <router>...
//! probe <probe_id> <src> <dst> path <router>...
//! ```
//!
//! The `path` of a probe lists the full roundtrip, source to destination and
//! back.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topo::{Path, RouterId, RouterIdx, RoutingState, Topology};

pub const DEFAULT_MAX_ROUTERS: usize = 4;
pub const DEFAULT_PROBES_LENGTH: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("cannot partition an empty topology")]
    EmptyTopology,
    #[error("max_routers must be at least 1")]
    ZeroMaxRouters,
    #[error("unknown router `{0}`")]
    UnknownRouter(RouterId),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("router `{0}` is not covered by any sensor")]
    Uncovered(RouterId),
    #[error("invalid probe timing: {0}")]
    Timing(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sensor {
    pub id: String,
    /// Members in the order the partitioner added them; the kernel is first.
    pub members: Vec<RouterIdx>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorMap {
    sensors: Vec<Sensor>,
    /// Sensor index per router, `None` when uncovered.
    owner: Vec<Option<usize>>,
}

impl SensorMap {
    pub fn new(router_count: usize, sensors: Vec<Sensor>) -> Self {
        let mut owner = vec![None; router_count];
        for (i, s) in sensors.iter().enumerate() {
            for &r in &s.members {
                owner[r] = Some(i);
            }
        }
        SensorMap { sensors, owner }
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    /// Index of the sensor owning `router`.
    pub fn sensor_of(&self, router: RouterIdx) -> Option<usize> {
        self.owner.get(router).copied().flatten()
    }

    pub fn to_text(&self, topo: &Topology) -> String {
        let mut out = String::from("# sensor <id> <members...>\n");
        for s in &self.sensors {
            out.push_str("sensor ");
            out.push_str(&s.id);
            for &m in &s.members {
                out.push(' ');
                out.push_str(topo.router_id(m).as_str());
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, topo: &Topology) -> Result<Self, PlanError> {
        let mut sensors = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f[0] != "sensor" || f.len() < 3 {
                return Err(PlanError::Parse {
                    line: n + 1,
                    message: format!("expected `sensor <id> <router>...`, got `{line}`"),
                });
            }
            let members = f[2..]
                .iter()
                .map(|r| resolve(topo, r))
                .collect::<Result<Vec<_>, _>>()?;
            sensors.push(Sensor {
                id: f[1].to_string(),
                members,
            });
        }
        Ok(SensorMap::new(topo.router_count(), sensors))
    }
}

fn resolve(topo: &Topology, name: &str) -> Result<RouterIdx, PlanError> {
    let id = RouterId::from(name);
    topo.router_index(&id).ok_or(PlanError::UnknownRouter(id))
}

/// Greedy degree-based partition into disjoint Sensors of at most
/// `max_routers` routers.
///
/// Routers are ranked by descending degree (ties: ascending id). The highest
/// ranked unassigned router becomes the kernel of a new Sensor, which then
/// absorbs the kernel's unassigned neighbor with the highest current degree
/// (degree counted among unassigned routers, ties: ascending id) until the
/// Sensor is full or the kernel has no unassigned neighbors left.
pub fn partition_sensors(topo: &Topology, max_routers: usize) -> Result<SensorMap, PlanError> {
    if max_routers == 0 {
        return Err(PlanError::ZeroMaxRouters);
    }
    let n = topo.router_count();
    if n == 0 {
        return Err(PlanError::EmptyTopology);
    }
    let mut order: Vec<RouterIdx> = (0..n).collect();
    order.sort_by_key(|&r| (std::cmp::Reverse(topo.degree(r)), r));

    let mut remaining = vec![true; n];
    let current_degree = |r: RouterIdx, remaining: &[bool]| {
        topo.neighbors(r).iter().filter(|&&(v, _)| remaining[v]).count()
    };

    let mut sensors = Vec::new();
    for &kernel in &order {
        if !remaining[kernel] {
            continue;
        }
        remaining[kernel] = false;
        let mut members = vec![kernel];
        while members.len() < max_routers {
            let pick = topo
                .neighbors(kernel)
                .iter()
                .map(|&(v, _)| v)
                .filter(|&v| remaining[v])
                .max_by_key(|&v| (current_degree(v, &remaining), std::cmp::Reverse(v)));
            match pick {
                Some(v) => {
                    remaining[v] = false;
                    members.push(v);
                }
                None => break,
            }
        }
        sensors.push(Sensor {
            id: format!("S{}", sensors.len() + 1),
            members,
        });
    }
    Ok(SensorMap::new(n, sensors))
}

/// Routers whose baseline route from `r` has exactly `d` hops, ascending.
pub fn routers_at_distance(
    routing: &RoutingState,
    topo: &Topology,
    r: &RouterId,
    d: usize,
) -> Result<Vec<RouterIdx>, PlanError> {
    let src = topo
        .router_index(r)
        .ok_or_else(|| PlanError::UnknownRouter(r.clone()))?;
    Ok(at_distance(routing, topo.router_count(), src, d))
}

fn at_distance(routing: &RoutingState, n: usize, src: RouterIdx, d: usize) -> Vec<RouterIdx> {
    (0..n)
        .filter(|&c| routing.hop_count(src, c) == Some(d))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub id: String,
    pub src: RouterIdx,
    pub dst: RouterIdx,
    /// Roundtrip Probe-Path: baseline route out and back.
    pub path: Path,
}

impl ProbeSpec {
    /// Feature-name label, `<src>-><dst>`.
    pub fn label(&self, topo: &Topology) -> String {
        format!("{}->{}", topo.router_id(self.src), topo.router_id(self.dst))
    }

    /// Distinct routers on the Probe-Path.
    pub fn routers(&self) -> BTreeSet<RouterIdx> {
        self.path.routers().iter().copied().collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProbeScheme {
    pub probes: Vec<ProbeSpec>,
}

impl ProbeScheme {
    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn to_text(&self, topo: &Topology) -> String {
        let mut out = String::from("# probe <id> <src> <dst> path <roundtrip routers...>\n");
        for p in &self.probes {
            out.push_str(&format!(
                "probe {} {} {} path",
                p.id,
                topo.router_id(p.src),
                topo.router_id(p.dst)
            ));
            for &r in p.path.routers() {
                out.push(' ');
                out.push_str(topo.router_id(r).as_str());
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, topo: &Topology) -> Result<Self, PlanError> {
        let mut probes = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 6 || f[0] != "probe" || f[4] != "path" {
                return Err(PlanError::Parse {
                    line: n + 1,
                    message: format!("expected `probe <id> <src> <dst> path <routers...>`, got `{line}`"),
                });
            }
            let path = f[5..]
                .iter()
                .map(|r| resolve(topo, r))
                .collect::<Result<Vec<_>, _>>()?;
            probes.push(ProbeSpec {
                id: f[1].to_string(),
                src: resolve(topo, f[2])?,
                dst: resolve(topo, f[3])?,
                path: Path(path),
            });
        }
        Ok(ProbeScheme { probes })
    }
}

/// Chooses at most one probe per router and per unordered Sensor pair.
///
/// Routers are visited in ascending id order; each scans the routers exactly
/// `probes_length` baseline hops away (ascending id) and emits a probe to the
/// first one in a different Sensor with no probe yet between the two Sensors.
pub fn generate_probe_scheme(
    topo: &Topology,
    routing: &RoutingState,
    sensors: &SensorMap,
    probes_length: usize,
) -> Result<ProbeScheme, PlanError> {
    let n = topo.router_count();
    let mut linked: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut probes = Vec::new();
    for r in 0..n {
        let src_s = sensors
            .sensor_of(r)
            .ok_or_else(|| PlanError::Uncovered(topo.router_id(r).clone()))?;
        for c in at_distance(routing, n, r, probes_length) {
            let dst_s = sensors
                .sensor_of(c)
                .ok_or_else(|| PlanError::Uncovered(topo.router_id(c).clone()))?;
            let key = (src_s.min(dst_s), src_s.max(dst_s));
            if src_s == dst_s || linked.contains(&key) {
                continue;
            }
            linked.insert(key);
            let out = routing.route(r, c).expect("candidate is routable");
            let mut roundtrip = out.routers().to_vec();
            roundtrip.extend(out.routers().iter().rev().skip(1));
            probes.push(ProbeSpec {
                id: format!("P{}", probes.len() + 1),
                src: r,
                dst: c,
                path: Path(roundtrip),
            });
            break;
        }
    }
    Ok(ProbeScheme { probes })
}

/// Probe re-send and classification intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeTimingConfig {
    /// Seconds between consecutive sends of the same probe.
    pub t_prs: f64,
    /// Seconds per classification window.
    pub t_cl: f64,
    pub probe_size_bytes: u32,
}

impl Default for ProbeTimingConfig {
    fn default() -> Self {
        ProbeTimingConfig {
            t_prs: 1.0 / 25.0,
            t_cl: 1.0,
            probe_size_bytes: 64,
        }
    }
}

impl ProbeTimingConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.t_prs > 0.0 && self.t_cl > 0.0) {
            return Err(PlanError::Timing("intervals must be positive".into()));
        }
        if self.t_cl < 10.0 * self.t_prs * (1.0 - 1e-12) {
            return Err(PlanError::Timing(format!(
                "t_cl ({}) must be at least 10 x t_prs ({})",
                self.t_cl, self.t_prs
            )));
        }
        let ratio = self.t_cl / self.t_prs;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return Err(PlanError::Timing(format!(
                "t_cl / t_prs must be a whole number of sends, got {ratio}"
            )));
        }
        if self.probe_size_bytes == 0 {
            return Err(PlanError::Timing("probe size must be positive".into()));
        }
        Ok(())
    }

    /// Expected sends of one probe per classification window.
    pub fn sends_per_window(&self) -> u64 {
        (self.t_cl / self.t_prs).round() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrafficReport {
    pub probes_per_sec: f64,
    pub bytes_per_sec: f64,
    /// Share of the summed link capacity, in percent.
    pub percent_of_bandwidth: f64,
}

pub fn probe_traffic_report(
    scheme: &ProbeScheme,
    timing: &ProbeTimingConfig,
    topo: &Topology,
) -> ProbeTrafficReport {
    probe_traffic_for(scheme.len(), timing, topo.total_capacity_bps())
}

pub(crate) fn probe_traffic_for(
    probe_count: usize,
    timing: &ProbeTimingConfig,
    total_capacity_bps: f64,
) -> ProbeTrafficReport {
    let probes_per_sec = probe_count as f64 / timing.t_prs;
    let bytes_per_sec = probes_per_sec * timing.probe_size_bytes as f64;
    let percent_of_bandwidth = if total_capacity_bps > 0.0 {
        bytes_per_sec * 8.0 / total_capacity_bps * 100.0
    } else {
        0.0
    };
    ProbeTrafficReport {
        probes_per_sec,
        bytes_per_sec,
        percent_of_bandwidth,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo::parse_topology;

    pub(crate) fn star() -> Topology {
        parse_topology(
            "node X\nnode a\nnode b\nnode c\nnode d\n\
             link X a 1 1e8 0.001 100\nlink X b 1 1e8 0.001 100\n\
             link X c 1 1e8 0.001 100\nlink X d 1 1e8 0.001 100\n",
        )
        .unwrap()
    }

    fn names(topo: &Topology, rs: &[RouterIdx]) -> Vec<String> {
        rs.iter().map(|&r| topo.router_id(r).to_string()).collect()
    }

    #[test]
    fn star_partition() {
        let t = star();
        let m = partition_sensors(&t, 4).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(names(&t, &m.sensors()[0].members), ["X", "a", "b", "c"]);
        assert_eq!(names(&t, &m.sensors()[1].members), ["d"]);
    }

    #[test]
    fn single_router_and_singletons() {
        let one = parse_topology("node A\n").unwrap();
        let m = partition_sensors(&one, 4).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.sensors()[0].members, vec![0]);

        let tri = parse_topology("node A\nnode B\nnode C\nlink A B 1 1 1 1\nlink B C 1 1 1 1\nlink A C 1 1 1 1\n").unwrap();
        let m = partition_sensors(&tri, 1).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.sensors().iter().all(|s| s.members.len() == 1));
        assert_eq!(partition_sensors(&tri, 0), Err(PlanError::ZeroMaxRouters));
    }

    #[test]
    fn distance_queries() {
        let line = parse_topology(
            "node A\nnode B\nnode C\nnode D\nnode E\nlink A B 1 1 1 1\nlink B C 1 1 1 1\nlink C D 1 1 1 1\nlink D E 1 1 1 1\n",
        )
        .unwrap();
        let rs = RoutingState::baseline(&line);
        let got = routers_at_distance(&rs, &line, &RouterId::from("A"), 2).unwrap();
        assert_eq!(names(&line, &got), ["C"]);
        let zero = routers_at_distance(&rs, &line, &RouterId::from("D"), 0).unwrap();
        assert_eq!(names(&line, &zero), ["D"]);
        assert!(routers_at_distance(&rs, &line, &RouterId::from("Z"), 1).is_err());
    }

    #[test]
    fn star_probe_scheme() {
        let t = star();
        let rs = RoutingState::baseline(&t);
        let m = partition_sensors(&t, 4).unwrap();
        let scheme = generate_probe_scheme(&t, &rs, &m, 2).unwrap();
        // `a` is visited before `d` in ascending id order
        assert_eq!(scheme.len(), 1);
        let p = &scheme.probes[0];
        assert_eq!(p.label(&t), "a->d");
        assert_eq!(names(&t, p.path.routers()), ["a", "X", "d", "X", "a"]);
    }

    #[test]
    fn one_sensor_means_no_probes() {
        let t = star();
        let rs = RoutingState::baseline(&t);
        let m = partition_sensors(&t, 5).unwrap();
        assert_eq!(m.len(), 1);
        assert!(generate_probe_scheme(&t, &rs, &m, 2).unwrap().is_empty());
    }

    #[test]
    fn two_singletons_forced_probe() {
        let t = parse_topology("node A\nnode B\nnode C\nlink A B 1 1 1 1\nlink B C 1 1 1 1\n").unwrap();
        let rs = RoutingState::baseline(&t);
        let m = SensorMap::new(
            3,
            vec![
                Sensor { id: "S1".into(), members: vec![0, 1] },
                Sensor { id: "S2".into(), members: vec![2] },
            ],
        );
        let scheme = generate_probe_scheme(&t, &rs, &m, 2).unwrap();
        assert_eq!(scheme.len(), 1);
        assert_eq!(scheme.probes[0].label(&t), "A->C");
    }

    #[test]
    fn plans_round_trip_through_text() {
        let t = star();
        let rs = RoutingState::baseline(&t);
        let m = partition_sensors(&t, 4).unwrap();
        let s = generate_probe_scheme(&t, &rs, &m, 2).unwrap();
        assert_eq!(SensorMap::parse(&m.to_text(&t), &t).unwrap(), m);
        assert_eq!(ProbeScheme::parse(&s.to_text(&t), &t).unwrap(), s);
        assert!(matches!(
            SensorMap::parse("sensor S1 Q\n", &t),
            Err(PlanError::UnknownRouter(_))
        ));
    }

    #[test]
    fn overhead_matches_published_rows() {
        let timing = ProbeTimingConfig::default();
        let r = probe_traffic_for(5, &timing, 1e8);
        assert_eq!(r.probes_per_sec, 125.0);
        assert_eq!(r.bytes_per_sec, 8_000.0);
        let r = probe_traffic_for(14, &timing, 1e8);
        assert_eq!(r.probes_per_sec, 350.0);
        assert_eq!(r.bytes_per_sec, 22_400.0);
        let empty = probe_traffic_for(0, &timing, 1e8);
        assert_eq!((empty.probes_per_sec, empty.bytes_per_sec, empty.percent_of_bandwidth), (0.0, 0.0, 0.0));
    }

    #[test]
    fn timing_validation() {
        assert!(ProbeTimingConfig::default().validate().is_ok());
        assert_eq!(ProbeTimingConfig::default().sends_per_window(), 25);
        let bad = ProbeTimingConfig { t_prs: 0.5, t_cl: 1.0, probe_size_bytes: 64 };
        assert!(bad.validate().is_err());
        let frac = ProbeTimingConfig { t_prs: 0.03, t_cl: 1.0, probe_size_bytes: 64 };
        assert!(frac.validate().is_err());
    }
}
