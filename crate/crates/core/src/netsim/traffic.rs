//! Gravity-model demand and self-similar ON/OFF rate processes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto};
use serde::{Deserialize, Serialize};

use crate::topo::{RouterIdx, RoutingState, Topology};

/// Average demand in bits/second per ordered router pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficMatrix {
    n: usize,
    demand: Vec<f64>,
}

impl TrafficMatrix {
    pub fn zeros(n: usize) -> Self {
        TrafficMatrix {
            n,
            demand: vec![0.0; n * n],
        }
    }

    pub fn router_count(&self) -> usize {
        self.n
    }

    pub fn get(&self, src: RouterIdx, dst: RouterIdx) -> f64 {
        self.demand[src * self.n + dst]
    }

    pub fn set(&mut self, src: RouterIdx, dst: RouterIdx, bps: f64) {
        assert!(bps >= 0.0 && bps.is_finite(), "demand must be finite and non-negative");
        assert!(src != dst || bps == 0.0, "self demand must be zero");
        self.demand[src * self.n + dst] = bps;
    }

    /// Pairs with positive demand, ascending by (src, dst).
    pub fn flows(&self) -> impl Iterator<Item = (RouterIdx, RouterIdx, f64)> + '_ {
        self.demand
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0.0)
            .map(move |(i, &d)| (i / self.n, i % self.n, d))
    }

    pub fn total_bps(&self) -> f64 {
        self.demand.iter().sum()
    }

    /// Offered load per link (bits/s, both directions summed) when every
    /// flow follows `routing`.
    pub fn link_loads(&self, topo: &Topology, routing: &RoutingState) -> Vec<f64> {
        let mut load = vec![0.0; topo.link_count()];
        for (s, d, bps) in self.flows() {
            if let Some(p) = routing.route(s, d) {
                for l in p.links(topo) {
                    load[l.0] += bps;
                }
            }
        }
        load
    }
}

/// Gravity model with router weights drawn uniformly from (0, 1].
///
/// Demand is scaled so that the most utilized link under baseline routing
/// carries `load_fraction` of its capacity on average.
pub fn generate_traffic_matrix(topo: &Topology, seed: u64, load_fraction: f64) -> TrafficMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..topo.router_count())
        .map(|_| 1.0 - rng.random::<f64>())
        .collect();
    gravity_matrix(topo, &weights, load_fraction)
}

/// Gravity matrix for explicit router weights.
pub fn gravity_matrix(topo: &Topology, weights: &[f64], load_fraction: f64) -> TrafficMatrix {
    assert_eq!(weights.len(), topo.router_count());
    assert!(load_fraction > 0.0, "load fraction must be positive");
    let n = topo.router_count();
    let mut m = TrafficMatrix::zeros(n);
    for a in 0..n {
        for b in 0..n {
            if a != b {
                m.set(a, b, weights[a] * weights[b]);
            }
        }
    }
    let routing = RoutingState::baseline(topo);
    let loads = m.link_loads(topo, &routing);
    let max_util = loads
        .iter()
        .zip(topo.links())
        .map(|(l, link)| l / link.capacity_bps)
        .fold(0.0, f64::max);
    if max_util > 0.0 {
        let scale = load_fraction / max_util;
        for d in &mut m.demand {
            *d *= scale;
        }
    }
    m
}

/// Background traffic shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficModel {
    /// Pareto shape of ON and OFF period lengths.
    pub pareto_shape: f64,
    pub mean_on_s: f64,
    pub mean_off_s: f64,
    /// ON/OFF sources superposed per router pair.
    pub sources_per_flow: u32,
    pub packet_size_bytes: u32,
    /// `false` replaces the ON/OFF processes with constant-rate flows.
    pub self_similar: bool,
}

impl Default for TrafficModel {
    fn default() -> Self {
        TrafficModel {
            pareto_shape: 1.5,
            mean_on_s: 1.0,
            mean_off_s: 1.0,
            sources_per_flow: 4,
            packet_size_bytes: 1000,
            self_similar: true,
        }
    }
}

impl TrafficModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.pareto_shape > 1.0) {
            return Err("pareto_shape must exceed 1 for a finite mean".into());
        }
        if !(self.mean_on_s > 0.0 && self.mean_off_s > 0.0) {
            return Err("ON/OFF means must be positive".into());
        }
        if self.sources_per_flow == 0 || self.packet_size_bytes == 0 {
            return Err("sources_per_flow and packet_size_bytes must be positive".into());
        }
        Ok(())
    }

    pub fn packet_bits(&self) -> f64 {
        self.packet_size_bytes as f64 * 8.0
    }

    fn duty_cycle(&self) -> f64 {
        self.mean_on_s / (self.mean_on_s + self.mean_off_s)
    }
}

#[derive(Clone, Debug)]
struct OnOffSource {
    on: bool,
    /// Seconds left in the current period.
    remaining: f64,
}

/// Superposed ON/OFF sources driving one router pair.
#[derive(Clone, Debug)]
pub(crate) struct FlowProcess {
    sources: Vec<OnOffSource>,
    peak_bps: f64,
    mean_bps: f64,
    self_similar: bool,
    on_len: Option<Pareto<f64>>,
    off_len: Option<Pareto<f64>>,
    rng: ChaCha8Rng,
}

impl FlowProcess {
    pub(crate) fn new(model: &TrafficModel, mean_bps: f64, mut rng: ChaCha8Rng) -> Self {
        let k = model.sources_per_flow as usize;
        if !model.self_similar {
            return FlowProcess {
                sources: Vec::new(),
                peak_bps: mean_bps,
                mean_bps,
                self_similar: false,
                on_len: None,
                off_len: None,
                rng,
            };
        }
        let shape = model.pareto_shape;
        let scale = |mean: f64| mean * (shape - 1.0) / shape;
        let on_len = Pareto::new(scale(model.mean_on_s), shape).expect("valid pareto");
        let off_len = Pareto::new(scale(model.mean_off_s), shape).expect("valid pareto");
        let duty = model.duty_cycle();
        let sources = (0..k)
            .map(|_| {
                let on = rng.random::<f64>() < duty;
                let remaining = if on { on_len.sample(&mut rng) } else { off_len.sample(&mut rng) };
                OnOffSource { on, remaining }
            })
            .collect();
        FlowProcess {
            sources,
            peak_bps: mean_bps / (k as f64 * duty),
            mean_bps,
            self_similar: true,
            on_len: Some(on_len),
            off_len: Some(off_len),
            rng,
        }
    }

    /// Average rate over the next `dt` seconds, advancing the sources.
    pub(crate) fn next_rate(&mut self, dt: f64) -> f64 {
        if !self.self_similar {
            return self.mean_bps;
        }
        let (on_len, off_len) = (self.on_len.unwrap(), self.off_len.unwrap());
        let mut on_time = 0.0;
        for src in &mut self.sources {
            let mut left = dt;
            while left > 0.0 {
                let step = src.remaining.min(left);
                if src.on {
                    on_time += step;
                }
                src.remaining -= step;
                left -= step;
                if src.remaining <= 0.0 {
                    src.on = !src.on;
                    src.remaining = if src.on {
                        on_len.sample(&mut self.rng)
                    } else {
                        off_len.sample(&mut self.rng)
                    };
                }
            }
        }
        self.peak_bps * on_time / dt
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo::parse_topology;

    fn triangle() -> Topology {
        parse_topology(
            "node A\nnode B\nnode C\nlink A B 1 1e8 0.001 100\nlink B C 1 1e8 0.001 100\nlink A C 1 1e8 0.001 100\n",
        )
        .unwrap()
    }

    #[test]
    fn gravity_ratio_follows_weights() {
        let t = triangle();
        let m = gravity_matrix(&t, &[1.0, 1.0, 2.0], 0.5);
        let ratio = m.get(0, 2) / m.get(0, 1);
        assert!((ratio - 2.0).abs() < 1e-12);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn max_link_sits_at_load_fraction() {
        let t = triangle();
        let m = generate_traffic_matrix(&t, 3, 0.6);
        let loads = m.link_loads(&t, &RoutingState::baseline(&t));
        let max = loads.iter().cloned().fold(0.0, f64::max) / 1e8;
        assert!((max - 0.6).abs() < 1e-12);
    }

    #[test]
    fn equal_weights_give_symmetric_demand_and_seed_is_deterministic() {
        let t = parse_topology("node A\nnode B\nlink A B 1 1e8 0.001 100\n").unwrap();
        let m = gravity_matrix(&t, &[0.5, 0.5], 0.5);
        assert_eq!(m.get(0, 1), m.get(1, 0));
        let t = triangle();
        assert_eq!(generate_traffic_matrix(&t, 9, 0.4), generate_traffic_matrix(&t, 9, 0.4));
        assert_ne!(generate_traffic_matrix(&t, 9, 0.4), generate_traffic_matrix(&t, 10, 0.4));
    }

    #[test]
    fn on_off_long_run_mean_is_close_to_demand() {
        let model = TrafficModel {
            sources_per_flow: 16,
            ..TrafficModel::default()
        };
        let mut p = FlowProcess::new(&model, 1e6, ChaCha8Rng::seed_from_u64(1));
        let n = 20_000;
        let mean: f64 = (0..n).map(|_| p.next_rate(1.0)).sum::<f64>() / n as f64;
        // heavy-tailed periods converge slowly
        assert!((mean / 1e6 - 1.0).abs() < 0.15, "mean {mean}");
    }
}
