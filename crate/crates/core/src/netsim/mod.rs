//! Seeded network simulation: background traffic, probe roundtrips, per-link
//! queueing and loss, and passive per-link/per-router counters.
//!
//! Background traffic is a per-TU fluid: each router pair's rate comes from
//! superposed ON/OFF sources and sets every link's offered load for that TU.
//! Packet counts for the passive counters follow the fluid rates, thinned
//! by the buffer-overflow probability of each link on the way.
//! Probes are simulated packet by packet: at each hop a probe finds a queue
//! whose length is drawn from the M/M/1/K occupancy at the link's current
//! load, and is dropped if the buffer is full.

mod output;
mod traffic;

pub use output::{Conservation, PassiveCounters, ProbeMeasurement, ProbeOutcome, SimOutput, TuLabel};
pub use traffic::{generate_traffic_matrix, gravity_matrix, TrafficMatrix, TrafficModel};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::NetworkTimeline;
use crate::deploy::{ProbeScheme, ProbeTimingConfig};
use crate::topo::{Path, Topology};
use traffic::FlowProcess;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("probe `{0}` references a router outside the topology")]
    UnknownRouter(String),
    #[error("timeline covers {0} TU but the config needs {1}")]
    Timeline(u64, u64),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed simulation file {file}: {message}")]
    Format { file: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub warmup_tu: u64,
    pub duration_tu: u64,
    pub tu_seconds: f64,
    pub timing: ProbeTimingConfig,
    pub traffic: TrafficModel,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration_tu == 0 {
            return Err(SimError::Config("duration must be positive".into()));
        }
        if !(self.tu_seconds > 0.0) {
            return Err(SimError::Config("tu_seconds must be positive".into()));
        }
        self.timing
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        self.traffic.validate().map_err(SimError::Config)
    }
}

/// Probability that an arrival finds an M/M/1/K queue full.
pub fn blocking_probability(rho: f64, buffer: u32) -> f64 {
    let k = buffer as i32;
    if rho <= 0.0 {
        0.0
    } else if (rho - 1.0).abs() < 1e-12 {
        1.0 / (k as f64 + 1.0)
    } else if rho < 1.0 {
        (1.0 - rho) * rho.powi(k) / (1.0 - rho.powi(k + 1))
    } else {
        let q = 1.0 / rho;
        (rho - 1.0) / (rho * (1.0 - q.powi(k + 1)))
    }
}

/// Queue occupancy seen by an arrival: inverse CDF of the truncated
/// geometric M/M/1/K occupancy at `u` in [0, 1). A result equal to `buffer`
/// means the queue is full.
pub fn sample_queue_length(rho: f64, buffer: u32, u: f64) -> u32 {
    let k = buffer as f64;
    let u = u.clamp(0.0, 1.0);
    let n = if rho <= 0.0 {
        0.0
    } else if (rho - 1.0).abs() < 1e-12 {
        (u * (k + 1.0)).ceil() - 1.0
    } else if rho < 1.0 {
        let v = 1.0 - u * (1.0 - rho.powf(k + 1.0));
        (v.ln() / rho.ln()).ceil() - 1.0
    } else {
        let q = 1.0 / rho;
        let qk1 = q.powf(k + 1.0);
        let v = u * (1.0 - qk1) + qk1;
        (k - v.ln() / q.ln()).ceil()
    };
    n.clamp(0.0, k) as u32
}

/// Runs the simulation over `timeline` (warmup plus measurement period).
pub fn run_simulation(
    topo: &Topology,
    timeline: &NetworkTimeline,
    matrix: &TrafficMatrix,
    scheme: &ProbeScheme,
    config: &SimConfig,
) -> Result<SimOutput, SimError> {
    config.validate()?;
    let horizon = config.warmup_tu + config.duration_tu;
    if timeline.horizon_tu() != horizon || timeline.warmup_tu() != config.warmup_tu {
        return Err(SimError::Timeline(timeline.horizon_tu(), horizon));
    }
    if matrix.router_count() != topo.router_count() {
        return Err(SimError::Config("traffic matrix does not match the topology".into()));
    }
    for p in &scheme.probes {
        if p.src >= topo.router_count() || p.dst >= topo.router_count() {
            return Err(SimError::UnknownRouter(p.id.clone()));
        }
    }
    Engine::new(topo, timeline, matrix, scheme, config).run()
}

/// Per-epoch route cache.
struct EpochRoutes {
    flows: Vec<Option<Path>>,
    probes_out: Vec<Option<Path>>,
    probes_back: Vec<Option<Path>>,
    /// Offered probe load per link in bits/s.
    probe_load: Vec<f64>,
}

struct Engine<'a> {
    topo: &'a Topology,
    timeline: &'a NetworkTimeline,
    scheme: &'a ProbeScheme,
    config: &'a SimConfig,
    flows: Vec<(usize, usize, f64)>,
    routes: Vec<EpochRoutes>,
    /// Background utilization per absolute slot and link.
    rho: Vec<Vec<f64>>,
    out: SimOutput,
    /// Probe legs per measurement TU: started, finished (delivered or dropped).
    legs_in_flight: Vec<i64>,
}

impl<'a> Engine<'a> {
    fn new(
        topo: &'a Topology,
        timeline: &'a NetworkTimeline,
        matrix: &TrafficMatrix,
        scheme: &'a ProbeScheme,
        config: &'a SimConfig,
    ) -> Self {
        let flows: Vec<_> = matrix.flows().collect();
        let probe_bits = config.timing.probe_size_bytes as f64 * 8.0;
        let routes = timeline
            .epochs()
            .iter()
            .map(|ep| {
                let r = &ep.routing;
                let flow_routes = flows
                    .iter()
                    .map(|&(s, d, _)| {
                        let d = ep.effects.diversions.get(&(s, d)).copied().unwrap_or(d);
                        r.route(s, d)
                    })
                    .collect();
                let probes_out: Vec<_> = scheme.probes.iter().map(|p| r.route(p.src, p.dst)).collect();
                let probes_back: Vec<_> = scheme.probes.iter().map(|p| r.route(p.dst, p.src)).collect();
                let mut probe_load = vec![0.0; topo.link_count()];
                for path in probes_out.iter().chain(&probes_back).flatten() {
                    for l in path.links(topo) {
                        probe_load[l.0] += probe_bits / config.timing.t_prs;
                    }
                }
                EpochRoutes {
                    flows: flow_routes,
                    probes_out,
                    probes_back,
                    probe_load,
                }
            })
            .collect();
        let duration = config.duration_tu as usize;
        Engine {
            topo,
            timeline,
            scheme,
            config,
            flows,
            routes,
            rho: Vec::new(),
            out: SimOutput::empty(topo, scheme.len(), config.duration_tu, config.tu_seconds),
            legs_in_flight: vec![0; duration + 1],
        }
    }

    fn epoch_index(&self, slot: u64) -> usize {
        let epochs = self.timeline.epochs();
        epochs.partition_point(|e| e.end <= slot).min(epochs.len() - 1)
    }

    fn measured_tu(&self, slot: u64) -> Option<usize> {
        slot.checked_sub(self.config.warmup_tu)
            .filter(|&t| t < self.config.duration_tu)
            .map(|t| t as usize)
    }

    fn run(mut self) -> Result<SimOutput, SimError> {
        self.background();
        self.probes();
        for (t, label) in self.out.labels.iter_mut().enumerate() {
            let ep = self.timeline.epoch_at(self.config.warmup_tu + t as u64);
            label.attack = ep.malicious;
            label.benign_fault = ep.benign_fault;
        }
        for (t, c) in self.out.conservation.iter_mut().enumerate() {
            c.in_flight = self.legs_in_flight[t] as u64;
        }
        Ok(self.out)
    }

    fn background(&mut self) {
        let cfg = self.config;
        let tu = cfg.tu_seconds;
        let pkt_bits = cfg.traffic.packet_bits();
        let horizon = cfg.warmup_tu + cfg.duration_tu;
        let link_count = self.topo.link_count();

        let mut processes: Vec<FlowProcess> = Vec::with_capacity(self.flows.len());
        let mut samplers: Vec<ChaCha8Rng> = Vec::with_capacity(self.flows.len());
        for (i, &(_, _, bps)) in self.flows.iter().enumerate() {
            let mut shape_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            shape_rng.set_stream(2 * i as u64);
            processes.push(FlowProcess::new(&cfg.traffic, bps, shape_rng));
            let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            sample_rng.set_stream(2 * i as u64 + 1);
            samplers.push(sample_rng);
        }

        let mut rates = vec![0.0; self.flows.len()];
        let mut sent_bits = vec![0.0; self.flows.len()];
        self.rho = Vec::with_capacity(horizon as usize);
        for slot in 0..horizon {
            let ei = self.epoch_index(slot);
            let routes = &self.routes[ei];
            let mut offered = vec![0.0; link_count];
            for (i, proc_) in processes.iter_mut().enumerate() {
                rates[i] = proc_.next_rate(tu);
                if let Some(p) = &routes.flows[i] {
                    for l in p.links(self.topo) {
                        offered[l.0] += rates[i];
                    }
                }
            }
            let rho: Vec<f64> = offered
                .iter()
                .zip(self.topo.links())
                .map(|(o, l)| o / l.capacity_bps)
                .collect();
            let keep: Vec<f64> = (0..link_count)
                .map(|l| {
                    let link = &self.topo.links()[l];
                    let total = rho[l] + routes.probe_load[l] / link.capacity_bps;
                    1.0 - blocking_probability(total, link.buffer_pkts)
                })
                .collect();
            let mut room: Vec<u64> = (0..link_count)
                .map(|l| {
                    let cap = self.topo.links()[l].capacity_bps * tu - routes.probe_load[l] * tu;
                    (cap.max(0.0) / pkt_bits).floor() as u64
                })
                .collect();

            let measured = self.measured_tu(slot);
            for (i, &(src, _, _)) in self.flows.iter().enumerate() {
                let before = sent_bits[i];
                sent_bits[i] += rates[i] * tu;
                let sent = ((sent_bits[i] / pkt_bits).floor() - (before / pkt_bits).floor()) as u64;
                if sent == 0 {
                    continue;
                }
                let Some(path) = &routes.flows[i] else {
                    if let Some(t) = measured {
                        self.out.counters.unroutable[t][src] += sent;
                        let c = &mut self.out.conservation[t];
                        c.injected += sent;
                        c.unroutable += sent;
                    }
                    continue;
                };
                let mut alive = sent;
                let hops = path.routers();
                for (h, l) in path.links(self.topo).enumerate() {
                    if h > 0 {
                        if let Some(t) = measured {
                            self.out.counters.forwarded[t][hops[h]] += alive;
                        }
                    }
                    let mut passed = if keep[l.0] >= 1.0 {
                        alive
                    } else {
                        Binomial::new(alive, keep[l.0]).expect("valid binomial").sample(&mut samplers[i])
                    };
                    passed = passed.min(room[l.0]);
                    room[l.0] -= passed;
                    if let Some(t) = measured {
                        self.out.counters.link_packets[t][l.0] += passed;
                        self.out.counters.link_bytes[t][l.0] += passed * cfg.traffic.packet_size_bytes as u64;
                    }
                    alive = passed;
                    if alive == 0 {
                        break;
                    }
                }
                if let Some(t) = measured {
                    let dst = *hops.last().unwrap();
                    self.out.counters.local_deliveries[t][dst] += alive;
                    let c = &mut self.out.conservation[t];
                    c.injected += sent;
                    c.delivered += alive;
                    c.dropped += sent - alive;
                }
            }
            self.rho.push(rho);
        }
    }

    fn rho_at(&self, time_s: f64, link: usize) -> f64 {
        let slot = (time_s / self.config.tu_seconds).floor().max(0.0) as usize;
        self.rho[slot.min(self.rho.len() - 1)][link]
    }

    fn probes(&mut self) {
        let cfg = self.config;
        let n_probes = self.scheme.len();
        if n_probes == 0 {
            return;
        }
        let tu = cfg.tu_seconds;
        let t_prs = cfg.timing.t_prs;
        let probe_bytes = cfg.timing.probe_size_bytes as u64;
        let probe_bits = probe_bytes as f64 * 8.0;
        let bg_bits = cfg.traffic.packet_bits();
        let timeout = cfg.timing.t_cl;
        let measure_start = cfg.warmup_tu as f64 * tu;
        let sends_per_probe = ((cfg.duration_tu as f64 * tu) / t_prs).round() as u64;

        let mut rngs: Vec<ChaCha8Rng> = (0..n_probes)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5052_4f42_4553_0000);
                r.set_stream(i as u64);
                r
            })
            .collect();

        self.out.measurements.reserve((sends_per_probe as usize) * n_probes);
        for j in 0..sends_per_probe {
            for i in 0..n_probes {
                let offset = (j as f64 + i as f64 / n_probes as f64) * t_prs;
                let send_abs = measure_start + offset;
                let rng = &mut rngs[i];
                // fixed draw budget per send keeps every send's randomness
                // independent of what happened to earlier sends
                rng.set_word_pos(j as u128 * 1024);

                let probe = &self.scheme.probes[i];
                let mut now = send_abs;
                let mut elapsed = 0.0;
                let mut hops = 0u32;
                let mut outcome = None;
                for leg in 0..2 {
                    let (from, ei) = (
                        if leg == 0 { probe.src } else { probe.dst },
                        self.epoch_index((now / tu).floor() as u64),
                    );
                    let route = if leg == 0 {
                        self.routes[ei].probes_out[i].clone()
                    } else {
                        self.routes[ei].probes_back[i].clone()
                    };
                    let start = now;
                    let Some(path) = route else {
                        self.record_leg(start, None, LegEnd::Unroutable, from);
                        outcome = Some(ProbeOutcome::Lost);
                        break;
                    };
                    let mut dropped = false;
                    let routers = path.routers();
                    for (h, l) in path.links(self.topo).enumerate() {
                        let link = self.topo.link(l);
                        if let Some(t) = self.measured_tu((now / tu).floor() as u64) {
                            if h > 0 {
                                self.out.counters.forwarded[t][routers[h]] += 1;
                            }
                        }
                        let rho = self.rho_at(now, l.0);
                        let q = sample_queue_length(rho, link.buffer_pkts, rng.random::<f64>());
                        if q >= link.buffer_pkts {
                            dropped = true;
                            break;
                        }
                        if let Some(t) = self.measured_tu((now / tu).floor() as u64) {
                            self.out.counters.link_packets[t][l.0] += 1;
                            self.out.counters.link_bytes[t][l.0] += probe_bytes;
                        }
                        let delay = q as f64 * bg_bits / link.capacity_bps
                            + probe_bits / link.capacity_bps
                            + link.prop_delay_s;
                        now += delay;
                        elapsed += delay;
                        hops += 1;
                    }
                    if dropped {
                        self.record_leg(start, Some(now), LegEnd::Dropped, from);
                        outcome = Some(ProbeOutcome::Lost);
                        break;
                    }
                    let to = *routers.last().unwrap();
                    self.record_leg(start, Some(now), LegEnd::Delivered, to);
                }
                let travel = elapsed;
                let outcome = outcome.unwrap_or(if travel <= timeout {
                    ProbeOutcome::Returned {
                        travel_time: travel,
                        hop_count: hops,
                    }
                } else {
                    ProbeOutcome::Lost
                });
                self.out.measurements.push(ProbeMeasurement {
                    probe: i,
                    send_time: offset,
                    outcome,
                });
            }
        }
    }

    fn record_leg(&mut self, start: f64, end: Option<f64>, kind: LegEnd, router: usize) {
        let tu = self.config.tu_seconds;
        let warm = self.config.warmup_tu as f64;
        let s = (start / tu - warm).floor() as i64;
        let e = end.map(|e| (e / tu - warm).floor() as i64).unwrap_or(s);
        let dur = self.config.duration_tu as i64;
        if (0..dur).contains(&s) {
            let c = &mut self.out.conservation[s as usize];
            c.injected += 1;
            if kind == LegEnd::Unroutable {
                c.unroutable += 1;
                self.out.counters.unroutable[s as usize][router] += 1;
            }
        }
        if (0..dur).contains(&e) {
            let c = &mut self.out.conservation[e as usize];
            match kind {
                LegEnd::Delivered => {
                    c.delivered += 1;
                    self.out.counters.local_deliveries[e as usize][router] += 1;
                }
                LegEnd::Dropped => c.dropped += 1,
                LegEnd::Unroutable => {}
            }
        }
        for t in s.max(0)..e.min(dur) {
            self.legs_in_flight[t as usize] += 1;
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum LegEnd {
    Delivered,
    Dropped,
    Unroutable,
}
