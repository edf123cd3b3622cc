//! Simulation results and their CSV persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::topo::Topology;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeOutcome {
    Returned { travel_time: f64, hop_count: u32 },
    Lost,
}

/// One probe send. `send_time` is seconds since the start of measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeMeasurement {
    pub probe: usize,
    pub send_time: f64,
    pub outcome: ProbeOutcome,
}

/// Per-TU totals, indexed `[tu][link]` or `[tu][router]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PassiveCounters {
    pub link_bytes: Vec<Vec<u64>>,
    pub link_packets: Vec<Vec<u64>>,
    pub forwarded: Vec<Vec<u64>>,
    pub local_deliveries: Vec<Vec<u64>>,
    pub unroutable: Vec<Vec<u64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuLabel {
    pub attack: bool,
    pub benign_fault: bool,
}

/// Packet bookkeeping for one TU. Across the run,
/// `injected = delivered + dropped + unroutable + in_flight(last TU)` and,
/// cumulatively up to any TU, the same holds with that TU's `in_flight`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub unroutable: u64,
    pub in_flight: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub tu_seconds: f64,
    pub probe_count: usize,
    pub measurements: Vec<ProbeMeasurement>,
    pub counters: PassiveCounters,
    pub labels: Vec<TuLabel>,
    pub conservation: Vec<Conservation>,
}

const PROBES_FILE: &str = "probes.csv";
const COUNTERS_FILE: &str = "counters.csv";
const LABELS_FILE: &str = "labels.csv";
const PROBES_HEADER: &str = "# probenids-probes v1";
const COUNTERS_HEADER: &str = "# probenids-counters v1";
const LABELS_HEADER: &str = "# probenids-labels v1";

#[derive(Serialize, Deserialize)]
struct ProbeRow {
    probe: usize,
    send_time: f64,
    returned: bool,
    travel_time: Option<f64>,
    hop_count: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct CounterRow {
    tu: usize,
    kind: String,
    index: usize,
    a: u64,
    b: u64,
    c: u64,
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    tu: usize,
    attack: bool,
    benign_fault: bool,
    injected: u64,
    delivered: u64,
    dropped: u64,
    unroutable: u64,
    in_flight: u64,
}

impl SimOutput {
    pub(crate) fn empty(topo: &Topology, probe_count: usize, duration_tu: u64, tu_seconds: f64) -> Self {
        let d = duration_tu as usize;
        let links = vec![vec![0; topo.link_count()]; d];
        let routers = vec![vec![0; topo.router_count()]; d];
        SimOutput {
            tu_seconds,
            probe_count,
            measurements: Vec::new(),
            counters: PassiveCounters {
                link_bytes: links.clone(),
                link_packets: links,
                forwarded: routers.clone(),
                local_deliveries: routers.clone(),
                unroutable: routers,
            },
            labels: vec![TuLabel::default(); d],
            conservation: vec![Conservation::default(); d],
        }
    }

    pub fn duration_tu(&self) -> usize {
        self.labels.len()
    }

    /// Sums the per-TU records over the whole run.
    pub fn conservation_total(&self) -> Conservation {
        let mut total = Conservation::default();
        for c in &self.conservation {
            total.injected += c.injected;
            total.delivered += c.delivered;
            total.dropped += c.dropped;
            total.unroutable += c.unroutable;
        }
        total.in_flight = self.conservation.last().map_or(0, |c| c.in_flight);
        total
    }

    /// Writes `probes.csv`, `counters.csv` and `labels.csv` into `dir`.
    pub fn write_dir(&self, dir: &FsPath) -> Result<(), SimError> {
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut w = writer(&dir.join(PROBES_FILE), PROBES_HEADER)?;
        for m in &self.measurements {
            let (returned, travel_time, hop_count) = match m.outcome {
                ProbeOutcome::Returned { travel_time, hop_count } => (true, Some(travel_time), Some(hop_count)),
                ProbeOutcome::Lost => (false, None, None),
            };
            w.serialize(ProbeRow {
                probe: m.probe,
                send_time: m.send_time,
                returned,
                travel_time,
                hop_count,
            })
            .map_err(csv_err)?;
        }
        w.flush().map_err(io)?;

        let mut w = writer(&dir.join(COUNTERS_FILE), COUNTERS_HEADER)?;
        let c = &self.counters;
        for tu in 0..self.duration_tu() {
            for l in 0..c.link_bytes[tu].len() {
                w.serialize(CounterRow {
                    tu,
                    kind: "link".into(),
                    index: l,
                    a: c.link_bytes[tu][l],
                    b: c.link_packets[tu][l],
                    c: 0,
                })
                .map_err(csv_err)?;
            }
            for r in 0..c.forwarded[tu].len() {
                w.serialize(CounterRow {
                    tu,
                    kind: "router".into(),
                    index: r,
                    a: c.forwarded[tu][r],
                    b: c.local_deliveries[tu][r],
                    c: c.unroutable[tu][r],
                })
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(io)?;

        let mut w = writer(&dir.join(LABELS_FILE), LABELS_HEADER)?;
        for (tu, (l, k)) in self.labels.iter().zip(&self.conservation).enumerate() {
            w.serialize(LabelRow {
                tu,
                attack: l.attack,
                benign_fault: l.benign_fault,
                injected: k.injected,
                delivered: k.delivered,
                dropped: k.dropped,
                unroutable: k.unroutable,
                in_flight: k.in_flight,
            })
            .map_err(csv_err)?;
        }
        w.flush().map_err(io)?;
        write_meta(dir, self)
    }

    pub fn read_dir(dir: &FsPath, topo: &Topology) -> Result<Self, SimError> {
        let meta = read_meta(dir)?;
        let mut out = SimOutput::empty(topo, meta.probe_count, meta.duration_tu, meta.tu_seconds);

        for row in reader::<LabelRow>(&dir.join(LABELS_FILE), LABELS_HEADER)? {
            let row = row?;
            let slot = out.labels.get_mut(row.tu).ok_or_else(|| bad(LABELS_FILE, "tu out of range"))?;
            *slot = TuLabel {
                attack: row.attack,
                benign_fault: row.benign_fault,
            };
            out.conservation[row.tu] = Conservation {
                injected: row.injected,
                delivered: row.delivered,
                dropped: row.dropped,
                unroutable: row.unroutable,
                in_flight: row.in_flight,
            };
        }

        for row in reader::<CounterRow>(&dir.join(COUNTERS_FILE), COUNTERS_HEADER)? {
            let row = row?;
            if row.tu >= out.duration_tu() {
                return Err(bad(COUNTERS_FILE, "tu out of range"));
            }
            let c = &mut out.counters;
            match row.kind.as_str() {
                "link" if row.index < topo.link_count() => {
                    c.link_bytes[row.tu][row.index] = row.a;
                    c.link_packets[row.tu][row.index] = row.b;
                }
                "router" if row.index < topo.router_count() => {
                    c.forwarded[row.tu][row.index] = row.a;
                    c.local_deliveries[row.tu][row.index] = row.b;
                    c.unroutable[row.tu][row.index] = row.c;
                }
                _ => return Err(bad(COUNTERS_FILE, &format!("bad counter row kind `{}`", row.kind))),
            }
        }

        for row in reader::<ProbeRow>(&dir.join(PROBES_FILE), PROBES_HEADER)? {
            let row = row?;
            if row.probe >= out.probe_count {
                return Err(bad(PROBES_FILE, "probe index out of range"));
            }
            let outcome = match (row.returned, row.travel_time, row.hop_count) {
                (true, Some(travel_time), Some(hop_count)) => ProbeOutcome::Returned { travel_time, hop_count },
                (false, _, _) => ProbeOutcome::Lost,
                _ => return Err(bad(PROBES_FILE, "returned probe without travel time or hop count")),
            };
            out.measurements.push(ProbeMeasurement {
                probe: row.probe,
                send_time: row.send_time,
                outcome,
            });
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    tu_seconds: f64,
    probe_count: usize,
    duration_tu: u64,
}

const META_FILE: &str = "run.json";

fn write_meta(dir: &FsPath, out: &SimOutput) -> Result<(), SimError> {
    let meta = Meta {
        tu_seconds: out.tu_seconds,
        probe_count: out.probe_count,
        duration_tu: out.duration_tu() as u64,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| SimError::Io(e.to_string()))?;
    std::fs::write(dir.join(META_FILE), text).map_err(io)
}

fn read_meta(dir: &FsPath) -> Result<Meta, SimError> {
    let text = std::fs::read_to_string(dir.join(META_FILE)).map_err(io)?;
    serde_json::from_str(&text).map_err(|e| bad(META_FILE, &e.to_string()))
}

fn io(e: std::io::Error) -> SimError {
    SimError::Io(e.to_string())
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Io(e.to_string())
}

fn bad(file: &str, message: &str) -> SimError {
    SimError::Format {
        file: file.to_string(),
        message: message.to_string(),
    }
}

fn writer(path: &FsPath, header: &str) -> Result<csv::Writer<File>, SimError> {
    let mut f = File::create(path).map_err(io)?;
    writeln!(f, "{header}").map_err(io)?;
    Ok(csv::Writer::from_writer(f))
}

fn reader<T: for<'de> Deserialize<'de>>(
    path: &FsPath,
    header: &str,
) -> Result<impl Iterator<Item = Result<T, SimError>>, SimError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
    let mut buf = BufReader::new(File::open(path).map_err(io)?);
    let mut first = String::new();
    buf.read_line(&mut first).map_err(io)?;
    if first.trim_end() != header {
        return Err(bad(&name, &format!("expected header `{header}`")));
    }
    let rdr = csv::Reader::from_reader(buf);
    Ok(rdr
        .into_deserialize::<T>()
        .map(move |r| r.map_err(|e| bad(&name, &e.to_string()))))
}
