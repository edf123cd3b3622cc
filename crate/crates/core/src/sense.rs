//! Per-Sensor feature extraction over classification windows.
//!
//! Every Sensor gets one row per window of `t_cl` seconds. Probe features
//! summarize the sends of each probe bound to the Sensor; link and router
//! features turn the passive counters into per-second rates.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deploy::{ProbeScheme, ProbeTimingConfig, SensorMap};
use crate::netsim::{ProbeOutcome, SimOutput};
use crate::topo::{LinkId, RouterIdx, Topology};

#[derive(Debug, Error, PartialEq)]
pub enum SenseError {
    #[error("probe `{0}` has an endpoint outside every Sensor")]
    UnknownSensor(String),
    #[error("invalid window configuration: {0}")]
    Timing(String),
    #[error("datasets disagree: {0}")]
    Shape(String),
    #[error("only {0} training rows available, at least {1} needed")]
    InsufficientTraining(usize, usize),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed dataset: {0}")]
    Format(String),
}

/// Kinds of features a Sensor can be built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Probes,
    Links,
    Mibs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Attack,
}

impl Label {
    pub fn is_attack(self) -> bool {
        self == Label::Attack
    }

    fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Attack => "attack",
        }
    }
}

/// Ground truth of one classification window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WindowLabel {
    pub attack: bool,
    pub benign_fault: bool,
}

/// Rows of feature values, one per window, under a fixed schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: Vec<String>,
    pub time_units: Vec<u64>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Option<Vec<Label>>,
}

impl Dataset {
    pub fn new(schema: Vec<String>) -> Self {
        Dataset {
            schema,
            time_units: Vec::new(),
            rows: Vec::new(),
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.schema.len()
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            time_units: indices.iter().map(|&i| self.time_units[i]).collect(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn with_labels(mut self, labels: Vec<Label>) -> Result<Dataset, SenseError> {
        if labels.len() != self.len() {
            return Err(SenseError::Shape(format!("{} labels for {} rows", labels.len(), self.len())));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Side-by-side union of datasets over the same windows.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset, SenseError> {
        let Some(first) = parts.first() else {
            return Ok(Dataset::new(Vec::new()));
        };
        let mut out = Dataset {
            schema: Vec::new(),
            time_units: first.time_units.clone(),
            rows: vec![Vec::new(); first.len()],
            labels: first.labels.clone(),
        };
        for p in parts {
            if p.time_units != out.time_units {
                return Err(SenseError::Shape("datasets cover different windows".into()));
            }
            out.schema.extend(p.schema.iter().cloned());
            for (row, extra) in out.rows.iter_mut().zip(&p.rows) {
                row.extend_from_slice(extra);
            }
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SenseError> {
        writeln!(w, "{DATASET_HEADER}").map_err(io)?;
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["time_unit".to_string()];
        header.extend(self.schema.iter().cloned());
        header.push("label".into());
        wr.write_record(&header).map_err(csv_err)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![self.time_units[i].to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            rec.push(self.labels.as_ref().map_or("", |l| l[i].as_str()).to_string());
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush().map_err(io)
    }

    pub fn write(&self, path: &FsPath) -> Result<(), SenseError> {
        self.write_csv(File::create(path).map_err(io)?)
    }

    pub fn read(path: &FsPath) -> Result<Dataset, SenseError> {
        let mut buf = BufReader::new(File::open(path).map_err(io)?);
        let mut first = String::new();
        buf.read_line(&mut first).map_err(io)?;
        if first.trim_end() != DATASET_HEADER {
            return Err(SenseError::Format(format!("expected header `{DATASET_HEADER}`")));
        }
        let mut rd = csv::Reader::from_reader(buf);
        let header = rd.headers().map_err(csv_err)?.clone();
        let n = header.len();
        if n < 2 || &header[0] != "time_unit" || &header[n - 1] != "label" {
            return Err(SenseError::Format("columns must be time_unit, features..., label".into()));
        }
        let mut ds = Dataset::new(header.iter().skip(1).take(n - 2).map(str::to_string).collect());
        let mut labels = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let tu = rec[0].parse().map_err(|_| SenseError::Format(format!("bad time unit `{}`", &rec[0])))?;
            let row = (1..n - 1)
                .map(|i| rec[i].parse::<f64>().map_err(|_| SenseError::Format(format!("bad value `{}`", &rec[i]))))
                .collect::<Result<Vec<_>, _>>()?;
            labels.push(match &rec[n - 1] {
                "" => None,
                "normal" => Some(Label::Normal),
                "attack" => Some(Label::Attack),
                other => return Err(SenseError::Format(format!("bad label `{other}`"))),
            });
            ds.time_units.push(tu);
            ds.rows.push(row);
        }
        if labels.iter().all(Option::is_some) && !labels.is_empty() {
            ds.labels = Some(labels.into_iter().flatten().collect());
        } else if labels.iter().any(Option::is_some) {
            return Err(SenseError::Format("labels present on some rows only".into()));
        }
        Ok(ds)
    }
}

const DATASET_HEADER: &str = "# probenids-dataset v1";

fn io(e: std::io::Error) -> SenseError {
    SenseError::Io(e.to_string())
}

fn csv_err(e: csv::Error) -> SenseError {
    SenseError::Format(e.to_string())
}

/// Number of whole windows in the measurement period.
pub fn window_count(out: &SimOutput, timing: &ProbeTimingConfig) -> usize {
    let seconds = out.duration_tu() as f64 * out.tu_seconds;
    (seconds / timing.t_cl + 1e-9).floor() as usize
}

/// Per-window ground truth: a window is attack (or benign fault) when more
/// than half of it overlaps attack (fault) TUs.
pub fn window_labels(out: &SimOutput, timing: &ProbeTimingConfig) -> Vec<WindowLabel> {
    let tu = out.tu_seconds;
    (0..window_count(out, timing))
        .map(|w| {
            let (start, end) = (w as f64 * timing.t_cl, (w + 1) as f64 * timing.t_cl);
            let (mut attack, mut fault) = (0.0, 0.0);
            let first = (start / tu).floor() as usize;
            for t in first..out.duration_tu() {
                let (ts, te) = (t as f64 * tu, (t + 1) as f64 * tu);
                if ts >= end {
                    break;
                }
                let overlap = te.min(end) - ts.max(start);
                if overlap > 0.0 {
                    if out.labels[t].attack {
                        attack += overlap;
                    }
                    if out.labels[t].benign_fault {
                        fault += overlap;
                    }
                }
            }
            WindowLabel {
                attack: attack > timing.t_cl / 2.0,
                benign_fault: fault > timing.t_cl / 2.0,
            }
        })
        .collect()
}

/// Probes bound to each Sensor: those with an endpoint among its members.
pub fn probes_by_sensor(scheme: &ProbeScheme, sensors: &SensorMap) -> Result<Vec<Vec<usize>>, SenseError> {
    let mut bound = vec![Vec::new(); sensors.len()];
    for (i, p) in scheme.probes.iter().enumerate() {
        let ends: BTreeSet<usize> = [p.src, p.dst]
            .iter()
            .map(|&r| sensors.sensor_of(r).ok_or_else(|| SenseError::UnknownSensor(p.id.clone())))
            .collect::<Result<_, _>>()?;
        for s in ends {
            bound[s].push(i);
        }
    }
    Ok(bound)
}

pub const PROBE_STATS: [&str; 5] = ["avg_delay", "var_delay", "avg_hops", "var_hops", "lost_pct"];
pub const LINK_STATS: [&str; 2] = ["bytes_per_sec", "packets_per_sec"];
pub const MIB_STATS: [&str; 3] = ["packets_forwarded", "local_deliveries", "unroutable_packets"];

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Five statistics per probe per window, for every probe in the scheme.
/// Returns `[probe][window][stat]`.
fn probe_window_stats(out: &SimOutput, timing: &ProbeTimingConfig) -> Vec<Vec<[f64; 5]>> {
    let windows = window_count(out, timing);
    let expected = timing.sends_per_window() as f64;
    let mut delays = vec![vec![Vec::new(); windows]; out.probe_count];
    let mut hops = vec![vec![Vec::new(); windows]; out.probe_count];
    for m in &out.measurements {
        let w = (m.send_time / timing.t_cl + 1e-9).floor() as usize;
        if w >= windows {
            continue;
        }
        if let ProbeOutcome::Returned { travel_time, hop_count } = m.outcome {
            delays[m.probe][w].push(travel_time);
            hops[m.probe][w].push(hop_count as f64);
        }
    }
    (0..out.probe_count)
        .map(|p| {
            let mut prev = [0.0; 4];
            (0..windows)
                .map(|w| {
                    let got = delays[p][w].len();
                    if got == 0 {
                        return [prev[0], prev[1], prev[2], prev[3], 100.0];
                    }
                    let (ad, vd) = mean_var(&delays[p][w]);
                    let (ah, vh) = mean_var(&hops[p][w]);
                    prev = [ad, vd, ah, vh];
                    let lost = (100.0 * (expected - got as f64) / expected).clamp(0.0, 100.0);
                    [ad, vd, ah, vh, lost]
                })
                .collect()
        })
        .collect()
}

fn empty_frame(out: &SimOutput, timing: &ProbeTimingConfig) -> Dataset {
    let windows = window_count(out, timing);
    Dataset {
        schema: Vec::new(),
        time_units: (0..windows as u64).collect(),
        rows: vec![Vec::new(); windows],
        labels: None,
    }
}

/// Probe features for every Sensor, indexed like `sensors.sensors()`.
pub fn build_sensor_instances(
    out: &SimOutput,
    topo: &Topology,
    scheme: &ProbeScheme,
    sensors: &SensorMap,
    timing: &ProbeTimingConfig,
) -> Result<Vec<Dataset>, SenseError> {
    timing.validate().map_err(|e| SenseError::Timing(e.to_string()))?;
    if out.probe_count != scheme.len() {
        return Err(SenseError::Shape(format!(
            "simulation has {} probes, scheme has {}",
            out.probe_count,
            scheme.len()
        )));
    }
    let bound = probes_by_sensor(scheme, sensors)?;
    let stats = probe_window_stats(out, timing);
    Ok(bound
        .iter()
        .map(|probes| {
            let mut ds = empty_frame(out, timing);
            for &p in probes {
                let label = scheme.probes[p].label(topo);
                ds.schema
                    .extend(PROBE_STATS.iter().map(|s| format!("probe:{label}:{s}")));
                for (row, st) in ds.rows.iter_mut().zip(&stats[p]) {
                    row.extend_from_slice(st);
                }
            }
            ds
        })
        .collect())
}

fn tus_per_window(out: &SimOutput, timing: &ProbeTimingConfig) -> Result<usize, SenseError> {
    let ratio = timing.t_cl / out.tu_seconds;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 {
        return Err(SenseError::Timing(format!(
            "passive features need t_cl to be a whole number of TUs, got {ratio}"
        )));
    }
    Ok(k as usize)
}

fn per_second(series: &[Vec<u64>], idx: usize, w: usize, k: usize, t_cl: f64) -> f64 {
    series[w * k..(w + 1) * k].iter().map(|tu| tu[idx] as f64).sum::<f64>() / t_cl
}

/// Link and router (MIB) features for every Sensor. Link features cover
/// links with both endpoints inside the Sensor.
pub fn build_passive_instances(
    out: &SimOutput,
    topo: &Topology,
    sensors: &SensorMap,
    timing: &ProbeTimingConfig,
    sources: &[FeatureSource],
) -> Result<Vec<Dataset>, SenseError> {
    let k = tus_per_window(out, timing)?;
    let c = &out.counters;
    let t_cl = timing.t_cl;
    Ok(sensors
        .sensors()
        .iter()
        .map(|s| {
            let mut members: Vec<RouterIdx> = s.members.clone();
            members.sort_unstable();
            let member_set: BTreeSet<_> = members.iter().copied().collect();
            let mut ds = empty_frame(out, timing);
            if sources.contains(&FeatureSource::Links) {
                let links: Vec<LinkId> = (0..topo.link_count())
                    .map(LinkId)
                    .filter(|&l| {
                        let link = topo.link(l);
                        member_set.contains(&link.a) && member_set.contains(&link.b)
                    })
                    .collect();
                for &l in &links {
                    let name = topo.link_name(l);
                    ds.schema.extend(LINK_STATS.iter().map(|st| format!("link:{name}:{st}")));
                    for (w, row) in ds.rows.iter_mut().enumerate() {
                        row.push(per_second(&c.link_bytes, l.0, w, k, t_cl));
                        row.push(per_second(&c.link_packets, l.0, w, k, t_cl));
                    }
                }
            }
            if sources.contains(&FeatureSource::Mibs) {
                for &r in &members {
                    let name = topo.router_id(r);
                    ds.schema.extend(MIB_STATS.iter().map(|st| format!("mib:{name}:{st}")));
                    for (w, row) in ds.rows.iter_mut().enumerate() {
                        row.push(per_second(&c.forwarded, r, w, k, t_cl));
                        row.push(per_second(&c.local_deliveries, r, w, k, t_cl));
                        row.push(per_second(&c.unroutable, r, w, k, t_cl));
                    }
                }
            }
            ds
        })
        .collect())
}

/// All requested feature sources per Sensor, concatenated in the order
/// probes, links, MIBs.
pub fn build_features(
    out: &SimOutput,
    topo: &Topology,
    scheme: &ProbeScheme,
    sensors: &SensorMap,
    timing: &ProbeTimingConfig,
    sources: &[FeatureSource],
) -> Result<Vec<Dataset>, SenseError> {
    let probes = if sources.contains(&FeatureSource::Probes) {
        Some(build_sensor_instances(out, topo, scheme, sensors, timing)?)
    } else {
        None
    };
    let passive = if sources.iter().any(|s| *s != FeatureSource::Probes) {
        Some(build_passive_instances(out, topo, sensors, timing, sources)?)
    } else {
        None
    };
    (0..sensors.len())
        .map(|s| {
            let parts: Vec<Dataset> = [&probes, &passive]
                .iter()
                .filter_map(|d| d.as_ref().map(|d| d[s].clone()))
                .collect();
            if parts.is_empty() {
                Ok(empty_frame(out, timing))
            } else {
                Dataset::concat(&parts)
            }
        })
        .collect()
}

/// How windows are divided into training and evaluation rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of attack rows in the evaluation set.
    pub attack_fraction: f64,
    /// Keep benign-fault windows in the training set.
    pub train_with_faults: bool,
    /// Evaluation share of the run when there is no attack.
    pub fallback_eval_fraction: f64,
    pub min_train_rows: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            attack_fraction: 2.0 / 3.0,
            train_with_faults: false,
            fallback_eval_fraction: 0.25,
            min_train_rows: 20,
        }
    }
}

/// Row indices of the training and evaluation sets, both ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Training rows come only from normal windows before the first attack.
/// The evaluation set holds every attack window plus enough normal windows
/// to reach `attack_fraction`, taking normal windows after the attack began
/// first and then the latest ones before it.
pub fn split_train_eval(labels: &[WindowLabel], config: &SplitConfig) -> Result<Split, SenseError> {
    if !(config.attack_fraction > 0.0 && config.attack_fraction < 1.0) {
        return Err(SenseError::Shape("attack_fraction must lie in (0, 1)".into()));
    }
    let n = labels.len();
    let attack: Vec<usize> = (0..n).filter(|&i| labels[i].attack).collect();
    let first_attack = attack.first().copied().unwrap_or(n);
    let mut eval: BTreeSet<usize> = attack.iter().copied().collect();

    let want_normal = if attack.is_empty() {
        (n as f64 * config.fallback_eval_fraction).round() as usize
    } else {
        let a = attack.len() as f64;
        (a * (1.0 - config.attack_fraction) / config.attack_fraction).round() as usize
    };
    let post: Vec<usize> = (first_attack..n).filter(|&i| !labels[i].attack).collect();
    let pre = (0..first_attack).rev();
    for i in post.into_iter().chain(pre).take(want_normal) {
        eval.insert(i);
    }
    let train: Vec<usize> = (0..first_attack)
        .filter(|i| !eval.contains(i))
        .filter(|&i| config.train_with_faults || !labels[i].benign_fault)
        .collect();
    if train.len() < config.min_train_rows {
        return Err(SenseError::InsufficientTraining(train.len(), config.min_train_rows));
    }
    Ok(Split {
        train,
        eval: eval.into_iter().collect(),
    })
}

/// Row labels for the given window indices.
pub fn labels_for(labels: &[WindowLabel], indices: &[usize]) -> Vec<Label> {
    indices
        .iter()
        .map(|&i| if labels[i].attack { Label::Attack } else { Label::Normal })
        .collect()
}
