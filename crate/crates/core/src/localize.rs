//! Attack localization from the features that made Sensors report.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::deploy::ProbeScheme;
use crate::oneclass::{AnomalyModel, OneClassError};
use crate::topo::{RouterId, RouterIdx, Topology};

#[derive(Debug, Error, PartialEq)]
pub enum LocalizeError {
    #[error("feature `{0}` does not name a probe, link or router of this network")]
    UnknownFeature(String),
    #[error("victim `{0}` is not in the topology")]
    UnknownVictim(String),
    #[error("at least one victim is required")]
    NoVictims,
    #[error(transparent)]
    Model(#[from] OneClassError),
}

/// Default per-feature score at which a feature counts as anomalous.
pub const DEFAULT_FEATURE_THRESHOLD: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuspectReport {
    pub sensor: String,
    pub routers: BTreeSet<RouterIdx>,
}

/// Routers that influence a feature: every router on a probe's path, both
/// ends of a link, or the router a MIB counter belongs to.
pub fn feature_routers(name: &str, topo: &Topology, scheme: &ProbeScheme) -> Result<Vec<RouterIdx>, LocalizeError> {
    let unknown = || LocalizeError::UnknownFeature(name.to_string());
    let mut parts = name.splitn(3, ':');
    let (kind, subject) = (parts.next().ok_or_else(unknown)?, parts.next().ok_or_else(unknown)?);
    match kind {
        "probe" => scheme
            .probes
            .iter()
            .find(|p| p.label(topo) == subject)
            .map(|p| p.routers().into_iter().collect())
            .ok_or_else(unknown),
        "link" => {
            let l = topo.link_by_name(subject).map_err(|_| unknown())?;
            let link = topo.link(l);
            Ok(vec![link.a, link.b])
        }
        "mib" => topo
            .router_index(&RouterId::from(subject))
            .map(|r| vec![r])
            .ok_or_else(unknown),
        _ => Err(unknown()),
    }
}

/// Routers behind the anomalous features of one Sensor row.
pub fn sensor_suspects(
    sensor: &str,
    row: &[f64],
    model: &AnomalyModel,
    topo: &Topology,
    scheme: &ProbeScheme,
    feature_threshold: f64,
) -> Result<SuspectReport, LocalizeError> {
    let scores = model.feature_scores(row)?;
    let mut routers = BTreeSet::new();
    for (name, s) in model.schema().iter().zip(scores) {
        if s >= feature_threshold {
            routers.extend(feature_routers(name, topo, scheme)?);
        }
    }
    Ok(SuspectReport {
        sensor: sensor.to_string(),
        routers,
    })
}

/// Keeps the items listed by more than half as many reports as the most
/// frequently listed item.
pub fn fuse_suspects<T: Ord + Clone>(reports: &[BTreeSet<T>]) -> BTreeSet<T> {
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for r in reports {
        for item in r {
            *counts.entry(item).or_default() += 1;
        }
    }
    let max_app = counts.values().copied().max().unwrap_or(0);
    counts
        .into_iter()
        .filter(|&(_, c)| 2 * c > max_app)
        .map(|(item, _)| item.clone())
        .collect()
}

/// One minus the summed hop distance from predicted routers to the nearest
/// victim, over the same sum for every router. `None` when nothing was
/// predicted.
pub fn al_score(
    predicted: &BTreeSet<RouterIdx>,
    victims: &BTreeSet<RouterIdx>,
    topo: &Topology,
) -> Result<Option<f64>, LocalizeError> {
    if victims.is_empty() {
        return Err(LocalizeError::NoVictims);
    }
    if let Some(&v) = victims.iter().find(|&&v| v >= topo.router_count()) {
        return Err(LocalizeError::UnknownVictim(v.to_string()));
    }
    if predicted.is_empty() {
        return Ok(None);
    }
    let dist = topo.hop_distances_from(&victims.iter().copied().collect::<Vec<_>>());
    let d = |r: RouterIdx| dist[r].expect("topology is connected") as f64;
    let total: f64 = (0..topo.router_count()).map(d).sum();
    if total == 0.0 {
        return Ok(Some(1.0));
    }
    let got: f64 = predicted.iter().map(|&r| d(r)).sum();
    Ok(Some(1.0 - got / total))
}
