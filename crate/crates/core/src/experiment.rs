//! Config-driven experiments: plan, simulate, extract features, train,
//! detect and evaluate, with every intermediate written to disk.
//!
//! # Config file
//!
//! ```toml
//! topology = "topologies/synth30.topo"    # relative to this file
//! scenarios = ["scenarios/distortion.toml"]
//! features = ["probes"]                   # probes, links, mibs
//! seed = 7
//! warmup_tu = 60
//! duration_tu = 1500
//! load_fraction = 0.5
//! output = "out/distortion"
//!
//! [timing]
//! t_prs = 0.04
//! t_cl = 1.0
//!
//! [ensemble]
//! detector = "univariate-density"
//!
//! [nas]
//! xi = 0.25
//! p = 8
//! theta = 0.75
//! ```
//!
//! # Output layout
//!
//! ```text
//! plans/     topology.txt sensors.txt probes.txt probe_overhead.json
//! datasets/  sim/ (raw simulation output), <sensor>.train.csv, <sensor>.eval.csv
//! models/    sensor-<id>.json combiner.json ensemble.json
//! series/    scores.csv
//! reports/   metrics.json roc.csv summary.txt
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{apply_scenario, AttackScenario, NetworkTimeline};
use crate::deploy::{
    generate_probe_scheme, partition_sensors, probe_traffic_report, ProbeScheme, ProbeTimingConfig, SensorMap,
    DEFAULT_MAX_ROUTERS, DEFAULT_PROBES_LENGTH,
};
use crate::ensemble::{Ensemble, EnsembleConfig, NasConfig, ScoreSeries};
use crate::eval::{roc_auc, roc_csv, EvalError, MetricsReport};
use crate::localize::{al_score, fuse_suspects, sensor_suspects, DEFAULT_FEATURE_THRESHOLD};
use crate::netsim::{generate_traffic_matrix, run_simulation, SimConfig, SimOutput, TrafficMatrix, TrafficModel};
use crate::oneclass::DetectorKind;
use crate::sense::{build_features, labels_for, split_train_eval, window_labels, Dataset, FeatureSource, SplitConfig};
use crate::topo::{parse_topology, RouterId, RouterIdx, Topology};

#[derive(Debug)]
pub enum ExperimentError {
    /// Invalid or unreadable configuration.
    Config(String),
    /// A pipeline stage failed.
    Stage { stage: &'static str, message: String },
}

impl fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentError::Config(m) => write!(f, "config error: {m}"),
            ExperimentError::Stage { stage, message } => write!(f, "{stage} failed: {message}"),
        }
    }
}

impl std::error::Error for ExperimentError {}

impl ExperimentError {
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
    }
}

fn fail(stage: &'static str, e: impl fmt::Display) -> ExperimentError {
    ExperimentError::Stage {
        stage,
        message: e.to_string(),
    }
}

fn default_features() -> Vec<FeatureSource> {
    vec![FeatureSource::Probes]
}

fn default_tu_seconds() -> f64 {
    1.0
}

fn default_load_fraction() -> f64 {
    0.5
}

fn default_max_routers() -> usize {
    DEFAULT_MAX_ROUTERS
}

fn default_probes_length() -> usize {
    DEFAULT_PROBES_LENGTH
}

fn default_feature_threshold() -> f64 {
    DEFAULT_FEATURE_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: PathBuf,
    #[serde(default)]
    pub scenarios: Vec<PathBuf>,
    #[serde(default = "default_features")]
    pub features: Vec<FeatureSource>,
    pub seed: u64,
    pub warmup_tu: u64,
    pub duration_tu: u64,
    #[serde(default = "default_tu_seconds")]
    pub tu_seconds: f64,
    /// Mean utilization of the busiest link under baseline routing.
    #[serde(default = "default_load_fraction")]
    pub load_fraction: f64,
    #[serde(default = "default_max_routers")]
    pub max_routers: usize,
    #[serde(default = "default_probes_length")]
    pub probes_length: usize,
    /// Per-feature score at which a feature counts toward localization.
    #[serde(default = "default_feature_threshold")]
    pub feature_threshold: f64,
    #[serde(default)]
    pub timing: ProbeTimingConfig,
    #[serde(default)]
    pub traffic: TrafficModel,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub nas: NasConfig,
    #[serde(default)]
    pub split: SplitConfig,
    /// Artifact directory; relative paths resolve against the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Reads a config file, resolving its paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let mut config = ExperimentConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.topology = base.join(&config.topology);
        for s in &mut config.scenarios {
            *s = base.join(&*s);
        }
        if let Some(o) = &mut config.output {
            *o = base.join(&*o);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.features.is_empty() {
            return bad("at least one feature source is required");
        }
        if !(self.load_fraction > 0.0) {
            return bad("load_fraction must be positive");
        }
        if self.max_routers == 0 || self.probes_length == 0 {
            return bad("max_routers and probes_length must be positive");
        }
        if !(0.0..=1.0).contains(&self.feature_threshold) {
            return bad("feature_threshold must lie in [0, 1]");
        }
        self.nas.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.timing.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.sim_config().validate().map_err(|e| ExperimentError::Config(e.to_string()))
    }

    fn sim_config(&self) -> SimConfig {
        SimConfig {
            seed: self.seed,
            warmup_tu: self.warmup_tu,
            duration_tu: self.duration_tu,
            tu_seconds: self.tu_seconds,
            timing: self.timing,
            traffic: self.traffic,
        }
    }
}

/// A config together with the topology and scenarios it references.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub topo: Topology,
    pub scenarios: Vec<AttackScenario>,
}

/// Setup products shared by every later stage.
#[derive(Clone, Debug)]
pub struct Plan {
    pub sensors: SensorMap,
    pub scheme: ProbeScheme,
    pub matrix: TrafficMatrix,
}

/// Per-Sensor training and evaluation rows. Sensors without features are
/// left out.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorData {
    pub ids: Vec<String>,
    pub train: Vec<Dataset>,
    pub eval: Vec<Dataset>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub series: ScoreSeries,
    pub report: MetricsReport,
    pub roc: Vec<(f64, f64)>,
}

impl Experiment {
    /// Loads a config file and the files it references, resolved relative
    /// to the config's directory.
    pub fn load(path: &Path) -> Result<Experiment, ExperimentError> {
        Experiment::resolve(ExperimentConfig::load(path)?)
    }

    /// Reads the topology and scenarios named by an already-resolved config.
    pub fn resolve(config: ExperimentConfig) -> Result<Experiment, ExperimentError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|e| ExperimentError::Config(format!("{}: {e}", p.display())))
        };
        let topo = parse_topology(&read(&config.topology)?)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", config.topology.display())))?;
        let scenarios = config
            .scenarios
            .iter()
            .map(|p| {
                AttackScenario::parse(&read(p)?)
                    .map_err(|e| ExperimentError::Config(format!("{}: {e}", p.display())))
            })
            .collect::<Result<_, _>>()?;
        Experiment::new(config, topo, scenarios)
    }

    pub fn new(config: ExperimentConfig, topo: Topology, scenarios: Vec<AttackScenario>) -> Result<Experiment, ExperimentError> {
        config.validate()?;
        Ok(Experiment {
            config,
            topo,
            scenarios,
        })
    }

    /// The configured artifact directory.
    pub fn output_dir(&self) -> Result<&Path, ExperimentError> {
        self.config
            .output
            .as_deref()
            .ok_or_else(|| ExperimentError::Config("no output directory given".into()))
    }

    fn cfg(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn partition(&self) -> Result<SensorMap, ExperimentError> {
        partition_sensors(&self.topo, self.cfg().max_routers).map_err(|e| fail("partition", e))
    }

    pub fn probe_scheme(&self, sensors: &SensorMap) -> Result<ProbeScheme, ExperimentError> {
        let base = crate::topo::RoutingState::baseline(&self.topo);
        generate_probe_scheme(&self.topo, &base, sensors, self.cfg().probes_length).map_err(|e| fail("probe-scheme", e))
    }

    pub fn traffic_matrix(&self) -> TrafficMatrix {
        generate_traffic_matrix(&self.topo, self.cfg().seed, self.cfg().load_fraction)
    }

    pub fn plan(&self) -> Result<Plan, ExperimentError> {
        let sensors = self.partition()?;
        let scheme = self.probe_scheme(&sensors)?;
        Ok(Plan {
            sensors,
            scheme,
            matrix: self.traffic_matrix(),
        })
    }

    pub fn timeline(&self, matrix: &TrafficMatrix) -> Result<NetworkTimeline, ExperimentError> {
        let cfg = self.cfg();
        let mut timeline = NetworkTimeline::new(&self.topo, cfg.warmup_tu, cfg.duration_tu);
        for (i, s) in self.scenarios.iter().enumerate() {
            apply_scenario(&mut timeline, s, &self.topo, matrix, cfg.seed.wrapping_add(i as u64))
                .map_err(|e| ExperimentError::Config(format!("scenario {}: {e}", i + 1)))?;
        }
        Ok(timeline)
    }

    /// Routers targeted by the malicious scenarios.
    pub fn victims(&self, matrix: &TrafficMatrix) -> Result<BTreeSet<RouterIdx>, ExperimentError> {
        Ok(self.timeline(matrix)?.victim_routers().clone())
    }

    pub fn simulate(&self, plan: &Plan) -> Result<SimOutput, ExperimentError> {
        let timeline = self.timeline(&plan.matrix)?;
        run_simulation(&self.topo, &timeline, &plan.matrix, &plan.scheme, &self.cfg().sim_config())
            .map_err(|e| fail("simulate", e))
    }

    pub fn extract(&self, plan: &Plan, sim: &SimOutput, sources: &[FeatureSource]) -> Result<SensorData, ExperimentError> {
        let cfg = self.cfg();
        let features = build_features(sim, &self.topo, &plan.scheme, &plan.sensors, &cfg.timing, sources).map_err(|e| fail("features", e))?;
        let labels = window_labels(sim, &cfg.timing);
        let split = split_train_eval(&labels, &cfg.split).map_err(|e| fail("features", e))?;
        let eval_labels = labels_for(&labels, &split.eval);
        let mut data = SensorData {
            ids: Vec::new(),
            train: Vec::new(),
            eval: Vec::new(),
        };
        for (sensor, ds) in plan.sensors.sensors().iter().zip(features) {
            if ds.schema.is_empty() {
                continue;
            }
            data.ids.push(sensor.id.clone());
            data.train.push(ds.select(&split.train));
            data.eval.push(ds.select(&split.eval).with_labels(eval_labels.clone()).map_err(|e| fail("features", e))?);
        }
        if data.ids.is_empty() {
            return Err(ExperimentError::Stage {
                stage: "features",
                message: "no Sensor has any feature of the requested sources".into(),
            });
        }
        Ok(data)
    }

    pub fn train(&self, data: &SensorData) -> Result<Ensemble, ExperimentError> {
        let members: Vec<(String, Dataset)> = data.ids.iter().cloned().zip(data.train.iter().cloned()).collect();
        Ensemble::train(&members, &self.cfg().ensemble).map_err(|e| fail("train", e))
    }

    /// Scores the evaluation rows and, on windows classified as attack,
    /// localizes suspects from the reporting Sensors.
    pub fn detect(&self, plan: &Plan, ensemble: &Ensemble, eval: &[Dataset]) -> Result<ScoreSeries, ExperimentError> {
        let cfg = self.cfg();
        let mut series = ensemble.score(eval, &cfg.nas).map_err(|e| fail("detect", e))?;
        if cfg.ensemble.detector != DetectorKind::UnivariateDensity {
            return Ok(series);
        }
        for t in 0..series.len() {
            if !series.predicted[t] {
                continue;
            }
            let mut reports = Vec::new();
            for (s, member) in ensemble.members.iter().enumerate() {
                if series.sensor_scores[t][s] < member.model.threshold() {
                    continue;
                }
                let r = sensor_suspects(
                    &member.id,
                    &eval[s].rows[t],
                    &member.model,
                    &self.topo,
                    &plan.scheme,
                    cfg.feature_threshold,
                )
                .map_err(|e| fail("detect", e))?;
                reports.push(r.routers);
            }
            series.suspects[t] = fuse_suspects(&reports)
                .into_iter()
                .map(|r| self.topo.router_id(r).as_str().to_string())
                .collect();
        }
        Ok(series)
    }

    pub fn evaluate(&self, series: &ScoreSeries, victims: &BTreeSet<RouterIdx>) -> Result<Outcome, ExperimentError> {
        let err = |e: &dyn fmt::Display| fail("evaluate", e);
        let actual: Vec<bool> = series
            .labels
            .as_ref()
            .ok_or_else(|| err(&"score series has no labels"))?
            .iter()
            .map(|l| l.is_attack())
            .collect();
        let mut al = Vec::new();
        if !victims.is_empty() {
            for t in 0..series.len() {
                if !(series.predicted[t] && actual[t]) || series.suspects[t].is_empty() {
                    continue;
                }
                let predicted: BTreeSet<RouterIdx> = series.suspects[t]
                    .iter()
                    .map(|id| self.topo.router_index(&RouterId::from(id.as_str())))
                    .collect::<Option<_>>()
                    .ok_or_else(|| err(&"suspect is not a router of the topology"))?;
                if let Some(s) = al_score(&predicted, victims, &self.topo).map_err(|e| err(&e))? {
                    al.push(s);
                }
            }
        }
        let report = MetricsReport::build(&series.predicted, &series.ep, &series.nas, &actual, &al).map_err(|e| err(&e))?;
        let roc = match roc_auc(&series.ep, &actual) {
            Ok((points, _)) => points,
            Err(EvalError::SingleClass) => Vec::new(),
            Err(e) => return Err(err(&e)),
        };
        Ok(Outcome {
            series: series.clone(),
            report,
            roc,
        })
    }

    /// Features, training, detection and evaluation for one feature set on
    /// an existing simulation.
    pub fn assess(&self, plan: &Plan, sim: &SimOutput, sources: &[FeatureSource]) -> Result<Outcome, ExperimentError> {
        let data = self.extract(plan, sim, sources)?;
        let ensemble = self.train(&data)?;
        let series = self.detect(plan, &ensemble, &data.eval)?;
        self.evaluate(&series, &self.victims(&plan.matrix)?)
    }
}

const PLANS: &str = "plans";
const DATASETS: &str = "datasets";
const MODELS: &str = "models";
const SERIES: &str = "series";
const REPORTS: &str = "reports";

fn mkdir(dir: &Path, stage_name: &'static str) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|e| fail(stage_name, format!("{}: {e}", dir.display())))
}

fn write(path: &Path, text: &str, stage_name: &'static str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(|e| fail(stage_name, format!("{}: {e}", path.display())))
}

fn read(path: &Path, stage_name: &'static str) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(|e| fail(stage_name, format!("{}: {e}", path.display())))
}

fn sim_dir(out: &Path) -> PathBuf {
    out.join(DATASETS).join("sim")
}

fn dataset_path(out: &Path, id: &str, part: &str) -> PathBuf {
    out.join(DATASETS).join(format!("{id}.{part}.csv"))
}

/// One line of a sweep summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub intensity: f64,
    pub features: String,
    pub auc: Option<f64>,
    pub auc_nas: Option<f64>,
    pub recall: f64,
    pub fpr: f64,
    pub f_score: f64,
}

pub fn feature_set_name(sources: &[FeatureSource]) -> String {
    sources
        .iter()
        .map(|s| match s {
            FeatureSource::Probes => "probes",
            FeatureSource::Links => "links",
            FeatureSource::Mibs => "mibs",
        })
        .collect::<Vec<_>>()
        .join("+")
}

/// Short human-readable digest of a metrics report.
pub fn summary_text(report: &MetricsReport) -> String {
    let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let c = &report.confusion;
    let mut s = format!(
        "tp {} tn {} fp {} fn {}\nerror {:.4}\nprecision {:.4}\nrecall {:.4}\nfpr {:.4}\nf-score {:.4}\nauc {}\nauc (nas) {}\n",
        c.tp,
        c.tn,
        c.fp,
        c.fn_,
        report.error,
        report.precision,
        report.recall,
        report.fpr,
        report.f_score,
        opt(report.auc),
        opt(report.auc_nas),
    );
    for (i, t) in report.time_to_detect.iter().enumerate() {
        s.push_str(&format!(
            "attack window {} detected after {}\n",
            i + 1,
            t.map_or("never".to_string(), |t| format!("{t} windows"))
        ));
    }
    s.push_str(&format!("al score {}\n", opt(report.al_score_mean)));
    s
}

impl Experiment {
    /// Copy with every malicious scenario set to `intensity`.
    pub fn with_intensity(&self, intensity: f64) -> Experiment {
        let mut e = self.clone();
        for s in &mut e.scenarios {
            if s.kind.is_malicious() {
                s.intensity = intensity;
            }
        }
        e
    }

    fn write_plans(&self, out: &Path, plan: &Plan) -> Result<(), ExperimentError> {
        self.write_sensors(out, &plan.sensors)?;
        self.write_scheme(out, &plan.scheme)
    }

    fn write_sensors(&self, out: &Path, sensors: &SensorMap) -> Result<(), ExperimentError> {
        let dir = out.join(PLANS);
        mkdir(&dir, "partition")?;
        write(&dir.join("topology.txt"), &self.topo.to_text(), "partition")?;
        write(&dir.join("sensors.txt"), &sensors.to_text(&self.topo), "partition")
    }

    fn write_scheme(&self, out: &Path, scheme: &ProbeScheme) -> Result<(), ExperimentError> {
        let dir = out.join(PLANS);
        mkdir(&dir, "probe-scheme")?;
        let overhead = probe_traffic_report(scheme, &self.config.timing, &self.topo);
        write(&dir.join("probes.txt"), &scheme.to_text(&self.topo), "probe-scheme")?;
        write(
            &dir.join("probe_overhead.json"),
            &serde_json::to_string_pretty(&overhead).expect("report serializes"),
            "probe-scheme",
        )
    }

    fn read_plan(&self, out: &Path, stage_name: &'static str) -> Result<Plan, ExperimentError> {
        let dir = out.join(PLANS);
        let sensors = SensorMap::parse(&read(&dir.join("sensors.txt"), stage_name)?, &self.topo)
            .map_err(|e| fail(stage_name, e))?;
        let scheme = ProbeScheme::parse(&read(&dir.join("probes.txt"), stage_name)?, &self.topo)
            .map_err(|e| fail(stage_name, e))?;
        Ok(Plan {
            sensors,
            scheme,
            matrix: self.traffic_matrix(),
        })
    }

    fn write_sim(&self, out: &Path, sim: &SimOutput) -> Result<(), ExperimentError> {
        sim.write_dir(&sim_dir(out)).map_err(|e| fail("simulate", e))
    }

    fn write_datasets(&self, out: &Path, data: &SensorData) -> Result<(), ExperimentError> {
        mkdir(&out.join(DATASETS), "features")?;
        for ((id, train), eval) in data.ids.iter().zip(&data.train).zip(&data.eval) {
            train
                .write(&dataset_path(out, id, "train"))
                .map_err(|e| fail("features", e))?;
            eval.write(&dataset_path(out, id, "eval")).map_err(|e| fail("features", e))?;
        }
        Ok(())
    }

    fn write_models(&self, out: &Path, ensemble: &Ensemble) -> Result<(), ExperimentError> {
        ensemble.write_dir(&out.join(MODELS)).map_err(|e| fail("train", e))
    }

    fn write_series(&self, out: &Path, series: &ScoreSeries) -> Result<(), ExperimentError> {
        let dir = out.join(SERIES);
        mkdir(&dir, "detect")?;
        write(&dir.join("scores.csv"), &series.to_csv(), "detect")
    }

    fn write_reports(&self, out: &Path, outcome: &Outcome) -> Result<(), ExperimentError> {
        let dir = out.join(REPORTS);
        mkdir(&dir, "evaluate")?;
        write(&dir.join("metrics.json"), &outcome.report.to_json(), "evaluate")?;
        write(&dir.join("roc.csv"), &roc_csv(&outcome.roc), "evaluate")?;
        write(&dir.join("summary.txt"), &summary_text(&outcome.report), "evaluate")
    }

    /// Writes `plans/topology.txt` and `plans/sensors.txt`.
    pub fn stage_partition(&self, out: &Path) -> Result<SensorMap, ExperimentError> {
        let sensors = self.partition()?;
        self.write_sensors(out, &sensors)?;
        Ok(sensors)
    }

    /// Reads the Sensor plan and writes `plans/probes.txt` with its
    /// bandwidth overhead.
    pub fn stage_probe_scheme(&self, out: &Path) -> Result<ProbeScheme, ExperimentError> {
        let sensors = SensorMap::parse(&read(&out.join(PLANS).join("sensors.txt"), "probe-scheme")?, &self.topo)
            .map_err(|e| fail("probe-scheme", e))?;
        let scheme = self.probe_scheme(&sensors)?;
        self.write_scheme(out, &scheme)?;
        Ok(scheme)
    }

    /// Runs the network with the stored plans; writes `datasets/sim/`.
    pub fn stage_simulate(&self, out: &Path) -> Result<SimOutput, ExperimentError> {
        let plan = self.read_plan(out, "simulate")?;
        let sim = self.simulate(&plan)?;
        self.write_sim(out, &sim)?;
        Ok(sim)
    }

    /// Builds per-Sensor datasets from the stored simulation and trains the
    /// ensemble on them.
    pub fn stage_train(&self, out: &Path) -> Result<Ensemble, ExperimentError> {
        let plan = self.read_plan(out, "train")?;
        let sim = SimOutput::read_dir(&sim_dir(out), &self.topo).map_err(|e| fail("train", e))?;
        let data = self.extract(&plan, &sim, &self.config.features)?;
        self.write_datasets(out, &data)?;
        let ensemble = self.train(&data)?;
        self.write_models(out, &ensemble)?;
        Ok(ensemble)
    }

    /// Scores the stored evaluation datasets with the stored models.
    pub fn stage_detect(&self, out: &Path) -> Result<ScoreSeries, ExperimentError> {
        let plan = self.read_plan(out, "detect")?;
        let ensemble = Ensemble::read_dir(&out.join(MODELS)).map_err(|e| fail("detect", e))?;
        let eval = ensemble
            .members
            .iter()
            .map(|m| Dataset::read(&dataset_path(out, &m.id, "eval")).map_err(|e| fail("detect", e)))
            .collect::<Result<Vec<_>, _>>()?;
        let series = self.detect(&plan, &ensemble, &eval)?;
        self.write_series(out, &series)?;
        Ok(series)
    }

    /// Computes metrics from the stored score series.
    pub fn stage_evaluate(&self, out: &Path) -> Result<Outcome, ExperimentError> {
        let series = ScoreSeries::from_csv(&read(&out.join(SERIES).join("scores.csv"), "evaluate")?)
            .map_err(|e| fail("evaluate", e))?;
        let outcome = self.evaluate(&series, &self.victims(&self.traffic_matrix())?)?;
        self.write_reports(out, &outcome)?;
        Ok(outcome)
    }

    /// Every stage in sequence, writing the same files as the individual
    /// stage functions.
    pub fn run(&self, out: &Path) -> Result<Outcome, ExperimentError> {
        let plan = self.plan()?;
        self.write_plans(out, &plan)?;
        let sim = self.simulate(&plan)?;
        self.write_sim(out, &sim)?;
        let data = self.extract(&plan, &sim, &self.config.features)?;
        self.write_datasets(out, &data)?;
        let ensemble = self.train(&data)?;
        self.write_models(out, &ensemble)?;
        let series = self.detect(&plan, &ensemble, &data.eval)?;
        self.write_series(out, &series)?;
        let outcome = self.evaluate(&series, &self.victims(&plan.matrix)?)?;
        self.write_reports(out, &outcome)?;
        Ok(outcome)
    }

    /// Detection quality for each intensity and feature set. Each intensity
    /// is simulated once and shared by the feature sets. Writes
    /// `reports/sweep.csv`.
    pub fn sweep(
        &self,
        intensities: &[f64],
        feature_sets: &[Vec<FeatureSource>],
        out: &Path,
    ) -> Result<Vec<SweepRow>, ExperimentError> {
        if intensities.is_empty() || feature_sets.is_empty() {
            return Err(ExperimentError::Config("a sweep needs intensities and feature sets".into()));
        }
        let plan = self.plan()?;
        let mut rows = Vec::new();
        for &x in intensities {
            let exp = self.with_intensity(x);
            let sim = exp.simulate(&plan)?;
            for sources in feature_sets {
                let o = exp.assess(&plan, &sim, sources)?;
                rows.push(SweepRow {
                    intensity: x,
                    features: feature_set_name(sources),
                    auc: o.report.auc,
                    auc_nas: o.report.auc_nas,
                    recall: o.report.recall,
                    fpr: o.report.fpr,
                    f_score: o.report.f_score,
                });
            }
        }
        let dir = out.join(REPORTS);
        mkdir(&dir, "sweep")?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &rows {
            w.serialize(r).map_err(|e| fail("sweep", e))?;
        }
        let bytes = w.into_inner().map_err(|e| fail("sweep", e))?;
        write(&dir.join("sweep.csv"), &String::from_utf8(bytes).expect("csv is utf-8"), "sweep")?;
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackKind;

    const MINIMAL: &str = "topology = \"t.topo\"\nseed = 3\nwarmup_tu = 10\nduration_tu = 100\n";

    #[test]
    fn defaults_fill_unset_fields() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.features, vec![FeatureSource::Probes]);
        assert_eq!((c.max_routers, c.probes_length), (4, 4));
        assert_eq!(c.nas, NasConfig::default());
        assert_eq!(c.ensemble.detector, DetectorKind::UnivariateDensity);
        assert_eq!(c.output, None);
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        let extra = format!("{MINIMAL}colour = 1\n");
        assert!(ExperimentConfig::parse(&extra).unwrap_err().is_config());
        let mut c = ExperimentConfig::parse(MINIMAL).unwrap();
        c.features.clear();
        assert!(c.validate().unwrap_err().is_config());
        let mut c = ExperimentConfig::parse(MINIMAL).unwrap();
        c.nas.p = 3;
        assert!(c.validate().is_err());
        let missing = ExperimentConfig::load(Path::new("/nonexistent/x.toml")).unwrap_err();
        assert!(missing.is_config());
    }

    #[test]
    fn intensity_override_touches_malicious_scenarios_only() {
        let topo = parse_topology("node A\nnode B\nnode C\nlink A B 1 1e8 0.001 100\nlink B C 1 1e8 0.001 100\n").unwrap();
        let mut dns = AttackScenario::none();
        dns.kind = AttackKind::DnsCachePoisoning;
        dns.intensity = 1.0;
        let mut fault = AttackScenario::none();
        fault.kind = AttackKind::BenignLinkFailure;
        fault.intensity = 1.0;
        let exp = Experiment::new(ExperimentConfig::parse(MINIMAL).unwrap(), topo, vec![dns, fault]).unwrap();
        let e = exp.with_intensity(0.4);
        assert_eq!(e.scenarios[0].intensity, 0.4);
        assert_eq!(e.scenarios[1].intensity, 1.0);
    }

    #[test]
    fn names_and_summary() {
        assert_eq!(feature_set_name(&[FeatureSource::Links, FeatureSource::Mibs]), "links+mibs");
        let r = MetricsReport::build(&[true, false], &[0.9, 0.1], &[0.8, 0.0], &[true, false], &[0.5]).unwrap();
        let s = summary_text(&r);
        assert!(s.contains("recall 1.0000") && s.contains("attack window 1 detected after 0 windows"));
        assert!(s.contains("al score 0.5000"));
    }
}
