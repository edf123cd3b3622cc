use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use probenids::eval::MetricsReport;
use probenids::experiment::{summary_text, Experiment, ExperimentConfig, ExperimentError};
use probenids::oneclass::DetectorKind;
use probenids::sense::FeatureSource;

/// Network intrusion detection from active probe measurements.
#[derive(Parser)]
#[command(name = "probenids", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Group routers into Sensors; writes plans/sensors.txt.
    Partition(Common),
    /// Choose probes between Sensors; writes plans/probes.txt.
    ProbeScheme(Common),
    /// Simulate the network with the stored plans; writes datasets/sim/.
    Simulate(Common),
    /// Build Sensor datasets and train the ensemble; writes datasets/ and models/.
    Train(Common),
    /// Score the evaluation period; writes series/scores.csv.
    Detect(Common),
    /// Compute metrics from the score series; writes reports/.
    Evaluate(Common),
    /// Print the metrics of a finished run.
    Report {
        #[command(flatten)]
        common: Common,
        /// Print the raw JSON report instead of the summary.
        #[arg(long)]
        json: bool,
    },
    /// Every stage in sequence.
    Run(Common),
    /// AUC per attack intensity and feature set; writes reports/sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Attack intensities, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.4, 0.6, 0.8, 1.0])]
        intensities: Vec<f64>,
        /// Feature sets to compare, e.g. `probes` or `links+mibs`; repeatable.
        #[arg(long = "feature-set", default_values = ["probes", "links", "mibs"])]
        feature_sets: Vec<String>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum Source {
    Probes,
    Links,
    Mibs,
}

impl From<Source> for FeatureSource {
    fn from(s: Source) -> Self {
        match s {
            Source::Probes => FeatureSource::Probes,
            Source::Links => FeatureSource::Links,
            Source::Mibs => FeatureSource::Mibs,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum Detector {
    UnivariateDensity,
    KnnDensity,
    HypersphereBoundary,
}

impl From<Detector> for DetectorKind {
    fn from(d: Detector) -> Self {
        match d {
            Detector::UnivariateDensity => DetectorKind::UnivariateDensity,
            Detector::KnnDensity => DetectorKind::KnnDensity,
            Detector::HypersphereBoundary => DetectorKind::HypersphereBoundary,
        }
    }
}

/// Config file plus overrides for its fields.
#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Artifact directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<Source>>,
    #[arg(long)]
    detector: Option<Detector>,
    #[arg(long)]
    combiner: Option<Detector>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    t_prs: Option<f64>,
    #[arg(long)]
    t_cl: Option<f64>,
    #[arg(long)]
    max_routers: Option<usize>,
    #[arg(long)]
    probes_length: Option<usize>,
    /// Keep benign-fault windows in the training set.
    #[arg(long)]
    train_with_faults: bool,
}

impl Common {
    fn experiment(&self) -> Result<Experiment, ExperimentError> {
        let mut c = ExperimentConfig::load(&self.config)?;
        if let Some(o) = &self.out {
            c.output = Some(o.clone());
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.features {
            c.features = v.iter().map(|&s| s.into()).collect();
        }
        if let Some(v) = self.detector {
            c.ensemble.detector = v.into();
        }
        if let Some(v) = self.combiner {
            c.ensemble.combiner = v.into();
        }
        if let Some(v) = self.xi {
            c.nas.xi = v;
        }
        if let Some(v) = self.p {
            c.nas.p = v;
        }
        if let Some(v) = self.theta {
            c.nas.theta = v;
        }
        if let Some(v) = self.t_prs {
            c.timing.t_prs = v;
        }
        if let Some(v) = self.t_cl {
            c.timing.t_cl = v;
        }
        if let Some(v) = self.max_routers {
            c.max_routers = v;
        }
        if let Some(v) = self.probes_length {
            c.probes_length = v;
        }
        if self.train_with_faults {
            c.split.train_with_faults = true;
        }
        Experiment::resolve(c)
    }
}

fn parse_feature_set(text: &str) -> Result<Vec<FeatureSource>, ExperimentError> {
    text.split('+')
        .map(|s| {
            Source::from_str(s.trim(), true)
                .map(Into::into)
                .map_err(|_| ExperimentError::Config(format!("unknown feature source `{s}`")))
        })
        .collect()
}

fn report(out: &Path, json: bool) -> anyhow::Result<()> {
    let path = out.join("reports").join("metrics.json");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    if json {
        print!("{text}");
    } else {
        let r = MetricsReport::from_json(&text).context("parsing metrics report")?;
        print!("{}", summary_text(&r));
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), ExperimentError> {
    let exp = match &cmd {
        Command::Partition(c)
        | Command::ProbeScheme(c)
        | Command::Simulate(c)
        | Command::Train(c)
        | Command::Detect(c)
        | Command::Evaluate(c)
        | Command::Run(c)
        | Command::Report { common: c, .. }
        | Command::Sweep { common: c, .. } => c.experiment()?,
    };
    let out = exp.output_dir()?.to_path_buf();
    match cmd {
        Command::Partition(_) => {
            exp.stage_partition(&out)?;
        }
        Command::ProbeScheme(_) => {
            let scheme = exp.stage_probe_scheme(&out)?;
            println!("{} probes", scheme.len());
        }
        Command::Simulate(_) => {
            let sim = exp.stage_simulate(&out)?;
            println!("{} measurements over {} TU", sim.measurements.len(), sim.duration_tu());
        }
        Command::Train(_) => {
            let e = exp.stage_train(&out)?;
            println!("trained {} Sensor models", e.members.len());
        }
        Command::Detect(_) => {
            let s = exp.stage_detect(&out)?;
            println!("{} windows scored", s.len());
        }
        Command::Evaluate(_) => {
            let o = exp.stage_evaluate(&out)?;
            print!("{}", summary_text(&o.report));
        }
        Command::Run(_) => {
            let o = exp.run(&out)?;
            print!("{}", summary_text(&o.report));
        }
        Command::Report { json, .. } => {
            report(&out, json).map_err(|e| ExperimentError::Stage {
                stage: "report",
                message: format!("{e:#}"),
            })?;
        }
        Command::Sweep {
            intensities,
            feature_sets,
            ..
        } => {
            let sets = feature_sets
                .iter()
                .map(|s| parse_feature_set(s))
                .collect::<Result<Vec<_>, _>>()?;
            let rows = exp.sweep(&intensities, &sets, &out)?;
            let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
            println!("intensity  features          auc     auc(nas)");
            for r in rows {
                println!("{:<10} {:<17} {:<7} {}", r.intensity, r.features, opt(r.auc), opt(r.auc_nas));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
