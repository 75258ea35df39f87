//! Config-driven experiment runs. Each pipeline stage reads its inputs back
//! from the files earlier stages wrote, so a run can be audited artifact by
//! artifact.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub use config::{
    default_weights, AnalysisSection, ArchitectureSection, CostOverride, DatasetSection,
    ExperimentConfig, OracleSection, PredictorSection, ThresholdSpec, TrainSection,
};

use crate::cost_model::{savings_slope, CostReport};
use crate::error::{Error, Result};
use crate::predictor::{evaluate, read_model, train, write_model, EvalReport, Mlp};
use crate::router::{branch_vs_predictor, difficulty_correlation, sweep};
use crate::sim::{derive_seed, read_dataset, write_dataset, QualityOracle, SimInput};

pub const DATASET_FILE: &str = "dataset.fncds";
pub const MODEL_FILE: &str = "model.fncmlp";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// `scale_factor,exit_id,flops` for every configured scale factor, branches
/// first and the backbone once at the end.
pub fn run_cost_table(cfg: &ExperimentConfig) -> Result<String> {
    cost_table(&cfg.architecture)
}

/// [`run_cost_table`] for an architecture section alone.
pub fn cost_table(arch: &ArchitectureSection) -> Result<String> {
    let fixture = arch.load_fixture()?;
    let mut out = String::from("scale_factor,exit_id,flops\n");
    let mut backbone = None;
    for &sf in &arch.scale_factors {
        let report = CostReport::for_graph(&fixture.to_graph(&arch.policy(sf)?)?);
        for (id, flops) in &report.per_exit_flops {
            let _ = writeln!(out, "{sf},{id},{flops}");
        }
        backbone = Some(report.backbone_flops);
    }
    let backbone = match backbone {
        Some(b) => b,
        None => {
            CostReport::for_graph(&fixture.to_graph(&arch.policy(arch.scale_factor)?)?)
                .backbone_flops
        }
    };
    let _ = writeln!(out, "-,backbone,{backbone}");
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: &'static str,
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineReport {
    pub artifacts: Vec<Artifact>,
    pub final_train_loss: f64,
    pub validation: EvalReport,
    pub mean_violation_rate: f64,
    pub max_violation_rate: f64,
    pub single_exceedance: f64,
    pub routed_exceedance: f64,
    pub correlation: f64,
    pub savings_slope: f64,
}

struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, bytes)?;
        Ok(path)
    }

    fn discard(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn digest(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path)?;
    let hex = Sha256::digest(&bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
    Ok((bytes.len() as u64, hex))
}

fn eval_inputs(cfg: &ExperimentConfig) -> Result<(QualityOracle, Vec<SimInput>)> {
    let mut oracle_cfg = cfg.oracle_config();
    // fresh inputs, disjoint from the training stream
    oracle_cfg.seed = derive_seed(cfg.seed, "eval");
    let mut sampler = QualityOracle::new(oracle_cfg)?;
    let inputs = sampler.sample_inputs(cfg.analysis.eval_inputs);
    Ok((QualityOracle::new(cfg.oracle_config())?, inputs))
}

fn mean_cost_curve(sweep_csv: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(sweep_csv).map_err(|e| Error::Schema(e.to_string()))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("sweep file lacks column `{name}`")))
    };
    let (t, c) = (col("threshold")?, col("mean_flops")?);
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Schema(e.to_string()))?;
            let num = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Schema(format!("`{}`: {e}", &rec[i])))
            };
            Ok((num(t)?, num(c)?))
        })
        .collect()
}

/// Run every stage and write the artifacts plus a sha256 manifest into
/// `cfg.out_dir`. On failure all files this run wrote are removed.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut out = Outputs {
        dir: cfg.out_dir.clone(),
        written: Vec::new(),
    };
    let result = run_stages(cfg, &mut out);
    if result.is_err() {
        out.discard();
    }
    result
}

fn run_stages(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<PipelineReport> {
    let thresholds = cfg.thresholds()?;
    let costs = cfg.exit_costs()?;

    let dataset_path = stage(
        "simulate",
        (|| {
            let ds = QualityOracle::new(cfg.oracle_config())?.make_dataset_split(
                cfg.dataset.n_conditions,
                cfg.dataset.n_noise,
                cfg.dataset.val_fraction,
            )?;
            let path = out.dir.join(DATASET_FILE);
            out.written.push(path.clone());
            write_dataset(&ds, &path)?;
            Ok(path)
        })(),
    )?;

    let (model_path, final_train_loss, validation) = stage(
        "train",
        (|| {
            let ds = read_dataset(&dataset_path)?;
            let mut dims = vec![ds.input_dim];
            dims.extend(&cfg.predictor.hidden);
            dims.push(ds.exits);
            let mut model = Mlp::new(
                &dims,
                cfg.predictor.leaky_slope,
                derive_seed(cfg.seed, "init"),
            )?;
            let history = train(&mut model, &ds.train, &cfg.train_config())?;
            let held_out = if ds.val.is_empty() {
                &ds.train
            } else {
                &ds.val
            };
            let report = evaluate(&model, held_out)?;
            let path = out.dir.join(MODEL_FILE);
            out.written.push(path.clone());
            write_model(&model, &path)?;
            Ok((path, history.last().copied().unwrap_or(f64::NAN), report))
        })(),
    )?;

    let load_model = || read_model(&model_path);

    let sweep_report = stage(
        "sweep",
        (|| {
            let model = load_model()?;
            let (oracle, inputs) = eval_inputs(cfg)?;
            let report = sweep(&inputs, &model, &oracle, &costs, &thresholds)?;
            out.write(SWEEP_FILE, report.to_csv().as_bytes())?;
            Ok(report)
        })(),
    )?;

    let ablation = stage(
        "ablation",
        (|| {
            let model = load_model()?;
            let (oracle, inputs) = eval_inputs(cfg)?;
            let a =
                branch_vs_predictor(&inputs, &model, &oracle, &costs, cfg.analysis.ablation_exit)?;
            out.write(ABLATION_FILE, a.to_csv().as_bytes())?;
            Ok(a)
        })(),
    )?;

    let correlation = stage(
        "correlation",
        (|| {
            let model = load_model()?;
            let (_, inputs) = eval_inputs(cfg)?;
            let attributes: Vec<f64> = inputs.iter().map(|x| x.attribute).collect();
            let threshold = cfg
                .analysis
                .correlation_threshold
                .unwrap_or(thresholds[thresholds.len() / 2]);
            difficulty_correlation(&inputs, &model, &costs, threshold, &attributes)
        })(),
    )?;

    let slope = stage(
        "savings",
        (|| savings_slope(&mean_cost_curve(&out.dir.join(SWEEP_FILE))?))(),
    )?;

    let max_violation_rate = sweep_report
        .rows
        .iter()
        .map(|r| r.violation_rate)
        .fold(0.0, f64::max);
    let report = PipelineReport {
        artifacts: Vec::new(),
        final_train_loss,
        mean_violation_rate: sweep_report.mean_violation_rate(),
        max_violation_rate,
        single_exceedance: ablation.single_exceedance,
        routed_exceedance: ablation.routed_exceedance,
        correlation,
        savings_slope: slope,
        validation,
    };

    stage(
        "summary",
        (|| {
            let mut s = String::from("metric,value\n");
            let metrics = [
                ("final_train_loss", report.final_train_loss),
                ("val_mean_relative_error", report.validation.overall),
                ("mean_violation_rate", report.mean_violation_rate),
                ("max_violation_rate", report.max_violation_rate),
                ("single_branch_exceedance", report.single_exceedance),
                ("routed_exceedance", report.routed_exceedance),
                ("difficulty_correlation", report.correlation),
                ("savings_slope", report.savings_slope),
            ];
            for (k, v) in metrics {
                let _ = writeln!(s, "{k},{v}");
            }
            out.write(SUMMARY_FILE, s.as_bytes())?;
            Ok(())
        })(),
    )?;

    let artifacts = stage(
        "manifest",
        (|| {
            let names = [
                DATASET_FILE,
                MODEL_FILE,
                SWEEP_FILE,
                ABLATION_FILE,
                SUMMARY_FILE,
            ];
            let mut manifest = String::from("artifact,bytes,sha256\n");
            let mut artifacts = Vec::with_capacity(names.len());
            for name in names {
                let path = out.dir.join(name);
                let (bytes, sha256) = digest(&path)?;
                let _ = writeln!(manifest, "{name},{bytes},{sha256}");
                artifacts.push(Artifact {
                    name,
                    path,
                    bytes,
                    sha256,
                });
            }
            out.write(MANIFEST_FILE, manifest.as_bytes())?;
            Ok(artifacts)
        })(),
    )?;

    Ok(PipelineReport {
        artifacts,
        ..report
    })
}
