//! Experiment configuration and pipeline stages.
//!
//! Every stage exists twice: as an in-memory function (`load_dataset`,
//! `make_plan`, `train_parties`, `select_teams`, `evaluate_run`) and as a
//! disk-backed step driven by [`run_stage`], which reads the artifacts of
//! the previous stage from `<out_dir>/seed-<seed>/`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    complete_inspection, emit_report, k_sweep, team_diversity, InspectionResult, Report, ReportFormat, ReportRow,
    SweepSeries, DEFAULT_M_CAP,
};
use crate::data::{load_csv, make_synthetic, partition, Dataset, PartitionPlan, PartitionSpec, SplitFractions};
use crate::ensemble::{evaluate_team, fuse, FusionMethod};
use crate::market::{MarketStore, ModelRecord};
use crate::rng;
use crate::selection::{baseline_select, EnsembleTeam, Provenance, SelectionConfig};
use crate::training::{accuracy, predict, train_local, train_oracle, ModelParams, TrainConfig};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const WORKERS_ENV: &str = "DEDES_WORKERS";

const TAG_DATA: u64 = 0xD47A;
const TAG_PARTITION: u64 = 0x9A27;
const TAG_TRAIN: u64 = 0x7241;
const TAG_ORACLE: u64 = 0x0AC1;
const TAG_SELECT: u64 = 0x5E1E;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        classes: usize,
        dim: usize,
        n: usize,
        #[serde(default = "default_separation")]
        separation: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        header: bool,
    },
}

fn default_separation() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dedes,
    Cv,
    Ds,
    Rs,
    As,
    Lds,
    Top1,
    FedAvg,
    MeanAvg,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Dedes,
        Method::Cv,
        Method::Ds,
        Method::Rs,
        Method::As,
        Method::Lds,
        Method::Top1,
        Method::FedAvg,
        Method::MeanAvg,
        Method::Oracle,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Method::Dedes => "dedes",
            Method::Cv => "cv",
            Method::Ds => "ds",
            Method::Rs => "rs",
            Method::As => "as",
            Method::Lds => "lds",
            Method::Top1 => "top1",
            Method::FedAvg => "fedavg",
            Method::MeanAvg => "meanavg",
            Method::Oracle => "oracle",
        }
    }

    /// Methods that produce an ensemble team.
    pub fn is_team(&self) -> bool {
        !matches!(self, Method::FedAvg | Method::MeanAvg | Method::Oracle)
    }

    fn provenance(&self) -> Option<Provenance> {
        Some(match self {
            Method::Dedes => Provenance::Dedes,
            Method::Cv => Provenance::Cv,
            Method::Ds => Provenance::Ds,
            Method::Rs => Provenance::Rs,
            Method::As => Provenance::As,
            Method::Lds => Provenance::Lds,
            _ => return None,
        })
    }
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_m_cap() -> usize {
    DEFAULT_M_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Dataset label in reports; defaults to `synthetic` or the CSV file stem.
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: DatasetSource,
    pub partition: PartitionSpec,
    pub m: usize,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub sweep_ks: Vec<usize>,
    #[serde(default = "default_m_cap")]
    pub m_cap: usize,
}

fn config_err(path: &str, e: impl std::fmt::Display) -> Error {
    Error::Config {
        path: path.to_string(),
        msg: e.to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(&path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        if self.m < 2 {
            return Err(config_err("m", "need at least two parties"));
        }
        if self.methods.is_empty() {
            return Err(config_err("methods", "no methods selected"));
        }
        if self.m_cap >= 64 {
            return Err(config_err("m_cap", "must be below 64"));
        }
        if let DatasetSource::Synthetic {
            classes,
            dim,
            n,
            separation,
        } = &self.dataset
        {
            if *classes < 2 || *dim == 0 || *n < *classes || !separation.is_finite() || *separation <= 0.0 {
                return Err(config_err("dataset", "synthetic parameters out of range"));
            }
            self.partition.validate(*classes).map_err(|e| config_err("partition", e))?;
        }
        self.split.validate().map_err(|e| config_err("split", e))?;
        self.train.validate().map_err(|e| config_err("train", e))?;
        self.selection.validate().map_err(|e| config_err("selection", e))?;
        Ok(())
    }

    pub fn dataset_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.dataset {
            DatasetSource::Synthetic { .. } => "synthetic".into(),
            DatasetSource::Csv { path, .. } => path
                .file_stem()
                .map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned()),
        }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("seed-{seed}"))
    }
}

/// Worker count from the environment, else the number of logical cores.
pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(config_err(WORKERS_ENV, format!("expected a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Synthetic {
            classes,
            dim,
            n,
            separation,
        } => make_synthetic(*classes, *dim, *n, *separation, rng::derive(seed, TAG_DATA)),
        DatasetSource::Csv { path, header } => load_csv(path, *header),
    }
}

pub fn make_plan(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<PartitionPlan> {
    cfg.partition.validate(ds.classes)?;
    partition(ds, &cfg.partition, cfg.m, cfg.split, rng::derive(seed, TAG_PARTITION))
}

fn party_id(i: usize) -> String {
    format!("party-{i:03}")
}

/// Train every party's local model on a pool of `workers` threads.
/// Output order follows party index regardless of scheduling.
pub fn train_parties(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    plan: &PartitionPlan,
    seed: u64,
    workers: usize,
) -> Result<Vec<ModelRecord>> {
    let base = rng::derive(rng::derive(seed, TAG_TRAIN), cfg.train.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Resource(format!("worker pool: {e}")))?;
    let partition_tag = cfg.partition.strategy.tag().to_string();
    pool.install(|| {
        plan.parties
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let local = TrainConfig {
                    seed: rng::derive(base, i as u64),
                    ..cfg.train.clone()
                };
                let trained = train_local(&ds.subset(&p.train), &ds.subset(&p.val), &local)?;
                Ok(ModelRecord {
                    id: party_id(i),
                    params: trained.model,
                    n_train: p.train.len(),
                    score: trained.score,
                    party: i,
                    partition: partition_tag.clone(),
                })
            })
            .collect()
    })
}

pub fn train_oracle_model(cfg: &ExperimentConfig, ds: &Dataset, plan: &PartitionPlan, seed: u64) -> Result<ModelParams> {
    let oc = TrainConfig {
        seed: rng::derive(rng::derive(seed, TAG_ORACLE), cfg.train.seed),
        ..cfg.train.clone()
    };
    Ok(train_oracle(plan, ds, &oc)?.model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamEntry {
    pub method: Method,
    pub team: EnsembleTeam,
}

pub fn selection_config(cfg: &ExperimentConfig, seed: u64) -> SelectionConfig {
    SelectionConfig {
        seed: rng::derive(rng::derive(seed, TAG_SELECT), cfg.selection.seed),
        ..cfg.selection.clone()
    }
}

/// Team of the single best model on the global test set (ties: lower id).
pub fn top1_team(records: &[ModelRecord], testset: &Dataset) -> Result<EnsembleTeam> {
    let mut best: Option<(f64, usize)> = None;
    for (i, r) in records.iter().enumerate() {
        let acc = accuracy(&r.params, testset)?;
        if best.is_none_or(|(b, _)| acc > b) {
            best = Some((acc, i));
        }
    }
    let (_, i) = best.ok_or_else(|| Error::invalid("no records"))?;
    Ok(EnsembleTeam {
        members: vec![records[i].id.clone()],
        weights: vec![records[i].n_train],
        provenance: Provenance::Cv,
    })
}

/// Teams for every team-producing method in `cfg.methods`, in config order.
pub fn select_teams(
    cfg: &ExperimentConfig,
    records: &[ModelRecord],
    plan: &PartitionPlan,
    ds: &Dataset,
    seed: u64,
) -> Result<Vec<TeamEntry>> {
    let scfg = selection_config(cfg, seed);
    let dists = plan.label_distributions(ds);
    let mut out = Vec::new();
    for &method in cfg.methods.iter().filter(|m| m.is_team()) {
        let team = match method.provenance() {
            Some(p) => baseline_select(records, p, scfg.k, &scfg, Some(&dists))?,
            None => top1_team(records, &ds.subset(&plan.global_test()))?,
        };
        out.push(TeamEntry { method, team });
    }
    Ok(out)
}

pub fn testset(ds: &Dataset, plan: &PartitionPlan) -> Dataset {
    ds.subset(&plan.global_test())
}

/// One report row per configured method.
pub fn evaluate_run(
    cfg: &ExperimentConfig,
    seed: u64,
    records: &[ModelRecord],
    teams: &[TeamEntry],
    oracle: Option<&ModelParams>,
    test: &Dataset,
    inspection: Option<&InspectionResult>,
) -> Result<Vec<ReportRow>> {
    let base = ReportRow {
        dataset: cfg.dataset_name(),
        partition: cfg.partition.strategy.tag().to_string(),
        m: cfg.m,
        k: cfg.selection.k,
        method: String::new(),
        seed,
        accuracy: 0.0,
        mean_bd: None,
        mean_ck: None,
        rank: None,
        total_teams: None,
    };
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let mut row = ReportRow {
            method: method.tag().to_string(),
            ..base.clone()
        };
        if method.is_team() {
            let entry = teams
                .iter()
                .find(|t| t.method == method)
                .ok_or_else(|| Error::NotFound(format!("team for method `{}`", method.tag())))?;
            row.accuracy = evaluate_team(&entry.team, records, test)?;
            if entry.team.len() >= 2 {
                let d = team_diversity(&entry.team, records, test)?;
                row.mean_bd = Some(d.mean_bd);
                row.mean_ck = Some(d.mean_ck);
            }
            if let Some(insp) = inspection {
                row.rank = Some(insp.rank_of_team(&entry.team)?);
                row.total_teams = Some(insp.total);
            }
        } else {
            row.accuracy = match method {
                Method::FedAvg => accuracy(&fuse(records, FusionMethod::FedAvg)?, test)?,
                Method::MeanAvg => accuracy(&fuse(records, FusionMethod::MeanAvg)?, test)?,
                _ => {
                    let model = oracle.ok_or_else(|| Error::NotFound("oracle model".into()))?;
                    let preds = predict(model, &test.x)?;
                    crate::training::accuracy_of(&preds, &test.y)
                }
            };
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Partition,
    Train,
    Select,
    Evaluate,
    Inspect,
    Sweep,
    Report,
    All,
}

impl Stage {
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "synth" => Stage::Synth,
            "partition" => Stage::Partition,
            "train" => Stage::Train,
            "select" => Stage::Select,
            "evaluate" => Stage::Evaluate,
            "inspect" => Stage::Inspect,
            "sweep" => Stage::Sweep,
            "report" => Stage::Report,
            "all" => Stage::All,
            _ => return None,
        })
    }
}

const DATASET_FILE: &str = "dataset.csv";
const PLAN_FILE: &str = "plan.json";
const MARKET_DIR: &str = "market";
const ORACLE_FILE: &str = "oracle.json";
const TEAMS_FILE: &str = "teams.json";
const EVAL_FILE: &str = "evaluation.json";
const INSPECT_FILE: &str = "inspection.json";
const SWEEP_FILE: &str = "sweep.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value).expect("artifact serializes");
    std::fs::write(path, body).map_err(|e| Error::storage(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::storage(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
}

fn read_dataset(dir: &Path) -> Result<Dataset> {
    load_csv(&dir.join(DATASET_FILE), false)
}

fn stage_synth(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::storage(dir, e))?;
    load_dataset(cfg, seed)?.write_csv(&dir.join(DATASET_FILE))
}

fn stage_partition(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let ds = read_dataset(dir)?;
    write_json(&dir.join(PLAN_FILE), &make_plan(cfg, &ds, seed)?)
}

fn stage_train(cfg: &ExperimentConfig, seed: u64, dir: &Path, workers: usize) -> Result<()> {
    let ds = read_dataset(dir)?;
    let plan: PartitionPlan = read_json(&dir.join(PLAN_FILE))?;
    plan.validate_against(&ds)?;
    let market = dir.join(MARKET_DIR);
    if market.exists() {
        std::fs::remove_dir_all(&market).map_err(|e| Error::storage(&market, e))?;
    }
    let store = MarketStore::open(&market)?;
    for rec in train_parties(cfg, &ds, &plan, seed, workers)? {
        store.save_record(&rec)?;
    }
    if cfg.methods.contains(&Method::Oracle) {
        write_json(&dir.join(ORACLE_FILE), &train_oracle_model(cfg, &ds, &plan, seed)?)?;
    }
    Ok(())
}

fn load_market(dir: &Path) -> Result<Vec<ModelRecord>> {
    MarketStore::open(dir.join(MARKET_DIR))?.load_records(None)
}

fn stage_select(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let ds = read_dataset(dir)?;
    let plan: PartitionPlan = read_json(&dir.join(PLAN_FILE))?;
    let records = load_market(dir)?;
    write_json(&dir.join(TEAMS_FILE), &select_teams(cfg, &records, &plan, &ds, seed)?)
}

fn stage_inspect(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let ds = read_dataset(dir)?;
    let plan: PartitionPlan = read_json(&dir.join(PLAN_FILE))?;
    let records = load_market(dir)?;
    write_json(&dir.join(INSPECT_FILE), &complete_inspection(&records, &testset(&ds, &plan), cfg.m_cap)?)
}

fn stage_evaluate(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let ds = read_dataset(dir)?;
    let plan: PartitionPlan = read_json(&dir.join(PLAN_FILE))?;
    let records = load_market(dir)?;
    let teams: Vec<TeamEntry> = read_json(&dir.join(TEAMS_FILE))?;
    let oracle: Option<ModelParams> = if cfg.methods.contains(&Method::Oracle) {
        Some(read_json(&dir.join(ORACLE_FILE))?)
    } else {
        None
    };
    let inspect_path = dir.join(INSPECT_FILE);
    let inspection = if inspect_path.exists() {
        let mut insp: InspectionResult = read_json(&inspect_path)?;
        insp.rebuild_index();
        Some(insp)
    } else {
        None
    };
    let rows = evaluate_run(cfg, seed, &records, &teams, oracle.as_ref(), &testset(&ds, &plan), inspection.as_ref())?;
    write_json(&dir.join(EVAL_FILE), &rows)
}

fn stage_sweep(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let ds = read_dataset(dir)?;
    let plan: PartitionPlan = read_json(&dir.join(PLAN_FILE))?;
    let records = load_market(dir)?;
    let ks: Vec<usize> = if cfg.sweep_ks.is_empty() {
        (1..=records.len()).collect()
    } else {
        cfg.sweep_ks.clone()
    };
    let points = k_sweep(&records, &testset(&ds, &plan), &selection_config(cfg, seed), &ks);
    write_json(&dir.join(SWEEP_FILE), &SweepSeries { seed, points })
}

/// Aggregate per-seed evaluations (and sweeps, when present) into
/// `report.csv`, `report.json` and `report_sweep.csv` under `out_dir`.
pub fn stage_report(cfg: &ExperimentConfig) -> Result<Report> {
    let mut report = Report::default();
    for &seed in &cfg.seeds {
        let dir = cfg.seed_dir(seed);
        let rows: Vec<ReportRow> = read_json(&dir.join(EVAL_FILE))?;
        report.rows.extend(rows);
        let sweep = dir.join(SWEEP_FILE);
        if sweep.exists() {
            report.sweeps.push(read_json(&sweep)?);
        }
    }
    report.summarize();
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::storage(&cfg.out_dir, e))?;
    emit_report(&report, &cfg.out_dir.join("report.csv"), ReportFormat::Csv)?;
    emit_report(&report, &cfg.out_dir.join("report.json"), ReportFormat::Json)?;
    Ok(report)
}

/// Run one stage for every configured seed. `all` chains the stages,
/// skipping complete inspection when `m` exceeds `m_cap` and the sweep
/// when no K values are configured.
pub fn run_stage(stage: Stage, cfg: &ExperimentConfig) -> Result<()> {
    let workers = worker_count()?;
    if stage == Stage::Report {
        return stage_report(cfg).map(|_| ());
    }
    for &seed in &cfg.seeds {
        let dir = cfg.seed_dir(seed);
        match stage {
            Stage::Synth => stage_synth(cfg, seed, &dir)?,
            Stage::Partition => stage_partition(cfg, seed, &dir)?,
            Stage::Train => stage_train(cfg, seed, &dir, workers)?,
            Stage::Select => stage_select(cfg, seed, &dir)?,
            Stage::Evaluate => stage_evaluate(cfg, seed, &dir)?,
            Stage::Inspect => stage_inspect(cfg, &dir)?,
            Stage::Sweep => stage_sweep(cfg, seed, &dir)?,
            Stage::All => {
                stage_synth(cfg, seed, &dir)?;
                stage_partition(cfg, seed, &dir)?;
                stage_train(cfg, seed, &dir, workers)?;
                stage_select(cfg, seed, &dir)?;
                let inspect_path = dir.join(INSPECT_FILE);
                if cfg.m <= cfg.m_cap {
                    stage_inspect(cfg, &dir)?;
                } else if inspect_path.exists() {
                    std::fs::remove_file(&inspect_path).map_err(|e| Error::storage(&inspect_path, e))?;
                }
                stage_evaluate(cfg, seed, &dir)?;
                if !cfg.sweep_ks.is_empty() {
                    stage_sweep(cfg, seed, &dir)?;
                }
            }
            Stage::Report => unreachable!(),
        }
    }
    if stage == Stage::All {
        stage_report(cfg)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_json(out: &Path) -> String {
        format!(
            r#"{{
  "schema_version": 1,
  "dataset": {{"kind": "synthetic", "classes": 3, "dim": 4, "n": 300, "separation": 4.0}},
  "partition": {{"strategy": "noniid_lds", "beta": 0.5}},
  "m": 4,
  "train": {{"epochs": 5}},
  "selection": {{"k": 2}},
  "seeds": [0, 1],
  "out_dir": {:?},
  "sweep_ks": [1, 2, 3]
}}"#,
            out.display().to_string()
        )
    }

    #[test]
    fn config_defaults_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_json(&config_json(dir.path())).unwrap();
        assert_eq!(cfg.methods, Method::ALL.to_vec());
        assert_eq!(cfg.m_cap, DEFAULT_M_CAP);
        assert_eq!(cfg.dataset_name(), "synthetic");
        assert_eq!(cfg.seed_dir(3), dir.path().join("seed-3"));
    }

    #[test]
    fn config_errors_carry_field_paths() {
        let bad = r#"{"schema_version": 1, "dataset": {"kind": "synthetic", "classes": 3, "dim": 2, "n": 30},
            "partition": {"strategy": "homo", "beta": "x"}, "m": 3, "seeds": [0]}"#;
        match ExperimentConfig::from_json(bad) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "partition.beta"),
            other => panic!("unexpected {other:?}"),
        }
        let unknown = r#"{"schema_version": 1, "dataset": {"kind": "synthetic", "classes": 3, "dim": 2, "n": 30},
            "partition": {"strategy": "homo"}, "m": 3, "seeds": [0], "selection": {"kk": 3}}"#;
        match ExperimentConfig::from_json(unknown) {
            Err(Error::Config { path, .. }) => assert!(path.starts_with("selection"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
        let no_seeds = r#"{"schema_version": 1, "dataset": {"kind": "synthetic", "classes": 3, "dim": 2, "n": 30},
            "partition": {"strategy": "homo"}, "m": 3, "seeds": []}"#;
        assert!(matches!(ExperimentConfig::from_json(no_seeds), Err(Error::Config { path, .. }) if path == "seeds"));
        let version = r#"{"schema_version": 9, "dataset": {"kind": "synthetic", "classes": 3, "dim": 2, "n": 30},
            "partition": {"strategy": "homo"}, "m": 3, "seeds": [1]}"#;
        assert!(matches!(ExperimentConfig::from_json(version), Err(Error::Config { path, .. }) if path == "schema_version"));
    }

    #[test]
    fn staged_run_matches_all() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ca = ExperimentConfig::from_json(&config_json(a.path())).unwrap();
        let cb = ExperimentConfig::from_json(&config_json(b.path())).unwrap();
        run_stage(Stage::All, &ca).unwrap();
        for s in [
            Stage::Synth,
            Stage::Partition,
            Stage::Train,
            Stage::Select,
            Stage::Inspect,
            Stage::Evaluate,
            Stage::Sweep,
            Stage::Report,
        ] {
            run_stage(s, &cb).unwrap();
        }
        for f in ["report.csv", "report.json", "report_sweep.csv"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let report: Report = serde_json::from_str(&std::fs::read_to_string(a.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(report.rows.len(), 2 * Method::ALL.len());
        assert_eq!(report.sweeps.len(), 2);
        assert!(report.rows.iter().filter(|r| r.method == "dedes").all(|r| r.total_teams == Some(15)));
    }

    #[test]
    fn parallel_training_is_order_stable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_json(&config_json(dir.path())).unwrap();
        let ds = load_dataset(&cfg, 0).unwrap();
        let plan = make_plan(&cfg, &ds, 0).unwrap();
        assert_eq!(train_parties(&cfg, &ds, &plan, 0, 1).unwrap(), train_parties(&cfg, &ds, &plan, 0, 3).unwrap());
    }
}
