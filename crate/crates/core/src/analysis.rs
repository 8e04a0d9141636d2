//! Diversity metrics (binary disagreement, Cohen's kappa), complete
//! inspection of every team, K sweeps, and CSV / JSON reports.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::ensemble::{evaluate_team, vote_labels};
use crate::market::ModelRecord;
use crate::selection::{dedes_select, EnsembleTeam, SelectionConfig};
use crate::training::{accuracy_of, predict};
use crate::{Error, Result};

/// Fraction of positions where the two prediction sequences differ.
pub fn binary_disagreement(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "disagreement needs equal non-empty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let differ = a.iter().zip(b).filter(|(x, y)| x != y).count();
    Ok(differ as f64 / a.len() as f64)
}

/// Chance-corrected agreement `(p_o - p_e) / (1 - p_e)`; 1 when `p_e = 1`.
pub fn cohens_kappa(a: &[usize], b: &[usize], classes: usize) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "kappa needs equal non-empty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if let Some(bad) = a.iter().chain(b).find(|&&l| l >= classes) {
        return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
    }
    let n = a.len() as f64;
    let mut ma = vec![0usize; classes];
    let mut mb = vec![0usize; classes];
    let mut agree = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        ma[x] += 1;
        mb[y] += 1;
        if x == y {
            agree += 1;
        }
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = ma.iter().zip(&mb).map(|(&x, &y)| (x as f64 / n) * (y as f64 / n)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

fn member_predictions(team: &EnsembleTeam, records: &[ModelRecord], testset: &Dataset) -> Result<Vec<Vec<usize>>> {
    let by_id: HashMap<&str, &ModelRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    team.members
        .iter()
        .map(|id| {
            let rec = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::NotFound(format!("team member `{id}`")))?;
            predict(&rec.params, &testset.x)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeamDiversity {
    pub mean_bd: f64,
    pub mean_ck: f64,
    pub pairs: usize,
}

/// Mean binary disagreement and Cohen's kappa over all unordered member
/// pairs, on test-set predictions.
pub fn team_diversity(team: &EnsembleTeam, records: &[ModelRecord], testset: &Dataset) -> Result<TeamDiversity> {
    if team.len() < 2 {
        return Err(Error::invalid("diversity needs at least two team members"));
    }
    let preds = member_predictions(team, records, testset)?;
    let mut bd = 0.0;
    let mut ck = 0.0;
    let mut pairs = 0;
    for i in 0..preds.len() {
        for j in (i + 1)..preds.len() {
            bd += binary_disagreement(&preds[i], &preds[j])?;
            ck += cohens_kappa(&preds[i], &preds[j], testset.classes)?;
            pairs += 1;
        }
    }
    Ok(TeamDiversity {
        mean_bd: bd / pairs as f64,
        mean_ck: ck / pairs as f64,
        pairs,
    })
}

pub const DEFAULT_M_CAP: usize = 16;

/// Accuracy of every non-empty team. Bit `i` of a mask selects `records[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionResult {
    /// Sorted by accuracy descending, then smaller mask.
    pub ranked: Vec<(u64, f64)>,
    pub total: usize,
    pub ids: Vec<String>,
    #[serde(skip)]
    rank_index: HashMap<u64, usize>,
}

impl InspectionResult {
    /// 1-based rank of the team given by `mask`.
    pub fn rank_of(&self, mask: u64) -> Option<usize> {
        self.rank_index.get(&mask).map(|r| r + 1)
    }

    pub fn accuracy_of(&self, mask: u64) -> Option<f64> {
        self.rank_index.get(&mask).map(|&r| self.ranked[r].1)
    }

    pub fn mask_of(&self, team: &EnsembleTeam) -> Result<u64> {
        let mut mask = 0u64;
        for id in &team.members {
            let pos = self
                .ids
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| Error::NotFound(format!("team member `{id}`")))?;
            mask |= 1 << pos;
        }
        Ok(mask)
    }

    pub fn rank_of_team(&self, team: &EnsembleTeam) -> Result<usize> {
        let mask = self.mask_of(team)?;
        self.rank_of(mask)
            .ok_or_else(|| Error::invalid("team mask not in the inspection"))
    }

    /// Rebuild the rank lookup after deserialization.
    pub fn rebuild_index(&mut self) {
        self.rank_index = self.ranked.iter().enumerate().map(|(i, (m, _))| (*m, i)).collect();
    }
}

/// Team of the records selected by `mask`, weighted by training-set size.
pub fn team_from_mask(records: &[ModelRecord], mask: u64) -> EnsembleTeam {
    let idx: Vec<usize> = (0..records.len()).filter(|i| mask >> i & 1 == 1).collect();
    EnsembleTeam {
        members: idx.iter().map(|&i| records[i].id.clone()).collect(),
        weights: idx.iter().map(|&i| records[i].n_train).collect(),
        provenance: crate::selection::Provenance::As,
    }
}

/// Evaluate weighted voting for all `2^m - 1` non-empty teams.
pub fn complete_inspection(records: &[ModelRecord], testset: &Dataset, m_cap: usize) -> Result<InspectionResult> {
    let m = records.len();
    if m > m_cap || m >= 64 {
        return Err(Error::Resource(format!(
            "complete inspection of {m} models needs {} team evaluations; cap is m <= {m_cap}",
            if m < 64 { (1u64 << m) - 1 } else { u64::MAX }
        )));
    }
    if m == 0 {
        return Err(Error::invalid("no records to inspect"));
    }
    if testset.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let preds: Vec<Vec<usize>> = records
        .iter()
        .map(|r| predict(&r.params, &testset.x))
        .collect::<Result<_>>()?;
    let classes = records[0].params.classes;
    let mut ranked = Vec::with_capacity((1usize << m) - 1);
    let mut labels = Vec::with_capacity(testset.len());
    for mask in 1u64..(1u64 << m) {
        let idx: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        let refs: Vec<&[usize]> = idx.iter().map(|&i| preds[i].as_slice()).collect();
        let weights: Vec<usize> = idx.iter().map(|&i| records[i].n_train).collect();
        vote_labels(&refs, &weights, classes, &mut labels);
        ranked.push((mask, accuracy_of(&labels, &testset.y)));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut result = InspectionResult {
        total: ranked.len(),
        ranked,
        ids: records.iter().map(|r| r.id.clone()).collect(),
        rank_index: HashMap::new(),
    };
    result.rebuild_index();
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

/// Run selection and evaluation for each K, recording failures per K.
pub fn k_sweep(records: &[ModelRecord], testset: &Dataset, cfg: &SelectionConfig, ks: &[usize]) -> Vec<SweepPoint> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    ks.into_iter()
        .map(|k| match dedes_select(records, k, cfg).and_then(|t| evaluate_team(&t, records, testset)) {
            Ok(acc) => SweepPoint {
                k,
                accuracy: Some(acc),
                error: None,
            },
            Err(e) => SweepPoint {
                k,
                accuracy: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// One (method, seed) line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub partition: String,
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub method: String,
    pub seed: u64,
    pub accuracy: f64,
    pub mean_bd: Option<f64>,
    pub mean_ck: Option<f64>,
    pub rank: Option<usize>,
    pub total_teams: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub seed: u64,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub summary: Vec<MethodSummary>,
    #[serde(default)]
    pub sweeps: Vec<SweepSeries>,
    /// Team-count convention used by `rank` / `total_teams`.
    #[serde(default)]
    pub rank_convention: String,
}

pub const RANK_CONVENTION: &str = "non-empty teams, total 2^m - 1";

impl Report {
    /// Mean and population standard deviation of accuracy per method, in
    /// first-appearance order.
    pub fn summarize(&mut self) {
        let mut order: Vec<String> = Vec::new();
        let mut acc: HashMap<String, Vec<f64>> = HashMap::new();
        for row in &self.rows {
            if !acc.contains_key(&row.method) {
                order.push(row.method.clone());
            }
            acc.entry(row.method.clone()).or_default().push(row.accuracy);
        }
        self.summary = order
            .into_iter()
            .map(|method| {
                let v = &acc[&method];
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
                MethodSummary {
                    method,
                    runs: v.len(),
                    mean_accuracy: mean,
                    std_accuracy: var.sqrt(),
                }
            })
            .collect();
        self.rank_convention = RANK_CONVENTION.to_string();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "dataset",
    "partition",
    "m",
    "K",
    "method",
    "seed",
    "accuracy",
    "mean_bd",
    "mean_ck",
    "rank",
    "total_teams",
];

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, |x| x.to_string())
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.partition,
            r.m,
            r.k,
            r.method,
            r.seed,
            r.accuracy,
            opt(&r.mean_bd),
            opt(&r.mean_ck),
            opt(&r.rank),
            opt(&r.total_teams)
        ));
    }
    out
}

/// `(K, accuracy)` lines for every sweep, ready for plotting.
pub fn sweep_csv(sweeps: &[SweepSeries]) -> String {
    let mut out = String::from("seed,K,accuracy\n");
    for s in sweeps {
        for p in &s.points {
            out.push_str(&format!("{},{},{}\n", s.seed, p.k, opt(&p.accuracy)));
        }
    }
    out
}

/// Write `report` to `path`. CSV output writes the row table at `path` and,
/// when sweeps are present, a `<stem>_sweep.csv` beside it.
pub fn emit_report(report: &Report, path: &Path, format: ReportFormat) -> Result<()> {
    let write = |p: &Path, body: String| std::fs::write(p, body).map_err(|e| Error::storage(p, e));
    match format {
        ReportFormat::Json => write(path, serde_json::to_string_pretty(report).expect("report serializes")),
        ReportFormat::Csv => {
            write(path, report_csv(&report.rows))?;
            if !report.sweeps.is_empty() {
                let stem = path.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
                write(&path.with_file_name(format!("{stem}_sweep.csv")), sweep_csv(&report.sweeps))?;
            }
            Ok(())
        }
    }
}
