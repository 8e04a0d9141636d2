//! Ensemble team selection.
//!
//! The data-free pipeline runs in four stages over the uploaded records:
//!
//! 1. drop models whose score falls below a box-plot style lower fence,
//! 2. represent each survivor by its (last) layer parameters, min-max
//!    scaled and optionally reduced with PCA / kernel PCA,
//! 3. cluster the representations into `K` groups,
//! 4. keep one representative per cluster: the largest training set when
//!    the cluster's sizes are unbalanced (median / max < tau), otherwise the
//!    highest score.
//!
//! Baselines (top score, top size, random, all, label-distribution
//! clustering) share the same [`EnsembleTeam`] output.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::clustering::{cluster, ClusterAssignment, ClusterMethod};
use crate::data::Strategy;
use crate::market::ModelRecord;
use crate::numerics::{default_kpca_gamma, fit_apply_scaler, kernel_pca, pca, Matrix, ScalerKind};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerStrategy {
    Last,
    First,
    Middle,
    Later,
    RandomFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrMethod {
    None,
    Pca,
    Kpca,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierParams {
    pub p_low: f64,
    pub p_high: f64,
    pub scale: f64,
}

impl Default for OutlierParams {
    fn default() -> Self {
        Self {
            p_low: 0.25,
            p_high: 0.75,
            scale: 1.5,
        }
    }
}

fn default_tau() -> f64 {
    0.3
}
fn default_k() -> usize {
    5
}
fn default_layers() -> LayerStrategy {
    LayerStrategy::Last
}
fn default_dr() -> DrMethod {
    DrMethod::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub outlier: OutlierParams,
    #[serde(default = "default_layers")]
    pub layers: LayerStrategy,
    #[serde(default = "default_dr")]
    pub dr: DrMethod,
    /// Target dimension for `pca` / `kpca`; `None` means
    /// `min(flattened length, surviving records)`.
    #[serde(default)]
    pub dr_dim: Option<usize>,
    /// `None` picks spectral for homo / iid_dq records, k-means otherwise.
    #[serde(default)]
    pub clustering: Option<ClusterMethod>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            tau: default_tau(),
            outlier: OutlierParams::default(),
            layers: default_layers(),
            dr: default_dr(),
            dr_dim: None,
            clustering: None,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        let o = &self.outlier;
        if !(0.0 <= o.p_low && o.p_low < o.p_high && o.p_high <= 1.0) {
            return Err(Error::invalid("outlier quantiles need 0 <= p_low < p_high <= 1"));
        }
        if !(o.scale >= 0.0 && o.scale.is_finite()) {
            return Err(Error::invalid("outlier scale must be non-negative"));
        }
        if let LayerStrategy::RandomFraction(f) = self.layers {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid("random layer fraction must be in (0, 1]"));
            }
        }
        if self.dr_dim == Some(0) {
            return Err(Error::invalid("dr_dim must be positive"));
        }
        Ok(())
    }

    /// Clustering back-end for records carrying `partition`.
    pub fn clustering_for(&self, partition: &str) -> ClusterMethod {
        self.clustering.unwrap_or(match Strategy::from_tag(partition) {
            Some(Strategy::Homo | Strategy::IidDq) => ClusterMethod::Spectral,
            _ => ClusterMethod::KMeans,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Dedes,
    Cv,
    Ds,
    Rs,
    As,
    Lds,
}

impl Provenance {
    pub fn tag(&self) -> &'static str {
        match self {
            Provenance::Dedes => "dedes",
            Provenance::Cv => "cv",
            Provenance::Ds => "ds",
            Provenance::Rs => "rs",
            Provenance::As => "as",
            Provenance::Lds => "lds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleTeam {
    pub members: Vec<String>,
    /// Training-set size of each member, the voting weight.
    pub weights: Vec<usize>,
    pub provenance: Provenance,
}

impl EnsembleTeam {
    fn from_indices(records: &[ModelRecord], idx: &[usize], provenance: Provenance) -> Self {
        Self {
            members: idx.iter().map(|&i| records[i].id.clone()).collect(),
            weights: idx.iter().map(|&i| records[i].n_train).collect(),
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationMatrix {
    pub matrix: Matrix,
    pub ids: Vec<String>,
}

/// Lower fence on the ascending scores: with `q(p) = sorted[floor(p (m-1))]`,
/// the threshold is `q(p_low) - scale * (q(p_high) - q(p_low))`.
pub fn outlier_threshold(scores: &[f64], params: &OutlierParams) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = sorted.len() - 1;
    let at = |p: f64| sorted[((p * last as f64).floor() as usize).min(last)];
    let (low, high) = (at(params.p_low), at(params.p_high));
    low - params.scale * (high - low)
}

/// Ids of records scoring strictly below the outlier threshold, in record
/// order.
pub fn outlier_filter(records: &[ModelRecord], cfg: &SelectionConfig) -> Vec<String> {
    if records.is_empty() {
        return Vec::new();
    }
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let threshold = outlier_threshold(&scores, &cfg.outlier);
    records
        .iter()
        .filter(|r| r.score < threshold)
        .map(|r| r.id.clone())
        .collect()
}

fn selected_groups(groups: &[&str], strategy: LayerStrategy, seed: u64) -> Vec<usize> {
    let l = groups.len();
    match strategy {
        LayerStrategy::Last => vec![l - 1],
        LayerStrategy::First => vec![0],
        LayerStrategy::Middle => vec![(l - 1) / 2],
        LayerStrategy::Later => (l / 2..l).collect(),
        LayerStrategy::RandomFraction(f) => {
            let take = ((f * l as f64).ceil() as usize).clamp(1, l);
            let mut all: Vec<usize> = (0..l).collect();
            all.shuffle(&mut rng::seeded(rng::derive(seed, 0x4C41_5945)));
            let mut picked = all[..take].to_vec();
            picked.sort_unstable();
            picked
        }
    }
}

/// Flattened parameters of the selected layer groups, one row per record.
pub fn raw_representation(records: &[ModelRecord], cfg: &SelectionConfig) -> Result<Matrix> {
    let first = &records[0].params;
    let layout: Vec<(&str, &[usize])> = first.layers.iter().map(|l| (l.name.as_str(), l.shape.as_slice())).collect();
    for r in records {
        let other: Vec<(&str, &[usize])> = r.params.layers.iter().map(|l| (l.name.as_str(), l.shape.as_slice())).collect();
        if other != layout {
            return Err(Error::invalid(format!(
                "record `{}` has a layer layout different from `{}`",
                r.id, records[0].id
            )));
        }
    }
    let groups = first.groups();
    let picked: Vec<&str> = selected_groups(&groups, cfg.layers, cfg.seed)
        .into_iter()
        .map(|g| groups[g])
        .collect();
    let rows: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            r.params
                .layers
                .iter()
                .filter(|l| picked.contains(&l.group()))
                .flat_map(|l| l.values.iter().copied())
                .collect()
        })
        .collect();
    Matrix::from_rows(&rows)
}

fn reduce(x: Matrix, cfg: &SelectionConfig) -> Result<Matrix> {
    let auto = x.cols().min(x.rows());
    let dim = cfg.dr_dim.unwrap_or(auto).min(auto);
    match cfg.dr {
        DrMethod::None => Ok(x),
        DrMethod::Pca => pca(&x, dim),
        DrMethod::Kpca => {
            let gamma = default_kpca_gamma(&x);
            kernel_pca(&x, dim, gamma)
        }
    }
}

/// Representation rows for non-outlier records.
pub fn represent(records: &[ModelRecord], cfg: &SelectionConfig) -> Result<RepresentationMatrix> {
    if records.len() < 2 {
        return Err(Error::invalid("representation needs at least two records"));
    }
    let raw = raw_representation(records, cfg)?;
    let (scaled, _) = fit_apply_scaler(&raw, ScalerKind::MinMax)?;
    Ok(RepresentationMatrix {
        matrix: reduce(scaled, cfg)?,
        ids: records.iter().map(|r| r.id.clone()).collect(),
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Index (into `members`) of the cluster representative.
pub fn pick_representative(records: &[ModelRecord], members: &[usize], tau: f64) -> usize {
    let mut sizes: Vec<f64> = members.iter().map(|&i| records[i].n_train as f64).collect();
    let max = sizes.iter().copied().fold(0.0, f64::max);
    let ratio = median(&mut sizes) / max;
    let by_size = ratio < tau;
    let better = |a: &ModelRecord, b: &ModelRecord| -> bool {
        let primary = if by_size {
            a.n_train
                .cmp(&b.n_train)
                .then(a.score.total_cmp(&b.score))
        } else {
            a.score
                .total_cmp(&b.score)
                .then(a.n_train.cmp(&b.n_train))
        };
        primary.then(b.id.cmp(&a.id)).is_gt()
    };
    let mut best = 0;
    for pos in 1..members.len() {
        if better(&records[members[pos]], &records[members[best]]) {
            best = pos;
        }
    }
    best
}

/// Full record of one selection run, for inspection tooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub team: EnsembleTeam,
    pub outliers: Vec<String>,
    pub representation: Option<RepresentationMatrix>,
    pub assignment: Option<ClusterAssignment>,
    pub clustering: Option<ClusterMethod>,
}

impl SelectionTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

fn survivors<'a>(records: &'a [ModelRecord], outliers: &[String]) -> Vec<&'a ModelRecord> {
    let out: HashSet<&str> = outliers.iter().map(String::as_str).collect();
    records.iter().filter(|r| !out.contains(r.id.as_str())).collect()
}

fn check_k(k: usize, alive: usize, total: usize) -> Result<()> {
    if k == 0 || k > alive {
        return Err(Error::invalid(format!(
            "K = {k} but only {alive} of {total} records survive outlier filtering (|O| = {})",
            total - alive
        )));
    }
    Ok(())
}

fn cluster_and_pick(
    kept: &[ModelRecord],
    features: &Matrix,
    k: usize,
    method: ClusterMethod,
    cfg: &SelectionConfig,
    provenance: Provenance,
) -> Result<(EnsembleTeam, ClusterAssignment)> {
    let assignment = cluster(features, k, method, cfg.seed)?;
    let chosen: Vec<usize> = (0..k)
        .map(|c| {
            let members = assignment.members(c);
            members[pick_representative(kept, &members, cfg.tau)]
        })
        .collect();
    Ok((EnsembleTeam::from_indices(kept, &chosen, provenance), assignment))
}

/// Run the selection pipeline and keep every intermediate.
pub fn dedes_trace(records: &[ModelRecord], k: usize, cfg: &SelectionConfig) -> Result<SelectionTrace> {
    cfg.validate()?;
    let outliers = outlier_filter(records, cfg);
    let kept: Vec<ModelRecord> = survivors(records, &outliers).into_iter().cloned().collect();
    check_k(k, kept.len(), records.len())?;
    if kept.len() == 1 {
        return Ok(SelectionTrace {
            team: EnsembleTeam::from_indices(&kept, &[0], Provenance::Dedes),
            outliers,
            representation: None,
            assignment: None,
            clustering: None,
        });
    }
    let rep = represent(&kept, cfg)?;
    let method = cfg.clustering_for(&kept[0].partition);
    let (team, assignment) = cluster_and_pick(&kept, &rep.matrix, k, method, cfg, Provenance::Dedes)?;
    Ok(SelectionTrace {
        team,
        outliers,
        representation: Some(rep),
        assignment: Some(assignment),
        clustering: Some(method),
    })
}

pub fn dedes_select(records: &[ModelRecord], k: usize, cfg: &SelectionConfig) -> Result<EnsembleTeam> {
    dedes_trace(records, k, cfg).map(|t| t.team)
}

fn top_k_by(records: &[ModelRecord], k: usize, key: impl Fn(&ModelRecord, &ModelRecord) -> std::cmp::Ordering) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| key(&records[b], &records[a]).then(records[a].id.cmp(&records[b].id)));
    idx.truncate(k);
    idx
}

/// Label-distribution variant of the pipeline: gaussian-normalised class
/// counts replace the parameter representation.
pub fn lds_trace(
    records: &[ModelRecord],
    k: usize,
    cfg: &SelectionConfig,
    label_dists: &[Vec<usize>],
) -> Result<SelectionTrace> {
    cfg.validate()?;
    if label_dists.len() != records.len() {
        return Err(Error::invalid(format!(
            "{} label distributions for {} records",
            label_dists.len(),
            records.len()
        )));
    }
    let outliers = outlier_filter(records, cfg);
    let out: HashSet<&str> = outliers.iter().map(String::as_str).collect();
    let keep_idx: Vec<usize> = (0..records.len()).filter(|&i| !out.contains(records[i].id.as_str())).collect();
    check_k(k, keep_idx.len(), records.len())?;
    let kept: Vec<ModelRecord> = keep_idx.iter().map(|&i| records[i].clone()).collect();
    let rows: Vec<Vec<f64>> = keep_idx
        .iter()
        .map(|&i| label_dists[i].iter().map(|&c| c as f64).collect())
        .collect();
    let raw = Matrix::from_rows(&rows)?;
    let (features, _) = fit_apply_scaler(&raw, ScalerKind::Gaussian)?;
    let method = cfg.clustering_for(&kept[0].partition);
    let (team, assignment) = cluster_and_pick(&kept, &features, k, method, cfg, Provenance::Lds)?;
    Ok(SelectionTrace {
        team,
        outliers,
        representation: Some(RepresentationMatrix {
            matrix: features,
            ids: kept.iter().map(|r| r.id.clone()).collect(),
        }),
        assignment: Some(assignment),
        clustering: Some(method),
    })
}

pub fn baseline_select(
    records: &[ModelRecord],
    method: Provenance,
    k: usize,
    cfg: &SelectionConfig,
    label_dists: Option<&[Vec<usize>]>,
) -> Result<EnsembleTeam> {
    let m = records.len();
    if method != Provenance::As && (k == 0 || k > m) {
        return Err(Error::invalid(format!("K = {k} outside 1..={m}")));
    }
    let idx = match method {
        Provenance::Cv => top_k_by(records, k, |a, b| a.score.total_cmp(&b.score)),
        Provenance::Ds => top_k_by(records, k, |a, b| a.n_train.cmp(&b.n_train)),
        Provenance::Rs => {
            let mut all: Vec<usize> = (0..m).collect();
            all.shuffle(&mut rng::seeded(rng::derive(cfg.seed, 0x5253)));
            let mut picked = all[..k].to_vec();
            picked.sort_unstable();
            picked
        }
        Provenance::As => (0..m).collect(),
        Provenance::Lds => {
            let dists = label_dists.ok_or_else(|| Error::invalid("lds needs per-party label distributions"))?;
            return lds_trace(records, k, cfg, dists).map(|t| t.team);
        }
        Provenance::Dedes => return dedes_select(records, k, cfg),
    };
    Ok(EnsembleTeam::from_indices(records, &idx, method))
}
