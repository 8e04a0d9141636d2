//! Datasets, synthetic generation, CSV ingestion and party partitioning.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::{squared_distance, Matrix};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, classes: usize) -> Result<Self> {
        if y.len() != x.rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} rows",
                y.len(),
                x.rows()
            )));
        }
        if let Some(bad) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self { x, y, classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Materialised view over the given rows.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        counts
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for r in 0..self.len() {
            for v in self.x.row(r) {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{}\n", self.y[r]));
        }
        std::fs::write(path, out).map_err(|e| Error::storage(path, e))
    }
}

/// Isotropic unit-variance Gaussian blobs, one per class, with class means
/// at pairwise distance at least `separation`. Row `i` belongs to class
/// `i % classes`.
pub fn make_synthetic(classes: usize, dim: usize, n: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if dim == 0 {
        return Err(Error::invalid("feature dimension must be positive"));
    }
    if n < classes {
        return Err(Error::invalid(format!("n = {n} is smaller than the class count {classes}")));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid("separation must be positive"));
    }
    let mut g = rng::seeded(seed);
    let means = class_means(classes, dim, separation, &mut g);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut values = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &mu in &means[c] {
            values.push(mu + noise.sample(&mut g));
        }
        y.push(c);
    }
    Dataset::new(Matrix::new(n, dim, values)?, y, classes)
}

fn class_means(classes: usize, dim: usize, separation: f64, g: &mut rng::Rng) -> Vec<Vec<f64>> {
    if dim >= classes {
        // Scaled simplex corners: every pair exactly `separation` apart.
        let scale = separation / std::f64::consts::SQRT_2;
        return (0..classes)
            .map(|c| (0..dim).map(|j| if j == c { scale } else { 0.0 }).collect())
            .collect();
    }
    // Rejection sampling in a cube that grows whenever placement stalls.
    let mut side = separation * (classes as f64).powf(1.0 / dim as f64) * 2.0;
    loop {
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
        let mut attempts = 0;
        while means.len() < classes && attempts < 10_000 {
            attempts += 1;
            let cand: Vec<f64> = (0..dim).map(|_| g.random_range(-side / 2.0..side / 2.0)).collect();
            if means
                .iter()
                .all(|m| squared_distance(m, &cand) >= separation * separation)
            {
                means.push(cand);
            }
        }
        if means.len() == classes {
            return means;
        }
        side *= 1.5;
    }
}

/// Parse a CSV with numeric feature columns and an integral, non-negative
/// label in the last column.
pub fn load_csv(path: &Path, header: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
    parse_csv(&text, header)
}

pub fn parse_csv(text: &str, header: bool) -> Result<Dataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if header && i == 0 {
            continue;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: "need at least one feature column and a label".into(),
            });
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {w} columns, found {}", cells.len()),
                })
            }
            _ => {}
        }
        let (label_cell, feature_cells) = cells.split_last().expect("non-empty");
        for cell in feature_cells {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-numeric cell `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-finite cell `{cell}`"),
                });
            }
            features.push(v);
        }
        labels.push(parse_label(label_cell).map_err(|msg| Error::Parse { line: lineno, msg })?);
    }
    let Some(w) = width else {
        return Err(Error::Parse {
            line: 1,
            msg: "no data rows".into(),
        });
    };
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let x = Matrix::new(labels.len(), w - 1, features)?;
    Dataset::new(x, labels, classes)
}

fn parse_label(cell: &str) -> std::result::Result<usize, String> {
    if let Ok(v) = cell.parse::<i64>() {
        return usize::try_from(v).map_err(|_| format!("negative label `{cell}`"));
    }
    match cell.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v >= 0.0 && v.is_finite() => Ok(v as usize),
        Ok(v) if v < 0.0 => Err(format!("negative label `{cell}`")),
        _ => Err(format!("label `{cell}` is not a non-negative integer")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Homo,
    IidDq,
    NoniidLds,
    NoniidLk,
}

impl Strategy {
    pub fn tag(&self) -> &'static str {
        match self {
            Strategy::Homo => "homo",
            Strategy::IidDq => "iid_dq",
            Strategy::NoniidLds => "noniid_lds",
            Strategy::NoniidLk => "noniid_lk",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [Strategy::Homo, Strategy::IidDq, Strategy::NoniidLds, Strategy::NoniidLk]
            .into_iter()
            .find(|s| s.tag() == tag)
    }
}

fn default_beta() -> f64 {
    0.5
}
fn default_k_classes() -> usize {
    2
}
fn default_quantity_skew() -> f64 {
    1.5
}
fn default_min_party_size() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub strategy: Strategy,
    /// Dirichlet concentration (noniid_lds).
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Classes held per party (noniid_lk).
    #[serde(default = "default_k_classes")]
    pub k_classes: usize,
    /// Power-law exponent for party sizes (iid_dq).
    #[serde(default = "default_quantity_skew")]
    pub quantity_skew: f64,
    /// Smallest party under iid_dq, normally twice the training batch size.
    #[serde(default = "default_min_party_size")]
    pub min_party_size: usize,
}

impl PartitionSpec {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            beta: default_beta(),
            k_classes: default_k_classes(),
            quantity_skew: default_quantity_skew(),
            min_party_size: default_min_party_size(),
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.quantity_skew > 0.0 && self.quantity_skew.is_finite()) {
            return Err(Error::invalid("quantity_skew must be positive"));
        }
        if self.strategy == Strategy::NoniidLk && (self.k_classes == 0 || self.k_classes >= classes) {
            return Err(Error::invalid(format!(
                "k_classes must be in 1..{classes}, got {}",
                self.k_classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::invalid("split fractions must all be positive"));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split fractions must sum to 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartySplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl PartySplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub m: usize,
    pub spec: PartitionSpec,
    pub parties: Vec<PartySplit>,
}

impl PartitionPlan {
    fn union(&self, pick: impl Fn(&PartySplit) -> &Vec<usize>) -> Vec<usize> {
        self.parties.iter().flat_map(|p| pick(p).iter().copied()).collect()
    }

    /// Global test set: the union of every party's test split.
    pub fn global_test(&self) -> Vec<usize> {
        self.union(|p| &p.test)
    }

    pub fn union_train(&self) -> Vec<usize> {
        self.union(|p| &p.train)
    }

    pub fn union_val(&self) -> Vec<usize> {
        self.union(|p| &p.val)
    }

    /// Per-party class counts of the local training data.
    pub fn label_distributions(&self, ds: &Dataset) -> Vec<Vec<usize>> {
        self.parties.iter().map(|p| ds.class_counts(&p.train)).collect()
    }

    pub fn validate_against(&self, ds: &Dataset) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, p) in self.parties.iter().enumerate() {
            if p.train.is_empty() {
                return Err(Error::Partition(format!("party {i} has an empty training split")));
            }
            for &idx in p.train.iter().chain(&p.val).chain(&p.test) {
                if idx >= ds.len() {
                    return Err(Error::Partition(format!("party {i} references row {idx} beyond {}", ds.len())));
                }
                if !seen.insert(idx) {
                    return Err(Error::Partition(format!("row {idx} assigned twice")));
                }
            }
        }
        Ok(())
    }
}

const LDS_MIN_PARTY: usize = 10;
const LDS_MAX_DRAWS: usize = 1000;

/// Assign rows to `m` parties under `spec`, then split each party into
/// train / validation / test.
pub fn partition(ds: &Dataset, spec: &PartitionSpec, m: usize, split: SplitFractions, seed: u64) -> Result<PartitionPlan> {
    if m < 2 {
        return Err(Error::invalid("partitioning needs at least two parties"));
    }
    spec.validate(ds.classes)?;
    split.validate()?;
    let mut g = rng::seeded(rng::derive(seed, 0x5041_5254));
    let assigned = match spec.strategy {
        Strategy::Homo => {
            let sizes = equal_sizes(ds.len(), m);
            deal_stratified(ds, &sizes, &mut g)
        }
        Strategy::IidDq => {
            let sizes = power_law_sizes(ds.len(), m, spec, &mut g);
            deal_stratified(ds, &sizes, &mut g)
        }
        Strategy::NoniidLds => dirichlet_label_skew(ds, m, spec.beta, &mut g)?,
        Strategy::NoniidLk => {
            if m * spec.k_classes < ds.classes {
                return Err(Error::Partition(format!(
                    "{m} parties holding {} classes each cannot cover all {} classes; raise m or k_classes",
                    spec.k_classes, ds.classes
                )));
            }
            k_class_split(ds, m, spec.k_classes, &mut g)
        }
    };

    let mut parties = Vec::with_capacity(m);
    for (i, mut rows) in assigned.into_iter().enumerate() {
        let mut pg = rng::seeded(rng::derive(seed, 1000 + i as u64));
        rows.shuffle(&mut pg);
        let n = rows.len();
        let n_val = ((split.val * n as f64).round() as usize).max(1);
        let n_test = ((split.test * n as f64).round() as usize).max(1);
        if n_val + n_test >= n {
            return Err(Error::Partition(format!(
                "party {i} has {n} rows, leaving an empty training split; use a larger dataset or fewer parties"
            )));
        }
        let n_train = n - n_val - n_test;
        parties.push(PartySplit {
            train: rows[..n_train].to_vec(),
            val: rows[n_train..n_train + n_val].to_vec(),
            test: rows[n_train + n_val..].to_vec(),
        });
    }
    Ok(PartitionPlan {
        m,
        spec: spec.clone(),
        parties,
    })
}

/// Sizes differing by at most one; remainders go to the lowest parties.
fn equal_sizes(n: usize, m: usize) -> Vec<usize> {
    (0..m).map(|i| n / m + usize::from(i < n % m)).collect()
}

fn power_law_sizes(n: usize, m: usize, spec: &PartitionSpec, g: &mut rng::Rng) -> Vec<usize> {
    const TRUNCATE: f64 = 50.0;
    let floor = spec.min_party_size.min(n / m);
    let weights: Vec<f64> = (0..m)
        .map(|_| {
            let u: f64 = g.random();
            (1.0 - u).powf(-1.0 / spec.quantity_skew).min(TRUNCATE)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let spare = n - floor * m;
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| floor + (w / total * spare as f64).floor() as usize)
        .collect();
    let mut rest = n - sizes.iter().sum::<usize>();
    for s in sizes.iter_mut() {
        if rest == 0 {
            break;
        }
        *s += 1;
        rest -= 1;
    }
    sizes
}

/// Deal rows into consecutive chunks of the given sizes from an order in
/// which every prefix has (close to) the global class mix.
fn deal_stratified(ds: &Dataset, sizes: &[usize], g: &mut rng::Rng) -> Vec<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &l) in ds.y.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(ds.len());
    for (c, rows) in by_class.iter_mut().enumerate() {
        rows.shuffle(g);
        let nc = rows.len() as f64;
        for (j, &r) in rows.iter().enumerate() {
            keyed.push(((j as f64 + 0.5) / nc, c, r));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = keyed.into_iter().map(|(_, _, r)| r).collect();
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(order[start..start + s].to_vec());
        start += s;
    }
    out
}

/// Per-class Dirichlet allocation. Parties already holding `n / m` rows are
/// excluded from further classes in a draw, and draws repeat until every
/// party holds at least [`LDS_MIN_PARTY`] rows.
fn dirichlet_label_skew(ds: &Dataset, m: usize, beta: f64, g: &mut rng::Rng) -> Result<Vec<Vec<usize>>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &l) in ds.y.iter().enumerate() {
        by_class[l].push(i);
    }
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::invalid(format!("dirichlet: {e}")))?;
    let cap = ds.len() as f64 / m as f64;
    let required = LDS_MIN_PARTY.min(ds.len() / m);
    for _ in 0..LDS_MAX_DRAWS {
        let mut parties: Vec<Vec<usize>> = vec![Vec::new(); m];
        for rows in by_class.iter() {
            let mut rows = rows.clone();
            rows.shuffle(g);
            // Dirichlet(beta, ..., beta) as normalised Gamma(beta, 1) draws.
            let mut props: Vec<f64> = (0..m).map(|_| gamma.sample(g)).collect();
            for (p, party) in props.iter_mut().zip(&parties) {
                if party.len() as f64 >= cap {
                    *p = 0.0;
                }
            }
            let total: f64 = props.iter().sum();
            if total <= 0.0 {
                props = vec![1.0 / m as f64; m];
            } else {
                props.iter_mut().for_each(|p| *p /= total);
            }
            let mut acc = 0.0;
            let mut start = 0;
            for (i, p) in props.iter().enumerate() {
                acc += p;
                let end = if i + 1 == m {
                    rows.len()
                } else {
                    ((acc * rows.len() as f64) as usize).min(rows.len())
                };
                parties[i].extend_from_slice(&rows[start..end.max(start)]);
                start = end.max(start);
            }
        }
        if parties.iter().map(Vec::len).min().unwrap_or(0) >= required.max(1) {
            return Ok(parties);
        }
    }
    Err(Error::Partition(format!(
        "could not give every party {required} rows in {LDS_MAX_DRAWS} Dirichlet draws; use a larger dataset, fewer parties or a larger beta"
    )))
}

/// Party `i` holds classes `i*k, i*k+1, ..., i*k+k-1` (mod C); each class is
/// split evenly among its holders.
fn k_class_split(ds: &Dataset, m: usize, k: usize, g: &mut rng::Rng) -> Vec<Vec<usize>> {
    let c = ds.classes;
    let holders_of = |class: usize| -> Vec<usize> {
        (0..m)
            .filter(|&i| (0..k).any(|j| (i * k + j) % c == class))
            .collect()
    };
    let mut parties: Vec<Vec<usize>> = vec![Vec::new(); m];
    for class in 0..c {
        let holders = holders_of(class);
        if holders.is_empty() {
            continue;
        }
        let mut rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.y[i] == class).collect();
        rows.shuffle(g);
        let sizes = equal_sizes(rows.len(), holders.len());
        let mut start = 0;
        for (&h, s) in holders.iter().zip(sizes) {
            parties[h].extend_from_slice(&rows[start..start + s]);
            start += s;
        }
    }
    parties
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entropy(counts: &[usize]) -> f64 {
        let n: usize = counts.iter().sum();
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n as f64;
                -p * p.ln()
            })
            .sum()
    }

    #[test]
    fn synthetic_balanced_and_deterministic() {
        let a = make_synthetic(2, 3, 100, 4.0, 9).unwrap();
        assert_eq!(a.class_counts(&(0..100).collect::<Vec<_>>()), vec![50, 50]);
        let b = make_synthetic(2, 3, 100, 4.0, 9).unwrap();
        assert_eq!(a, b);
        assert!(make_synthetic(3, 2, 2, 1.0, 0).is_err());
    }

    #[test]
    fn synthetic_means_respect_separation_in_low_dim() {
        let mut g = rng::seeded(3);
        let means = class_means(6, 2, 4.0, &mut g);
        for i in 0..6 {
            for j in (i + 1)..6 {
                assert!(squared_distance(&means[i], &means[j]).sqrt() >= 4.0);
            }
        }
    }

    #[test]
    fn csv_parse_basic() {
        let ds = parse_csv("1,2,0\n3,4,1\n5,6,0\n", false).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.classes), (3, 2, 2));
        assert_eq!(ds.y, vec![0, 1, 0]);
    }

    #[test]
    fn csv_header_and_errors() {
        let ds = parse_csv("a,b,label\n1,2,3\n", true).unwrap();
        assert_eq!((ds.len(), ds.classes), (1, 4));
        assert!(matches!(parse_csv("", false), Err(Error::Parse { .. })));
        assert!(matches!(parse_csv("a,b,label\n1,2,3\n", false), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_csv("1,2,0\n1,0\n", false), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_csv("1,2,0\n1,x,0\n", false), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_csv("1,2,-1\n", false), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_csv("1,2,0.5\n", false), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let ds = make_synthetic(3, 4, 30, 2.0, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.write_csv(&path).unwrap();
        assert_eq!(load_csv(&path, false).unwrap(), ds);
    }

    #[test]
    fn homo_equal_sizes() {
        let ds = make_synthetic(4, 2, 100, 3.0, 0).unwrap();
        let plan = partition(&ds, &PartitionSpec::new(Strategy::Homo), 4, SplitFractions::default(), 1).unwrap();
        assert!(plan.parties.iter().all(|p| p.len() == 25));
        plan.validate_against(&ds).unwrap();
    }

    #[test]
    fn lk_parties_hold_exactly_k_classes() {
        let ds = make_synthetic(10, 4, 2000, 3.0, 0).unwrap();
        let mut spec = PartitionSpec::new(Strategy::NoniidLk);
        spec.k_classes = 2;
        let plan = partition(&ds, &spec, 10, SplitFractions::default(), 2).unwrap();
        for p in &plan.parties {
            let labels: BTreeSet<usize> = p.train.iter().chain(&p.val).chain(&p.test).map(|&i| ds.y[i]).collect();
            assert_eq!(labels.len(), 2);
        }
        let held: BTreeSet<usize> = plan.global_test().iter().map(|&i| ds.y[i]).collect();
        assert_eq!(held.len(), 10);
    }

    #[test]
    fn lk_rejects_k_not_below_classes() {
        let ds = make_synthetic(3, 2, 60, 3.0, 0).unwrap();
        let mut spec = PartitionSpec::new(Strategy::NoniidLk);
        spec.k_classes = 3;
        assert!(partition(&ds, &spec, 3, SplitFractions::default(), 0).is_err());
    }

    #[test]
    fn lk_rejects_uncovered_classes() {
        let ds = make_synthetic(8, 2, 400, 3.0, 0).unwrap();
        let mut spec = PartitionSpec::new(Strategy::NoniidLk);
        spec.k_classes = 3;
        assert!(matches!(partition(&ds, &spec, 2, SplitFractions::default(), 0), Err(Error::Partition(_))));
        assert!(partition(&ds, &spec, 3, SplitFractions::default(), 0).is_ok());
    }

    #[test]
    fn lds_entropy_below_homo() {
        let ds = make_synthetic(10, 4, 2000, 3.0, 0).unwrap();
        let mut spec = PartitionSpec::new(Strategy::NoniidLds);
        spec.beta = 0.5;
        let mean_entropy = |spec: &PartitionSpec| {
            let mut total = 0.0;
            for seed in 0..50 {
                let plan = partition(&ds, spec, 10, SplitFractions::default(), seed).unwrap();
                let e: f64 = plan
                    .parties
                    .iter()
                    .map(|p| {
                        let all: Vec<usize> = p.train.iter().chain(&p.val).chain(&p.test).copied().collect();
                        entropy(&ds.class_counts(&all))
                    })
                    .sum::<f64>()
                    / 10.0;
                total += e;
            }
            total / 50.0
        };
        let lds = mean_entropy(&spec);
        let homo = mean_entropy(&PartitionSpec::new(Strategy::Homo));
        assert!(lds < homo, "lds {lds} vs homo {homo}");
    }

    #[test]
    fn iid_dq_sizes_vary_and_keep_class_mix() {
        let ds = make_synthetic(4, 2, 4000, 3.0, 0).unwrap();
        let spec = PartitionSpec::new(Strategy::IidDq);
        let mut worst: f64 = 0.0;
        let mut distinct_sizes = BTreeSet::new();
        for seed in 0..5 {
            let plan = partition(&ds, &spec, 8, SplitFractions::default(), seed).unwrap();
            for p in &plan.parties {
                distinct_sizes.insert(p.len());
                assert!(p.len() >= 64);
                if p.len() >= 100 {
                    let all: Vec<usize> = p.train.iter().chain(&p.val).chain(&p.test).copied().collect();
                    for c in ds.class_counts(&all) {
                        worst = worst.max((c as f64 / p.len() as f64 - 0.25).abs());
                    }
                }
            }
        }
        assert!(distinct_sizes.len() > 3);
        assert!(worst <= 0.05, "{worst}");
    }

    #[test]
    fn tiny_parties_are_a_partition_error() {
        let ds = make_synthetic(2, 2, 8, 3.0, 0).unwrap();
        let r = partition(&ds, &PartitionSpec::new(Strategy::Homo), 4, SplitFractions::default(), 0);
        assert!(matches!(r, Err(Error::Partition(_))));
    }
}
