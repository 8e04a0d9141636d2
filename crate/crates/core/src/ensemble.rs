//! Size-weighted plurality voting over a team, parameter fusion baselines
//! (FedAvg, MeanAvg) and team evaluation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::market::ModelRecord;
use crate::numerics::Matrix;
use crate::selection::EnsembleTeam;
use crate::training::{accuracy_of, predict, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub labels: Vec<usize>,
    /// Per sample, per class: summed normalised weight `n_j / sum n`.
    pub tallies: Vec<Vec<f64>>,
}

/// Weighted plurality vote over precomputed member predictions.
///
/// The argmax runs on integer weight sums, so it is exact; ties go to the
/// lower class.
pub fn vote_predictions(member_preds: &[&[usize]], weights: &[usize], classes: usize) -> VoteResult {
    assert_eq!(member_preds.len(), weights.len());
    let samples = member_preds.first().map_or(0, |p| p.len());
    let total: u64 = weights.iter().map(|&w| w as u64).sum();
    let mut labels = Vec::with_capacity(samples);
    let mut tallies = Vec::with_capacity(samples);
    let mut counts = vec![0u64; classes];
    for s in 0..samples {
        counts.iter_mut().for_each(|c| *c = 0);
        for (preds, &w) in member_preds.iter().zip(weights) {
            counts[preds[s]] += w as u64;
        }
        let mut best = 0;
        for c in 1..classes {
            if counts[c] > counts[best] {
                best = c;
            }
        }
        labels.push(best);
        tallies.push(counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect());
    }
    VoteResult { labels, tallies }
}

/// Predicted labels only, without materialising tallies.
pub fn vote_labels(member_preds: &[&[usize]], weights: &[usize], classes: usize, out: &mut Vec<usize>) {
    let samples = member_preds.first().map_or(0, |p| p.len());
    out.clear();
    let mut counts = vec![0u64; classes];
    for s in 0..samples {
        counts.iter_mut().for_each(|c| *c = 0);
        for (preds, &w) in member_preds.iter().zip(weights) {
            counts[preds[s]] += w as u64;
        }
        let mut best = 0;
        for c in 1..classes {
            if counts[c] > counts[best] {
                best = c;
            }
        }
        out.push(best);
    }
}

fn resolve<'a>(team: &EnsembleTeam, records: &'a [ModelRecord]) -> Result<Vec<&'a ModelRecord>> {
    if team.is_empty() {
        return Err(Error::invalid("team has no members"));
    }
    let by_id: HashMap<&str, &ModelRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    team.members
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::NotFound(format!("team member `{id}`")))
        })
        .collect()
}

pub fn vote(team: &EnsembleTeam, records: &[ModelRecord], x: &Matrix) -> Result<VoteResult> {
    let members = resolve(team, records)?;
    let classes = members[0].params.classes;
    if members.iter().any(|m| m.params.classes != classes) {
        return Err(Error::invalid("team members disagree on the class count"));
    }
    let preds: Vec<Vec<usize>> = members.iter().map(|m| predict(&m.params, x)).collect::<Result<_>>()?;
    let refs: Vec<&[usize]> = preds.iter().map(Vec::as_slice).collect();
    let weights: Vec<usize> = members.iter().map(|m| m.n_train).collect();
    Ok(vote_predictions(&refs, &weights, classes))
}

pub fn evaluate_team(team: &EnsembleTeam, records: &[ModelRecord], testset: &Dataset) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let result = vote(team, records, &testset.x)?;
    Ok(accuracy_of(&result.labels, &testset.y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    FedAvg,
    MeanAvg,
}

impl FusionMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            FusionMethod::FedAvg => "fedavg",
            FusionMethod::MeanAvg => "meanavg",
        }
    }
}

/// Layer-wise parameter average: weighted by `n_train` for FedAvg,
/// uniform for MeanAvg.
pub fn fuse(records: &[ModelRecord], method: FusionMethod) -> Result<ModelParams> {
    let first = records.first().ok_or_else(|| Error::invalid("nothing to fuse"))?;
    for r in records {
        if r.params.arch != first.params.arch || r.params.layers.len() != first.params.layers.len() {
            return Err(Error::invalid(format!("record `{}` has a different architecture", r.id)));
        }
        for (a, b) in r.params.layers.iter().zip(&first.params.layers) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::invalid(format!(
                    "layer `{}` of record `{}` does not match `{}` {:?}",
                    a.name, r.id, b.name, b.shape
                )));
            }
        }
    }
    let weights: Vec<f64> = match method {
        FusionMethod::FedAvg => {
            let total: f64 = records.iter().map(|r| r.n_train as f64).sum();
            records.iter().map(|r| r.n_train as f64 / total).collect()
        }
        FusionMethod::MeanAvg => vec![1.0 / records.len() as f64; records.len()],
    };
    let mut out = first.params.clone();
    for (li, layer) in out.layers.iter_mut().enumerate() {
        for (vi, v) in layer.values.iter_mut().enumerate() {
            *v = records
                .iter()
                .zip(&weights)
                .map(|(r, w)| w * r.params.layers[li].values[vi])
                .sum();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::selection::Provenance;
    use crate::training::{accuracy, Arch};
    use proptest::prelude::*;
    use rand::Rng;

    /// Softmax model over a one-hot-ish input that always predicts `class`.
    fn constant_model(id: &str, class: usize, classes: usize, n: usize) -> ModelRecord {
        let mut params = ModelParams::zeros(Arch::Softmax, 1, 0, classes);
        params.layers[1].values[class] = 1.0;
        ModelRecord {
            id: id.into(),
            params,
            n_train: n,
            score: 0.5,
            party: 0,
            partition: "homo".into(),
        }
    }

    fn team(ids: &[&str], records: &[ModelRecord]) -> EnsembleTeam {
        EnsembleTeam {
            members: ids.iter().map(|s| s.to_string()).collect(),
            weights: ids
                .iter()
                .map(|id| records.iter().find(|r| r.id == *id).unwrap().n_train)
                .collect(),
            provenance: Provenance::As,
        }
    }

    #[test]
    fn weight_dominant_vote() {
        let preds: [&[usize]; 3] = [&[2], &[1], &[1]];
        let v = vote_predictions(&preds, &[3, 1, 1], 3);
        assert_eq!(v.labels, vec![2]);
        assert!((v.tallies[0][2] - 0.6).abs() < 1e-12);
        assert!((v.tallies[0][1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn tie_goes_to_lower_class() {
        let preds: [&[usize]; 2] = [&[0, 3], &[1, 2]];
        assert_eq!(vote_predictions(&preds, &[1, 1], 4).labels, vec![0, 2]);
    }

    #[test]
    fn unanimous_vote() {
        let preds: [&[usize]; 3] = [&[1], &[1], &[1]];
        assert_eq!(vote_predictions(&preds, &[9, 1, 5], 3).labels, vec![1]);
    }

    #[test]
    fn vote_through_records() {
        let records = vec![
            constant_model("a", 2, 3, 3),
            constant_model("b", 1, 3, 1),
            constant_model("c", 1, 3, 1),
        ];
        let x = Matrix::zeros(4, 1);
        let v = vote(&team(&["a", "b", "c"], &records), &records, &x).unwrap();
        assert_eq!(v.labels, vec![2; 4]);
        let missing = team(&["a"], &records);
        let mut bad = missing.clone();
        bad.members[0] = "zzz".into();
        assert!(matches!(vote(&bad, &records, &x), Err(Error::NotFound(_))));
    }

    #[test]
    fn duplicate_member_shifts_argmax() {
        let records = vec![constant_model("a", 0, 2, 1), constant_model("b", 1, 2, 1)];
        let x = Matrix::zeros(1, 1);
        assert_eq!(vote(&team(&["a", "b"], &records), &records, &x).unwrap().labels, vec![0]);
        assert_eq!(vote(&team(&["a", "b", "b"], &records), &records, &x).unwrap().labels, vec![1]);
    }

    #[test]
    fn singleton_team_equals_model_accuracy() {
        let ds = crate::data::make_synthetic(3, 2, 60, 3.0, 1).unwrap();
        let mut rec = constant_model("a", 0, 3, 4);
        rec.params = ModelParams::init(Arch::Softmax, 2, 0, 3, 7);
        let records = vec![rec];
        let t = team(&["a"], &records);
        assert_eq!(evaluate_team(&t, &records, &ds).unwrap(), accuracy(&records[0].params, &ds).unwrap());
    }

    #[test]
    fn fusion_identities() {
        let mut a = constant_model("a", 0, 2, 1);
        let mut b = constant_model("b", 0, 2, 3);
        for l in a.params.layers.iter_mut() {
            l.values.iter_mut().for_each(|v| *v = 0.0);
        }
        for l in b.params.layers.iter_mut() {
            l.values.iter_mut().for_each(|v| *v = 1.0);
        }
        let fused = fuse(&[a.clone(), b.clone()], FusionMethod::FedAvg).unwrap();
        assert!(fused.layers.iter().flat_map(|l| &l.values).all(|&v| v == 0.75));
        let (mut a3, mut b1) = (a.clone(), b.clone());
        a3.n_train = 3;
        b1.n_train = 1;
        let fused = fuse(&[a3, b1], FusionMethod::FedAvg).unwrap();
        assert!(fused.layers.iter().flat_map(|l| &l.values).all(|&v| v == 0.25));
        let mean = fuse(&[a.clone(), b], FusionMethod::MeanAvg).unwrap();
        assert!(mean.layers.iter().flat_map(|l| &l.values).all(|&v| v == 0.5));
        for m in [FusionMethod::FedAvg, FusionMethod::MeanAvg] {
            assert_eq!(fuse(&[a.clone(), a.clone()], m).unwrap(), a.params);
        }
    }

    #[test]
    fn equal_sizes_fedavg_equals_meanavg() {
        let records: Vec<ModelRecord> = (0..4)
            .map(|i| {
                let mut r = constant_model(&format!("m{i}"), 0, 3, 7);
                r.params = ModelParams::init(Arch::Mlp, 3, 5, 3, i);
                r
            })
            .collect();
        let f = fuse(&records, FusionMethod::FedAvg).unwrap();
        let m = fuse(&records, FusionMethod::MeanAvg).unwrap();
        for (a, b) in f.layers.iter().zip(&m.layers) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fusion_rejects_shape_mismatch() {
        let a = constant_model("a", 0, 2, 1);
        let b = constant_model("b", 0, 3, 1);
        assert!(fuse(&[a, b], FusionMethod::FedAvg).unwrap_err().to_string().contains("out"));
    }

    fn random_preds(members: usize, samples: usize, classes: usize, seed: u64) -> Vec<Vec<usize>> {
        let mut g = rng::seeded(seed);
        (0..members)
            .map(|_| (0..samples).map(|_| g.random_range(0..classes)).collect())
            .collect()
    }

    proptest! {
        #[test]
        fn weight_scale_and_order_invariance(
            seed in 0u64..1000,
            members in 1usize..7,
            factor in 1usize..50,
            rot in 0usize..7,
        ) {
            let preds = random_preds(members, 30, 4, seed);
            let mut g = rng::seeded(seed ^ 0xfeed);
            let weights: Vec<usize> = (0..members).map(|_| g.random_range(1..20)).collect();
            let refs: Vec<&[usize]> = preds.iter().map(Vec::as_slice).collect();
            let base = vote_predictions(&refs, &weights, 4).labels;

            let scaled: Vec<usize> = weights.iter().map(|w| w * factor).collect();
            prop_assert_eq!(&vote_predictions(&refs, &scaled, 4).labels, &base);

            let r = rot % members;
            let mut rrefs = refs.clone();
            rrefs.rotate_left(r);
            let mut rweights = weights.clone();
            rweights.rotate_left(r);
            prop_assert_eq!(&vote_predictions(&rrefs, &rweights, 4).labels, &base);

            for (t, &l) in vote_predictions(&refs, &weights, 4).tallies.iter().zip(&base) {
                let max = t.iter().copied().fold(0.0, f64::max);
                prop_assert_eq!(t[l], max);
            }
        }
    }
}
