//! Local party training: softmax regression and one-hidden-layer tanh MLPs
//! fitted by mini-batch SGD on cross-entropy, keeping the epoch snapshot
//! with the best validation accuracy.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PartitionPlan};
use crate::numerics::Matrix;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Softmax,
    Mlp,
}

impl Arch {
    pub fn tag(&self) -> &'static str {
        match self {
            Arch::Softmax => "softmax",
            Arch::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Layer {
    fn new(name: &str, shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            shape,
            values,
        }
    }

    /// Name without the `.bias` style suffix; weight and bias of one dense
    /// layer share a group.
    pub fn group(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }
}

/// Ordered named parameter tensors. Dense layers store their weight as
/// `name` with shape `(fan_in, fan_out)` and their bias as `name.bias`; the
/// classifier layer is always `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Arch,
    pub input_dim: usize,
    pub classes: usize,
    pub layers: Vec<Layer>,
}

impl ModelParams {
    pub fn zeros(arch: Arch, input_dim: usize, hidden: usize, classes: usize) -> Self {
        let mut m = Self::init(arch, input_dim, hidden, classes, 0);
        for l in m.layers.iter_mut() {
            l.values.iter_mut().for_each(|v| *v = 0.0);
        }
        m
    }

    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init(arch: Arch, input_dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut g = rng::seeded(seed);
        let mut dense = |name: &str, fan_in: usize, fan_out: usize, layers: &mut Vec<Layer>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| g.random_range(-bound..=bound)).collect();
            let b = (0..fan_out).map(|_| g.random_range(-bound..=bound)).collect();
            layers.push(Layer::new(name, vec![fan_in, fan_out], w));
            layers.push(Layer::new(&format!("{name}.bias"), vec![fan_out], b));
        };
        let mut layers = Vec::new();
        match arch {
            Arch::Softmax => dense("out", input_dim, classes, &mut layers),
            Arch::Mlp => {
                dense("hidden", input_dim, hidden, &mut layers);
                dense("out", hidden, classes, &mut layers);
            }
        }
        Self {
            arch,
            input_dim,
            classes,
            layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.layers {
            if l.shape.iter().product::<usize>() != l.values.len() {
                return Err(Error::invalid(format!(
                    "layer `{}` has shape {:?} but {} values",
                    l.name,
                    l.shape,
                    l.values.len()
                )));
            }
            if l.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer `{}` has non-finite values", l.name)));
            }
        }
        let expected: &[&str] = match self.arch {
            Arch::Softmax => &["out", "out.bias"],
            Arch::Mlp => &["hidden", "hidden.bias", "out", "out.bias"],
        };
        let names: Vec<&str> = self.layers.iter().map(|l| l.name.as_str()).collect();
        if names != expected {
            return Err(Error::invalid(format!(
                "{} model expects layers {expected:?}, found {names:?}",
                self.arch.tag()
            )));
        }
        let out = &self.layers[self.layers.len() - 2];
        let fan_in = match self.arch {
            Arch::Softmax => self.input_dim,
            Arch::Mlp => self.hidden_units(),
        };
        if out.shape != [fan_in, self.classes] || self.layers[self.layers.len() - 1].shape != [self.classes] {
            return Err(Error::invalid("classifier layer shape does not match the class count"));
        }
        if self.arch == Arch::Mlp && self.layers[0].shape[0] != self.input_dim {
            return Err(Error::invalid("hidden layer fan-in does not match the input dimension"));
        }
        Ok(())
    }

    pub fn hidden_units(&self) -> usize {
        match self.arch {
            Arch::Softmax => 0,
            Arch::Mlp => self.layers[0].shape[1],
        }
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Distinct layer groups in order.
    pub fn groups(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for l in &self.layers {
            if out.last() != Some(&l.group()) {
                out.push(l.group());
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.values.len()).sum()
    }

    fn dense_forward(w: &Layer, b: &Layer, input: &[f64], out: &mut [f64]) {
        let fan_out = w.shape[1];
        out.copy_from_slice(&b.values);
        for (i, &xi) in input.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &w.values[i * fan_out..(i + 1) * fan_out];
            for (o, wv) in out.iter_mut().zip(row) {
                *o += xi * wv;
            }
        }
    }

    /// Class logits for one input row; fills `hidden` for the MLP.
    fn forward(&self, x: &[f64], hidden: &mut Vec<f64>, logits: &mut [f64]) {
        match self.arch {
            Arch::Softmax => Self::dense_forward(&self.layers[0], &self.layers[1], x, logits),
            Arch::Mlp => {
                hidden.resize(self.hidden_units(), 0.0);
                Self::dense_forward(&self.layers[0], &self.layers[1], x, hidden);
                hidden.iter_mut().for_each(|h| *h = h.tanh());
                Self::dense_forward(&self.layers[2], &self.layers[3], hidden, logits);
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut hidden = Vec::new();
        let mut logits = vec![0.0; self.classes];
        self.forward(x, &mut hidden, &mut logits);
        logits
    }
}

/// First index of the maximum; NaN never wins.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn log_softmax_loss(logits: &[f64], label: usize, probs: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (p, &l) in probs.iter_mut().zip(logits) {
        *p = (l - max).exp();
        z += *p;
    }
    probs.iter_mut().for_each(|p| *p /= z);
    -(logits[label] - max - z.ln())
}

/// Mean cross-entropy over the given rows and its gradient, laid out like
/// `model.layers`.
pub fn loss_and_grad(model: &ModelParams, x: &Matrix, y: &[usize], rows: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let mut grads: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.values.len()]).collect();
    let mut hidden = Vec::new();
    let mut logits = vec![0.0; model.classes];
    let mut probs = vec![0.0; model.classes];
    let mut dhidden = vec![0.0; model.hidden_units()];
    let c = model.classes;
    let mut loss = 0.0;
    for &r in rows {
        let xr = x.row(r);
        model.forward(xr, &mut hidden, &mut logits);
        loss += log_softmax_loss(&logits, y[r], &mut probs);
        probs[y[r]] -= 1.0;
        let dlogits = &probs;
        let (out_w, input): (usize, &[f64]) = match model.arch {
            Arch::Softmax => (0, xr),
            Arch::Mlp => (2, &hidden),
        };
        for (i, &a) in input.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (g, d) in grads[out_w][i * c..(i + 1) * c].iter_mut().zip(dlogits) {
                *g += a * d;
            }
        }
        for (g, d) in grads[out_w + 1].iter_mut().zip(dlogits) {
            *g += d;
        }
        if model.arch == Arch::Mlp {
            let w2 = &model.layers[2].values;
            for (j, dh) in dhidden.iter_mut().enumerate() {
                let back: f64 = w2[j * c..(j + 1) * c].iter().zip(dlogits).map(|(w, d)| w * d).sum();
                *dh = back * (1.0 - hidden[j] * hidden[j]);
            }
            let h = dhidden.len();
            for (i, &a) in xr.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (g, d) in grads[0][i * h..(i + 1) * h].iter_mut().zip(&dhidden) {
                    *g += a * d;
                }
            }
            for (g, d) in grads[1].iter_mut().zip(&dhidden) {
                *g += d;
            }
        }
    }
    let n = rows.len().max(1) as f64;
    for g in grads.iter_mut() {
        g.iter_mut().for_each(|v| *v /= n);
    }
    (loss / n, grads)
}

pub fn mean_loss(model: &ModelParams, x: &Matrix, y: &[usize], rows: &[usize]) -> f64 {
    let mut hidden = Vec::new();
    let mut logits = vec![0.0; model.classes];
    let mut probs = vec![0.0; model.classes];
    let total: f64 = rows
        .iter()
        .map(|&r| {
            model.forward(x.row(r), &mut hidden, &mut logits);
            log_softmax_loss(&logits, y[r], &mut probs)
        })
        .sum();
    total / rows.len().max(1) as f64
}

pub fn sgd_step(model: &mut ModelParams, grads: &[Vec<f64>], rate: f64) {
    for (layer, g) in model.layers.iter_mut().zip(grads) {
        for (v, d) in layer.values.iter_mut().zip(g) {
            *v -= rate * d;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 0.1,
            decay: 0.1,
            every: 40,
        }
    }
}

impl LrSchedule {
    /// `initial * decay^(floor(epoch / every))`, epochs counted from zero.
    pub fn rate(&self, epoch: usize) -> f64 {
        self.initial * self.decay.powi((epoch / self.every.max(1)) as i32)
    }
}

fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    32
}
fn default_hidden() -> usize {
    32
}
fn default_arch() -> Arch {
    Arch::Softmax
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_arch")]
    pub arch: Arch,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub lr: LrSchedule,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: default_arch(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr: LrSchedule::default(),
            hidden: default_hidden(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr.initial > 0.0 && self.lr.initial.is_finite()) {
            return Err(Error::invalid("initial learning rate must be positive"));
        }
        if self.lr.decay <= 0.0 || !self.lr.decay.is_finite() {
            return Err(Error::invalid("learning-rate decay must be positive"));
        }
        if self.arch == Arch::Mlp && self.hidden == 0 {
            return Err(Error::invalid("mlp needs at least one hidden unit"));
        }
        Ok(())
    }
}

/// A trained party model and its checkpoint bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: ModelParams,
    /// Best validation accuracy; the model score.
    pub score: f64,
    pub best_epoch: usize,
    /// Validation accuracy after every epoch.
    pub history: Vec<f64>,
}

pub fn train_local(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    if train.dim() != val.dim() || train.classes != val.classes {
        return Err(Error::invalid("training and validation sets disagree on shape"));
    }
    let mut model = ModelParams::init(cfg.arch, train.dim(), cfg.hidden, train.classes, rng::derive(cfg.seed, 1));
    let mut shuffle = rng::seeded(rng::derive(cfg.seed, 2));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(ModelParams, f64, usize)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let rate = cfg.lr.rate(epoch);
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = loss_and_grad(&model, &train.x, &train.y, batch);
            if !loss.is_finite() {
                return Err(Error::Training { epoch });
            }
            sgd_step(&mut model, &grads, rate);
        }
        if model.layers.iter().any(|l| l.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::Training { epoch });
        }
        let acc = accuracy(&model, val)?;
        history.push(acc);
        if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
            best = Some((model.clone(), acc, epoch));
        }
    }
    let (model, score, best_epoch) = best.expect("at least one epoch");
    Ok(Trained {
        model,
        score,
        best_epoch,
        history,
    })
}

pub fn predict(model: &ModelParams, x: &Matrix) -> Result<Vec<usize>> {
    if x.cols() != model.input_dim {
        return Err(Error::invalid(format!(
            "model expects {} features, input has {}",
            model.input_dim,
            x.cols()
        )));
    }
    let mut hidden = Vec::new();
    let mut logits = vec![0.0; model.classes];
    Ok((0..x.rows())
        .map(|r| {
            model.forward(x.row(r), &mut hidden, &mut logits);
            argmax(&logits)
        })
        .collect())
}

pub fn accuracy_of(preds: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

pub fn accuracy(model: &ModelParams, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid("accuracy needs a non-empty dataset"));
    }
    Ok(accuracy_of(&predict(model, &ds.x)?, &ds.y))
}

/// Train one model on the pooled training splits of every party,
/// validating on the pooled validation splits.
pub fn train_oracle(plan: &PartitionPlan, ds: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    plan.validate_against(ds)?;
    let train = ds.subset(&plan.union_train());
    let val = ds.subset(&plan.union_val());
    train_local(&train, &val, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, PartySplit, PartitionSpec, Strategy};

    fn row_matrix(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let m = ModelParams::zeros(Arch::Softmax, 3, 0, 4);
        let x = row_matrix(&[vec![1.0, -2.0, 0.5], vec![0.0, 0.0, 9.0]]);
        assert_eq!(predict(&m, &x).unwrap(), vec![0, 0]);
    }

    #[test]
    fn bias_only_model_predicts_biased_class() {
        let mut m = ModelParams::zeros(Arch::Softmax, 2, 0, 3);
        m.layers[1].values[2] = 1.0;
        let x = row_matrix(&[vec![4.0, 1.0], vec![-3.0, 0.0]]);
        assert_eq!(predict(&m, &x).unwrap(), vec![2, 2]);
    }

    #[test]
    fn predict_rejects_wrong_dim() {
        let m = ModelParams::zeros(Arch::Softmax, 2, 0, 3);
        assert!(predict(&m, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn predictions_match_explicit_logits() {
        for arch in [Arch::Softmax, Arch::Mlp] {
            let m = ModelParams::init(arch, 5, 7, 4, 3);
            let mut g = rng::seeded(8);
            let x = Matrix::from_fn(100, 5, |_, _| g.random_range(-2.0..2.0));
            let preds = predict(&m, &x).unwrap();
            for r in 0..100 {
                // Textbook forward pass on explicit loops.
                let mut input = x.row(r).to_vec();
                let dense = |w: &Layer, b: &Layer, v: &[f64]| -> Vec<f64> {
                    (0..w.shape[1])
                        .map(|o| b.values[o] + (0..w.shape[0]).map(|i| v[i] * w.values[i * w.shape[1] + o]).sum::<f64>())
                        .collect()
                };
                if arch == Arch::Mlp {
                    input = dense(&m.layers[0], &m.layers[1], &input).iter().map(|h| h.tanh()).collect();
                }
                let n = m.layers.len();
                let logits = dense(&m.layers[n - 2], &m.layers[n - 1], &input);
                let mut best = 0;
                for c in 1..logits.len() {
                    if logits[c] > logits[best] {
                        best = c;
                    }
                }
                assert_eq!(preds[r], best);
            }
        }
    }

    #[test]
    fn accuracy_hand_count() {
        let mut m = ModelParams::zeros(Arch::Softmax, 1, 0, 2);
        // logit_1 = x, logit_0 = 0: predicts 1 for positive inputs.
        m.layers[0].values = vec![0.0, 1.0];
        let x = Matrix::new(10, 1, vec![1.0, -1.0, 2.0, -2.0, 3.0, 0.5, -0.5, 4.0, -4.0, 0.0]).unwrap();
        let y = vec![1, 0, 0, 0, 1, 1, 1, 0, 0, 0];
        // preds: 1 0 1 0 1 1 0 1 0 0 -> matches at 0,1,3,4,5,8,9
        let ds = Dataset::new(x, y.clone(), 2).unwrap();
        assert_eq!(accuracy(&m, &ds).unwrap(), 0.7);
        let all_right = Dataset::new(ds.x.clone(), predict(&m, &ds.x).unwrap(), 2).unwrap();
        assert_eq!(accuracy(&m, &all_right).unwrap(), 1.0);
        let flipped: Vec<usize> = predict(&m, &ds.x).unwrap().iter().map(|p| 1 - p).collect();
        let all_wrong = Dataset::new(ds.x.clone(), flipped, 2).unwrap();
        assert_eq!(accuracy(&m, &all_wrong).unwrap(), 0.0);
    }

    #[test]
    fn single_label_task_scores_one() {
        let ds = make_synthetic(3, 2, 60, 3.0, 0).unwrap();
        let idx: Vec<usize> = (0..60).filter(|i| ds.y[*i] == 1).collect();
        let sub = ds.subset(&idx);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let t = train_local(&sub, &sub, &cfg).unwrap();
        assert_eq!(t.score, 1.0);
    }

    #[test]
    fn separated_blobs_train_well() {
        let ds = make_synthetic(2, 2, 400, 10.0, 5).unwrap();
        let tr: Vec<usize> = (0..300).collect();
        let va: Vec<usize> = (300..400).collect();
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let t = train_local(&ds.subset(&tr), &ds.subset(&va), &cfg).unwrap();
        assert!(t.score >= 0.99, "{}", t.score);
    }

    #[test]
    fn score_is_max_of_history() {
        let ds = make_synthetic(4, 3, 300, 2.0, 2).unwrap();
        let tr: Vec<usize> = (0..240).collect();
        let va: Vec<usize> = (240..300).collect();
        for arch in [Arch::Softmax, Arch::Mlp] {
            let cfg = TrainConfig {
                arch,
                epochs: 15,
                hidden: 8,
                ..TrainConfig::default()
            };
            let t = train_local(&ds.subset(&tr), &ds.subset(&va), &cfg).unwrap();
            let max = t.history.iter().copied().fold(0.0, f64::max);
            assert_eq!(t.score, max);
            assert_eq!(t.history[t.best_epoch], max);
            assert!(t.history[..t.best_epoch].iter().all(|&a| a < max));
            assert_eq!(accuracy(&t.model, &ds.subset(&va)).unwrap(), t.score);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let ds = make_synthetic(2, 2, 100, 1.0, 0).unwrap();
        let mut big = ds.clone();
        big.x = Matrix::from_fn(100, 2, |r, c| ds.x[(r, c)] * 1e150);
        let cfg = TrainConfig {
            epochs: 3,
            lr: LrSchedule {
                initial: 1e10,
                ..LrSchedule::default()
            },
            ..TrainConfig::default()
        };
        assert!(matches!(train_local(&big, &big, &cfg), Err(Error::Training { .. })));
    }

    #[test]
    fn lr_schedule_steps() {
        let s = LrSchedule::default();
        assert_eq!(s.rate(0), 0.1);
        assert_eq!(s.rate(39), 0.1);
        assert!((s.rate(40) - 0.01).abs() < 1e-15);
        assert!((s.rate(85) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn oracle_on_single_party_equals_local() {
        let ds = make_synthetic(3, 2, 90, 3.0, 1).unwrap();
        let plan = PartitionPlan {
            m: 1,
            spec: PartitionSpec::new(Strategy::Homo),
            parties: vec![PartySplit {
                train: (0..70).collect(),
                val: (70..80).collect(),
                test: (80..90).collect(),
            }],
        };
        let cfg = TrainConfig {
            epochs: 10,
            seed: 4,
            ..TrainConfig::default()
        };
        let a = train_oracle(&plan, &ds, &cfg).unwrap();
        let b = train_local(&ds.subset(&plan.parties[0].train), &ds.subset(&plan.parties[0].val), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(train_oracle(&plan, &ds, &cfg).unwrap(), a);
    }

    #[test]
    fn validate_catches_bad_shapes() {
        let mut m = ModelParams::init(Arch::Mlp, 3, 4, 2, 0);
        m.validate().unwrap();
        m.layers[2].values.pop();
        assert!(m.validate().is_err());
        assert_eq!(ModelParams::init(Arch::Mlp, 3, 4, 2, 0).groups(), vec!["hidden", "out"]);
    }
}
