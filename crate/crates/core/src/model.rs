//! Linear softmax classifier over fixed embeddings.
//!
//! Stands in for a fine-tuned network whose penultimate representation is the
//! embedding itself. It is re-initialised and trained from scratch on the
//! labelled set every round, keeping the snapshot with the best training
//! macro-F1 on the minority classes.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassLayout, DatasetState, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyClassifier {
    num_classes: usize,
    dim: usize,
    /// Row-major `num_classes × dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub min_steps: usize,
    pub early_stop_delta: f64,
    /// Seed for weight initialisation. Set per round by the runner.
    #[serde(skip)]
    pub init_seed: u64,
    /// Seed for per-epoch reshuffling. Set per round by the runner.
    #[serde(skip)]
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 32,
            max_epochs: 10,
            min_steps: 100,
            early_stop_delta: 1e-5,
            init_seed: 0,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("train.max_epochs must be >= 1".into()));
        }
        if self.min_steps == 0 {
            return Err(Error::Config("train.min_steps must be >= 1".into()));
        }
        if !(self.early_stop_delta >= 0.0) {
            return Err(Error::Config("train.early_stop_delta must be >= 0".into()));
        }
        Ok(())
    }

    /// Epoch cap: `max_epochs`, extended when needed to reach `min_steps`.
    pub fn epoch_cap(&self, n_train: usize) -> usize {
        let steps_per_epoch = n_train.div_ceil(self.batch_size).max(1);
        self.max_epochs.max(self.min_steps.div_ceil(steps_per_epoch))
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

impl ProxyClassifier {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            num_classes,
            dim,
            weights: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
        }
    }

    pub fn from_parts(num_classes: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if num_classes < 2 || dim == 0 || weights.len() != num_classes * dim || bias.len() != num_classes {
            return Err(Error::Shape(format!(
                "classifier needs {num_classes}x{dim} weights and {num_classes} biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            num_classes,
            dim,
            weights,
            bias,
        })
    }

    /// Uniform in `±1/sqrt(dim)`, like a freshly constructed linear layer.
    pub fn random(num_classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[]);
        let bound = 1.0 / (dim as f64).sqrt();
        let mut draw = |len| -> Vec<f64> { (0..len).map(|_| rng.random_range(-bound..bound)).collect() };
        let weights = draw(num_classes * dim);
        let bias = draw(num_classes);
        Self {
            num_classes,
            dim,
            weights,
            bias,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(x).map(|(&w, &x)| w * x as f64).sum::<f64>())
            .collect()
    }

    pub fn proba(&self, x: &[f32]) -> Vec<f64> {
        let mut z = self.logits(x);
        softmax_in_place(&mut z);
        z
    }

    /// `softmax(Wx + b)` for each id.
    pub fn predict_proba(&self, emb: &EmbeddingMatrix, ids: &[usize]) -> Vec<Vec<f64>> {
        ids.iter().map(|&i| self.proba(emb.row(i))).collect()
    }

    pub fn predict(&self, emb: &EmbeddingMatrix, ids: &[usize]) -> Vec<u32> {
        ids.iter().map(|&i| argmax(&self.proba(emb.row(i))) as u32).collect()
    }

    /// Gradient of the cross-entropy at the predicted label with respect to
    /// the weights: block `c` is `(p_c - [ŷ = c]) · x`, blocks in class order.
    pub fn gradient_embedding(&self, x: &[f32]) -> Vec<f64> {
        let p = self.proba(x);
        let predicted = argmax(&p);
        let mut g = Vec::with_capacity(self.num_classes * self.dim);
        for (c, &pc) in p.iter().enumerate() {
            let scale = pc - if c == predicted { 1.0 } else { 0.0 };
            g.extend(x.iter().map(|&v| scale * v as f64));
        }
        g
    }

    /// Mean cross-entropy on the given labelled instances.
    pub fn cross_entropy(&self, emb: &EmbeddingMatrix, examples: &[(usize, u32)]) -> f64 {
        let total: f64 = examples
            .iter()
            .map(|&(i, y)| {
                let z = self.logits(emb.row(i));
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - z[y as usize]
            })
            .sum();
        total / examples.len().max(1) as f64
    }

    fn sgd_step(&mut self, emb: &EmbeddingMatrix, batch: &[(usize, u32)], lr: f64) {
        let mut grad_w = vec![0.0; self.weights.len()];
        let mut grad_b = vec![0.0; self.num_classes];
        for &(i, y) in batch {
            let x = emb.row(i);
            let p = self.proba(x);
            for (c, &pc) in p.iter().enumerate() {
                let err = pc - if c == y as usize { 1.0 } else { 0.0 };
                grad_b[c] += err;
                for (g, &xv) in grad_w[c * self.dim..(c + 1) * self.dim].iter_mut().zip(x) {
                    *g += err * xv as f64;
                }
            }
        }
        let scale = lr / batch.len() as f64;
        for (w, g) in self.weights.iter_mut().zip(&grad_w) {
            *w -= scale * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad_b) {
            *b -= scale * g;
        }
    }
}

/// Trains a freshly initialised classifier on the labelled part of `state`.
///
/// Mini-batch gradient descent on cross-entropy, reshuffled every epoch. At
/// the end of each epoch the training macro-F1 over the minority classes is
/// measured; parameters are snapshotted whenever it improves by more than
/// `early_stop_delta`. Training runs at least `min_steps` steps, then stops
/// after the first epoch without such an improvement, or at the epoch cap.
pub fn fit(emb: &EmbeddingMatrix, state: &DatasetState, layout: ClassLayout, cfg: &TrainConfig) -> Result<ProxyClassifier> {
    cfg.validate()?;
    let mut examples: Vec<(usize, u32)> = state.revealed_labels().collect();
    if examples.is_empty() {
        return Err(Error::EmptyLabelled);
    }
    let minority: Vec<u32> = layout.minority_classes().collect();
    let truth: Vec<u32> = examples.iter().map(|e| e.1).collect();
    let ids: Vec<usize> = examples.iter().map(|e| e.0).collect();

    let mut model = ProxyClassifier::random(layout.num_classes as usize, emb.d(), cfg.init_seed);
    let mut order_rng = rng::stream(cfg.shuffle_seed, &[]);
    let mut best = model.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut steps = 0usize;

    for _ in 0..cfg.epoch_cap(examples.len()) {
        examples.shuffle(&mut order_rng);
        for batch in examples.chunks(cfg.batch_size) {
            model.sgd_step(emb, batch, cfg.learning_rate);
            steps += 1;
        }
        let score = macro_f1(&model.predict(emb, &ids), &truth, &minority)?;
        let improved = score - best_score > cfg.early_stop_delta;
        if improved {
            best_score = score;
            best = model.clone();
        }
        if steps >= cfg.min_steps && !improved {
            break;
        }
    }
    Ok(best)
}

/// F1 of one class; zero when the class is neither predicted nor present.
pub fn class_f1(predictions: &[u32], truth: &[u32], class: u32) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p == class, t == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Unweighted mean of per-class F1 over `classes`.
pub fn macro_f1(predictions: &[u32], truth: &[u32], classes: &[u32]) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::Domain("macro F1 over an empty class subset".into()));
    }
    if predictions.len() != truth.len() {
        return Err(Error::Domain(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    Ok(classes.iter().map(|&c| class_f1(predictions, truth, c)).sum::<f64>() / classes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelStore;
    use rand_distr::{Distribution, Normal};

    const BINARY: ClassLayout = ClassLayout {
        num_classes: 2,
        majority_class: 0,
    };

    fn two_gaussians(seed: u64) -> (EmbeddingMatrix, LabelStore) {
        let mut rng = rng::stream(seed, &[]);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (class, centre) in [(0u32, [-1.0f64, -1.0]), (1, [1.0, 1.0])] {
            for _ in 0..50 {
                rows.push([(centre[0] + noise.sample(&mut rng)) as f32, (centre[1] + noise.sample(&mut rng)) as f32]);
                labels.push(class);
            }
        }
        (EmbeddingMatrix::from_rows(&rows).unwrap(), LabelStore::new(labels, 2).unwrap())
    }

    fn all_labelled(labels: &LabelStore) -> DatasetState {
        let mut s = DatasetState::new(labels.len(), labels.num_classes());
        let ids: Vec<usize> = (0..labels.len()).collect();
        s.reveal(labels, &ids).unwrap();
        s
    }

    /// Separability oracle: a perceptron run to convergence certifies that a
    /// separating hyperplane exists for the sample (finite mistakes bound).
    fn linearly_separable(emb: &EmbeddingMatrix, labels: &LabelStore) -> bool {
        let mut w = [0.0f64; 3];
        for _ in 0..10_000 {
            let mut mistakes = 0;
            for i in 0..emb.n() {
                let x = emb.row(i);
                let y = if labels.label(i) == 1 { 1.0 } else { -1.0 };
                let s = w[0] * x[0] as f64 + w[1] * x[1] as f64 + w[2];
                if y * s <= 0.0 {
                    w[0] += y * x[0] as f64;
                    w[1] += y * x[1] as f64;
                    w[2] += y;
                    mistakes += 1;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    #[test]
    fn separable_classes_reach_high_minority_f1() {
        let (emb, labels) = two_gaussians(1);
        assert!(linearly_separable(&emb, &labels));
        let state = all_labelled(&labels);
        let model = fit(&emb, &state, BINARY, &TrainConfig::default()).unwrap();
        let ids: Vec<usize> = (0..100).collect();
        let f1 = macro_f1(&model.predict(&emb, &ids), labels.labels(), &[1]).unwrap();
        assert!(f1 >= 0.99, "f1 {f1}");
    }

    #[test]
    fn fit_is_deterministic_and_reinitialises() {
        let (emb, labels) = two_gaussians(2);
        let state = all_labelled(&labels);
        let cfg = TrainConfig::default();
        let a = fit(&emb, &state, BINARY, &cfg).unwrap();
        let b = fit(&emb, &state, BINARY, &cfg).unwrap();
        assert_eq!(a, b);
        let init_a = ProxyClassifier::random(2, 2, 1);
        let init_b = ProxyClassifier::random(2, 2, 2);
        assert!(init_a.weights().iter().zip(init_b.weights()).any(|(x, y)| x.to_bits() != y.to_bits()));
    }

    #[test]
    fn epoch_cap_honours_min_steps() {
        let cfg = TrainConfig::default();
        // 100 examples, batch 32 -> 4 steps per epoch -> 25 epochs for 100 steps.
        assert_eq!(100usize.div_ceil(32), 4);
        assert_eq!(cfg.epoch_cap(100), 25);
        assert_eq!(cfg.epoch_cap(10_000), 10);
    }

    #[test]
    fn selected_snapshot_does_not_increase_loss() {
        let (emb, labels) = two_gaussians(3);
        let state = all_labelled(&labels);
        let examples: Vec<(usize, u32)> = state.revealed_labels().collect();
        let cfg = TrainConfig {
            init_seed: 9,
            ..Default::default()
        };
        let init = ProxyClassifier::random(2, 2, cfg.init_seed);
        let trained = fit(&emb, &state, BINARY, &cfg).unwrap();
        assert!(trained.cross_entropy(&emb, &examples) <= init.cross_entropy(&emb, &examples));
    }

    #[test]
    fn empty_labelled_set_is_an_error() {
        let (emb, _) = two_gaussians(4);
        let state = DatasetState::new(emb.n(), 2);
        assert!(matches!(fit(&emb, &state, BINARY, &TrainConfig::default()), Err(Error::EmptyLabelled)));
    }

    #[test]
    fn single_class_training_is_valid() {
        let (emb, labels) = two_gaussians(5);
        let mut state = DatasetState::new(emb.n(), 2);
        state.reveal(&labels, &[0, 1, 2]).unwrap();
        let model = fit(&emb, &state, BINARY, &TrainConfig::default()).unwrap();
        let p = model.proba(emb.row(0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn closed_form_softmax() {
        let m = ProxyClassifier::zeros(3, 4);
        for p in m.proba(&[0.3, -2.0, 1.0, 5.0]) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let m = ProxyClassifier::from_parts(2, 2, vec![0.0; 4], vec![2f64.ln(), 0.0]).unwrap();
        let p = m.proba(&[1.0, 1.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn probabilities_match_independent_recomputation() {
        let m = ProxyClassifier::random(4, 5, 77);
        let mut rng = rng::stream(78, &[]);
        for _ in 0..200 {
            let x: Vec<f32> = (0..5).map(|_| rng.random_range(-3f32..3.)).collect();
            let p = m.proba(&x);
            let exps: Vec<f64> = (0..4)
                .map(|c| {
                    let mut z = m.bias()[c];
                    for j in 0..5 {
                        z += m.weights()[c * 5 + j] * x[j] as f64;
                    }
                    z.exp()
                })
                .collect();
            let total: f64 = exps.iter().sum();
            for c in 0..4 {
                assert!((p[c] - exps[c] / total).abs() <= 1e-9);
                assert!(p[c] > 0.0 && p[c] < 1.0);
            }
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn gradient_embedding_closed_form() {
        // p = [0.7, 0.3] via bias logit ln(7/3).
        let m = ProxyClassifier::from_parts(2, 2, vec![0.0; 4], vec![(7.0f64 / 3.0).ln(), 0.0]).unwrap();
        let g = m.gradient_embedding(&[1.0, 2.0]);
        let expected = [-0.3, -0.6, 0.3, 0.6];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let confident = ProxyClassifier::from_parts(2, 2, vec![0.0; 4], vec![60.0, 0.0]).unwrap();
        assert!(confident.gradient_embedding(&[1.0, 2.0]).iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn gradient_embedding_matches_finite_differences() {
        let m = ProxyClassifier::random(3, 4, 5);
        let x = [0.4f32, -1.1, 0.7, 2.0];
        let g = m.gradient_embedding(&x);
        let y = argmax(&m.proba(&x)) as u32;
        let h = 1e-5;
        for k in 0..12 {
            let mut plus = m.clone();
            plus.weights[k] += h;
            let mut minus = m.clone();
            minus.weights[k] -= h;
            let emb = EmbeddingMatrix::from_rows(&[x]).unwrap();
            let fd = (plus.cross_entropy(&emb, &[(0, y)]) - minus.cross_entropy(&emb, &[(0, y)])) / (2.0 * h);
            let rel = (fd - g[k]).abs() / g[k].abs().max(1e-12);
            assert!(rel <= 1e-4, "entry {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn gradient_norm_shrinks_with_confidence() {
        let x = [1.0f32, -0.5, 2.0];
        let mut last = f64::INFINITY;
        for p in [0.5f64, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99] {
            let m = ProxyClassifier::from_parts(2, 3, vec![0.0; 6], vec![(p / (1.0 - p)).ln(), 0.0]).unwrap();
            let norm = m.gradient_embedding(&x).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm < last);
            last = norm;
        }
    }

    #[test]
    fn f1_examples() {
        let truth = [1, 1, 1, 0, 0, 0];
        assert_eq!(macro_f1(&truth, &truth, &[1]).unwrap(), 1.0);
        assert_eq!(macro_f1(&[0; 6], &truth, &[1]).unwrap(), 0.0);
        // TP=2, FP=1, FN=1.
        let pred = [1, 1, 0, 1, 0, 0];
        assert!((macro_f1(&pred, &truth, &[1]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(macro_f1(&pred, &truth, &[]).is_err());
        // Absent and never predicted contributes zero.
        assert_eq!(macro_f1(&truth, &truth, &[1, 2]).unwrap(), 0.5);
    }
}
