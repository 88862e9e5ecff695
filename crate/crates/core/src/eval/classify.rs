use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::model::{clip_gradients, Adam, Model};
use crate::tensor::{softmax_values, Real, Tape, Tensor};

/// Fixed train/test split: a seeded shuffle, the first `test_fraction` of which is held out.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_test = (n as f64 * test_fraction).round() as usize;
    if n >= 2 {
        n_test = n_test.clamp(1, n - 1);
    }
    let train = order.split_off(n_test.min(n));
    (train, order)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            epochs: 300,
            learning_rate: 0.5,
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Softmax regression on standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub classes: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `dim x classes`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    fn standardizer(rows: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..dim)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        (mean, scale)
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let xs = self.standardize(x);
        let mut out = self.bias.clone();
        for (j, v) in xs.iter().enumerate() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += v * self.weights[j * self.classes + c];
            }
        }
        out
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax_values(&self.logits(x), self.classes)
    }

    /// Most probable class; ties go to the lower class id.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn accuracy(&self, rows: &[&[f64]], labels: &[usize]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let hits = rows.iter().zip(labels).filter(|(x, &y)| self.predict(x) == y).count();
        hits as f64 / rows.len() as f64
    }

    /// Full-batch gradient descent on mean cross-entropy against `targets`
    /// (`n x classes` distributions) plus `l2/2 * |W|^2`. Weights start at zero
    /// and biases at the log class frequencies of the targets.
    fn fit(rows: &[&[f64]], targets: &[Vec<f64>], classes: usize, config: &ClassifierConfig) -> Self {
        let (mean, scale) = Self::standardizer(rows);
        let dim = mean.len();
        let n = rows.len() as f64;
        let bias = (0..classes)
            .map(|c| {
                let freq = targets.iter().map(|t| t[c]).sum::<f64>() / n;
                freq.max(1e-6).ln()
            })
            .collect();
        let mut model = Self {
            classes,
            mean,
            scale,
            weights: vec![0.0; dim * classes],
            bias,
        };
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| model.standardize(r)).collect();
        for _ in 0..config.epochs {
            let mut gw: Vec<f64> = model.weights.iter().map(|w| config.l2 * w).collect();
            let mut gb = vec![0.0; classes];
            for (x, t) in xs.iter().zip(targets) {
                let mut logits = model.bias.clone();
                for (j, v) in x.iter().enumerate() {
                    for (c, o) in logits.iter_mut().enumerate() {
                        *o += v * model.weights[j * classes + c];
                    }
                }
                let p = softmax_values(&logits, classes);
                for c in 0..classes {
                    let d = (p[c] - t[c]) / n;
                    gb[c] += d;
                    for (j, v) in x.iter().enumerate() {
                        gw[j * classes + c] += d * v;
                    }
                }
            }
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= config.learning_rate * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= config.learning_rate * g;
            }
        }
        model
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierReport {
    pub classifier: LinearClassifier,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
}

/// Logistic regression on fixed features, scored on a held-out split.
pub fn train_linear_classifier(
    features: &[Vec<f64>],
    labels: &[usize],
    config: &ClassifierConfig,
) -> Result<ClassifierReport> {
    if features.len() != labels.len() {
        return Err(dim_err("train_linear_classifier", "labels", features.len(), labels.len()));
    }
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateLabels(format!("{} distinct label(s)", distinct.len())));
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().position(|f| f.len() != dim) {
        return Err(dim_err("train_linear_classifier", "feature width", dim, features[bad].len()));
    }
    let classes = distinct[distinct.len() - 1] + 1;
    let (train, test) = split_indices(features.len(), config.test_fraction, config.seed);
    let rows = |idx: &[usize]| idx.iter().map(|&i| features[i].as_slice()).collect::<Vec<_>>();
    let ys = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let targets: Vec<Vec<f64>> = train
        .iter()
        .map(|&i| (0..classes).map(|c| if c == labels[i] { 1.0 } else { 0.0 }).collect())
        .collect();
    let classifier = LinearClassifier::fit(&rows(&train), &targets, classes, config);
    Ok(ClassifierReport {
        train_accuracy: classifier.accuracy(&rows(&train), &ys(&train)),
        test_accuracy: classifier.accuracy(&rows(&test), &ys(&test)),
        train_size: train.len(),
        test_size: test.len(),
        classifier,
    })
}

/// Distribution over the anchors 1..=5 whose expectation is `y`.
pub fn relatedness_target(y: f64) -> Result<[f64; 5]> {
    if !(1.0..=5.0).contains(&y) {
        return Err(Error::ScoreRange(y));
    }
    let mut t = [0.0; 5];
    let (lo, hi) = (y.floor(), y.ceil());
    if lo == hi {
        t[lo as usize - 1] = 1.0;
    } else {
        t[lo as usize - 1] = hi - y;
        t[hi as usize - 1] = y - lo;
    }
    Ok(t)
}

/// `sum_i i * p_i` over anchors 1..=5.
pub fn expected_score(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(i, &v)| (i + 1) as f64 * v).sum()
}

/// Linear layer and softmax over the five score anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct RelatednessHead {
    pub classifier: LinearClassifier,
}

impl RelatednessHead {
    pub fn predict(&self, features: &[f64]) -> f64 {
        expected_score(&self.classifier.predict_proba(features))
    }
}

/// Trains the head by cross-entropy against the anchor distributions of the gold scores.
pub fn train_relatedness(features: &[Vec<f64>], scores: &[f64], config: &ClassifierConfig) -> Result<RelatednessHead> {
    if features.len() != scores.len() || features.is_empty() {
        return Err(dim_err("train_relatedness", "scores", features.len(), scores.len()));
    }
    let targets = scores
        .iter()
        .map(|&y| relatedness_target(y).map(|t| t.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    Ok(RelatednessHead {
        classifier: LinearClassifier::fit(&rows, &targets, 5, config),
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            learning_rate: 1e-3,
            batch_size: 32,
            clip_norm: 5.0,
            test_fraction: 0.25,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneReport {
    pub pretrained_accuracy: f64,
    pub random_accuracy: f64,
}

impl FinetuneReport {
    pub fn gap(&self) -> f64 {
        self.pretrained_accuracy - self.random_accuracy
    }
}

/// Trains encoder and a softmax head end-to-end from two initializations with
/// the same split, seeds and budget, and reports held-out accuracy of each.
pub fn finetune_classifier<F: Real>(
    pretrained: &Model<F>,
    random: &Model<F>,
    sentences: &[Vec<usize>],
    labels: &[usize],
    config: &FinetuneConfig,
) -> Result<FinetuneReport> {
    if sentences.len() != labels.len() {
        return Err(dim_err("finetune_classifier", "labels", sentences.len(), labels.len()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(Error::DegenerateLabels("fewer than two classes".into()));
    }
    let (train, test) = split_indices(sentences.len(), config.test_fraction, config.seed);
    finetune_on_split(pretrained, random, sentences, labels, &train, &test, config)
}

/// As [`finetune_classifier`] with a caller-chosen split, for tasks whose test
/// items must stay disjoint from training in some structured way.
pub fn finetune_on_split<F: Real>(
    pretrained: &Model<F>,
    random: &Model<F>,
    sentences: &[Vec<usize>],
    labels: &[usize],
    train: &[usize],
    test: &[usize],
    config: &FinetuneConfig,
) -> Result<FinetuneReport> {
    if sentences.len() != labels.len() {
        return Err(dim_err("finetune_on_split", "labels", sentences.len(), labels.len()));
    }
    if let Some(&bad) = train.iter().chain(test).find(|&&i| i >= sentences.len()) {
        return Err(Error::Protocol(format!("split index {bad} out of range")));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(Error::DegenerateLabels("fewer than two classes".into()));
    }
    if train.is_empty() {
        return Err(Error::Protocol("empty training split".into()));
    }
    Ok(FinetuneReport {
        pretrained_accuracy: finetune_one(pretrained, sentences, labels, classes, train, test, config)?,
        random_accuracy: finetune_one(random, sentences, labels, classes, train, test, config)?,
    })
}

fn finetune_one<F: Real>(
    model: &Model<F>,
    sentences: &[Vec<usize>],
    labels: &[usize],
    classes: usize,
    train: &[usize],
    test: &[usize],
    config: &FinetuneConfig,
) -> Result<f64> {
    let mut params = model.params.clone();
    let z_dim = model.z_dim();
    let head_w = params.add("head.weight", Tensor::zeros(vec![z_dim, classes]));
    let prior: Vec<F> = (0..classes)
        .map(|c| {
            let freq = train.iter().filter(|&&i| labels[i] == c).count() as f64 / train.len() as f64;
            F::from_f64_lossy(freq.max(1e-6).ln())
        })
        .collect();
    let head_b = params.add("head.bias", Tensor::new(vec![classes], prior)?);
    let encoder = &model.encoder;
    let forward = |tape: &mut Tape<'_, F>, idx: &[usize]| -> Result<crate::tensor::Var> {
        let rows: Vec<&[usize]> = idx.iter().map(|&i| sentences[i].as_slice()).collect();
        let z = encoder.forward(tape, &rows)?;
        let w = tape.param(head_w);
        let b = tape.param(head_b);
        let logits = tape.matmul(z, w)?;
        tape.add_row(logits, b)
    };

    let mut adam = Adam::new(&params, config.learning_rate, 0.9, 0.999, 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = train.to_vec();
    let mut cursor = order.len();
    for _ in 0..config.steps {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size.max(1)).min(order.len());
        let idx = &order[cursor..end];
        cursor = end;
        let grads = {
            let mut tape = Tape::with_params(&params);
            let logits = forward(&mut tape, idx)?;
            let targets: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let ones = vec![F::one(); idx.len()];
            let nll = tape.cross_entropy(logits, &targets, &ones)?;
            let loss = tape.scale(nll, F::one() / F::from_usize(idx.len()).expect("batch"));
            tape.backward(loss)
        };
        params.zero_grad();
        params.accumulate(&grads);
        clip_gradients(&mut params, config.clip_norm);
        adam.update(&mut params)?;
    }

    if test.is_empty() {
        return Ok(0.0);
    }
    let mut tape = Tape::with_params(&params);
    let logits = forward(&mut tape, test)?;
    let values = tape.value(logits);
    let hits = test
        .iter()
        .enumerate()
        .filter(|(r, &i)| {
            let row: Vec<f64> = values.row(*r).iter().map(|v| v.as_f64()).collect();
            argmax(&row) == labels[i]
        })
        .count();
    Ok(hits as f64 / test.len() as f64)
}
