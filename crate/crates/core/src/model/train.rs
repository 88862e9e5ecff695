use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, Dropout, Model, TrainConfig, Variant};
use crate::error::{dim_err, Error, Result};
use crate::tensor::{ParamSet, Real};
use crate::text::{PairBatches, PairMode, ParagraphBatches};

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &ParamSet<F>, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |p: &crate::tensor::Param<F>| vec![F::zero(); p.tensor.len()];
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            steps: 0,
            m: params.iter().map(|(_, p)| zeros(p)).collect(),
            v: params.iter().map(|(_, p)| zeros(p)).collect(),
        }
    }

    pub fn from_config(params: &ParamSet<F>, config: &TrainConfig) -> Self {
        Self::new(params, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    }

    /// Applies one update from the gradient buffers of all trainable parameters.
    pub fn update(&mut self, params: &mut ParamSet<F>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(dim_err("adam", "parameter count", self.m.len(), params.len()));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c = |x: f64| F::from_f64_lossy(x);
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let (one_b1, one_b2) = (c(1.0 - self.beta1), c(1.0 - self.beta2));
        let bc1 = c(1.0 - self.beta1.powi(t));
        let bc2 = c(1.0 - self.beta2.powi(t));
        let (lr, eps) = (c(self.learning_rate), c(self.eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if m.len() != p.tensor.len() {
                return Err(dim_err("adam", "moment length", p.tensor.len(), m.len()));
            }
            if !p.trainable {
                continue;
            }
            let Some(g) = p.tensor.grad().map(<[F]>::to_vec) else { continue };
            for (i, w) in p.tensor.values_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint 2-norm is at most `clip_norm`.
/// Returns the norm before clipping; gradients are untouched when it is within bounds.
pub fn clip_gradients<F: Real>(params: &mut ParamSet<F>, clip_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > clip_norm {
        let s = F::from_f64_lossy(clip_norm / norm);
        for p in params.iter_mut() {
            if p.tensor.grad().is_some() {
                p.tensor.grad_mut().iter_mut().for_each(|g| *g = *g * s);
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Forward, backward, clip, Adam. Dropout draws from `rng`.
pub fn train_step<F: Real>(
    model: &mut Model<F>,
    batch: &Batch,
    adam: &mut Adam<F>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepStats> {
    let dropout = (config.dropout > 0.0).then_some(Dropout {
        rate: config.dropout,
        rng,
    });
    let (loss, grads) = model.loss_and_grads(&model.params, batch, dropout)?;
    if !loss.is_finite() {
        let culprit = model
            .params
            .first_non_finite()
            .unwrap_or_else(|| "none (all parameters finite)".into());
        return Err(Error::NonFinite(format!("loss is {loss}; first non-finite tensor: {culprit}")));
    }
    model.params.zero_grad();
    model.params.accumulate(&grads);
    drop(grads);
    if let Some(name) = model.params.first_non_finite() {
        return Err(Error::NonFinite(format!("first non-finite tensor: {name}")));
    }
    let grad_norm = clip_gradients(&mut model.params, config.clip_norm);
    adam.update(&mut model.params)?;
    Ok(StepStats {
        loss: loss.as_f64(),
        grad_norm,
    })
}

/// Batches for one variant: sentence pairs, or fixed-length paragraph chunks.
#[derive(Clone, Debug)]
pub enum BatchStream {
    Pairs(PairBatches),
    Paragraphs(ParagraphBatches),
}

impl BatchStream {
    /// `min_len` is the encoder's largest window.
    pub fn new(variant: Variant, paragraphs: &[Vec<Vec<usize>>], config: &TrainConfig, min_len: usize) -> Result<Self> {
        Ok(match variant {
            Variant::Autoencoder => {
                Self::Pairs(PairBatches::new(paragraphs, PairMode::SelfPair, config.batch_size, min_len)?)
            }
            Variant::FuturePredictor | Variant::Composite => {
                Self::Pairs(PairBatches::new(paragraphs, PairMode::Next, config.batch_size, min_len)?)
            }
            Variant::Hierarchical => Self::Paragraphs(ParagraphBatches::new(
                paragraphs,
                config.sentences_per_paragraph,
                config.batch_size,
                min_len,
            )?),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        match self {
            Self::Pairs(p) => p.batches_per_epoch(),
            Self::Paragraphs(p) => p.batches_per_epoch(),
        }
    }

    pub fn epoch(&self, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
        Ok(match self {
            Self::Pairs(p) => p
                .epoch(seed, epoch)?
                .into_iter()
                .map(|(source, target)| Batch::Pairs { source, target })
                .collect(),
            Self::Paragraphs(p) => p.epoch(seed, epoch)?.into_iter().map(Batch::Paragraphs).collect(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
}

/// Runs `config.max_steps` steps over reshuffled epochs. With `log`, writes one
/// `step<TAB>loss<TAB>grad_norm` line per step.
pub fn train<F: Real>(
    model: &mut Model<F>,
    stream: &BatchStream,
    config: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    config.validate()?;
    let mut adam = Adam::from_config(&model.params, config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::MAX);
    let mut report = TrainReport::default();
    let mut epoch = 0u64;
    while report.losses.len() < config.max_steps {
        for batch in stream.epoch(config.seed, epoch)? {
            if report.losses.len() >= config.max_steps {
                break;
            }
            let stats = train_step(model, &batch, &mut adam, config, &mut rng)?;
            report.losses.push(stats.loss);
            report.grad_norms.push(stats.grad_norm);
            let step = report.losses.len();
            if let Some(w) = log.as_mut() {
                writeln!(w, "{step}\t{}\t{}", stats.loss, stats.grad_norm)?;
            }
            if step % 100 == 0 {
                log::info!("step {step} loss {:.4} grad_norm {:.4}", stats.loss, stats.grad_norm);
            }
        }
        epoch += 1;
    }
    Ok(report)
}
