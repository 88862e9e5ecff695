//! The four model variants and their training losses.

mod checkpoint;
mod config;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, Container, NamedTensor, CHECKPOINT_VERSION};
pub use config::{parse_kv, ModelDims, TrainConfig};
pub use train::{clip_gradients, train, train_step, Adam, BatchStream, StepStats, TrainReport};

use crate::decoder::{LstmState, ParagraphLstm, SentenceDecoder};
use crate::embeddings::EmbeddingTable;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Real, Tape, Var};
use crate::text::{ParagraphBatch, SentenceBatch, SOP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Autoencoder,
    FuturePredictor,
    Composite,
    Hierarchical,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Autoencoder,
        Variant::FuturePredictor,
        Variant::Composite,
        Variant::Hierarchical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Autoencoder => "autoencoder",
            Variant::FuturePredictor => "future_predictor",
            Variant::Composite => "composite",
            Variant::Hierarchical => "hierarchical",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Decoder heads; the multiplicity is fixed by the variant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Heads {
    Autoencoder(SentenceDecoder),
    FuturePredictor(SentenceDecoder),
    Composite {
        reconstruct: SentenceDecoder,
        future: SentenceDecoder,
    },
    Hierarchical {
        paragraph: ParagraphLstm,
        sentence: SentenceDecoder,
    },
}

/// One training batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Batch {
    /// Encoder input and the following sentence (or itself for the autoencoder).
    Pairs { source: SentenceBatch, target: SentenceBatch },
    Paragraphs(ParagraphBatch),
}

impl Batch {
    pub fn batch_size(&self) -> usize {
        match self {
            Batch::Pairs { source, .. } => source.batch_size(),
            Batch::Paragraphs(p) => p.batch_size(),
        }
    }
}

/// Inverted dropout applied to sentence codes during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply<F: Real>(&mut self, tape: &mut Tape<'_, F>, z: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(z);
        }
        let keep = 1.0 - self.rate;
        let scale = F::from_f64_lossy(1.0 / keep);
        let n = tape.value(z).len();
        let mask = (0..n)
            .map(|_| if self.rng.random::<f64>() < keep { scale } else { F::zero() })
            .collect();
        tape.mul_const(z, mask)
    }
}

fn maybe_dropout<F: Real>(dropout: &mut Option<Dropout<'_>>, tape: &mut Tape<'_, F>, z: Var) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(tape, z),
        None => Ok(z),
    }
}

/// Encoder, decoder heads and the parameters they index.
#[derive(Clone, Debug)]
pub struct Model<F: Real> {
    pub dims: ModelDims,
    pub params: ParamSet<F>,
    pub encoder: Encoder,
    pub heads: Heads,
}

impl<F: Real> Model<F> {
    /// Parameters are drawn from one seeded stream in a fixed order: embedding
    /// table, encoder filters, decoders.
    pub fn init(variant: Variant, dims: &ModelDims, init_range: f64, forget_bias: f64, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let table = EmbeddingTable::init(
            &mut params,
            dims.vocab_size,
            dims.embed_dim,
            dims.embedding_mode,
            init_range,
            &mut rng,
        );
        let encoder = Encoder::init(&mut params, table, &dims.windows, dims.maps_per_window, init_range, &mut rng)?;
        let z_dim = encoder.output_dim();
        let (k, v) = (dims.embed_dim, dims.vocab_size);
        let decoder = |params: &mut ParamSet<F>, name: &str, cond: usize, rng: &mut ChaCha8Rng| {
            SentenceDecoder::init(params, name, k, cond, dims.hidden, v, init_range, forget_bias, rng)
        };
        let heads = match variant {
            Variant::Autoencoder => Heads::Autoencoder(decoder(&mut params, "reconstruct", z_dim, &mut rng)?),
            Variant::FuturePredictor => Heads::FuturePredictor(decoder(&mut params, "future", z_dim, &mut rng)?),
            Variant::Composite => {
                let reconstruct = decoder(&mut params, "reconstruct", z_dim, &mut rng)?;
                let future = decoder(&mut params, "future", z_dim, &mut rng)?;
                Heads::Composite { reconstruct, future }
            }
            Variant::Hierarchical => {
                let paragraph =
                    ParagraphLstm::init(&mut params, z_dim, dims.paragraph_hidden, init_range, forget_bias, &mut rng)?;
                let sentence = decoder(&mut params, "sentence", dims.paragraph_hidden, &mut rng)?;
                Heads::Hierarchical { paragraph, sentence }
            }
        };
        Ok(Self {
            dims: dims.clone(),
            params,
            encoder,
            heads,
        })
    }

    pub fn variant(&self) -> Variant {
        match self.heads {
            Heads::Autoencoder(_) => Variant::Autoencoder,
            Heads::FuturePredictor(_) => Variant::FuturePredictor,
            Heads::Composite { .. } => Variant::Composite,
            Heads::Hierarchical { .. } => Variant::Hierarchical,
        }
    }

    pub fn embedding(&self) -> &EmbeddingTable {
        &self.encoder.embedding
    }

    pub fn z_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            dims: self.dims.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            heads: self.heads.clone(),
        }
    }

    /// Decoder that maps a sentence code back to words: the reconstruction
    /// head when there is one, otherwise the next-sentence head.
    pub fn sentence_decoder(&self) -> Option<&SentenceDecoder> {
        match &self.heads {
            Heads::Autoencoder(d) | Heads::FuturePredictor(d) => Some(d),
            Heads::Composite { reconstruct, .. } => Some(reconstruct),
            Heads::Hierarchical { .. } => None,
        }
    }

    pub fn encode(&self, sentence: &[usize]) -> Result<Vec<F>> {
        self.encoder.encode(&self.params, sentence)
    }

    pub fn greedy_decode(&self, z: &[F], max_len: usize) -> Result<Vec<usize>> {
        let dec = self
            .sentence_decoder()
            .ok_or_else(|| Error::Contract("the hierarchical model has no sentence-code decoder".into()))?;
        dec.greedy_decode(&self.params, self.embedding(), z, max_len)
    }

    fn minibatch_scale(batch_size: usize) -> F {
        F::one() / F::from_usize(batch_size).expect("batch size")
    }

    /// `nll(target | cond) / batch`: one term of the batch loss.
    pub fn decoder_loss(
        &self,
        tape: &mut Tape<'_, F>,
        decoder: &SentenceDecoder,
        cond: Var,
        target: &SentenceBatch,
    ) -> Result<Var> {
        let nll = decoder.nll(tape, self.embedding(), cond, target)?;
        Ok(tape.scale(nll, Self::minibatch_scale(target.batch_size())))
    }

    /// Summed token NLL averaged over batch rows. Terms are added left to right
    /// in the order returned by [`Model::loss_terms`].
    pub fn batch_loss(&self, tape: &mut Tape<'_, F>, batch: &Batch, mut dropout: Option<Dropout<'_>>) -> Result<Var> {
        match (&self.heads, batch) {
            (Heads::Autoencoder(dec), Batch::Pairs { source, .. }) => {
                let z = self.encoder.forward_batch(tape, source)?;
                let z = maybe_dropout(&mut dropout, tape, z)?;
                self.decoder_loss(tape, dec, z, source)
            }
            (Heads::FuturePredictor(dec), Batch::Pairs { source, target }) => {
                let z = self.encoder.forward_batch(tape, source)?;
                let z = maybe_dropout(&mut dropout, tape, z)?;
                self.decoder_loss(tape, dec, z, target)
            }
            (Heads::Composite { reconstruct, future }, Batch::Pairs { source, target }) => {
                let z = self.encoder.forward_batch(tape, source)?;
                let z = maybe_dropout(&mut dropout, tape, z)?;
                let ae = self.decoder_loss(tape, reconstruct, z, source)?;
                let fp = self.decoder_loss(tape, future, z, target)?;
                tape.add(ae, fp)
            }
            (Heads::Hierarchical { paragraph, sentence }, Batch::Paragraphs(p)) => {
                self.paragraph_loss(tape, paragraph, sentence, p, &mut dropout)
            }
            (_, _) => Err(Error::Contract(format!(
                "{} model cannot train on this batch type",
                self.variant()
            ))),
        }
    }

    fn paragraph_loss(
        &self,
        tape: &mut Tape<'_, F>,
        paragraph: &ParagraphLstm,
        sentence: &SentenceDecoder,
        batch: &ParagraphBatch,
        dropout: &mut Option<Dropout<'_>>,
    ) -> Result<Var> {
        let b = batch.batch_size();
        if batch.sentences.is_empty() || b == 0 {
            return Err(Error::Contract("empty paragraph batch".into()));
        }
        let sop = vec![[SOP]; b];
        let z0 = self.encoder.forward(tape, &sop)?;
        let mut z_prev = maybe_dropout(dropout, tape, z0)?;
        let (mut h, mut c) = paragraph.initial_state(tape, b);
        let mut loss: Option<Var> = None;
        for (l, target) in batch.sentences.iter().enumerate() {
            if target.batch_size() != b {
                return Err(Error::Contract("paragraph batch rows differ across sentences".into()));
            }
            (h, c) = paragraph.step_tape(tape, h, c, z_prev)?;
            let part = self.decoder_loss(tape, sentence, h, target)?;
            loss = Some(match loss {
                None => part,
                Some(acc) => tape.add(acc, part)?,
            });
            if l + 1 < batch.sentences.len() {
                let z = self.encoder.forward_batch(tape, target)?;
                z_prev = maybe_dropout(dropout, tape, z)?;
            }
        }
        Ok(loss.expect("non-empty paragraph"))
    }

    /// Loss without dropout, evaluated on a throwaway tape.
    pub fn loss(&self, batch: &Batch) -> Result<F> {
        let mut tape = Tape::with_params(&self.params);
        let loss = self.batch_loss(&mut tape, batch, None)?;
        Ok(tape.scalar(loss))
    }

    /// Loss and parameter gradients for an arbitrary parameter set with this
    /// model's layout.
    pub fn loss_and_grads(
        &self,
        params: &ParamSet<F>,
        batch: &Batch,
        dropout: Option<Dropout<'_>>,
    ) -> Result<(F, crate::tensor::Gradients<F>)> {
        let mut tape = Tape::with_params(params);
        let loss = self.batch_loss(&mut tape, batch, dropout)?;
        Ok((tape.scalar(loss), tape.backward(loss)))
    }

    /// The additive terms of the batch loss, each computed sentence by sentence
    /// with the plain decoder: `[reconstruction]`, `[next sentence]`,
    /// `[reconstruction, next sentence]`, or one term per paragraph position.
    pub fn loss_terms(&self, batch: &Batch) -> Result<Vec<F>> {
        let emb = self.embedding();
        let codes = |sb: &SentenceBatch| -> Result<Vec<Vec<F>>> {
            (0..sb.batch_size()).map(|r| self.encode(sb.content(r))).collect()
        };
        let term = |dec: &SentenceDecoder, conds: &[Vec<F>], target: &SentenceBatch| -> Result<F> {
            Ok(dec.batch_nll(&self.params, emb, conds, target)? * Self::minibatch_scale(target.batch_size()))
        };
        match (&self.heads, batch) {
            (Heads::Autoencoder(dec), Batch::Pairs { source, .. }) => Ok(vec![term(dec, &codes(source)?, source)?]),
            (Heads::FuturePredictor(dec), Batch::Pairs { source, target }) => {
                Ok(vec![term(dec, &codes(source)?, target)?])
            }
            (Heads::Composite { reconstruct, future }, Batch::Pairs { source, target }) => {
                let z = codes(source)?;
                Ok(vec![term(reconstruct, &z, source)?, term(future, &z, target)?])
            }
            (Heads::Hierarchical { paragraph, sentence }, Batch::Paragraphs(p)) => {
                let b = p.batch_size();
                let z0 = self.encode(&[SOP])?;
                let mut z_prev = vec![z0; b];
                let mut states = vec![LstmState::zeros(paragraph.hidden()); b];
                let mut terms = Vec::with_capacity(p.num_sentences());
                for target in &p.sentences {
                    for (state, z) in states.iter_mut().zip(&z_prev) {
                        *state = paragraph.paragraph_step(&self.params, state, z)?;
                    }
                    let hs: Vec<Vec<F>> = states.iter().map(|s| s.h.clone()).collect();
                    terms.push(term(sentence, &hs, target)?);
                    z_prev = codes(target)?;
                }
                Ok(terms)
            }
            (_, _) => Err(Error::Contract(format!(
                "{} model cannot score this batch type",
                self.variant()
            ))),
        }
    }

    /// `log p(paragraph)` of one paragraph under the hierarchical model.
    pub fn paragraph_log_prob(&self, sentences: &[Vec<usize>]) -> Result<F> {
        let Heads::Hierarchical { paragraph, sentence } = &self.heads else {
            return Err(Error::Contract("paragraph likelihood needs the hierarchical model".into()));
        };
        let mut state = LstmState::zeros(paragraph.hidden());
        let mut z = self.encode(&[SOP])?;
        let mut total = F::zero();
        for s in sentences {
            state = paragraph.paragraph_step(&self.params, &state, &z)?;
            let mut target = s.clone();
            target.push(crate::text::EOS);
            total = total + sentence.conditional_sentence_log_prob(&self.params, self.embedding(), &target, &state.h)?;
            z = self.encode(s)?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::paragraph_batch;

    fn dims(vocab: usize) -> ModelDims {
        ModelDims {
            vocab_size: vocab,
            embed_dim: 5,
            windows: vec![2, 3],
            maps_per_window: 3,
            hidden: 6,
            paragraph_hidden: 4,
            ..ModelDims::default()
        }
    }

    fn pair_batch() -> Batch {
        let src = SentenceBatch::new(&[vec![5usize, 6, 7], vec![8, 9]], 3).unwrap();
        let tgt = SentenceBatch::new(&[vec![9usize, 5], vec![6, 7, 8, 5]], 3).unwrap();
        Batch::Pairs { source: src, target: tgt }
    }

    fn para_batch() -> Batch {
        let paras = [
            vec![vec![5usize, 6], vec![7, 8, 9], vec![6]],
            vec![vec![9usize], vec![5, 5, 6, 7], vec![8, 9]],
        ];
        Batch::Paragraphs(paragraph_batch(paras.iter(), 3).unwrap())
    }

    #[test]
    fn heads_match_variant() {
        for v in Variant::ALL {
            let m = Model::<f64>::init(v, &dims(12), 0.1, 3.0, 1).unwrap();
            assert_eq!(m.variant(), v);
            assert_eq!(Variant::parse(v.as_str()).unwrap(), v);
        }
        assert!(Variant::parse("skipthought").is_err());
    }

    #[test]
    fn batch_type_mismatch_is_contract_error() {
        let ae = Model::<f64>::init(Variant::Autoencoder, &dims(12), 0.1, 3.0, 1).unwrap();
        assert!(matches!(ae.loss(&para_batch()), Err(Error::Contract(_))));
        let hier = Model::<f64>::init(Variant::Hierarchical, &dims(12), 0.1, 3.0, 1).unwrap();
        assert!(matches!(hier.loss(&pair_batch()), Err(Error::Contract(_))));
    }

    #[test]
    fn loss_is_left_fold_of_terms() {
        for v in Variant::ALL {
            let m = Model::<f64>::init(v, &dims(12), 0.3, 3.0, 2).unwrap();
            let batch = if v == Variant::Hierarchical { para_batch() } else { pair_batch() };
            let terms = m.loss_terms(&batch).unwrap();
            let folded = terms[1..].iter().fold(terms[0], |acc, &t| acc + t);
            assert_eq!(m.loss(&batch).unwrap().to_bits(), folded.to_bits(), "{v}");
        }
    }

    #[test]
    fn uniform_logits_give_length_times_log_vocab() {
        let mut m = Model::<f64>::init(Variant::Autoencoder, &dims(12), 0.3, 3.0, 2).unwrap();
        let Heads::Autoencoder(dec) = &m.heads else { unreachable!() };
        let out = dec.output;
        m.params.tensor_mut(out).values_mut().iter_mut().for_each(|v| *v = 0.0);
        let src = SentenceBatch::new(&[vec![5usize, 6, 7, 8]], 3).unwrap();
        let batch = Batch::Pairs { source: src.clone(), target: src };
        let expected = 5.0 * 12f64.ln();
        assert!((m.loss(&batch).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn hierarchical_terms_match_paragraph_log_prob() {
        let m = Model::<f64>::init(Variant::Hierarchical, &dims(12), 0.3, 3.0, 3).unwrap();
        let para = vec![vec![5usize, 6], vec![7, 8, 9], vec![6]];
        let Batch::Paragraphs(pb) = Batch::Paragraphs(paragraph_batch([&para], 3).unwrap()) else {
            unreachable!()
        };
        let terms = m.loss_terms(&Batch::Paragraphs(pb)).unwrap();
        let lp = m.paragraph_log_prob(&para).unwrap();
        let sum: f64 = terms.iter().sum();
        assert!((sum + lp).abs() < 1e-12);
    }
}
