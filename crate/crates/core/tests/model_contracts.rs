mod common;

use cnnlstm::decoder::{LstmParams, LstmState, ParagraphLstm, SentenceDecoder};
use cnnlstm::embeddings::{EmbeddingMode, EmbeddingTable};
use cnnlstm::encoder::Encoder;
use cnnlstm::model::{Batch, Heads, Model, ModelDims, Variant};
use cnnlstm::tensor::{ParamSet, Real, Tape};
use cnnlstm::text::{SentenceBatch, EOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spread<F: Real>(params: &mut ParamSet<F>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in params.iter_mut() {
        for v in p.tensor.values_mut() {
            *v = F::from_f64_lossy(rng.random_range(-1.0..1.0));
        }
    }
}

/// A decoder over exactly three tokens, one of which is `<eos>`, plus a
/// paragraph LSTM producing its alternative conditioning vector.
struct ThreeTokenWorld<F: Real> {
    params: ParamSet<F>,
    table: EmbeddingTable,
    decoder: SentenceDecoder,
    paragraph: ParagraphLstm,
}

impl<F: Real> ThreeTokenWorld<F> {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let table = EmbeddingTable::init(&mut params, 3, 4, EmbeddingMode::Learned, 0.1, &mut rng);
        let decoder = SentenceDecoder::init(&mut params, "dec", 4, 6, 5, 3, 0.1, 3.0, &mut rng).unwrap();
        let paragraph = ParagraphLstm::init(&mut params, 6, 6, 0.1, 3.0, &mut rng).unwrap();
        spread(&mut params, seed + 1);
        Self { params, table, decoder, paragraph }
    }

    fn z(&self, seed: u64) -> Vec<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..6).map(|_| F::from_f64_lossy(rng.random_range(-2.0..2.0))).collect()
    }

    fn h_p(&self, seed: u64) -> Vec<F> {
        let mut state = LstmState::zeros(6);
        for s in 0..3 {
            state = self.paragraph.paragraph_step(&self.params, &state, &self.z(seed + s)).unwrap();
        }
        state.h
    }

    fn p_seq(&self, tokens: &[usize], cond: &[F]) -> f64 {
        self.decoder
            .sequence_log_prob(&self.params, &self.table, tokens, cond)
            .unwrap()
            .as_f64()
            .exp()
    }

    fn p_sentence(&self, tokens: &[usize], cond: &[F], paragraph: bool) -> f64 {
        let lp = if paragraph {
            self.decoder.conditional_sentence_log_prob(&self.params, &self.table, tokens, cond)
        } else {
            self.decoder.sentence_log_prob(&self.params, &self.table, tokens, cond)
        };
        lp.unwrap().as_f64().exp()
    }
}

fn check_normalization<F: Real>(tol: f64) {
    assert_eq!(EOS, 2);
    for seed in 0..5 {
        let world = ThreeTokenWorld::<F>::new(seed);
        for (paragraph, cond) in [(false, world.z(seed + 10)), (true, world.h_p(seed + 20))] {
            let one: f64 = (0..3).map(|a| world.p_seq(&[a], &cond)).sum();
            let two: f64 = (0..3)
                .flat_map(|a| (0..3).map(move |b| [a, b]))
                .map(|s| world.p_seq(&s, &cond))
                .sum();
            assert!((one - 1.0).abs() < tol, "length 1, paragraph={paragraph}: {one}");
            assert!((two - 1.0).abs() < tol, "length 2, paragraph={paragraph}: {two}");

            // Complete sentences of length <= 2 plus the mass of every longer one.
            let mut total = world.p_sentence(&[EOS], &cond, paragraph);
            for a in 0..2 {
                total += world.p_sentence(&[a, EOS], &cond, paragraph);
                for b in 0..2 {
                    total += world.p_seq(&[a, b], &cond);
                }
            }
            assert!((total - 1.0).abs() < tol, "sentences, paragraph={paragraph}: {total}");
        }
    }
}

#[test]
fn decoder_distributions_normalize_f64() {
    check_normalization::<f64>(1e-12);
}

#[test]
fn decoder_distributions_normalize_f32() {
    check_normalization::<f32>(1e-5);
}

fn small_dims() -> ModelDims {
    ModelDims {
        vocab_size: 40,
        embed_dim: 6,
        windows: vec![2, 3, 4],
        maps_per_window: 5,
        hidden: 12,
        paragraph_hidden: 10,
        ..ModelDims::default()
    }
}

fn fold(terms: &[f64]) -> f64 {
    terms.iter().fold(0.0, |acc, &t| acc + t)
}

#[test]
fn hierarchical_loss_is_sum_of_sentence_terms() {
    let dims = small_dims();
    let mut model = Model::<f64>::init(Variant::Hierarchical, &dims, 0.01, 3.0, 4).unwrap();
    spread(&mut model.params, 8);
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = common::paragraph_batch_of(
            seed,
            rng.random_range(1..5),
            rng.random_range(1..6),
            dims.vocab_size,
            4,
        );
        let terms = model.loss_terms(&batch).unwrap();
        let Batch::Paragraphs(p) = &batch else { unreachable!() };
        assert_eq!(terms.len(), p.num_sentences());
        assert_eq!(model.loss(&batch).unwrap().to_bits(), fold(&terms).to_bits(), "batch {seed}");
    }
}

#[test]
fn hierarchical_terms_match_paragraph_likelihood() {
    let dims = small_dims();
    let mut model = Model::<f64>::init(Variant::Hierarchical, &dims, 0.01, 3.0, 4).unwrap();
    spread(&mut model.params, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let paragraph: Vec<Vec<usize>> = (0..4).map(|_| common::random_sentence(&mut rng, 40, 1, 6)).collect();
    let batch = Batch::Paragraphs(cnnlstm::text::paragraph_batch([&paragraph], 4).unwrap());
    let nll = fold(&model.loss_terms(&batch).unwrap());
    let lp = model.paragraph_log_prob(&paragraph).unwrap();
    assert!((nll + lp).abs() < 1e-9 * nll.abs(), "{nll} vs {lp}");
}

#[test]
fn composite_loss_is_sum_of_both_heads() {
    let dims = small_dims();
    let mut model = Model::<f64>::init(Variant::Composite, &dims, 0.01, 3.0, 6).unwrap();
    spread(&mut model.params, 9);
    let Heads::Composite { reconstruct, future } = &model.heads else { unreachable!() };
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let batch = common::pair_batch(seed, rng.random_range(1..6), dims.vocab_size, 4);
        let Batch::Pairs { source, target } = &batch else { unreachable!() };
        let z: Vec<Vec<f64>> = (0..source.batch_size())
            .map(|r| model.encode(source.content(r)).unwrap())
            .collect();
        let b = 1.0 / source.batch_size() as f64;
        let ae = reconstruct.batch_nll(&model.params, model.embedding(), &z, source).unwrap() * b;
        let fp = future.batch_nll(&model.params, model.embedding(), &z, target).unwrap() * b;
        assert_eq!(model.loss_terms(&batch).unwrap(), vec![ae, fp]);
        assert_eq!(model.loss(&batch).unwrap().to_bits(), (ae + fp).to_bits(), "batch {seed}");
    }
}

#[test]
fn composite_decomposition_holds_in_f32() {
    let dims = small_dims();
    let mut model = Model::<f32>::init(Variant::Composite, &dims, 0.01, 3.0, 6).unwrap();
    spread(&mut model.params, 9);
    for seed in 0..20 {
        let batch = common::pair_batch(seed, 4, dims.vocab_size, 4);
        let terms = model.loss_terms(&batch).unwrap();
        assert_eq!(model.loss(&batch).unwrap().to_bits(), (terms[0] + terms[1]).to_bits());
    }
}

#[test]
fn encoder_is_invariant_to_padding() {
    let dims = small_dims();
    let mut model = Model::<f32>::init(Variant::Autoencoder, &dims, 0.01, 3.0, 2).unwrap();
    spread(&mut model.params, 5);
    let enc = &model.encoder;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let sentences: Vec<Vec<usize>> = (0..100).map(|_| common::random_sentence(&mut rng, 40, 1, 12)).collect();
    for s in &sentences {
        let t = s.len().max(enc.max_window());
        let short = enc.encode_padded(&model.params, s, t).unwrap();
        let long = enc.encode_padded(&model.params, s, t + 16).unwrap();
        assert_eq!(short.len(), dims.z_dim());
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&short), bits(&long), "{s:?}");
    }

    // A mixed-length batch on the tape pads every row to the longest one.
    let batch = SentenceBatch::new(&sentences, enc.max_window()).unwrap();
    let mut tape = Tape::with_params(&model.params);
    let z = enc.forward_batch(&mut tape, &batch).unwrap();
    for (r, s) in sentences.iter().enumerate() {
        let alone = enc.encode(&model.params, s).unwrap();
        assert_eq!(tape.value(z).row(r), alone.as_slice());
    }
}

#[test]
fn code_width_is_windows_times_maps() {
    for (windows, d) in [(vec![3, 4, 5], 800), (vec![2], 7), (vec![1, 2, 3, 4], 3)] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::<f32>::new();
        let table = EmbeddingTable::init(&mut params, 30, 4, EmbeddingMode::Learned, 0.01, &mut rng);
        let enc = Encoder::init(&mut params, table, &windows, d, 0.01, &mut rng).unwrap();
        assert_eq!(enc.output_dim(), windows.len() * d);
        assert_eq!(enc.encode(&params, &[7, 8, 9, 10, 11]).unwrap().len(), windows.len() * d);
    }
    let full = ModelDims { windows: vec![3, 4, 5], maps_per_window: 800, ..ModelDims::default() };
    assert_eq!(full.z_dim(), 2400);
}

fn lstms(heads: &Heads) -> Vec<&LstmParams> {
    match heads {
        Heads::Autoencoder(d) | Heads::FuturePredictor(d) => vec![&d.lstm],
        Heads::Composite { reconstruct, future } => vec![&reconstruct.lstm, &future.lstm],
        Heads::Hierarchical { paragraph, sentence } => vec![&paragraph.lstm, &sentence.lstm],
    }
}

#[test]
fn initialization_contract() {
    let dims = ModelDims { hidden: 24, paragraph_hidden: 16, ..small_dims() };
    for seed in 0..10 {
        for variant in Variant::ALL {
            let model = Model::<f32>::init(variant, &dims, 0.01, 3.0, seed).unwrap();
            let mut recurrent = Vec::new();
            let mut biases = Vec::new();
            for lstm in lstms(&model.heads) {
                let n = lstm.hidden;
                let w = model.params.tensor(lstm.w_recurrent);
                assert_eq!(w.shape(), [n, 4 * n]);
                for g in 0..4 {
                    let q = |r: usize, c: usize| w.get2(r, g * n + c).as_f64();
                    let mut worst = 0.0f64;
                    for a in 0..n {
                        for b in 0..n {
                            let dot: f64 = (0..n).map(|r| q(r, a) * q(r, b)).sum();
                            let eye = if a == b { 1.0 } else { 0.0 };
                            worst = worst.max((dot - eye).abs());
                        }
                    }
                    assert!(worst < 1e-5, "{variant} seed {seed} gate {g}: {worst}");
                }
                let bias = model.params.tensor(lstm.bias).values();
                assert!(bias[n..2 * n].iter().all(|&b| b == 3.0), "{variant} seed {seed}");
                recurrent.push(lstm.w_recurrent);
                biases.push(lstm.bias);
            }
            for (id, p) in model.params.iter() {
                if recurrent.contains(&id) {
                    continue;
                }
                let values = p.tensor.values();
                if biases.contains(&id) {
                    let n = values.len() / 4;
                    let rest = values[..n].iter().chain(&values[2 * n..]);
                    assert!(rest.into_iter().all(|v| v.abs() <= 0.01), "{}", p.name);
                } else {
                    assert!(values.iter().all(|v| v.abs() <= 0.01), "{variant} seed {seed} {}", p.name);
                }
            }
        }
    }
}
