//! Convolutional sentence encoder.
//!
//! For every window size `h` a bank of `d` filters is slid over the embedded
//! sentence and each feature map is max-pooled over time. The pooled values
//! are laid out in blocks of ascending window size, filters in index order
//! within a block, giving an `m * d` representation.

use rand::Rng;

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamSet, Real, Tape, Tensor, Var};
use crate::text::{SentenceBatch, PAD};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilterBank {
    pub window: usize,
    /// `d x k x h` filters.
    pub weight: ParamId,
    /// One scalar per filter, broadcast over every window position.
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoder {
    pub embedding: EmbeddingTable,
    pub banks: Vec<FilterBank>,
    pub maps_per_window: usize,
}

impl Encoder {
    pub fn init<F: Real, R: Rng>(
        params: &mut ParamSet<F>,
        embedding: EmbeddingTable,
        windows: &[usize],
        maps_per_window: usize,
        init_range: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if windows.is_empty() || maps_per_window == 0 || windows.contains(&0) {
            return Err(Error::Config("encoder needs positive windows and maps".into()));
        }
        let mut sorted = windows.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let k = embedding.width;
        let banks = sorted
            .into_iter()
            .map(|h| {
                let n = maps_per_window * k * h;
                let w: Vec<F> = (0..n)
                    .map(|_| F::from_f64_lossy(rng.random_range(-init_range..=init_range)))
                    .collect();
                let weight = params.add(
                    format!("encoder.conv{h}.weight"),
                    Tensor::new(vec![maps_per_window, k, h], w).expect("filter shape"),
                );
                let bias = params.add(format!("encoder.conv{h}.bias"), Tensor::zeros(vec![maps_per_window]));
                FilterBank { window: h, weight, bias }
            })
            .collect();
        Ok(Self {
            embedding,
            banks,
            maps_per_window,
        })
    }

    pub fn windows(&self) -> Vec<usize> {
        self.banks.iter().map(|b| b.window).collect()
    }

    pub fn max_window(&self) -> usize {
        self.banks.iter().map(|b| b.window).max().unwrap_or(1)
    }

    pub fn output_dim(&self) -> usize {
        self.banks.len() * self.maps_per_window
    }

    /// Encodes already-embedded tokens: `x` holds `lengths.len() * seq_len`
    /// rows of width `k`.
    pub fn forward_embedded<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        x: Var,
        seq_len: usize,
        lengths: &[usize],
    ) -> Result<Var> {
        let pooled = self
            .banks
            .iter()
            .map(|bank| {
                let w = tape.param(bank.weight);
                let b = tape.param(bank.bias);
                tape.conv_pool(x, w, b, seq_len, lengths)
            })
            .collect::<Result<Vec<_>>>()?;
        tape.concat_cols(&pooled)
    }

    /// Encodes token sequences padded with `<pad>` to `seq_len` (at least the
    /// longest sentence and the largest window). Returns `batch x (m * d)`.
    pub fn forward_padded<F: Real, S: AsRef<[usize]>>(
        &self,
        tape: &mut Tape<'_, F>,
        sentences: &[S],
        seq_len: usize,
    ) -> Result<Var> {
        let mut idx = Vec::with_capacity(sentences.len() * seq_len);
        let mut lengths = Vec::with_capacity(sentences.len());
        for s in sentences {
            let s = s.as_ref();
            if s.is_empty() {
                return Err(Error::EmptySentence);
            }
            if s.len() > seq_len {
                return Err(Error::Config(format!(
                    "sentence of {} tokens longer than padded length {seq_len}",
                    s.len()
                )));
            }
            idx.extend_from_slice(s);
            idx.extend(std::iter::repeat_n(PAD, seq_len - s.len()));
            lengths.push(s.len());
        }
        let x = self.embedding.embed(tape, &idx)?;
        self.forward_embedded(tape, x, seq_len, &lengths)
    }

    /// Encodes the content (tokens before `<eos>`) of every batch row.
    pub fn forward<F: Real, S: AsRef<[usize]>>(&self, tape: &mut Tape<'_, F>, sentences: &[S]) -> Result<Var> {
        let longest = sentences.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        self.forward_padded(tape, sentences, longest.max(self.max_window()))
    }

    pub fn forward_batch<F: Real>(&self, tape: &mut Tape<'_, F>, batch: &SentenceBatch) -> Result<Var> {
        let rows: Vec<&[usize]> = (0..batch.batch_size()).map(|r| batch.content(r)).collect();
        self.forward(tape, &rows)
    }

    pub fn encode<F: Real>(&self, params: &ParamSet<F>, sentence: &[usize]) -> Result<Vec<F>> {
        self.encode_padded(params, sentence, sentence.len().max(self.max_window()))
    }

    pub fn encode_padded<F: Real>(&self, params: &ParamSet<F>, sentence: &[usize], seq_len: usize) -> Result<Vec<F>> {
        let mut tape = Tape::with_params(params);
        let z = self.forward_padded(&mut tape, &[sentence], seq_len)?;
        Ok(tape.value(z).values().to_vec())
    }

    /// `batch x (m * d)` encodings of the batch rows.
    pub fn encode_batch<F: Real>(&self, params: &ParamSet<F>, batch: &SentenceBatch) -> Result<Tensor<F>> {
        let mut tape = Tape::with_params(params);
        let z = self.forward_batch(&mut tape, batch)?;
        Ok(tape.value(z).clone())
    }

    /// Encodes a `k x T` embedded sentence (e.g. one built by vocabulary expansion).
    pub fn encode_embedded<F: Real>(&self, params: &ParamSet<F>, x: &Tensor<F>) -> Result<Vec<F>> {
        let (k, t_len) = x.dims2();
        if k != self.embedding.width {
            return Err(crate::error::dim_err("encode_embedded", "embedding width (k)", self.embedding.width, k));
        }
        let seq_len = t_len.max(self.max_window());
        let pad = self.embedding.column(params, PAD);
        let mut rows: Vec<F> = pad.iter().copied().cycle().take(seq_len * k).collect();
        for t in 0..t_len {
            for i in 0..k {
                rows[t * k + i] = x.get2(i, t);
            }
        }
        let mut tape = Tape::with_params(params);
        let xv = tape.constant(Tensor::new(vec![seq_len, k], rows)?);
        let z = self.forward_embedded(&mut tape, xv, seq_len, &[t_len])?;
        Ok(tape.value(z).values().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::EmbeddingMode;
    use crate::tensor::{conv1d_feature_map_values, max_over_time_values};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(vocab: usize, k: usize, windows: &[usize], d: usize, seed: u64) -> (ParamSet<f64>, Encoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let table = EmbeddingTable::init(&mut params, vocab, k, EmbeddingMode::Learned, 0.5, &mut rng);
        let enc = Encoder::init(&mut params, table, windows, d, 0.5, &mut rng).unwrap();
        // Non-zero biases so the oracle exercises them.
        for bank in &enc.banks {
            for b in params.tensor_mut(bank.bias).values_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        (params, enc)
    }

    /// Window-by-window reference built from the standalone feature-map kernels.
    fn oracle(params: &ParamSet<f64>, enc: &Encoder, sentence: &[usize]) -> Vec<f64> {
        let k = enc.embedding.width;
        let x = enc.embedding.lookup(params, sentence).unwrap();
        let t_len = sentence.len();
        let mut z = Vec::new();
        for bank in &enc.banks {
            let h = bank.window;
            let w = params.tensor(bank.weight).values();
            let b = params.tensor(bank.bias).values();
            for f in 0..enc.maps_per_window {
                let filt = &w[f * k * h..(f + 1) * k * h];
                let (xs, t_eff) = if t_len >= h {
                    (x.values().to_vec(), t_len)
                } else {
                    // Pad with zero columns up to one window.
                    let mut padded = vec![0.0; k * h];
                    for i in 0..k {
                        for t in 0..t_len {
                            padded[i * h + t] = x.get2(i, t);
                        }
                    }
                    (padded, h)
                };
                let bias = vec![b[f]; t_eff - h + 1];
                let c = conv1d_feature_map_values(&xs, (k, t_eff), filt, (k, h), &bias).unwrap();
                z.push(max_over_time_values(&c).unwrap().0);
            }
        }
        z
    }

    #[test]
    fn output_dim_is_windows_times_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::<f32>::new();
        let table = EmbeddingTable::init(&mut params, 10, 4, EmbeddingMode::Learned, 0.01, &mut rng);
        let enc = Encoder::init(&mut params, table, &[3, 4, 5], 800, 0.01, &mut rng).unwrap();
        assert_eq!(enc.output_dim(), 2400);
        assert_eq!(params.tensor(enc.banks[2].weight).shape(), &[800, 4, 5]);
    }

    #[test]
    fn matches_window_enumeration_oracle() {
        let (params, enc) = tiny(12, 4, &[2, 3], 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for len in [1usize, 2, 3, 5, 8] {
            let s: Vec<usize> = (0..len).map(|_| rng.random_range(5..12)).collect();
            let z = enc.encode(&params, &s).unwrap();
            let expected = oracle(&params, &enc, &s);
            assert_eq!(z.len(), 4);
            for (a, b) in z.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-14, "{z:?} vs {expected:?}");
            }
        }
    }

    #[test]
    fn zero_embeddings_and_biases_give_zero() {
        let (mut params, enc) = tiny(8, 3, &[2, 3], 3, 1);
        params.tensor_mut(enc.embedding.id).values_mut().iter_mut().for_each(|v| *v = 0.0);
        for bank in &enc.banks {
            params.tensor_mut(bank.bias).values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let z = enc.encode(&params, &[PAD, PAD, PAD, PAD]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn padding_length_does_not_change_encoding() {
        let (params, enc) = tiny(20, 5, &[2, 3, 4], 3, 2);
        let s = [7usize, 9, 11, 6, 5];
        let a = enc.encode_padded(&params, &s, 10).unwrap();
        let b = enc.encode_padded(&params, &s, 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_rows_equal_single_encodings() {
        let (params, enc) = tiny(20, 5, &[2, 3], 3, 3);
        let rows = vec![vec![5usize, 6, 7], vec![8], vec![9, 10, 11, 12, 13, 14]];
        let batch = SentenceBatch::new(&rows, enc.max_window()).unwrap();
        let z = enc.encode_batch(&params, &batch).unwrap();
        for (r, s) in rows.iter().enumerate() {
            assert_eq!(z.row(r), enc.encode(&params, s).unwrap().as_slice());
        }
        let swapped = SentenceBatch::new(&[rows[2].clone(), rows[0].clone()], 3).unwrap();
        let zs = enc.encode_batch(&params, &swapped).unwrap();
        assert_eq!(zs.row(0), z.row(2));
        assert_eq!(zs.row(1), z.row(0));
    }

    #[test]
    fn trigram_position_invariance() {
        let (mut params, enc) = tiny(20, 4, &[2, 3], 2, 4);
        for bank in &enc.banks {
            params.tensor_mut(bank.bias).values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let tri = [11usize, 14, 17];
        // Matched filter: its response peaks on the full trigram window.
        let bank = enc.banks.iter().find(|b| b.window == 3).unwrap();
        let x = enc.embedding.lookup(&params, &tri).unwrap();
        let w = params.tensor_mut(bank.weight).values_mut();
        for i in 0..4 {
            for j in 0..3 {
                w[i * 3 + j] = x.get2(i, j);
            }
        }
        let mut early = vec![PAD; 9];
        early[..3].copy_from_slice(&tri);
        let mut late = vec![PAD; 9];
        late[5..8].copy_from_slice(&tri);
        let za = enc.encode(&params, &early).unwrap();
        let zb = enc.encode(&params, &late).unwrap();
        let offset = enc.windows().iter().position(|&w| w == 3).unwrap() * enc.maps_per_window;
        assert!(za[offset] > 0.0);
        assert_eq!(za[offset], zb[offset]);
    }

    #[test]
    fn empty_sentence_is_rejected() {
        let (params, enc) = tiny(8, 3, &[2], 1, 0);
        assert!(matches!(enc.encode(&params, &[]), Err(Error::EmptySentence)));
    }
}
