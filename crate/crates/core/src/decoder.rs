//! LSTM sentence decoder and paragraph generator.
//!
//! The sentence decoder models `p(w_t | w_<t, cond)` with an LSTM whose input
//! at every step is `[y_{t-1}; cond]`, where `cond` is the sentence code `z`
//! or, in the hierarchical model, the paragraph state `h^(p)`. `h_0` and `c_0`
//! are zero. Gate columns are laid out as `[input | forget | cell | output]`.
//!
//! Every computation exists twice: on the tape (training) and as plain loops
//! (decoding, scoring). Both use the same kernels in the same order.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::embeddings::EmbeddingTable;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{gemm_acc, log_sum_exp, sigmoid, softmax_values, ParamId, ParamSet, Real, Tape, Tensor, Var};
use crate::text::{SentenceBatch, EOS, SOS};

/// `n x n` orthogonal matrix: QR of a Gaussian matrix with `R`'s diagonal made positive.
pub fn orthogonal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Result<Vec<f64>> {
    if rows != cols {
        return Err(dim_err("orthogonal", "recurrent block columns", rows, cols));
    }
    let n = rows;
    let gauss = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = gauss.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect())
}

fn uniform<F: Real, R: Rng>(n: usize, range: f64, rng: &mut R) -> Vec<F> {
    (0..n).map(|_| F::from_f64_lossy(rng.random_range(-range..=range))).collect()
}

/// One LSTM layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LstmParams {
    /// `input_dim x 4n`.
    pub w_input: ParamId,
    /// `n x 4n`; each `n x n` gate block is orthogonal at initialization.
    pub w_recurrent: ParamId,
    /// `4n`; the forget block starts at `forget_bias`.
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn init<F: Real, R: Rng>(
        params: &mut ParamSet<F>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        init_range: f64,
        forget_bias: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = hidden;
        let w_input = params.add(
            format!("{prefix}.w_input"),
            Tensor::new(vec![input_dim, 4 * n], uniform(input_dim * 4 * n, init_range, rng))?,
        );
        let mut rec = vec![F::zero(); n * 4 * n];
        for gate in 0..4 {
            let q = orthogonal(n, n, rng)?;
            for i in 0..n {
                for j in 0..n {
                    rec[i * 4 * n + gate * n + j] = F::from_f64_lossy(q[i * n + j]);
                }
            }
        }
        let w_recurrent = params.add(format!("{prefix}.w_recurrent"), Tensor::new(vec![n, 4 * n], rec)?);
        let mut bias = vec![F::zero(); 4 * n];
        bias[n..2 * n].iter_mut().for_each(|b| *b = F::from_f64_lossy(forget_bias));
        let bias = params.add(format!("{prefix}.bias"), Tensor::new(vec![4 * n], bias)?);
        Ok(Self {
            w_input,
            w_recurrent,
            bias,
            input_dim,
            hidden,
        })
    }

    /// One cell update given the input contribution `pre` (bias included).
    fn cell_tape<F: Real>(&self, tape: &mut Tape<'_, F>, pre: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let n = self.hidden;
        let wr = tape.param(self.w_recurrent);
        let rec = tape.matmul(h, wr)?;
        let g = tape.add(pre, rec)?;
        let gi = tape.slice_cols(g, 0, n)?;
        let gf = tape.slice_cols(g, n, n)?;
        let gc = tape.slice_cols(g, 2 * n, n)?;
        let go = tape.slice_cols(g, 3 * n, n)?;
        let i = tape.sigmoid(gi);
        let f = tape.sigmoid(gf);
        let cand = tape.tanh(gc);
        let o = tape.sigmoid(go);
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, cand)?;
        let c_new = tape.add(keep, write)?;
        let squashed = tape.tanh(c_new);
        let h_new = tape.mul(o, squashed)?;
        Ok((h_new, c_new))
    }

    fn cell_plain<F: Real>(&self, params: &ParamSet<F>, pre: &[F], h: &[F], c: &[F]) -> (Vec<F>, Vec<F>) {
        let n = self.hidden;
        let mut rec = vec![F::zero(); 4 * n];
        gemm_acc(&mut rec, h, (1, n), false, params.tensor(self.w_recurrent).values(), (n, 4 * n), false);
        let g: Vec<F> = pre.iter().zip(&rec).map(|(&a, &b)| a + b).collect();
        let sig = sigmoid::<F>;
        let mut h_new = Vec::with_capacity(n);
        let mut c_new = Vec::with_capacity(n);
        for j in 0..n {
            let i = sig(g[j]);
            let f = sig(g[n + j]);
            let cand = g[2 * n + j].tanh();
            let o = sig(g[3 * n + j]);
            let cj = f * c[j] + i * cand;
            c_new.push(cj);
            h_new.push(o * cj.tanh());
        }
        (h_new, c_new)
    }
}

/// Running state of a decoder or paragraph generator.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<F> {
    pub h: Vec<F>,
    pub c: Vec<F>,
}

impl<F: Real> LstmState<F> {
    pub fn zeros(n: usize) -> Self {
        Self {
            h: vec![F::zero(); n],
            c: vec![F::zero(); n],
        }
    }
}

/// Conditional sentence decoder with its own output matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceDecoder {
    pub lstm: LstmParams,
    /// `V_out`, `vocab x n`.
    pub output: ParamId,
    pub embed_width: usize,
    pub cond_width: usize,
    pub vocab_size: usize,
}

impl SentenceDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn init<F: Real, R: Rng>(
        params: &mut ParamSet<F>,
        prefix: &str,
        embed_width: usize,
        cond_width: usize,
        hidden: usize,
        vocab_size: usize,
        init_range: f64,
        forget_bias: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let lstm = LstmParams::init(params, prefix, embed_width + cond_width, hidden, init_range, forget_bias, rng)?;
        let output = params.add(
            format!("{prefix}.output"),
            Tensor::new(vec![vocab_size, hidden], uniform(vocab_size * hidden, init_range, rng))?,
        );
        Ok(Self {
            lstm,
            output,
            embed_width,
            cond_width,
            vocab_size,
        })
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden
    }

    /// Teacher-forced negative log-likelihood of every target row, summed over
    /// rows and tokens. `cond` is `batch x cond_width`.
    pub fn nll<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        embedding: &EmbeddingTable,
        cond: Var,
        target: &SentenceBatch,
    ) -> Result<Var> {
        let b = target.batch_size();
        let (cr, cc) = tape.value(cond).dims2();
        if cr != b {
            return Err(dim_err("decoder nll", "condition rows", b, cr));
        }
        if cc != self.cond_width {
            return Err(dim_err("decoder nll", "condition width", self.cond_width, cc));
        }
        let steps = target.lengths.iter().copied().max().ok_or(Error::EmptySentence)?;
        let (k, n) = (self.embed_width, self.hidden());
        // Step t reads w_{t-1} (w_0 = <sos>); inputs are time-major.
        let mut inputs = Vec::with_capacity(steps * b);
        for t in 0..steps {
            for r in 0..b {
                inputs.push(if t == 0 { SOS } else { target.row(r)[t - 1] });
            }
        }
        // Predictions are scored row-major so the sum runs sentence by sentence.
        let mut order = Vec::with_capacity(steps * b);
        let mut targets = Vec::with_capacity(steps * b);
        let mut weights = Vec::with_capacity(steps * b);
        for r in 0..b {
            for t in 0..steps {
                order.push(t * b + r);
                targets.push(target.row(r)[t]);
                weights.push(if t < target.lengths[r] { F::one() } else { F::zero() });
            }
        }
        let w_in = tape.param(self.lstm.w_input);
        let w_y = tape.slice_rows(w_in, 0, k)?;
        let w_z = tape.slice_rows(w_in, k, self.cond_width)?;
        let bias = tape.param(self.lstm.bias);
        let y = embedding.embed(tape, &inputs)?;
        let proj_y = tape.matmul(y, w_y)?;
        let proj_z = tape.matmul(cond, w_z)?;
        let proj_z = tape.add_row(proj_z, bias)?;

        let mut h = tape.constant(Tensor::zeros(vec![b, n]));
        let mut c = tape.constant(Tensor::zeros(vec![b, n]));
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let py = tape.slice_rows(proj_y, t * b, b)?;
            let pre = tape.add(py, proj_z)?;
            (h, c) = self.lstm.cell_tape(tape, pre, h, c)?;
            hs.push(h);
        }
        let all_h = tape.concat_rows(&hs)?;
        let all_h = tape.gather_rows(all_h, &order)?;
        let v_out = tape.param(self.output);
        let logits = tape.matmul_t(all_h, false, v_out, true)?;
        tape.cross_entropy(logits, &targets, &weights)
    }

    /// Input contribution of the condition vector: `cond * W_z + b`.
    pub fn condition<F: Real>(&self, params: &ParamSet<F>, cond: &[F]) -> Result<Vec<F>> {
        if cond.len() != self.cond_width {
            return Err(dim_err("decoder condition", "condition width", self.cond_width, cond.len()));
        }
        let n4 = 4 * self.hidden();
        let w = params.tensor(self.lstm.w_input).values();
        let w_z = &w[self.embed_width * n4..];
        let mut out = vec![F::zero(); n4];
        gemm_acc(&mut out, cond, (1, self.cond_width), false, w_z, (self.cond_width, n4), false);
        let bias = params.tensor(self.lstm.bias).values();
        Ok(out.iter().zip(bias).map(|(&a, &b)| a + b).collect())
    }

    /// One decoder step from an explicit previous-word vector.
    ///
    /// Returns the new hidden and cell states and the vocabulary logits `V_out h_t`.
    pub fn decoder_step<F: Real>(
        &self,
        params: &ParamSet<F>,
        y_prev: &[F],
        state: &LstmState<F>,
        cond: &[F],
    ) -> Result<(LstmState<F>, Vec<F>)> {
        if y_prev.len() != self.embed_width {
            return Err(dim_err("decoder_step", "input width", self.embed_width, y_prev.len()));
        }
        if state.h.len() != self.hidden() || state.c.len() != self.hidden() {
            return Err(dim_err("decoder_step", "state width", self.hidden(), state.h.len()));
        }
        let cond_proj = self.condition(params, cond)?;
        Ok(self.step_projected(params, y_prev, state, &cond_proj))
    }

    fn step_projected<F: Real>(
        &self,
        params: &ParamSet<F>,
        y_prev: &[F],
        state: &LstmState<F>,
        cond_proj: &[F],
    ) -> (LstmState<F>, Vec<F>) {
        let (k, n) = (self.embed_width, self.hidden());
        let w = params.tensor(self.lstm.w_input).values();
        let mut py = vec![F::zero(); 4 * n];
        gemm_acc(&mut py, y_prev, (1, k), false, &w[..k * 4 * n], (k, 4 * n), false);
        let pre: Vec<F> = py.iter().zip(cond_proj).map(|(&a, &b)| a + b).collect();
        let (h, c) = self.lstm.cell_plain(params, &pre, &state.h, &state.c);
        let v = params.tensor(self.output).values();
        let logits = v
            .chunks(n)
            .map(|row| row.iter().zip(&h).fold(F::zero(), |acc, (&a, &b)| acc + b * a))
            .collect();
        (LstmState { h, c }, logits)
    }

    /// `sum_t log p(w_t | w_<t, cond)` over the given tokens, teacher forced.
    pub fn sequence_log_prob<F: Real>(
        &self,
        params: &ParamSet<F>,
        embedding: &EmbeddingTable,
        tokens: &[usize],
        cond: &[F],
    ) -> Result<F> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        let cond_proj = self.condition(params, cond)?;
        Ok(-self.accumulate_nll(params, embedding, tokens, &cond_proj, F::zero())?)
    }

    /// Adds `-log p(w_t | ...)` for every token to `total`, one term at a time.
    fn accumulate_nll<F: Real>(
        &self,
        params: &ParamSet<F>,
        embedding: &EmbeddingTable,
        tokens: &[usize],
        cond_proj: &[F],
        mut total: F,
    ) -> Result<F> {
        let mut state = LstmState::zeros(self.hidden());
        let mut prev = SOS;
        for &w in tokens {
            if w >= self.vocab_size {
                return Err(Error::IndexOutOfRange { what: "vocabulary", index: w, size: self.vocab_size });
            }
            let y = embedding.column(params, prev);
            let (next, logits) = self.step_projected(params, &y, &state, cond_proj);
            total = total + (log_sum_exp(&logits) - logits[w]);
            state = next;
            prev = w;
        }
        Ok(total)
    }

    /// Summed NLL of every batch row computed sentence by sentence without a
    /// tape. Bitwise equal to the value of [`SentenceDecoder::nll`].
    pub fn batch_nll<F: Real>(
        &self,
        params: &ParamSet<F>,
        embedding: &EmbeddingTable,
        conds: &[Vec<F>],
        target: &SentenceBatch,
    ) -> Result<F> {
        if conds.len() != target.batch_size() {
            return Err(dim_err("batch_nll", "condition rows", target.batch_size(), conds.len()));
        }
        let mut total = F::zero();
        for (r, cond) in conds.iter().enumerate() {
            let cond_proj = self.condition(params, cond)?;
            total = self.accumulate_nll(params, embedding, target.target(r), &cond_proj, total)?;
        }
        Ok(total)
    }

    /// Log-likelihood of a sentence that ends with `<eos>`.
    pub fn sentence_log_prob<F: Real>(
        &self,
        params: &ParamSet<F>,
        embedding: &EmbeddingTable,
        target: &[usize],
        cond: &[F],
    ) -> Result<F> {
        match target.last() {
            None => Err(Error::EmptySentence),
            Some(&EOS) => self.sequence_log_prob(params, embedding, target, cond),
            Some(_) => Err(Error::Contract("target sentence must end with <eos>".into())),
        }
    }

    /// Log-likelihood of a paragraph sentence given the paragraph state `h_p`,
    /// which takes the place of `z` at every step.
    pub fn conditional_sentence_log_prob<F: Real>(
        &self,
        params: &ParamSet<F>,
        embedding: &EmbeddingTable,
        target: &[usize],
        h_p: &[F],
    ) -> Result<F> {
        self.sentence_log_prob(params, embedding, target, h_p)
    }

    /// Argmax decoding from `<sos>` until `<eos>` or `max_len` tokens; ties go
    /// to the lowest index. `<eos>` is not included in the output.
    pub fn greedy_decode<F: Real>(
        &self,
        params: &ParamSet<F>,
        embedding: &EmbeddingTable,
        cond: &[F],
        max_len: usize,
    ) -> Result<Vec<usize>> {
        let cond_proj = self.condition(params, cond)?;
        let mut state = LstmState::zeros(self.hidden());
        let mut prev = SOS;
        let mut out = Vec::new();
        while out.len() < max_len {
            let y = embedding.column(params, prev);
            let (next, logits) = self.step_projected(params, &y, &state, &cond_proj);
            state = next;
            let mut best = 0;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            if best == EOS {
                break;
            }
            out.push(best);
            prev = best;
        }
        Ok(out)
    }

    /// Next-word distribution after the given prefix.
    pub fn next_word_probs<F: Real>(
        &self,
        params: &ParamSet<F>,
        embedding: &EmbeddingTable,
        prefix: &[usize],
        cond: &[F],
    ) -> Result<Vec<F>> {
        let cond_proj = self.condition(params, cond)?;
        let mut state = LstmState::zeros(self.hidden());
        let mut logits = Vec::new();
        for &prev in std::iter::once(&SOS).chain(prefix) {
            let y = embedding.column(params, prev);
            let (next, l) = self.step_projected(params, &y, &state, &cond_proj);
            state = next;
            logits = l;
        }
        Ok(softmax_values(&logits, logits.len()))
    }
}

/// Paragraph-level LSTM: `h^(p)_l = LSTM_p(h^(p)_{l-1}, z_{l-1})`, `h^(p)_0 = 0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParagraphLstm {
    pub lstm: LstmParams,
}

impl ParagraphLstm {
    pub fn init<F: Real, R: Rng>(
        params: &mut ParamSet<F>,
        input_dim: usize,
        hidden: usize,
        init_range: f64,
        forget_bias: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            lstm: LstmParams::init(params, "paragraph", input_dim, hidden, init_range, forget_bias, rng)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden
    }

    /// Zero state for `batch` paragraphs.
    pub fn initial_state<F: Real>(&self, tape: &mut Tape<'_, F>, batch: usize) -> (Var, Var) {
        let n = self.hidden();
        (
            tape.constant(Tensor::zeros(vec![batch, n])),
            tape.constant(Tensor::zeros(vec![batch, n])),
        )
    }

    pub fn step_tape<F: Real>(&self, tape: &mut Tape<'_, F>, h: Var, c: Var, z_prev: Var) -> Result<(Var, Var)> {
        let w = tape.param(self.lstm.w_input);
        let bias = tape.param(self.lstm.bias);
        let proj = tape.matmul(z_prev, w)?;
        let pre = tape.add_row(proj, bias)?;
        self.lstm.cell_tape(tape, pre, h, c)
    }

    /// Plain single-paragraph update.
    pub fn paragraph_step<F: Real>(&self, params: &ParamSet<F>, state: &LstmState<F>, z_prev: &[F]) -> Result<LstmState<F>> {
        if z_prev.len() != self.lstm.input_dim {
            return Err(dim_err("paragraph_step", "sentence code width", self.lstm.input_dim, z_prev.len()));
        }
        let n4 = 4 * self.hidden();
        let mut proj = vec![F::zero(); n4];
        gemm_acc(
            &mut proj,
            z_prev, (1, self.lstm.input_dim), false, params.tensor(self.lstm.w_input).values(), (self.lstm.input_dim, n4), false);
        let bias = params.tensor(self.lstm.bias).values();
        let pre: Vec<F> = proj.iter().zip(bias).map(|(&a, &b)| a + b).collect();
        let (h, c) = self.lstm.cell_plain(params, &pre, &state.h, &state.c);
        Ok(LstmState { h, c })
    }
}
