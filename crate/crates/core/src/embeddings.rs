//! Word embedding table and vocabulary expansion.
//!
//! The table `W_e` is `k x V`; column `v` is the vector of vocabulary entry
//! `v`. Words outside the training vocabulary can be encoded either through a
//! least-squares linear map from an external embedding space, or by training
//! with the table frozen to the external vectors so both spaces coincide.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::tensor::{ParamId, ParamSet, Real, Tape, Tensor, Var};
use crate::text::{Vocab, PAD, UNK};

/// Ridge term of the expansion-map normal equations.
pub const RIDGE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingMode {
    Learned,
    /// Frozen for the whole run; the `<pad>` column is forced to zero.
    Fixed,
}

impl EmbeddingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Learned => "learned",
            Self::Fixed => "fixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(Self::Learned),
            "fixed" => Ok(Self::Fixed),
            _ => Err(Error::Config(format!("unknown embedding mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub width: usize,
    pub vocab_size: usize,
    pub mode: EmbeddingMode,
}

impl EmbeddingTable {
    pub const PARAM_NAME: &'static str = "embedding";

    /// Registers a `k x V` table initialized uniformly in `[-init_range, init_range]`
    /// with a zero `<pad>` column.
    pub fn init<F: Real, R: Rng>(
        params: &mut ParamSet<F>,
        vocab_size: usize,
        width: usize,
        mode: EmbeddingMode,
        init_range: f64,
        rng: &mut R,
    ) -> Self {
        let mut values: Vec<F> = (0..width * vocab_size)
            .map(|_| F::from_f64_lossy(rng.random_range(-init_range..=init_range)))
            .collect();
        for i in 0..width {
            values[i * vocab_size + PAD] = F::zero();
        }
        let tensor = Tensor::new(vec![width, vocab_size], values).expect("table shape");
        let id = params.add(Self::PARAM_NAME, tensor);
        params.set_trainable(id, mode == EmbeddingMode::Learned);
        Self {
            id,
            width,
            vocab_size,
            mode,
        }
    }

    /// Overwrites the columns of words found in `external` with their external
    /// vectors. Requires `width == external.dim`.
    pub fn copy_from_external<F: Real>(
        &self,
        params: &mut ParamSet<F>,
        vocab: &Vocab,
        external: &ExternalEmbeddings,
    ) -> Result<usize> {
        if external.dim != self.width {
            return Err(dim_err("copy_from_external", "embedding width", self.width, external.dim));
        }
        let v = self.vocab_size;
        let table = params.tensor_mut(self.id).values_mut();
        let mut copied = 0;
        for (idx, tok) in vocab.tokens().iter().enumerate().skip(PAD + 1) {
            if let Some(vec) = external.get(tok) {
                for (i, &x) in vec.iter().enumerate() {
                    table[i * v + idx] = F::from_f64_lossy(f64::from(x));
                }
                copied += 1;
            }
        }
        Ok(copied)
    }

    /// `k x T` matrix whose column `t` is the vector of `indices[t]`.
    pub fn lookup<F: Real>(&self, params: &ParamSet<F>, indices: &[usize]) -> Result<Tensor<F>> {
        if indices.is_empty() {
            return Err(Error::EmptySentence);
        }
        let table = params.tensor(self.id).values();
        let v = self.vocab_size;
        let mut out = vec![F::zero(); self.width * indices.len()];
        for (t, &idx) in indices.iter().enumerate() {
            if idx >= v {
                return Err(Error::IndexOutOfRange { what: "vocabulary", index: idx, size: v });
            }
            for i in 0..self.width {
                out[i * indices.len() + t] = table[i * v + idx];
            }
        }
        Tensor::new(vec![self.width, indices.len()], out)
    }

    pub fn column<F: Real>(&self, params: &ParamSet<F>, idx: usize) -> Vec<F> {
        let table = params.tensor(self.id).values();
        (0..self.width).map(|i| table[i * self.vocab_size + idx]).collect()
    }

    /// Embedded tokens as the rows of an `n x k` tape value.
    pub fn embed<F: Real>(&self, tape: &mut Tape<'_, F>, indices: &[usize]) -> Result<Var> {
        let table = tape.param(self.id);
        tape.gather_cols(table, indices)
    }

    /// Hash of the table's bit patterns.
    pub fn checksum<F: Real>(&self, params: &ParamSet<F>) -> u64 {
        let mut h = DefaultHasher::new();
        for v in params.tensor(self.id).values() {
            v.as_f64().to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Pretrained vectors in the common text layout: `token v1 .. vk` per line,
/// optionally preceded by a `count dim` header.
#[derive(Clone, Debug, Default)]
pub struct ExternalEmbeddings {
    pub dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl ExternalEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(dim_err("ExternalEmbeddings::insert", "vector width", self.dim, vector.len()));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
        let mut dim = None;
        if let Some((_, first)) = lines.peek() {
            let fields: Vec<&str> = first.split_whitespace().collect();
            if fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                dim = Some(fields[1].parse().expect("checked"));
                lines.next();
            }
        }
        let mut out: Option<Self> = dim.map(Self::new);
        for (n, line) in lines {
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line");
            let vector: Vec<f32> = fields
                .map(|f| f.parse::<f32>().map_err(|_| perr(n + 1, format!("bad number `{f}`"))))
                .collect::<Result<_>>()?;
            let table = out.get_or_insert_with(|| Self::new(vector.len()));
            if vector.len() != table.dim {
                return Err(perr(
                    n + 1,
                    format!("expected {} components, found {}", table.dim, vector.len()),
                ));
            }
            table.vectors.insert(token.to_string(), vector);
        }
        out.ok_or_else(|| perr(1, "no vectors".into()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, path)
    }
}

/// Linear map from the external space (width `k'`) into the model space (width `k`).
#[derive(Clone, Debug)]
pub struct ExpansionMap {
    /// Row-major `k x k'`.
    pub matrix: Vec<f64>,
    pub model_dim: usize,
    pub external_dim: usize,
    /// Sum of squared residuals over the fitting pairs.
    pub residual: f64,
}

impl ExpansionMap {
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix
            .chunks(self.external_dim)
            .map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Ridge least squares `min_M sum_i |M u_i - v_i|^2 + RIDGE |M|^2` over
/// `(external u_i, model v_i)` pairs.
pub fn fit_linear_map(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<ExpansionMap> {
    let (u0, v0) = pairs.first().ok_or_else(|| Error::Singular("no fitting pairs".into()))?;
    let (kext, k) = (u0.len(), v0.len());
    for (u, v) in pairs {
        if u.len() != kext {
            return Err(dim_err("fit_linear_map", "external width", kext, u.len()));
        }
        if v.len() != k {
            return Err(dim_err("fit_linear_map", "model width", k, v.len()));
        }
    }
    if pairs.iter().all(|(u, _)| u.iter().all(|&x| x == 0.0)) {
        return Err(Error::Singular("all external vectors are zero".into()));
    }
    let n = pairs.len();
    let u = DMatrix::from_fn(n, kext, |i, j| pairs[i].0[j]);
    let v = DMatrix::from_fn(n, k, |i, j| pairs[i].1[j]);
    let gram = u.transpose() * &u + DMatrix::identity(kext, kext) * RIDGE;
    let rhs = u.transpose() * &v;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("normal equations not positive definite".into()))?;
    // Solution is M^T (k' x k).
    let mt = chol.solve(&rhs);
    let residual = (&u * &mt - &v).norm_squared();
    let matrix = (0..k).flat_map(|r| (0..kext).map(move |c| (r, c))).map(|(r, c)| mt[(c, r)]).collect();
    Ok(ExpansionMap {
        matrix,
        model_dim: k,
        external_dim: kext,
        residual,
    })
}

/// Fits the expansion map on words present in both the vocabulary and the external table.
pub fn fit_from_vocab<F: Real>(
    table: &EmbeddingTable,
    params: &ParamSet<F>,
    vocab: &Vocab,
    external: &ExternalEmbeddings,
) -> Result<ExpansionMap> {
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = vocab
        .tokens()
        .iter()
        .enumerate()
        .skip(crate::text::RESERVED.len())
        .filter_map(|(idx, tok)| {
            external.get(tok).map(|u| {
                let u = u.iter().map(|&x| f64::from(x)).collect();
                let v = table.column(params, idx).into_iter().map(Real::as_f64).collect();
                (u, v)
            })
        })
        .collect();
    fit_linear_map(&pairs)
}

#[derive(Clone, Debug)]
pub enum ExpansionMethod {
    /// Map external vectors through a fitted linear map.
    LinearMap(ExpansionMap),
    /// The model was trained with its table fixed to the external vectors.
    Fixed,
}

/// Resolves arbitrary words to model-space vectors.
#[derive(Clone, Debug)]
pub struct VocabExpander<'a> {
    pub method: ExpansionMethod,
    pub external: &'a ExternalEmbeddings,
    /// Words found in neither table; they fall back to `<unk>`.
    pub misses: Vec<String>,
}

impl<'a> VocabExpander<'a> {
    pub fn new(method: ExpansionMethod, external: &'a ExternalEmbeddings) -> Self {
        Self {
            method,
            external,
            misses: Vec::new(),
        }
    }

    /// Method 2 returns the external vector; method 1 prefers the native
    /// column and maps external vectors otherwise.
    pub fn vector<F: Real>(
        &mut self,
        token: &str,
        table: &EmbeddingTable,
        params: &ParamSet<F>,
        vocab: &Vocab,
    ) -> Result<Vec<F>> {
        let ext = self.external.get(token);
        match (&self.method, ext, vocab.get(token)) {
            (ExpansionMethod::Fixed, Some(u), _) => {
                if u.len() != table.width {
                    return Err(dim_err("expand_vocab", "external width", table.width, u.len()));
                }
                Ok(u.iter().map(|&x| F::from_f64_lossy(f64::from(x))).collect())
            }
            (ExpansionMethod::LinearMap(_), _, Some(idx)) => Ok(table.column(params, idx)),
            (ExpansionMethod::LinearMap(map), Some(u), None) => {
                let u: Vec<f64> = u.iter().map(|&x| f64::from(x)).collect();
                Ok(map.apply(&u).into_iter().map(F::from_f64_lossy).collect())
            }
            (ExpansionMethod::Fixed, None, Some(idx)) => Ok(table.column(params, idx)),
            (_, None, None) => {
                log::debug!("vocabulary expansion miss: {token}");
                self.misses.push(token.to_string());
                Ok(table.column(params, UNK))
            }
        }
    }

    /// `k x T` embedded sentence.
    pub fn embed_sentence<F: Real, S: AsRef<str>>(
        &mut self,
        tokens: &[S],
        table: &EmbeddingTable,
        params: &ParamSet<F>,
        vocab: &Vocab,
    ) -> Result<Tensor<F>> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        let t_len = tokens.len();
        let mut out = vec![F::zero(); table.width * t_len];
        for (t, tok) in tokens.iter().enumerate() {
            let col = self.vector(tok.as_ref(), table, params, vocab)?;
            for (i, x) in col.into_iter().enumerate() {
                out[i * t_len + t] = x;
            }
        }
        Tensor::new(vec![table.width, t_len], out)
    }
}
