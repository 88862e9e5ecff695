//! Tokenization, vocabulary and batch assembly.
//!
//! Corpora are UTF-8 text with one sentence per line; a blank line separates
//! paragraphs.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
/// Start-of-paragraph token; the one-token sentence `[<sop>]` stands in for `s_0`.
pub const SOP: usize = 4;

pub const RESERVED: [&str; 5] = ["<pad>", "<sos>", "<eos>", "<unk>", "<sop>"];

/// Lowercases, splits on whitespace and makes every punctuation character its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.push(ch);
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token/index table with the reserved tokens at indices 0..5.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Keeps the `max_size - 5` most frequent tokens (ties broken
    /// lexicographically) after the reserved entries.
    pub fn build<'a, I>(tokens: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size <= RESERVED.len() {
            return Err(Error::Vocab(format!(
                "max size {max_size} leaves no room beyond the {} reserved tokens",
                RESERVED.len()
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in tokens {
            *counts.entry(tok).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - RESERVED.len());
        Ok(Self::from_tokens(
            RESERVED
                .iter()
                .map(|s| s.to_string())
                .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
                .collect(),
        ))
    }

    pub fn from_corpus(corpus: &Corpus, max_size: usize) -> Result<Self> {
        Self::build(corpus.tokens(), max_size)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        self.encode(&tokenize(text))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(t);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses `token<TAB>index` lines, validating the reserved-index contract.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut tokens: Vec<Option<String>> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, idx) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Vocab(format!("line {}: expected token<TAB>index", n + 1)))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Vocab(format!("line {}: bad index `{idx}`", n + 1)))?;
            if idx >= tokens.len() {
                tokens.resize(idx + 1, None);
            }
            if tokens[idx].replace(tok.to_string()).is_some() {
                return Err(Error::Vocab(format!("index {idx} assigned twice")));
            }
        }
        let tokens: Vec<String> = tokens
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.ok_or_else(|| Error::Vocab(format!("index {i} missing"))))
            .collect::<Result<_>>()?;
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Vocab(format!("reserved token {r} must have index {i}")));
            }
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Vocab("duplicate token".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&fs::read_to_string(path)?)
    }
}

/// Tokenized corpus: paragraphs of sentences of tokens.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub paragraphs: Vec<Vec<Vec<String>>>,
}

impl Corpus {
    pub fn parse(text: &str) -> Self {
        let mut paragraphs = Vec::new();
        let mut current = Vec::new();
        for line in text.lines() {
            let toks = tokenize(line);
            if toks.is_empty() {
                if !current.is_empty() {
                    paragraphs.push(std::mem::take(&mut current));
                }
            } else {
                current.push(toks);
            }
        }
        if !current.is_empty() {
            paragraphs.push(current);
        }
        Self { paragraphs }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn num_sentences(&self) -> usize {
        self.paragraphs.iter().map(Vec::len).sum()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Vec<String>> {
        self.paragraphs.iter().flatten()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences().flatten().map(String::as_str)
    }

    pub fn encode(&self, vocab: &Vocab) -> Vec<Vec<Vec<usize>>> {
        self.paragraphs
            .iter()
            .map(|p| p.iter().map(|s| vocab.encode(s)).collect())
            .collect()
    }
}

/// Padded batch of sentences.
///
/// Each row holds the sentence's tokens followed by `<eos>`, then `<pad>` up
/// to `seq_len`. The encoder reads the tokens before `<eos>`; decoders use the
/// whole span as their target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentenceBatch {
    pub tokens: Vec<usize>,
    pub lengths: Vec<usize>,
    pub seq_len: usize,
}

impl SentenceBatch {
    /// `min_len` is the smallest allowed `seq_len` (the largest encoder window).
    pub fn new<S: AsRef<[usize]>>(sentences: &[S], min_len: usize) -> Result<Self> {
        let mut seq_len = min_len.max(1);
        for s in sentences {
            if s.as_ref().is_empty() {
                return Err(Error::EmptySentence);
            }
            seq_len = seq_len.max(s.as_ref().len() + 1);
        }
        Self::with_seq_len(sentences, seq_len)
    }

    pub fn with_seq_len<S: AsRef<[usize]>>(sentences: &[S], seq_len: usize) -> Result<Self> {
        let mut tokens = Vec::with_capacity(sentences.len() * seq_len);
        let mut lengths = Vec::with_capacity(sentences.len());
        for s in sentences {
            let s = s.as_ref();
            if s.is_empty() {
                return Err(Error::EmptySentence);
            }
            if s.len() + 1 > seq_len {
                return Err(Error::Config(format!(
                    "sentence of {} tokens does not fit padded length {seq_len}",
                    s.len()
                )));
            }
            tokens.extend_from_slice(s);
            tokens.push(EOS);
            tokens.extend(std::iter::repeat_n(PAD, seq_len - s.len() - 1));
            lengths.push(s.len() + 1);
        }
        Ok(Self {
            tokens,
            lengths,
            seq_len,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.tokens[r * self.seq_len..(r + 1) * self.seq_len]
    }

    /// Target span of row `r`, ending in `<eos>`.
    pub fn target(&self, r: usize) -> &[usize] {
        &self.row(r)[..self.lengths[r]]
    }

    /// Encoder input of row `r`: the tokens before `<eos>`.
    pub fn content(&self, r: usize) -> &[usize] {
        &self.row(r)[..self.lengths[r] - 1]
    }

    pub fn content_lengths(&self) -> Vec<usize> {
        self.lengths.iter().map(|l| l - 1).collect()
    }

    /// Checks the padding invariants.
    pub fn validate(&self) -> Result<()> {
        for r in 0..self.batch_size() {
            let row = self.row(r);
            let len = self.lengths[r];
            let ok = len >= 2
                && len <= self.seq_len
                && row[len - 1] == EOS
                && row[..len - 1].iter().all(|&t| t != EOS && t != PAD)
                && row[len..].iter().all(|&t| t == PAD);
            if !ok {
                return Err(Error::Contract(format!("malformed batch row {r}")));
            }
        }
        Ok(())
    }
}

/// Paragraph chunk of `L` sentence batches sharing one batch dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParagraphBatch {
    pub sentences: Vec<SentenceBatch>,
}

impl ParagraphBatch {
    pub fn batch_size(&self) -> usize {
        self.sentences.first().map_or(0, SentenceBatch::batch_size)
    }

    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairMode {
    /// Source and target are the same sentence.
    SelfPair,
    /// Target is the following sentence of the same paragraph.
    Next,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PairStats {
    pub pairs: usize,
    pub single_sentence_paragraphs: usize,
}

fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

/// Sentence pairs drawn from an encoded corpus.
#[derive(Clone, Debug)]
pub struct PairBatches {
    pairs: Vec<(Vec<usize>, Vec<usize>)>,
    batch_size: usize,
    min_len: usize,
    pub stats: PairStats,
}

impl PairBatches {
    pub fn new(paragraphs: &[Vec<Vec<usize>>], mode: PairMode, batch_size: usize, min_len: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut pairs = Vec::new();
        let mut stats = PairStats::default();
        for p in paragraphs {
            match mode {
                PairMode::SelfPair => pairs.extend(p.iter().map(|s| (s.clone(), s.clone()))),
                PairMode::Next => {
                    if p.len() < 2 {
                        stats.single_sentence_paragraphs += 1;
                    }
                    pairs.extend(p.windows(2).map(|w| (w[0].clone(), w[1].clone())));
                }
            }
        }
        pairs.retain(|(a, b)| !a.is_empty() && !b.is_empty());
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        stats.pairs = pairs.len();
        Ok(Self {
            pairs,
            batch_size,
            min_len,
            stats,
        })
    }

    pub fn pairs(&self) -> &[(Vec<usize>, Vec<usize>)] {
        &self.pairs
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.pairs.len().div_ceil(self.batch_size)
    }

    /// Pair order for one epoch, shuffled by `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        order.shuffle(&mut epoch_rng(seed, epoch));
        order
    }

    pub fn epoch(&self, seed: u64, epoch: u64) -> Result<Vec<(SentenceBatch, SentenceBatch)>> {
        self.epoch_order(seed, epoch)
            .chunks(self.batch_size)
            .map(|chunk| {
                let src: Vec<&[usize]> = chunk.iter().map(|&i| self.pairs[i].0.as_slice()).collect();
                let tgt: Vec<&[usize]> = chunk.iter().map(|&i| self.pairs[i].1.as_slice()).collect();
                Ok((SentenceBatch::new(&src, self.min_len)?, SentenceBatch::new(&tgt, self.min_len)?))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ParagraphStats {
    pub chunks: usize,
    pub dropped_paragraphs: usize,
}

/// Fixed-length paragraph chunks drawn from an encoded corpus.
#[derive(Clone, Debug)]
pub struct ParagraphBatches {
    chunks: Vec<Vec<Vec<usize>>>,
    batch_size: usize,
    min_len: usize,
    pub stats: ParagraphStats,
}

impl ParagraphBatches {
    /// Paragraphs are cut into consecutive windows of `sentences_per_chunk`;
    /// the remainder is discarded and paragraphs shorter than one window are dropped.
    pub fn new(
        paragraphs: &[Vec<Vec<usize>>],
        sentences_per_chunk: usize,
        batch_size: usize,
        min_len: usize,
    ) -> Result<Self> {
        if sentences_per_chunk == 0 || batch_size == 0 {
            return Err(Error::Config("paragraph length and batch size must be positive".into()));
        }
        let mut chunks = Vec::new();
        let mut stats = ParagraphStats::default();
        for p in paragraphs {
            if p.len() < sentences_per_chunk || p.iter().any(Vec::is_empty) {
                stats.dropped_paragraphs += 1;
                continue;
            }
            chunks.extend(p.chunks_exact(sentences_per_chunk).map(<[_]>::to_vec));
        }
        if chunks.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        stats.chunks = chunks.len();
        Ok(Self {
            chunks,
            batch_size,
            min_len,
            stats,
        })
    }

    pub fn chunks(&self) -> &[Vec<Vec<usize>>] {
        &self.chunks
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.chunks.len().div_ceil(self.batch_size)
    }

    pub fn epoch(&self, seed: u64, epoch: u64) -> Result<Vec<ParagraphBatch>> {
        let mut order: Vec<usize> = (0..self.chunks.len()).collect();
        order.shuffle(&mut epoch_rng(seed, epoch));
        order
            .chunks(self.batch_size)
            .map(|group| paragraph_batch(group.iter().map(|&i| &self.chunks[i]), self.min_len))
            .collect()
    }
}

/// Assembles equal-length paragraphs into one batch.
pub fn paragraph_batch<'a, I>(paragraphs: I, min_len: usize) -> Result<ParagraphBatch>
where
    I: IntoIterator<Item = &'a Vec<Vec<usize>>>,
{
    let group: Vec<&Vec<Vec<usize>>> = paragraphs.into_iter().collect();
    let l = group.first().map_or(0, |p| p.len());
    if group.iter().any(|p| p.len() != l) {
        return Err(Error::Contract("paragraphs of unequal length in one batch".into()));
    }
    let sentences = (0..l)
        .map(|s| {
            let rows: Vec<&[usize]> = group.iter().map(|p| p[s].as_slice()).collect();
            SentenceBatch::new(&rows, min_len)
        })
        .collect::<Result<_>>()?;
    Ok(ParagraphBatch { sentences })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("This is great."), ["this", "is", "great", "."]);
        assert_eq!(tokenize("you needed me?"), ["you", "needed", "me", "?"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("  Tris's   hand,"), ["tris", "'", "s", "hand", ","]);
    }

    #[test]
    fn vocab_frequency_cutoff() {
        let toks = tokenize("a a b");
        let v = Vocab::build(toks.iter().map(String::as_str), 6).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.get("a"), Some(5));
        assert_eq!(v.id("b"), UNK);
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.get(r), Some(i));
        }
    }

    #[test]
    fn vocab_ties_match_sort_oracle() {
        let text = "delta beta alpha gamma beta alpha delta epsilon zeta eta eta";
        let toks = tokenize(text);
        let v = Vocab::build(toks.iter().map(String::as_str), 9).unwrap();
        // Oracle: count then sort all (count desc, token asc) pairs.
        let mut counts: Vec<(usize, String)> = Vec::new();
        for t in &toks {
            match counts.iter_mut().find(|(_, s)| s == t) {
                Some(e) => e.0 += 1,
                None => counts.push((1, t.clone())),
            }
        }
        counts.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let expected: Vec<&str> = counts.iter().take(4).map(|(_, s)| s.as_str()).collect();
        assert_eq!(&v.tokens()[5..], expected.as_slice());
        assert_eq!(expected, ["alpha", "beta", "delta", "eta"]);
    }

    #[test]
    fn vocab_errors() {
        assert!(matches!(Vocab::build(std::iter::empty(), 10), Err(Error::EmptyCorpus)));
        assert!(Vocab::build(["a"], 5).is_err());
    }

    #[test]
    fn vocab_tsv_round_trip_and_validation() {
        let toks = tokenize("the cat sat on the mat");
        let v = Vocab::build(toks.iter().map(String::as_str), 100).unwrap();
        assert_eq!(Vocab::from_tsv(&v.to_tsv()).unwrap(), v);
        let broken = v.to_tsv().replacen("<sos>\t1", "<sos>\t9", 1);
        assert!(Vocab::from_tsv(&broken).is_err());
        let swapped = "<pad>\t0\n<eos>\t1\n<sos>\t2\n<unk>\t3\n<sop>\t4\n";
        assert!(Vocab::from_tsv(swapped).is_err());
    }

    #[test]
    fn corpus_paragraphs() {
        let c = Corpus::parse("A b.\nC d.\n\n\nE f.\n");
        assert_eq!(c.paragraphs.len(), 2);
        assert_eq!(c.num_sentences(), 3);
    }

    #[test]
    fn next_pairs_stay_inside_paragraphs() {
        let paras = vec![vec![vec![5], vec![6], vec![7]], vec![vec![8]], vec![vec![9], vec![10]]];
        let pb = PairBatches::new(&paras, PairMode::Next, 10, 1).unwrap();
        let mut pairs = pb.pairs().to_vec();
        pairs.sort();
        assert_eq!(pairs, vec![(vec![5], vec![6]), (vec![6], vec![7]), (vec![9], vec![10])]);
        assert_eq!(pb.stats.single_sentence_paragraphs, 1);
        let selfs = PairBatches::new(&[vec![vec![5, 6]]], PairMode::SelfPair, 4, 1).unwrap();
        assert_eq!(selfs.pairs(), &[(vec![5, 6], vec![5, 6])]);
    }

    #[test]
    fn epoch_shuffle_is_reproducible() {
        let paras: Vec<Vec<Vec<usize>>> = vec![(5..40).map(|i| vec![i]).collect()];
        let pb = PairBatches::new(&paras, PairMode::SelfPair, 4, 3).unwrap();
        assert_eq!(pb.epoch(7, 0).unwrap(), pb.epoch(7, 0).unwrap());
        assert_ne!(pb.epoch_order(7, 0), pb.epoch_order(7, 1));
        assert_ne!(pb.epoch_order(7, 0), pb.epoch_order(8, 0));
    }

    #[test]
    fn paragraph_chunking() {
        let para = |n: usize| -> Vec<Vec<usize>> { (0..n).map(|i| vec![5 + i]).collect() };
        let pb = ParagraphBatches::new(&[para(16)], 8, 8, 3).unwrap();
        assert_eq!(pb.stats.chunks, 2);
        assert!(ParagraphBatches::new(&[para(7)], 8, 8, 3).is_err());
        let pb = ParagraphBatches::new(&[para(7), para(9), para(24)], 8, 2, 3).unwrap();
        assert_eq!(pb.stats, ParagraphStats { chunks: 4, dropped_paragraphs: 1 });
        let batches = pb.epoch(1, 0).unwrap();
        assert_eq!(batches.len(), 2);
        for b in &batches {
            assert_eq!(b.num_sentences(), 8);
            for s in &b.sentences {
                assert_eq!(s.batch_size(), b.batch_size());
            }
        }
    }

    #[test]
    fn paragraph_order_is_preserved() {
        let para: Vec<Vec<usize>> = (0..8).map(|i| vec![10 + i, 20 + i]).collect();
        let pb = ParagraphBatches::new(std::slice::from_ref(&para), 8, 1, 3).unwrap();
        let batch = &pb.epoch(3, 0).unwrap()[0];
        for (s, sb) in batch.sentences.iter().enumerate() {
            assert_eq!(sb.content(0), para[s].as_slice());
        }
    }

    #[test]
    fn batch_pads_to_window() {
        let b = SentenceBatch::new(&[vec![7usize]], 5).unwrap();
        assert_eq!(b.seq_len, 5);
        assert_eq!(b.row(0), &[7, EOS, PAD, PAD, PAD]);
        assert_eq!(b.target(0), &[7, EOS]);
        assert_eq!(b.content(0), &[7]);
        assert!(SentenceBatch::new(&[Vec::<usize>::new()], 3).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in prop::collection::vec("[a-z]{1,6}", 1..30)) {
            let v = Vocab::build(words.iter().map(String::as_str), 1000).unwrap();
            let ids = v.encode(&words);
            prop_assert_eq!(v.decode(&ids), words);
        }

        #[test]
        fn batches_satisfy_invariants(
            sentences in prop::collection::vec(prop::collection::vec(5usize..50, 1..12), 1..20),
            min_len in 1usize..8,
            batch in 1usize..6,
        ) {
            let pb = PairBatches::new(&[sentences], PairMode::Next, batch, min_len);
            if let Ok(pb) = pb {
                for (src, tgt) in pb.epoch(0, 0).unwrap() {
                    prop_assert!(src.validate().is_ok());
                    prop_assert!(tgt.validate().is_ok());
                    prop_assert!(src.seq_len >= min_len);
                    prop_assert_eq!(src.batch_size(), tgt.batch_size());
                }
            }
        }

        #[test]
        fn next_pairs_never_cross_paragraphs(sizes in prop::collection::vec(1usize..6, 1..8)) {
            // Label each sentence with its paragraph number.
            let paras: Vec<Vec<Vec<usize>>> = sizes
                .iter()
                .enumerate()
                .map(|(p, &n)| (0..n).map(|s| vec![100 * (p + 1) + s]).collect())
                .collect();
            if let Ok(pb) = PairBatches::new(&paras, PairMode::Next, 3, 1) {
                for (a, b) in pb.pairs() {
                    prop_assert_eq!(a[0] / 100, b[0] / 100);
                    prop_assert_eq!(a[0] + 1, b[0]);
                }
                let expected: usize = sizes.iter().map(|n| n - 1).sum();
                prop_assert_eq!(pb.stats.pairs, expected);
            }
        }
    }
}
