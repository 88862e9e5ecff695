use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use cnnlstm::embeddings::{fit_from_vocab, EmbeddingMode, ExpansionMethod, ExternalEmbeddings, VocabExpander};
use cnnlstm::eval::synthetic::aligned_pairs;
use cnnlstm::eval::{self, ClassifierConfig, FeatureSet, RankingConfig, Report};
use cnnlstm::model::{parse_kv, train, BatchStream, Container, Model};
use cnnlstm::text::{tokenize, Corpus};
use cnnlstm::{Checkpoint, Vocab};

use crate::config::RunConfig;
use crate::cli::{
    ArithArgs, ClassifierFlags, Command, Common, EncodeArgs, EvalClsArgs, EvalFlags, EvalPairArgs, EvalRankArgs,
    ModelFlags, NnArgs, TrainArgs, TrainFlags,
};

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or unusable inputs; exit code 2.
    Usage(String),
    /// Anything that went wrong while running; exit code 1.
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Nn(a) => cmd_nn(a),
        Command::Arith(a) => cmd_arith(a),
        Command::EvalCls(a) => cmd_eval_cls(a),
        Command::EvalPair(a) => cmd_eval_pair(a),
        Command::EvalRank(a) => cmd_eval_rank(a),
    }
}

/// Collects `key=value` settings: the config file first, then every flag that was given.
#[derive(Default)]
struct Pairs(Vec<(String, String)>);

impl Pairs {
    fn from_common(common: &Common) -> Outcome<Self> {
        let mut pairs = Self::default();
        if let Some(path) = &common.config {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            pairs.0 = parse_kv(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        }
        pairs.add("seed", common.seed);
        Ok(pairs)
    }

    fn add<T: ToString>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.0.push((key.to_string(), v.to_string()));
        }
    }

    fn add_path(&mut self, key: &str, value: &Option<PathBuf>) {
        self.add(key, value.as_ref().map(|p| p.display()));
    }

    fn model(&mut self, f: &ModelFlags) {
        self.add("variant", f.variant.as_ref());
        self.add("vocab_size", f.vocab_size);
        self.add("embed_dim", f.embed_dim);
        self.add("windows", f.windows.as_ref());
        self.add("maps_per_window", f.maps_per_window);
        self.add("hidden", f.hidden);
        self.add("paragraph_hidden", f.paragraph_hidden);
        self.add("embedding_mode", f.embedding_mode.as_ref());
    }

    fn train(&mut self, f: &TrainFlags) {
        self.add("learning_rate", f.learning_rate);
        self.add("clip_norm", f.clip_norm);
        self.add("batch_size", f.batch_size);
        self.add("sentences_per_paragraph", f.sentences_per_paragraph);
        self.add("dropout", f.dropout);
        self.add("init_range", f.init_range);
        self.add("forget_bias", f.forget_bias);
        self.add("adam_beta1", f.adam_beta1);
        self.add("adam_beta2", f.adam_beta2);
        self.add("adam_eps", f.adam_eps);
        self.add("max_steps", f.max_steps);
    }

    fn eval(&mut self, f: &EvalFlags) {
        self.add("threads", f.threads);
    }

    fn classifier(&mut self, f: &ClassifierFlags) {
        self.add("test_fraction", f.test_fraction);
        self.add("l2", f.l2);
        self.add("epochs", f.epochs);
    }

    /// Resolves and validates. Returns `None` after printing with `--print-config`.
    fn finish(self, command: &str, common: &Common) -> Outcome<Option<RunConfig>> {
        let mut config = RunConfig::resolve(command, &self.0).map_err(|e| usage(e.to_string()))?;
        config.command = command.to_string();
        config.validate().map_err(|e| usage(e.to_string()))?;
        if common.print_config {
            print!("{}", config.to_kv());
            return Ok(None);
        }
        Ok(Some(config))
    }
}

fn existing(path: &str, what: &str) -> Outcome<PathBuf> {
    if path.is_empty() {
        return Err(usage(format!("--{what} is required")));
    }
    let p = PathBuf::from(path);
    if !p.is_file() {
        return Err(usage(format!("{what} not found: {path}")));
    }
    Ok(p)
}

fn existing_path(path: &Path, what: &str) -> Outcome<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} not found: {}", path.display())))
    }
}

fn set_threads(config: &RunConfig) {
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(config.eval.threads)
        .build_global();
}

fn load_model(config: &RunConfig) -> Outcome<(Model<f32>, Vocab)> {
    let path = existing(&config.checkpoint, "checkpoint")?;
    let checkpoint = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let model = checkpoint.to_model::<f32>()?;
    Ok((model, checkpoint.vocab))
}

fn cmd_train(args: TrainArgs) -> Outcome {
    let mut pairs = Pairs::from_common(&args.common)?;
    pairs.model(&args.model);
    pairs.train(&args.train);
    pairs.add_path("corpus", &args.corpus);
    pairs.add_path("checkpoint", &args.checkpoint);
    let Some(config) = pairs.finish("train", &args.common)? else { return Ok(()) };

    let corpus_path = existing(&config.corpus, "corpus")?;
    if config.checkpoint.is_empty() {
        return Err(usage("--checkpoint is required"));
    }
    let external = match &args.embeddings {
        Some(p) => {
            existing_path(p, "embeddings")?;
            Some(ExternalEmbeddings::load(p)?)
        }
        None if config.dims.embedding_mode == EmbeddingMode::Fixed => {
            return Err(usage("fixed embeddings need --embeddings"));
        }
        None => None,
    };
    if let Some(ext) = &external {
        if ext.dim != config.dims.embed_dim {
            return Err(usage(format!(
                "embeddings have width {} but embed_dim is {}",
                ext.dim, config.dims.embed_dim
            )));
        }
    }

    let corpus = Corpus::load(&corpus_path)?;
    let vocab = Vocab::from_corpus(&corpus, config.dims.vocab_size)?;
    let mut dims = config.dims.clone();
    dims.vocab_size = vocab.len();
    let t = &config.train;
    let mut model = Model::<f32>::init(config.variant, &dims, t.init_range, t.forget_bias, t.seed)?;
    if let Some(ext) = &external {
        let table = model.embedding().clone();
        let copied = table.copy_from_external(&mut model.params, &vocab, ext)?;
        log::info!("copied {copied} external word vectors");
    }
    let min_len = dims.windows.iter().copied().max().unwrap_or(1);
    let stream = BatchStream::new(config.variant, &corpus.encode(&vocab), t, min_len)?;

    let checkpoint = PathBuf::from(&config.checkpoint);
    let metrics = args
        .metrics
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.metrics.tsv", config.checkpoint)));
    let mut log = BufWriter::new(File::create(&metrics).with_context(|| format!("creating {}", metrics.display()))?);
    let report = train(&mut model, &stream, t, Some(&mut log))?;
    log.flush()?;
    Checkpoint::from_model(&model, &vocab, t).save(&checkpoint)?;

    let mut out = Report::new();
    out.push("steps", report.losses.len());
    out.push("final_loss", report.losses.last().copied().unwrap_or(f64::NAN));
    out.push("vocab_size", vocab.len());
    out.push("checkpoint", checkpoint.display());
    out.push("metrics", metrics.display());
    print!("{out}");
    Ok(())
}

fn read_lines(path: &Path, what: &str) -> Outcome<Vec<String>> {
    existing_path(path, what)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn sentence_ids(vocab: &Vocab, text: &str, what: &str) -> Outcome<Vec<usize>> {
    let ids = vocab.encode_text(text);
    if ids.is_empty() {
        return Err(usage(format!("{what} is empty")));
    }
    Ok(ids)
}

fn is_text_dump(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("tsv" | "txt"))
}

fn read_features(path: &Path) -> Outcome<FeatureSet> {
    existing_path(path, "features")?;
    if is_text_dump(path) {
        Ok(FeatureSet::from_tsv(&fs::read_to_string(path)?, path)?)
    } else {
        Ok(FeatureSet::from_container(&Container::load(path)?)?)
    }
}

fn cmd_encode(args: EncodeArgs) -> Outcome {
    let mut pairs = Pairs::from_common(&args.common)?;
    pairs.eval(&args.eval);
    pairs.add_path("checkpoint", &args.checkpoint);
    let Some(config) = pairs.finish("encode", &args.common)? else { return Ok(()) };
    set_threads(&config);
    let lines = read_lines(&args.input, "input")?;
    let (model, vocab) = load_model(&config)?;

    let rows = match &args.expand {
        None => {
            let ids = lines
                .iter()
                .enumerate()
                .map(|(i, l)| sentence_ids(&vocab, l, &format!("input line {}", i + 1)))
                .collect::<Outcome<Vec<_>>>()?;
            eval::encode_all(&model, &ids)?
        }
        Some(path) => {
            existing_path(path, "expansion vectors")?;
            let external = ExternalEmbeddings::load(path)?;
            let table = model.embedding();
            let method = match table.mode {
                EmbeddingMode::Fixed => ExpansionMethod::Fixed,
                EmbeddingMode::Learned => {
                    ExpansionMethod::LinearMap(fit_from_vocab(table, &model.params, &vocab, &external)?)
                }
            };
            let mut expander = VocabExpander::new(method, &external);
            let mut rows = Vec::with_capacity(lines.len());
            for (i, line) in lines.iter().enumerate() {
                let tokens = tokenize(line);
                if tokens.is_empty() {
                    return Err(usage(format!("input line {} is empty", i + 1)));
                }
                let x = expander.embed_sentence(&tokens, table, &model.params, &vocab)?;
                let z = model.encoder.encode_embedded(&model.params, &x)?;
                rows.push(z.into_iter().map(f64::from).collect());
            }
            if !expander.misses.is_empty() {
                log::warn!("{} tokens found in neither table", expander.misses.len());
            }
            rows
        }
    };
    let n = rows.len();
    let provenance = format!("checkpoint={} input={}", config.checkpoint, args.input.display());
    let features = FeatureSet::new(rows, vec![0.0; n], provenance)?;
    if is_text_dump(&args.output) {
        fs::write(&args.output, features.to_tsv())?;
    } else {
        features.to_container().save(&args.output)?;
    }
    let mut out = Report::new();
    out.push("rows", n);
    out.push("dim", model.z_dim());
    out.push("output", args.output.display());
    print!("{out}");
    Ok(())
}

fn cmd_nn(args: NnArgs) -> Outcome {
    let mut pairs = Pairs::from_common(&args.common)?;
    pairs.eval(&args.eval);
    pairs.add_path("checkpoint", &args.checkpoint);
    pairs.add("top_k", args.top_k);
    let Some(config) = pairs.finish("nn", &args.common)? else { return Ok(()) };
    set_threads(&config);
    let pool: Vec<String> = read_lines(&args.pool, "pool")?
        .into_iter()
        .filter(|l| !l.trim().is_empty())
        .collect();
    if pool.is_empty() {
        return Err(usage("pool is empty"));
    }
    let (model, vocab) = load_model(&config)?;
    let query = sentence_ids(&vocab, &args.query, "query")?;
    let ids: Vec<Vec<usize>> = pool.iter().map(|l| vocab.encode_text(l)).collect();
    let codes = eval::encode_all(&model, &ids)?;
    let q: Vec<f64> = model.encode(&query)?.into_iter().map(f64::from).collect();
    for (rank, (idx, score)) in eval::cosine_nn(&q, &codes, config.eval.top_k)?.into_iter().enumerate() {
        println!("{}\t{score}\t{}", rank + 1, pool[idx]);
    }
    Ok(())
}

fn cmd_arith(args: ArithArgs) -> Outcome {
    let mut pairs = Pairs::from_common(&args.common)?;
    pairs.add_path("checkpoint", &args.checkpoint);
    pairs.add("max_len", args.max_len);
    let Some(config) = pairs.finish("arith", &args.common)? else { return Ok(()) };
    let (model, vocab) = load_model(&config)?;
    let a = sentence_ids(&vocab, &args.a, "A")?;
    let b = sentence_ids(&vocab, &args.b, "B")?;
    let c = sentence_ids(&vocab, &args.c, "C")?;
    let out = eval::vector_arithmetic(&model, &a, &b, &c, config.eval.max_len)?;
    println!("{}", vocab.decode(&out).join(" "));
    Ok(())
}

fn classifier_config(config: &RunConfig) -> ClassifierConfig {
    ClassifierConfig {
        l2: config.eval.l2,
        epochs: config.eval.epochs,
        test_fraction: config.eval.test_fraction,
        seed: config.train.seed,
        ..ClassifierConfig::default()
    }
}

/// Splits `field<TAB>rest` lines, skipping blank ones; returns 1-based line numbers.
fn tab_fields(lines: &[String], fields: usize, what: &str) -> Outcome<Vec<(usize, Vec<String>)>> {
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let parts: Vec<String> = l.split('\t').map(str::to_string).collect();
            if parts.len() != fields {
                return Err(usage(format!("{what} line {}: expected {fields} tab-separated fields", i + 1)));
            }
            Ok((i + 1, parts))
        })
        .collect()
}

fn cmd_eval_cls(args: EvalClsArgs) -> Outcome {
    let mut pairs = Pairs::from_common(&args.common)?;
    pairs.eval(&args.eval);
    pairs.classifier(&args.cls);
    pairs.add_path("checkpoint", &args.checkpoint);
    let Some(config) = pairs.finish("eval-cls", &args.common)? else { return Ok(()) };
    set_threads(&config);
    let (features, labels) = match (&args.features, &args.data) {
        (Some(path), _) => {
            let set = read_features(path)?;
            let labels = set
                .labels
                .iter()
                .map(|&y| {
                    if y >= 0.0 && y.fract() == 0.0 {
                        Ok(y as usize)
                    } else {
                        Err(usage(format!("label {y} is not a class id")))
                    }
                })
                .collect::<Outcome<Vec<_>>>()?;
            (set.rows, labels)
        }
        (None, Some(path)) => {
            let rows = tab_fields(&read_lines(path, "data")?, 2, "data")?;
            let (model, vocab) = load_model(&config)?;
            let mut labels = Vec::with_capacity(rows.len());
            let mut ids = Vec::with_capacity(rows.len());
            for (line, f) in &rows {
                labels.push(
                    f[0].trim()
                        .parse::<usize>()
                        .map_err(|_| usage(format!("data line {line}: bad label `{}`", f[0])))?,
                );
                ids.push(sentence_ids(&vocab, &f[1], &format!("data line {line}"))?);
            }
            (eval::encode_all(&model, &ids)?, labels)
        }
        (None, None) => return Err(usage("give --data or --features")),
    };
    let result = eval::train_linear_classifier(&features, &labels, &classifier_config(&config))?;
    let mut out = Report::new();
    out.push("examples", labels.len());
    out.push("classes", result.classifier.classes);
    out.push("dim", features.first().map_or(0, Vec::len));
    out.push("train_size", result.train_size);
    out.push("test_size", result.test_size);
    out.push("train_accuracy", result.train_accuracy);
    out.push("test_accuracy", result.test_accuracy);
    print!("{out}");
    Ok(())
}

fn cmd_eval_pair(args: EvalPairArgs) -> Outcome {
    let mut pairs = Pairs::from_common(&args.common)?;
    pairs.eval(&args.eval);
    pairs.classifier(&args.cls);
    pairs.add_path("checkpoint", &args.checkpoint);
    let Some(config) = pairs.finish("eval-pair", &args.common)? else { return Ok(()) };
    set_threads(&config);
    let rows = tab_fields(&read_lines(&args.data, "data")?, 3, "data")?;
    let (model, vocab) = load_model(&config)?;
    let mut scores = Vec::with_capacity(rows.len());
    let mut left = Vec::with_capacity(rows.len());
    let mut right = Vec::with_capacity(rows.len());
    for (line, f) in &rows {
        let y: f64 = f[0]
            .trim()
            .parse()
            .map_err(|_| usage(format!("data line {line}: bad score `{}`", f[0])))?;
        if !(1.0..=5.0).contains(&y) {
            return Err(usage(format!("data line {line}: score {y} outside [1, 5]")));
        }
        scores.push(y);
        left.push(sentence_ids(&vocab, &f[1], &format!("data line {line}"))?);
        right.push(sentence_ids(&vocab, &f[2], &format!("data line {line}"))?);
    }
    let (za, zb) = (eval::encode_all(&model, &left)?, eval::encode_all(&model, &right)?);
    let features = za
        .iter()
        .zip(&zb)
        .map(|(a, b)| eval::pair_features(a, b))
        .collect::<cnnlstm::Result<Vec<_>>>()?;
    let (train_idx, test_idx) = eval::split_indices(scores.len(), config.eval.test_fraction, config.train.seed);
    if train_idx.is_empty() || test_idx.len() < 2 {
        return Err(usage("need at least one training pair and two test pairs"));
    }
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        (idx.iter().map(|&i| features[i].clone()).collect(), idx.iter().map(|&i| scores[i]).collect())
    };
    let (train_x, train_y) = pick(&train_idx);
    let (test_x, test_y) = pick(&test_idx);
    let head = eval::train_relatedness(&train_x, &train_y, &classifier_config(&config))?;
    let predicted: Vec<f64> = test_x.iter().map(|x| head.predict(x)).collect();
    let mse = predicted.iter().zip(&test_y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / test_y.len() as f64;
    let mut out = Report::new();
    out.push("pairs", scores.len());
    out.push("train_size", train_idx.len());
    out.push("test_size", test_idx.len());
    out.push("pearson", eval::pearson(&predicted, &test_y));
    out.push("mse", mse);
    print!("{out}");
    Ok(())
}

fn cmd_eval_rank(args: EvalRankArgs) -> Outcome {
    let mut pairs = Pairs::from_common(&args.common)?;
    pairs.eval(&args.eval);
    pairs.add("pool", args.pool);
    pairs.add("epochs", args.epochs);
    pairs.add("shared_dim", args.shared_dim);
    let Some(config) = pairs.finish("eval-rank", &args.common)? else { return Ok(()) };
    set_threads(&config);
    let (captions, items) = match (&args.synthetic, &args.captions, &args.items) {
        (Some(n), _, _) => aligned_pairs(*n, 16, 48, 32, 0.1, config.train.seed),
        (None, Some(c), Some(i)) => (read_features(c)?.rows, read_features(i)?.rows),
        _ => return Err(usage("give --synthetic or both --captions and --items")),
    };
    if captions.len() != items.len() {
        return Err(usage(format!("{} captions but {} items", captions.len(), items.len())));
    }
    let pool = config.eval.pool;
    if captions.len() < pool + 2 {
        return Err(usage(format!("need more than {} pairs for a pool of {pool}", pool + 1)));
    }
    let split = captions.len() - pool;
    let rank_config = RankingConfig {
        shared_dim: config.eval.shared_dim,
        epochs: config.eval.epochs,
        seed: config.train.seed,
        ..RankingConfig::default()
    };
    let (model, losses) = eval::train_ranking(&captions[..split], &items[..split], &rank_config)?;
    let scores = model.score_matrix(&captions[split..], &items[split..])?;
    let truth: Vec<usize> = (0..pool).collect();
    let r = eval::rank_eval(&scores, &truth)?;
    let mut out = Report::new();
    out.push("pairs", captions.len());
    out.push("train_size", split);
    out.push("pool", pool);
    out.push("final_loss", losses.last().copied().unwrap_or(f64::NAN));
    out.push("recall_at_1", r.recall_at_1);
    out.push("recall_at_5", r.recall_at_5);
    out.push("recall_at_10", r.recall_at_10);
    out.push("median_rank", r.median_rank);
    print!("{out}");
    Ok(())
}
