//! Pipeline commands. Every command reads its inputs from the work
//! directory (or explicit paths), writes its outputs there and records a
//! manifest next to them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use sublm::corpus::synthetic::WordSampler;
use sublm::corpus::{
    apply_case_transform, build_vocab, corpus_stats, count_tokens, deduplicate, handle_oov, invert_case_transform,
    oov_rate, overlap_stats, read_sentences, shuffle, split_train_valid, stats_table, write_sentences, OovMode,
    Sentence, Vocabulary,
};
use sublm::eval::{report_tsv, word_level_perplexity, EvalReport, TokenCountPolicy, WordLevelPerplexity};
use sublm::neural::{train_lstm, NeuralLm, TrainReport};
use sublm::ngram::{train_kn, NgramModel};
use sublm::subword::{tokens_per_word_ratio, train_unigram, SubwordModel};
use sublm::{LanguageModel, TokenId};

use crate::config::{LmKind, RunConfig};
use crate::manifest::Manifest;

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const DEDUP_FILE: &str = "dedup.txt";
pub const TRAIN_FILE: &str = "train.txt";
pub const TOKENIZER_FILE: &str = "tokenizer.model";
pub const NGRAM_FILE: &str = "lm.kn";
pub const CHECKPOINT_FILE: &str = "lm.ckpt";

/// Shared state of one invocation.
pub struct Run {
    pub config: RunConfig,
    pub work: PathBuf,
}

impl Run {
    pub fn file(&self, name: &str) -> PathBuf {
        self.work.join(name)
    }

    fn manifest_path(&self, command: &str) -> PathBuf {
        self.file(&format!("{command}.manifest.json"))
    }

    fn ensure_work_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.work).with_context(|| format!("creating {}", self.work.display()))
    }

    pub fn vocab(&self) -> Result<Vocabulary> {
        let path = self.file(VOCAB_FILE);
        Ok(Vocabulary::read(open(&path)?).with_context(|| format!("reading {}", path.display()))?)
    }

    pub fn tokenizer_at(&self, path: &Path) -> Result<SubwordModel> {
        Ok(SubwordModel::read(open(path)?).with_context(|| format!("reading {}", path.display()))?)
    }

    /// OOV handling followed by the optional case transform.
    pub fn prepare(&self, sentences: &[Sentence], vocab: &Vocabulary) -> Result<Vec<Sentence>> {
        let mode: OovMode = self.config.get("oov_mode")?;
        let case: bool = self.config.get("case_transform")?;
        sentences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let s = handle_oov(s, vocab, mode);
                if case {
                    apply_case_transform(&s).with_context(|| format!("sentence {}", i + 1))
                } else {
                    Ok(s)
                }
            })
            .collect()
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Sentence>> {
    read_sentences(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn write_corpus(path: &Path, sentences: &[Sentence]) -> Result<()> {
    write_sentences(create(path)?, sentences).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

/// count, vocabulary, dedup, OOV replacement, case transform.
pub fn preprocess(run: &Run) -> Result<()> {
    let corpus_path = run.config.path("corpus")?;
    let raw = read_corpus(&corpus_path)?;
    let raw: Vec<Sentence> = raw.into_iter().filter(|s| !s.is_empty()).collect();
    if raw.is_empty() {
        bail!("{} holds no sentences", corpus_path.display());
    }
    let vocab = build_vocab(&count_tokens(&raw), run.config.get("min_count")?);
    let stats = corpus_stats(&raw, &vocab);
    let dedup = deduplicate(raw);
    info!(
        "{} sentences, {} after deduplication",
        stats.sentence_count,
        dedup.len()
    );
    let train = run.prepare(&dedup, &vocab)?;

    run.ensure_work_dir()?;
    let (vocab_path, dedup_path, train_path) = (run.file(VOCAB_FILE), run.file(DEDUP_FILE), run.file(TRAIN_FILE));
    vocab.write(create(&vocab_path)?)?;
    write_corpus(&dedup_path, &dedup)?;
    write_corpus(&train_path, &train)?;
    Manifest::new("preprocess", &run.config)
        .input("corpus", &corpus_path)
        .output("vocab", &vocab_path)
        .output("dedup", &dedup_path)
        .output("train", &train_path)
        .write(&run.manifest_path("preprocess"))?;
    print!("{}", stats_table([("corpus", &stats)]));
    println!("vocabulary\t{}", vocab.len());
    println!("deduplicated_sentences\t{}", dedup.len());
    Ok(())
}

pub fn train_tokenizer(run: &Run) -> Result<()> {
    let train_path = run.file(TRAIN_FILE);
    let train = read_corpus(&train_path)?;
    let size: usize = run.config.get("vocab_size")?;
    let (model, log) = train_unigram(&train, size, &run.config.trainer_options()?)?;
    let model_path = run.file(TOKENIZER_FILE);
    let log_path = run.file("tokenizer.log.tsv");
    model.write(create(&model_path)?)?;
    write_text(&log_path, &log.to_string())?;
    Manifest::new("train-tokenizer", &run.config)
        .input("train", &train_path)
        .output("tokenizer", &model_path)
        .output("log", &log_path)
        .write(&run.manifest_path("train-tokenizer"))?;
    println!("vocab_size\t{}", model.len());
    println!("tokens_per_word\t{:.6}", tokens_per_word_ratio(&model, &train)?);
    Ok(())
}

/// Encodes a corpus file into space-separated pieces. With `raw`, the
/// input first goes through OOV replacement and the case transform.
pub fn encode(run: &Run, input: Option<&Path>, output: Option<&Path>, raw: bool) -> Result<()> {
    let input = input.map_or_else(|| run.file(TRAIN_FILE), Path::to_path_buf);
    let output = output.map_or_else(|| run.file("train.pieces"), Path::to_path_buf);
    let tokenizer_path = run.file(TOKENIZER_FILE);
    let tokenizer = run.tokenizer_at(&tokenizer_path)?;
    let mut sentences = read_corpus(&input)?;
    let mut manifest = Manifest::new("encode", &run.config);
    manifest
        .input("text", &input)
        .input("tokenizer", &tokenizer_path)
        .arg("raw", raw);
    if raw {
        sentences = run.prepare(&sentences, &run.vocab()?)?;
        manifest.input("vocab", &run.file(VOCAB_FILE));
    }
    let encodings = tokenizer.encode_corpus(&sentences)?;
    let mut out = create(&output)?;
    for e in &encodings {
        writeln!(out, "{}", tokenizer.id_to_text(&e.ids)?.join(" "))?;
    }
    out.flush()?;
    drop(out);
    manifest.output("pieces", &output).write(&run.manifest_path("encode"))?;
    Ok(())
}

/// Joins pieces back into words; `restore_case` undoes the case transform.
pub fn decode(run: &Run, input: &Path, output: &Path, restore_case: bool) -> Result<()> {
    let tokenizer_path = run.file(TOKENIZER_FILE);
    let tokenizer = run.tokenizer_at(&tokenizer_path)?;
    let mut out = create(output)?;
    for (i, line) in open(input)?.lines().enumerate() {
        let line = line.with_context(|| format!("{}:{}", input.display(), i + 1))?;
        let pieces: Vec<&str> = line.split_whitespace().collect();
        let ids = tokenizer
            .text_to_ids(&pieces)
            .with_context(|| format!("{}:{}", input.display(), i + 1))?;
        let decoded = tokenizer.decode(&ids)?;
        if decoded.started_mid_word {
            log::warn!("{}:{}: starts with a continuation piece", input.display(), i + 1);
        }
        let sentence = if restore_case {
            invert_case_transform(&decoded.sentence).with_context(|| format!("{}:{}", input.display(), i + 1))?
        } else {
            decoded.sentence
        };
        writeln!(out, "{sentence}")?;
    }
    out.flush()?;
    drop(out);
    Manifest::new("decode", &run.config)
        .input("pieces", input)
        .input("tokenizer", &tokenizer_path)
        .arg("restore_case", restore_case)
        .output("text", output)
        .write(&run.manifest_path("decode"))?;
    Ok(())
}

/// Sentences shuffled with the run seed, then split so the validation part
/// holds `fraction` of the tokens. `len` measures a sentence.
pub fn shuffled_split<T, F>(mut items: Vec<T>, seed: u64, fraction: f64, len: F) -> Result<(Vec<T>, Vec<T>)>
where
    F: Fn(&T) -> usize,
{
    shuffle(&mut items, seed);
    let total: usize = items.iter().map(&len).sum();
    let target = (total as f64 * fraction).ceil() as usize;
    let (valid, train) = split_train_valid(items, target, len)?;
    Ok((train, valid))
}

fn lm_kind(run: &Run, flag: Option<&str>) -> Result<LmKind> {
    match flag {
        Some(kind) => kind.parse().map_err(crate::failure::usage),
        None => run.config.get("lm_kind"),
    }
}

pub fn train_lm(run: &Run, kind: Option<&str>) -> Result<()> {
    let kind = lm_kind(run, kind)?;
    let train_path = run.file(TRAIN_FILE);
    let tokenizer_path = run.file(TOKENIZER_FILE);
    let tokenizer = run.tokenizer_at(&tokenizer_path)?;
    let train = read_corpus(&train_path)?;
    let stream: Vec<Vec<TokenId>> = tokenizer.encode_corpus(&train)?.into_iter().map(|e| e.ids).collect();
    let symbols = tokenizer.symbols();
    let mut manifest = Manifest::new("train-lm", &run.config);
    manifest
        .input("train", &train_path)
        .input("tokenizer", &tokenizer_path)
        .arg("kind", format!("{kind:?}").to_lowercase());
    match kind {
        LmKind::Ngram => {
            let order: usize = run.config.get("ngram_order")?;
            let model = train_kn(symbols, &stream, order, run.config.get("ngram_discount")?)?;
            let path = run.file(NGRAM_FILE);
            model.write(create(&path)?)?;
            manifest.output("model", &path);
            println!("order\t{order}");
            for (k, n) in model.sizes().iter().enumerate() {
                println!("{}-grams\t{n}", k + 1);
            }
        }
        LmKind::Lstm => {
            let (lm, report) = fit_lstm(run, symbols, stream, run.config.lstm_config(tokenizer.len())?)?;
            let (path, log_path) = (run.file(CHECKPOINT_FILE), run.file("lm.log.tsv"));
            lm.write_checkpoint(create(&path)?)?;
            write_text(&log_path, &report.to_tsv())?;
            manifest.output("model", &path).output("log", &log_path);
            print!("{}", report.to_tsv());
            println!("best_epoch\t{}", report.best_epoch);
        }
    }
    manifest.write(&run.manifest_path("train-lm"))
}

/// Shuffles, splits off the validation share and trains.
pub fn fit_lstm(
    run: &Run,
    symbols: sublm::SymbolTable,
    stream: Vec<Vec<TokenId>>,
    config: sublm::neural::LstmConfig,
) -> Result<(NeuralLm, TrainReport)> {
    let seed: u64 = run.config.get("seed")?;
    let fraction: f64 = run.config.get("valid_fraction")?;
    let (train, valid) = shuffled_split(stream, seed, fraction, |s| s.len() + 1)?;
    info!(
        "lstm: {} training and {} validation sentences",
        train.len(),
        valid.len()
    );
    Ok(train_lstm(
        config,
        symbols,
        &train,
        &valid,
        &run.config.train_options()?,
    )?)
}

/// A trained model of either kind.
pub enum LoadedLm {
    Ngram(NgramModel),
    Lstm(NeuralLm),
}

impl LoadedLm {
    pub fn as_lm(&self) -> &(dyn LanguageModel + Sync) {
        match self {
            LoadedLm::Ngram(m) => m,
            LoadedLm::Lstm(m) => m,
        }
    }
}

fn load_lm(run: &Run, kind: LmKind) -> Result<(LoadedLm, PathBuf)> {
    Ok(match kind {
        LmKind::Ngram => {
            let path = run.file(NGRAM_FILE);
            let model = NgramModel::read(open(&path)?).with_context(|| format!("reading {}", path.display()))?;
            (LoadedLm::Ngram(model), path)
        }
        LmKind::Lstm => {
            let path = run.file(CHECKPOINT_FILE);
            let model =
                NeuralLm::read_checkpoint(open(&path)?).with_context(|| format!("reading {}", path.display()))?;
            (LoadedLm::Lstm(model), path)
        }
    })
}

/// Word-level perplexity of `lm` on raw sentences, preprocessed like the
/// training data.
pub fn score_raw(
    run: &Run,
    lm: &(dyn LanguageModel + Sync),
    tokenizer: &SubwordModel,
    raw: &[Sentence],
    vocab: &Vocabulary,
) -> Result<WordLevelPerplexity> {
    let prepared = run.prepare(raw, vocab)?;
    let policy: TokenCountPolicy = run.config.get("token_count_policy")?;
    Ok(word_level_perplexity(lm, tokenizer, &prepared, policy)?)
}

pub fn eval(run: &Run, test: Option<&Path>, kind: Option<&str>) -> Result<()> {
    let kind = lm_kind(run, kind)?;
    let test_path = match test {
        Some(p) => p.to_path_buf(),
        None => run.config.path("test")?,
    };
    let raw = read_corpus(&test_path)?;
    let vocab = run.vocab()?;
    let tokenizer_path = run.file(TOKENIZER_FILE);
    let tokenizer = run.tokenizer_at(&tokenizer_path)?;
    let (lm, lm_path) = load_lm(run, kind)?;
    let dedup_path = run.file(DEDUP_FILE);
    let seen = read_corpus(&dedup_path)?;
    let perplexity = score_raw(run, lm.as_lm(), &tokenizer, &raw, &vocab)?;
    let report = EvalReport {
        dataset: test_path
            .file_stem()
            .map_or_else(|| "test".to_string(), |s| s.to_string_lossy().into_owned()),
        policy: run.config.get("token_count_policy")?,
        perplexity,
        oov_rate: Some(oov_rate(&raw, &vocab)),
        overlap_fraction: overlap_stats(&seen, &raw),
    };
    let (text_path, tsv_path) = (run.file("eval.txt"), run.file("eval.tsv"));
    write_text(&text_path, &report.to_text())?;
    write_text(&tsv_path, &report_tsv(std::slice::from_ref(&report)))?;
    Manifest::new("eval", &run.config)
        .input("test", &test_path)
        .input("vocab", &run.file(VOCAB_FILE))
        .input("dedup", &dedup_path)
        .input("tokenizer", &tokenizer_path)
        .input("model", &lm_path)
        .arg("kind", format!("{kind:?}").to_lowercase())
        .output("report", &text_path)
        .output("table", &tsv_path)
        .write(&run.manifest_path("eval"))?;
    print!("{}", report.to_text());
    Ok(())
}

/// Table of sentence count, token count and OOV rate per file.
pub fn stats(run: &Run, files: &[PathBuf]) -> Result<()> {
    let mut files = files.to_vec();
    if files.is_empty() {
        files.push(run.config.path("corpus")?);
        if !run.config.raw("test").is_empty() {
            files.push(run.config.path("test")?);
        }
    }
    let vocab = run.vocab()?;
    let mut rows = Vec::new();
    for f in &files {
        let sentences = read_corpus(f)?;
        let name = f
            .file_stem()
            .map_or_else(|| f.display().to_string(), |s| s.to_string_lossy().into_owned());
        rows.push((name, corpus_stats(&sentences, &vocab)));
    }
    let table = stats_table(rows.iter().map(|(n, s)| (n.as_str(), s)));
    let path = run.file("stats.tsv");
    write_text(&path, &table)?;
    let mut manifest = Manifest::new("stats", &run.config);
    manifest.input("vocab", &run.file(VOCAB_FILE));
    for (i, f) in files.iter().enumerate() {
        manifest.input(&format!("file{i}"), f);
    }
    manifest.output("table", &path).write(&run.manifest_path("stats"))?;
    print!("{table}");
    Ok(())
}

/// Writes a seeded synthetic corpus sampled from a `word<TAB>weight` list.
pub fn generate(run: &Run, word_list: &Path, tokens: usize, output: &Path) -> Result<()> {
    let sampler = WordSampler::from_frequency_list(open(word_list)?)
        .with_context(|| format!("reading {}", word_list.display()))?;
    let sentences = sampler.generate(tokens, run.config.get("seed")?);
    write_corpus(output, &sentences)?;
    run.ensure_work_dir()?;
    Manifest::new("generate", &run.config)
        .input("word_list", word_list)
        .arg("tokens", tokens)
        .output("corpus", output)
        .write(&run.manifest_path("generate"))?;
    Ok(())
}
