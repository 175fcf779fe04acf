//! Grid sweep over vocabulary size and LSTM depth.
//!
//! The parent trains one tokenizer per vocabulary size, then runs every
//! missing cell as a child process (`sweep-cell`), at most `sweep_jobs` at
//! a time. A cell writes its row to its own file through a rename, so an
//! interrupted sweep resumes by skipping cells whose file exists. The final
//! table is assembled in grid order.

use std::path::{Path, PathBuf};
use std::process::{Child, Command};

use anyhow::{Context, Result};
use log::info;
use sublm::corpus::{build_vocab, count_tokens, shuffle, Sentence, Vocabulary};
use sublm::subword::train_unigram;
use sublm::TokenId;

use crate::commands::{create, fit_lstm, read_corpus, score_raw, shuffled_split, Run, DEDUP_FILE};
use crate::failure::ChildFailure;
use crate::manifest::Manifest;

pub const SWEEP_DIR: &str = "sweep";
pub const RESULTS_FILE: &str = "results.txt";

fn sweep_dir(run: &Run) -> PathBuf {
    run.file(SWEEP_DIR)
}

fn tokenizer_path(run: &Run, size: usize) -> PathBuf {
    sweep_dir(run).join(format!("tokenizer_{size}.model"))
}

fn cell_path(run: &Run, size: usize, layers: usize) -> PathBuf {
    sweep_dir(run).join("cells").join(format!("{size}_{layers}.txt"))
}

/// Writes through a temporary file and a rename.
fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        use std::io::Write;
        let mut out = create(&tmp)?;
        out.write_all(bytes)?;
        out.flush()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("renaming {}", tmp.display()))
}

/// The seeded share of the deduplicated corpus used by every cell,
/// preprocessed against a vocabulary built from that share alone, so that
/// every kept word is spelled with characters the tokenizers have seen.
fn sweep_data(run: &Run) -> Result<(Vocabulary, Vec<Sentence>)> {
    let mut raw = read_corpus(&run.file(DEDUP_FILE))?;
    let fraction: f64 = run.config.get("sweep_fraction")?;
    if fraction < 1.0 {
        shuffle(&mut raw, run.config.get::<u64>("seed")?.wrapping_add(1));
        raw.truncate(((raw.len() as f64) * fraction).ceil() as usize);
    }
    let vocab = build_vocab(&count_tokens(&raw), run.config.get("min_count")?);
    let train = run.prepare(&raw, &vocab)?;
    Ok((vocab, train))
}

pub fn sweep(run: &Run) -> Result<()> {
    let sizes: Vec<usize> = run.config.list("sweep_vocab_sizes")?;
    let layers: Vec<usize> = run.config.list("sweep_layers")?;
    let jobs: usize = run.config.get("sweep_jobs")?;
    let dir = sweep_dir(run);
    std::fs::create_dir_all(dir.join("cells"))?;
    let config_path = dir.join("sweep.conf");
    write_atomically(&config_path, run.config.to_file_text().as_bytes())?;

    let (_, train) = sweep_data(run)?;
    for &size in &sizes {
        let path = tokenizer_path(run, size);
        if path.exists() {
            continue;
        }
        info!("sweep: training the {size}-piece tokenizer");
        let (model, _) = train_unigram(&train, size, &run.config.trainer_options()?)?;
        let mut bytes = Vec::new();
        model.write(&mut bytes)?;
        write_atomically(&path, &bytes)?;
    }

    let pending: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&s| layers.iter().map(move |&l| (s, l)))
        .filter(|&(s, l)| !cell_path(run, s, l).exists())
        .collect();
    info!(
        "sweep: {} of {} cells to run",
        pending.len(),
        sizes.len() * layers.len()
    );
    let exe = std::env::current_exe().context("locating the sublm executable")?;
    let mut running: Vec<((usize, usize), Child)> = Vec::new();
    let mut queue = pending.into_iter();
    loop {
        while running.len() < jobs {
            let Some((size, depth)) = queue.next() else { break };
            let child = Command::new(&exe)
                .arg("--work-dir")
                .arg(&run.work)
                .arg("--config")
                .arg(&config_path)
                .arg("sweep-cell")
                .arg("--size")
                .arg(size.to_string())
                .arg("--layers")
                .arg(depth.to_string())
                .spawn()
                .context("starting a sweep cell")?;
            running.push(((size, depth), child));
        }
        if running.is_empty() {
            break;
        }
        let ((size, depth), mut child) = running.remove(0);
        let status = child.wait()?;
        if !status.success() {
            for (_, mut other) in running {
                other.wait()?;
            }
            return Err(ChildFailure {
                what: format!("sweep cell size={size} layers={depth}"),
                code: status.code(),
            }
            .into());
        }
    }

    let mut table = String::from("size layers perplexity\n");
    let mut manifest = Manifest::new("sweep", &run.config);
    manifest.input("dedup", &run.file(DEDUP_FILE));
    if !run.config.raw("test").is_empty() {
        manifest.input("test", &run.config.path("test")?);
    }
    for &size in &sizes {
        for &depth in &layers {
            let path = cell_path(run, size, depth);
            let row = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            table.push_str(&row);
        }
    }
    let results = dir.join(RESULTS_FILE);
    write_atomically(&results, table.as_bytes())?;
    manifest
        .output("results", &results)
        .write(&dir.join("sweep.manifest.json"))?;
    print!("{table}");
    Ok(())
}

/// One grid cell: train an LSTM with `layers` layers on the `size`-piece
/// tokenization and record its word-level perplexity.
pub fn sweep_cell(run: &Run, size: usize, layers: usize) -> Result<()> {
    let tokenizer = run.tokenizer_at(&tokenizer_path(run, size))?;
    let (vocab, train) = sweep_data(run)?;
    let mut config = run.config.lstm_config(tokenizer.len())?;
    config.layers = layers;
    let encoded = tokenizer.encode_corpus(&train)?;

    let perplexity = if run.config.raw("test").is_empty() {
        // No test set: score the held-out split of the training words.
        let pairs: Vec<(Vec<TokenId>, Sentence)> = encoded.into_iter().map(|e| e.ids).zip(train).collect();
        let seed: u64 = run.config.get("seed")?;
        let fraction: f64 = run.config.get("valid_fraction")?;
        let (fit, held) = shuffled_split(pairs, seed, fraction, |p| p.0.len() + 1)?;
        let (stream, _): (Vec<_>, Vec<_>) = fit.into_iter().unzip();
        let (lm, _) = fit_lstm(run, tokenizer.symbols(), stream, config)?;
        let held: Vec<Sentence> = held.into_iter().map(|p| p.1).collect();
        let policy = run.config.get("token_count_policy")?;
        sublm::eval::word_level_perplexity(&lm, &tokenizer, &held, policy)?
    } else {
        let stream = encoded.into_iter().map(|e| e.ids).collect();
        let (lm, _) = fit_lstm(run, tokenizer.symbols(), stream, config)?;
        let raw = read_corpus(&run.config.path("test")?)?;
        score_raw(run, &lm, &tokenizer, &raw, &vocab)?
    };
    let row = format!("{size} {layers} {:.6}\n", perplexity.direct);
    write_atomically(&cell_path(run, size, layers), row.as_bytes())
}
