//! Checkpoint files.
//!
//! A text header of `key=value` lines, the vocabulary one token per line,
//! an empty line, then one record per tensor: a `tensor <name> <rows>
//! <cols>` line followed by `rows * cols` little-endian `f64` values in
//! row-major order.

use std::io::{Read, Write};

use ndarray::Array2;

use super::{LstmConfig, LstmLm, NeuralError, NeuralLm};
use crate::{LanguageModel, SymbolTable};

const MAGIC: &str = "lstm-lm 1";

impl NeuralLm {
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<(), NeuralError> {
        let c = self.model().config();
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "layers={}", c.layers)?;
        writeln!(out, "embedding_dim={}", c.embedding_dim)?;
        writeln!(out, "hidden_dim={}", c.hidden_dim)?;
        writeln!(out, "vocab_size={}", c.vocab_size)?;
        writeln!(out, "bptt_len={}", c.bptt_len)?;
        writeln!(out, "dropout_embedding={}", c.dropout_embedding)?;
        writeln!(out, "dropout_hidden={}", c.dropout_hidden)?;
        writeln!(out, "dropout_output={}", c.dropout_output)?;
        writeln!(out, "tie_weights={}", c.tie_weights)?;
        writeln!(out, "seed={}", c.seed)?;
        for token in self.symbols().tokens() {
            writeln!(out, "{token}")?;
        }
        writeln!(out)?;
        for (name, tensor) in self.model().params().tensors() {
            let (rows, cols) = tensor.dim();
            writeln!(out, "tensor {name} {rows} {cols}")?;
            let mut bytes = Vec::with_capacity(rows * cols * 8);
            for v in tensor.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&bytes)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self, NeuralError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut cursor = Cursor { bytes: &bytes, pos: 0 };
        if cursor.line()? != MAGIC {
            return Err(NeuralError::Format("not an LSTM checkpoint".into()));
        }
        let mut field = |key: &str| -> Result<String, NeuralError> {
            let line = cursor.line()?;
            match line.split_once('=') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(NeuralError::Format(format!("expected `{key}=`, found `{line}`"))),
            }
        };
        fn parse<T: std::str::FromStr>(key: &str, v: String) -> Result<T, NeuralError> {
            v.parse()
                .map_err(|_| NeuralError::Format(format!("bad value `{v}` for {key}")))
        }
        let config = LstmConfig {
            layers: parse("layers", field("layers")?)?,
            embedding_dim: parse("embedding_dim", field("embedding_dim")?)?,
            hidden_dim: parse("hidden_dim", field("hidden_dim")?)?,
            vocab_size: parse("vocab_size", field("vocab_size")?)?,
            bptt_len: parse("bptt_len", field("bptt_len")?)?,
            dropout_embedding: parse("dropout_embedding", field("dropout_embedding")?)?,
            dropout_hidden: parse("dropout_hidden", field("dropout_hidden")?)?,
            dropout_output: parse("dropout_output", field("dropout_output")?)?,
            tie_weights: parse("tie_weights", field("tie_weights")?)?,
            seed: parse("seed", field("seed")?)?,
        };
        config.validate()?;
        let mut tokens = Vec::with_capacity(config.vocab_size);
        for _ in 0..config.vocab_size {
            tokens.push(cursor.line()?);
        }
        if !cursor.line()?.is_empty() {
            return Err(NeuralError::Format("missing blank line after the vocabulary".into()));
        }
        let symbols = SymbolTable::new(tokens.iter().map(String::as_str));
        if symbols.tokens() != tokens.as_slice() {
            return Err(NeuralError::Format("vocabulary is not a valid symbol table".into()));
        }

        let mut model = LstmLm::new(config.clone())?;
        for (name, tensor) in model.params_mut().tensors_mut() {
            let header = cursor.line()?;
            let parts: Vec<&str> = header.split(' ').collect();
            let (rows, cols) = tensor.dim();
            if parts.len() != 4 || parts[0] != "tensor" || parts[1] != name {
                return Err(NeuralError::Format(format!(
                    "expected tensor `{name}`, found `{header}`"
                )));
            }
            if parts[2] != rows.to_string() || parts[3] != cols.to_string() {
                return Err(NeuralError::Format(format!("tensor `{name}` should be {rows}x{cols}")));
            }
            let raw = cursor.take(rows * cols * 8)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            *tensor = Array2::from_shape_vec((rows, cols), values).expect("checked length");
        }
        if cursor.pos != bytes.len() {
            return Err(NeuralError::Format("trailing data after the last tensor".into()));
        }
        NeuralLm::new(model, symbols)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn line(&mut self) -> Result<String, NeuralError> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| NeuralError::Format("unexpected end of file".into()))?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| NeuralError::Format("header is not UTF-8".into()))?;
        self.pos += end + 1;
        Ok(line.to_string())
    }

    fn take(&mut self, n: usize) -> Result<&[u8], NeuralError> {
        if self.bytes.len() - self.pos < n {
            return Err(NeuralError::Format("truncated tensor data".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}
