use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::CorpusError;
use crate::{SymbolTable, BOS, EOS, UNK};

const CONTROL: [&str; 3] = [UNK, BOS, EOS];

/// Word-token inventory: every token seen at least `min_count` times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    /// Sorted by descending count, then lexicographically.
    entries: Vec<(String, u64)>,
    index: HashMap<String, usize>,
    min_count: u64,
}

/// Keeps tokens with `freq >= min_count`. Marker tokens are never entries.
pub fn build_vocab(freq: &HashMap<String, u64>, min_count: u64) -> Vocabulary {
    let min_count = min_count.max(1);
    let entries = freq
        .iter()
        .filter(|(token, &count)| count >= min_count && !CONTROL.contains(&token.as_str()))
        .map(|(token, &count)| (token.clone(), count))
        .collect();
    Vocabulary::from_entries(entries, min_count)
}

impl Vocabulary {
    fn from_entries(mut entries: Vec<(String, u64)>, min_count: u64) -> Self {
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let index = entries.iter().enumerate().map(|(i, (t, _))| (t.clone(), i)).collect();
        Vocabulary {
            entries,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn count(&self, token: &str) -> Option<u64> {
        self.index.get(token).map(|&i| self.entries[i].1)
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    /// Markers first (`<unk>` = 0, `<s>` = 1, `</s>` = 2), then entries in
    /// file order.
    pub fn symbols(&self) -> SymbolTable {
        SymbolTable::new(
            CONTROL
                .iter()
                .copied()
                .chain(self.entries.iter().map(|(t, _)| t.as_str())),
        )
    }

    /// `token<TAB>count` lines; markers first with count -1.
    pub fn write<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for token in CONTROL {
            writeln!(writer, "{token}\t-1")?;
        }
        for (token, count) in &self.entries {
            writeln!(writer, "{token}\t{count}")?;
        }
        writer.flush()
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| match e.kind() {
                std::io::ErrorKind::InvalidData => CorpusError::InvalidUtf8 { line: i + 1 },
                _ => CorpusError::Io(e),
            })?;
            if line.is_empty() {
                continue;
            }
            let malformed = |message: &str| CorpusError::Malformed {
                line: i + 1,
                message: message.to_string(),
            };
            let (token, count) = line
                .split_once('\t')
                .ok_or_else(|| malformed("expected token<TAB>count"))?;
            if CONTROL.contains(&token) {
                continue;
            }
            let count: u64 = count.parse().map_err(|_| malformed("invalid count"))?;
            entries.push((token.to_string(), count));
        }
        let min_count = entries.iter().map(|e| e.1).min().unwrap_or(1);
        Ok(Vocabulary::from_entries(entries, min_count))
    }
}
