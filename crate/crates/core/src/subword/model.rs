use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::lattice::SegmentationLattice;
use super::{SubwordError, WORD_BOUNDARY};
use crate::corpus::Sentence;
use crate::{SymbolTable, TokenId, BOS, EOS, PAD, UNK, UP};

/// Marker tokens present in every model, in id order.
pub const CONTROL_TOKENS: [&str; 4] = [UNK, BOS, EOS, PAD];

const FORMAT_VERSION: u32 = 1;

/// Unigram piece inventory.
///
/// Ids are assigned as: the four control tokens, then user symbols (such as
/// `<up>`), then ordinary pieces. Control tokens and user symbols are atomic:
/// a word equal to one of them is encoded as that single id. Ordinary pieces
/// carry base-2 log-probabilities that sum (in probability space) to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordModel {
    specials: Vec<String>,
    pieces: Vec<(String, f64)>,
    index: HashMap<String, u32>,
    special_index: HashMap<String, u32>,
    max_piece_chars: usize,
}

/// The result of encoding one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<TokenId>,
    /// Word tokens of the source sentence, `<up>` markers excluded.
    pub source_word_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub sentence: Sentence,
    /// Set when a continuation piece had no word to attach to.
    pub started_mid_word: bool,
}

impl SubwordModel {
    /// Builds a model from ordinary pieces and user symbols. Log-probabilities
    /// are taken as given.
    pub fn new(pieces: Vec<(String, f64)>, user_symbols: &[String]) -> Result<Self, SubwordError> {
        let mut specials: Vec<String> = CONTROL_TOKENS.iter().map(|s| s.to_string()).collect();
        for sym in user_symbols {
            if !specials.contains(sym) {
                specials.push(sym.clone());
            }
        }
        let special_index: HashMap<String, u32> = specials
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        let mut index = HashMap::with_capacity(pieces.len());
        let mut max_piece_chars = 0;
        for (i, (text, lp)) in pieces.iter().enumerate() {
            if text.is_empty() {
                return Err(SubwordError::InvalidModel("empty piece".into()));
            }
            if special_index.contains_key(text) {
                return Err(SubwordError::InvalidModel(format!(
                    "piece `{text}` collides with a special token"
                )));
            }
            if !lp.is_finite() {
                return Err(SubwordError::InvalidModel(format!(
                    "piece `{text}` has non-finite log-probability"
                )));
            }
            if index.insert(text.clone(), i as u32).is_some() {
                return Err(SubwordError::InvalidModel(format!("duplicate piece `{text}`")));
            }
            max_piece_chars = max_piece_chars.max(text.chars().count());
        }
        Ok(SubwordModel {
            specials,
            pieces,
            index,
            special_index,
            max_piece_chars,
        })
    }

    /// Total entries: specials plus ordinary pieces.
    pub fn len(&self) -> usize {
        self.specials.len() + self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    pub fn user_symbols(&self) -> &[String] {
        &self.specials[CONTROL_TOKENS.len()..]
    }

    /// Ordinary pieces with their log-probabilities, in id order.
    pub fn pieces(&self) -> &[(String, f64)] {
        &self.pieces
    }

    pub fn max_piece_chars(&self) -> usize {
        self.max_piece_chars
    }

    /// Number of single-character pieces.
    pub fn char_count(&self) -> usize {
        self.pieces.iter().filter(|(t, _)| t.chars().count() == 1).count()
    }

    pub fn piece_index(&self, text: &str) -> Option<u32> {
        self.index.get(text).copied()
    }

    pub fn id_of_piece_index(&self, i: u32) -> TokenId {
        self.specials.len() as TokenId + i
    }

    /// Id of a special token or piece string.
    pub fn id(&self, text: &str) -> Option<TokenId> {
        self.special_index
            .get(text)
            .copied()
            .or_else(|| self.piece_index(text).map(|i| self.id_of_piece_index(i)))
    }

    pub fn text(&self, id: TokenId) -> Option<&str> {
        let id = id as usize;
        if id < self.specials.len() {
            Some(&self.specials[id])
        } else {
            self.pieces.get(id - self.specials.len()).map(|(t, _)| t.as_str())
        }
    }

    /// The model's full vocabulary in id order.
    pub fn symbols(&self) -> SymbolTable {
        SymbolTable::new(
            self.specials
                .iter()
                .map(String::as_str)
                .chain(self.pieces.iter().map(|(t, _)| t.as_str())),
        )
    }

    /// Sum of piece probabilities; one for a normalized model.
    pub fn total_probability(&self) -> f64 {
        self.pieces.iter().map(|(_, lp)| lp.exp2()).sum()
    }

    pub fn lattice(&self, text: &str) -> SegmentationLattice {
        SegmentationLattice::new(text, self.max_piece_chars, |s| {
            self.index.get(s).map(|&i| (i, self.pieces[i as usize].1))
        })
    }

    /// Viterbi segmentation of one word, as piece ids.
    pub fn encode_word(&self, word: &str) -> Result<Vec<TokenId>, SubwordError> {
        if let Some(&id) = self.special_index.get(word) {
            return Ok(vec![id]);
        }
        if word.contains(WORD_BOUNDARY) {
            return Err(SubwordError::ReservedCharacter(word.to_string()));
        }
        let mut text = String::with_capacity(word.len() + 3);
        text.push(WORD_BOUNDARY);
        text.push_str(word);
        let lattice = self.lattice(&text);
        match lattice.viterbi() {
            Some(path) => Ok(path.pieces.iter().map(|&i| self.id_of_piece_index(i)).collect()),
            None => {
                let missing = text
                    .chars()
                    .find(|c| !self.index.contains_key(c.encode_utf8(&mut [0; 4]) as &str))
                    .unwrap_or('?');
                Err(SubwordError::UncoveredCharacter(missing))
            }
        }
    }

    /// The most probable segmentation of the sentence string formed by
    /// prefixing every word with U+2581.
    pub fn encode_best(&self, sentence: &Sentence) -> Result<Encoding, SubwordError> {
        let mut ids = Vec::with_capacity(sentence.len() * 2);
        for word in sentence.iter() {
            ids.extend(self.encode_word(word)?);
        }
        Ok(Encoding {
            ids,
            source_word_count: source_word_count(sentence),
        })
    }

    /// Encodes many sentences, segmenting each distinct word once.
    pub fn encode_corpus(&self, sentences: &[Sentence]) -> Result<Vec<Encoding>, SubwordError> {
        let mut cache: HashMap<&str, Vec<TokenId>> = HashMap::new();
        let mut out = Vec::with_capacity(sentences.len());
        for sentence in sentences {
            let mut ids = Vec::with_capacity(sentence.len() * 2);
            for word in sentence.iter() {
                if let Some(cached) = cache.get(word) {
                    ids.extend_from_slice(cached);
                } else {
                    let enc = self.encode_word(word)?;
                    ids.extend_from_slice(&enc);
                    cache.insert(word, enc);
                }
            }
            out.push(Encoding {
                ids,
                source_word_count: source_word_count(sentence),
            });
        }
        Ok(out)
    }

    /// Concatenates pieces; every U+2581 opens a new word and special tokens
    /// stand alone.
    pub fn decode(&self, ids: &[TokenId]) -> Result<Decoded, SubwordError> {
        let mut words: Vec<String> = Vec::new();
        let mut open = false;
        let mut started_mid_word = false;
        for &id in ids {
            let text = self.text(id).ok_or(SubwordError::InvalidId(id))?;
            if (id as usize) < self.specials.len() {
                words.push(text.to_string());
                open = false;
            } else if let Some(rest) = text.strip_prefix(WORD_BOUNDARY) {
                words.push(rest.to_string());
                open = true;
            } else if open {
                words.last_mut().expect("open word").push_str(text);
            } else {
                started_mid_word = true;
                words.push(text.to_string());
                open = true;
            }
        }
        Ok(Decoded {
            sentence: Sentence::new(words.into_iter().filter(|w| !w.is_empty()).collect()),
            started_mid_word,
        })
    }

    /// Piece strings for an encoding, the form used in encoded corpus files.
    pub fn id_to_text(&self, ids: &[TokenId]) -> Result<Vec<&str>, SubwordError> {
        ids.iter()
            .map(|&id| self.text(id).ok_or(SubwordError::InvalidId(id)))
            .collect()
    }

    pub fn text_to_ids<S: AsRef<str>>(&self, pieces: &[S]) -> Result<Vec<TokenId>, SubwordError> {
        pieces
            .iter()
            .map(|p| {
                self.id(p.as_ref())
                    .ok_or_else(|| SubwordError::UnknownPiece(p.as_ref().to_string()))
            })
            .collect()
    }

    /// Header `unigram<TAB>version`, the special tokens, then one
    /// `piece<TAB>logprob` line per piece with 17 significant digits.
    pub fn write<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        writeln!(writer, "unigram\t{FORMAT_VERSION}")?;
        for (i, special) in self.specials.iter().enumerate() {
            let kind = if i < CONTROL_TOKENS.len() { "control" } else { "user" };
            writeln!(writer, "{special}\t{kind}")?;
        }
        for (text, lp) in &self.pieces {
            writeln!(writer, "{text}\t{lp:.16e}")?;
        }
        writer.flush()
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, SubwordError> {
        let mut lines = reader.lines().enumerate();
        let bad = |line: usize, msg: &str| SubwordError::Format {
            line,
            message: msg.to_string(),
        };
        match lines.next() {
            Some((_, Ok(header))) if header == format!("unigram\t{FORMAT_VERSION}") => {}
            Some((_, Err(e))) => return Err(e.into()),
            _ => return Err(bad(1, "expected `unigram<TAB>1` header")),
        }
        let mut user = Vec::new();
        let mut pieces = Vec::new();
        let mut controls = 0;
        for (i, line) in lines {
            let line = line?;
            let (text, value) = line
                .split_once('\t')
                .ok_or_else(|| bad(i + 1, "expected two tab-separated fields"))?;
            match value {
                "control" => {
                    if CONTROL_TOKENS.get(controls) != Some(&text) {
                        return Err(bad(i + 1, "unexpected control token"));
                    }
                    controls += 1;
                }
                "user" => user.push(text.to_string()),
                _ => {
                    let lp: f64 = value.parse().map_err(|_| bad(i + 1, "invalid log-probability"))?;
                    pieces.push((text.to_string(), lp));
                }
            }
        }
        if controls != CONTROL_TOKENS.len() {
            return Err(bad(0, "missing control tokens"));
        }
        SubwordModel::new(pieces, &user)
    }
}

fn source_word_count(sentence: &Sentence) -> usize {
    sentence.iter().filter(|w| *w != UP).count()
}

/// Average number of subword tokens per source word token.
pub fn tokens_per_word_ratio(model: &SubwordModel, corpus: &[Sentence]) -> Result<f64, SubwordError> {
    let encodings = model.encode_corpus(corpus)?;
    let words: usize = encodings.iter().map(|e| e.source_word_count).sum();
    if words == 0 {
        return Err(SubwordError::EmptyCorpus);
    }
    let pieces: usize = encodings.iter().map(|e| e.ids.len()).sum();
    Ok(pieces as f64 / words as f64)
}
