//! Plain-text model files.
//!
//! ```text
//! kneser-ney	1
//! order	3
//! discount	0.75
//! vocab	5
//! <unk>
//! ...
//! ngrams
//! 1		a	-1.5	-0.7
//! 2	a	b	-0.4	0
//! ```
//!
//! Each n-gram line holds the order, the space-joined context, the token,
//! lg P and the lg backoff weight of the n-gram used as a context. Contexts
//! that never predict anything themselves (those ending in `<s>`) carry
//! `-inf` as their probability. Floats use the shortest representation that
//! parses back to the same value.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{Level, NgramError, NgramModel};
use crate::{SymbolTable, TokenId};

const MAGIC: &str = "kneser-ney\t1";

impl NgramModel {
    pub fn write<W: Write>(&self, mut out: W) -> Result<(), NgramError> {
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "order\t{}", self.order)?;
        writeln!(out, "discount\t{}", self.discount)?;
        writeln!(out, "vocab\t{}", self.symbols.len())?;
        for token in self.symbols.tokens() {
            writeln!(out, "{token}")?;
        }
        writeln!(out, "ngrams")?;
        let text = |ids: &[TokenId]| -> Vec<&str> { ids.iter().map(|&t| self.symbols.token(t).unwrap()).collect() };
        for k in 1..=self.order {
            let level = &self.levels[k - 1];
            let upper = self.levels.get(k);
            let mut lines: BTreeMap<(Vec<&str>, &str), (f64, f64)> = BTreeMap::new();
            for (gram, &lp) in &level.probs {
                let backoff = upper.and_then(|u| u.backoffs.get(gram)).copied().unwrap_or(0.0);
                let words = text(gram);
                lines.insert((words[..k - 1].to_vec(), words[k - 1]), (lp, backoff));
            }
            if let Some(upper) = upper {
                for (context, &backoff) in &upper.backoffs {
                    if !level.probs.contains_key(context) {
                        let words = text(context);
                        lines.insert((words[..k - 1].to_vec(), words[k - 1]), (f64::NEG_INFINITY, backoff));
                    }
                }
            }
            for ((context, token), (lp, backoff)) in lines {
                writeln!(out, "{k}\t{}\t{token}\t{lp}\t{backoff}", context.join(" "))?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, NgramError> {
        let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String), NgramError> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(NgramError::Format {
                    line: 0,
                    message: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let fail = |line: usize, message: String| NgramError::Format { line, message };

        let (n, magic) = next("header")?;
        if magic != MAGIC {
            return Err(fail(n, format!("bad header `{magic}`")));
        }
        let mut field = |key: &str| -> Result<(usize, String), NgramError> {
            let (n, l) = next(key)?;
            match l.split_once('\t') {
                Some((k, v)) if k == key => Ok((n, v.to_string())),
                _ => Err(fail(n, format!("expected `{key}`"))),
            }
        };
        let (n, order) = field("order")?;
        let order: usize = order.parse().map_err(|e| fail(n, format!("{e}")))?;
        if order == 0 {
            return Err(NgramError::InvalidOrder);
        }
        let (n, discount) = field("discount")?;
        let discount: f64 = discount.parse().map_err(|e| fail(n, format!("{e}")))?;
        let (n, size) = field("vocab")?;
        let size: usize = size.parse().map_err(|e| fail(n, format!("{e}")))?;
        let mut tokens = Vec::with_capacity(size);
        for _ in 0..size {
            tokens.push(next("vocabulary entry")?.1);
        }
        let symbols = SymbolTable::new(tokens.iter().map(String::as_str));
        if symbols.len() != size || symbols.tokens().iter().zip(&tokens).any(|(a, b)| a != b) {
            return Err(fail(n, "vocabulary is not a valid symbol table".into()));
        }
        let (n, marker) = next("ngrams")?;
        if marker != "ngrams" {
            return Err(fail(n, "expected `ngrams`".into()));
        }

        let mut levels = vec![Level::default(); order];
        for (n, line) in lines {
            let line = line?;
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 5 {
                return Err(fail(n, format!("expected 5 fields, found {}", parts.len())));
            }
            let k: usize = parts[0].parse().map_err(|e| fail(n, format!("{e}")))?;
            if k == 0 || k > order {
                return Err(fail(n, format!("order {k} out of range")));
            }
            let mut gram: Vec<TokenId> = Vec::with_capacity(k);
            for word in parts[1].split(' ').filter(|w| !w.is_empty()).chain([parts[2]]) {
                gram.push(
                    symbols
                        .id(word)
                        .ok_or_else(|| fail(n, format!("unknown token `{word}`")))?,
                );
            }
            if gram.len() != k {
                return Err(fail(n, format!("expected {k} tokens")));
            }
            let lp: f64 = parts[3].parse().map_err(|e| fail(n, format!("{e}")))?;
            let backoff: f64 = parts[4].parse().map_err(|e| fail(n, format!("{e}")))?;
            if lp != f64::NEG_INFINITY {
                levels[k - 1].probs.insert(gram.clone(), lp);
            }
            if k < order && backoff != 0.0 {
                levels[k].backoffs.insert(gram, backoff);
            }
        }
        Ok(NgramModel {
            order,
            discount,
            symbols,
            levels,
        })
    }
}
