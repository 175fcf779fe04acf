//! Reversible lowercasing of words whose only capital is the first letter.
//!
//! `Bezbarwne` becomes the pair `<up> bezbarwne`. Tokens with more than one
//! capital (`ABC`, `McDonald`) are left alone. A token is only rewritten
//! when its first character lowercases to a single character that
//! uppercases back to the original, so the inverse is exact.

use super::{CorpusError, Sentence};
use crate::{is_control_token, UP};

fn single<I: Iterator<Item = char>>(mut it: I) -> Option<char> {
    let c = it.next()?;
    it.next().is_none().then_some(c)
}

/// Neither uppercase nor titlecase.
fn is_not_capital(c: char) -> bool {
    c.is_lowercase() || (!c.is_uppercase() && single(c.to_lowercase()) == Some(c))
}

fn lowered_initial(token: &str) -> Option<String> {
    let mut chars = token.chars();
    let first = chars.next()?;
    if !first.is_uppercase() {
        return None;
    }
    let lower = single(first.to_lowercase())?;
    if lower == first || single(lower.to_uppercase()) != Some(first) {
        return None;
    }
    let rest = chars.as_str();
    if !rest.chars().all(is_not_capital) {
        return None;
    }
    let mut out = String::with_capacity(token.len());
    out.push(lower);
    out.push_str(rest);
    Some(out)
}

pub fn apply_case_transform(sentence: &Sentence) -> Result<Sentence, CorpusError> {
    let mut out = Vec::with_capacity(sentence.len());
    for token in sentence.iter() {
        if token == UP {
            return Err(CorpusError::AlreadyTransformed);
        }
        match lowered_initial(token) {
            Some(lower) if !is_control_token(token) => {
                out.push(UP.to_string());
                out.push(lower);
            }
            _ => out.push(token.to_string()),
        }
    }
    Ok(Sentence(out))
}

pub fn invert_case_transform(sentence: &Sentence) -> Result<Sentence, CorpusError> {
    let tokens = sentence.tokens();
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] != UP {
            out.push(tokens[i].clone());
            i += 1;
            continue;
        }
        let word = tokens
            .get(i + 1)
            .filter(|t| !is_control_token(t))
            .ok_or(CorpusError::DanglingUp(i))?;
        let not_invertible = || CorpusError::NotInvertible {
            position: i,
            token: word.clone(),
        };
        let mut chars = word.chars();
        let first = chars.next().ok_or_else(not_invertible)?;
        let upper = single(first.to_uppercase())
            .filter(|&u| u != first)
            .ok_or_else(not_invertible)?;
        let mut restored = String::with_capacity(word.len() + 2);
        restored.push(upper);
        restored.push_str(chars.as_str());
        out.push(restored);
        i += 2;
    }
    Ok(Sentence(out))
}
