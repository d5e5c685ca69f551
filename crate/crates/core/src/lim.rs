//! Tokenization and the local interaction step: for every attribute, the
//! tokens of the two records are regrouped into tokens shared by both sides
//! and tokens unique to each side.

use indexmap::IndexSet;
use serde::Serialize;

use crate::data::{LabeledPair, Record, Schema};
use crate::error::{Error, Result};

/// Characters that always separate tokens, even between two alphanumerics.
const HARD_SEPARATORS: &[char] = &['(', ')', '[', ']', '{', '}', '<', '>', '"', '/', '|', ','];

/// Lowercases `text` and splits it into word tokens.
///
/// Whitespace and punctuation separate tokens. A punctuation character is
/// kept only when it sits between two alphanumeric characters
/// (`coca-cola`, `12.5`, `don't`); brackets, quotes, commas, slashes and
/// pipes always separate.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let chars: Vec<char> = lowered.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            current.push(c);
            continue;
        }
        let joins = !c.is_whitespace()
            && !HARD_SEPARATORS.contains(&c)
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if joins {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Shared / unique token groups for one attribute.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TokenGroupTriple {
    pub shared: Vec<String>,
    pub unique_left: Vec<String>,
    pub unique_right: Vec<String>,
}

impl TokenGroupTriple {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.shared.len(), self.unique_left.len(), self.unique_right.len())
    }
}

/// Set-semantics contrast of two token lists: `shared = L ∩ R`,
/// `unique_left = L ∖ shared`, `unique_right = R ∖ shared`.
///
/// Duplicates collapse; every group keeps first-occurrence order (shared
/// follows the left list).
pub fn contrast_attribute<S: AsRef<str>>(left: &[S], right: &[S]) -> TokenGroupTriple {
    let left: IndexSet<&str> = left.iter().map(AsRef::as_ref).collect();
    let right: IndexSet<&str> = right.iter().map(AsRef::as_ref).collect();

    let mut triple = TokenGroupTriple::default();
    for token in &left {
        if right.contains(token) {
            triple.shared.push(token.to_string());
        } else {
            triple.unique_left.push(token.to_string());
        }
    }
    triple.unique_right = right
        .iter()
        .filter(|t| !left.contains(*t))
        .map(|t| t.to_string())
        .collect();
    triple
}

/// Per-attribute contrast of a record pair, aligned with schema order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContrastedPair {
    pub per_attribute: Vec<TokenGroupTriple>,
}

pub fn contrast_records(left: &Record, right: &Record) -> ContrastedPair {
    ContrastedPair {
        per_attribute: left
            .values
            .iter()
            .zip(&right.values)
            .map(|(l, r)| contrast_attribute(&tokenize(l), &tokenize(r)))
            .collect(),
    }
}

pub fn contrast_pair(pair: &LabeledPair, schema: &Schema) -> Result<ContrastedPair> {
    check_conforms(&pair.left, &pair.right, schema)?;
    Ok(contrast_records(&pair.left, &pair.right))
}

pub(crate) fn check_conforms(left: &Record, right: &Record, schema: &Schema) -> Result<()> {
    for record in [left, right] {
        if !record.conforms_to(schema) {
            return Err(Error::shape(
                "record",
                format!("{} attribute values", schema.len()),
                record.values.len(),
            ));
        }
    }
    Ok(())
}
