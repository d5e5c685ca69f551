//! Per-pair case-study output: which tokens were contrasted, how much each
//! contributed, and the resulting score.

use std::fmt::Write as _;

use serde::Serialize;

use crate::data::{Record, Schema};
use crate::embeddings::{embed_contrasted_pair, EmbeddingStore};
use crate::error::{Error, Result};
use crate::lim::{check_conforms, contrast_records};
use crate::model::{Model, PairFeatures, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    /// Softmax attention weight; sums to 1 over a non-empty group.
    Attention,
    /// Euclidean norm of the token's embedding (its share of the summed input).
    EmbeddingNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenWeight {
    pub token: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeExplanation {
    pub attribute: String,
    pub shared: Vec<TokenWeight>,
    pub unique_left: Vec<TokenWeight>,
    pub unique_right: Vec<TokenWeight>,
    /// Norms of `sim_j` and `dif_j`; absent for the twin baseline.
    pub sim_norm: Option<f64>,
    pub dif_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub variant: Variant,
    pub score: f64,
    pub weight_kind: WeightKind,
    pub attributes: Vec<AttributeExplanation>,
    /// Ω's cross-attribute weights; row `i` holds query attribute `i`'s weights.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribute_attention: Option<Vec<Vec<f64>>>,
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn weighted(tokens: &[String], weights: impl IntoIterator<Item = f64>) -> Vec<TokenWeight> {
    tokens
        .iter()
        .zip(weights)
        .map(|(t, w)| TokenWeight {
            token: t.clone(),
            weight: w,
        })
        .collect()
}

pub fn explain_pair(
    model: &Model,
    store: &EmbeddingStore,
    schema: &Schema,
    left: &Record,
    right: &Record,
) -> Result<Explanation> {
    if schema.len() != model.config().attributes {
        return Err(Error::shape("schema width", model.config().attributes, schema.len()));
    }
    check_conforms(left, right, schema)?;
    let contrasted = contrast_records(left, right);
    let features = model.featurize(store, left, right)?;
    let (score, cache) = model.forward(&features)?;
    let attention = model.variant().is_attention();

    let embedded = match &features {
        PairFeatures::Contrasted(ep) => ep.clone(),
        PairFeatures::Twin(_) => embed_contrasted_pair(store, &contrasted),
    };
    let column_norms = |m: &ndarray::Array2<f64>| -> Vec<f64> { m.columns().into_iter().map(|c| norm(c.iter().copied())).collect() };

    let attributes = schema
        .attributes()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let groups = &contrasted.per_attribute[j];
            let [shared, unique_left, unique_right] = match cache.attention_weights(j) {
                Some([s, l, r]) => [s.to_vec(), l.to_vec(), r.to_vec()],
                None => {
                    let e = &embedded.per_attribute[j];
                    [column_norms(&e.shared), column_norms(&e.unique_left), column_norms(&e.unique_right)]
                }
            };
            let (sim_norm, dif_norm) = if model.variant() == Variant::TwinSum {
                (None, None)
            } else {
                let (sim, dif) = &cache.summaries()[j];
                (Some(norm(sim.iter().copied())), Some(norm(dif.iter().copied())))
            };
            AttributeExplanation {
                attribute: name.clone(),
                shared: weighted(&groups.shared, shared),
                unique_left: weighted(&groups.unique_left, unique_left),
                unique_right: weighted(&groups.unique_right, unique_right),
                sim_norm,
                dif_norm,
            }
        })
        .collect();

    Ok(Explanation {
        variant: model.variant(),
        score,
        weight_kind: if attention {
            WeightKind::Attention
        } else {
            WeightKind::EmbeddingNorm
        },
        attributes,
        attribute_attention: cache
            .attribute_attention()
            .map(|w| w.t().rows().into_iter().map(|r| r.to_vec()).collect()),
    })
}

/// Aligned text rendering, one block per attribute.
pub fn render_explanation(e: &Explanation, threshold: f64) -> String {
    let mut out = String::new();
    let decision = if e.score >= threshold { "match" } else { "non-match" };
    let kind = match e.weight_kind {
        WeightKind::Attention => "attention weight",
        WeightKind::EmbeddingNorm => "embedding norm",
    };
    let _ = writeln!(out, "score {:.4} ({decision} at {threshold}) [{}; token weights: {kind}]", e.score, e.variant);
    let width = e.attributes.iter().map(|a| a.attribute.len()).max().unwrap_or(0);
    for a in &e.attributes {
        let _ = write!(out, "{:width$}", a.attribute);
        if let (Some(s), Some(d)) = (a.sim_norm, a.dif_norm) {
            let _ = write!(out, "  |sim| {s:.3}  |dif| {d:.3}");
        }
        out.push('\n');
        for (label, group) in [("shared", &a.shared), ("unique-left", &a.unique_left), ("unique-right", &a.unique_right)] {
            let tokens: Vec<String> = group.iter().map(|t| format!("{}({:.2})", t.token, t.weight)).collect();
            let body = if tokens.is_empty() { "-".to_string() } else { tokens.join(" ") };
            let _ = writeln!(out, "  {label:<12}  {body}");
        }
    }
    out
}
