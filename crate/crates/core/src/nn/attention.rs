//! Scaled dot-product attention, `o = V · softmax(Kᵀq / √d1)` with
//! `K = Wᵏ X` and `V = Wᵛ X`, plus the single-head self-attention used to
//! mix attribute representations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::glorot_uniform;
use super::ops::{softmax, softmax_backward};
use super::params::{Gradients, ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCache {
    pub x: Array2<f64>,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
    pub query: Array1<f64>,
    /// Softmax weights over the `n` input columns; empty when `n = 0`.
    pub weights: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub w_key: Array2<f64>,
    pub w_value: Array2<f64>,
    pub x: Array2<f64>,
    pub query: Array1<f64>,
}

/// Attention over the columns of `x` (`d × n`). With `n = 0` the output is
/// the zero vector.
pub fn attention_forward(
    w_key: ArrayView2<'_, f64>,
    w_value: ArrayView2<'_, f64>,
    x: ArrayView2<'_, f64>,
    query: ArrayView1<'_, f64>,
) -> Result<(Array1<f64>, AttentionCache)> {
    let (key_dim, d) = w_key.dim();
    let (value_dim, d_v) = w_value.dim();
    if d_v != d {
        return Err(Error::shape("attention value projection", d, d_v));
    }
    if x.nrows() != d {
        return Err(Error::shape("attention input rows", d, x.nrows()));
    }
    if query.len() != key_dim {
        return Err(Error::shape("attention query", key_dim, query.len()));
    }
    let keys = w_key.dot(&x);
    let values = w_value.dot(&x);
    let (output, weights) = if x.ncols() == 0 {
        (Array1::zeros(value_dim), Array1::zeros(0))
    } else {
        let scores = keys.t().dot(&query) / (key_dim as f64).sqrt();
        let weights = softmax(scores.view());
        (values.dot(&weights), weights)
    };
    Ok((
        output,
        AttentionCache {
            x: x.to_owned(),
            keys,
            values,
            query: query.to_owned(),
            weights,
        },
    ))
}

pub fn attention_backward(
    w_key: ArrayView2<'_, f64>,
    w_value: ArrayView2<'_, f64>,
    cache: &AttentionCache,
    grad_out: ArrayView1<'_, f64>,
) -> AttentionGrads {
    let (key_dim, d) = w_key.dim();
    let value_dim = w_value.nrows();
    let n = cache.x.ncols();
    if n == 0 {
        return AttentionGrads {
            w_key: Array2::zeros((key_dim, d)),
            w_value: Array2::zeros((value_dim, d)),
            x: Array2::zeros((d, 0)),
            query: Array1::zeros(key_dim),
        };
    }
    let scale = (key_dim as f64).sqrt();
    let g = grad_out.insert_axis(Axis(1));
    // dV = g aᵀ
    let d_values = g.dot(&cache.weights.view().insert_axis(Axis(0)));
    let d_weights = cache.values.t().dot(&grad_out);
    let d_scores = softmax_backward(cache.weights.view(), d_weights.view()) / scale;
    // dK = q dsᵀ, dq = K ds
    let d_keys = cache
        .query
        .view()
        .insert_axis(Axis(1))
        .dot(&d_scores.view().insert_axis(Axis(0)));
    let d_query = cache.keys.dot(&d_scores);
    AttentionGrads {
        w_key: d_keys.dot(&cache.x.t()),
        w_value: d_values.dot(&cache.x.t()),
        x: w_key.t().dot(&d_keys) + w_value.t().dot(&d_values),
        query: d_query,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Query {
    /// Learned vector of length `key_dim`.
    Trainable(ParamId),
    /// Supplied by the caller on every forward pass.
    Contextual,
}

/// Attention with its own key/value projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionUnit {
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub query: Query,
    pub input: usize,
    pub key_dim: usize,
    pub value_dim: usize,
}

impl AttentionUnit {
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        rng: &mut R,
        name: &str,
        input: usize,
        key_dim: usize,
        value_dim: usize,
        trainable_query: bool,
    ) -> Self {
        let w_key = params.register(
            format!("{name}.w_key"),
            &[key_dim, input],
            glorot_uniform(rng, key_dim, input),
        );
        let w_value = params.register(
            format!("{name}.w_value"),
            &[value_dim, input],
            glorot_uniform(rng, value_dim, input),
        );
        let query = if trainable_query {
            let scale = 1.0 / (key_dim as f64).sqrt();
            let data = (0..key_dim)
                .map(|_| StandardNormal.sample(rng))
                .map(|z: f64| z * scale)
                .collect();
            Query::Trainable(params.register(format!("{name}.query"), &[key_dim], data))
        } else {
            Query::Contextual
        };
        AttentionUnit {
            w_key,
            w_value,
            query,
            input,
            key_dim,
            value_dim,
        }
    }

    pub fn num_params(input: usize, key_dim: usize, value_dim: usize, trainable_query: bool) -> usize {
        (key_dim + value_dim) * input + if trainable_query { key_dim } else { 0 }
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        x: ArrayView2<'_, f64>,
        external_query: Option<ArrayView1<'_, f64>>,
    ) -> Result<(Array1<f64>, AttentionCache)> {
        let query = match (self.query, external_query) {
            (Query::Trainable(id), None) => params.vector(id),
            (Query::Contextual, Some(q)) => q,
            (Query::Trainable(_), Some(_)) => {
                return Err(Error::QueryMode("unit has a trainable query; no external query allowed"))
            }
            (Query::Contextual, None) => {
                return Err(Error::QueryMode("contextual unit requires an external query"))
            }
        };
        attention_forward(params.matrix(self.w_key), params.matrix(self.w_value), x, query)
    }

    /// Accumulates parameter gradients; returns the input gradient and, for
    /// a contextual unit, the gradient of the external query.
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &AttentionCache,
        grad_out: ArrayView1<'_, f64>,
        grads: &mut Gradients,
    ) -> (Array2<f64>, Option<Array1<f64>>) {
        let g = attention_backward(
            params.matrix(self.w_key),
            params.matrix(self.w_value),
            cache,
            grad_out,
        );
        grads.add_matrix(self.w_key, &g.w_key);
        grads.add_matrix(self.w_value, &g.w_value);
        match self.query {
            Query::Trainable(id) => {
                grads.add_vector(id, &g.query);
                (g.x, None)
            }
            Query::Contextual => (g.x, Some(g.query)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionCache {
    pub r: Array2<f64>,
    pub queries: Array2<f64>,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
    /// Column `j` holds the softmax weights of query `j` over all keys.
    pub weights: Array2<f64>,
}

/// Single-head self-attention over the columns of `R` (`input × m`):
/// `Q = Wᑫ R`, `K = Wᵏ R`, `V = Wᵛ R`, output column `j` is
/// `V · softmax(Kᵀ Q_j / √key_dim)`. No bias terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelfAttention {
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub input: usize,
    pub key_dim: usize,
    pub value_dim: usize,
}

impl SelfAttention {
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        rng: &mut R,
        name: &str,
        input: usize,
        key_dim: usize,
        value_dim: usize,
    ) -> Self {
        let mut proj = |suffix: &str, rows: usize| {
            params.register(
                format!("{name}.{suffix}"),
                &[rows, input],
                glorot_uniform(rng, rows, input),
            )
        };
        SelfAttention {
            w_query: proj("w_query", key_dim),
            w_key: proj("w_key", key_dim),
            w_value: proj("w_value", value_dim),
            input,
            key_dim,
            value_dim,
        }
    }

    pub fn num_params(input: usize, key_dim: usize, value_dim: usize) -> usize {
        (2 * key_dim + value_dim) * input
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        r: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, SelfAttentionCache)> {
        if r.nrows() != self.input {
            return Err(Error::shape("self-attention input rows", self.input, r.nrows()));
        }
        let queries = params.matrix(self.w_query).dot(&r);
        let keys = params.matrix(self.w_key).dot(&r);
        let values = params.matrix(self.w_value).dot(&r);
        let scores = keys.t().dot(&queries) / (self.key_dim as f64).sqrt();
        let mut weights = Array2::zeros(scores.dim());
        for (j, col) in scores.columns().into_iter().enumerate() {
            weights.column_mut(j).assign(&softmax(col));
        }
        let output = values.dot(&weights);
        Ok((
            output,
            SelfAttentionCache {
                r: r.to_owned(),
                queries,
                keys,
                values,
                weights,
            },
        ))
    }

    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &SelfAttentionCache,
        grad_out: ArrayView2<'_, f64>,
        grads: &mut Gradients,
    ) -> Array2<f64> {
        let scale = (self.key_dim as f64).sqrt();
        let d_values = grad_out.dot(&cache.weights.t());
        let d_weights = cache.values.t().dot(&grad_out);
        let mut d_scores = Array2::zeros(d_weights.dim());
        for j in 0..d_weights.ncols() {
            d_scores
                .column_mut(j)
                .assign(&softmax_backward(cache.weights.column(j), d_weights.column(j)));
        }
        d_scores /= scale;
        let d_keys = cache.queries.dot(&d_scores.t());
        let d_queries = cache.keys.dot(&d_scores);

        let rt = cache.r.t();
        grads.add_matrix(self.w_query, &d_queries.dot(&rt));
        grads.add_matrix(self.w_key, &d_keys.dot(&rt));
        grads.add_matrix(self.w_value, &d_values.dot(&rt));
        params.matrix(self.w_query).t().dot(&d_queries)
            + params.matrix(self.w_key).t().dot(&d_keys)
            + params.matrix(self.w_value).t().dot(&d_values)
    }
}
