//! The contrastive matchers and the twin baseline.
//!
//! Per attribute `j`, a similarity summarizer Ψ_j maps the shared-token
//! group to `sim_j` and a difference summarizer Φ_j maps both unique groups
//! to `dif_j`. The classifier Ω turns the attribute representations
//! `r_j = [sim_j; dif_j]` into two logits; the match score is the softmax
//! probability of the second one.
//!
//! | variant            | Ψ_j                | Φ_j                                   | Ω                            |
//! |--------------------|--------------------|---------------------------------------|------------------------------|
//! | `Sum`              | ReLU(W Σ s + b)    | ReLU(W Σ (u₁ ∪ u₂) + b)               | concat → MLP                 |
//! | `Attention`        | attention, learned q | shared-weight attention on u₁ and u₂, summed, learned q | self-attention → concat → MLP |
//! | `ContextAttention` | as `Attention`     | as `Attention` with `q = sim_j`       | as `Attention`               |
//! | `TwinSum`          | n/a                | n/a                                   | concat of \|h(t₁) − h(t₂)\| → MLP |
//!
//! The MLP is affine → ReLU → affine with two outputs.

mod checkpoint;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, CheckpointMeta,
    FORMAT_VERSION,
};

use crate::data::Record;
use crate::embeddings::{
    embed_contrasted_pair, embed_twin_pair, EmbeddedPair, EmbeddingStore, TwinEmbeddedPair,
};
use crate::error::{Error, Result};
use crate::lim::contrast_records;
use crate::nn::attention::AttentionCache;
use crate::nn::{
    cross_entropy, grad_check, relu, relu_backward, softmax, Affine, AttentionUnit, GradCheckReport,
    Gradients, ParamSet, SelfAttention, SelfAttentionCache,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Sum,
    Attention,
    ContextAttention,
    TwinSum,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Sum,
        Variant::Attention,
        Variant::ContextAttention,
        Variant::TwinSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sum => "sum",
            Variant::Attention => "attention",
            Variant::ContextAttention => "context-attention",
            Variant::TwinSum => "twin-sum",
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(self, Variant::Attention | Variant::ContextAttention)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

/// How the attention variants pool Ω's per-attribute self-attention outputs
/// before the MLP.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributePooling {
    #[default]
    Concat,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Number of schema attributes `m`.
    pub attributes: usize,
    /// Word embedding dimension `d`.
    pub embedding_dim: usize,
    /// Output width of the summation summarizers (Sum and TwinSum).
    pub sim_dif_dim: usize,
    pub hidden_dim: usize,
    /// Key/query width of attention with a learned query.
    pub trainable_query_dim: usize,
    /// Key/query width of context attention and of Ω's self-attention.
    pub context_dim: usize,
    /// Value width of every attention; the sim/dif width of attention variants.
    pub value_dim: usize,
    #[serde(default)]
    pub pooling: AttributePooling,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(variant: Variant, attributes: usize, embedding_dim: usize) -> Self {
        ModelConfig {
            variant,
            attributes,
            embedding_dim,
            sim_dif_dim: 64,
            hidden_dim: 256,
            trainable_query_dim: 4,
            context_dim: 64,
            value_dim: 64,
            pooling: AttributePooling::Concat,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("attributes", self.attributes),
            ("embedding_dim", self.embedding_dim),
            ("sim_dif_dim", self.sim_dif_dim),
            ("hidden_dim", self.hidden_dim),
            ("trainable_query_dim", self.trainable_query_dim),
            ("context_dim", self.context_dim),
            ("value_dim", self.value_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.variant == Variant::ContextAttention && self.context_dim != self.value_dim {
            return Err(Error::InvalidConfig(format!(
                "context attention uses sim as its query: context_dim ({}) must equal value_dim ({})",
                self.context_dim, self.value_dim
            )));
        }
        Ok(())
    }

    /// Width of one summarizer output (`sim_j` or `dif_j`).
    pub fn summary_dim(&self) -> usize {
        if self.variant.is_attention() {
            self.value_dim
        } else {
            self.sim_dif_dim
        }
    }

    /// Width of the MLP input.
    pub fn mlp_input_dim(&self) -> usize {
        match self.variant {
            Variant::Sum => self.attributes * 2 * self.sim_dif_dim,
            Variant::TwinSum => self.attributes * self.sim_dif_dim,
            Variant::Attention | Variant::ContextAttention => match self.pooling {
                AttributePooling::Concat => self.attributes * self.value_dim,
                AttributePooling::Mean => self.value_dim,
            },
        }
    }

    /// Closed-form number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let (m, d) = (self.attributes, self.embedding_dim);
        let mlp = Affine::num_params(self.mlp_input_dim(), self.hidden_dim)
            + Affine::num_params(self.hidden_dim, 2);
        let (t, c, v) = (self.trainable_query_dim, self.context_dim, self.value_dim);
        match self.variant {
            Variant::Sum => 2 * m * Affine::num_params(d, self.sim_dif_dim) + mlp,
            Variant::TwinSum => m * Affine::num_params(d, self.sim_dif_dim) + mlp,
            Variant::Attention => {
                2 * m * AttentionUnit::num_params(d, t, v, true)
                    + SelfAttention::num_params(2 * v, c, v)
                    + mlp
            }
            Variant::ContextAttention => {
                m * (AttentionUnit::num_params(d, t, v, true)
                    + AttentionUnit::num_params(d, c, v, false))
                    + SelfAttention::num_params(2 * v, c, v)
                    + mlp
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Mlp {
    hidden: Affine,
    output: Affine,
}

impl Mlp {
    fn register(params: &mut ParamSet, rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Self {
        Mlp {
            hidden: Affine::register(params, rng, "omega.mlp.hidden", input, hidden),
            output: Affine::register(params, rng, "omega.mlp.output", hidden, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Arch {
    Sum {
        psi: Vec<Affine>,
        phi: Vec<Affine>,
        mlp: Mlp,
    },
    Attention {
        psi: Vec<AttentionUnit>,
        phi: Vec<AttentionUnit>,
        omega: SelfAttention,
        mlp: Mlp,
    },
    TwinSum {
        encoders: Vec<Affine>,
        mlp: Mlp,
    },
}

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Model input: contrasted groups for the contrastive variants, whole
/// records for the twin baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum PairFeatures {
    Contrasted(EmbeddedPair),
    Twin(TwinEmbeddedPair),
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    arch: Arch,
    generation: u64,
}

#[derive(Debug, Clone)]
enum AttributeCache {
    Sum {
        shared_sum: Array1<f64>,
        sim_pre: Array1<f64>,
        unique_sum: Array1<f64>,
        dif_pre: Array1<f64>,
    },
    Attention {
        shared: AttentionCache,
        left: AttentionCache,
        right: AttentionCache,
    },
    Twin {
        left_sum: Array1<f64>,
        left_pre: Array1<f64>,
        right_sum: Array1<f64>,
        right_pre: Array1<f64>,
    },
}

/// Intermediates of one forward pass, consumed by [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    attributes: Vec<AttributeCache>,
    /// `(sim_j, dif_j)`; for the twin baseline `(h(t₁), h(t₂))`.
    summaries: Vec<(Array1<f64>, Array1<f64>)>,
    self_attention: Option<SelfAttentionCache>,
    mlp_input: Array1<f64>,
    hidden_pre: Array1<f64>,
    hidden: Array1<f64>,
    logits: Array1<f64>,
}

impl ForwardCache {
    pub fn logits(&self) -> ArrayView1<'_, f64> {
        self.logits.view()
    }

    pub fn score(&self) -> f64 {
        softmax(self.logits.view())[1]
    }

    pub fn summaries(&self) -> &[(Array1<f64>, Array1<f64>)] {
        &self.summaries
    }

    /// Attention weights over (shared, unique-left, unique-right) tokens of
    /// attribute `j`, for the attention variants.
    pub fn attention_weights(&self, j: usize) -> Option<[&Array1<f64>; 3]> {
        match self.attributes.get(j)? {
            AttributeCache::Attention {
                shared,
                left,
                right,
            } => Some([&shared.weights, &left.weights, &right.weights]),
            _ => None,
        }
    }

    /// Ω's cross-attribute weights (`m × m`, column per query attribute).
    pub fn attribute_attention(&self) -> Option<&Array2<f64>> {
        self.self_attention.as_ref().map(|c| &c.weights)
    }
}

fn sum_columns(x: ArrayView2<'_, f64>) -> Array1<f64> {
    x.sum_axis(Axis(1))
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let (m, d) = (config.attributes, config.embedding_dim);
        let arch = match config.variant {
            Variant::Sum => {
                let mut psi = Vec::with_capacity(m);
                let mut phi = Vec::with_capacity(m);
                for j in 0..m {
                    let s = config.sim_dif_dim;
                    psi.push(Affine::register(&mut params, &mut rng, &format!("attr{j}.psi"), d, s));
                    phi.push(Affine::register(&mut params, &mut rng, &format!("attr{j}.phi"), d, s));
                }
                let mlp = Mlp::register(&mut params, &mut rng, config.mlp_input_dim(), config.hidden_dim);
                Arch::Sum { psi, phi, mlp }
            }
            Variant::Attention | Variant::ContextAttention => {
                let contextual = config.variant == Variant::ContextAttention;
                let (t, v) = (config.trainable_query_dim, config.value_dim);
                let mut psi = Vec::with_capacity(m);
                let mut phi = Vec::with_capacity(m);
                for j in 0..m {
                    psi.push(AttentionUnit::register(
                        &mut params,
                        &mut rng,
                        &format!("attr{j}.psi"),
                        d,
                        t,
                        v,
                        true,
                    ));
                    let key_dim = if contextual { config.context_dim } else { t };
                    phi.push(AttentionUnit::register(
                        &mut params,
                        &mut rng,
                        &format!("attr{j}.phi"),
                        d,
                        key_dim,
                        v,
                        !contextual,
                    ));
                }
                let omega = SelfAttention::register(
                    &mut params,
                    &mut rng,
                    "omega.self_attention",
                    2 * v,
                    config.context_dim,
                    v,
                );
                let mlp = Mlp::register(&mut params, &mut rng, config.mlp_input_dim(), config.hidden_dim);
                Arch::Attention {
                    psi,
                    phi,
                    omega,
                    mlp,
                }
            }
            Variant::TwinSum => {
                let encoders = (0..m)
                    .map(|j| {
                        Affine::register(
                            &mut params,
                            &mut rng,
                            &format!("attr{j}.encoder"),
                            d,
                            config.sim_dif_dim,
                        )
                    })
                    .collect();
                let mlp = Mlp::register(&mut params, &mut rng, config.mlp_input_dim(), config.hidden_dim);
                Arch::TwinSum { encoders, mlp }
            }
        };
        debug_assert_eq!(params.num_scalars(), config.parameter_count());
        Ok(Model {
            config,
            params,
            arch,
            generation: next_generation(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable access to the parameters. Invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.generation = next_generation();
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Tokenizes, contrasts (unless twin) and embeds a record pair.
    pub fn featurize(&self, store: &EmbeddingStore, left: &Record, right: &Record) -> Result<PairFeatures> {
        if store.dim() != self.config.embedding_dim {
            return Err(Error::shape("embedding store", self.config.embedding_dim, store.dim()));
        }
        for r in [left, right] {
            if r.values.len() != self.config.attributes {
                return Err(Error::shape("record", self.config.attributes, r.values.len()));
            }
        }
        Ok(match self.config.variant {
            Variant::TwinSum => PairFeatures::Twin(embed_twin_pair(store, left, right)),
            _ => PairFeatures::Contrasted(embed_contrasted_pair(store, &contrast_records(left, right))),
        })
    }

    fn check_groups<'a>(&self, groups: impl IntoIterator<Item = &'a Array2<f64>>, count: usize) -> Result<()> {
        if count != self.config.attributes {
            return Err(Error::shape("pair attributes", self.config.attributes, count));
        }
        for g in groups {
            if g.nrows() != self.config.embedding_dim {
                return Err(Error::shape("embedding rows", self.config.embedding_dim, g.nrows()));
            }
        }
        Ok(())
    }

    fn mismatch(&self, expected: &str) -> Error {
        Error::VariantMismatch {
            expected: expected.to_string(),
            found: self.config.variant.to_string(),
        }
    }

    /// Ψ_j of the Sum variant.
    pub fn psi_sum(&self, j: usize, shared: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let Arch::Sum { psi, .. } = &self.arch else {
            return Err(self.mismatch("sum"));
        };
        Ok(relu(psi[j].forward(&self.params, sum_columns(shared).view())?.view()))
    }

    /// Φ_j of the Sum variant: one summation over both unique groups.
    pub fn phi_sum(
        &self,
        j: usize,
        unique_left: ArrayView2<'_, f64>,
        unique_right: ArrayView2<'_, f64>,
    ) -> Result<Array1<f64>> {
        let Arch::Sum { phi, .. } = &self.arch else {
            return Err(self.mismatch("sum"));
        };
        let total = sum_columns(unique_left) + sum_columns(unique_right);
        Ok(relu(phi[j].forward(&self.params, total.view())?.view()))
    }

    /// Ψ_j of the attention variants.
    pub fn psi_attention(&self, j: usize, shared: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let Arch::Attention { psi, .. } = &self.arch else {
            return Err(self.mismatch("attention or context-attention"));
        };
        Ok(psi[j].forward(&self.params, shared, None)?.0)
    }

    /// Φ_j of the attention variants: the same attention applied to each
    /// unique group, outputs summed. `context` is `sim_j` for
    /// context attention and must be absent otherwise.
    pub fn phi_attention(
        &self,
        j: usize,
        unique_left: ArrayView2<'_, f64>,
        unique_right: ArrayView2<'_, f64>,
        context: Option<ArrayView1<'_, f64>>,
    ) -> Result<Array1<f64>> {
        let Arch::Attention { phi, .. } = &self.arch else {
            return Err(self.mismatch("attention or context-attention"));
        };
        let (l, _) = phi[j].forward(&self.params, unique_left, context)?;
        let (r, _) = phi[j].forward(&self.params, unique_right, context)?;
        Ok(l + r)
    }

    /// Ω of Sum / TwinSum: concatenation followed by the MLP.
    pub fn omega_concat_mlp(&self, representations: &[Array1<f64>]) -> Result<Array1<f64>> {
        let mlp = match &self.arch {
            Arch::Sum { mlp, .. } | Arch::TwinSum { mlp, .. } => mlp,
            Arch::Attention { .. } => return Err(self.mismatch("sum or twin-sum")),
        };
        if representations.len() != self.config.attributes {
            return Err(Error::shape("omega inputs", self.config.attributes, representations.len()));
        }
        let views: Vec<_> = representations.iter().map(|r| r.view()).collect();
        let input = concatenate(Axis(0), &views).map_err(|e| Error::shape("omega concat", "1-d", e))?;
        let (_, _, logits) = self.mlp_forward(mlp, input.view())?;
        Ok(logits)
    }

    /// Ω of the attention variants: self-attention across the attribute
    /// representations, concatenation of the `m` outputs, then the MLP.
    pub fn omega_self_attention(&self, representations: &[Array1<f64>]) -> Result<Array1<f64>> {
        let Arch::Attention { omega, mlp, .. } = &self.arch else {
            return Err(self.mismatch("attention or context-attention"));
        };
        if representations.len() != self.config.attributes {
            return Err(Error::shape("omega inputs", self.config.attributes, representations.len()));
        }
        let r = stack_columns(representations, 2 * self.config.value_dim)?;
        let (out, _) = omega.forward(&self.params, r.view())?;
        let (_, _, logits) = self.mlp_forward(mlp, self.pool(&out).view())?;
        Ok(logits)
    }

    /// Score of the twin baseline.
    pub fn twin_sum_baseline_forward(&self, pair: &TwinEmbeddedPair) -> Result<f64> {
        if self.config.variant != Variant::TwinSum {
            return Err(self.mismatch("twin-sum"));
        }
        Ok(self.forward(&PairFeatures::Twin(pair.clone()))?.0)
    }

    /// Score of a contrastive variant.
    pub fn forward_score(&self, pair: &EmbeddedPair) -> Result<(f64, ForwardCache)> {
        if self.config.variant == Variant::TwinSum {
            return Err(Error::VariantMismatch {
                expected: "sum, attention or context-attention".into(),
                found: "twin-sum".into(),
            });
        }
        self.forward_contrasted(pair)
    }

    /// Match score in [0, 1] and the cache for [`Model::backward`].
    pub fn forward(&self, features: &PairFeatures) -> Result<(f64, ForwardCache)> {
        match features {
            PairFeatures::Contrasted(pair) => self.forward_score(pair),
            PairFeatures::Twin(pair) => self.forward_twin(pair),
        }
    }

    pub fn score(&self, features: &PairFeatures) -> Result<f64> {
        Ok(self.forward(features)?.0)
    }

    fn mlp_forward(
        &self,
        mlp: &Mlp,
        input: ArrayView1<'_, f64>,
    ) -> Result<(Array1<f64>, Array1<f64>, Array1<f64>)> {
        let hidden_pre = mlp.hidden.forward(&self.params, input)?;
        let hidden = relu(hidden_pre.view());
        let logits = mlp.output.forward(&self.params, hidden.view())?;
        Ok((hidden_pre, hidden, logits))
    }

    fn finish(
        &self,
        mlp: &Mlp,
        attributes: Vec<AttributeCache>,
        summaries: Vec<(Array1<f64>, Array1<f64>)>,
        self_attention: Option<SelfAttentionCache>,
        mlp_input: Array1<f64>,
    ) -> Result<(f64, ForwardCache)> {
        let (hidden_pre, hidden, logits) = self.mlp_forward(mlp, mlp_input.view())?;
        let cache = ForwardCache {
            generation: self.generation,
            attributes,
            summaries,
            self_attention,
            mlp_input,
            hidden_pre,
            hidden,
            logits,
        };
        Ok((cache.score(), cache))
    }

    fn forward_contrasted(&self, pair: &EmbeddedPair) -> Result<(f64, ForwardCache)> {
        self.check_groups(
            pair.per_attribute
                .iter()
                .flat_map(|g| [&g.shared, &g.unique_left, &g.unique_right]),
            pair.per_attribute.len(),
        )?;
        let mut attributes = Vec::with_capacity(self.config.attributes);
        let mut summaries = Vec::with_capacity(self.config.attributes);
        match &self.arch {
            Arch::Sum { psi, phi, mlp } => {
                for (j, g) in pair.per_attribute.iter().enumerate() {
                    let shared_sum = sum_columns(g.shared.view());
                    let unique_sum = sum_columns(g.unique_left.view()) + sum_columns(g.unique_right.view());
                    let sim_pre = psi[j].forward(&self.params, shared_sum.view())?;
                    let dif_pre = phi[j].forward(&self.params, unique_sum.view())?;
                    summaries.push((relu(sim_pre.view()), relu(dif_pre.view())));
                    attributes.push(AttributeCache::Sum {
                        shared_sum,
                        sim_pre,
                        unique_sum,
                        dif_pre,
                    });
                }
                let views: Vec<_> = summaries.iter().flat_map(|(s, d)| [s.view(), d.view()]).collect();
                let input = concatenate(Axis(0), &views).expect("1-d summaries");
                self.finish(mlp, attributes, summaries, None, input)
            }
            Arch::Attention {
                psi,
                phi,
                omega,
                mlp,
            } => {
                let contextual = self.config.variant == Variant::ContextAttention;
                for (j, g) in pair.per_attribute.iter().enumerate() {
                    let (sim, shared) = psi[j].forward(&self.params, g.shared.view(), None)?;
                    let context = contextual.then(|| sim.view());
                    let (dl, left) = phi[j].forward(&self.params, g.unique_left.view(), context)?;
                    let (dr, right) = phi[j].forward(&self.params, g.unique_right.view(), context)?;
                    summaries.push((sim, dl + dr));
                    attributes.push(AttributeCache::Attention {
                        shared,
                        left,
                        right,
                    });
                }
                let reps: Vec<Array1<f64>> = summaries
                    .iter()
                    .map(|(s, d)| concatenate![Axis(0), s.view(), d.view()])
                    .collect();
                let r = stack_columns(&reps, 2 * self.config.value_dim)?;
                let (out, sa_cache) = omega.forward(&self.params, r.view())?;
                self.finish(mlp, attributes, summaries, Some(sa_cache), self.pool(&out))
            }
            Arch::TwinSum { .. } => Err(self.mismatch("sum, attention or context-attention")),
        }
    }

    fn forward_twin(&self, pair: &TwinEmbeddedPair) -> Result<(f64, ForwardCache)> {
        let Arch::TwinSum { encoders, mlp } = &self.arch else {
            return Err(self.mismatch("twin-sum"));
        };
        self.check_groups(
            pair.per_attribute.iter().flat_map(|(l, r)| [l, r]),
            pair.per_attribute.len(),
        )?;
        let mut attributes = Vec::with_capacity(self.config.attributes);
        let mut summaries = Vec::with_capacity(self.config.attributes);
        let mut features = Vec::with_capacity(self.config.mlp_input_dim());
        for (j, (l, r)) in pair.per_attribute.iter().enumerate() {
            let left_sum = sum_columns(l.view());
            let right_sum = sum_columns(r.view());
            let left_pre = encoders[j].forward(&self.params, left_sum.view())?;
            let right_pre = encoders[j].forward(&self.params, right_sum.view())?;
            let (hl, hr) = (relu(left_pre.view()), relu(right_pre.view()));
            features.extend(hl.iter().zip(&hr).map(|(a, b)| (a - b).abs()));
            summaries.push((hl, hr));
            attributes.push(AttributeCache::Twin {
                left_sum,
                left_pre,
                right_sum,
                right_pre,
            });
        }
        self.finish(mlp, attributes, summaries, None, Array1::from(features))
    }

    /// Cross-entropy loss of the cached forward pass against `label` and
    /// the exact gradient of every registered parameter.
    pub fn backward(&self, cache: &ForwardCache, label: bool) -> Result<(f64, Gradients)> {
        let mut grads = self.params.zero_gradients();
        let loss = self.backward_into(cache, label, 1.0, &mut grads)?;
        Ok((loss, grads))
    }

    /// Adds `weight · ∂loss/∂θ` to `grads` and returns the loss.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        label: bool,
        weight: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        let (loss, d_logits) = cross_entropy(cache.logits.view(), label)?;
        let d_logits = d_logits * weight;
        let p = &self.params;
        let mlp = match &self.arch {
            Arch::Sum { mlp, .. } | Arch::Attention { mlp, .. } | Arch::TwinSum { mlp, .. } => mlp,
        };
        let d_hidden = mlp.output.backward(p, cache.hidden.view(), d_logits.view(), grads);
        let d_hidden_pre = relu_backward(cache.hidden_pre.view(), d_hidden.view());
        let d_input = mlp.hidden.backward(p, cache.mlp_input.view(), d_hidden_pre.view(), grads);

        match &self.arch {
            Arch::Sum { psi, phi, .. } => {
                let s = self.config.sim_dif_dim;
                for (j, attr) in cache.attributes.iter().enumerate() {
                    let AttributeCache::Sum {
                        shared_sum,
                        sim_pre,
                        unique_sum,
                        dif_pre,
                    } = attr
                    else {
                        return Err(Error::StaleCache);
                    };
                    let d_r = d_input.slice(s![2 * s * j..2 * s * (j + 1)]);
                    let d_sim = relu_backward(sim_pre.view(), d_r.slice(s![..s]));
                    let d_dif = relu_backward(dif_pre.view(), d_r.slice(s![s..]));
                    psi[j].backward(p, shared_sum.view(), d_sim.view(), grads);
                    phi[j].backward(p, unique_sum.view(), d_dif.view(), grads);
                }
            }
            Arch::Attention { psi, phi, omega, .. } => {
                let v = self.config.value_dim;
                let m = self.config.attributes;
                let sa_cache = cache.self_attention.as_ref().ok_or(Error::StaleCache)?;
                let d_out = match self.config.pooling {
                    AttributePooling::Concat => Array2::from_shape_fn((v, m), |(i, j)| d_input[j * v + i]),
                    AttributePooling::Mean => Array2::from_shape_fn((v, m), |(i, _)| d_input[i] / m as f64),
                };
                let d_r = omega.backward(p, sa_cache, d_out.view(), grads);
                for (j, attr) in cache.attributes.iter().enumerate() {
                    let AttributeCache::Attention {
                        shared,
                        left,
                        right,
                    } = attr
                    else {
                        return Err(Error::StaleCache);
                    };
                    let mut d_sim = d_r.slice(s![..v, j]).to_owned();
                    let d_dif = d_r.slice(s![v.., j]);
                    let (_, dq_left) = phi[j].backward(p, left, d_dif, grads);
                    let (_, dq_right) = phi[j].backward(p, right, d_dif, grads);
                    for dq in [dq_left, dq_right].into_iter().flatten() {
                        d_sim += &dq;
                    }
                    psi[j].backward(p, shared, d_sim.view(), grads);
                }
            }
            Arch::TwinSum { encoders, .. } => {
                let s = self.config.sim_dif_dim;
                for (j, attr) in cache.attributes.iter().enumerate() {
                    let AttributeCache::Twin {
                        left_sum,
                        left_pre,
                        right_sum,
                        right_pre,
                    } = attr
                    else {
                        return Err(Error::StaleCache);
                    };
                    let (hl, hr) = &cache.summaries[j];
                    let d_feat = d_input.slice(s![s * j..s * (j + 1)]);
                    // d|a − b|/da = sign(a − b), 0 at a = b
                    let d_left: Array1<f64> = ndarray::Zip::from(&d_feat)
                        .and(hl)
                        .and(hr)
                        .map_collect(|&g, &a, &b| {
                            if a > b {
                                g
                            } else if a < b {
                                -g
                            } else {
                                0.0
                            }
                        });
                    let d_right = -&d_left;
                    let d_left_pre = relu_backward(left_pre.view(), d_left.view());
                    let d_right_pre = relu_backward(right_pre.view(), d_right.view());
                    encoders[j].backward(p, left_sum.view(), d_left_pre.view(), grads);
                    encoders[j].backward(p, right_sum.view(), d_right_pre.view(), grads);
                }
            }
        }
        Ok(loss)
    }

    fn pool(&self, out: &Array2<f64>) -> Array1<f64> {
        match self.config.pooling {
            AttributePooling::Concat => flatten_columns(out),
            AttributePooling::Mean => out.mean_axis(Axis(1)).expect("m > 0"),
        }
    }

    /// Loss of one labeled example, without keeping the cache.
    pub fn loss(&self, features: &PairFeatures, label: bool) -> Result<f64> {
        let (_, cache) = self.forward(features)?;
        Ok(cross_entropy(cache.logits.view(), label)?.0)
    }
}

/// Finite-difference step for gradient checks. The twin baseline needs a
/// larger step: its encoder biases have exactly-zero gradient wherever both
/// twins are active, and a small step leaves only cancellation roundoff,
/// which the 1e-8 relative-error floor would amplify.
pub fn gradcheck_eps(variant: Variant) -> f64 {
    match variant {
        Variant::TwinSum => 1e-3,
        _ => 1e-5,
    }
}

/// Checks the full loss gradient against central differences. `fault`
/// scales the analytic gradient by `1 + fault` before comparison.
pub fn check_gradients(
    model: &Model,
    features: &PairFeatures,
    label: bool,
    eps: f64,
    fault: f64,
) -> Result<GradCheckReport> {
    let (_, cache) = model.forward(features)?;
    let (_, grads) = model.backward(&cache, label)?;
    let analytic: Vec<f64> = grads.flatten().into_iter().map(|g| g * (1.0 + fault)).collect();
    let mut probe = model.clone();
    let mut failure = None;
    let report = grad_check(
        |theta| {
            probe.params_mut().set_flat(theta).expect("same layout");
            probe.loss(features, label).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &model.params().flatten(),
        &analytic,
        eps,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

const TOY_VOCAB: &[&str] = &[
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet", "8", "6",
];

/// Gradient check on a random toy instance: two attributes, 8-d hashed
/// embeddings, small layer widths, random overlapping token strings, small
/// random biases.
pub fn toy_gradient_check(variant: Variant, seed: u64, fault: f64) -> Result<GradCheckReport> {
    use rand::seq::IndexedRandom;
    use rand::Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        variant,
        attributes: 2,
        embedding_dim: 8,
        sim_dif_dim: 6,
        hidden_dim: 8,
        trainable_query_dim: 3,
        context_dim: 4,
        value_dim: 4,
        pooling: AttributePooling::Concat,
        seed,
    };
    let mut model = Model::new(config)?;
    // Zero-initialized biases put every unit fed by an empty token group
    // exactly on the ReLU kink, where finite differences are meaningless.
    for p in model.params_mut().iter_mut().filter(|p| p.name.ends_with(".bias")) {
        for b in p.data.iter_mut() {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    let text = |rng: &mut ChaCha8Rng| {
        let n = rng.random_range(2..=5);
        (0..n)
            .map(|_| *TOY_VOCAB.choose(rng).expect("non-empty"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let left = Record::new([text(&mut rng), text(&mut rng)]);
    let right = Record::new([text(&mut rng), text(&mut rng)]);
    let label = rng.random_bool(0.5);
    let store = EmbeddingStore::hashed(8, seed);
    let features = model.featurize(&store, &left, &right)?;
    check_gradients(&model, &features, label, gradcheck_eps(variant), fault)
}

fn stack_columns(columns: &[Array1<f64>], rows: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((rows, columns.len()));
    for (j, c) in columns.iter().enumerate() {
        if c.len() != rows {
            return Err(Error::shape("attribute representation", rows, c.len()));
        }
        out.column_mut(j).assign(c);
    }
    Ok(out)
}

/// Column-major flattening: column 0, then column 1, ...
fn flatten_columns(x: &Array2<f64>) -> Array1<f64> {
    x.t().iter().copied().collect()
}

#[cfg(test)]
mod tests;
