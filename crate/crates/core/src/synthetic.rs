//! Synthetic product-pair corpus where non-matches differ from their
//! counterpart only in one numeric token ("8 pack" vs "6 pack").
//!
//! Words get independent Gaussian embeddings. Numerals share one common
//! direction plus a small private perturbation, so two different numbers
//! are close in embedding space, as they tend to be in pretrained
//! vectors. Both matches and non-matches may carry benign filler words
//! ("genuine", "new", ...) on either side, independently of the label.

use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{split_pairs, Dataset, LabeledPair, Record, Schema};
use crate::embeddings::{EmbeddingStore, OovPolicy};
use crate::error::Result;

const BRANDS: &[&str] = &[
    "acme", "zenith", "orbit", "lumen", "vertex", "nimbus", "cobalt", "aurora", "summit", "pioneer",
    "harbor", "falcon", "cedar", "quartz", "meridian", "atlas",
];
const PRODUCTS: &[&str] = &[
    "soda", "cola", "juice", "water", "tea", "coffee", "batteries", "pens", "markers", "candles",
    "cookies", "crackers", "socks", "towels", "filters", "bulbs", "tissues", "wipes", "snacks", "chips",
];
const DESCRIPTORS: &[&str] = &[
    "classic", "diet", "zero", "cherry", "lemon", "vanilla", "organic", "sparkling", "premium", "extra",
    "mild", "bold", "unscented", "scented", "large", "small", "blue", "red", "green", "black", "white",
    "soft", "strong", "fresh", "roasted", "salted", "sweet", "spicy", "natural", "deluxe",
];
const UNITS: &[&str] = &["pack", "count", "ct"];
const SIZES: &[&str] = &["oz", "ml", "fl", "lb", "g"];
const FILLERS: &[&str] = &[
    "genuine", "new", "original", "official", "value", "bundle", "brand", "item", "authentic", "sale",
    "special", "edition", "retail", "bulk", "free", "shipping",
];
/// Pack counts are drawn from `1..=MAX_COUNT`, sizes from above it, so a
/// count never coincides with the size in the same title.
const MAX_COUNT: u32 = 24;
const MAX_NUMBER: u32 = 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericCorpusConfig {
    pub pairs: usize,
    pub dim: usize,
    /// Standard deviation of a numeral's private perturbation, relative to
    /// the per-coordinate scale of ordinary words.
    pub number_noise: f64,
    /// Probability that each record of a pair receives filler words.
    pub filler_rate: f64,
    pub seed: u64,
}

impl Default for NumericCorpusConfig {
    fn default() -> Self {
        NumericCorpusConfig {
            pairs: 2000,
            dim: 32,
            number_noise: 0.1,
            filler_rate: 0.5,
            seed: 0,
        }
    }
}

/// Embeddings for every corpus token.
pub fn numeric_corpus_embeddings(dim: usize, number_noise: f64, seed: u64) -> Result<EmbeddingStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_de3b);
    let gaussian = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.sample(StandardNormal)).collect() };
    let mut table = HashMap::new();
    for word in BRANDS.iter().chain(PRODUCTS).chain(DESCRIPTORS).chain(UNITS).chain(SIZES).chain(FILLERS) {
        table.insert(word.to_string(), gaussian(&mut rng));
    }
    let direction = gaussian(&mut rng);
    for n in 1..=MAX_NUMBER {
        let noise = gaussian(&mut rng);
        let v = direction.iter().zip(&noise).map(|(d, e)| d + number_noise * e).collect();
        table.insert(n.to_string(), v);
    }
    Ok(EmbeddingStore::from_table(dim, table)?.with_oov(OovPolicy::Zero, 0))
}

struct Product {
    brand: &'static str,
    product: &'static str,
    descriptors: Vec<&'static str>,
    count: u32,
    unit: &'static str,
    size: u32,
    size_unit: &'static str,
}

impl Product {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let k = rng.random_range(1..=3);
        Product {
            brand: BRANDS.choose(rng).expect("non-empty"),
            product: PRODUCTS.choose(rng).expect("non-empty"),
            descriptors: DESCRIPTORS.choose_multiple(rng, k).copied().collect(),
            count: rng.random_range(1..=MAX_COUNT),
            unit: UNITS.choose(rng).expect("non-empty"),
            size: rng.random_range(MAX_COUNT + 1..=MAX_NUMBER),
            size_unit: SIZES.choose(rng).expect("non-empty"),
        }
    }

    fn title(&self, count: u32, fillers: &[&str]) -> String {
        let mut words = vec![self.brand.to_string(), self.product.to_string()];
        words.extend(self.descriptors.iter().map(|d| d.to_string()));
        words.extend([count.to_string(), self.unit.to_string(), self.size.to_string(), self.size_unit.to_string()]);
        words.extend(fillers.iter().map(|f| f.to_string()));
        words.join(" ")
    }
}

fn fillers(rng: &mut ChaCha8Rng, rate: f64) -> Vec<&'static str> {
    if rng.random_bool(rate) {
        let k = rng.random_range(1..=2);
        FILLERS.choose_multiple(rng, k).copied().collect()
    } else {
        Vec::new()
    }
}

/// Balanced labeled pairs over the schema `(title, brand)`.
pub fn numeric_difference_pairs(config: &NumericCorpusConfig) -> Vec<LabeledPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pairs: Vec<LabeledPair> = (0..config.pairs)
        .map(|i| {
            let p = Product::random(&mut rng);
            let label = i % 2 == 0;
            let right_count = if label {
                p.count
            } else {
                let mut other = rng.random_range(1..MAX_COUNT);
                if other >= p.count {
                    other += 1;
                }
                other
            };
            let (fl, fr) = (fillers(&mut rng, config.filler_rate), fillers(&mut rng, config.filler_rate));
            LabeledPair::new(
                Record::new([p.title(p.count, &fl), p.brand.to_string()]),
                Record::new([p.title(right_count, &fr), p.brand.to_string()]),
                label,
            )
        })
        .collect();
    pairs.shuffle(&mut rng);
    pairs
}

/// The corpus split 3:1:1, with its embedding store.
pub fn numeric_difference_corpus(config: &NumericCorpusConfig) -> Result<(Dataset, EmbeddingStore)> {
    let pairs = numeric_difference_pairs(config);
    let (train, valid, test) = split_pairs(&pairs, [3.0, 1.0, 1.0], config.seed);
    let dataset = Dataset {
        name: "numeric-difference".into(),
        schema: Schema::new(["title", "brand"])?,
        train,
        valid,
        test,
    };
    let store = numeric_corpus_embeddings(config.dim, config.number_noise, config.seed)?;
    Ok((dataset, store))
}
