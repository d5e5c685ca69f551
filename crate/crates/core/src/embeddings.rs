//! Frozen token embeddings.
//!
//! Vectors come from a whitespace-separated text file (`token v1 … vd` per
//! line, optional `count dim` header). Tokens missing from the table get a
//! deterministic fallback vector: either a unit-variance Gaussian keyed by
//! `(oov_seed, token)` or zeros.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::lim::{tokenize, ContrastedPair};

pub const DEFAULT_DIM: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OovPolicy {
    HashedGaussian,
    Zero,
}

#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
    oov_policy: OovPolicy,
    oov_seed: u64,
}

impl EmbeddingStore {
    /// A store with an empty table: every token takes the OOV path.
    pub fn hashed(dim: usize, oov_seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        EmbeddingStore {
            dim,
            table: HashMap::new(),
            oov_policy: OovPolicy::HashedGaussian,
            oov_seed,
        }
    }

    pub fn from_table(dim: usize, table: HashMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        if let Some((token, v)) = table.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::shape(
                "embedding table",
                format!("{dim} values for {token:?}"),
                v.len(),
            ));
        }
        Ok(EmbeddingStore {
            dim,
            table,
            oov_policy: OovPolicy::HashedGaussian,
            oov_seed: 0,
        })
    }

    pub fn with_oov(mut self, policy: OovPolicy, seed: u64) -> Self {
        self.oov_policy = policy;
        self.oov_seed = seed;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    pub fn oov_seed(&self) -> u64 {
        self.oov_seed
    }

    pub fn vocab_len(&self) -> usize {
        self.table.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.table.contains_key(token)
    }

    pub fn embed_token(&self, token: &str) -> Array1<f64> {
        if let Some(v) = self.table.get(token) {
            return Array1::from(v.clone());
        }
        match self.oov_policy {
            OovPolicy::Zero => Array1::zeros(self.dim),
            OovPolicy::HashedGaussian => {
                let mut hasher = Sha256::new();
                hasher.update(b"cordel-oov\0");
                hasher.update(self.oov_seed.to_le_bytes());
                hasher.update(token.as_bytes());
                let seed: [u8; 32] = hasher.finalize().into();
                let mut rng = ChaCha8Rng::from_seed(seed);
                (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
            }
        }
    }

    /// Embeds `tokens` as the columns of a `dim × n` matrix.
    pub fn embed_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Array2<f64> {
        let mut out = Array2::zeros((self.dim, tokens.len()));
        for (j, token) in tokens.iter().enumerate() {
            out.column_mut(j).assign(&self.embed_token(token.as_ref()));
        }
        out
    }
}

/// How to rebuild an [`EmbeddingStore`]; recorded in checkpoints and run
/// manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbeddingSource {
    Hashed {
        dim: usize,
        seed: u64,
    },
    File {
        path: std::path::PathBuf,
        dim: usize,
        oov_policy: OovPolicy,
        oov_seed: u64,
    },
}

impl EmbeddingSource {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingSource::Hashed { dim, .. } | EmbeddingSource::File { dim, .. } => *dim,
        }
    }

    pub fn open(&self) -> Result<EmbeddingStore> {
        match self {
            EmbeddingSource::Hashed { dim, seed } => {
                if *dim == 0 {
                    return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
                }
                Ok(EmbeddingStore::hashed(*dim, *seed))
            }
            EmbeddingSource::File {
                path,
                dim,
                oov_policy,
                oov_seed,
            } => Ok(load_word_embeddings(path, *dim)?.with_oov(*oov_policy, *oov_seed)),
        }
    }
}

/// Reads a text-format embedding file, requiring `expected_dim` values per
/// token.
pub fn load_word_embeddings(path: &Path, expected_dim: usize) -> Result<EmbeddingStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let table = read_word_embeddings(BufReader::new(file), expected_dim).map_err(|e| match e {
        Error::EmptyEmbeddingFile(_) => Error::EmptyEmbeddingFile(path.to_path_buf()),
        other => other,
    })?;
    EmbeddingStore::from_table(expected_dim, table)
}

pub fn read_word_embeddings<R: BufRead>(
    reader: R,
    expected_dim: usize,
) -> Result<HashMap<String, Vec<f64>>> {
    let mut table = HashMap::new();
    let mut seen_line = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Embedding {
            line: line_no,
            message: e.to_string(),
        })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let first = !seen_line;
        seen_line = true;
        if first && fields.len() == 2 {
            if let (Ok(_), Ok(dim)) = (fields[0].parse::<u64>(), fields[1].parse::<usize>()) {
                if dim != expected_dim {
                    return Err(Error::Embedding {
                        line: line_no,
                        message: format!("header declares dimension {dim}, expected {expected_dim}"),
                    });
                }
                continue;
            }
        }
        if fields.len() != expected_dim + 1 {
            return Err(Error::Embedding {
                line: line_no,
                message: format!(
                    "expected {expected_dim} values after the token, found {}",
                    fields.len() - 1
                ),
            });
        }
        let vector = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Embedding {
                    line: line_no,
                    message: format!("unparsable number {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        table.insert(fields[0].to_string(), vector);
    }
    if !seen_line {
        return Err(Error::EmptyEmbeddingFile(Default::default()));
    }
    Ok(table)
}

/// Embedded token groups of one attribute; each matrix is `dim × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedGroups {
    pub shared: Array2<f64>,
    pub unique_left: Array2<f64>,
    pub unique_right: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPair {
    pub per_attribute: Vec<EmbeddedGroups>,
}

impl EmbeddedPair {
    pub fn swapped(&self) -> Self {
        EmbeddedPair {
            per_attribute: self
                .per_attribute
                .iter()
                .map(|g| EmbeddedGroups {
                    shared: g.shared.clone(),
                    unique_left: g.unique_right.clone(),
                    unique_right: g.unique_left.clone(),
                })
                .collect(),
        }
    }
}

pub fn embed_contrasted_pair(store: &EmbeddingStore, cp: &ContrastedPair) -> EmbeddedPair {
    EmbeddedPair {
        per_attribute: cp
            .per_attribute
            .iter()
            .map(|t| EmbeddedGroups {
                shared: store.embed_tokens(&t.shared),
                unique_left: store.embed_tokens(&t.unique_left),
                unique_right: store.embed_tokens(&t.unique_right),
            })
            .collect(),
    }
}

/// Full per-attribute token embeddings of each record, without contrast.
/// Input of the twin baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinEmbeddedPair {
    pub per_attribute: Vec<(Array2<f64>, Array2<f64>)>,
}

pub fn embed_twin_pair(store: &EmbeddingStore, left: &Record, right: &Record) -> TwinEmbeddedPair {
    TwinEmbeddedPair {
        per_attribute: left
            .values
            .iter()
            .zip(&right.values)
            .map(|(l, r)| {
                (
                    store.embed_tokens(&tokenize(l)),
                    store.embed_tokens(&tokenize(r)),
                )
            })
            .collect(),
    }
}
