//! Frozen instruction encoders: phrase to fixed-size vector.

use std::collections::BTreeMap;
use std::path::Path;

use mavic_core::instructions::{normalize_phrase, InstructionRegistry, NULL_CLASS};
use mavic_core::seeded_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LearnerError, Result};

/// Key used to draw the vector of unregistered phrases.
const UNKNOWN_KEY: u64 = u64::MAX;

/// Serializable description; enough to rebuild the encoder bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderSpec {
    /// Registered phrases map to a seeded per-class vector; anything else to
    /// one shared unknown-phrase vector.
    Lookup { dim: usize, seed: u64 },
    /// Precomputed phrase vectors. Unlisted phrases use `fallback` when
    /// present and are an error otherwise. The empty phrase defaults to zeros.
    External {
        vectors: BTreeMap<String, Vec<f64>>,
        #[serde(default)]
        fallback: Option<Vec<f64>>,
    },
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::Lookup { dim: 8, seed: 0 }
    }
}

impl EncoderSpec {
    /// Reads an external vector file `{phrase: [floats]}`.
    pub fn load_external(path: &Path, fallback: Option<Vec<f64>>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: BTreeMap<String, Vec<f64>> = serde_json::from_str(&text)?;
        let vectors = raw.into_iter().map(|(k, v)| (normalize_phrase(&k), v)).collect();
        Ok(EncoderSpec::External { vectors, fallback })
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    spec: EncoderSpec,
    dim: usize,
    /// Normalized phrase to vector, for every phrase the encoder knows.
    table: BTreeMap<String, Vec<f64>>,
    fallback: Option<Vec<f64>>,
}

fn class_vector(seed: u64, key: u64, dim: usize) -> Vec<f64> {
    let mixed = seed ^ key.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = seeded_rng(mixed);
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

impl Encoder {
    pub fn new(spec: EncoderSpec, registry: &InstructionRegistry) -> Result<Self> {
        match &spec {
            EncoderSpec::Lookup { dim, seed } => {
                if *dim == 0 {
                    return Err(LearnerError::Config("embedding dimension must be positive".into()));
                }
                let mut table = BTreeMap::new();
                for (class, phrase) in registry.phrases() {
                    table.insert(normalize_phrase(phrase), class_vector(*seed, class as u64, *dim));
                }
                table.insert(String::new(), class_vector(*seed, NULL_CLASS as u64, *dim));
                let fallback = Some(class_vector(*seed, UNKNOWN_KEY, *dim));
                Ok(Self {
                    dim: *dim,
                    spec,
                    table,
                    fallback,
                })
            }
            EncoderSpec::External { vectors, fallback } => {
                let dim = vectors
                    .values()
                    .next()
                    .map(Vec::len)
                    .or(fallback.as_ref().map(Vec::len))
                    .ok_or_else(|| LearnerError::Config("external encoder has no vectors".into()))?;
                for (phrase, v) in vectors.iter().chain(fallback.iter().map(|f| (&UNKNOWN, f))) {
                    if v.len() != dim {
                        return Err(LearnerError::EmbeddingDim {
                            phrase: phrase.clone(),
                            expected: dim,
                            got: v.len(),
                        });
                    }
                }
                let mut table: BTreeMap<String, Vec<f64>> =
                    vectors.iter().map(|(k, v)| (normalize_phrase(k), v.clone())).collect();
                table.entry(String::new()).or_insert_with(|| vec![0.0; dim]);
                Ok(Self {
                    dim,
                    table,
                    fallback: fallback.clone(),
                    spec,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn knows(&self, phrase: &str) -> bool {
        self.table.contains_key(&normalize_phrase(phrase))
    }

    pub fn embed(&self, phrase: &str) -> Result<Vec<f64>> {
        let key = normalize_phrase(phrase);
        self.table
            .get(&key)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or(LearnerError::MissingPhrase(phrase.to_string()))
    }
}

static UNKNOWN: String = String::new();
