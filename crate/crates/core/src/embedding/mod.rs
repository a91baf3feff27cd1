//! Sentence embedding providers.
//!
//! The model never runs an encoder itself. Embeddings come either from a
//! precomputed cache keyed by normalized sentence, or from a deterministic
//! bag-of-tokens hash embedder used for tests and desk-scale runs.

mod cache;
mod hash;

use std::path::PathBuf;
use std::sync::Arc;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

pub use cache::{load_cache, read_cache_entries, write_cache, CacheEmbedder, CACHE_MAGIC, CACHE_VERSION};
pub use hash::{hash_embed, HashEmbedder};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::registry::Registry;
use crate::text::Document;

/// T×J matrix whose row t embeds sentence t.
pub type EmbeddingMatrix = Matrix;

pub trait SentenceEmbedder: Send + Sync {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// `None` when the provider has no vector for `sentence`.
    fn lookup(&self, sentence: &str) -> Option<Vec<f64>>;
}

/// Construction parameters shared by all registered embedders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    /// Registered embedder name, `hash` or `cache` by default.
    pub source: String,
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
}

impl EmbedderSpec {
    pub fn hash(dim: usize, seed: u64) -> Self {
        Self {
            source: "hash".into(),
            dim,
            seed,
            cache_path: None,
        }
    }

    pub fn cache(path: impl Into<PathBuf>) -> Self {
        Self {
            source: "cache".into(),
            dim: 0,
            seed: 0,
            cache_path: Some(path.into()),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn SentenceEmbedder>> {
        registry().create(&self.source, self)
    }
}

static REGISTRY: Lazy<Registry<EmbedderSpec, dyn SentenceEmbedder>> = Lazy::new(|| {
    let mut reg = Registry::new("embedder");
    reg.register("hash", |spec: &EmbedderSpec| {
        if spec.dim == 0 {
            return Err(Error::Config("hash embedder needs dim >= 1".into()));
        }
        Ok(Arc::new(HashEmbedder::new(spec.dim, spec.seed)) as Arc<dyn SentenceEmbedder>)
    })
    .expect("fresh registry");
    reg.register("cache", |spec: &EmbedderSpec| {
        let path = spec
            .cache_path
            .as_ref()
            .ok_or_else(|| Error::Config("cache embedder needs a cache path".into()))?;
        let cache = load_cache(path)?;
        if spec.dim != 0 && spec.dim != cache.dim() {
            return Err(Error::Config(format!(
                "cache {} has dim {}, config expects {}",
                path.display(),
                cache.dim(),
                spec.dim
            )));
        }
        Ok(Arc::new(cache) as Arc<dyn SentenceEmbedder>)
    })
    .expect("fresh registry");
    reg
});

pub fn registry() -> &'static Registry<EmbedderSpec, dyn SentenceEmbedder> {
    &REGISTRY
}

/// Embeds every sentence of `doc`. A cache miss reports all missing sentences.
pub fn embed_document(doc: &Document, provider: &dyn SentenceEmbedder) -> Result<EmbeddingMatrix> {
    embed_sentences(doc.sentences.iter().map(String::as_str), provider)
}

pub fn embed_sentences<'a>(
    sentences: impl IntoIterator<Item = &'a str>,
    provider: &dyn SentenceEmbedder,
) -> Result<EmbeddingMatrix> {
    let dim = provider.dim();
    let mut data = Vec::new();
    let mut rows = 0;
    let mut missing = Vec::new();
    for s in sentences {
        match provider.lookup(s) {
            Some(v) => {
                debug_assert_eq!(v.len(), dim);
                data.extend(v);
                rows += 1;
            }
            None => missing.push(s.to_owned()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::CacheMiss(missing));
    }
    Matrix::from_vec(rows, dim, data)
}
