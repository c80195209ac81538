//! Dense views of symbolic entries.
//!
//! Embeddings here are deterministic hash vectors: FNV-1a of the lowercased
//! text seeds a splitmix64 stream whose outputs are mapped onto `[-1, 1)`
//! and L2-normalized. They carry no semantics beyond string identity, but
//! they are bit-for-bit reproducible on every platform.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapack::{DataPack, Entry, EntryId, PackError};
use crate::ontology::Root;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { dim: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorizeError {
    #[error("feature vectors have inconsistent dimensions ({expected} vs {found})")]
    RaggedFeatureDim { expected: usize, found: usize },
    #[error(transparent)]
    Pack(#[from] PackError),
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Sebastiano Vigna's splitmix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn hashed_f64(text: &str, cfg: &EmbeddingConfig) -> Vec<f64> {
    let seed = fnv1a64(text.to_lowercase().as_bytes()) ^ cfg.seed;
    let mut rng = SplitMix64::new(seed);
    let scale = (1u64 << 52) as f64;
    let mut v: Vec<f64> = (0..cfg.dim)
        .map(|_| (rng.next_u64() >> 11) as f64 / scale - 1.0)
        .collect();
    normalize(&mut v);
    v
}

/// Unit-length hash embedding of a string (case-insensitive).
pub fn hashed_embedding(text: &str, cfg: &EmbeddingConfig) -> Vec<f32> {
    hashed_f64(text, cfg).into_iter().map(|x| x as f32).collect()
}

/// Normalized mean of the hash embeddings of the whitespace-separated
/// tokens of `text`. Text without tokens maps to the zero vector.
pub fn text_embedding(text: &str, cfg: &EmbeddingConfig) -> Vec<f32> {
    let mut sum = vec![0.0f64; cfg.dim];
    let mut n = 0usize;
    for token in text.split_whitespace() {
        for (acc, x) in sum.iter_mut().zip(hashed_embedding(token, cfg)) {
            *acc += f64::from(x);
        }
        n += 1;
    }
    if n == 0 {
        return vec![0.0; cfg.dim];
    }
    sum.iter_mut().for_each(|x| *x /= n as f64);
    normalize(&mut sum);
    sum.into_iter().map(|x| x as f32).collect()
}

/// Embedding of a span entry's covered text, without storing it.
pub fn span_embedding(pack: &DataPack, id: EntryId, cfg: &EmbeddingConfig) -> Result<Vec<f32>, PackError> {
    Ok(text_embedding(pack.span_text(id)?, cfg))
}

/// Computes a span entry's embedding and stores it on the entry.
pub fn embed_span(pack: &mut DataPack, id: EntryId, cfg: &EmbeddingConfig) -> Result<Vec<f32>, PackError> {
    let v = span_embedding(pack, id, cfg)?;
    pack.set_embedding(id, Some(v.clone()))?;
    Ok(v)
}

/// Zero-padded batch of variable-length feature sequences.
///
/// `data` is `instances x max_len x feature_dim`; `mask[i][j]` is 1 exactly
/// when `j < lengths[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub data: Array3<f32>,
    pub mask: Array2<u8>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn num_instances(&self) -> usize {
        self.lengths.len()
    }

    pub fn max_len(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn feature_dim(&self) -> usize {
        self.data.shape()[2]
    }

    /// The unpadded rows of instance `i`.
    pub fn instance(&self, i: usize) -> Vec<Vec<f32>> {
        (0..self.lengths[i])
            .map(|j| self.data.slice(ndarray::s![i, j, ..]).to_vec())
            .collect()
    }
}

/// Pads feature sequences to a common length. Instance order is kept.
pub fn auto_batch(instances: &[Vec<Vec<f32>>]) -> Result<Batch, TensorizeError> {
    let mut feature_dim = None;
    for f in instances.iter().flatten() {
        match feature_dim {
            None => feature_dim = Some(f.len()),
            Some(d) if d != f.len() => {
                return Err(TensorizeError::RaggedFeatureDim {
                    expected: d,
                    found: f.len(),
                })
            }
            Some(_) => {}
        }
    }
    let feature_dim = feature_dim.unwrap_or(0);
    let lengths: Vec<usize> = instances.iter().map(Vec::len).collect();
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    let mut data = Array3::<f32>::zeros((instances.len(), max_len, feature_dim));
    let mut mask = Array2::<u8>::zeros((instances.len(), max_len));
    for (i, seq) in instances.iter().enumerate() {
        for (j, feat) in seq.iter().enumerate() {
            mask[[i, j]] = 1;
            for (k, x) in feat.iter().enumerate() {
                data[[i, j, k]] = *x;
            }
        }
    }
    Ok(Batch {
        data,
        mask,
        lengths,
    })
}

/// One feature sequence per `context_type` entry, built from the covered
/// `inner_type` entries in span order.
pub fn extract_context_features<F>(
    pack: &DataPack,
    context_type: &str,
    inner_type: &str,
    mut featurizer: F,
) -> Result<Vec<Vec<Vec<f32>>>, TensorizeError>
where
    F: FnMut(&DataPack, &Entry) -> Vec<f32>,
{
    for ty in [context_type, inner_type] {
        let root = pack
            .ontology()
            .root_of(ty)
            .map_err(|_| PackError::UnknownType(ty.to_string()))?;
        if root != Root::Span {
            return Err(PackError::NotASpanType(ty.to_string()).into());
        }
    }
    let mut out = Vec::new();
    for ctx in pack.get_entries(context_type, true)? {
        let seq = pack
            .get_covered(ctx.id, inner_type, true)?
            .into_iter()
            .map(|e| featurizer(pack, e))
            .collect();
        out.push(seq);
    }
    Ok(out)
}
