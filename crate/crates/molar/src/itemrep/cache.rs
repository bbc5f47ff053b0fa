//! Version-keyed embedding cache.
//!
//! Entries are keyed by `(item_id, encoder_version)`: any parameter update
//! changes the version hash and silently invalidates every cached vector.
//! Reads are concurrent, writes exclusive.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use rayon::prelude::*;

use crate::error::Result;
use crate::itemrep::encoder::{ItemEmbedding, ItemEncoder};
use crate::itemrep::record::ItemRecord;

#[derive(Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<u64, (u64, Vec<f64>)>>,
    forwards: AtomicU64,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of actual encoder forward passes performed through this cache.
    pub fn forward_count(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, item_id: u64, version: u64) -> Option<Vec<f64>> {
        let map = self.entries.read().expect("cache lock");
        map.get(&item_id)
            .filter(|(v, _)| *v == version)
            .map(|(_, vec)| vec.clone())
    }

    pub fn put(&self, item_id: u64, version: u64, vector: Vec<f64>) {
        let mut map = self.entries.write().expect("cache lock");
        map.insert(item_id, (version, vector));
    }
}

/// Encode a batch of records, reusing cached vectors whose encoder version
/// still matches. Output order follows input order; cache misses are encoded
/// in parallel.
pub fn batch_encode(
    records: &[&ItemRecord],
    encoder: &ItemEncoder,
    cache: &EmbeddingCache,
) -> Result<Vec<ItemEmbedding>> {
    let version = encoder.version_hash();
    let results: Vec<Result<ItemEmbedding>> = records
        .par_iter()
        .map(|record| {
            if let Some(vector) = cache.get(record.item_id, version) {
                return Ok(ItemEmbedding {
                    item_id: record.item_id,
                    vector,
                    encoder_version: version,
                });
            }
            cache.forwards.fetch_add(1, Ordering::Relaxed);
            let emb = encoder.encode_item(record)?;
            cache.put(record.item_id, version, emb.vector.clone());
            Ok(emb)
        })
        .collect();
    results.into_iter().collect()
}
