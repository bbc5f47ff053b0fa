//! Binary embedding file: magic `MOLEMB1`, u32 count, u32 dim, then `count`
//! records of (u64 item_id, dim x f32), all little-endian. The format is the
//! interchange surface for externally produced item embeddings.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{MolarError, Result};
use crate::itemrep::encoder::ItemEmbedding;
use crate::itemrep::record::ItemRecord;

pub const EMB_MAGIC: &[u8; 7] = b"MOLEMB1";

pub fn save_embeddings(embeddings: &[ItemEmbedding], path: &Path) -> Result<()> {
    if embeddings.is_empty() {
        return Err(MolarError::Format("refusing to write an empty embedding file".into()));
    }
    let d = embeddings[0].vector.len();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(EMB_MAGIC)?;
    out.write_all(&(embeddings.len() as u32).to_le_bytes())?;
    out.write_all(&(d as u32).to_le_bytes())?;
    for e in embeddings {
        if e.vector.len() != d {
            return Err(MolarError::Shape(format!(
                "item {}: vector dim {} vs file dim {d}",
                e.item_id,
                e.vector.len()
            )));
        }
        out.write_all(&e.item_id.to_le_bytes())?;
        for &v in &e.vector {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Load an embedding file, checking the dimension against `expected_d`.
/// Vectors come back as f64 (the payload is f32 by format).
pub fn load_external_embeddings(path: &Path, expected_d: usize) -> Result<Vec<ItemEmbedding>> {
    let mut file = std::fs::File::open(path).map_err(|e| {
        MolarError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut magic = [0u8; 7];
    file.read_exact(&mut magic)?;
    if &magic != EMB_MAGIC {
        return Err(MolarError::Format(format!(
            "{}: bad magic, not an embedding file",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    file.read_exact(&mut u32buf)?;
    let d = u32::from_le_bytes(u32buf) as usize;
    if d != expected_d {
        return Err(MolarError::Format(format!(
            "embedding file dimension {d} does not match expected dimension {expected_d}"
        )));
    }
    let mut embeddings = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::with_capacity(count);
    let mut u64buf = [0u8; 8];
    for _ in 0..count {
        file.read_exact(&mut u64buf)?;
        let item_id = u64::from_le_bytes(u64buf);
        if !seen.insert(item_id) {
            return Err(MolarError::Format(format!(
                "duplicate item_id {item_id} in embedding file"
            )));
        }
        let mut vector = Vec::with_capacity(d);
        for _ in 0..d {
            file.read_exact(&mut u32buf)?;
            vector.push(f32::from_le_bytes(u32buf) as f64);
        }
        embeddings.push(ItemEmbedding {
            item_id,
            vector,
            encoder_version: 0,
        });
    }
    Ok(embeddings)
}

/// Every catalog item must have an embedding; lists the missing ids.
pub fn validate_coverage(embeddings: &[ItemEmbedding], catalog: &[ItemRecord]) -> Result<()> {
    let have: std::collections::HashSet<u64> = embeddings.iter().map(|e| e.item_id).collect();
    let mut missing: Vec<u64> = catalog
        .iter()
        .map(|r| r.item_id)
        .filter(|id| !have.contains(id))
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    missing.sort_unstable();
    let shown: Vec<String> = missing.iter().take(10).map(u64::to_string).collect();
    Err(MolarError::Format(format!(
        "{} catalog item(s) missing from the embedding file: {}{}",
        missing.len(),
        shown.join(", "),
        if missing.len() > 10 { ", ..." } else { "" }
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(id: u64, v: Vec<f64>) -> ItemEmbedding {
        ItemEmbedding {
            item_id: id,
            vector: v,
            encoder_version: 0,
        }
    }

    #[test]
    fn round_trip_is_bit_exact_per_format() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.emb");
        let p2 = dir.path().join("b.emb");
        let embs = vec![
            emb(0, vec![0.125, -1.5, 3.25]),
            emb(42, vec![1e-3, 2.5, -0.0625]),
        ];
        save_embeddings(&embs, &p1).unwrap();
        let loaded = load_external_embeddings(&p1, 3).unwrap();
        save_embeddings(&loaded, &p2).unwrap();
        // file bytes identical after a load/save cycle
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        // and the loaded vectors round-trip bit-identically
        let again = load_external_embeddings(&p2, 3).unwrap();
        assert_eq!(loaded, again);
    }

    #[test]
    fn dimension_mismatch_names_both_dims() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.emb");
        save_embeddings(&[emb(0, vec![1.0; 16])], &p).unwrap();
        let err = load_external_embeddings(&p, 32).unwrap_err().to_string();
        assert!(err.contains("16") && err.contains("32"), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.emb");
        save_embeddings(&[emb(5, vec![1.0]), emb(5, vec![2.0])], &p).unwrap();
        assert!(load_external_embeddings(&p, 1).is_err());
    }

    #[test]
    fn missing_catalog_items_are_listed() {
        let catalog = vec![
            ItemRecord::new(0, "a"),
            ItemRecord::new(1, "b"),
            ItemRecord::new(2, "c"),
        ];
        let embs = vec![emb(0, vec![1.0])];
        let err = validate_coverage(&embs, &catalog).unwrap_err().to_string();
        assert!(err.contains('1') && err.contains('2'), "{err}");
    }
}
