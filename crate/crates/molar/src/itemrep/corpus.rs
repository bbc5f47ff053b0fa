//! Fine-tuning corpus generators.
//!
//! Three JSONL corpora, one object per line with schema
//! `{"task": "IT"|"SA"|"UB", "input": {...}, "output": {...}}`:
//!
//! * IT — image-to-text: input references an item's image features, output
//!   is its textual description.
//! * SA — structured attributes: input is title + metadata, output is the
//!   templated description `"title is {title}. {key} is {value}. ..."`.
//! * UB — user behavior: input is a user's recent item history
//!   (descriptions + image references), output the next item.
//!
//! Generators are pure functions of their inputs; identical inputs produce
//! byte-identical files.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::data::split::SplitDataset;
use crate::error::{MolarError, Result};
use crate::itemrep::record::ItemRecord;

pub struct CorpusOutput {
    pub lines: Vec<Value>,
    /// Records skipped for missing required fields (IT without images).
    pub skipped: usize,
}

/// The serialization template shared by SA outputs and item descriptions.
pub fn sa_description(record: &ItemRecord) -> String {
    let mut parts = vec![format!("title is {}.", record.title)];
    for (k, v) in &record.attributes {
        parts.push(format!("{k} is {v}."));
    }
    parts.join(" ")
}

pub fn generate_it_corpus(records: &[ItemRecord]) -> CorpusOutput {
    let mut lines = Vec::new();
    let mut skipped = 0;
    for r in records {
        if !r.has_image() {
            skipped += 1;
            continue;
        }
        lines.push(json!({
            "task": "IT",
            "input": { "image_features_ref": r.item_id },
            "output": { "description": sa_description(r) },
        }));
    }
    CorpusOutput { lines, skipped }
}

pub fn generate_sa_corpus(records: &[ItemRecord]) -> CorpusOutput {
    let lines = records
        .iter()
        .map(|r| {
            let mut attrs = Map::new();
            for (k, v) in &r.attributes {
                attrs.insert(k.clone(), Value::from(v.clone()));
            }
            json!({
                "task": "SA",
                "input": { "title": r.title, "attributes": attrs },
                "output": { "description": sa_description(r) },
            })
        })
        .collect();
    CorpusOutput { lines, skipped: 0 }
}

/// One UB record per user with at least two training items: the history
/// before the last training item (truncated to `max_seq_len`) predicts it.
pub fn generate_ub_corpus(split: &SplitDataset, records: &[ItemRecord]) -> Result<CorpusOutput> {
    let by_id: std::collections::HashMap<u64, &ItemRecord> =
        records.iter().map(|r| (r.item_id, r)).collect();
    let mut lines = Vec::new();
    let mut skipped = 0;
    for user in &split.users {
        if user.train_items.len() < 2 {
            skipped += 1;
            continue;
        }
        let target = *user.train_items.last().expect("nonempty");
        let end = user.train_items.len() - 1;
        let start = end.saturating_sub(split.max_seq_len);
        let mut history = Vec::with_capacity(end - start);
        for &item in &user.train_items[start..end] {
            let rec = by_id.get(&item).ok_or_else(|| {
                MolarError::Data(format!("item {item} missing from catalog"))
            })?;
            let mut entry = Map::new();
            entry.insert("item_id".into(), Value::from(item));
            entry.insert("description".into(), Value::from(sa_description(rec)));
            if rec.has_image() {
                entry.insert("image_features_ref".into(), Value::from(item));
            }
            history.push(Value::Object(entry));
        }
        lines.push(json!({
            "task": "UB",
            "input": { "user_id": user.user_id, "history": history },
            "output": { "next_item": target },
        }));
    }
    Ok(CorpusOutput { lines, skipped })
}

pub fn write_corpus_jsonl(path: &Path, corpus: &CorpusOutput) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in &corpus.lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
