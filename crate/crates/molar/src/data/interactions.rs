//! Interaction-log parsing and dataset assembly.
//!
//! Accepted wire format: UTF-8 CSV or TSV with columns (user, item,
//! timestamp) and an optional rating column that is ignored — ratings are
//! treated as implicit positives. The delimiter and an optional header are
//! auto-detected. Four-column files in the classic MovieLens order
//! (user, item, rating, timestamp) are recognized by column magnitude:
//! whichever of columns 3/4 looks like epoch seconds becomes the timestamp.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{MolarError, Result};
use crate::itemrep::record::ItemRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user_id: u64,
    pub item_id: u64,
    pub timestamp: i64,
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub total_rows: usize,
    pub parsed_rows: usize,
    pub malformed_rows: usize,
    pub had_header: bool,
    /// True when a 4-column file was read as (user, item, rating, timestamp).
    pub movielens_column_order: bool,
    pub empty_file: bool,
}

pub struct LoadedInteractions {
    pub interactions: Vec<Interaction>,
    pub report: LoadReport,
}

/// Parse an interaction log. More than 1% malformed rows is a format error;
/// an empty file yields an empty list with `report.empty_file` set so the
/// caller can warn.
pub fn load_interactions(path: &Path) -> Result<LoadedInteractions> {
    let content = std::fs::read_to_string(path).map_err(|e| {
        MolarError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    parse_interactions(&content)
}

pub fn parse_interactions(content: &str) -> Result<LoadedInteractions> {
    let mut report = LoadReport::default();
    let lines: Vec<&str> = content
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        report.empty_file = true;
        return Ok(LoadedInteractions {
            interactions: Vec::new(),
            report,
        });
    }

    let delim = if lines[0].contains('\t') { '\t' } else { ',' };
    let mut start = 0;
    if !first_field_is_numeric(lines[0], delim) {
        report.had_header = true;
        start = 1;
    }

    // Column-order sniff for 4-column files: pick the wider-magnitude column
    // as the timestamp, defaulting to column 3 (user,item,timestamp,rating).
    let mut col2_sample = Vec::new();
    let mut col3_sample = Vec::new();
    for line in lines[start..].iter().take(1000) {
        let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
        if fields.len() >= 4 {
            if let (Ok(a), Ok(b)) = (fields[2].parse::<f64>(), fields[3].parse::<f64>()) {
                col2_sample.push(a);
                col3_sample.push(b);
            }
        }
    }
    let ts_index = if !col3_sample.is_empty() {
        let med2 = median(&mut col2_sample.clone());
        let med3 = median(&mut col3_sample.clone());
        if med3 > med2.max(1e6) {
            report.movielens_column_order = true;
            3
        } else {
            2
        }
    } else {
        2
    };

    let mut interactions = Vec::with_capacity(lines.len() - start);
    for line in &lines[start..] {
        report.total_rows += 1;
        let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
        let parsed = (|| -> Option<Interaction> {
            if fields.len() < 3 {
                return None;
            }
            let ts_col = if fields.len() > ts_index { ts_index } else { 2 };
            Some(Interaction {
                user_id: fields[0].parse().ok()?,
                item_id: fields[1].parse().ok()?,
                // tolerate fractional timestamps by truncation
                timestamp: fields[ts_col].parse::<f64>().ok()? as i64,
            })
        })();
        match parsed {
            Some(i) => {
                interactions.push(i);
                report.parsed_rows += 1;
            }
            None => report.malformed_rows += 1,
        }
    }

    if report.malformed_rows > 0
        && (report.malformed_rows as f64) > 0.01 * report.total_rows as f64
    {
        return Err(MolarError::Format(format!(
            "{} of {} rows malformed (>1%)",
            report.malformed_rows, report.total_rows
        )));
    }

    Ok(LoadedInteractions {
        interactions,
        report,
    })
}

fn first_field_is_numeric(line: &str, delim: char) -> bool {
    line.split(delim)
        .next()
        .map(|f| f.trim().parse::<f64>().is_ok())
        .unwrap_or(false)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

// ── dataset assembly ────────────────────────────────────────────────

/// Remap table from raw file ids to dense ids, ordered by first appearance.
#[derive(Clone, Debug, Default)]
pub struct IdMap {
    pub raw_to_dense: HashMap<u64, u64>,
    pub dense_to_raw: Vec<u64>,
}

impl IdMap {
    fn insert(&mut self, raw: u64) -> u64 {
        if let Some(&d) = self.raw_to_dense.get(&raw) {
            return d;
        }
        let d = self.dense_to_raw.len() as u64;
        self.raw_to_dense.insert(raw, d);
        self.dense_to_raw.push(raw);
        d
    }

    pub fn len(&self) -> usize {
        self.dense_to_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense_to_raw.is_empty()
    }
}

/// One user's chronological item sequence (dense ids).
#[derive(Clone, Debug)]
pub struct UserSequence {
    pub user_id: u64,
    pub items: Vec<u64>,
}

/// A fully assembled dataset: dense id spaces, chronological sequences, and
/// an item catalog covering every referenced item.
#[derive(Debug)]
pub struct Dataset {
    pub sequences: Vec<UserSequence>,
    pub catalog: Vec<ItemRecord>,
    pub user_map: IdMap,
    pub item_map: IdMap,
    pub num_interactions: usize,
    pub dropped_users: usize,
}

impl Dataset {
    pub fn num_users(&self) -> usize {
        self.sequences.len()
    }

    pub fn num_items(&self) -> usize {
        self.catalog.len()
    }
}

/// Assemble a dataset from parsed interactions and raw item metadata.
///
/// Users with fewer than `min_interactions` events are dropped (counted).
/// Per-user ordering is a stable sort by timestamp, so equal timestamps keep
/// file order. Dense ids are assigned by first appearance; the catalog holds
/// exactly the items referenced by kept users.
pub fn build_dataset(
    interactions: &[Interaction],
    items: &[ItemRecord],
    min_interactions: usize,
) -> Result<Dataset> {
    // group chronologically per user, preserving file order for ties
    let mut per_user: HashMap<u64, Vec<(i64, usize)>> = HashMap::new();
    let mut user_order: Vec<u64> = Vec::new();
    for (idx, it) in interactions.iter().enumerate() {
        let entry = per_user.entry(it.user_id).or_insert_with(|| {
            user_order.push(it.user_id);
            Vec::new()
        });
        entry.push((it.timestamp, idx));
    }

    let raw_items: HashMap<u64, &ItemRecord> = items.iter().map(|r| (r.item_id, r)).collect();

    let mut user_map = IdMap::default();
    let mut item_map = IdMap::default();
    let mut sequences = Vec::new();
    let mut dropped = 0usize;
    let mut missing_items: Vec<u64> = Vec::new();
    let mut num_interactions = 0usize;

    for raw_user in user_order {
        let mut events = per_user.remove(&raw_user).expect("grouped above");
        if events.len() < min_interactions {
            dropped += 1;
            continue;
        }
        events.sort_by_key(|&(ts, _)| ts); // stable: ties keep file order
        let user_id = user_map.insert(raw_user);
        let mut seq = Vec::with_capacity(events.len());
        for (_, idx) in events {
            let raw_item = interactions[idx].item_id;
            if !raw_items.contains_key(&raw_item) && !missing_items.contains(&raw_item) {
                missing_items.push(raw_item);
            }
            seq.push(item_map.insert(raw_item));
        }
        num_interactions += seq.len();
        sequences.push(UserSequence {
            user_id,
            items: seq,
        });
    }

    if !missing_items.is_empty() {
        missing_items.sort_unstable();
        let shown: Vec<String> = missing_items.iter().take(10).map(u64::to_string).collect();
        return Err(MolarError::Data(format!(
            "{} interacted item(s) missing from the item metadata file (e.g. {})",
            missing_items.len(),
            shown.join(", ")
        )));
    }

    // catalog in dense order, ids rewritten to dense
    let mut catalog = Vec::with_capacity(item_map.len());
    for (dense, raw) in item_map.dense_to_raw.iter().enumerate() {
        let mut rec = raw_items[raw].clone();
        rec.item_id = dense as u64;
        catalog.push(rec);
    }

    Ok(Dataset {
        sequences,
        catalog,
        user_map,
        item_map,
        num_interactions,
        dropped_users: dropped,
    })
}
