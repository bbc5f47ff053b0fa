//! Leave-one-out split: per user the last item is the test target, the
//! second-to-last the validation target, and everything before that is
//! training data consumed as sliding windows truncated to `max_seq_len`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::interactions::Dataset;
use crate::error::{MolarError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitUser {
    pub user_id: u64,
    /// Chronological items strictly before the validation target.
    pub train_items: Vec<u64>,
    pub valid_target: u64,
    pub test_target: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitDataset {
    pub max_seq_len: usize,
    pub min_interactions: usize,
    pub num_items: usize,
    pub dropped_users: usize,
    pub users: Vec<SplitUser>,
}

/// One training example: predict `target` from the window of items ending
/// just before it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainWindow {
    pub user_index: usize,
    /// Index into `train_items`; the target is `train_items[pos]` and the
    /// input is the up-to-`max_seq_len` items before it.
    pub pos: usize,
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn window_input<'a>(&'a self, w: &TrainWindow) -> &'a [u64] {
        let items = &self.users[w.user_index].train_items;
        let start = w.pos.saturating_sub(self.max_seq_len);
        &items[start..w.pos]
    }

    pub fn window_target(&self, w: &TrainWindow) -> u64 {
        self.users[w.user_index].train_items[w.pos]
    }

    /// Input sequence for validation: the train items, truncated.
    pub fn valid_input(&self, user_index: usize) -> &[u64] {
        let items = &self.users[user_index].train_items;
        let start = items.len().saturating_sub(self.max_seq_len);
        &items[start..]
    }

    /// Input sequence for test: train items plus the validation target,
    /// truncated to the most recent `max_seq_len`.
    pub fn test_input(&self, user_index: usize) -> Vec<u64> {
        let u = &self.users[user_index];
        let mut items = u.train_items.clone();
        items.push(u.valid_target);
        let start = items.len().saturating_sub(self.max_seq_len);
        items.split_off(start)
    }

    /// Enumerate training windows in deterministic order. With
    /// `max_windows_per_user > 0` only that many of the most recent windows
    /// per user are kept.
    pub fn train_windows(&self, max_windows_per_user: usize) -> Vec<TrainWindow> {
        let mut out = Vec::new();
        for (ui, u) in self.users.iter().enumerate() {
            if u.train_items.len() < 2 {
                continue;
            }
            let first = if max_windows_per_user > 0 {
                u.train_items.len().saturating_sub(max_windows_per_user).max(1)
            } else {
                1
            };
            for pos in first..u.train_items.len() {
                out.push(TrainWindow {
                    user_index: ui,
                    pos,
                });
            }
        }
        out
    }

    pub fn save_manifest(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_manifest(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| {
            MolarError::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Ok(serde_json::from_str(&content)?)
    }
}

/// Build the leave-one-out split. Users were already filtered to
/// `min_interactions >= 3` during dataset assembly; anything shorter here is
/// defensive and gets dropped with a count.
pub fn leave_one_out_split(dataset: &Dataset, max_seq_len: usize, min_interactions: usize) -> Result<SplitDataset> {
    if max_seq_len == 0 {
        return Err(MolarError::Config("max_seq_len must be >= 1".into()));
    }
    let mut users = Vec::with_capacity(dataset.sequences.len());
    let mut dropped = dataset.dropped_users;
    for seq in &dataset.sequences {
        if seq.items.len() < 3 {
            dropped += 1;
            continue;
        }
        let n = seq.items.len();
        users.push(SplitUser {
            user_id: seq.user_id,
            train_items: seq.items[..n - 2].to_vec(),
            valid_target: seq.items[n - 2],
            test_target: seq.items[n - 1],
        });
    }
    Ok(SplitDataset {
        max_seq_len,
        min_interactions,
        num_items: dataset.num_items(),
        dropped_users: dropped,
        users,
    })
}
