//! Ingestion of raw rating/listening logs, preprocessing, user-disjoint
//! splits, fold-in/holdout partitions for unseen-user evaluation, and
//! minibatch assembly with input dropout.

mod batches;
mod canonical;
mod ingest;

pub use batches::{make_batches, Batch, BatchStream};
pub use canonical::{load_dataset, write_dataset, Dataset};
pub use ingest::{ingest_lastfm, ingest_movielens, IngestReport, LastFmValue};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Sparse binary user x item matrix with external-id vocabularies.
/// Rows are users; every retained user has at least one positive.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: BTreeMap<String, usize>,
    item_index: BTreeMap<String, usize>,
    /// Per-user sorted item column indices.
    rows: Vec<Vec<u32>>,
}

impl InteractionMatrix {
    /// Builds the matrix from (user, item) positives. Vocabularies are
    /// assigned by sorting external ids (numeric when every id parses as an
    /// integer), so identical inputs always yield identical index maps.
    pub fn from_positives(positives: &BTreeMap<String, Vec<String>>) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::Data("no interactions after preprocessing".into()));
        }
        let user_ids = sorted_ids(positives.keys().cloned().collect());
        let mut item_set: Vec<String> = positives
            .values()
            .flat_map(|v| v.iter().cloned())
            .collect();
        item_set.sort();
        item_set.dedup();
        let item_ids = sorted_ids(item_set);
        let user_index: BTreeMap<String, usize> = user_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let item_index: BTreeMap<String, usize> = item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let mut rows = vec![Vec::new(); user_ids.len()];
        for (user, items) in positives {
            let r = user_index[user];
            let mut cols: Vec<u32> = items.iter().map(|it| item_index[it] as u32).collect();
            cols.sort_unstable();
            cols.dedup();
            if cols.is_empty() {
                return Err(Error::Data(format!("user {user} has no positives")));
            }
            rows[r] = cols;
        }
        Ok(InteractionMatrix {
            user_ids,
            item_ids,
            user_index,
            item_index,
            rows,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_interactions(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_row(&self, user: usize) -> &[u32] {
        &self.rows[user]
    }

    pub fn user_pos(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    /// sha256 over the item vocabulary, newline separated.
    pub fn vocab_checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for id in &self.item_ids {
            h.update(id.as_bytes());
            h.update(b"\n");
        }
        hex_string(&h.finalize())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Sorts ids numerically when every id parses as an unsigned integer,
/// lexicographically otherwise.
fn sorted_ids(mut ids: Vec<String>) -> Vec<String> {
    if ids.iter().all(|s| s.parse::<u64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<u64>().unwrap());
    } else {
        ids.sort();
    }
    ids
}

/// Per-user binary sensitive attributes, defined for every retained user.
/// gender: 0 = male, 1 = female; age_group: 0 = young, 1 = senior.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitiveLabels {
    pub gender: Vec<u8>,
    pub age_group: Vec<u8>,
}

pub const ATTRIBUTES: [&str; 2] = ["gender", "age"];

impl SensitiveLabels {
    pub fn attribute(&self, attr: usize) -> &[u8] {
        match attr {
            0 => &self.gender,
            1 => &self.age_group,
            _ => panic!("attribute index {attr} out of range"),
        }
    }

    /// 0..4 cell index combining both attributes, for stratification.
    pub fn cell(&self, user: usize) -> usize {
        (self.gender[user] as usize) * 2 + self.age_group[user] as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::Data(format!("unknown split tag '{other}'"))),
        }
    }
}

/// Disjoint train/validation/test user sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn tags(&self, n_users: usize) -> Vec<SplitTag> {
        let mut tags = vec![SplitTag::Train; n_users];
        for &u in &self.val {
            tags[u] = SplitTag::Val;
        }
        for &u in &self.test {
            tags[u] = SplitTag::Test;
        }
        tags
    }
}

/// Stratified user split: within each (gender x age) cell the fractions are
/// realized by largest remainder, so every split preserves cell proportions
/// within one user. Deterministic given the seed.
pub fn split_users(
    matrix: &InteractionMatrix,
    labels: &SensitiveLabels,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitSpec> {
    let (ft, fv, fe) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fe <= 0.0 {
        return Err(Error::Config("split fractions must be positive".into()));
    }
    if (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {}",
            ft + fv + fe
        )));
    }
    let mut cells: [Vec<usize>; 4] = Default::default();
    for u in 0..matrix.n_users() {
        cells[labels.cell(u)].push(u);
    }
    let root = RngStream::new(seed).fork("split_users");
    let mut spec = SplitSpec {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    // Floors per cell; leftover slots go to the split with the largest global
    // deficit so that cell-level rounding does not accumulate into one split.
    let fractions = [ft, fv, fe];
    let mut allocated = [0usize; 3];
    let mut processed = 0usize;
    for (c, cell) in cells.iter().enumerate() {
        if cell.is_empty() {
            continue;
        }
        if cell.len() < 3 {
            return Err(Error::Data(format!(
                "stratification: cell {c} (gender={}, age={}) has {} users, need at least 3",
                c / 2,
                c % 2,
                cell.len()
            )));
        }
        let mut users = cell.clone();
        root.fork(&format!("cell{c}")).shuffle(&mut users);
        let n = users.len();
        processed += n;
        let mut counts: [usize; 3] =
            std::array::from_fn(|s| (fractions[s] * n as f64) as usize);
        let mut left = n - counts.iter().sum::<usize>();
        while left > 0 {
            let deficit = |s: usize| {
                fractions[s] * processed as f64 - (allocated[s] + counts[s]) as f64
            };
            let mut best = 0;
            for s in 1..3 {
                if deficit(s) > deficit(best) + 1e-12 {
                    best = s;
                }
            }
            counts[best] += 1;
            left -= 1;
        }
        for s in 0..3 {
            allocated[s] += counts[s];
        }
        let (a, b) = (counts[0], counts[0] + counts[1]);
        spec.train.extend_from_slice(&users[..a]);
        spec.val.extend_from_slice(&users[a..b]);
        spec.test.extend_from_slice(&users[b..]);
    }
    spec.train.sort_unstable();
    spec.val.sort_unstable();
    spec.test.sort_unstable();
    Ok(spec)
}

/// Uniformly random fold-in/holdout partition of one user's positives.
/// Fold-in gets ceil(fraction * n) items, capped so the holdout is non-empty.
pub fn foldin_partition(
    items: &[u32],
    fraction: f64,
    rng: &mut RngStream,
) -> Result<(Vec<u32>, Vec<u32>)> {
    if items.len() < 2 {
        return Err(Error::Data(format!(
            "fold-in partition needs at least 2 positives, got {}",
            items.len()
        )));
    }
    if !(0.0..1.0).contains(&fraction) && fraction != 1.0 {
        return Err(Error::Config(format!("fold-in fraction {fraction} out of range")));
    }
    let n = items.len();
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let mut order: Vec<u32> = items.to_vec();
    rng.shuffle(&mut order);
    let mut foldin = order[..k].to_vec();
    let mut holdout = order[k..].to_vec();
    foldin.sort_unstable();
    holdout.sort_unstable();
    Ok((foldin, holdout))
}
