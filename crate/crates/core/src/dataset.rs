//! Implicit-feedback interaction data.
//!
//! Input files hold one record per line, `<user_id> <item_id> <item_id> ...`,
//! whitespace separated. Lines starting with `#` and blank lines are ignored.
//! Ids are re-mapped to dense ranges in first-appearance order; the original
//! ids are kept so results can be reported in the source id space.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{rng_for, Rng};
use crate::{ItemId, UserId};

/// Which of the three per-user lists to address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    n_items: usize,
    train: Vec<Vec<ItemId>>,
    validation: Vec<Vec<ItemId>>,
    test: Vec<Vec<ItemId>>,
    item_popularity: Vec<usize>,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub validation_fraction_of_train: f64,
    pub min_interactions: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.2,
            validation_fraction_of_train: 0.1,
            min_interactions: 10,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let tf = self.test_fraction;
        let vf = self.validation_fraction_of_train;
        if !(0.0..1.0).contains(&tf) || !(0.0..1.0).contains(&vf) {
            return Err(Error::Config(format!(
                "split fractions must lie in [0, 1): test={tf}, validation={vf}"
            )));
        }
        if tf + vf * (1.0 - tf) >= 1.0 {
            return Err(Error::Config(
                "test and validation fractions leave no training data".into(),
            ));
        }
        Ok(())
    }
}

impl InteractionDataset {
    /// Builds a train-only dataset from dense per-user item lists.
    ///
    /// Lists are sorted and deduplicated. Original ids default to the dense ids.
    pub fn from_train(n_items: usize, train: Vec<Vec<ItemId>>) -> Result<Self> {
        let n_users = train.len();
        let user_ids = (0..n_users as u64).collect();
        let item_ids = (0..n_items as u64).collect();
        let empty = vec![Vec::new(); n_users];
        Self::from_parts(n_items, train, empty.clone(), empty, user_ids, item_ids)
    }

    /// Assembles a dataset and checks every invariant.
    pub fn from_parts(
        n_items: usize,
        mut train: Vec<Vec<ItemId>>,
        mut validation: Vec<Vec<ItemId>>,
        mut test: Vec<Vec<ItemId>>,
        user_ids: Vec<u64>,
        item_ids: Vec<u64>,
    ) -> Result<Self> {
        let n_users = train.len();
        if validation.len() != n_users || test.len() != n_users || user_ids.len() != n_users {
            return Err(Error::Data("per-user lists disagree on user count".into()));
        }
        if item_ids.len() != n_items {
            return Err(Error::Data("item id table disagrees on item count".into()));
        }
        for lists in [&mut train, &mut validation, &mut test] {
            for items in lists.iter_mut() {
                items.sort_unstable();
                items.dedup();
                if let Some(&last) = items.last() {
                    if last >= n_items {
                        return Err(Error::OutOfRange {
                            kind: "item",
                            id: last,
                            limit: n_items,
                        });
                    }
                }
            }
        }
        for u in 0..n_users {
            let overlaps = |a: &[ItemId], b: &[ItemId]| a.iter().any(|i| b.binary_search(i).is_ok());
            if overlaps(&train[u], &validation[u])
                || overlaps(&train[u], &test[u])
                || overlaps(&validation[u], &test[u])
            {
                return Err(Error::Data(format!("user {u} has an item in two splits")));
            }
        }
        let item_popularity = popularity(n_items, &train);
        Ok(InteractionDataset {
            n_items,
            train,
            validation,
            test,
            item_popularity,
            user_ids,
            item_ids,
        })
    }

    pub fn n_users(&self) -> usize {
        self.train.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn train(&self, u: UserId) -> &[ItemId] {
        &self.train[u]
    }

    pub fn validation(&self, u: UserId) -> &[ItemId] {
        &self.validation[u]
    }

    pub fn test(&self, u: UserId) -> &[ItemId] {
        &self.test[u]
    }

    pub fn split_lists(&self, split: Split) -> &[Vec<ItemId>] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn item_popularity(&self) -> &[usize] {
        &self.item_popularity
    }

    /// Original id of each dense user.
    pub fn user_ids(&self) -> &[u64] {
        &self.user_ids
    }

    /// Original id of each dense item.
    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    /// Dense id of an item given its original id.
    pub fn dense_item(&self, original: u64) -> Option<ItemId> {
        self.item_ids.iter().position(|&x| x == original)
    }

    pub fn n_train_interactions(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    pub fn is_train(&self, u: UserId, i: ItemId) -> bool {
        self.train[u].binary_search(&i).is_ok()
    }

    /// True when `i` appears in any of the user's splits.
    pub fn has_interacted(&self, u: UserId, i: ItemId) -> bool {
        self.train[u].binary_search(&i).is_ok()
            || self.validation[u].binary_search(&i).is_ok()
            || self.test[u].binary_search(&i).is_ok()
    }

    /// Appends users that only carry training interactions.
    pub(crate) fn with_extra_train_users(
        &self,
        profiles: &[Vec<ItemId>],
        original_ids: Vec<u64>,
    ) -> Result<Self> {
        let mut train = self.train.clone();
        let mut validation = self.validation.clone();
        let mut test = self.test.clone();
        let mut user_ids = self.user_ids.clone();
        for (p, id) in profiles.iter().zip(original_ids) {
            train.push(p.clone());
            validation.push(Vec::new());
            test.push(Vec::new());
            user_ids.push(id);
        }
        Self::from_parts(
            self.n_items,
            train,
            validation,
            test,
            user_ids,
            self.item_ids.clone(),
        )
    }

    /// Drops users and items with fewer than `min_k` training interactions,
    /// repeating until every remaining user and item meets the threshold.
    pub fn filter_min_interactions(&self, min_k: usize) -> Result<Self> {
        let mut user_alive = vec![true; self.n_users()];
        let mut item_alive = vec![true; self.n_items];
        loop {
            let mut changed = false;
            let mut item_deg = vec![0usize; self.n_items];
            for (u, items) in self.train.iter().enumerate() {
                if !user_alive[u] {
                    continue;
                }
                let deg = items.iter().filter(|&&i| item_alive[i]).count();
                if deg < min_k {
                    user_alive[u] = false;
                    changed = true;
                    continue;
                }
                for &i in items {
                    if item_alive[i] {
                        item_deg[i] += 1;
                    }
                }
            }
            for i in 0..self.n_items {
                if item_alive[i] && item_deg[i] < min_k {
                    item_alive[i] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let mut item_map = vec![usize::MAX; self.n_items];
        let mut item_ids = Vec::new();
        for i in 0..self.n_items {
            if item_alive[i] {
                item_map[i] = item_ids.len();
                item_ids.push(self.item_ids[i]);
            }
        }
        let remap = |items: &[ItemId]| -> Vec<ItemId> {
            items
                .iter()
                .filter(|&&i| item_alive[i])
                .map(|&i| item_map[i])
                .collect()
        };
        let (mut train, mut validation, mut test, mut user_ids) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for u in 0..self.n_users() {
            if user_alive[u] {
                train.push(remap(&self.train[u]));
                validation.push(remap(&self.validation[u]));
                test.push(remap(&self.test[u]));
                user_ids.push(self.user_ids[u]);
            }
        }
        if train.is_empty() || item_ids.is_empty() {
            return Err(Error::Data("dataset exhausted by filter".into()));
        }
        Self::from_parts(item_ids.len(), train, validation, test, user_ids, item_ids)
    }

    /// Per-user train/validation/test split.
    ///
    /// Each user moves `ceil(test_fraction * n)` items to test, then
    /// `floor(validation_fraction * n)` of the remainder to validation, where
    /// `n` is the user's interaction count. Users left without training items
    /// are dropped.
    pub fn split(&self, cfg: &SplitConfig) -> Result<Self> {
        cfg.validate()?;
        if self.validation.iter().chain(&self.test).any(|l| !l.is_empty()) {
            return Err(Error::Data("dataset is already split".into()));
        }
        let mut rng = rng_for(cfg.seed, 0x5b11);
        let (mut train, mut validation, mut test, mut user_ids) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (u, items) in self.train.iter().enumerate() {
            let n = items.len();
            let n_test = ((cfg.test_fraction * n as f64).ceil() as usize).min(n);
            let n_val =
                ((cfg.validation_fraction_of_train * n as f64).floor() as usize).min(n - n_test);
            let picked = index::sample(&mut rng, n, n_test + n_val).into_vec();
            let mut role = vec![Split::Train; n];
            for (k, &p) in picked.iter().enumerate() {
                role[p] = if k < n_test { Split::Test } else { Split::Validation };
            }
            let pick = |s: Split| -> Vec<ItemId> {
                items
                    .iter()
                    .zip(&role)
                    .filter(|(_, r)| **r == s)
                    .map(|(&i, _)| i)
                    .collect()
            };
            let tr = pick(Split::Train);
            if tr.is_empty() {
                continue;
            }
            train.push(tr);
            validation.push(pick(Split::Validation));
            test.push(pick(Split::Test));
            user_ids.push(self.user_ids[u]);
        }
        if train.is_empty() {
            return Err(Error::Data("no user kept a training interaction".into()));
        }
        Self::from_parts(
            self.n_items,
            train,
            validation,
            test,
            user_ids,
            self.item_ids.clone(),
        )
    }

    /// Uniform draw from the items the user has not interacted with in train.
    pub fn sample_negative(&self, u: UserId, rng: &mut Rng) -> Result<ItemId> {
        let pos = &self.train[u];
        if pos.len() >= self.n_items {
            return Err(Error::Data(format!(
                "user {u} interacts with every item; no negative exists"
            )));
        }
        loop {
            let j = rng.random_range(0..self.n_items);
            if pos.binary_search(&j).is_err() {
                return Ok(j);
            }
        }
    }

    /// Writes one split in the input format, using original ids.
    pub fn write_split(&self, path: &Path, split: Split) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_lists(&mut w, self.split_lists(split))
            .map_err(|e| Error::io(path, e))
    }

    pub(crate) fn write_lists<W: Write>(&self, w: &mut W, lists: &[Vec<ItemId>]) -> std::io::Result<()> {
        for (u, items) in lists.iter().enumerate() {
            write!(w, "{}", self.user_ids[u])?;
            for &i in items {
                write!(w, " {}", self.item_ids[i])?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    /// Writes `original_id,dense_id` rows for items (or users).
    pub fn write_id_map(&self, path: &Path, users: bool) -> Result<()> {
        let ids = if users { &self.user_ids } else { &self.item_ids };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let res: std::io::Result<()> = (|| {
            writeln!(w, "original_id,dense_id")?;
            for (dense, orig) in ids.iter().enumerate() {
                writeln!(w, "{orig},{dense}")?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }
}

fn popularity(n_items: usize, train: &[Vec<ItemId>]) -> Vec<usize> {
    let mut pop = vec![0; n_items];
    for items in train {
        for &i in items {
            pop[i] += 1;
        }
    }
    pop
}

/// Raw records of an interaction file: `(user, items)` in original ids.
pub fn read_records(path: &Path) -> Result<Vec<(u64, Vec<u64>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(BufReader::new(file), path)
}

pub fn parse_records<R: BufRead>(reader: R, path: &Path) -> Result<Vec<(u64, Vec<u64>)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut ids = Vec::new();
        for tok in line.split_whitespace() {
            let id = tok.parse::<u64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("malformed id {tok:?}"),
            })?;
            ids.push(id);
        }
        let user = ids.remove(0);
        out.push((user, ids));
    }
    Ok(out)
}

/// Loads an interaction file into a train-only dataset.
pub fn load_interactions(path: &Path) -> Result<InteractionDataset> {
    let records = read_records(path)?;
    from_records(&records).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Dense re-mapping of raw records, in first-appearance order.
pub fn from_records(records: &[(u64, Vec<u64>)]) -> Result<InteractionDataset> {
    if records.is_empty() {
        return Err(Error::Data("no interaction records".into()));
    }
    let mut user_index: HashMap<u64, usize> = HashMap::new();
    let mut item_index: HashMap<u64, usize> = HashMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut train: Vec<Vec<ItemId>> = Vec::new();
    for (user, items) in records {
        let u = *user_index.entry(*user).or_insert_with(|| {
            user_ids.push(*user);
            train.push(Vec::new());
            user_ids.len() - 1
        });
        for it in items {
            let i = *item_index.entry(*it).or_insert_with(|| {
                item_ids.push(*it);
                item_ids.len() - 1
            });
            train[u].push(i);
        }
    }
    let n_items = item_ids.len();
    let empty = vec![Vec::new(); train.len()];
    InteractionDataset::from_parts(n_items, train, empty.clone(), empty, user_ids, item_ids)
}

/// Parameters of the clustered synthetic interaction generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub mean_interactions: usize,
    /// Probability that an interaction stays inside the user's cluster.
    pub in_cluster: f64,
    /// Zipf exponent of item popularity within a cluster.
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 200,
            n_items: 300,
            n_clusters: 2,
            mean_interactions: 30,
            in_cluster: 0.85,
            popularity_exponent: 0.8,
            seed: 0,
        }
    }
}

/// Clustered implicit-feedback data: users and items are partitioned into
/// clusters, users mostly pick items of their own cluster, and items follow
/// a Zipf-like popularity profile inside each cluster.
pub fn synthetic_clusters(cfg: &SyntheticConfig) -> Result<InteractionDataset> {
    if cfg.n_clusters == 0 || cfg.n_items < cfg.n_clusters || cfg.n_users == 0 {
        return Err(Error::Config("synthetic generator needs users, items and clusters".into()));
    }
    if cfg.mean_interactions == 0 || cfg.mean_interactions * 3 / 2 > cfg.n_items {
        return Err(Error::Config("mean_interactions incompatible with item count".into()));
    }
    let mut rng = rng_for(cfg.seed, 0x5e7);
    let cluster_of_item = |i: usize| i * cfg.n_clusters / cfg.n_items;
    // Rank of the item inside its cluster drives its popularity weight.
    let mut rank_in_cluster = vec![0usize; cfg.n_items];
    let mut next = vec![0usize; cfg.n_clusters];
    for i in 0..cfg.n_items {
        let c = cluster_of_item(i);
        rank_in_cluster[i] = next[c];
        next[c] += 1;
    }
    let base: Vec<f64> = rank_in_cluster
        .iter()
        .map(|&r| 1.0 / ((r + 1) as f64).powf(cfg.popularity_exponent))
        .collect();

    let spread = (cfg.mean_interactions / 3).max(1);
    let mut train = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let c = u % cfg.n_clusters;
        let weights: Vec<f64> = (0..cfg.n_items)
            .map(|i| {
                let share = if cluster_of_item(i) == c {
                    cfg.in_cluster
                } else {
                    (1.0 - cfg.in_cluster) / (cfg.n_clusters - 1).max(1) as f64
                };
                base[i] * share
            })
            .collect();
        let lo = cfg.mean_interactions.saturating_sub(spread).max(1);
        let hi = cfg.mean_interactions + spread;
        let count = rng.random_range(lo..=hi);
        let items = index::sample_weighted(&mut rng, cfg.n_items, |i| weights[i], count)
            .map_err(|e| Error::Config(format!("synthetic sampling failed: {e}")))?
            .into_vec();
        train.push(items);
    }
    InteractionDataset::from_train(cfg.n_items, train)
}
