//! Heuristic data-poisoning attacks: Random and Bandwagon fake users.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::math::rng_for;
use crate::{ItemId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    /// Fillers drawn uniformly from all non-target items.
    Random,
    /// Fillers drawn from the most popular items.
    Bandwagon,
}

impl std::str::FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(AttackMethod::Random),
            "bandwagon" => Ok(AttackMethod::Bandwagon),
            other => Err(Error::Config(format!("unknown attack method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    pub method: AttackMethod,
    /// Fake users as a fraction of genuine users.
    pub budget: f64,
    /// Dense target item ids.
    pub targets: Vec<ItemId>,
    /// Filler items per profile; `None` mimics the mean genuine profile length.
    pub filler_count: Option<usize>,
    pub popular_fraction: f64,
    pub seed: u64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            method: AttackMethod::Random,
            budget: 0.01,
            targets: Vec::new(),
            filler_count: None,
            popular_fraction: 0.1,
            seed: 0,
        }
    }
}

impl AttackSpec {
    pub fn validate(&self, n_items: usize) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(Error::Config(format!("attack budget must be positive, got {}", self.budget)));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("attack needs at least one target item".into()));
        }
        if let Some(&t) = self.targets.iter().find(|&&t| t >= n_items) {
            return Err(Error::OutOfRange { kind: "item", id: t, limit: n_items });
        }
        if !(self.popular_fraction > 0.0 && self.popular_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "popular_fraction must lie in (0, 1], got {}",
                self.popular_fraction
            )));
        }
        Ok(())
    }

    pub fn n_fake(&self, n_genuine: usize) -> usize {
        ((self.budget * n_genuine as f64).round() as usize).max(1)
    }

    fn sorted_targets(&self) -> Vec<ItemId> {
        let mut t = self.targets.clone();
        t.sort_unstable();
        t.dedup();
        t
    }

    /// Filler count in effect for `ds`.
    pub fn resolved_filler_count(&self, ds: &InteractionDataset) -> usize {
        self.filler_count.unwrap_or_else(|| {
            let mean = ds.n_train_interactions() as f64 / ds.n_users().max(1) as f64;
            (mean.round() as usize).saturating_sub(self.sorted_targets().len())
        })
    }
}

/// Items ranked by train popularity, most popular first, ties by id.
pub fn popularity_order(ds: &InteractionDataset) -> Vec<ItemId> {
    let pop = ds.item_popularity();
    let mut items: Vec<ItemId> = (0..ds.n_items()).collect();
    items.sort_by(|&a, &b| pop[b].cmp(&pop[a]).then(a.cmp(&b)));
    items
}

/// The `count` least popular items having at least `min_popularity` train
/// interactions, ties by id.
pub fn least_popular_items(ds: &InteractionDataset, count: usize, min_popularity: usize) -> Vec<ItemId> {
    let pop = ds.item_popularity();
    let mut items: Vec<ItemId> = (0..ds.n_items()).filter(|&i| pop[i] >= min_popularity).collect();
    items.sort_by(|&a, &b| pop[a].cmp(&pop[b]).then(a.cmp(&b)));
    items.truncate(count);
    items
}

/// Candidate fillers for `spec` on `ds`, in ascending id order.
pub fn filler_pool(ds: &InteractionDataset, spec: &AttackSpec) -> Vec<ItemId> {
    let targets = spec.sorted_targets();
    let mut pool: Vec<ItemId> = match spec.method {
        AttackMethod::Random => (0..ds.n_items()).collect(),
        AttackMethod::Bandwagon => {
            let size = ((spec.popular_fraction * ds.n_items() as f64).round() as usize).max(1);
            let mut top = popularity_order(ds);
            top.truncate(size);
            top
        }
    };
    pool.retain(|i| targets.binary_search(i).is_err());
    pool.sort_unstable();
    pool
}

/// Builds the fake profiles: every profile holds all targets plus fillers.
pub fn generate_profiles(ds: &InteractionDataset, spec: &AttackSpec) -> Result<Vec<Vec<ItemId>>> {
    spec.validate(ds.n_items())?;
    let targets = spec.sorted_targets();
    let filler_count = spec.resolved_filler_count(ds);
    let pool = filler_pool(ds, spec);
    if pool.len() < filler_count {
        return Err(Error::Config(format!(
            "filler pool has {} items but {} fillers were requested",
            pool.len(),
            filler_count
        )));
    }
    let mut rng = rng_for(spec.seed, 0xa77a);
    let profiles = (0..spec.n_fake(ds.n_users()))
        .map(|_| {
            let mut p = targets.clone();
            p.extend(index::sample(&mut rng, pool.len(), filler_count).into_iter().map(|k| pool[k]));
            p.sort_unstable();
            p
        })
        .collect();
    Ok(profiles)
}

/// A dataset with fake users appended after the genuine ones.
#[derive(Debug, Clone)]
pub struct PoisonedDataset {
    dataset: InteractionDataset,
    n_genuine: usize,
    spec: Option<AttackSpec>,
}

impl PoisonedDataset {
    /// Wraps a clean dataset; every user is genuine.
    pub fn clean(ds: InteractionDataset) -> Self {
        let n_genuine = ds.n_users();
        PoisonedDataset { dataset: ds, n_genuine, spec: None }
    }

    pub fn dataset(&self) -> &InteractionDataset {
        &self.dataset
    }

    pub fn into_dataset(self) -> InteractionDataset {
        self.dataset
    }

    pub fn n_genuine(&self) -> usize {
        self.n_genuine
    }

    pub fn fake_users(&self) -> Range<UserId> {
        self.n_genuine..self.dataset.n_users()
    }

    pub fn spec(&self) -> Option<&AttackSpec> {
        self.spec.as_ref()
    }

    /// Fake profiles, in dense ids.
    pub fn fake_profiles(&self) -> Vec<Vec<ItemId>> {
        self.fake_users().map(|u| self.dataset.train(u).to_vec()).collect()
    }

    /// Writes the fake profiles in the interaction-file format, original ids,
    /// under a `# fake` header line.
    pub fn write_profiles(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let res: std::io::Result<()> = (|| {
            writeln!(w, "# fake")?;
            let ds = &self.dataset;
            for u in self.fake_users() {
                write!(w, "{}", ds.user_ids()[u])?;
                for &i in ds.train(u) {
                    write!(w, " {}", ds.item_ids()[i])?;
                }
                writeln!(w)?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }
}

/// Appends `profiles` as train-only users.
///
/// Fake users get original ids counting up from one past the largest
/// genuine original id.
pub fn inject(ds: &InteractionDataset, profiles: &[Vec<ItemId>], spec: Option<AttackSpec>) -> Result<PoisonedDataset> {
    for p in profiles {
        if let Some(&i) = p.iter().find(|&&i| i >= ds.n_items()) {
            return Err(Error::OutOfRange { kind: "item", id: i, limit: ds.n_items() });
        }
    }
    let next = ds.user_ids().iter().max().map_or(0, |m| m + 1);
    let ids = (0..profiles.len() as u64).map(|k| next + k).collect();
    let dataset = ds.with_extra_train_users(profiles, ids)?;
    Ok(PoisonedDataset { dataset, n_genuine: ds.n_users(), spec })
}

/// Generates profiles for `spec` and injects them.
pub fn attack(ds: &InteractionDataset, spec: &AttackSpec) -> Result<PoisonedDataset> {
    let profiles = generate_profiles(ds, spec)?;
    inject(ds, &profiles, Some(spec.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> InteractionDataset {
        // Item popularity: 0 -> 4, 1 -> 3, 2 -> 2, 3 -> 1, 4..9 -> 0.
        let train = vec![vec![0, 1, 2, 3], vec![0, 1, 2], vec![0, 1], vec![0]];
        InteractionDataset::from_train(10, train).unwrap()
    }

    #[test]
    fn fake_count_rounds_with_floor_of_one() {
        let spec = AttackSpec { budget: 0.01, ..Default::default() };
        assert_eq!(spec.n_fake(200), 2);
        assert_eq!(spec.n_fake(500), 5);
        assert_eq!(spec.n_fake(10), 1);
    }

    #[test]
    fn zero_fillers_give_target_profiles() {
        let spec = AttackSpec { targets: vec![7, 5], filler_count: Some(0), budget: 0.5, ..Default::default() };
        let p = generate_profiles(&toy(), &spec).unwrap();
        assert_eq!(p, vec![vec![5, 7], vec![5, 7]]);
    }

    #[test]
    fn bandwagon_pool_can_be_forced() {
        // Top 30% of 10 items = {0, 1, 2}; target 2 leaves {0, 1}.
        let spec = AttackSpec {
            method: AttackMethod::Bandwagon,
            targets: vec![2],
            filler_count: Some(2),
            popular_fraction: 0.3,
            budget: 0.5,
            ..Default::default()
        };
        for p in generate_profiles(&toy(), &spec).unwrap() {
            assert_eq!(p, vec![0, 1, 2]);
        }
        let greedy = AttackSpec { filler_count: Some(3), ..spec };
        assert!(generate_profiles(&toy(), &greedy).is_err());
    }

    #[test]
    fn default_filler_count_tracks_mean_length() {
        // Mean length 2.5 rounds to 3 (half away from zero); one target.
        let spec = AttackSpec { targets: vec![9], ..Default::default() };
        assert_eq!(spec.resolved_filler_count(&toy()), 2);
    }

    #[test]
    fn cold_items() {
        assert_eq!(least_popular_items(&toy(), 2, 1), vec![3, 2]);
        assert_eq!(least_popular_items(&toy(), 2, 0), vec![4, 5]);
    }

    #[test]
    fn inject_rejects_bad_item() {
        assert!(inject(&toy(), &[vec![10]], None).is_err());
        let p = inject(&toy(), &[], None).unwrap();
        assert_eq!(p.dataset(), &toy());
    }
}
