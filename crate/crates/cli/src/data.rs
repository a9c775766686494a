//! Loading experiment data: either a raw interaction file, which is
//! filtered and split here, or a directory written by `attack`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use pamacf::attack::{attack, inject, least_popular_items, AttackSpec, PoisonedDataset};
use pamacf::dataset::{load_interactions, read_records, InteractionDataset, Split};
use pamacf::{Error, ItemId, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// How many targets are chosen when none are given.
pub const AUTO_TARGETS: usize = 5;

pub const TRAIN_FILE: &str = "train.txt";
pub const VALIDATION_FILE: &str = "validation.txt";
pub const TEST_FILE: &str = "test.txt";
pub const FAKE_FILE: &str = "fake.txt";
pub const ATTACK_FILE: &str = "attack.json";
pub const ITEM_MAP: &str = "item_map.csv";
pub const USER_MAP: &str = "user_map.csv";

/// Attack record stored next to a poisoned dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub spec: AttackSpec,
    pub target_ids: Vec<u64>,
    pub auto_targets: bool,
    pub n_genuine: usize,
    pub n_fake: usize,
    pub filler_count: usize,
}

pub struct Prepared {
    pub data: PoisonedDataset,
    /// Dense ids of the targets, if any.
    pub targets: Option<Vec<ItemId>>,
    pub provenance: Option<Provenance>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let path = cfg.data.as_deref().ok_or_else(|| Error::Config("no dataset given (--data)".into()))?;
    let explicit = (!cfg.targets.is_empty()).then(|| cfg.targets.clone());
    if path.is_dir() {
        let (data, provenance) = load_prepared(path)?;
        if cfg.attack.is_some() {
            return Err(Error::Config(format!("{} already carries an attack", path.display())));
        }
        let targets = match (explicit, &provenance) {
            (Some(t), _) => Some(resolve(data.dataset(), &t)?),
            (None, Some(p)) => Some(p.spec.targets.clone()),
            (None, None) => None,
        };
        return Ok(Prepared { data, targets, provenance });
    }

    let raw = load_interactions(path)?;
    let ds = raw.filter_min_interactions(cfg.split.min_interactions)?.split(&cfg.split)?;
    let explicit = explicit.map(|t| resolve(&ds, &t)).transpose()?;
    let Some(spec) = &cfg.attack else {
        return Ok(Prepared { data: PoisonedDataset::clean(ds), targets: explicit, provenance: None });
    };
    let auto = explicit.is_none();
    let targets = match explicit {
        Some(t) => t,
        None => {
            let t = least_popular_items(&ds, AUTO_TARGETS, cfg.target_min_popularity);
            let ids: Vec<u64> = t.iter().map(|&i| ds.item_ids()[i]).collect();
            eprintln!("auto-selected targets (original ids): {ids:?}");
            t
        }
    };
    let spec = AttackSpec { targets: targets.clone(), ..spec.clone() };
    let data = attack(&ds, &spec)?;
    let provenance = Provenance {
        target_ids: targets.iter().map(|&i| ds.item_ids()[i]).collect(),
        auto_targets: auto,
        n_genuine: data.n_genuine(),
        n_fake: data.fake_users().len(),
        filler_count: spec.resolved_filler_count(&ds),
        spec,
    };
    Ok(Prepared { data, targets: Some(targets), provenance: Some(provenance) })
}

fn resolve(ds: &InteractionDataset, ids: &[u64]) -> Result<Vec<ItemId>> {
    ids.iter()
        .map(|&id| ds.dense_item(id).ok_or_else(|| Error::Data(format!("target item {id} is not in the dataset"))))
        .collect()
}

/// Writes the three splits, the id maps and, for poisoned data, the fake
/// profiles and the attack record.
pub fn save_prepared(dir: &Path, p: &Prepared) -> Result<()> {
    let ds = p.data.dataset();
    ds.write_split(&dir.join(TRAIN_FILE), Split::Train)?;
    ds.write_split(&dir.join(VALIDATION_FILE), Split::Validation)?;
    ds.write_split(&dir.join(TEST_FILE), Split::Test)?;
    write_maps(dir, ds)?;
    if let Some(prov) = &p.provenance {
        p.data.write_profiles(&dir.join(FAKE_FILE))?;
        let json = serde_json::to_string_pretty(prov).expect("provenance serialises");
        let path = dir.join(ATTACK_FILE);
        fs::write(&path, json + "\n").map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(())
}

pub fn write_maps(dir: &Path, ds: &InteractionDataset) -> Result<()> {
    ds.write_id_map(&dir.join(ITEM_MAP), false)?;
    ds.write_id_map(&dir.join(USER_MAP), true)
}

fn read_map(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut ids = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::Parse { path: path.to_path_buf(), line: n + 1, message: format!("bad map row {line:?}") };
        let (orig, dense) = line.split_once(',').ok_or_else(bad)?;
        let (orig, dense): (u64, usize) = (orig.parse().map_err(|_| bad())?, dense.parse().map_err(|_| bad())?);
        if dense != ids.len() {
            return Err(bad());
        }
        ids.push(orig);
    }
    Ok(ids)
}

fn load_prepared(dir: &Path) -> Result<(PoisonedDataset, Option<Provenance>)> {
    let item_ids = read_map(&dir.join(ITEM_MAP))?;
    let user_ids = read_map(&dir.join(USER_MAP))?;
    let items: HashMap<u64, ItemId> = item_ids.iter().enumerate().map(|(d, &o)| (o, d)).collect();
    let users: HashMap<u64, usize> = user_ids.iter().enumerate().map(|(d, &o)| (o, d)).collect();

    let read = |name: &str| -> Result<Vec<Vec<ItemId>>> {
        let path = dir.join(name);
        let mut lists = vec![Vec::new(); user_ids.len()];
        for (u, its) in read_records(&path)? {
            let u = *users.get(&u).ok_or_else(|| Error::Data(format!("{}: unknown user {u}", path.display())))?;
            for i in its {
                let i = *items.get(&i).ok_or_else(|| Error::Data(format!("{}: unknown item {i}", path.display())))?;
                lists[u].push(i);
            }
        }
        Ok(lists)
    };
    let mut train = read(TRAIN_FILE)?;
    let mut validation = read(VALIDATION_FILE)?;
    let mut test = read(TEST_FILE)?;

    let prov_path = dir.join(ATTACK_FILE);
    let provenance: Option<Provenance> =
        if prov_path.exists() { Some(crate::config::load_json(&prov_path)?) } else { None };
    let n_genuine = provenance.as_ref().map_or(user_ids.len(), |p| p.n_genuine);
    if n_genuine > user_ids.len() {
        return Err(Error::Data(format!("{}: more genuine users than users", prov_path.display())));
    }
    let fakes = train.split_off(n_genuine);
    validation.truncate(n_genuine);
    test.truncate(n_genuine);
    let genuine = InteractionDataset::from_parts(
        item_ids.len(),
        train,
        validation,
        test,
        user_ids[..n_genuine].to_vec(),
        item_ids,
    )?;
    let data = match &provenance {
        Some(p) => inject(&genuine, &fakes, Some(p.spec.clone()))?,
        None => PoisonedDataset::clean(genuine),
    };
    Ok((data, provenance))
}
