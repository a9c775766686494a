//! Matrix-factorization embeddings, scoring and top-k ranking.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::math::{dot, norm, rng_for};
use crate::{ItemId, UserId};

const MAGIC: &[u8; 4] = b"PAMA";
const VERSION: u32 = 1;

/// User and item embedding tables, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    n_users: usize,
    n_items: usize,
    d: usize,
    user: Vec<f64>,
    item: Vec<f64>,
}

impl EmbeddingModel {
    /// All-zero model.
    pub fn zeros(n_users: usize, n_items: usize, d: usize) -> Self {
        EmbeddingModel {
            n_users,
            n_items,
            d,
            user: vec![0.0; n_users * d],
            item: vec![0.0; n_items * d],
        }
    }

    /// Entries drawn i.i.d. from `Normal(0, scale^2)`.
    pub fn init(n_users: usize, n_items: usize, d: usize, seed: u64, scale: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("init scale must be positive, got {scale}")));
        }
        let normal = Normal::new(0.0, scale).expect("checked scale");
        let mut rng = rng_for(seed, 0x1a17);
        let mut m = Self::zeros(n_users, n_items, d);
        for x in m.user.iter_mut().chain(m.item.iter_mut()) {
            *x = normal.sample(&mut rng);
        }
        Ok(m)
    }

    /// Builds a model from explicit row-major tables.
    pub fn from_rows(n_users: usize, n_items: usize, d: usize, user: Vec<f64>, item: Vec<f64>) -> Result<Self> {
        if user.len() != n_users * d || item.len() != n_items * d {
            return Err(Error::Data("embedding tables do not match the stated shape".into()));
        }
        let m = EmbeddingModel { n_users, n_items, d, user, item };
        m.check_finite()?;
        Ok(m)
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn user(&self, u: UserId) -> &[f64] {
        &self.user[u * self.d..(u + 1) * self.d]
    }

    pub fn item(&self, i: ItemId) -> &[f64] {
        &self.item[i * self.d..(i + 1) * self.d]
    }

    pub fn user_mut(&mut self, u: UserId) -> &mut [f64] {
        &mut self.user[u * self.d..(u + 1) * self.d]
    }

    pub fn item_mut(&mut self, i: ItemId) -> &mut [f64] {
        &mut self.item[i * self.d..(i + 1) * self.d]
    }

    pub fn user_table(&self) -> &[f64] {
        &self.user
    }

    pub fn item_table(&self) -> &[f64] {
        &self.item
    }

    /// `<U_u, V_i>` with range checks.
    pub fn score(&self, u: UserId, i: ItemId) -> Result<f64> {
        self.check_user(u)?;
        self.check_item(i)?;
        Ok(dot(self.user(u), self.item(i)))
    }

    pub fn check_user(&self, u: UserId) -> Result<()> {
        if u >= self.n_users {
            return Err(Error::OutOfRange { kind: "user", id: u, limit: self.n_users });
        }
        Ok(())
    }

    pub fn check_item(&self, i: ItemId) -> Result<()> {
        if i >= self.n_items {
            return Err(Error::OutOfRange { kind: "item", id: i, limit: self.n_items });
        }
        Ok(())
    }

    /// Scores of every item for user `u`.
    pub fn scores(&self, u: UserId) -> Vec<f64> {
        let uu = self.user(u);
        (0..self.n_items).map(|i| dot(uu, self.item(i))).collect()
    }

    pub fn user_norm(&self, u: UserId) -> f64 {
        norm(self.user(u))
    }

    pub fn mean_user_norm(&self) -> f64 {
        if self.n_users == 0 {
            return 0.0;
        }
        (0..self.n_users).map(|u| self.user_norm(u)).sum::<f64>() / self.n_users as f64
    }

    /// The `k` best items for `u` among those outside `train(u)`, best first.
    /// Equal scores are ordered by item id.
    pub fn recommend_top_k(&self, ds: &InteractionDataset, u: UserId, k: usize) -> Vec<ItemId> {
        top_k_excluding(&self.scores(u), ds.train(u), k)
    }

    /// Top-k lists for the first `n_users` users, computed in parallel.
    pub fn recommend_all(&self, ds: &InteractionDataset, n_users: usize, k: usize) -> Vec<Vec<ItemId>> {
        use rayon::prelude::*;
        (0..n_users)
            .into_par_iter()
            .map(|u| self.recommend_top_k(ds, u, k))
            .collect()
    }

    /// Appends user rows (row-major, `d` values each).
    pub fn append_users(&mut self, rows: &[f64]) -> Result<()> {
        if rows.len() % self.d != 0 {
            return Err(Error::Data("appended rows do not match the embedding width".into()));
        }
        self.user.extend_from_slice(rows);
        self.n_users += rows.len() / self.d;
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(p) = self.user.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite entry in user {}", p / self.d.max(1))));
        }
        if let Some(p) = self.item.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite entry in item {}", p / self.d.max(1))));
        }
        Ok(())
    }

    /// Rounds every entry to the nearest `f32`, the on-disk precision.
    pub fn to_f32_precision(&self) -> Self {
        let round = |v: &[f64]| v.iter().map(|&x| x as f32 as f64).collect();
        EmbeddingModel {
            user: round(&self.user),
            item: round(&self.item),
            ..*self
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for x in [VERSION, self.n_users as u32, self.n_items as u32, self.d as u32] {
            w.write_all(&x.to_le_bytes())?;
        }
        for &x in self.user.iter().chain(&self.item) {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
        w.flush()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::ModelFormat(format!("read failed: {e}")))?;
        if bytes.len() < 20 {
            return Err(Error::ModelFormat("file truncated in header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::ModelFormat(format!(
                "bad magic bytes {:?}, expected \"PAMA\"",
                String::from_utf8_lossy(&bytes[..4])
            )));
        }
        let field = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
        let version = field(0);
        if version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}, expected {VERSION}")));
        }
        let (n_users, n_items, d) = (field(1) as usize, field(2) as usize, field(3) as usize);
        if d == 0 {
            return Err(Error::ModelFormat("embedding dimension is zero".into()));
        }
        let n_values = (n_users + n_items)
            .checked_mul(d)
            .ok_or_else(|| Error::ModelFormat("dimensions overflow".into()))?;
        let body = &bytes[20..];
        if body.len() != n_values * 4 {
            return Err(Error::ModelFormat(format!(
                "expected {} payload bytes, found {}",
                n_values * 4,
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let (user, item) = values.split_at(n_users * d);
        Self::from_rows(n_users, n_items, d, user.to_vec(), item.to_vec())
    }
}

/// Indices of the `k` largest scores outside the sorted `excluded` list.
pub fn top_k_excluding(scores: &[f64], excluded: &[ItemId], k: usize) -> Vec<ItemId> {
    let mut cand: Vec<ItemId> = (0..scores.len())
        .filter(|i| excluded.binary_search(i).is_err())
        .collect();
    let order = |a: &ItemId, b: &ItemId| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, order);
        cand.truncate(k);
    }
    cand.sort_unstable_by(order);
    cand
}
