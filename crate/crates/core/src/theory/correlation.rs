//! Correlation between a user's embedding norm and the largest perturbation
//! magnitude that user tolerates.
//!
//! For each user the threshold is the largest grid magnitude `ε` such that
//! the user's outcome at every grid point up to `ε` is no worse than at
//! `ε = 0`. The report holds the norms, the thresholds and their Spearman
//! rank correlation.
//!
//! Two labs are provided. The Gaussian lab perturbs a single user of the
//! Gaussian system for one epoch after `t` standard epochs and counts, over
//! Monte-Carlo replicates of the initial item, how often that user's
//! preference is wrong. The replicates are shared by every user and every
//! `ε`. The matrix-factorisation lab takes one gradient step on a user's
//! training triples and measures the user's NDCG@k on the test split.

use rayon::prelude::*;
use serde::Serialize;

use super::estimate::{Reduced, REPLICATE_STREAM};
use super::system::{gauss, init_system, GaussianConfig};
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::math::{norm, rng_for, spearman};
use crate::model::EmbeddingModel;
use crate::metrics::ndcg_at_k;
use crate::train::{apply_gradient, triple_step, BatchGradient, BprTriple, TrainConfig};
use crate::UserId;

/// Fewest users for which a rank correlation is reported.
pub const MIN_USERS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    /// Magnitudes tried, ascending, starting at 0.
    pub grid: Vec<f64>,
    pub norms: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// `None` when either column is constant.
    pub spearman: Option<f64>,
}

impl CorrelationReport {
    /// True when every threshold is the same, e.g. a grid holding only 0.
    pub fn degenerate(&self) -> bool {
        self.thresholds.windows(2).all(|w| w[0] == w[1])
    }
}

/// Largest `grid[i]` such that `outcome[0..=i]` are all `<= outcome[0]`.
/// `grid[0]` must be the unperturbed baseline.
pub fn tolerance_threshold<T: PartialOrd>(grid: &[f64], outcome: &[T]) -> f64 {
    let mut best = grid[0];
    for (g, o) in grid.iter().zip(outcome) {
        if *o > outcome[0] {
            break;
        }
        best = *g;
    }
    best
}

/// Normalises a grid: sorted, deduplicated, with 0 first.
fn prepare_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::Config("magnitude grid must be finite and non-negative".into()));
    }
    let mut g = grid.to_vec();
    g.push(0.0);
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

fn report(grid: Vec<f64>, norms: Vec<f64>, thresholds: Vec<f64>) -> CorrelationReport {
    let spearman = spearman(&norms, &thresholds);
    CorrelationReport { grid, norms, thresholds, spearman }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLabConfig {
    pub system: GaussianConfig,
    /// Users of the system (from index 0) whose thresholds are measured.
    pub users: usize,
    pub grid_points: usize,
    /// Largest magnitude tried; by default three times the largest
    /// `‖u(t)‖/(ηλ)` among the measured users.
    pub grid_max: Option<f64>,
}

impl Default for GaussianLabConfig {
    fn default() -> Self {
        GaussianLabConfig {
            system: GaussianConfig {
                n: 500,
                d: 8,
                sigma: 0.05,
                eta: 0.01,
                lambda: 1.0,
                pretrain_epochs: 2,
                adv_epochs: 1,
                mc_samples: 2000,
                ..GaussianConfig::default()
            },
            users: 30,
            grid_points: 300,
            grid_max: None,
        }
    }
}

/// One adversarial epoch in which only the probe is perturbed.
fn single_user_error(s: &Reduced, eta: f64, lambda: f64, eps: f64) -> bool {
    let (un, vn) = (norm(&s.u), norm(&s.v));
    let su = if un > 0.0 { 1.0 - eta * lambda * eps / un } else { 1.0 };
    let sv = if vn > 0.0 { eta * lambda * eps / vn } else { 0.0 };
    let gain = eta * (1.0 + lambda);
    let mut margin = 0.0;
    for k in 0..s.v.len() {
        let u = su * s.u[k] + gain * s.r * s.v[k];
        let v = s.v[k] + eta * s.s[k] + eta * lambda * s.r * s.u[k] - sv * s.v[k];
        margin += u * v;
    }
    s.r * margin <= 0.0
}

/// Gaussian-system lab with the given magnitude grid.
pub fn epsilon_norm_correlation_with_grid(cfg: &GaussianLabConfig, grid: &[f64]) -> Result<CorrelationReport> {
    let sys = &cfg.system;
    sys.validate()?;
    if cfg.users < MIN_USERS || cfg.users > sys.n {
        return Err(Error::Config(format!("users must lie in {MIN_USERS}..={}", sys.n)));
    }
    let grid = prepare_grid(grid)?;
    let state = init_system(sys)?;
    let u_bar = sys.u_bar();
    let n = sys.n as f64;
    let item_sd = sys.sigma / (n - 1.0).sqrt();

    let mut norms = Vec::with_capacity(cfg.users);
    let mut thresholds = Vec::with_capacity(cfg.users);
    for p in 0..cfg.users {
        let probe_u = state.user(p).to_vec();
        let r = state.rating(p);
        let counts = (0..sys.mc_samples as u64)
            .into_par_iter()
            .map(|idx| {
                let mut rng = rng_for(sys.seed, REPLICATE_STREAM + idx);
                let v0: Vec<f64> = u_bar.iter().map(|m| m + item_sd * gauss(&mut rng)).collect();
                let mut s = Reduced {
                    u: probe_u.clone(),
                    r,
                    s: v0.iter().map(|x| n * x).collect(),
                    v: v0,
                    n_total: n,
                };
                for _ in 0..sys.pretrain_epochs {
                    s.standard(sys.eta);
                }
                grid.iter()
                    .map(|&e| single_user_error(&s, sys.eta, sys.lambda, e) as u64)
                    .collect::<Vec<u64>>()
            })
            .reduce(
                || vec![0; grid.len()],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        *x += y;
                    }
                    a
                },
            );
        norms.push(mean_norm_after(sys, &probe_u, r));
        thresholds.push(tolerance_threshold(&grid, &counts));
    }
    Ok(report(grid, norms, thresholds))
}

/// `‖u(t)‖` of a user when the initial item takes its mean value.
fn mean_norm_after(sys: &GaussianConfig, u: &[f64], r: f64) -> f64 {
    let v0 = sys.u_bar();
    let mut s = Reduced {
        u: u.to_vec(),
        r,
        s: v0.iter().map(|x| sys.n as f64 * x).collect(),
        v: v0,
        n_total: sys.n as f64,
    };
    for _ in 0..sys.pretrain_epochs {
        s.standard(sys.eta);
    }
    norm(&s.u)
}

/// Gaussian-system lab on an evenly spaced grid.
pub fn epsilon_norm_correlation(cfg: &GaussianLabConfig) -> Result<CorrelationReport> {
    let sys = &cfg.system;
    sys.validate()?;
    if sys.lambda <= 0.0 || sys.eta <= 0.0 {
        return Err(Error::Config("the lab needs positive eta and lambda".into()));
    }
    let max = match cfg.grid_max {
        Some(m) => m,
        None => {
            let state = init_system(sys)?;
            let top = (0..cfg.users.min(sys.n))
                .map(|p| mean_norm_after(sys, state.user(p), state.rating(p)))
                .fold(0.0, f64::max);
            3.0 * top / (sys.eta * sys.lambda)
        }
    };
    let pts = cfg.grid_points.max(1);
    let grid: Vec<f64> = (0..=pts).map(|i| max * i as f64 / pts as f64).collect();
    epsilon_norm_correlation_with_grid(cfg, &grid)
}

/// Matrix-factorisation lab.
///
/// For each user, one step of size `cfg.eta` is taken on the user's
/// training triples with every perturbation at magnitude `ε`; the outcome is
/// the user's NDCG@k on the test split. Negatives come from
/// `rng_for(seed, u)` and are shared across the grid. Users without test
/// items are skipped.
pub fn mf_epsilon_norm_correlation(
    m: &EmbeddingModel,
    ds: &InteractionDataset,
    cfg: &TrainConfig,
    users: &[UserId],
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<CorrelationReport> {
    if users.len() < MIN_USERS {
        return Err(Error::Config(format!("need at least {MIN_USERS} users")));
    }
    let grid = prepare_grid(grid)?;
    let mut norms = Vec::new();
    let mut thresholds = Vec::new();
    for &u in users {
        m.check_user(u)?;
        if ds.test(u).is_empty() || ds.train(u).is_empty() {
            continue;
        }
        let mut rng = rng_for(seed, u as u64);
        let mut pick = |i| ds.sample_negative(u, &mut rng).map(|j| BprTriple::new(u, i, j));
        let train: Vec<BprTriple> = ds.train(u).iter().map(|&i| pick(i)).collect::<Result<_>>()?;

        let losses = grid
            .iter()
            .map(|&eps| {
                let mut g = BatchGradient::default();
                let scale = 1.0 / train.len() as f64;
                for &t in &train {
                    let step = triple_step(m, t, cfg.lambda != 0.0, cfg.lambda, eps);
                    add(&mut g.users, t.u, &step.grad.user, scale);
                    add(&mut g.items, t.i, &step.grad.pos, scale);
                    add(&mut g.items, t.j, &step.grad.neg, scale);
                }
                let mut after = m.clone();
                apply_gradient(&mut after, &g, cfg.eta, cfg.weight_decay)?;
                let recs = [after.recommend_top_k(ds, u, k)];
                // Negated so that a larger value is worse.
                Ok(-ndcg_at_k(&recs, &[ds.test(u).to_vec()], k)?)
            })
            .collect::<Result<Vec<f64>>>()?;
        norms.push(norm(m.user(u)));
        thresholds.push(tolerance_threshold(&grid, &losses));
    }
    if norms.is_empty() {
        return Err(Error::Data("no selected user has both training and test items".into()));
    }
    Ok(report(grid, norms, thresholds))
}

fn add(map: &mut std::collections::BTreeMap<usize, Vec<f64>>, key: usize, g: &[f64], scale: f64) {
    let row = map.entry(key).or_insert_with(|| vec![0.0; g.len()]);
    for (r, x) in row.iter_mut().zip(g) {
        *r += scale * x;
    }
}
