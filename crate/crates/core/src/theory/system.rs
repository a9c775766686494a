//! The Gaussian single-item recommender system.
//!
//! `n` users with ratings `r_i ∈ {±1}` hold embeddings drawn from
//! `N(r_i ū, σ² I)`; the single item starts at the rating-weighted mean of
//! the users. Training is full-batch gradient descent on the linear loss
//! `−Σ r ⟨u, v⟩`, with every embedding updated simultaneously from its
//! pre-epoch value.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, norm, rng_for, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianConfig {
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    /// `‖ū‖`; the direction of `ū` is drawn from the seed.
    pub u_bar_norm: f64,
    pub eta: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub pretrain_epochs: usize,
    pub adv_epochs: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        GaussianConfig {
            d: 8,
            n: 200,
            sigma: 0.02,
            u_bar_norm: 1.0,
            eta: 0.01,
            lambda: 1.0,
            epsilon: 0.0,
            pretrain_epochs: 5,
            adv_epochs: 3,
            mc_samples: 20_000,
            seed: 0,
        }
    }
}

impl GaussianConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d == 0 {
            return bad("d must be at least 1");
        }
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be non-negative");
        }
        if !(self.u_bar_norm > 0.0 && self.u_bar_norm.is_finite()) {
            return bad("u_bar_norm must be positive");
        }
        if !(self.eta >= 0.0 && self.lambda >= 0.0 && self.epsilon >= 0.0) {
            return bad("eta, lambda and epsilon must be non-negative");
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1");
        }
        Ok(())
    }

    /// `ū`: a seeded uniformly random direction scaled to `u_bar_norm`.
    pub fn u_bar(&self) -> Vec<f64> {
        let mut rng = rng_for(self.seed, 0xba5e);
        loop {
            let z: Vec<f64> = (0..self.d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let zn = norm(&z);
            if zn > 1e-8 {
                return z.iter().map(|x| self.u_bar_norm * x / zn).collect();
            }
        }
    }
}

/// Full state of the system.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    d: usize,
    /// Row-major user embeddings, genuine users first, then fakes.
    users: Vec<f64>,
    ratings: Vec<f64>,
    item: Vec<f64>,
    n_genuine: usize,
    probe: usize,
    epoch: usize,
}

impl GaussianState {
    /// State from explicit embeddings; the item is the rating-weighted mean.
    pub fn from_users(d: usize, users: Vec<f64>, ratings: Vec<f64>) -> Result<Self> {
        if d == 0 || users.len() != ratings.len() * d || ratings.is_empty() {
            return Err(Error::Config("user table does not match ratings".into()));
        }
        if ratings.iter().any(|&r| r != 1.0 && r != -1.0) {
            return Err(Error::Config("ratings must be +1 or -1".into()));
        }
        let n = ratings.len();
        let mut s = GaussianState {
            d,
            users,
            ratings,
            item: vec![0.0; d],
            n_genuine: n,
            probe: 0,
            epoch: 0,
        };
        s.item = s.weighted_sum().iter().map(|x| x / n as f64).collect();
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_users(&self) -> usize {
        self.ratings.len()
    }

    pub fn n_genuine(&self) -> usize {
        self.n_genuine
    }

    pub fn user(&self, i: usize) -> &[f64] {
        &self.users[i * self.d..(i + 1) * self.d]
    }

    pub fn rating(&self, i: usize) -> f64 {
        self.ratings[i]
    }

    pub fn item(&self) -> &[f64] {
        &self.item
    }

    pub fn probe(&self) -> usize {
        self.probe
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// `Σ r_i u_i` over every user, fakes included.
    pub fn weighted_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.d];
        for (u, &r) in self.users.chunks_exact(self.d).zip(&self.ratings) {
            for (a, x) in s.iter_mut().zip(u) {
                *a += r * x;
            }
        }
        s
    }

    /// Whether the probe's prediction disagrees with its rating.
    pub fn probe_error(&self) -> bool {
        preference(self.user(self.probe), &self.item) != self.ratings[self.probe] as i8
    }
}

/// `+1` when `⟨u, v⟩ > 0`, else `−1`.
pub fn preference(u: &[f64], v: &[f64]) -> i8 {
    if dot(u, v) > 0.0 {
        1
    } else {
        -1
    }
}

/// Draws ratings, user embeddings and the initial item; user 0 is the probe.
pub fn init_system(cfg: &GaussianConfig) -> Result<GaussianState> {
    cfg.validate()?;
    let u_bar = cfg.u_bar();
    let mut rng = rng_for(cfg.seed, 0x1);
    let mut users = Vec::with_capacity(cfg.n * cfg.d);
    let mut ratings = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let r = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        ratings.push(r);
        users.extend(u_bar.iter().map(|&m| r * m + cfg.sigma * gauss(&mut rng)));
    }
    GaussianState::from_users(cfg.d, users, ratings)
}

pub(crate) fn gauss(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `u_i ← u_i + η r_i v`, `v ← v + η Σ r_i u_i`.
pub fn standard_epoch(state: &mut GaussianState, eta: f64) {
    let sum = state.weighted_sum();
    let d = state.d;
    for (u, &r) in state.users.chunks_exact_mut(d).zip(&state.ratings) {
        for (x, v) in u.iter_mut().zip(&state.item) {
            *x += eta * r * v;
        }
    }
    for (v, s) in state.item.iter_mut().zip(&sum) {
        *v += eta * s;
    }
    state.epoch += 1;
}

/// `u_i ← (1 − ηλε/‖u_i‖) u_i + η(1+λ) r_i v` and
/// `v ← v + η(1+λ) Σ r_i u_i − (Nηλε/‖v‖) v`, where `N` counts every user.
pub fn adversarial_epoch(state: &mut GaussianState, eta: f64, lambda: f64, epsilon: f64) -> Result<()> {
    if lambda == 0.0 {
        standard_epoch(state, eta);
        return Ok(());
    }
    let d = state.d;
    let vn = norm(&state.item);
    if vn == 0.0 {
        return Err(Error::Numerical("item embedding has zero norm".into()));
    }
    if let Some(i) = state.users.chunks_exact(d).position(|u| norm(u) == 0.0) {
        return Err(Error::Numerical(format!("user {i} embedding has zero norm")));
    }
    let sum = state.weighted_sum();
    let n = state.n_users() as f64;
    let gain = eta * (1.0 + lambda);
    for (u, &r) in state.users.chunks_exact_mut(d).zip(&state.ratings) {
        let shrink = 1.0 - eta * lambda * epsilon / norm(u);
        for (x, v) in u.iter_mut().zip(&state.item) {
            *x = shrink * *x + gain * r * v;
        }
    }
    let item_shrink = 1.0 - n * eta * lambda * epsilon / vn;
    for (v, s) in state.item.iter_mut().zip(&sum) {
        *v = item_shrink * *v + gain * s;
    }
    state.epoch += 1;
    Ok(())
}

/// `(a(k), b(k), c(k))` of the cumulative scaling recurrences, `k ≥ 1`.
pub fn abc(k: usize, eta: f64, n: usize) -> (f64, f64, f64) {
    assert!(k >= 1, "recurrence starts at k = 1");
    let ne = n as f64 * eta;
    let (mut a, mut b, mut c) = (1.0, ne, ne * eta);
    for _ in 1..k {
        (a, b, c) = (a + c, ne * a + b, ne * eta * a + c);
    }
    (a, b, c)
}

/// `M(t, η)` with `v(t) = M(t, η) v(0)` under standard training.
/// `M(0, η) = 1`.
pub fn transform_factor(t: usize, eta: f64, n: usize) -> f64 {
    match t {
        0 => 1.0,
        1 => 1.0 + n as f64 * eta,
        _ => {
            let (a, b, c) = abc(t - 1, eta, n);
            (1.0 + n as f64 * eta) * a + b + c
        }
    }
}

/// Relative tolerance of the collinearity check in [`item_scale_factor`].
pub const COLLINEARITY_TOL: f64 = 1e-8;

/// `s` with `v(t) = s·v0`, checking that the two are collinear.
pub fn item_scale_factor(v: &[f64], v0: &[f64]) -> Result<f64> {
    let v0n2 = dot(v0, v0);
    if v0n2 == 0.0 {
        return Err(Error::Numerical("reference item embedding has zero norm".into()));
    }
    let s = dot(v, v0) / v0n2;
    let resid: Vec<f64> = v.iter().zip(v0).map(|(a, b)| a - s * b).collect();
    if norm(&resid) > COLLINEARITY_TOL * norm(v) {
        return Err(Error::Numerical(format!(
            "item embedding is not collinear with its initial value (residual {:.3e})",
            norm(&resid)
        )));
    }
    Ok(s)
}

/// Fake users for the poisoned system.
#[derive(Debug, Clone, PartialEq)]
pub struct PoisonSpec {
    pub alpha: f64,
    /// Row-major fake embeddings.
    pub fakes: Vec<f64>,
    pub ratings: Vec<f64>,
}

impl PoisonSpec {
    pub fn n_prime(&self) -> usize {
        self.ratings.len()
    }

    /// `n′` fakes with entries uniform on `[−α, α]` and rating `rating`.
    pub fn uniform(n_prime: usize, d: usize, alpha: f64, rating: f64, rng: &mut Rng) -> Self {
        let fakes = (0..n_prime * d)
            .map(|_| if alpha > 0.0 { rng.random_range(-alpha..=alpha) } else { 0.0 })
            .collect();
        PoisonSpec { alpha, fakes, ratings: vec![rating; n_prime] }
    }
}

/// Appends fakes and resets the item to `(Σ r u + Σ r′ u′)/(n + n′)`.
pub fn inject_poison(state: &GaussianState, spec: &PoisonSpec) -> Result<GaussianState> {
    let d = state.d;
    if spec.fakes.len() != spec.n_prime() * d {
        return Err(Error::Config("fake embeddings do not match the dimension".into()));
    }
    if let Some(x) = spec.fakes.iter().find(|x| x.abs() > spec.alpha) {
        return Err(Error::Config(format!(
            "fake entry {x} exceeds the infinity-norm bound {}",
            spec.alpha
        )));
    }
    let mut users = state.users.clone();
    users.extend_from_slice(&spec.fakes);
    let mut ratings = state.ratings.clone();
    ratings.extend_from_slice(&spec.ratings);
    let mut out = GaussianState::from_users(d, users, ratings)?;
    out.n_genuine = state.n_genuine;
    out.probe = state.probe;
    out.epoch = state.epoch;
    Ok(out)
}
