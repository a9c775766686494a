//! BPR training with optional adversarial perturbations.
//!
//! Three modes share one engine:
//!
//! - `Standard`: plain BPR.
//! - `Apr`: BPR plus `λ·L(Θ+Δ)` where every perturbation has norm `ε`.
//! - `Pamacf`: as APR, but user `u` gets magnitude `ρ·c(u,t)` where
//!   `c(u,t) = sigmoid((‖U_u‖ − mean)/mean)` and `mean` is the average user
//!   norm at the start of epoch `t`.
//!
//! Perturbations are one gradient-direction step computed from the current
//! parameters and held constant when differentiating the adversarial term.
//! Updates within a batch are simultaneous: every triple sees the parameters
//! from before the batch.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::math::{dot, neg_log_sigmoid, norm, rng_for, sigmoid};
use crate::model::EmbeddingModel;
use crate::{ItemId, UserId};

/// Gradients with a smaller norm are treated as zero when normalising.
pub const GRAD_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Standard,
    Apr,
    Pamacf,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "mf" | "bpr" => Ok(TrainMode::Standard),
            "apr" => Ok(TrainMode::Apr),
            "pamacf" => Ok(TrainMode::Pamacf),
            other => Err(Error::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub eta: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub weight_decay: f64,
    pub pretrain_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Standard,
            eta: 0.05,
            lambda: 1.0,
            epsilon: 0.5,
            rho: 0.5,
            weight_decay: 1e-4,
            pretrain_epochs: 0,
            total_epochs: 30,
            batch_size: 256,
            dim: 32,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("epsilon", self.epsilon),
            ("rho", self.rho),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.total_epochs < self.pretrain_epochs {
            return bad("total_epochs must be at least pretrain_epochs".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        Ok(())
    }

    /// Whether the adversarial term contributes during `epoch`.
    pub fn adversarial_at(&self, epoch: usize) -> bool {
        self.mode != TrainMode::Standard && epoch >= self.pretrain_epochs && self.lambda != 0.0
    }

    pub fn phase_at(&self, epoch: usize) -> Phase {
        match self.mode {
            TrainMode::Standard => Phase::Standard,
            _ if epoch < self.pretrain_epochs => Phase::Pretrain,
            _ => Phase::Adversarial,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Standard,
    Pretrain,
    Adversarial,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Standard => "standard",
            Phase::Pretrain => "pretrain",
            Phase::Adversarial => "adversarial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriple {
    pub u: UserId,
    pub i: ItemId,
    pub j: ItemId,
}

impl BprTriple {
    pub fn new(u: UserId, i: ItemId, j: ItemId) -> Self {
        BprTriple { u, i, j }
    }
}

/// Gradients of one triple's loss with respect to `(U_u, V_i, V_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGrad {
    pub user: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

fn margin(u: &[f64], vi: &[f64], vj: &[f64]) -> f64 {
    dot(u, vi) - dot(u, vj)
}

pub fn bpr_loss(m: &EmbeddingModel, t: BprTriple) -> f64 {
    neg_log_sigmoid(margin(m.user(t.u), m.item(t.i), m.item(t.j)))
}

pub fn bpr_grad(m: &EmbeddingModel, t: BprTriple) -> TripleGrad {
    grad_at(m.user(t.u), m.item(t.i), m.item(t.j))
}

fn grad_at(u: &[f64], vi: &[f64], vj: &[f64]) -> TripleGrad {
    let s = sigmoid(-margin(u, vi, vj));
    TripleGrad {
        user: vi.iter().zip(vj).map(|(a, b)| -s * (a - b)).collect(),
        pos: u.iter().map(|x| -s * x).collect(),
        neg: u.iter().map(|x| s * x).collect(),
    }
}

/// `sigmoid((norm − mean)/mean)`.
pub fn pama_coefficient(user_norm: f64, mean_norm: f64) -> Result<f64> {
    if !(mean_norm > 0.0) {
        return Err(Error::Numerical("degenerate embeddings: mean user norm is zero".into()));
    }
    Ok(sigmoid((user_norm - mean_norm) / mean_norm))
}

fn scaled_direction(g: &[f64], magnitude: f64) -> Vec<f64> {
    let n = norm(g);
    if n < GRAD_NORM_FLOOR || magnitude == 0.0 {
        return vec![0.0; g.len()];
    }
    g.iter().map(|x| magnitude * x / n).collect()
}

/// Loss-ascent perturbations of norm `magnitude` for `(U_u, V_i, V_j)`.
pub fn adversarial_perturbation(m: &EmbeddingModel, t: BprTriple, magnitude: f64) -> TripleGrad {
    perturbation_from(&bpr_grad(m, t), magnitude)
}

fn perturbation_from(g: &TripleGrad, magnitude: f64) -> TripleGrad {
    TripleGrad {
        user: scaled_direction(&g.user, magnitude),
        pos: scaled_direction(&g.pos, magnitude),
        neg: scaled_direction(&g.neg, magnitude),
    }
}

/// Magnitude of user `u`'s perturbation in the given epoch context.
pub fn perturbation_magnitude(
    cfg: &TrainConfig,
    m: &EmbeddingModel,
    u: UserId,
    mean_norm: f64,
) -> Result<f64> {
    match cfg.mode {
        TrainMode::Standard => Ok(0.0),
        TrainMode::Apr => Ok(cfg.epsilon),
        TrainMode::Pamacf => Ok(cfg.rho * pama_coefficient(m.user_norm(u), mean_norm)?),
    }
}

/// One triple's contribution to the objective `L(Θ) + λ·L(Θ+Δ)`.
#[derive(Debug, Clone)]
pub struct TripleStep {
    pub grad: TripleGrad,
    pub loss: f64,
    pub adv_loss: Option<f64>,
    pub perturbation: Option<TripleGrad>,
    pub magnitude: f64,
}

/// Gradient of `L(Θ) + λ·L(Θ+Δ)` for one triple, `Δ` of norm `magnitude`.
/// With `adversarial == false` only `L(Θ)` is differentiated.
pub fn triple_step(
    m: &EmbeddingModel,
    t: BprTriple,
    adversarial: bool,
    lambda: f64,
    magnitude: f64,
) -> TripleStep {
    let (u, vi, vj) = (m.user(t.u), m.item(t.i), m.item(t.j));
    let mut grad = grad_at(u, vi, vj);
    let loss = neg_log_sigmoid(margin(u, vi, vj));
    if !adversarial {
        return TripleStep { grad, loss, adv_loss: None, perturbation: None, magnitude: 0.0 };
    }
    let delta = perturbation_from(&grad, magnitude);
    let add = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
    let (pu, pi, pj) = (add(u, &delta.user), add(vi, &delta.pos), add(vj, &delta.neg));
    let adv_loss = neg_log_sigmoid(margin(&pu, &pi, &pj));
    let adv = grad_at(&pu, &pi, &pj);
    for (g, a) in [
        (&mut grad.user, &adv.user),
        (&mut grad.pos, &adv.pos),
        (&mut grad.neg, &adv.neg),
    ] {
        for (x, y) in g.iter_mut().zip(a) {
            *x += lambda * y;
        }
    }
    TripleStep { grad, loss, adv_loss: Some(adv_loss), perturbation: Some(delta), magnitude }
}

/// Perturbation applied to one triple, kept for inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedPerturbation {
    pub triple: BprTriple,
    pub magnitude: f64,
    /// Norms of `(Δ_u, Δ_i, Δ_j)`.
    pub norms: [f64; 3],
}

/// Mean gradient of a batch, keyed by touched row.
#[derive(Debug, Clone, Default)]
pub struct BatchGradient {
    pub users: BTreeMap<UserId, Vec<f64>>,
    pub items: BTreeMap<ItemId, Vec<f64>>,
    pub loss_sum: f64,
    pub adv_loss_sum: f64,
    pub perturbations: Vec<AppliedPerturbation>,
}

fn accumulate(map: &mut BTreeMap<usize, Vec<f64>>, key: usize, g: &[f64], scale: f64) {
    let row = map.entry(key).or_insert_with(|| vec![0.0; g.len()]);
    for (r, x) in row.iter_mut().zip(g) {
        *r += scale * x;
    }
}

/// Batch-mean gradient of the training objective at the current parameters.
///
/// `mean_norm` is the epoch-start mean user norm used by PamaCF.
pub fn batch_gradient(
    m: &EmbeddingModel,
    batch: &[BprTriple],
    cfg: &TrainConfig,
    epoch: usize,
    mean_norm: f64,
) -> Result<BatchGradient> {
    let adversarial = cfg.adversarial_at(epoch);
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut out = BatchGradient::default();
    for &t in batch {
        let magnitude = if adversarial {
            perturbation_magnitude(cfg, m, t.u, mean_norm)?
        } else {
            0.0
        };
        let step = triple_step(m, t, adversarial, cfg.lambda, magnitude);
        out.loss_sum += step.loss;
        if let (Some(a), Some(p)) = (step.adv_loss, &step.perturbation) {
            out.adv_loss_sum += a;
            out.perturbations.push(AppliedPerturbation {
                triple: t,
                magnitude,
                norms: [norm(&p.user), norm(&p.pos), norm(&p.neg)],
            });
        }
        accumulate(&mut out.users, t.u, &step.grad.user, scale);
        accumulate(&mut out.items, t.i, &step.grad.pos, scale);
        accumulate(&mut out.items, t.j, &step.grad.neg, scale);
    }
    Ok(out)
}

/// `θ ← θ − η(g + wd·θ)` on every touched row.
pub fn apply_gradient(m: &mut EmbeddingModel, g: &BatchGradient, eta: f64, weight_decay: f64) -> Result<()> {
    fn update(row: &mut [f64], g: &[f64], eta: f64, wd: f64) -> bool {
        for (x, gx) in row.iter_mut().zip(g) {
            *x -= eta * (gx + wd * *x);
        }
        row.iter().all(|x| x.is_finite())
    }
    for (&u, gu) in &g.users {
        if !update(m.user_mut(u), gu, eta, weight_decay) {
            return Err(Error::Numerical(format!("non-finite value in user {u} after update")));
        }
    }
    for (&i, gi) in &g.items {
        if !update(m.item_mut(i), gi, eta, weight_decay) {
            return Err(Error::Numerical(format!("non-finite value in item {i} after update")));
        }
    }
    Ok(())
}

/// One gradient step on a batch. Returns the batch gradient for inspection.
pub fn train_step(
    m: &mut EmbeddingModel,
    batch: &[BprTriple],
    cfg: &TrainConfig,
    epoch: usize,
    mean_norm: f64,
) -> Result<BatchGradient> {
    let g = batch_gradient(m, batch, cfg, epoch, mean_norm)?;
    apply_gradient(m, &g, cfg.eta, cfg.weight_decay)?;
    Ok(g)
}

/// Summary of one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_bpr_loss: f64,
    pub mean_adv_loss: Option<f64>,
    pub mean_user_norm: f64,
}

/// Samples one negative per training pair and shuffles the result.
pub fn epoch_triples(ds: &InteractionDataset, rng: &mut crate::math::Rng) -> Result<Vec<BprTriple>> {
    let mut triples = Vec::with_capacity(ds.n_train_interactions());
    for u in 0..ds.n_users() {
        for &i in ds.train(u) {
            let j = ds.sample_negative(u, rng)?;
            triples.push(BprTriple { u, i, j });
        }
    }
    triples.shuffle(rng);
    Ok(triples)
}

/// Runs the full schedule on `m`. `sink` sees every epoch as it finishes.
pub fn train(
    m: &mut EmbeddingModel,
    ds: &InteractionDataset,
    cfg: &TrainConfig,
    mut sink: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if m.n_users() != ds.n_users() || m.n_items() != ds.n_items() {
        return Err(Error::Data(format!(
            "model shape {}x{} does not match dataset {}x{}",
            m.n_users(),
            m.n_items(),
            ds.n_users(),
            ds.n_items()
        )));
    }
    let mut rng = rng_for(cfg.seed, 0x7a1);
    let mut trace = Vec::with_capacity(cfg.total_epochs);
    for epoch in 0..cfg.total_epochs {
        let triples = epoch_triples(ds, &mut rng)?;
        let mean_norm = m.mean_user_norm();
        let (mut loss, mut adv) = (0.0, 0.0);
        for batch in triples.chunks(cfg.batch_size) {
            let g = train_step(m, batch, cfg, epoch, mean_norm)?;
            loss += g.loss_sum;
            adv += g.adv_loss_sum;
        }
        let n = triples.len().max(1) as f64;
        let stats = EpochStats {
            epoch: epoch + 1,
            phase: cfg.phase_at(epoch),
            mean_bpr_loss: loss / n,
            mean_adv_loss: cfg.adversarial_at(epoch).then_some(adv / n),
            mean_user_norm: m.mean_user_norm(),
        };
        if !stats.mean_bpr_loss.is_finite() {
            return Err(Error::Numerical(format!("loss diverged in epoch {}", epoch + 1)));
        }
        sink(&stats);
        trace.push(stats);
    }
    Ok(trace)
}

/// Fresh model for `ds` trained with `cfg`.
pub fn fit(ds: &InteractionDataset, cfg: &TrainConfig) -> Result<(EmbeddingModel, Vec<EpochStats>)> {
    cfg.validate()?;
    let mut m = EmbeddingModel::init(ds.n_users(), ds.n_items(), cfg.dim, cfg.seed, cfg.init_scale)?;
    let trace = train(&mut m, ds, cfg, |_| {})?;
    Ok((m, trace))
}

/// Amplification coefficient `γ(u)` of the current model.
///
/// `γ = (1 − (ηλε_u/‖U_u‖)·Σ|ψ|)⁻¹`, where `Σ|ψ|` adds, over the user's
/// training items, the expected item-gradient coefficient `σ(s_j − s_i)` in
/// both the positive and the negative role, the expectation being over a
/// uniform negative `j`. Returns `+∞` when the denominator is not positive.
pub fn gamma_coefficient(m: &EmbeddingModel, ds: &InteractionDataset, u: UserId, cfg: &TrainConfig) -> Result<f64> {
    let eps = match cfg.mode {
        TrainMode::Standard => 0.0,
        _ => perturbation_magnitude(cfg, m, u, m.mean_user_norm())?,
    };
    if eps == 0.0 || cfg.lambda == 0.0 {
        return Ok(1.0);
    }
    let unorm = m.user_norm(u);
    if unorm == 0.0 {
        return Ok(f64::INFINITY);
    }
    let scores = m.scores(u);
    let train = ds.train(u);
    let negatives: Vec<ItemId> = (0..ds.n_items()).filter(|j| train.binary_search(j).is_err()).collect();
    if negatives.is_empty() {
        return Err(Error::Data(format!("user {u} has no negative items")));
    }
    let mut psi = 0.0;
    for &i in train {
        let mean_s = negatives.iter().map(|&j| sigmoid(scores[j] - scores[i])).sum::<f64>()
            / negatives.len() as f64;
        psi += 2.0 * mean_s;
    }
    let denom = 1.0 - cfg.eta * cfg.lambda * eps / unorm * psi;
    Ok(if denom > 0.0 { 1.0 / denom } else { f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_reference_values() {
        let m = EmbeddingModel::from_rows(1, 2, 1, vec![1.0], vec![1.0, 0.0]).unwrap();
        let t = BprTriple::new(0, 0, 1);
        assert!((bpr_loss(&m, t) - 0.313_261_687_518_222_8).abs() < 1e-12);
        let m = EmbeddingModel::from_rows(1, 2, 1, vec![1.0], vec![0.3, 0.3]).unwrap();
        assert!((bpr_loss(&m, t) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn coefficient_values() {
        assert_eq!(pama_coefficient(2.0, 2.0).unwrap(), 0.5);
        assert!((pama_coefficient(4.0, 2.0).unwrap() - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((pama_coefficient(0.0, 2.0).unwrap() - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert!(pama_coefficient(1.0, 0.0).is_err());
    }

    #[test]
    fn perturbation_normalises() {
        let g = TripleGrad { user: vec![3.0, 4.0], pos: vec![0.0, 0.0], neg: vec![1e-13, 0.0] };
        let p = perturbation_from(&g, 1.0);
        assert_eq!(p.user, vec![0.6, 0.8]);
        assert_eq!(p.pos, vec![0.0, 0.0]);
        assert_eq!(p.neg, vec![0.0, 0.0]);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("pamacf".parse::<TrainMode>().unwrap(), TrainMode::Pamacf);
        assert!("sharp".parse::<TrainMode>().is_err());
    }
}
