//! Monte-Carlo estimates of the probe user's recommendation error.
//!
//! The probe `(u, r)` is fixed; each replicate draws a fresh initial item
//! `v(0) ~ N(ū, σ²/(n−1)·I)` (and fresh fakes when poisoned), trains
//! `t` standard epochs, then branches into `k` further standard epochs and
//! `k` adversarial epochs. Both branches share the replicate's random
//! numbers, so their errors are paired.
//!
//! Two samplers are available. [`SamplerMode::Direct`] tracks only the
//! probe, the item and the aggregate `S = Σ r u`; in adversarial epochs the
//! users' normalised shrink terms are approximated by `S/‖S‖`, which is
//! exact when every `r_i u_i` points the same way. [`SamplerMode::FullPopulation`]
//! simulates every user, with the others drawn from the model and shifted
//! so that their mean reproduces the sampled `v(0)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::system::{adversarial_epoch, gauss, item_scale_factor, standard_epoch, GaussianConfig, GaussianState, PoisonSpec};
use crate::error::{Error, Result};
use crate::math::{dot, norm, rng_for, Rng};
use rand::Rng as _;

pub(super) const REPLICATE_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    Direct,
    FullPopulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingKind {
    Standard,
    Adversarial,
}

/// Fixed user whose error is measured.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub u: Vec<f64>,
    pub r: f64,
}

/// How to choose the probe.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeSpec {
    /// A user drawn from the model, `u ~ N(rū, σ²I)`.
    Sampled,
    /// The minimum-norm user, with rating `+1`, whose standard-training
    /// prediction at epoch `t+1` sits on the decision boundary when `v(0)`
    /// takes its mean value. Its error at `t+1` is close to one half.
    Boundary,
    Explicit(Probe),
}

/// Fakes with entries uniform on `[−α, α]`, rated against the probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoisonConfig {
    pub n_prime: usize,
    pub alpha: f64,
}

impl PoisonConfig {
    /// `n′ = round(0.05·n)` fakes with `α = 0.1·‖ū‖/√d`.
    pub fn default_for(cfg: &GaussianConfig) -> Self {
        PoisonConfig {
            n_prime: (0.05 * cfg.n as f64).round() as usize,
            alpha: 0.1 * cfg.u_bar_norm / (cfg.d as f64).sqrt(),
        }
    }
}

/// Estimated probability with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorEstimate {
    pub mean: f64,
    pub se: f64,
}

/// Error counts of a Monte-Carlo run, per epoch `0..=t+k`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct McResult {
    pub samples: u64,
    pub pretrain_epochs: usize,
    pub std_errors: Vec<u64>,
    pub adv_errors: Vec<u64>,
    /// Per adversarial step `j`, sums of `err(t+j−1) − err(t+j)` and of its
    /// square, on the adversarial branch.
    step_sum: Vec<i64>,
    step_sq: Vec<u64>,
}

impl McResult {
    fn empty(t: usize, k: usize) -> Self {
        McResult {
            samples: 0,
            pretrain_epochs: t,
            std_errors: vec![0; t + k + 1],
            adv_errors: vec![0; t + k + 1],
            step_sum: vec![0; k],
            step_sq: vec![0; k],
        }
    }

    fn merge(mut self, o: McResult) -> McResult {
        self.samples += o.samples;
        for (a, b) in self.std_errors.iter_mut().zip(&o.std_errors) {
            *a += b;
        }
        for (a, b) in self.adv_errors.iter_mut().zip(&o.adv_errors) {
            *a += b;
        }
        for (a, b) in self.step_sum.iter_mut().zip(&o.step_sum) {
            *a += b;
        }
        for (a, b) in self.step_sq.iter_mut().zip(&o.step_sq) {
            *a += b;
        }
        self
    }

    fn record(&mut self, std: &[bool], adv: &[bool]) {
        self.samples += 1;
        for (c, &e) in self.std_errors.iter_mut().zip(std) {
            *c += e as u64;
        }
        for (c, &e) in self.adv_errors.iter_mut().zip(adv) {
            *c += e as u64;
        }
        let t = self.pretrain_epochs;
        for j in 0..self.step_sum.len() {
            let d = adv[t + j] as i64 - adv[t + j + 1] as i64;
            self.step_sum[j] += d;
            self.step_sq[j] += (d * d) as u64;
        }
    }

    fn proportion(&self, count: u64) -> ErrorEstimate {
        let n = self.samples as f64;
        let p = count as f64 / n;
        ErrorEstimate { mean: p, se: (p * (1.0 - p) / n).sqrt() }
    }

    /// Error after `epoch` epochs of standard training.
    pub fn err_std(&self, epoch: usize) -> ErrorEstimate {
        self.proportion(self.std_errors[epoch])
    }

    /// Error after `epoch` epochs on the adversarial branch.
    pub fn err_adv(&self, epoch: usize) -> ErrorEstimate {
        self.proportion(self.adv_errors[epoch])
    }

    /// Paired estimate of `err(t+j−1) − err(t+j)` on the adversarial branch.
    pub fn step_reduction(&self, j: usize) -> ErrorEstimate {
        let n = self.samples as f64;
        let mean = self.step_sum[j - 1] as f64 / n;
        let var = (self.step_sq[j - 1] as f64 / n - mean * mean).max(0.0);
        ErrorEstimate { mean, se: (var / n).sqrt() }
    }
}

/// Probe, item and aggregate `S = Σ r u` of the reduced system.
#[derive(Debug, Clone)]
pub(super) struct Reduced {
    pub(super) u: Vec<f64>,
    pub(super) r: f64,
    pub(super) v: Vec<f64>,
    pub(super) s: Vec<f64>,
    pub(super) n_total: f64,
}

impl Reduced {
    pub(super) fn standard(&mut self, eta: f64) {
        let nt = self.n_total;
        for k in 0..self.v.len() {
            let (u, v, s) = (self.u[k], self.v[k], self.s[k]);
            self.u[k] = u + eta * self.r * v;
            self.v[k] = v + eta * s;
            self.s[k] = s + nt * eta * v;
        }
    }

    fn adversarial(&mut self, eta: f64, lambda: f64, eps: f64) {
        let shrink = |x: &[f64], count: f64| {
            let n = norm(x);
            if n > 0.0 {
                1.0 - count * eta * lambda * eps / n
            } else {
                1.0
            }
        };
        let nt = self.n_total;
        let (su, sv, ss) = (shrink(&self.u, 1.0), shrink(&self.v, nt), shrink(&self.s, nt));
        let gain = eta * (1.0 + lambda);
        for k in 0..self.v.len() {
            let (u, v, s) = (self.u[k], self.v[k], self.s[k]);
            self.u[k] = su * u + gain * self.r * v;
            self.v[k] = sv * v + gain * s;
            self.s[k] = ss * s + nt * gain * v;
        }
    }

    fn error(&self) -> bool {
        self.r * dot(&self.u, &self.v) <= 0.0
    }
}

enum Replica {
    Reduced(Reduced),
    Full(GaussianState),
}

impl Replica {
    fn standard(&mut self, eta: f64) {
        match self {
            Replica::Reduced(s) => s.standard(eta),
            Replica::Full(s) => standard_epoch(s, eta),
        }
    }

    fn adversarial(&mut self, eta: f64, lambda: f64, eps: f64) -> Result<()> {
        match self {
            Replica::Reduced(s) => {
                s.adversarial(eta, lambda, eps);
                Ok(())
            }
            Replica::Full(s) => adversarial_epoch(s, eta, lambda, eps),
        }
    }

    fn error(&self) -> bool {
        match self {
            Replica::Reduced(s) => s.error(),
            Replica::Full(s) => s.probe_error(),
        }
    }

    fn clone_state(&self) -> Replica {
        match self {
            Replica::Reduced(s) => Replica::Reduced(s.clone()),
            Replica::Full(s) => Replica::Full(s.clone()),
        }
    }
}

/// Resolves a probe specification for `cfg`.
pub fn resolve_probe(cfg: &GaussianConfig, spec: &ProbeSpec, poison: Option<&PoisonConfig>) -> Probe {
    match spec {
        ProbeSpec::Explicit(p) => p.clone(),
        ProbeSpec::Sampled => {
            let mut rng = rng_for(cfg.seed, 0x9b0b);
            let r = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let u = cfg.u_bar().iter().map(|m| r * m + cfg.sigma * gauss(&mut rng)).collect();
            Probe { u, r }
        }
        ProbeSpec::Boundary => {
            // Along the mean trajectory every vector is parallel to ū, so the
            // probe's standard-training margin at t+1 is linear in its offset.
            let mut m = mean_replica(cfg, &Probe { u: vec![0.0; cfg.d], r: 1.0 }, poison);
            let dir: Vec<f64> = cfg.u_bar().iter().map(|x| x / cfg.u_bar_norm).collect();
            let mut a = 0.0;
            for _ in 0..=cfg.pretrain_epochs {
                a += cfg.eta * dot(&m.v, &dir);
                m.standard(cfg.eta);
            }
            Probe { u: dir.iter().map(|x| -a * x).collect(), r: 1.0 }
        }
    }
}

/// Reduced system at the mean initial item, fakes at their mean (zero).
fn mean_replica(cfg: &GaussianConfig, probe: &Probe, poison: Option<&PoisonConfig>) -> Reduced {
    let np = poison.map_or(0, |p| p.n_prime);
    let n_total = (cfg.n + np) as f64;
    let s: Vec<f64> = cfg.u_bar().iter().map(|x| cfg.n as f64 * x).collect();
    Reduced {
        u: probe.u.clone(),
        r: probe.r,
        v: s.iter().map(|x| x / n_total).collect(),
        s,
        n_total,
    }
}

/// Deterministic trajectory at the mean initial item: `t` standard epochs
/// followed by `k` adversarial ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    /// `‖u(e)‖` of the probe for `e = 0..=t+k`.
    pub u_norm: Vec<f64>,
    /// `C(e)` with `v(e) = C(e)·v(0)`.
    pub item_scale: Vec<f64>,
}

pub fn reference_trajectory(
    cfg: &GaussianConfig,
    probe: &Probe,
    poison: Option<&PoisonConfig>,
) -> Result<ReferenceTrajectory> {
    let mut m = mean_replica(cfg, probe, poison);
    let v0 = m.v.clone();
    let mut out = ReferenceTrajectory { u_norm: Vec::new(), item_scale: Vec::new() };
    for e in 0..=cfg.pretrain_epochs + cfg.adv_epochs {
        out.u_norm.push(norm(&m.u));
        out.item_scale.push(item_scale_factor(&m.v, &v0)?);
        if e < cfg.pretrain_epochs {
            m.standard(cfg.eta);
        } else {
            m.adversarial(cfg.eta, cfg.lambda, cfg.epsilon);
        }
    }
    Ok(out)
}

fn replicate(
    cfg: &GaussianConfig,
    u_bar: &[f64],
    probe: &Probe,
    poison: Option<&PoisonConfig>,
    sampler: SamplerMode,
    idx: u64,
) -> Result<(Vec<bool>, Vec<bool>)> {
    let d = cfg.d;
    let n = cfg.n as f64;
    let mut rng: Rng = rng_for(cfg.seed, REPLICATE_STREAM + idx);
    let item_sd = cfg.sigma / (n - 1.0).sqrt();
    let v0: Vec<f64> = u_bar.iter().map(|m| m + item_sd * gauss(&mut rng)).collect();
    let fakes = poison.map(|p| PoisonSpec::uniform(p.n_prime, d, p.alpha, -probe.r, &mut rng));

    let mut state = match sampler {
        SamplerMode::Direct => {
            let mut s: Vec<f64> = v0.iter().map(|x| n * x).collect();
            let mut n_total = n;
            if let Some(f) = &fakes {
                for (row, &r) in f.fakes.chunks_exact(d).zip(&f.ratings) {
                    for (a, x) in s.iter_mut().zip(row) {
                        *a += r * x;
                    }
                }
                n_total += f.n_prime() as f64;
            }
            Replica::Reduced(Reduced {
                u: probe.u.clone(),
                r: probe.r,
                v: s.iter().map(|x| x / n_total).collect(),
                s,
                n_total,
            })
        }
        SamplerMode::FullPopulation => {
            let others = cfg.n - 1;
            let mut users = probe.u.clone();
            let mut ratings = vec![probe.r];
            for _ in 0..others {
                let r = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                ratings.push(r);
                users.extend(u_bar.iter().map(|m| r * m + cfg.sigma * gauss(&mut rng)));
            }
            // Shift the others so that the genuine mean equals v0.
            let mut delta: Vec<f64> = v0.iter().map(|x| n * x).collect();
            for (row, &r) in users.chunks_exact(d).zip(&ratings) {
                for (a, x) in delta.iter_mut().zip(row) {
                    *a -= r * x;
                }
            }
            for a in delta.iter_mut() {
                *a /= others as f64;
            }
            for (row, &r) in users.chunks_exact_mut(d).zip(&ratings).skip(1) {
                for (x, dl) in row.iter_mut().zip(&delta) {
                    *x += r * dl;
                }
            }
            if let Some(f) = &fakes {
                users.extend_from_slice(&f.fakes);
                ratings.extend_from_slice(&f.ratings);
            }
            Replica::Full(GaussianState::from_users(d, users, ratings)?)
        }
    };

    let (t, k) = (cfg.pretrain_epochs, cfg.adv_epochs);
    let mut std_err = Vec::with_capacity(t + k + 1);
    std_err.push(state.error());
    for _ in 0..t {
        state.standard(cfg.eta);
        std_err.push(state.error());
    }
    let mut adv_err = std_err.clone();
    let mut adv = state.clone_state();
    for _ in 0..k {
        state.standard(cfg.eta);
        std_err.push(state.error());
        adv.adversarial(cfg.eta, cfg.lambda, cfg.epsilon)?;
        adv_err.push(adv.error());
    }
    Ok((std_err, adv_err))
}

/// Runs `cfg.mc_samples` paired replicates.
///
/// Replicate `i` draws from its own random stream, so the result does not
/// depend on scheduling or thread count.
pub fn run_monte_carlo(
    cfg: &GaussianConfig,
    probe: &Probe,
    poison: Option<&PoisonConfig>,
    sampler: SamplerMode,
) -> Result<McResult> {
    cfg.validate()?;
    if probe.u.len() != cfg.d || (probe.r != 1.0 && probe.r != -1.0) {
        return Err(Error::Config("probe does not match the system".into()));
    }
    let u_bar = cfg.u_bar();
    let (t, k) = (cfg.pretrain_epochs, cfg.adv_epochs);
    (0..cfg.mc_samples as u64)
        .into_par_iter()
        .try_fold(
            || McResult::empty(t, k),
            |mut acc, idx| {
                let (s, a) = replicate(cfg, &u_bar, probe, poison, sampler, idx)?;
                acc.record(&s, &a);
                Ok(acc)
            },
        )
        .try_reduce(|| McResult::empty(t, k), |a, b| Ok(a.merge(b)))
}

/// Probe error after `t` standard epochs followed by `k` epochs of the
/// requested kind.
pub fn estimate_error(
    cfg: &GaussianConfig,
    kind: TrainingKind,
    poison: Option<&PoisonConfig>,
    probe: &ProbeSpec,
    sampler: SamplerMode,
) -> Result<ErrorEstimate> {
    let probe = resolve_probe(cfg, probe, poison);
    let res = run_monte_carlo(cfg, &probe, poison, sampler)?;
    let e = cfg.pretrain_epochs + cfg.adv_epochs;
    Ok(match kind {
        TrainingKind::Standard => res.err_std(e),
        TrainingKind::Adversarial => res.err_adv(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_probe_sits_on_the_boundary() {
        let cfg = GaussianConfig { mc_samples: 4000, adv_epochs: 1, ..Default::default() };
        let probe = resolve_probe(&cfg, &ProbeSpec::Boundary, None);
        let res = run_monte_carlo(&cfg, &probe, None, SamplerMode::Direct).unwrap();
        let e = res.err_std(cfg.pretrain_epochs + 1).mean;
        assert!((e - 0.5).abs() < 0.05, "boundary error {e}");
    }

    #[test]
    fn counts_do_not_depend_on_thread_count() {
        let cfg = GaussianConfig { mc_samples: 500, ..Default::default() };
        let probe = resolve_probe(&cfg, &ProbeSpec::Boundary, None);
        let a = run_monte_carlo(&cfg, &probe, None, SamplerMode::Direct).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_monte_carlo(&cfg, &probe, None, SamplerMode::Direct).unwrap());
        assert_eq!(a, b);
    }
}
