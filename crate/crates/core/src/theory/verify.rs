//! Grid verification of the error-reduction theorems.
//!
//! Theorems 1 and 2 claim that one adversarial epoch leaves the probe with a
//! lower error than one standard epoch, on clean and on poisoned data. A grid
//! point passes when `err_std − err_adv` exceeds twice the combined
//! standard error.
//!
//! Theorems 3 and 4 bound the error reduction of each adversarial epoch. A
//! row passes when the paired estimate lies in
//! `[lower − 3·SE, upper + 3·SE]`.

use std::path::Path;

use serde::Serialize;

use super::bounds::{theorem_bounds, BoundsInput, BoundsOutcome};
use super::estimate::{
    reference_trajectory, resolve_probe, run_monte_carlo, PoisonConfig, ProbeSpec, SamplerMode,
};
use super::system::GaussianConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Theorem {
    /// Adversarial training lowers the clean error.
    ErrorReduction = 1,
    /// Adversarial training lowers the poisoned error.
    PoisonedErrorReduction = 2,
    /// Bounds on the clean per-epoch reduction.
    ReductionBounds = 3,
    /// Bounds on the poisoned per-epoch reduction.
    PoisonedReductionBounds = 4,
}

impl Theorem {
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Theorem::ErrorReduction),
            2 => Ok(Theorem::PoisonedErrorReduction),
            3 => Ok(Theorem::ReductionBounds),
            4 => Ok(Theorem::PoisonedReductionBounds),
            _ => Err(Error::Config(format!("unknown theorem {id}; expected 1 to 4"))),
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn poisoned(self) -> bool {
        matches!(self, Theorem::PoisonedErrorReduction | Theorem::PoisonedReductionBounds)
    }

    fn is_bound(self) -> bool {
        matches!(self, Theorem::ReductionBounds | Theorem::PoisonedReductionBounds)
    }

    /// Smallest `‖ū‖/σ` at which the statement is tested.
    pub fn min_signal_ratio(self) -> f64 {
        if self.is_bound() {
            20.0
        } else {
            10.0
        }
    }
}

/// One grid point. With `cap_fraction` set, `epsilon` is replaced by that
/// fraction of `min(‖u(t)‖, ‖ū‖)/(ηλ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub cfg: GaussianConfig,
    pub cap_fraction: Option<f64>,
}

/// `n ∈ {200, 1000}`, `d ∈ {8, 32}`, `σ/‖ū‖ ∈ {0.02, 0.1}`, `η = 0.01`,
/// `λ ∈ {0.5, 1}`, `ε` at half the cap, `t = 5`, `k = 3`.
pub fn default_grid(mc_samples: usize, seed: u64) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for n in [200, 1000] {
        for d in [8, 32] {
            for sigma in [0.02, 0.1] {
                for lambda in [0.5, 1.0] {
                    out.push(GridPoint {
                        cfg: GaussianConfig {
                            d,
                            n,
                            sigma,
                            u_bar_norm: 1.0,
                            eta: 0.01,
                            lambda,
                            epsilon: 0.0,
                            pretrain_epochs: 5,
                            adv_epochs: 3,
                            mc_samples,
                            seed,
                        },
                        cap_fraction: Some(0.5),
                    });
                }
            }
        }
    }
    out
}

/// Parses a grid file: a header naming the columns, then one point per row.
///
/// Known columns are `n, d, sigma, u_bar_norm, eta, lambda, epsilon,
/// cap_fraction, t, k, mc_samples, seed`; missing ones keep their defaults.
/// `epsilon` may be `auto`, meaning half the cap. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_grid(text: &str, path: &Path) -> Result<Vec<GridPoint>> {
    let err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut header: Option<Vec<String>> = None;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(cols) = &header else {
            header = Some(fields.iter().map(|s| s.to_string()).collect());
            continue;
        };
        if fields.len() != cols.len() {
            return Err(err(line_no, format!("expected {} fields, found {}", cols.len(), fields.len())));
        }
        let mut gp = GridPoint { cfg: GaussianConfig::default(), cap_fraction: Some(0.5) };
        for (name, value) in cols.iter().zip(&fields) {
            let num = || {
                value
                    .parse::<f64>()
                    .map_err(|_| err(line_no, format!("column {name}: malformed number {value:?}")))
            };
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|_| err(line_no, format!("column {name}: malformed integer {value:?}")))
            };
            match name.as_str() {
                "n" => gp.cfg.n = int()?,
                "d" => gp.cfg.d = int()?,
                "sigma" => gp.cfg.sigma = num()?,
                "u_bar_norm" => gp.cfg.u_bar_norm = num()?,
                "eta" => gp.cfg.eta = num()?,
                "lambda" => gp.cfg.lambda = num()?,
                "epsilon" if *value == "auto" => gp.cap_fraction = Some(0.5),
                "epsilon" => {
                    gp.cfg.epsilon = num()?;
                    gp.cap_fraction = None;
                }
                "cap_fraction" => gp.cap_fraction = Some(num()?),
                "t" => gp.cfg.pretrain_epochs = int()?,
                "k" => gp.cfg.adv_epochs = int()?,
                "mc_samples" => gp.cfg.mc_samples = int()?,
                "seed" => gp.cfg.seed = int()? as u64,
                other => return Err(err(line_no, format!("unknown column {other:?}"))),
            }
        }
        gp.cfg
            .validate()
            .map_err(|e| err(line_no, e.to_string()))?;
        out.push(gp);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: grid has no points", path.display())));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Skip,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Skip => "skip",
        }
    }
}

/// One line of a verification report.
///
/// For the reduction theorems `err_std` and `err_adv` are the errors after
/// `t+1` epochs and `delta` is their difference. For the bound theorems, row
/// `k = j` describes adversarial epoch `j`: `err_std`/`err_adv` are the two
/// branches' errors after `t+j` epochs and `delta` is the adversarial
/// branch's reduction from `t+j−1` to `t+j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationRow {
    pub theorem: u8,
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub eta: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub t: usize,
    pub k: usize,
    pub err_std: Option<f64>,
    pub err_adv: Option<f64>,
    pub se: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub delta: Option<f64>,
    pub verdict: Verdict,
    /// Why a row was skipped or how it failed.
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub theorem: u8,
    pub rows: Vec<VerificationRow>,
}

impl VerificationReport {
    pub fn count(&self, v: Verdict) -> usize {
        self.rows.iter().filter(|r| r.verdict == v).count()
    }

    /// Rows that were tested, passed or failed.
    pub fn applicable(&self) -> usize {
        self.count(Verdict::Pass) + self.count(Verdict::Fail)
    }

    pub fn summary(&self) -> String {
        format!(
            "passed {}/{}, skipped {}",
            self.count(Verdict::Pass),
            self.applicable(),
            self.count(Verdict::Skip)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub probe: ProbeSpec,
    pub sampler: SamplerMode,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { probe: ProbeSpec::Boundary, sampler: SamplerMode::Direct }
    }
}

fn l0(v: &[f64]) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

/// Verifies `theorem` at one grid point.
pub fn verify_point(theorem: Theorem, point: &GridPoint, opts: &VerifyOptions) -> Result<Vec<VerificationRow>> {
    let mut cfg = point.cfg.clone();
    cfg.validate()?;
    if !theorem.is_bound() {
        cfg.adv_epochs = 1;
    }
    let poison = theorem.poisoned().then(|| PoisonConfig::default_for(&cfg));
    let probe = resolve_probe(&cfg, &opts.probe, poison.as_ref());
    let t = cfg.pretrain_epochs;

    let u_t = reference_trajectory(&GaussianConfig { epsilon: 0.0, ..cfg.clone() }, &probe, poison.as_ref())?
        .u_norm[t];
    let cap = u_t.min(cfg.u_bar_norm) / (cfg.eta * cfg.lambda);
    if let Some(f) = point.cap_fraction {
        cfg.epsilon = if cap.is_finite() { f * cap } else { 0.0 };
    }

    let base = VerificationRow {
        theorem: theorem.id(),
        n: cfg.n,
        d: cfg.d,
        sigma: cfg.sigma,
        eta: cfg.eta,
        lambda: cfg.lambda,
        epsilon: cfg.epsilon,
        t,
        k: cfg.adv_epochs,
        err_std: None,
        err_adv: None,
        se: None,
        lower: None,
        upper: None,
        delta: None,
        verdict: Verdict::Skip,
        note: String::new(),
    };
    let skip = |note: String| vec![VerificationRow { note, ..base.clone() }];

    let ratio = cfg.u_bar_norm / cfg.sigma;
    if ratio < theorem.min_signal_ratio() {
        return Ok(skip(format!(
            "signal ratio {ratio} below {}",
            theorem.min_signal_ratio()
        )));
    }
    if cfg.lambda > 0.0 && cfg.epsilon >= cap {
        return Ok(skip(format!("epsilon {} not below cap {cap}", cfg.epsilon)));
    }

    let res = run_monte_carlo(&cfg, &probe, poison.as_ref(), opts.sampler)?;

    if !theorem.is_bound() {
        let (s, a) = (res.err_std(t + 1), res.err_adv(t + 1));
        let se = s.se.hypot(a.se);
        let delta = s.mean - a.mean;
        let (verdict, note) = if cfg.lambda == 0.0 || cfg.epsilon == 0.0 && cfg.lambda == 0.0 {
            let ok = delta.abs() <= 2.0 * se;
            (if ok { Verdict::Pass } else { Verdict::Fail }, "no adversary: modes must agree".to_string())
        } else if delta > 2.0 * se {
            (Verdict::Pass, String::new())
        } else {
            (Verdict::Fail, format!("reduction {delta:.4} not above 2*se {:.4}", 2.0 * se))
        };
        return Ok(vec![VerificationRow {
            err_std: Some(s.mean),
            err_adv: Some(a.mean),
            se: Some(se),
            delta: Some(delta),
            verdict,
            note,
            ..base
        }]);
    }

    let traj = reference_trajectory(&cfg, &probe, poison.as_ref())?;
    let u_bar = cfg.u_bar();
    let (n_prime, alpha) = poison.map_or((0, 0.0), |p| (p.n_prime, p.alpha));
    let mut rows = Vec::new();
    for j in 1..=cfg.adv_epochs {
        let e = t + j - 1;
        let input = BoundsInput {
            n: cfg.n,
            n_prime,
            d: cfg.d,
            sigma: cfg.sigma,
            u_bar_norm: cfg.u_bar_norm,
            u_bar_l0: l0(&u_bar),
            eta: cfg.eta,
            lambda: cfg.lambda,
            epsilon: cfg.epsilon,
            alpha,
            c: traj.item_scale[e],
            u_norm: traj.u_norm[e],
        };
        let row = VerificationRow {
            k: j,
            err_std: Some(res.err_std(t + j).mean),
            err_adv: Some(res.err_adv(t + j).mean),
            ..base.clone()
        };
        match theorem_bounds(&input, theorem.poisoned()) {
            BoundsOutcome::Inapplicable(why) => rows.push(VerificationRow { note: why, ..row }),
            BoundsOutcome::Applicable { lower, upper, .. } => {
                let red = res.step_reduction(j);
                let ok = red.mean >= lower - 3.0 * red.se && red.mean <= upper + 3.0 * red.se;
                let note = if ok {
                    String::new()
                } else {
                    format!("reduction {:.4} outside [{lower:.4}, {upper:.4}]", red.mean)
                };
                rows.push(VerificationRow {
                    se: Some(red.se),
                    lower: Some(lower),
                    upper: Some(upper),
                    delta: Some(red.mean),
                    verdict: if ok { Verdict::Pass } else { Verdict::Fail },
                    note,
                    ..row
                });
            }
        }
    }
    Ok(rows)
}

/// Verifies `theorem` over a grid.
pub fn verify_theorem(theorem: Theorem, grid: &[GridPoint], opts: &VerifyOptions) -> Result<VerificationReport> {
    let mut rows = Vec::new();
    for p in grid {
        rows.extend(verify_point(theorem, p, opts)?);
    }
    Ok(VerificationReport { theorem: theorem.id(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rows_are_numbered() {
        let text = "n,d,sigma,eta,lambda\n200,8,0.02,0.01,0.5\n# comment\n200,x,0.02,0.01,1\n";
        match parse_grid(text, Path::new("g.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let ok = parse_grid("n,lambda,epsilon\n300,0,2\n", Path::new("g.csv")).unwrap();
        assert_eq!(ok[0].cfg.n, 300);
        assert_eq!(ok[0].cap_fraction, None);
        assert!(parse_grid("n,bogus\n1,2\n", Path::new("g.csv")).is_err());
    }

    #[test]
    fn default_grid_has_sixteen_points() {
        assert_eq!(default_grid(100, 0).len(), 16);
    }
}
