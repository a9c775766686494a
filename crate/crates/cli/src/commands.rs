use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use pamacf::attack::AttackSpec;
use pamacf::metrics::{evaluate, MetricsReport};
use pamacf::model::EmbeddingModel;
use pamacf::theory::{default_grid, parse_grid, verify_theorem, GridPoint, Theorem, VerifyOptions};
use pamacf::train::{fit, train, TrainConfig, TrainMode};
use pamacf::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{config_hash, print_json, ExperimentArgs, ExperimentConfig};
use crate::data::{prepare, save_prepared, write_maps, Prepared};
use crate::report::{ensure_dir, io, opt, say, Csv};

pub const MODEL_FILE: &str = "model.bin";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const THEORY_FILE: &str = "theory.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Resolves the flags; `None` means the configuration was printed instead.
fn experiment(args: &ExperimentArgs) -> Result<Option<ExperimentConfig>> {
    settle(args, args.resolve()?)
}

fn settle(args: &ExperimentArgs, cfg: ExperimentConfig) -> Result<Option<ExperimentConfig>> {
    if args.print_config {
        print_json(&cfg);
        return Ok(None);
    }
    cfg.validate()?;
    ensure_dir(&cfg.output_dir)?;
    Ok(Some(cfg))
}

pub fn cmd_train(args: &ExperimentArgs) -> Result<()> {
    let Some(cfg) = experiment(args)? else { return Ok(()) };
    let p = prepare(&cfg)?;
    let ds = p.data.dataset();
    let dir = &cfg.output_dir;
    let t = &cfg.train;

    let mut trace = Csv::create(
        &dir.join(TRACE_FILE),
        &cfg.hash(),
        t.seed,
        "epoch,phase,mean_bpr_loss,mean_adv_loss,mean_user_norm",
    )?;
    let mut m = EmbeddingModel::init(ds.n_users(), ds.n_items(), t.dim, t.seed, t.init_scale)?;
    let mut write_err = None;
    let stats = train(&mut m, ds, t, |s| {
        let adv = opt(s.mean_adv_loss);
        let res = trace.row(&[&s.epoch, &s.phase.as_str(), &s.mean_bpr_loss, &adv, &s.mean_user_norm]);
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    trace.finish()?;
    m.check_finite()?;
    m.save(&dir.join(MODEL_FILE))?;
    write_maps(dir, ds)?;
    if let Some(last) = stats.last() {
        eprintln!(
            "trained {} epochs on {} users x {} items; final bpr loss {:.6}",
            last.epoch,
            ds.n_users(),
            ds.n_items(),
            last.mean_bpr_loss
        );
    }
    Ok(())
}

pub fn cmd_attack(args: &ExperimentArgs) -> Result<()> {
    let mut cfg = args.resolve()?;
    if cfg.attack.is_none() {
        cfg.attack = Some(AttackSpec { seed: cfg.split.seed, ..AttackSpec::default() });
    }
    let Some(cfg) = settle(args, cfg)? else { return Ok(()) };
    let p = prepare(&cfg)?;
    save_prepared(&cfg.output_dir, &p)?;
    if let Some(prov) = &p.provenance {
        eprintln!(
            "injected {} fake users ({} fillers each) targeting {:?} into {}",
            prov.n_fake,
            prov.filler_count,
            prov.target_ids,
            cfg.output_dir.display()
        );
    }
    Ok(())
}

pub fn cmd_eval(model: &Path, args: &ExperimentArgs) -> Result<()> {
    let Some(cfg) = experiment(args)? else { return Ok(()) };
    let p = prepare(&cfg)?;
    let m = EmbeddingModel::load(model)?;
    let report = evaluate_checked(&m, &p, &cfg.ks)?;
    let mut csv = Csv::create(&cfg.output_dir.join(METRICS_FILE), &cfg.hash(), cfg.train.seed, "metric,k,value")?;
    for r in &report.rows {
        csv.row(&[&r.metric, &r.k, &r.value])?;
        say(&format!("{}@{}\t{:.6}", r.metric, r.k, r.value));
    }
    csv.finish()
}

fn evaluate_checked(m: &EmbeddingModel, p: &Prepared, ks: &[usize]) -> Result<MetricsReport> {
    let ds = p.data.dataset();
    if m.n_items() != ds.n_items() || m.n_users() < p.data.n_genuine() {
        return Err(Error::Data(format!(
            "model shape {}x{} does not fit the dataset ({} genuine users, {} items)",
            m.n_users(),
            m.n_items(),
            p.data.n_genuine(),
            ds.n_items()
        )));
    }
    evaluate(m, &p.data, ks, p.targets.as_deref())
}

#[derive(Debug, Clone, Args)]
pub struct TheoryArgs {
    /// 1, 2, 3, 4 or all
    #[arg(long, default_value = "all")]
    pub theorem: String,
    /// CSV grid; the built-in 16-point grid when omitted
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Serialize)]
struct TheoryConfig {
    theorems: Vec<u8>,
    grid: Vec<GridPoint>,
}

pub fn cmd_theory(args: &TheoryArgs) -> Result<()> {
    let theorems: Vec<Theorem> = match args.theorem.as_str() {
        "all" => (1..=4).map(Theorem::from_id).collect::<Result<_>>()?,
        s => {
            let id = s.parse().map_err(|_| Error::Config(format!("unknown theorem {s:?}")))?;
            vec![Theorem::from_id(id)?]
        }
    };
    let mut grid = match &args.grid {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
            parse_grid(&text, path)?
        }
        None => default_grid(20_000, 0),
    };
    for p in &mut grid {
        if let Some(mc) = args.mc_samples {
            p.cfg.mc_samples = mc;
        }
        if let Some(s) = args.seed {
            p.cfg.seed = s;
        }
    }
    let resolved = TheoryConfig { theorems: theorems.iter().map(|t| t.id()).collect(), grid };
    if args.print_config {
        print_json(&resolved);
        return Ok(());
    }
    ensure_dir(&args.out)?;
    let seed = resolved.grid[0].cfg.seed;
    let mut csv = Csv::create(
        &args.out.join(THEORY_FILE),
        &config_hash(&resolved),
        seed,
        "theorem,n,d,sigma,eta,lambda,epsilon,t,k,err_std,err_adv,se,lower,upper,delta,verdict",
    )?;
    for th in theorems {
        let report = verify_theorem(th, &resolved.grid, &VerifyOptions::default())?;
        for r in &report.rows {
            csv.row(&[
                &r.theorem,
                &r.n,
                &r.d,
                &r.sigma,
                &r.eta,
                &r.lambda,
                &r.epsilon,
                &r.t,
                &r.k,
                &opt(r.err_std),
                &opt(r.err_adv),
                &opt(r.se),
                &opt(r.lower),
                &opt(r.upper),
                &opt(r.delta),
                &r.verdict.as_str(),
            ])?;
        }
        say(&format!("theorem {}: {}", th.id(), report.summary()));
    }
    csv.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Rho,
    Lambda,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Rho => "rho",
            SweepParam::Lambda => "lambda",
        }
    }

    fn apply(self, t: &mut TrainConfig, v: f64) {
        match self {
            SweepParam::Rho => t.rho = v,
            SweepParam::Lambda => t.lambda = v,
        }
    }

    fn check(self, mode: TrainMode) -> Result<()> {
        let ok = match self {
            SweepParam::Rho => mode == TrainMode::Pamacf,
            SweepParam::Lambda => mode != TrainMode::Standard,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("sweeping {} has no effect in {mode:?} mode", self.name())))
        }
    }
}

#[derive(Serialize)]
struct SweepConfig<'a> {
    param: SweepParam,
    values: &'a [f64],
    experiment: &'a ExperimentConfig,
}

pub fn cmd_sweep(param: SweepParam, values: &[f64], args: &ExperimentArgs) -> Result<()> {
    let cfg = args.resolve()?;
    if args.print_config {
        print_json(&SweepConfig { param, values, experiment: &cfg });
        return Ok(());
    }
    cfg.validate()?;
    param.check(cfg.train.mode)?;
    if values.is_empty() {
        return Err(Error::Config("no sweep values given".into()));
    }
    ensure_dir(&cfg.output_dir)?;
    let p = prepare(&cfg)?;
    let runs: Vec<(usize, u64)> =
        (0..values.len()).flat_map(|v| (0..cfg.repetitions as u64).map(move |r| (v, r))).collect();
    let reports = runs
        .par_iter()
        .map(|&(v, r)| {
            let mut t = cfg.train.clone();
            param.apply(&mut t, values[v]);
            t.seed = cfg.train.seed + r;
            let (m, _) = fit(p.data.dataset(), &t)?;
            // Same precision as a saved and reloaded model.
            evaluate_checked(&m.to_f32_precision(), &p, &cfg.ks)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut blank = cfg.clone();
    blank.output_dir = PathBuf::new();
    let hash = config_hash(&SweepConfig { param, values, experiment: &blank });
    let mut csv = Csv::create(&cfg.output_dir.join(SWEEP_FILE), &hash, cfg.train.seed, "param,value,metric,k,mean,stddev")?;
    for (v, group) in reports.chunks(cfg.repetitions).enumerate() {
        for (idx, row) in group[0].rows.iter().enumerate() {
            let xs: Vec<f64> = group.iter().map(|r| r.rows[idx].value).collect();
            let (mean, sd) = mean_sd(&xs);
            csv.row(&[&param.name(), &values[v], &row.metric, &row.k, &mean, &sd])?;
        }
    }
    csv.finish()
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
