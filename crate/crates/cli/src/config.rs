use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use pamacf::attack::{AttackMethod, AttackSpec};
use pamacf::dataset::SplitConfig;
use pamacf::train::{TrainConfig, TrainMode};
use pamacf::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a train, attack, eval or sweep run depends on.
///
/// `targets` are original item ids. When an attack is configured without
/// targets, the five least popular items are picked automatically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub attack: Option<AttackSpec>,
    pub targets: Vec<u64>,
    /// Smallest train popularity of an automatically chosen target.
    pub target_min_popularity: usize,
    pub ks: Vec<usize>,
    pub output_dir: PathBuf,
    pub repetitions: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: None,
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            attack: None,
            targets: Vec::new(),
            target_min_popularity: 1,
            ks: vec![20],
            output_dir: PathBuf::from("out"),
            repetitions: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let data = self.data.as_ref().ok_or_else(|| Error::Config("no dataset given (--data)".into()))?;
        if !data.exists() {
            return Err(Error::Io {
                path: data.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            });
        }
        if self.ks.is_empty() || self.ks.contains(&0) || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("k list must be non-empty, positive and strictly ascending".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.attack.as_ref().is_some_and(|a| !a.targets.is_empty()) {
            return Err(Error::Config("set attack targets through the top-level `targets` list".into()));
        }
        self.split.validate()?;
        self.train.validate()
    }

    /// Hex SHA-256 prefix of the configuration, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        config_hash(&c)
    }
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serialises");
    Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn print_json<T: Serialize>(value: &T) {
    crate::report::say(&serde_json::to_string_pretty(value).expect("configuration serialises"));
}

/// Flags shared by the experiment commands. Each one overrides the
/// corresponding field of the JSON configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// JSON configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Interaction file, or a directory written by `attack`
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for splitting, training and the attack
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the resolved configuration and exit
    #[arg(long)]
    pub print_config: bool,

    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub min_interactions: Option<usize>,

    /// standard, apr or pamacf
    #[arg(long)]
    pub mode: Option<TrainMode>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,

    /// Inject fake users: random or bandwagon
    #[arg(long)]
    pub attack: Option<AttackMethod>,
    /// Fake users as a fraction of genuine users
    #[arg(long)]
    pub budget: Option<f64>,
    /// Target items, original ids
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<u64>>,
    #[arg(long)]
    pub filler_count: Option<usize>,
    #[arg(long)]
    pub popular_fraction: Option<f64>,
    #[arg(long)]
    pub target_min_popularity: Option<usize>,

    /// Cut-offs, e.g. 10,20
    #[arg(long = "k", value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
}

impl ExperimentArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c: ExperimentConfig = match &self.config {
            Some(p) => load_json(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        if let Some(d) = &self.data {
            c.data = Some(d.clone());
        }
        set!(self.out => c.output_dir);
        set!(self.test_fraction => c.split.test_fraction);
        set!(self.validation_fraction => c.split.validation_fraction_of_train);
        set!(self.min_interactions => c.split.min_interactions);
        set!(self.mode => c.train.mode);
        set!(self.eta => c.train.eta);
        set!(self.lambda => c.train.lambda);
        set!(self.epsilon => c.train.epsilon);
        set!(self.rho => c.train.rho);
        set!(self.weight_decay => c.train.weight_decay);
        set!(self.pretrain_epochs => c.train.pretrain_epochs);
        set!(self.epochs => c.train.total_epochs);
        set!(self.batch_size => c.train.batch_size);
        set!(self.dim => c.train.dim);
        set!(self.init_scale => c.train.init_scale);
        set!(self.targets => c.targets);
        set!(self.target_min_popularity => c.target_min_popularity);
        set!(self.ks => c.ks);
        set!(self.repetitions => c.repetitions);

        let touches_attack = self.attack.is_some()
            || self.budget.is_some()
            || self.filler_count.is_some()
            || self.popular_fraction.is_some();
        if touches_attack && c.attack.is_none() {
            c.attack = Some(AttackSpec::default());
        }
        if let Some(a) = c.attack.as_mut() {
            set!(self.attack => a.method);
            set!(self.budget => a.budget);
            set!(self.popular_fraction => a.popular_fraction);
            if self.filler_count.is_some() {
                a.filler_count = self.filler_count;
            }
        }
        if let Some(s) = self.seed {
            c.split.seed = s;
            c.train.seed = s;
            if let Some(a) = c.attack.as_mut() {
                a.seed = s;
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_and_seed_propagates() {
        let args = ExperimentArgs {
            seed: Some(9),
            budget: Some(0.05),
            rho: Some(0.3),
            ..Default::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.train.rho, 0.3);
        assert_eq!((c.split.seed, c.train.seed), (9, 9));
        let a = c.attack.unwrap();
        assert_eq!((a.budget, a.seed, a.method), (0.05, 9, AttackMethod::Random));
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { output_dir: "elsewhere".into(), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let c = ExperimentConfig { repetitions: 2, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }
}
