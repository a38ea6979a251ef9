//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment. Keys mirror the fields of
//! [`ExperimentConfig`]; parameters of a variant (`sigma2` for
//! `partition = gaussian`, `lr` for `optimizer`, ...) are applied after the
//! key selecting the variant, whatever their order in the file.

use std::path::{Path, PathBuf};

use dfl_core::aggregation::{AlphaRule, MixingRule, Setting};
use dfl_core::data::{NormalizationScheme, SizeRule, TEST_FILES, TRAIN_FILES};
use dfl_core::segment::SegmentUnit;
use dfl_core::sim::{
    ArchChoice, DataSource, ExperimentConfig, InitChoice, Mode, OptimizerSpec, PartitionScheme,
    TopologyKind,
};
use dfl_core::OptimizerKind;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Environment variable naming a directory with the four MNIST IDX files.
pub const DATA_DIR_ENV: &str = "DFL_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum DataChoice {
    /// IDX files when a data directory is configured and complete, else synthetic.
    #[default]
    Auto,
    Synth,
    Idx,
}

/// An experiment config plus the data selection that is resolved at run time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub config: ExperimentConfig,
    pub data: DataChoice,
    pub data_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            config: ExperimentConfig::default(),
            data: DataChoice::Auto,
            data_dir: None,
        }
    }
}

fn has_idx_files(dir: &Path) -> bool {
    [TRAIN_FILES.0, TRAIN_FILES.1, TEST_FILES.0, TEST_FILES.1]
        .iter()
        .all(|f| dir.join(f).is_file())
}

impl RunConfig {
    /// Fix the data source, consulting `env_dir` (normally [`DATA_DIR_ENV`])
    /// when no `data_dir` is set.
    pub fn resolve(&self, env_dir: Option<PathBuf>) -> Result<ExperimentConfig> {
        let mut cfg = self.config.clone();
        let dir = self.data_dir.clone().or(env_dir);
        cfg.data.source = match self.data {
            DataChoice::Synth => DataSource::Synth,
            DataChoice::Idx => match dir {
                Some(d) => DataSource::Idx(d),
                None => {
                    return Err(CliError::config(format!(
                        "data = idx needs data_dir or the {DATA_DIR_ENV} variable"
                    )))
                }
            },
            DataChoice::Auto => match dir {
                Some(d) if has_idx_files(&d) => DataSource::Idx(d),
                _ => DataSource::Synth,
            },
        };
        Ok(cfg)
    }
}

/// Split config text into `(line, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}: expected 'key = value', got '{line}'", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(CliError::config(format!("line {}: empty key", i + 1)));
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Keys applied after the key that selects their variant.
const SECOND_PASS: [&str; 9] = [
    "sigma2", "size_rule", "skew", "norm_delta", "norm_means", "fraction", "alpha", "lr", "data_dir",
];

/// Apply `key = value` settings on top of `base`.
pub fn apply_pairs<'a>(
    base: &mut RunConfig,
    pairs: impl IntoIterator<Item = (&'a str, &'a str)> + Clone,
) -> Result<()> {
    for second in [false, true] {
        for (k, v) in pairs.clone() {
            if SECOND_PASS.contains(&k) == second {
                apply(base, k, v).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{k}: {m}")),
                    other => other,
                })?;
            }
        }
    }
    Ok(())
}

/// Parse a whole config file body on top of `base`.
pub fn parse_config(text: &str, base: RunConfig) -> Result<RunConfig> {
    let pairs = parse_pairs(text)?;
    let mut rc = base;
    apply_pairs(&mut rc, pairs.iter().map(|(_, k, v)| (k.as_str(), v.as_str())))?;
    Ok(rc)
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T> {
    v.parse().map_err(|_| CliError::config(format!("cannot parse '{v}'")))
}

fn boolean(v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(CliError::config(format!("'{v}' is not a boolean"))),
    }
}

fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(s.trim())).collect()
}

fn optional_count(v: &str) -> Result<Option<usize>> {
    if v.eq_ignore_ascii_case("all") {
        Ok(None)
    } else {
        num(v).map(Some)
    }
}

fn apply(rc: &mut RunConfig, key: &str, v: &str) -> Result<()> {
    let c = &mut rc.config;
    let lower = v.to_ascii_lowercase();
    match key {
        "name" => c.name = v.to_string(),
        "clients" => c.clients = num(v)?,
        "arch" => {
            c.arch = match lower.as_str() {
                "small" => ArchChoice::Small,
                "reference" => ArchChoice::Reference,
                _ => return Err(CliError::config(format!("unknown arch '{v}'"))),
            }
        }
        "dropout" => c.dropout = boolean(v)?,
        "data" => {
            rc.data = match lower.as_str() {
                "auto" => DataChoice::Auto,
                "synth" => DataChoice::Synth,
                "idx" | "mnist" => DataChoice::Idx,
                _ => return Err(CliError::config(format!("unknown data source '{v}'"))),
            }
        }
        "data_dir" => rc.data_dir = Some(PathBuf::from(v)),
        "train_samples" => c.data.train_samples = optional_count(v)?,
        "test_samples" => c.data.test_samples = optional_count(v)?,
        "partition" => {
            c.partition = match lower.as_str() {
                "iid" => PartitionScheme::Iid,
                "full" => PartitionScheme::Full,
                "gaussian" => PartitionScheme::Gaussian { sigma2: 1.0, rule: SizeRule::Floor },
                "skewed" => PartitionScheme::Skewed { skew: 1.0 },
                _ => return Err(CliError::config(format!("unknown partition '{v}'"))),
            }
        }
        "sigma2" | "size_rule" => match &mut c.partition {
            PartitionScheme::Gaussian { sigma2, rule } => {
                if key == "sigma2" {
                    *sigma2 = num(v)?;
                } else {
                    *rule = match lower.as_str() {
                        "floor" => SizeRule::Floor,
                        "literal" => SizeRule::Literal,
                        _ => return Err(CliError::config(format!("unknown size rule '{v}'"))),
                    };
                }
            }
            _ => return Err(CliError::config("only applies to partition = gaussian")),
        },
        "skew" => match &mut c.partition {
            PartitionScheme::Skewed { skew } => *skew = num(v)?,
            _ => return Err(CliError::config("only applies to partition = skewed")),
        },
        "share" => c.share = num(v)?,
        "normalization" => {
            c.normalization = match lower.as_str() {
                "global" => NormalizationScheme::Global,
                "shifted" => NormalizationScheme::Shifted { delta: 0.1 },
                "local" => NormalizationScheme::Local,
                "means" => NormalizationScheme::Means(Vec::new()),
                _ => return Err(CliError::config(format!("unknown normalization '{v}'"))),
            }
        }
        "norm_delta" => match &mut c.normalization {
            NormalizationScheme::Shifted { delta } => *delta = num(v)?,
            _ => return Err(CliError::config("only applies to normalization = shifted")),
        },
        "norm_means" => match &mut c.normalization {
            NormalizationScheme::Means(m) => *m = list(v)?,
            _ => return Err(CliError::config("only applies to normalization = means")),
        },
        "batch" => c.batch = num(v)?,
        "topology" => {
            c.topology = match lower.replace('_', "-").as_str() {
                "cycle" => TopologyKind::Cycle,
                "ring-lattice" | "lattice" => TopologyKind::RingLattice,
                "small-world" | "ws" => TopologyKind::SmallWorld,
                "complete" => TopologyKind::Complete,
                _ => return Err(CliError::config(format!("unknown topology '{v}'"))),
            }
        }
        "k" => c.k = num(v)?,
        "p" => c.p = num(v)?,
        "mode" => {
            c.mode = match lower.as_str() {
                "dfl" | "decentralized" => Mode::Decentralized,
                "fedavg" => Mode::FedAvg { fraction: 0.5 },
                "isolated" => Mode::Isolated,
                _ => return Err(CliError::config(format!("unknown mode '{v}'"))),
            }
        }
        "fraction" => match &mut c.mode {
            Mode::FedAvg { fraction } => *fraction = num(v)?,
            _ => return Err(CliError::config("only applies to mode = fedavg")),
        },
        "setting" => c.setting = v.parse::<Setting>()?,
        "pss" => c.pss = num(v)?,
        "unit" => c.unit = v.parse::<SegmentUnit>()?,
        "mixing" => {
            c.mixing = match lower.replace('_', "-").as_str() {
                "consensus" => MixingRule::Consensus(AlphaRule::MaxDegree),
                "size-weighted" => MixingRule::SizeWeighted,
                _ => return Err(CliError::config(format!("unknown mixing rule '{v}'"))),
            }
        }
        "alpha" => match &mut c.mixing {
            MixingRule::Consensus(a) => {
                *a = if lower.replace('_', "-") == "max-degree" {
                    AlphaRule::MaxDegree
                } else {
                    AlphaRule::Constant(num(v)?)
                }
            }
            _ => return Err(CliError::config("only applies to mixing = consensus")),
        },
        "eps" => c.eps = num(v)?,
        "s_max" => c.s_max = num(v)?,
        "optimizer" => {
            c.optimizers = list::<OptimizerKind>(v)?
                .into_iter()
                .map(OptimizerSpec::with_default_rate)
                .collect()
        }
        "lr" => {
            let rates: Vec<f64> = list(v)?;
            let n = c.optimizers.len().max(rates.len());
            if c.optimizers.len() != 1 && rates.len() != 1 && c.optimizers.len() != rates.len() {
                return Err(CliError::config(format!(
                    "{} learning rates for {} optimizers",
                    rates.len(),
                    c.optimizers.len()
                )));
            }
            c.optimizers = (0..n)
                .map(|i| OptimizerSpec {
                    kind: c.optimizers[i.min(c.optimizers.len() - 1)].kind,
                    learning_rate: rates[i.min(rates.len() - 1)],
                })
                .collect();
        }
        "local_epochs" | "E" => c.local_epochs = list(v)?,
        "epochs" => c.epochs = num(v)?,
        "seed" => c.seed = num(v)?,
        "init" => {
            c.init = match lower.replace('_', "-").as_str() {
                "shared" => InitChoice::Shared,
                "per-client" => InitChoice::PerClient,
                _ => return Err(CliError::config(format!("unknown init '{v}'"))),
            }
        }
        "workers" => c.workers = num(v)?,
        _ => return Err(CliError::config(format!("unknown key '{key}'"))),
    }
    Ok(())
}

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn count(n: Option<usize>) -> String {
    n.map_or("all".into(), |n| n.to_string())
}

/// Render a config as text that [`parse_config`] reads back unchanged.
pub fn render_config(rc: &RunConfig) -> String {
    let c = &rc.config;
    let mut lines: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: String| lines.push((k.to_string(), v));
    put("name", c.name.clone());
    put("clients", c.clients.to_string());
    put("arch", match c.arch {
        ArchChoice::Small => "small",
        ArchChoice::Reference => "reference",
    }
    .into());
    put("dropout", c.dropout.to_string());
    put("data", match rc.data {
        DataChoice::Auto => "auto",
        DataChoice::Synth => "synth",
        DataChoice::Idx => "idx",
    }
    .into());
    if let Some(d) = &rc.data_dir {
        put("data_dir", d.display().to_string());
    }
    put("train_samples", count(c.data.train_samples));
    put("test_samples", count(c.data.test_samples));
    match c.partition {
        PartitionScheme::Iid => put("partition", "iid".into()),
        PartitionScheme::Full => put("partition", "full".into()),
        PartitionScheme::Gaussian { sigma2, rule } => {
            put("partition", "gaussian".into());
            put("sigma2", sigma2.to_string());
            put("size_rule", match rule {
                SizeRule::Floor => "floor",
                SizeRule::Literal => "literal",
            }
            .into());
        }
        PartitionScheme::Skewed { skew } => {
            put("partition", "skewed".into());
            put("skew", skew.to_string());
        }
    }
    put("share", c.share.to_string());
    match &c.normalization {
        NormalizationScheme::Global => put("normalization", "global".into()),
        NormalizationScheme::Local => put("normalization", "local".into()),
        NormalizationScheme::Shifted { delta } => {
            put("normalization", "shifted".into());
            put("norm_delta", delta.to_string());
        }
        NormalizationScheme::Means(m) => {
            put("normalization", "means".into());
            put("norm_means", join(m));
        }
    }
    put("batch", c.batch.to_string());
    put("topology", match c.topology {
        TopologyKind::Cycle => "cycle",
        TopologyKind::RingLattice => "ring-lattice",
        TopologyKind::SmallWorld => "small-world",
        TopologyKind::Complete => "complete",
    }
    .into());
    put("k", c.k.to_string());
    put("p", c.p.to_string());
    match c.mode {
        Mode::Decentralized => put("mode", "dfl".into()),
        Mode::Isolated => put("mode", "isolated".into()),
        Mode::FedAvg { fraction } => {
            put("mode", "fedavg".into());
            put("fraction", fraction.to_string());
        }
    }
    put("setting", c.setting.name().into());
    put("pss", c.pss.to_string());
    put("unit", c.unit.name().into());
    match c.mixing {
        MixingRule::SizeWeighted => put("mixing", "size-weighted".into()),
        MixingRule::Consensus(a) => {
            put("mixing", "consensus".into());
            put("alpha", match a {
                AlphaRule::MaxDegree => "max-degree".into(),
                AlphaRule::Constant(x) => x.to_string(),
            });
        }
    }
    put("eps", c.eps.to_string());
    put("s_max", c.s_max.to_string());
    put("optimizer", join(c.optimizers.iter().map(|o| o.kind.name())));
    put("lr", join(c.optimizers.iter().map(|o| o.learning_rate)));
    put("local_epochs", join(&c.local_epochs));
    put("epochs", c.epochs.to_string());
    put("seed", c.seed.to_string());
    put("init", match c.init {
        InitChoice::Shared => "shared",
        InitChoice::PerClient => "per-client",
    }
    .into());
    put("workers", c.workers.to_string());
    lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
