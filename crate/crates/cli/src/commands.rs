use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dfl_core::data::{expected_skewedness, share_data, SizeRule};
use dfl_core::sim::{build_partition, load_data, run_experiment_with, PartitionScheme};
use dfl_core::topology::{
    algebraic_connectivity, complete, cycle, ring_lattice, star, watts_strogatz,
};

use crate::config::{apply_pairs, parse_config, render_config, DataChoice, RunConfig, DATA_DIR_ENV};
use crate::error::{CliError, Result};
use crate::output::{read_aggregate_column, write_manifest, write_results, Manifest, OutputPaths, THRESHOLDS};
use crate::presets::{find, PRESETS};

#[derive(Debug, Parser)]
#[command(name = "dfl", version, about = "Decentralized federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a communication graph and report its connectivity.
    Topology(TopologyArgs),
    /// Split a dataset across clients and report sizes and label skew.
    Partition(PartitionArgs),
    /// Run an experiment and write manifest, metrics and summary.
    Run(RunArgs),
    /// Recompute accuracy thresholds from a metrics CSV.
    Thresholds(ThresholdArgs),
    /// List the built-in scenario presets.
    Presets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphKind {
    Cycle,
    Lattice,
    Ws,
    Complete,
    /// Node 0 linked to every other node.
    Star,
}

#[derive(Debug, Args)]
pub struct TopologyArgs {
    #[arg(long, value_enum)]
    pub kind: GraphKind,
    #[arg(long)]
    pub nodes: usize,
    /// Lattice degree (lattice, ws).
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Rewiring probability (ws).
    #[arg(long, default_value_t = 0.0)]
    pub p: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also print the edge list.
    #[arg(long)]
    pub edges: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Iid,
    Full,
    Gaussian,
    Skewed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SizeRuleArg {
    Floor,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataArg {
    Auto,
    Synth,
    Idx,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long, value_enum, default_value = "iid")]
    pub scheme: SchemeArg,
    #[arg(long, visible_alias = "K", default_value_t = 10)]
    pub clients: usize,
    /// Label skewedness U (skewed scheme).
    #[arg(long, visible_alias = "U", default_value_t = 1.0)]
    pub skew: f64,
    /// Fraction S of each client's data shared with the others.
    #[arg(long, visible_alias = "S", default_value_t = 0.0)]
    pub share: f64,
    /// Size variance (gaussian scheme).
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Batch size; the minimum client size under the gaussian scheme.
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, value_enum, default_value = "floor")]
    pub size_rule: SizeRuleArg,
    /// Training samples to split.
    #[arg(long, default_value_t = 6000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "auto")]
    pub data: DataArg,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Config file with `key = value` lines.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in scenario (see `dfl presets`).
    #[arg(long)]
    pub preset: Option<String>,
    /// Override a config key, e.g. `--set epochs=3`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory; defaults to `runs/<name>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for client updates (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// Accuracy level in percent; repeatable. Defaults to 90, 95, 98, 99.
    #[arg(long)]
    pub p: Vec<f64>,
    /// Column of the aggregate rows to scan.
    #[arg(long, default_value = "best_acc")]
    pub column: String,
}

fn env_data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Topology(a) => cmd_topology(&a, out),
        Command::Partition(a) => cmd_partition(&a, out),
        Command::Run(a) => cmd_run(&a, out),
        Command::Thresholds(a) => cmd_thresholds(&a, out),
        Command::Presets => {
            for p in PRESETS {
                writeln!(out, "{:<32} {}", p.name, p.about)?;
            }
            Ok(())
        }
    }
}

pub fn cmd_topology(a: &TopologyArgs, out: &mut dyn Write) -> Result<()> {
    let g = match a.kind {
        GraphKind::Cycle => cycle(a.nodes)?,
        GraphKind::Lattice => ring_lattice(a.nodes, a.k)?,
        GraphKind::Ws => watts_strogatz(a.nodes, a.k, a.p, a.seed)?,
        GraphKind::Complete => complete(a.nodes)?,
        GraphKind::Star => star(a.nodes.checked_sub(1).ok_or_else(|| CliError::config("star needs nodes >= 1"))?)?,
    };
    writeln!(out, "nodes {}", g.nodes())?;
    writeln!(out, "edges {}", g.edge_count())?;
    writeln!(out, "connected {}", g.is_connected())?;
    writeln!(out, "max_degree {}", g.max_degree())?;
    writeln!(out, "lambda2 {}", algebraic_connectivity(&g)?)?;
    if a.edges {
        write!(out, "{}", g.to_edge_list())?;
    }
    Ok(())
}

pub fn cmd_partition(a: &PartitionArgs, out: &mut dyn Write) -> Result<()> {
    let mut rc = RunConfig {
        data: match a.data {
            DataArg::Auto => DataChoice::Auto,
            DataArg::Synth => DataChoice::Synth,
            DataArg::Idx => DataChoice::Idx,
        },
        data_dir: a.data_dir.clone(),
        ..RunConfig::default()
    };
    let c = &mut rc.config;
    c.clients = a.clients;
    c.batch = a.batch;
    c.seed = a.seed;
    c.data.train_samples = Some(a.samples);
    c.data.test_samples = Some(1);
    c.partition = match a.scheme {
        SchemeArg::Iid => PartitionScheme::Iid,
        SchemeArg::Full => PartitionScheme::Full,
        SchemeArg::Gaussian => PartitionScheme::Gaussian {
            sigma2: a.sigma2,
            rule: match a.size_rule {
                SizeRuleArg::Floor => SizeRule::Floor,
                SizeRuleArg::Literal => SizeRule::Literal,
            },
        },
        SchemeArg::Skewed => PartitionScheme::Skewed { skew: a.skew },
    };
    c.share = a.share;
    let config = rc.resolve(env_data_dir())?;
    config.validate()?;
    let (train, _) = load_data(&config)?;

    let base = build_partition(&config_without_share(&config), &train)?;
    let plan = if a.share > 0.0 { share_data(&base, a.share, a.seed)? } else { base.clone() };
    let base_sizes = base.sizes();
    let skewed = matches!(a.scheme, SchemeArg::Skewed);

    writeln!(out, "samples {}  clients {}  scheme {:?}  share {}", train.len(), plan.clients(), a.scheme, a.share)?;
    writeln!(out, "{:>6} {:>8} {:>7} {:>9} {:>9}", "client", "size", "labels", "own_frac", "expected")?;
    for (i, part) in plan.parts.iter().enumerate() {
        let mut seen = vec![false; train.classes()];
        part.iter().for_each(|&s| seen[train.label(s)] = true);
        let labels = seen.iter().filter(|&&b| b).count();
        let (own, expected) = if skewed {
            (
                format!("{:.4}", plan.measured_skewedness(&train, i)),
                format!("{:.4}", expected_skewedness(a.skew, a.share, &base_sizes, i)),
            )
        } else {
            ("-".into(), "-".into())
        };
        writeln!(out, "{i:>6} {:>8} {labels:>7} {own:>9} {expected:>9}", part.len())?;
    }
    Ok(())
}

fn config_without_share(config: &dfl_core::sim::ExperimentConfig) -> dfl_core::sim::ExperimentConfig {
    let mut c = config.clone();
    c.share = 0.0;
    c
}

/// Config for `dfl run`: preset or file, then `--set` overrides.
pub fn run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut rc = match (&a.config, &a.preset) {
        (Some(path), _) => parse_config(&fs::read_to_string(path)?, RunConfig::default())?,
        (None, Some(name)) => find(name)?.config(),
        (None, None) => return Err(CliError::config("give --config or --preset")),
    };
    let pairs = a
        .overrides
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    apply_pairs(&mut rc, pairs.iter().copied())?;
    if let Some(w) = a.workers {
        rc.config.workers = w;
    }
    Ok(rc)
}

pub fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<()> {
    let rc = run_config(a)?;
    let config = rc.resolve(env_data_dir())?;
    config.validate()?;

    let dir = a.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&config.name));
    fs::create_dir_all(&dir)?;
    let paths = OutputPaths::in_dir(&dir);
    write_manifest(&Manifest::new(&config, render_config(&rc), paths.clone()))?;

    let (train, test) = load_data(&config)?;
    let log = run_experiment_with(&config, train, test)?;
    let summary = write_results(&paths, &log)?;

    writeln!(out, "scenario {}", summary.scenario)?;
    writeln!(out, "epochs {}", summary.epochs_run)?;
    writeln!(out, "max_best_acc {:.4}", summary.max_best_acc)?;
    writeln!(out, "max_mean_acc {:.4}", summary.max_mean_acc)?;
    writeln!(out, "floats_shared {}", summary.total_floats_shared)?;
    for w in &summary.warnings {
        writeln!(out, "warning: {w}")?;
    }
    writeln!(out, "outputs {}", dir.display())?;
    match log.diverged_at {
        Some(e) => Err(CliError::Diverged(e)),
        None => Ok(()),
    }
}

pub fn cmd_thresholds(a: &ThresholdArgs, out: &mut dyn Write) -> Result<()> {
    let column = read_aggregate_column(&a.csv, &a.column)?;
    let levels = if a.p.is_empty() { THRESHOLDS.to_vec() } else { a.p.clone() };
    for p in levels {
        let hit = column.iter().find(|(_, v)| *v > p / 100.0).map(|(e, _)| *e);
        match hit {
            Some(e) => writeln!(out, "e_{p} {e}")?,
            None => writeln!(out, "e_{p} -")?,
        }
    }
    Ok(())
}
