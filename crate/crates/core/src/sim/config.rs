use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::aggregation::{MixingRule, Setting};
use crate::data::{NormalizationScheme, SizeRule};
use crate::error::{DflError, Result};
use crate::model::{Architecture, OptimizerKind, Shape3};
use crate::segment::SegmentUnit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ArchChoice {
    /// Two small conv layers and two dense layers.
    #[default]
    Small,
    /// 32/64/128-channel network with dropout sites.
    Reference,
}

impl ArchChoice {
    pub fn build(self, input: Shape3, classes: usize, dropout: bool) -> Result<Architecture> {
        let arch = match self {
            ArchChoice::Small => Architecture::small(input, classes)?,
            ArchChoice::Reference => Architecture::reference(input, classes)?,
        };
        Ok(if dropout { arch } else { arch.without_dropout() })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum DataSource {
    /// Synthetic glyphs generated from the run seed.
    #[default]
    Synth,
    /// A directory with the four standard IDX files.
    Idx(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub source: DataSource,
    /// Training samples used; `None` keeps the whole file (IDX only).
    pub train_samples: Option<usize>,
    pub test_samples: Option<usize>,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            source: DataSource::Synth,
            train_samples: Some(6000),
            test_samples: Some(1000),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum PartitionScheme {
    #[default]
    Iid,
    /// Every client holds the entire training set.
    Full,
    Gaussian { sigma2: f64, rule: SizeRule },
    /// Label-skewed split; requires one client per class.
    Skewed { skew: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TopologyKind {
    #[default]
    Cycle,
    RingLattice,
    SmallWorld,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum Mode {
    /// Peer-to-peer mixing after local training.
    #[default]
    Decentralized,
    /// Server averages a random fraction of clients each round.
    FedAvg { fraction: f64 },
    /// No communication at all.
    Isolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InitChoice {
    /// All clients start from the same parameters.
    #[default]
    Shared,
    PerClient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
}

impl OptimizerSpec {
    pub fn with_default_rate(kind: OptimizerKind) -> Self {
        OptimizerSpec {
            kind,
            learning_rate: kind.default_learning_rate(),
        }
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub clients: usize,
    pub arch: ArchChoice,
    pub dropout: bool,
    pub data: DataSpec,
    pub partition: PartitionScheme,
    /// Fraction of each client's data copied to the others.
    pub share: f64,
    pub normalization: NormalizationScheme,
    pub batch: usize,
    pub topology: TopologyKind,
    /// Lattice degree for ring-lattice and small-world graphs (also used for
    /// per-segment graphs).
    pub k: usize,
    /// Rewiring probability for small-world graphs.
    pub p: f64,
    pub mode: Mode,
    pub setting: Setting,
    pub pss: f64,
    pub unit: SegmentUnit,
    pub mixing: MixingRule,
    pub eps: f64,
    pub s_max: usize,
    /// One entry for all clients, or one per client.
    pub optimizers: Vec<OptimizerSpec>,
    /// Local epochs per aggregation; one entry or one per client.
    pub local_epochs: Vec<f64>,
    pub epochs: usize,
    pub seed: u64,
    pub init: InitChoice,
    /// Worker threads for client updates; 0 picks the machine default.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "custom".into(),
            clients: 5,
            arch: ArchChoice::Small,
            dropout: false,
            data: DataSpec::default(),
            partition: PartitionScheme::Iid,
            share: 0.0,
            normalization: NormalizationScheme::Global,
            batch: 64,
            topology: TopologyKind::Cycle,
            k: 2,
            p: 0.0,
            mode: Mode::Decentralized,
            setting: Setting::Default,
            pss: 1.0,
            unit: SegmentUnit::OutChannel,
            mixing: MixingRule::default(),
            eps: 0.1,
            s_max: 100,
            optimizers: vec![OptimizerSpec::with_default_rate(OptimizerKind::Adam)],
            local_epochs: vec![1.0],
            epochs: 10,
            seed: 1,
            init: InitChoice::Shared,
            workers: 0,
        }
    }
}

fn per_client<T: Copy>(values: &[T], clients: usize, what: &str) -> Result<Vec<T>> {
    match values.len() {
        1 => Ok(vec![values[0]; clients]),
        n if n == clients => Ok(values.to_vec()),
        n => Err(DflError::config(format!(
            "{what}: expected 1 or {clients} values, got {n}"
        ))),
    }
}

impl ExperimentConfig {
    pub fn client_optimizers(&self) -> Result<Vec<OptimizerSpec>> {
        per_client(&self.optimizers, self.clients, "optimizers")
    }

    pub fn client_local_epochs(&self) -> Result<Vec<f64>> {
        per_client(&self.local_epochs, self.clients, "local_epochs")
    }

    /// Check every precondition that does not need the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DflError::Config(m));
        if self.clients == 0 {
            return bad("clients must be >= 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps = {} must be > 0", self.eps));
        }
        if self.s_max == 0 {
            return bad("s_max must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.share) {
            return bad(format!("share = {} outside [0, 1]", self.share));
        }
        if !(self.pss > 0.0 && self.pss <= 1.0) {
            return bad(format!("pss = {} outside (0, 1]", self.pss));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p = {} outside [0, 1]", self.p));
        }
        for o in self.client_optimizers()? {
            if !(o.learning_rate > 0.0) || !o.learning_rate.is_finite() {
                return bad(format!("learning rate {} must be > 0", o.learning_rate));
            }
        }
        for e in self.client_local_epochs()? {
            if !(e > 0.0) || !e.is_finite() {
                return bad(format!("local epochs E = {e} must be > 0"));
            }
        }
        match self.partition {
            PartitionScheme::Skewed { skew } if !(0.0..=1.0).contains(&skew) => {
                return bad(format!("skew = {skew} outside [0, 1]"));
            }
            PartitionScheme::Gaussian { sigma2, .. } if !(sigma2 >= 0.0) => {
                return bad(format!("sigma2 = {sigma2} must be >= 0"));
            }
            _ => {}
        }
        if let Mode::FedAvg { fraction } = self.mode {
            crate::aggregation::fedavg_participants(self.clients, fraction)?;
        }
        if matches!(self.mode, Mode::Decentralized) && self.clients >= 2 {
            match self.topology {
                TopologyKind::RingLattice | TopologyKind::SmallWorld
                    if self.k % 2 == 1 || self.k >= self.clients || self.k == 0 =>
                {
                    return bad(format!(
                        "lattice degree k = {} must be even, >= 2 and < clients = {}",
                        self.k, self.clients
                    ));
                }
                _ => {}
            }
        }
        if let Some(n) = self.data.train_samples {
            self.check_train_size(n)?;
        }
        if self.data.test_samples == Some(0) {
            return bad("test_samples must be >= 1".into());
        }
        Ok(())
    }

    /// Constraints that depend on the number of training samples.
    pub fn check_train_size(&self, n: usize) -> Result<()> {
        if self.clients * self.batch > n {
            return Err(DflError::config(format!(
                "clients * batch = {} * {} exceeds the {n} training samples (need K <= N / B)",
                self.clients, self.batch
            )));
        }
        Ok(())
    }
}
