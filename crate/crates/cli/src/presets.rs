//! Desk-scale scenario presets (at most 10 clients, 10k samples, 50 epochs).

use dfl_core::aggregation::Setting;
use dfl_core::data::{NormalizationScheme, SizeRule};
use dfl_core::sim::{InitChoice, Mode, OptimizerSpec, PartitionScheme, TopologyKind};
use dfl_core::OptimizerKind;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub struct Preset {
    pub name: &'static str,
    pub about: &'static str,
    build: fn(&mut RunConfig),
}

impl Preset {
    pub fn config(&self) -> RunConfig {
        let mut rc = RunConfig::default();
        rc.config.name = self.name.to_string();
        (self.build)(&mut rc);
        rc
    }
}

fn local_epochs(rc: &mut RunConfig, e: f64, batch: usize, epochs: usize) {
    rc.config.local_epochs = vec![e];
    rc.config.batch = batch;
    rc.config.epochs = epochs;
}

fn table2(rc: &mut RunConfig) {
    rc.config.init = InitChoice::PerClient;
    rc.config.partition = PartitionScheme::Full;
}

fn segmented(rc: &mut RunConfig, setting: Setting) {
    let c = &mut rc.config;
    c.clients = 10;
    c.topology = TopologyKind::SmallWorld;
    c.k = 2;
    c.p = 0.5;
    c.setting = setting;
    c.pss = 0.5;
    c.s_max = 20;
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "baseline-single",
        about: "one client on all data, no communication",
        build: |rc| {
            rc.config.clients = 1;
            rc.config.mode = Mode::Isolated;
        },
    },
    Preset {
        name: "fedavg-star",
        about: "10 clients, server averages half of them each round",
        build: |rc| {
            rc.config.clients = 10;
            rc.config.mode = Mode::FedAvg { fraction: 0.5 };
        },
    },
    Preset {
        name: "table1-E1",
        about: "5 clients on a cycle, one local epoch per aggregation",
        build: |rc| local_epochs(rc, 1.0, 64, 10),
    },
    Preset {
        name: "table1-E0.05",
        about: "5 clients on a cycle, 5% of local data per aggregation (batch 6)",
        build: |rc| local_epochs(rc, 0.05, 6, 40),
    },
    Preset {
        name: "table1-E0.005",
        about: "5 clients on a cycle, one step per aggregation (batch 6)",
        build: |rc| local_epochs(rc, 0.005, 6, 50),
    },
    Preset {
        name: "table2-E1",
        about: "per-client random inits, every client holds all data",
        build: |rc| {
            table2(rc);
            local_epochs(rc, 1.0, 64, 10);
        },
    },
    Preset {
        name: "table2-E0.05",
        about: "per-client random inits, full data, 5% per aggregation",
        build: |rc| {
            table2(rc);
            local_epochs(rc, 0.05, 64, 20);
        },
    },
    Preset {
        name: "table2-E0.005",
        about: "per-client random inits, full data, 0.5% per aggregation (batch 6)",
        build: |rc| {
            table2(rc);
            local_epochs(rc, 0.005, 6, 30);
        },
    },
    Preset {
        name: "gaussian-sizes",
        about: "10 clients with Gaussian-distributed data sizes (sigma2 = 10)",
        build: |rc| {
            rc.config.clients = 10;
            rc.config.partition = PartitionScheme::Gaussian { sigma2: 10.0, rule: SizeRule::Floor };
        },
    },
    Preset {
        name: "skewed-sharing-S0",
        about: "10 single-label clients, no sharing, 30 epochs",
        build: |rc| {
            rc.config.clients = 10;
            rc.config.partition = PartitionScheme::Skewed { skew: 1.0 };
            rc.config.epochs = 30;
        },
    },
    Preset {
        name: "skewed-sharing-S0.1",
        about: "10 single-label clients sharing 10% of their data, 30 epochs",
        build: |rc| {
            rc.config.clients = 10;
            rc.config.partition = PartitionScheme::Skewed { skew: 1.0 };
            rc.config.share = 0.1;
            rc.config.epochs = 30;
        },
    },
    Preset {
        name: "norm-shift",
        about: "5 clients normalizing with stepped mean offsets",
        build: |rc| rc.config.normalization = NormalizationScheme::Shifted { delta: 0.1 },
    },
    Preset {
        name: "norm-local",
        about: "5 clients normalizing with their own statistics",
        build: |rc| rc.config.normalization = NormalizationScheme::Local,
    },
    Preset {
        name: "mixed-lr",
        about: "10 Adadelta clients with learning rates from 0.001 to 5",
        build: |rc| {
            rc.config.clients = 10;
            rc.config.optimizers = [0.001, 0.01, 0.1, 1.0, 5.0]
                .repeat(2)
                .into_iter()
                .map(|lr| OptimizerSpec { kind: OptimizerKind::Adadelta, learning_rate: lr })
                .collect();
        },
    },
    Preset {
        name: "mixed-optim",
        about: "5 clients, each with a different optimizer at its default rate",
        build: |rc| {
            rc.config.optimizers =
                OptimizerKind::ALL.into_iter().map(OptimizerSpec::with_default_rate).collect();
        },
    },
    Preset {
        name: "segmented-default",
        about: "10 clients, small world, half of the segments per client",
        build: |rc| segmented(rc, Setting::Default),
    },
    Preset {
        name: "segmented-per-epoch",
        about: "as segmented-default with segments redrawn every epoch",
        build: |rc| segmented(rc, Setting::PerEpochSegments),
    },
    Preset {
        name: "segmented-complete",
        about: "as segmented-default on a complete graph",
        build: |rc| segmented(rc, Setting::CompleteGraph),
    },
    Preset {
        name: "segmented-per-segment-topology",
        about: "shared segment sets, one small-world graph per segment",
        build: |rc| segmented(rc, Setting::PerSegmentTopology),
    },
    Preset {
        name: "segmented-directed",
        about: "segments and graphs redrawn each epoch, pull-only updates",
        build: |rc| segmented(rc, Setting::DirectedRandom),
    },
    Preset {
        name: "comm-cost",
        about: "segmented-default at PSS 0.25; sweep with --set pss=...",
        build: |rc| {
            segmented(rc, Setting::Default);
            rc.config.pss = 0.25;
        },
    },
];

pub fn find(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
        CliError::config(format!("unknown preset '{name}' (known: {})", names.join(", ")))
    })
}
