use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::{DataSource, ExperimentConfig, InitChoice, Mode, PartitionScheme, TopologyKind};
use super::metrics::{best_client, ClientRecord, EpochRecord, MetricsLog, RunMeta};
use crate::aggregation::{
    build_plan, distance_range, fedavg_round, fedavg_select, run_aggregation, AggregationPlan,
    PlanSpec,
};
use crate::data::{
    client_normalization, load_mnist_dir, partition_full, partition_gaussian_sizes, partition_iid,
    partition_skewed, share_data, synth_dataset, ClientView, Dataset, Normalization, PartitionPlan,
};
use crate::error::{DflError, Result};
use crate::model::{
    argmax, forward, init_params, loss_and_gradient, Architecture, InitMode, ModelParams,
    OptimizerState,
};
use crate::rng::{self, domain};
use crate::topology::{complete, cycle, ring_lattice, watts_strogatz, Graph};

const CLASSES: usize = 10;
const EVAL_CHUNK: usize = 256;

/// One participant: model, optimizer, data and batch cursor.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub data: ClientView,
    pub local_epochs: f64,
    order: Vec<usize>,
    cursor: usize,
    reshuffles: u64,
    seed: u64,
}

impl ClientState {
    pub fn new(
        id: usize,
        params: ModelParams,
        optimizer: OptimizerState,
        data: ClientView,
        local_epochs: f64,
        seed: u64,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(DflError::data(format!("client {id} has no samples")));
        }
        if !(local_epochs > 0.0) {
            return Err(DflError::config(format!("client {id}: E = {local_epochs} must be > 0")));
        }
        let mut c = ClientState {
            id,
            params,
            optimizer,
            data,
            local_epochs,
            order: Vec::new(),
            cursor: 0,
            reshuffles: 0,
            seed,
        };
        c.reshuffle();
        Ok(c)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.data.len()).collect();
        let mut r = rng::stream(self.seed, &[domain::SHUFFLE, self.id as u64, self.reshuffles]);
        self.order.shuffle(&mut r);
        self.reshuffles += 1;
        self.cursor = 0;
    }

    /// Optimizer steps per local update: `floor(|D_i| E_i / B)`.
    pub fn steps_per_update(&self, batch: usize) -> usize {
        // tolerance keeps exact products such as 6000 * 0.05 / 64 from flooring low
        (self.data.len() as f64 * self.local_epochs / batch as f64 + 1e-9).floor() as usize
    }

    fn next_batch(&mut self, batch: usize) -> Vec<usize> {
        let size = batch.min(self.data.len());
        if self.cursor + size > self.order.len() {
            self.reshuffle();
        }
        let b = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        b
    }
}

/// Run the client's local steps. Returns `(mean batch loss, steps)`.
///
/// With zero steps the loss of the current model on the next batch is
/// reported instead, without consuming it.
pub fn local_update(client: &mut ClientState, batch: usize, epoch: u64) -> Result<(f64, usize)> {
    if batch == 0 {
        return Err(DflError::config("batch must be >= 1"));
    }
    let steps = client.steps_per_update(batch);
    let use_dropout = client.params.arch().has_dropout();
    let mut drop_rng = rng::stream(client.seed, &[domain::DROPOUT, client.id as u64, epoch]);
    if steps == 0 {
        let size = batch.min(client.data.len());
        let pos: Vec<usize> = client.order[..size].to_vec();
        let (x, y) = client.data.batch(&pos);
        let lp = forward(&client.params, &x)?;
        return Ok((crate::model::nll_loss(&lp, &y)?, 0));
    }
    let mut total = 0.0;
    for _ in 0..steps {
        let pos = client.next_batch(batch);
        let (x, y) = client.data.batch(&pos);
        let dropout = if use_dropout { Some(&mut drop_rng) } else { None };
        let (loss, grads) = loss_and_gradient(&client.params, &x, &y, dropout)?;
        client.optimizer.step(&mut client.params, &grads)?;
        total += loss;
    }
    Ok((total / steps as f64, steps))
}

/// Normalized test inputs and labels for one normalization.
pub struct TestSet {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    image_len: usize,
}

impl TestSet {
    pub fn new(view: &ClientView) -> Self {
        let pos: Vec<usize> = (0..view.len()).collect();
        let (inputs, labels) = view.batch(&pos);
        TestSet {
            inputs,
            labels,
            image_len: view.dataset().image_len(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Fraction of test samples whose arg-max prediction is correct.
pub fn evaluate(params: &ModelParams, test: &TestSet) -> Result<f64> {
    if test.is_empty() {
        return Err(DflError::data("empty test set"));
    }
    let mut correct = 0usize;
    for (xs, ys) in test
        .inputs
        .chunks(EVAL_CHUNK * test.image_len)
        .zip(test.labels.chunks(EVAL_CHUNK))
    {
        let out = forward(params, xs)?;
        correct += out.iter().zip(ys).filter(|(lp, &y)| argmax(lp) == y).count();
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Train and test sets for a config.
pub fn load_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &config.data.source {
        DataSource::Synth => {
            let n_train = config.data.train_samples.unwrap_or(6000);
            let n_test = config.data.test_samples.unwrap_or(1000);
            let all = synth_dataset(config.seed, n_train + n_test, CLASSES)?;
            let train: Vec<usize> = (0..n_train).collect();
            let test: Vec<usize> = (n_train..n_train + n_test).collect();
            Ok((all.subset(&train), all.subset(&test)))
        }
        DataSource::Idx(dir) => {
            let (train, test) = load_mnist_dir(dir)?;
            let pick = |ds: Dataset, n: Option<usize>, tag: u64| -> Result<Dataset> {
                match n {
                    None => Ok(ds),
                    Some(n) if n > ds.len() => Err(DflError::config(format!(
                        "asked for {n} samples, file holds {}",
                        ds.len()
                    ))),
                    Some(n) => {
                        let mut idx: Vec<usize> = (0..ds.len()).collect();
                        idx.shuffle(&mut rng::stream(config.seed, &[domain::PARTITION, 9, tag]));
                        idx.truncate(n);
                        idx.sort_unstable();
                        Ok(ds.subset(&idx))
                    }
                }
            };
            Ok((
                pick(train, config.data.train_samples, 0)?,
                pick(test, config.data.test_samples, 1)?,
            ))
        }
    }
}

/// Client partition (after sharing) with per-client normalization filled in.
pub fn build_partition(config: &ExperimentConfig, train: &Dataset) -> Result<PartitionPlan> {
    let (k, seed) = (config.clients, config.seed);
    let mut plan = match config.partition {
        PartitionScheme::Iid => partition_iid(train, k, seed)?,
        PartitionScheme::Full => partition_full(train, k)?,
        PartitionScheme::Gaussian { sigma2, rule } => {
            partition_gaussian_sizes(train, k, sigma2, config.batch, seed, rule)?
        }
        PartitionScheme::Skewed { skew } => partition_skewed(train, k, skew, None, seed)?,
    };
    if config.share > 0.0 {
        plan = share_data(&plan, config.share, seed)?;
    }
    plan.normalization = client_normalization(train, &plan, &config.normalization)?;
    Ok(plan)
}

pub fn client_graph(config: &ExperimentConfig) -> Result<Graph> {
    let k = config.clients;
    match config.topology {
        TopologyKind::Cycle => cycle(k),
        TopologyKind::RingLattice => ring_lattice(k, config.k),
        TopologyKind::SmallWorld => watts_strogatz(k, config.k, config.p, config.seed),
        TopologyKind::Complete => complete(k),
    }
}

fn norm_key(n: Normalization) -> (u64, u64) {
    (n.mean.to_bits(), n.std.to_bits())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| DflError::config(format!("cannot start worker pool: {e}")))
}

fn finite_models(models: &[ModelParams]) -> bool {
    models.iter().all(ModelParams::is_finite)
}

fn pairwise_range(models: &[ModelParams]) -> Result<(f64, f64)> {
    if models.len() < 2 {
        Ok((0.0, 0.0))
    } else {
        distance_range(models)
    }
}

/// Run a whole experiment: for each epoch, local updates on every active
/// client, then aggregation, then evaluation.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsLog> {
    config.validate()?;
    let (train, test) = load_data(config)?;
    run_experiment_with(config, train, test)
}

/// [`run_experiment`] on already loaded data.
pub fn run_experiment_with(config: &ExperimentConfig, train: Dataset, test: Dataset) -> Result<MetricsLog> {
    config.validate()?;
    config.check_train_size(train.len())?;
    if test.is_empty() {
        return Err(DflError::data("empty test set"));
    }
    let k = config.clients;
    let seed = config.seed;
    let arch = Arc::new(config.arch.build(train.shape(), train.classes(), config.dropout)?);
    let plan = build_partition(config, &train)?;
    let train = Arc::new(train);
    let test = Arc::new(test);

    let mut warnings = Vec::new();
    let optimizers = config.client_optimizers()?;
    let local_epochs = config.client_local_epochs()?;
    let mut clients = Vec::with_capacity(k);
    for c in 0..k {
        let init = match config.init {
            InitChoice::Shared => InitMode::SharedUniform,
            InitChoice::PerClient => InitMode::PerClientRandom { client: c },
        };
        let params = init_params(&arch, seed, init);
        let opt = OptimizerState::new(optimizers[c].kind, optimizers[c].learning_rate, arch.param_count())?;
        let view = ClientView::new(Arc::clone(&train), plan.parts[c].clone(), plan.normalization[c])?;
        let state = ClientState::new(c, params, opt, view, local_epochs[c], seed)?;
        let steps = state.steps_per_update(config.batch);
        if steps == 0 {
            warnings.push(format!(
                "client {c}: floor(|D| E / B) = 0, no local steps will run"
            ));
        }
        clients.push(state);
    }

    // one normalized copy of the test set per distinct normalization
    let mut test_sets: HashMap<(u64, u64), TestSet> = HashMap::new();
    for n in &plan.normalization {
        test_sets
            .entry(norm_key(*n))
            .or_insert_with(|| TestSet::new(&ClientView::full(Arc::clone(&test), *n).expect("checked")));
    }

    let initial: Vec<ModelParams> = clients.iter().map(|c| c.params.clone()).collect();
    let meta = RunMeta {
        name: config.name.clone(),
        seed,
        clients: k,
        param_count: arch.param_count(),
        client_sizes: plan.sizes(),
        local_steps: clients.iter().map(|c| c.steps_per_update(config.batch)).collect(),
        initial_distance: pairwise_range(&initial)?,
        warnings,
    };
    let mut log = MetricsLog {
        meta,
        epochs: Vec::with_capacity(config.epochs),
        diverged_at: None,
    };

    let sizes = plan.sizes();
    let graph = if matches!(config.mode, Mode::Decentralized) && k >= 2 {
        let g = client_graph(config)?;
        if !g.is_connected() {
            log.meta.warnings.push("client graph is disconnected".into());
        }
        Some(g)
    } else {
        None
    };
    let plan_spec = graph.as_ref().map(|g| PlanSpec {
        setting: config.setting,
        graph: g.clone(),
        k: config.k,
        p: config.p,
        pss: config.pss,
        unit: config.unit,
        seed,
    });
    let mut fixed_plan: Option<AggregationPlan> = None;
    let mut selected: Vec<usize> = match config.mode {
        Mode::FedAvg { fraction } => fedavg_select(k, fraction, seed, 0)?,
        _ => (0..k).collect(),
    };
    let workers = pool(config.workers)?;

    for epoch in 1..=config.epochs {
        let t = epoch as u64;
        let batch = config.batch;
        let active: Vec<bool> = (0..k).map(|c| selected.binary_search(&c).is_ok()).collect();
        let results: Vec<Result<(f64, usize)>> = workers.install(|| {
            clients
                .par_iter_mut()
                .zip(active.par_iter())
                .map(|(c, &on)| if on { local_update(c, batch, t) } else { Ok((f64::NAN, 0)) })
                .collect()
        });
        let mut losses = Vec::with_capacity(k);
        let mut steps = Vec::with_capacity(k);
        for r in results {
            let (l, s) = r?;
            losses.push(l);
            steps.push(s);
        }
        let mut models: Vec<ModelParams> = clients.iter().map(|c| c.params.clone()).collect();
        let trained_ok = losses
            .iter()
            .zip(&active)
            .all(|(l, &on)| !on || l.is_finite());
        if !trained_ok || !finite_models(&models) {
            log.diverged_at = Some(epoch);
            break;
        }

        let mut iterations = 0;
        let mut floats = 0;
        let mut server = None;
        match config.mode {
            Mode::Decentralized => {
                if let Some(spec) = &plan_spec {
                    let per_epoch;
                    let plan = if config.setting.is_per_epoch() {
                        per_epoch = build_plan(spec, &arch, t)?;
                        &per_epoch
                    } else {
                        if fixed_plan.is_none() {
                            fixed_plan = Some(build_plan(spec, &arch, 0)?);
                        }
                        fixed_plan.as_ref().expect("just built")
                    };
                    let out = run_aggregation(models, plan, &sizes, config.eps, config.s_max, config.mixing)?;
                    models = out.models;
                    iterations = out.iterations;
                    floats = out.floats_shared;
                }
            }
            Mode::FedAvg { fraction } => {
                let (s, next) = fedavg_round(&mut models, &selected, fraction, seed, t)?;
                // uploads from the round's clients plus downloads to the next round's
                floats = ((selected.len() + next.len()) * arch.param_count()) as u64;
                server = Some(s);
                selected = next;
            }
            Mode::Isolated => {}
        }
        if !finite_models(&models) {
            log.diverged_at = Some(epoch);
            break;
        }
        for (c, m) in clients.iter_mut().zip(&models) {
            c.params = m.clone();
        }

        let accs: Vec<f64> = workers.install(|| {
            clients
                .par_iter()
                .map(|c| evaluate(&c.params, &test_sets[&norm_key(c.data.normalization())]))
                .collect::<Result<Vec<f64>>>()
        })?;
        let best = best_client(&losses);
        let best_acc = match &server {
            Some(s) => evaluate(s, &test_sets[&norm_key(plan.normalization[0])])?,
            None => accs[best],
        };
        let (dist_min, dist_max) = pairwise_range(&models)?;
        log.epochs.push(EpochRecord {
            epoch,
            clients: (0..k)
                .map(|c| ClientRecord {
                    client: c,
                    train_loss: losses[c],
                    test_acc: accs[c],
                    steps: steps[c],
                })
                .collect(),
            best_client: best,
            best_acc,
            mean_acc: accs.iter().sum::<f64>() / k as f64,
            dist_min,
            dist_max,
            consensus_iters: iterations,
            floats_shared: floats,
        });
    }
    Ok(log)
}

/// Architecture a config would build for the given data.
pub fn config_architecture(config: &ExperimentConfig, train: &Dataset) -> Result<Architecture> {
    config.arch.build(train.shape(), train.classes(), config.dropout)
}
