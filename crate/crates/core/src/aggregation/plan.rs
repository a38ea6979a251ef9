use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::consensus::{mix, weighted, AlphaRule};
use crate::error::{DflError, Result};
use crate::model::{Architecture, ModelParams};
use crate::rng::{self, domain};
use crate::segment::{
    enumerate_segments, segment_slice, select_segments, SegmentId, SegmentIndexSet, SegmentSlice,
    SegmentUnit, SelectionPolicy,
};
use crate::topology::{complete, watts_strogatz, Graph};

/// Segmented sharing settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Setting {
    /// Fixed client graph, fixed per-client segment sets.
    #[default]
    Default,
    /// Fixed client graph, per-client segment sets redrawn every epoch.
    PerEpochSegments,
    /// Complete client graph, fixed per-client segment sets.
    CompleteGraph,
    /// One fixed small-world graph per segment; all clients share one set.
    PerSegmentTopology,
    /// Every epoch each client redraws its set and every chosen segment gets
    /// a fresh small-world graph. A client pulls from its neighbors only for
    /// the segments it chose, so information flow is directed.
    DirectedRandom,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::Default,
        Setting::PerEpochSegments,
        Setting::CompleteGraph,
        Setting::PerSegmentTopology,
        Setting::DirectedRandom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Default => "default",
            Setting::PerEpochSegments => "per-epoch-segments",
            Setting::CompleteGraph => "complete-graph",
            Setting::PerSegmentTopology => "per-segment-topology",
            Setting::DirectedRandom => "directed-random",
        }
    }

    pub fn policy(self) -> SelectionPolicy {
        match self {
            Setting::Default | Setting::CompleteGraph => SelectionPolicy::FixedPerClient,
            Setting::PerEpochSegments | Setting::DirectedRandom => SelectionPolicy::PerEpoch,
            Setting::PerSegmentTopology => SelectionPolicy::SharedAcrossClients,
        }
    }

    /// Whether the plan changes from epoch to epoch.
    pub fn is_per_epoch(self) -> bool {
        matches!(self, Setting::PerEpochSegments | Setting::DirectedRandom)
    }

    fn has_segment_graphs(self) -> bool {
        matches!(self, Setting::PerSegmentTopology | Setting::DirectedRandom)
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Setting {
    type Err = DflError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Setting::ALL
            .into_iter()
            .find(|st| st.name() == key)
            .ok_or_else(|| DflError::config(format!("unknown aggregation setting '{s}'")))
    }
}

/// How a polled segment is combined with the client's own copy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MixingRule {
    Consensus(AlphaRule),
    /// Mean weighted by local dataset sizes.
    SizeWeighted,
}

impl Default for MixingRule {
    fn default() -> Self {
        MixingRule::Consensus(AlphaRule::MaxDegree)
    }
}

/// Inputs from which a plan is built for any epoch.
#[derive(Debug, Clone)]
pub struct PlanSpec {
    pub setting: Setting,
    /// Client graph (replaced by the complete graph for `CompleteGraph`).
    pub graph: Graph,
    /// Ring-lattice degree and rewiring probability for per-segment graphs.
    pub k: usize,
    pub p: f64,
    pub pss: f64,
    pub unit: SegmentUnit,
    pub seed: u64,
}

impl PlanSpec {
    /// Spec whose client graph is `watts_strogatz(clients, k, p, seed)`.
    pub fn small_world(
        setting: Setting,
        clients: usize,
        k: usize,
        p: f64,
        pss: f64,
        seed: u64,
    ) -> Result<Self> {
        Ok(PlanSpec {
            setting,
            graph: watts_strogatz(clients, k, p, seed)?,
            k,
            p,
            pss,
            unit: SegmentUnit::OutChannel,
            seed,
        })
    }
}

/// Everything needed to run one epoch's aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationPlan {
    pub setting: Setting,
    pub epoch: u64,
    pub graph: Graph,
    pub segments: Vec<SegmentId>,
    /// Per-segment graphs, keyed by segment, for the settings that use them.
    pub segment_graphs: Option<BTreeMap<SegmentId, Graph>>,
    pub client_sets: Vec<SegmentIndexSet>,
}

impl AggregationPlan {
    pub fn clients(&self) -> usize {
        self.client_sets.len()
    }

    /// Segments in at least one client's set, ascending.
    pub fn shared_segments(&self) -> BTreeSet<SegmentId> {
        self.client_sets.iter().flat_map(|s| s.ids.iter().copied()).collect()
    }

    /// Graph governing one segment's mixing.
    pub fn graph_for(&self, id: &SegmentId) -> &Graph {
        self.segment_graphs
            .as_ref()
            .and_then(|m| m.get(id))
            .unwrap_or(&self.graph)
    }
}

fn segment_graph_seed(seed: u64, epoch: u64, index: usize) -> u64 {
    rng::stream(seed, &[domain::SEGMENT_GRAPH, epoch, index as u64]).random()
}

/// Build the plan for one epoch. Fixed settings return the same plan for
/// every epoch.
pub fn build_plan(spec: &PlanSpec, arch: &Architecture, epoch: u64) -> Result<AggregationPlan> {
    let clients = spec.graph.nodes();
    if clients < 2 {
        return Err(DflError::config("aggregation needs at least two clients"));
    }
    let setting = spec.setting;
    let graph = match setting {
        Setting::CompleteGraph => complete(clients)?,
        _ => spec.graph.clone(),
    };
    let policy = setting.policy();
    let draw_epoch = if setting.is_per_epoch() { epoch } else { 0 };
    let client_sets = (0..clients)
        .map(|c| select_segments(arch, spec.unit, spec.pss, spec.seed, policy, c, draw_epoch))
        .collect::<Result<Vec<_>>>()?;
    let segments = enumerate_segments(arch, spec.unit);
    let segment_graphs = if setting.has_segment_graphs() {
        let used: BTreeSet<SegmentId> = client_sets.iter().flat_map(|s| s.ids.iter().copied()).collect();
        let mut map = BTreeMap::new();
        for (index, id) in segments.iter().enumerate() {
            if used.contains(id) {
                let g = watts_strogatz(clients, spec.k, spec.p, segment_graph_seed(spec.seed, draw_epoch, index))?;
                map.insert(*id, g);
            }
        }
        Some(map)
    } else {
        None
    };
    Ok(AggregationPlan {
        setting,
        epoch,
        graph,
        segments,
        segment_graphs,
        client_sets,
    })
}

/// Result of one aggregation phase.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutcome {
    pub models: Vec<ModelParams>,
    pub iterations: usize,
    /// Parameters sent over all directed messages of all iterations.
    pub floats_shared: u64,
}

struct Task<'a> {
    slice: SegmentSlice,
    graph: &'a Graph,
    alpha: f64,
    pullers: Vec<usize>,
}

/// Per-layer element mask in canonical (weights, bias) order.
struct Mask(Vec<(Vec<bool>, Vec<bool>)>);

impl Mask {
    fn new(arch: &Architecture) -> Self {
        Mask(arch
            .layers()
            .iter()
            .map(|l| (vec![false; l.weight_len()], vec![false; l.bias_len()]))
            .collect())
    }

    fn add(&mut self, s: &SegmentSlice) {
        let (w, b) = &mut self.0[s.layer];
        s.weights.iter().for_each(|&p| w[p] = true);
        s.bias.iter().for_each(|&p| b[p] = true);
    }

    /// Whole-model distance restricted to masked entries; with a full mask
    /// this reproduces `model_distance` bit for bit.
    fn distance(&self, a: &ModelParams, b: &ModelParams) -> f64 {
        let mut total = 0.0;
        for (l, (wm, bm)) in self.0.iter().enumerate() {
            let (la, lb) = (a.layer(l), b.layer(l));
            let mut sq = 0.0;
            for (e, _) in wm.iter().enumerate().filter(|(_, &m)| m) {
                let d = la.weights[e] - lb.weights[e];
                sq += d * d;
            }
            for (e, _) in bm.iter().enumerate().filter(|(_, &m)| m) {
                let d = la.bias[e] - lb.bias[e];
                sq += d * d;
            }
            total += f64::sqrt(sq);
        }
        total
    }

    fn max_pairwise(&self, models: &[ModelParams]) -> f64 {
        let mut max: f64 = 0.0;
        for i in 0..models.len() {
            for j in i + 1..models.len() {
                max = max.max(self.distance(&models[i], &models[j]));
            }
        }
        max
    }
}

/// Run one epoch's segmented aggregation.
///
/// Each iteration, every client polls each segment of its own set from its
/// neighbors in that segment's graph and mixes the iteration-start values.
/// The loop stops once the largest pairwise distance restricted to shared
/// segments is at most `eps`, or after `s_max` iterations. Segments nobody
/// selected are never touched.
pub fn run_aggregation(
    models: Vec<ModelParams>,
    plan: &AggregationPlan,
    sizes: &[usize],
    eps: f64,
    s_max: usize,
    rule: MixingRule,
) -> Result<AggregationOutcome> {
    if !(eps > 0.0) {
        return Err(DflError::config(format!("consensus tolerance {eps} must be > 0")));
    }
    let k = plan.clients();
    if models.len() != k || sizes.len() != k {
        return Err(DflError::config(format!(
            "plan has {k} clients, got {} models and {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    if matches!(rule, MixingRule::SizeWeighted) && sizes.contains(&0) {
        return Err(DflError::config("size-weighted mixing needs nonempty clients"));
    }
    let Some(first) = models.first() else {
        return Ok(AggregationOutcome { models, iterations: 0, floats_shared: 0 });
    };
    if models.iter().any(|m| !m.same_arch(first)) {
        return Err(DflError::shape("models have different architectures"));
    }
    let arch = first.arch_handle().clone();
    let mut mask = Mask::new(&arch);
    let mut tasks = Vec::new();
    for id in &plan.segments {
        let pullers: Vec<usize> = (0..k).filter(|&c| plan.client_sets[c].contains(id)).collect();
        if pullers.is_empty() {
            continue;
        }
        let slice = segment_slice(&arch, *id)?;
        mask.add(&slice);
        let graph = plan.graph_for(id);
        let alpha = match rule {
            MixingRule::Consensus(a) => a.alpha(graph),
            MixingRule::SizeWeighted => 0.0,
        };
        tasks.push(Task { slice, graph, alpha, pullers });
    }
    let mut models = models;
    let mut iterations = 0;
    let mut floats: u64 = 0;
    while iterations < s_max && mask.max_pairwise(&models) > eps {
        let snap = models.clone();
        for t in &tasks {
            let l = t.slice.layer;
            for &j in &t.pullers {
                let nb = t.graph.neighbors(j);
                floats += (nb.len() * t.slice.len()) as u64;
                if nb.is_empty() {
                    continue;
                }
                let own = snap[j].layer(l);
                let out = models[j].layer_mut(l);
                match rule {
                    MixingRule::Consensus(_) => {
                        for &p in &t.slice.weights {
                            out.weights[p] = mix(own.weights[p], nb.iter().map(|&m| snap[m].layer(l).weights[p]), t.alpha);
                        }
                        for &p in &t.slice.bias {
                            out.bias[p] = mix(own.bias[p], nb.iter().map(|&m| snap[m].layer(l).bias[p]), t.alpha);
                        }
                    }
                    MixingRule::SizeWeighted => {
                        let sz = |m: usize| sizes[m] as f64;
                        for &p in &t.slice.weights {
                            out.weights[p] = weighted(own.weights[p], sz(j), nb.iter().map(|&m| (snap[m].layer(l).weights[p], sz(m))));
                        }
                        for &p in &t.slice.bias {
                            out.bias[p] = weighted(own.bias[p], sz(j), nb.iter().map(|&m| (snap[m].layer(l).bias[p], sz(m))));
                        }
                    }
                }
            }
        }
        iterations += 1;
    }
    Ok(AggregationOutcome {
        models,
        iterations,
        floats_shared: floats,
    })
}
