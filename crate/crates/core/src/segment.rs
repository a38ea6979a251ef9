//! Splitting a model into shareable units and choosing which units a client
//! shares.
//!
//! Layers are 0-indexed. Every parameter of a layer belongs to exactly one
//! segment of a given unit:
//!
//! * `Layer`: the whole weight tensor and bias vector.
//! * `OutChannel(c)`: all weights producing output channel (or dense unit)
//!   `c`, plus `bias[c]`.
//! * `InChannel(c)`: all weights reading input channel `c`; the full bias
//!   vector rides with input channel 0.
//! * `Kernel { output, input }`: one `kh x kw` kernel (a single weight for
//!   dense layers); `bias[output]` rides with input 0.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{DflError, Result};
use crate::model::{Architecture, LayerKind, ModelParams};
use crate::rng::{self, domain};

/// Granularity of segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SegmentUnit {
    Layer,
    #[default]
    OutChannel,
    InChannel,
    Kernel,
}

impl SegmentUnit {
    pub fn name(self) -> &'static str {
        match self {
            SegmentUnit::Layer => "layer",
            SegmentUnit::OutChannel => "out_channel",
            SegmentUnit::InChannel => "in_channel",
            SegmentUnit::Kernel => "kernel",
        }
    }
}

impl std::str::FromStr for SegmentUnit {
    type Err = DflError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "layer" => Ok(SegmentUnit::Layer),
            "out_channel" | "out" => Ok(SegmentUnit::OutChannel),
            "in_channel" | "in" => Ok(SegmentUnit::InChannel),
            "kernel" => Ok(SegmentUnit::Kernel),
            other => Err(DflError::config(format!("unknown segment unit '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    Layer,
    OutChannel(usize),
    InChannel(usize),
    Kernel { output: usize, input: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId {
    pub layer: usize,
    pub kind: SegmentKind,
}

impl SegmentId {
    pub fn new(layer: usize, kind: SegmentKind) -> Self {
        SegmentId { layer, kind }
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SegmentKind::Layer => write!(f, "L{}", self.layer),
            SegmentKind::OutChannel(c) => write!(f, "L{}/out{c}", self.layer),
            SegmentKind::InChannel(c) => write!(f, "L{}/in{c}", self.layer),
            SegmentKind::Kernel { output, input } => write!(f, "L{}/k{output},{input}", self.layer),
        }
    }
}

/// Every segment of `arch` at the given unit, ordered by layer then index.
pub fn enumerate_segments(arch: &Architecture, unit: SegmentUnit) -> Vec<SegmentId> {
    let mut out = Vec::new();
    for (layer, spec) in arch.layers().iter().enumerate() {
        let (cin, cout) = (spec.in_channels(), spec.out_channels());
        match unit {
            SegmentUnit::Layer => out.push(SegmentId::new(layer, SegmentKind::Layer)),
            SegmentUnit::OutChannel => {
                out.extend((0..cout).map(|c| SegmentId::new(layer, SegmentKind::OutChannel(c))))
            }
            SegmentUnit::InChannel => {
                out.extend((0..cin).map(|c| SegmentId::new(layer, SegmentKind::InChannel(c))))
            }
            SegmentUnit::Kernel => {
                for output in 0..cout {
                    for input in 0..cin {
                        out.push(SegmentId::new(layer, SegmentKind::Kernel { output, input }));
                    }
                }
            }
        }
    }
    out
}

/// Flat positions of one segment inside its layer's weight and bias vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSlice {
    pub layer: usize,
    pub weights: Vec<usize>,
    pub bias: Vec<usize>,
}

impl SegmentSlice {
    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn out_of_range(id: SegmentId) -> DflError {
    DflError::shape(format!("segment {id} is outside the architecture"))
}

/// Resolve a segment id to parameter positions.
pub fn segment_slice(arch: &Architecture, id: SegmentId) -> Result<SegmentSlice> {
    let spec = arch.layers().get(id.layer).ok_or_else(|| out_of_range(id))?;
    let (cin, cout, kl) = (spec.in_channels(), spec.out_channels(), spec.kernel_len());
    let conv = matches!(spec.kind, LayerKind::Conv { .. });
    // flat index of weight (output o, input i, kernel element e)
    let w = |o: usize, i: usize, e: usize| if conv { (o * cin + i) * kl + e } else { i * cout + o };
    let (weights, bias): (Vec<usize>, Vec<usize>) = match id.kind {
        SegmentKind::Layer => ((0..spec.weight_len()).collect(), (0..cout).collect()),
        SegmentKind::OutChannel(o) if o < cout => (
            (0..cin).flat_map(|i| (0..kl).map(move |e| (i, e))).map(|(i, e)| w(o, i, e)).collect(),
            vec![o],
        ),
        SegmentKind::InChannel(i) if i < cin => (
            (0..cout).flat_map(|o| (0..kl).map(move |e| (o, e))).map(|(o, e)| w(o, i, e)).collect(),
            if i == 0 { (0..cout).collect() } else { Vec::new() },
        ),
        SegmentKind::Kernel { output, input } if output < cout && input < cin => (
            (0..kl).map(|e| w(output, input, e)).collect(),
            if input == 0 { vec![output] } else { Vec::new() },
        ),
        _ => return Err(out_of_range(id)),
    };
    let mut weights = weights;
    weights.sort_unstable();
    Ok(SegmentSlice {
        layer: id.layer,
        weights,
        bias,
    })
}

/// Number of parameters in a segment.
pub fn segment_len(arch: &Architecture, id: SegmentId) -> Result<usize> {
    Ok(segment_slice(arch, id)?.len())
}

/// Copy a segment's values out: weights in ascending position, then bias.
pub fn extract_segment(params: &ModelParams, id: SegmentId) -> Result<Vec<f64>> {
    let s = segment_slice(params.arch(), id)?;
    let lp = params.layer(s.layer);
    Ok(s.weights
        .iter()
        .map(|&p| lp.weights[p])
        .chain(s.bias.iter().map(|&p| lp.bias[p]))
        .collect())
}

/// Overwrite a segment with values laid out as by [`extract_segment`].
pub fn apply_segment(params: &mut ModelParams, id: SegmentId, values: &[f64]) -> Result<()> {
    let s = segment_slice(params.arch(), id)?;
    if values.len() != s.len() {
        return Err(DflError::shape(format!(
            "segment {id} holds {} values, got {}",
            s.len(),
            values.len()
        )));
    }
    let lp = params.layer_mut(s.layer);
    let (wv, bv) = values.split_at(s.weights.len());
    for (&p, &v) in s.weights.iter().zip(wv) {
        lp.weights[p] = v;
    }
    for (&p, &v) in s.bias.iter().zip(bv) {
        lp.bias[p] = v;
    }
    Ok(())
}

/// Euclidean norm of the difference restricted to one segment.
pub fn segment_distance(a: &ModelParams, b: &ModelParams, id: SegmentId) -> Result<f64> {
    if !a.same_arch(b) {
        return Err(DflError::shape("models have different architectures"));
    }
    let x = extract_segment(a, id)?;
    let y = extract_segment(b, id)?;
    Ok(x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
}

/// How segment sets are drawn across clients and epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectionPolicy {
    /// One set per client, fixed for the whole run.
    FixedPerClient,
    /// A fresh set per client every epoch.
    PerEpoch,
    /// One set, fixed for the run, used by every client.
    SharedAcrossClients,
}

/// The segments one client shares (and polls from its neighbors).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentIndexSet {
    pub owner: usize,
    /// Epoch the set was drawn for; `None` for sets fixed over the run.
    pub epoch: Option<u64>,
    pub ids: BTreeSet<SegmentId>,
}

impl SegmentIndexSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &SegmentId) -> bool {
        self.ids.contains(id)
    }
}

/// `round(pss * total)` with halves rounded up.
pub fn segment_count(pss: f64, total: usize) -> Result<usize> {
    if !(pss > 0.0 && pss <= 1.0) {
        return Err(DflError::config(format!("PSS {pss} outside (0, 1]")));
    }
    let n = (pss * total as f64 + 0.5).floor() as usize;
    if n == 0 {
        return Err(DflError::config(format!(
            "PSS {pss} selects no segment out of {total}"
        )));
    }
    Ok(n.min(total))
}

/// Draw a client's segment set uniformly without replacement from all
/// layers' segments jointly.
pub fn select_segments(
    arch: &Architecture,
    unit: SegmentUnit,
    pss: f64,
    seed: u64,
    policy: SelectionPolicy,
    client: usize,
    epoch: u64,
) -> Result<SegmentIndexSet> {
    let all = enumerate_segments(arch, unit);
    let n = segment_count(pss, all.len())?;
    let (tags, epoch_tag) = match policy {
        SelectionPolicy::FixedPerClient => ([domain::SEGMENTS, 0, client as u64, 0], None),
        SelectionPolicy::PerEpoch => ([domain::SEGMENTS, 1, client as u64, epoch], Some(epoch)),
        SelectionPolicy::SharedAcrossClients => ([domain::SEGMENTS, 2, 0, 0], None),
    };
    let ids = if n == all.len() {
        all.into_iter().collect()
    } else {
        let mut r = rng::stream(seed, &tags);
        index::sample(&mut r, all.len(), n).iter().map(|i| all[i]).collect()
    };
    Ok(SegmentIndexSet {
        owner: client,
        epoch: epoch_tag,
        ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, InitMode, LayerSpec};
    use std::sync::Arc;

    fn conv_net() -> Arc<Architecture> {
        Arc::new(
            Architecture::new(
                (1, 8, 8),
                10,
                vec![
                    LayerSpec::conv(1, 8, 3),
                    LayerSpec::conv(8, 16, 3).with_pool(2),
                    LayerSpec::dense(16 * 2 * 2, 10).with_relu(false),
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn counts_per_unit() {
        let a = conv_net();
        assert_eq!(enumerate_segments(&a, SegmentUnit::Layer).len(), 3);
        assert_eq!(enumerate_segments(&a, SegmentUnit::OutChannel).len(), 8 + 16 + 10);
        assert_eq!(enumerate_segments(&a, SegmentUnit::InChannel).len(), 1 + 8 + 64);
        let kernels = enumerate_segments(&a, SegmentUnit::Kernel);
        assert_eq!(kernels.iter().filter(|s| s.layer == 0).count(), 8);
    }

    #[test]
    fn out_channel_slice_of_conv_8_16() {
        let a = conv_net();
        let id = SegmentId::new(1, SegmentKind::OutChannel(5));
        assert_eq!(segment_len(&a, id).unwrap(), 8 * 3 * 3 + 1);
    }

    #[test]
    fn every_unit_covers_each_parameter_once() {
        let a = conv_net();
        for unit in [
            SegmentUnit::Layer,
            SegmentUnit::OutChannel,
            SegmentUnit::InChannel,
            SegmentUnit::Kernel,
        ] {
            let mut w: Vec<Vec<u32>> = a.layers().iter().map(|l| vec![0; l.weight_len()]).collect();
            let mut b: Vec<Vec<u32>> = a.layers().iter().map(|l| vec![0; l.bias_len()]).collect();
            for id in enumerate_segments(&a, unit) {
                let s = segment_slice(&a, id).unwrap();
                s.weights.iter().for_each(|&p| w[s.layer][p] += 1);
                s.bias.iter().for_each(|&p| b[s.layer][p] += 1);
            }
            assert!(w.iter().flatten().chain(b.iter().flatten()).all(|&c| c == 1), "{unit:?}");
        }
    }

    #[test]
    fn dense_out_channel_is_a_column() {
        let a = conv_net();
        let s = segment_slice(&a, SegmentId::new(2, SegmentKind::OutChannel(3))).unwrap();
        assert_eq!(s.weights, (0..64).map(|i| i * 10 + 3).collect::<Vec<_>>());
        assert_eq!(s.bias, vec![3]);
    }

    #[test]
    fn round_trip_and_range_errors() {
        let a = conv_net();
        let mut p = init_params(&a, 3, InitMode::SharedUniform);
        let before = p.clone();
        for id in enumerate_segments(&a, SegmentUnit::OutChannel) {
            let v = extract_segment(&p, id).unwrap();
            apply_segment(&mut p, id, &v).unwrap();
        }
        assert_eq!(p, before);
        let bad = SegmentId::new(1, SegmentKind::OutChannel(16));
        assert!(matches!(extract_segment(&p, bad), Err(DflError::Shape(_))));
        assert!(matches!(
            extract_segment(&p, SegmentId::new(3, SegmentKind::Layer)),
            Err(DflError::Shape(_))
        ));
    }

    #[test]
    fn single_entry_segment_distance() {
        let a = conv_net();
        let p = init_params(&a, 3, InitMode::SharedUniform);
        let mut q = p.clone();
        let id = SegmentId::new(1, SegmentKind::OutChannel(2));
        let mut v = extract_segment(&q, id).unwrap();
        v[7] += 2.0;
        apply_segment(&mut q, id, &v).unwrap();
        assert!((segment_distance(&p, &q, id).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(segment_distance(&p, &q, SegmentId::new(1, SegmentKind::OutChannel(3))).unwrap(), 0.0);
    }

    #[test]
    fn selection_sizes_and_policies() {
        let a = conv_net();
        let total = enumerate_segments(&a, SegmentUnit::OutChannel).len();
        let full = select_segments(&a, SegmentUnit::OutChannel, 1.0, 1, SelectionPolicy::FixedPerClient, 0, 0).unwrap();
        assert_eq!(full.len(), total);
        let half = select_segments(&a, SegmentUnit::OutChannel, 0.5, 1, SelectionPolicy::FixedPerClient, 0, 0).unwrap();
        assert_eq!(half.len(), 17);
        let sel = |policy, client, epoch| {
            select_segments(&a, SegmentUnit::OutChannel, 0.5, 9, policy, client, epoch).unwrap().ids
        };
        assert_eq!(sel(SelectionPolicy::FixedPerClient, 2, 0), sel(SelectionPolicy::FixedPerClient, 2, 5));
        assert_ne!(sel(SelectionPolicy::PerEpoch, 2, 0), sel(SelectionPolicy::PerEpoch, 2, 1));
        assert_eq!(sel(SelectionPolicy::SharedAcrossClients, 0, 0), sel(SelectionPolicy::SharedAcrossClients, 7, 3));
        for pss in [0.0, -0.1, 1.5] {
            assert!(select_segments(&a, SegmentUnit::OutChannel, pss, 1, SelectionPolicy::PerEpoch, 0, 0).is_err());
        }
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(segment_count(0.5, 234).unwrap(), 117);
        assert_eq!(segment_count(0.5, 5).unwrap(), 3);
        assert_eq!(segment_count(0.25, 10).unwrap(), 3);
    }
}
