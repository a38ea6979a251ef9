use std::sync::Arc;

use rand::Rng as _;

use super::arch::Architecture;
use crate::error::{DflError, Result};
use crate::rng::{self, domain};

/// Weights and bias of one layer.
///
/// Conv weights are laid out `[out][in][kh][kw]`, dense weights `[in][out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// All trainable parameters of a network, tied to its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Arc<Architecture>,
    layers: Vec<LayerParams>,
}

/// How initial parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Every caller with the same seed gets the same parameters.
    SharedUniform,
    /// The stream is additionally keyed by the client id.
    PerClientRandom { client: usize },
}

impl ModelParams {
    pub fn zeros(arch: Arc<Architecture>) -> Self {
        let layers = arch
            .layers()
            .iter()
            .map(|l| LayerParams {
                weights: vec![0.0; l.weight_len()],
                bias: vec![0.0; l.bias_len()],
            })
            .collect();
        ModelParams { arch, layers }
    }

    /// Build from explicit tensors, checking every shape.
    pub fn from_layers(arch: Arc<Architecture>, layers: Vec<LayerParams>) -> Result<Self> {
        if layers.len() != arch.num_layers() {
            return Err(DflError::shape(format!(
                "{} layer tensors for a {}-layer architecture",
                layers.len(),
                arch.num_layers()
            )));
        }
        for (i, (lp, spec)) in layers.iter().zip(arch.layers()).enumerate() {
            if lp.weights.len() != spec.weight_len() || lp.bias.len() != spec.bias_len() {
                return Err(DflError::shape(format!(
                    "layer {i}: got {}+{} values, expected {}+{}",
                    lp.weights.len(),
                    lp.bias.len(),
                    spec.weight_len(),
                    spec.bias_len()
                )));
            }
        }
        Ok(ModelParams { arch, layers })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn arch_handle(&self) -> &Arc<Architecture> {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerParams {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut LayerParams {
        &mut self.layers[i]
    }

    pub fn num_params(&self) -> usize {
        self.arch.param_count()
    }

    /// Tensors in canonical order: layer 0 weights, layer 0 bias, layer 1 weights, ...
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors().flat_map(|t| t.iter().copied())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn same_arch(&self, other: &ModelParams) -> bool {
        Arc::ptr_eq(&self.arch, &other.arch) || *self.arch == *other.arch
    }

    pub(crate) fn check_same_arch(&self, other: &ModelParams) -> Result<()> {
        if self.same_arch(other) {
            Ok(())
        } else {
            Err(DflError::shape("models have different architectures"))
        }
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &ModelParams) -> Result<()> {
        self.check_same_arch(other)?;
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Unweighted mean of a nonempty set of models.
    pub fn mean(models: &[ModelParams]) -> Result<ModelParams> {
        let first = models
            .first()
            .ok_or_else(|| DflError::config("mean of an empty model set"))?;
        let mut acc = ModelParams::zeros(first.arch.clone());
        for m in models {
            acc.axpy(1.0, m)?;
        }
        acc.scale(1.0 / models.len() as f64);
        Ok(acc)
    }
}

/// Deterministic fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
/// for weights and biases alike.
pub fn init_params(arch: &Arc<Architecture>, seed: u64, mode: InitMode) -> ModelParams {
    let mut rng = match mode {
        InitMode::SharedUniform => rng::stream(seed, &[domain::INIT]),
        InitMode::PerClientRandom { client } => {
            rng::stream(seed, &[domain::INIT, 1 + client as u64])
        }
    };
    let mut params = ModelParams::zeros(arch.clone());
    for (spec, lp) in arch.layers().iter().zip(params.layers.iter_mut()) {
        let bound = 1.0 / (spec.fan_in() as f64).sqrt();
        for w in lp.weights.iter_mut().chain(lp.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
    }
    params
}

/// Euclidean norm of the difference of one layer (weights and bias together).
pub fn layer_distance(a: &ModelParams, b: &ModelParams, layer: usize) -> Result<f64> {
    a.check_same_arch(b)?;
    let (la, lb) = (&a.layers[layer], &b.layers[layer]);
    let sq: f64 = la
        .weights
        .iter()
        .zip(&lb.weights)
        .chain(la.bias.iter().zip(&lb.bias))
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sq.sqrt())
}

/// Whole-model distance: the sum over layers of the per-layer Euclidean norm
/// of the difference.
pub fn model_distance(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    a.check_same_arch(b)?;
    let mut total = 0.0;
    for l in 0..a.layers.len() {
        total += layer_distance(a, b, l)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerSpec;

    fn tiny() -> Arc<Architecture> {
        Arc::new(
            Architecture::new(
                (1, 4, 4),
                10,
                vec![
                    LayerSpec::conv(1, 2, 3),
                    LayerSpec::dense(8, 10).with_relu(false),
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn shared_init_is_bit_identical() {
        let a = tiny();
        let p = init_params(&a, 7, InitMode::SharedUniform);
        let q = init_params(&a, 7, InitMode::SharedUniform);
        assert_eq!(p, q);
    }

    #[test]
    fn per_client_init_differs_between_clients() {
        let a = tiny();
        let p = init_params(&a, 7, InitMode::PerClientRandom { client: 0 });
        let q = init_params(&a, 7, InitMode::PerClientRandom { client: 1 });
        assert!(p.values().zip(q.values()).any(|(x, y)| x != y));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let a = tiny();
        let p = init_params(&a, 3, InitMode::SharedUniform);
        let b0 = 1.0 / 9f64.sqrt();
        assert!(p.layer(0).weights.iter().all(|w| w.abs() < b0));
        let b1 = 1.0 / 8f64.sqrt();
        assert!(p.layer(1).weights.iter().all(|w| w.abs() < b1));
    }

    #[test]
    fn distance_of_a_three_four_difference_is_five() {
        let a = tiny();
        let p = init_params(&a, 1, InitMode::SharedUniform);
        let mut q = p.clone();
        q.layer_mut(1).weights[0] += 3.0;
        q.layer_mut(1).weights[5] -= 4.0;
        assert!((model_distance(&p, &q).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(model_distance(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn distance_sums_layer_norms() {
        let a = tiny();
        let p = ModelParams::zeros(a.clone());
        let mut q = p.clone();
        q.layer_mut(0).bias[0] = 1.0;
        q.layer_mut(1).weights[0] = 2.0;
        assert!((model_distance(&p, &q).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn distance_rejects_mismatched_arch() {
        let p = ModelParams::zeros(tiny());
        let other = Arc::new(Architecture::small((1, 8, 8), 10).unwrap());
        let q = ModelParams::zeros(other);
        assert!(matches!(model_distance(&p, &q), Err(DflError::Shape(_))));
    }

    #[test]
    fn from_layers_checks_shapes() {
        let a = tiny();
        let bad = vec![
            LayerParams { weights: vec![0.0; 18], bias: vec![0.0; 2] },
            LayerParams { weights: vec![0.0; 79], bias: vec![0.0; 10] },
        ];
        assert!(ModelParams::from_layers(a, bad).is_err());
    }
}
