use serde::{Deserialize, Serialize};

use crate::error::{DflError, Result};

/// Parameterized part of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Valid (unpadded) stride-1 convolution.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
    /// Fully connected layer. A preceding conv output is flattened.
    Dense { in_dim: usize, out_dim: usize },
}

/// One layer plus the fixed operations that follow it, in order:
/// ReLU, max-pool (conv only) and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub relu: bool,
    /// Square max-pool window; 1 means no pooling.
    pub pool: usize,
    pub dropout: Option<f64>,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv {
                in_channels,
                out_channels,
                kernel_h: kernel,
                kernel_w: kernel,
            },
            relu: true,
            pool: 1,
            dropout: None,
        }
    }

    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense { in_dim, out_dim },
            relu: true,
            pool: 1,
            dropout: None,
        }
    }

    pub fn with_relu(mut self, relu: bool) -> Self {
        self.relu = relu;
        self
    }

    pub fn with_pool(mut self, pool: usize) -> Self {
        self.pool = pool;
        self
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout = Some(p);
        self
    }

    /// Output channels (conv) or output units (dense).
    pub fn out_channels(&self) -> usize {
        match self.kind {
            LayerKind::Conv { out_channels, .. } => out_channels,
            LayerKind::Dense { out_dim, .. } => out_dim,
        }
    }

    pub fn in_channels(&self) -> usize {
        match self.kind {
            LayerKind::Conv { in_channels, .. } => in_channels,
            LayerKind::Dense { in_dim, .. } => in_dim,
        }
    }

    /// Elements per kernel: `kh * kw` for conv, 1 for dense.
    pub fn kernel_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                kernel_h, kernel_w, ..
            } => kernel_h * kernel_w,
            LayerKind::Dense { .. } => 1,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.in_channels() * self.out_channels() * self.kernel_len()
    }

    pub fn bias_len(&self) -> usize {
        self.out_channels()
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels() * self.kernel_len()
    }
}

/// `(channels, height, width)`.
pub type Shape3 = (usize, usize, usize);

/// Resolved tensor shapes for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub input: Shape3,
    /// Conv output before pooling; `(out_dim, 1, 1)` for dense layers.
    pub pre_pool: Shape3,
    pub output: Shape3,
}

/// A validated feed-forward network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    input: Shape3,
    classes: usize,
    layers: Vec<LayerSpec>,
    shapes: Vec<LayerShape>,
}

impl Architecture {
    pub fn new(input: Shape3, classes: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(DflError::config("architecture has no layers"));
        }
        if input.0 == 0 || input.1 == 0 || input.2 == 0 {
            return Err(DflError::config("input dimensions must be >= 1"));
        }
        if classes < 2 {
            return Err(DflError::config("need at least two classes"));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input;
        for (i, layer) in layers.iter().enumerate() {
            if let Some(p) = layer.dropout {
                if !(0.0..1.0).contains(&p) {
                    return Err(DflError::config(format!(
                        "layer {i}: dropout probability {p} outside [0, 1)"
                    )));
                }
            }
            if layer.pool == 0 {
                return Err(DflError::config(format!("layer {i}: pool window must be >= 1")));
            }
            let shape = match layer.kind {
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                } => {
                    if out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
                        return Err(DflError::config(format!(
                            "layer {i}: channels and kernel sizes must be >= 1"
                        )));
                    }
                    if in_channels != cur.0 {
                        return Err(DflError::config(format!(
                            "layer {i}: expects {in_channels} input channels, previous layer gives {}",
                            cur.0
                        )));
                    }
                    if kernel_h > cur.1 || kernel_w > cur.2 {
                        return Err(DflError::config(format!(
                            "layer {i}: kernel {kernel_h}x{kernel_w} larger than input {}x{}",
                            cur.1, cur.2
                        )));
                    }
                    let pre = (out_channels, cur.1 - kernel_h + 1, cur.2 - kernel_w + 1);
                    if layer.pool > pre.1 || layer.pool > pre.2 {
                        return Err(DflError::config(format!(
                            "layer {i}: pool window {} larger than feature map",
                            layer.pool
                        )));
                    }
                    let out = (pre.0, pre.1 / layer.pool, pre.2 / layer.pool);
                    LayerShape {
                        input: cur,
                        pre_pool: pre,
                        output: out,
                    }
                }
                LayerKind::Dense { in_dim, out_dim } => {
                    if in_dim == 0 || out_dim == 0 {
                        return Err(DflError::config(format!("layer {i}: dims must be >= 1")));
                    }
                    if layer.pool != 1 {
                        return Err(DflError::config(format!(
                            "layer {i}: pooling is only supported after convolutions"
                        )));
                    }
                    let flat = cur.0 * cur.1 * cur.2;
                    if in_dim != flat {
                        return Err(DflError::config(format!(
                            "layer {i}: in_dim {in_dim} does not match flattened input {flat}"
                        )));
                    }
                    LayerShape {
                        input: (flat, 1, 1),
                        pre_pool: (out_dim, 1, 1),
                        output: (out_dim, 1, 1),
                    }
                }
            };
            cur = shape.output;
            shapes.push(shape);
        }
        let out = cur.0 * cur.1 * cur.2;
        if out != classes {
            return Err(DflError::config(format!(
                "final layer produces {out} values, expected {classes} classes"
            )));
        }
        Ok(Architecture {
            input,
            classes,
            layers,
            shapes,
        })
    }

    /// Conv(8, 3x3) -> ReLU -> Conv(16, 3x3) -> ReLU -> 2x2 max-pool ->
    /// Dense(64) -> ReLU -> Dense(classes).
    pub fn small(input: Shape3, classes: usize) -> Result<Self> {
        let pooled = ((input.1.saturating_sub(4)) / 2) * ((input.2.saturating_sub(4)) / 2);
        Architecture::new(
            input,
            classes,
            vec![
                LayerSpec::conv(input.0, 8, 3),
                LayerSpec::conv(8, 16, 3).with_pool(2),
                LayerSpec::dense(16 * pooled, 64),
                LayerSpec::dense(64, classes).with_relu(false),
            ],
        )
    }

    /// The 32/64/128 reference network with dropout 0.25 after pooling and
    /// 0.5 after the hidden dense layer.
    pub fn reference(input: Shape3, classes: usize) -> Result<Self> {
        let pooled = ((input.1.saturating_sub(4)) / 2) * ((input.2.saturating_sub(4)) / 2);
        Architecture::new(
            input,
            classes,
            vec![
                LayerSpec::conv(input.0, 32, 3),
                LayerSpec::conv(32, 64, 3).with_pool(2).with_dropout(0.25),
                LayerSpec::dense(64 * pooled, 128).with_dropout(0.5),
                LayerSpec::dense(128, classes).with_relu(false),
            ],
        )
    }

    /// Same network with every dropout site removed.
    pub fn without_dropout(&self) -> Self {
        let mut a = self.clone();
        for l in &mut a.layers {
            l.dropout = None;
        }
        a
    }

    pub fn input(&self) -> Shape3 {
        self.input
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer_param_count(&self, layer: usize) -> usize {
        self.layers[layer].weight_len() + self.layers[layer].bias_len()
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers.len()).map(|i| self.layer_param_count(i)).sum()
    }

    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| l.dropout.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_arch_on_14px_inputs() {
        let a = Architecture::small((1, 14, 14), 10).unwrap();
        assert_eq!(a.shapes()[1].output, (16, 5, 5));
        assert_eq!(a.param_count(), 80 + 1168 + (400 * 64 + 64) + 650);
    }

    #[test]
    fn reference_arch_on_mnist_inputs() {
        let a = Architecture::reference((1, 28, 28), 10).unwrap();
        assert_eq!(a.layers()[2].in_channels(), 9216);
        let outs: Vec<_> = a.layers().iter().map(|l| l.out_channels()).collect();
        assert_eq!(outs, vec![32, 64, 128, 10]);
    }

    #[test]
    fn rejects_bad_compositions() {
        assert!(matches!(
            Architecture::new((1, 8, 8), 10, vec![]),
            Err(DflError::Config(_))
        ));
        let bad = vec![LayerSpec::conv(1, 4, 3), LayerSpec::dense(10, 10)];
        assert!(Architecture::new((1, 8, 8), 10, bad).is_err());
        let zero = vec![LayerSpec::dense(64, 0)];
        assert!(Architecture::new((1, 8, 8), 10, zero).is_err());
        let big_kernel = vec![LayerSpec::conv(1, 2, 9), LayerSpec::dense(2, 10)];
        assert!(Architecture::new((1, 8, 8), 10, big_kernel).is_err());
    }
}
