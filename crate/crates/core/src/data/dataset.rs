use crate::error::{DflError, Result};

/// Labeled images with raw pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f32>,
    labels: Vec<u8>,
    channels: usize,
    height: usize,
    width: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(
        images: Vec<f32>,
        labels: Vec<u8>,
        (channels, height, width): (usize, usize, usize),
        classes: usize,
    ) -> Result<Self> {
        let len = channels * height * width;
        if len == 0 {
            return Err(DflError::config("image dimensions must be >= 1"));
        }
        if images.len() != labels.len() * len {
            return Err(DflError::data(format!(
                "{} pixel values for {} images of {len} pixels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
            return Err(DflError::data(format!("label {bad} outside [0, {classes})")));
        }
        if images.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(DflError::data("pixel values must lie in [0, 1]"));
        }
        Ok(Dataset {
            images,
            labels,
            channels,
            height,
            width,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.image_len();
        &self.images[i * len..(i + 1) * len]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        histogram(self.labels.iter().map(|&y| y as usize), self.classes)
    }

    /// Indices of every sample carrying `label`, ascending.
    pub fn indices_of(&self, label: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.label(i) == label).collect()
    }

    /// Mean and standard deviation of all pixels of the given samples.
    pub fn pixel_stats(&self, indices: impl IntoIterator<Item = usize>) -> (f64, f64) {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for i in indices {
            for &p in self.image(i) {
                let p = p as f64;
                sum += p;
                sq += p * p;
                n += 1;
            }
        }
        if n == 0 {
            return (0.0, 0.0);
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        (mean, var.sqrt())
    }

    /// Subset with the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            images,
            labels,
            ..*self
        }
    }
}

pub(crate) fn histogram(labels: impl IntoIterator<Item = usize>, classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    for y in labels {
        h[y] += 1;
    }
    h
}
