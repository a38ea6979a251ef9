//! Synthetic stand-in for handwritten digits.
//!
//! Each class is a seven-segment glyph drawn with soft strokes. Every sample
//! gets its own shift, scale, slant, stroke width, per-segment intensity and
//! pixel noise, so the classes overlap enough that a linear model is clearly
//! worse than a small CNN while both learn quickly.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::dataset::Dataset;
use crate::error::{DflError, Result};
use crate::rng::{self, domain};

/// Side length of synthetic images.
pub const SYNTH_SIDE: usize = 14;

// segments: a (top), b (upper right), c (lower right), d (bottom),
// e (lower left), f (upper left), g (middle)
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((-2.5, -4.5), (2.5, -4.5)),
    ((2.5, -4.5), (2.5, 0.0)),
    ((2.5, 0.0), (2.5, 4.5)),
    ((-2.5, 4.5), (2.5, 4.5)),
    ((-2.5, 0.0), (-2.5, 4.5)),
    ((-2.5, -4.5), (-2.5, 0.0)),
    ((-2.5, 0.0), (2.5, 0.0)),
];

const GLYPHS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

fn segment_distance(px: f64, py: f64, (a, b): ((f64, f64), (f64, f64))) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

fn render(class: usize, rng: &mut rng::Rng, noise: &Normal<f64>, out: &mut Vec<f32>) {
    let shift_x = rng.random_range(-1.5..1.5);
    let shift_y = rng.random_range(-1.5..1.5);
    let scale = rng.random_range(0.8..1.1);
    let slant = rng.random_range(-0.25..0.25);
    let width = rng.random_range(0.55..0.95);
    let strength: Vec<f64> = (0..7).map(|_| rng.random_range(0.6..1.0)).collect();
    let center = (SYNTH_SIDE as f64 - 1.0) / 2.0;
    for y in 0..SYNTH_SIDE {
        for x in 0..SYNTH_SIDE {
            // map pixel back into glyph coordinates
            let gy = (y as f64 - center - shift_y) / scale;
            let gx = (x as f64 - center - shift_x) / scale - slant * gy;
            let mut v: f64 = 0.0;
            for (s, &on) in GLYPHS[class].iter().enumerate() {
                if on {
                    let d = segment_distance(gx, gy, SEGMENTS[s]);
                    v = v.max(strength[s] * (-d * d / (2.0 * width * width)).exp());
                }
            }
            v += noise.sample(rng);
            out.push(v.clamp(0.0, 1.0) as f32);
        }
    }
}

/// Deterministic balanced dataset of `n` synthetic glyph images.
pub fn synth_dataset(seed: u64, n: usize, classes: usize) -> Result<Dataset> {
    if n < 1 {
        return Err(DflError::config("synthetic dataset needs n >= 1"));
    }
    if !(2..=GLYPHS.len()).contains(&classes) {
        return Err(DflError::config(format!(
            "synthetic dataset supports 2..={} classes, got {classes}",
            GLYPHS.len()
        )));
    }
    let mut rng = rng::stream(seed, &[domain::SYNTH]);
    let mut labels: Vec<u8> = (0..n).map(|i| (i % classes) as u8).collect();
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0, 0.1).expect("valid std");
    let mut images = Vec::with_capacity(n * SYNTH_SIDE * SYNTH_SIDE);
    for &y in &labels {
        render(y as usize, &mut rng, &noise, &mut images);
    }
    Dataset::new(images, labels, (1, SYNTH_SIDE, SYNTH_SIDE), classes)
}
