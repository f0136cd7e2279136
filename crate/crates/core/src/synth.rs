//! Seeded synthetic portraits: a head ellipse over shoulders that run off the
//! bottom edge, optional long hair, flat foreground/background colours plus
//! Gaussian noise. Used by tests, the acceptance suite and `bsn train --synthetic`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::loss::Attribute;
use crate::net::Sample;
use crate::raster::{BinaryMask, TensorField};
use crate::seeded_rng;

/// Geometry of one synthetic portrait, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Portrait {
    pub centre_col: f64,
    pub head_row: f64,
    pub head_rx: f64,
    pub head_ry: f64,
    pub shoulder_row: f64,
    pub shoulder_half_width: f64,
    pub attribute: Attribute,
}

impl Portrait {
    pub fn random(size: usize, rng: &mut impl Rng) -> Self {
        let s = size as f64;
        let head_ry = s * rng.random_range(0.16..0.22);
        let head_row = s * rng.random_range(0.32..0.42);
        Portrait {
            centre_col: s * rng.random_range(0.42..0.58),
            head_row,
            head_rx: head_ry * rng.random_range(0.7..0.85),
            head_ry,
            shoulder_row: (head_row + head_ry * rng.random_range(0.8..1.1)).min(s - 2.0),
            shoulder_half_width: s * rng.random_range(0.3..0.42),
            attribute: if rng.random_bool(0.5) {
                Attribute::LongHair
            } else {
                Attribute::ShortHair
            },
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        let (y, x) = (row as f64, col as f64);
        let dx = x - self.centre_col;
        let head = (dx / self.head_rx).powi(2) + ((y - self.head_row) / self.head_ry).powi(2) <= 1.0;
        // Shoulders: upper half of a wide ellipse centred below the shoulder line.
        let drop = self.shoulder_half_width * 0.6;
        let shoulders = y >= self.shoulder_row
            && (dx / self.shoulder_half_width).powi(2) + ((y - self.shoulder_row - drop) / drop).powi(2) <= 1.0
            || y >= self.shoulder_row + drop && dx.abs() <= self.shoulder_half_width;
        let hair = self.attribute == Attribute::LongHair
            && y >= self.head_row
            && y <= self.shoulder_row + self.head_ry * 0.5
            && dx.abs() <= self.head_rx * 1.25;
        head || shoulders || hair
    }

    pub fn mask(&self, size: usize) -> BinaryMask {
        BinaryMask::from_fn(size, size, |r, c| self.contains(r, c)).expect("size is positive")
    }
}

/// Rendering knobs for the synthetic suite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    pub size: usize,
    /// Standard deviation of the per-channel Gaussian noise.
    pub noise: f64,
    /// Box-blur radius applied to the foreground coverage before colouring,
    /// so edges ramp over `2 * edge_blur + 1` pixels like a defocused photo.
    pub edge_blur: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            size: 64,
            noise: 0.05,
            edge_blur: 0,
        }
    }
}

/// Separable box blur of the 0/1 coverage with clamped borders.
fn soft_coverage(mask: &BinaryMask, radius: usize) -> Vec<f64> {
    let (w, h) = mask.dims();
    let mut alpha: Vec<f64> = mask.data().iter().map(|&f| f64::from(u8::from(f))).collect();
    if radius == 0 {
        return alpha;
    }
    let r = radius as isize;
    let taps = (2 * radius + 1) as f64;
    let blur = |src: &[f64]| -> Vec<f64> {
        let last = src.len() as isize - 1;
        (0..=last)
            .map(|i| (-r..=r).map(|k| src[(i + k).clamp(0, last) as usize]).sum::<f64>() / taps)
            .collect()
    };
    for row in 0..h {
        let line = blur(&alpha[row * w..(row + 1) * w]);
        alpha[row * w..(row + 1) * w].copy_from_slice(&line);
    }
    for col in 0..w {
        let column: Vec<f64> = (0..h).map(|row| alpha[row * w + col]).collect();
        let line = blur(&column);
        for (row, v) in line.into_iter().enumerate() {
            alpha[row * w + col] = v;
        }
    }
    alpha
}

/// Flat colours (foreground warm, background cool) mixed by the blurred
/// coverage, plus `N(0, noise)` per channel, clamped to `[0, 1]`.
pub fn render(mask: &BinaryMask, params: &SynthParams, rng: &mut impl Rng) -> TensorField<f32> {
    let fg = [rng.random_range(0.65..0.9), rng.random_range(0.45..0.65), rng.random_range(0.3..0.5)];
    let bg = [rng.random_range(0.1..0.35), rng.random_range(0.3..0.5), rng.random_range(0.55..0.85)];
    let normal = Normal::new(0.0, params.noise.max(0.0)).expect("finite standard deviation");
    let alpha = soft_coverage(mask, params.edge_blur);
    let n = mask.len();
    let mut data = vec![0f32; 3 * n];
    for c in 0..3 {
        for (i, &a) in alpha.iter().enumerate() {
            let base = a * fg[c] + (1.0 - a) * bg[c];
            data[c * n + i] = (base + normal.sample(rng)).clamp(0.0, 1.0) as f32;
        }
    }
    TensorField::new(mask.width(), mask.height(), 3, data).expect("mask dims are valid")
}

/// `count` square portraits, fully determined by `seed`.
pub fn portrait_suite(count: usize, params: &SynthParams, seed: u64) -> Vec<Sample> {
    let mut rng = seeded_rng(seed);
    (0..count)
        .map(|i| {
            let p = Portrait::random(params.size, &mut rng);
            let mask = p.mask(params.size);
            Sample {
                id: format!("synth_{i:03}"),
                image: render(&mask, params, &mut rng),
                mask,
                attribute: Some(p.attribute),
            }
        })
        .collect()
}

/// The same masks re-rendered with fresh colours and noise from another seed.
pub fn rerender(samples: &[Sample], params: &SynthParams, seed: u64) -> Vec<Sample> {
    let mut rng = seeded_rng(seed);
    samples
        .iter()
        .map(|s| Sample {
            image: render(&s.mask, params, &mut rng),
            ..s.clone()
        })
        .collect()
}
