//! Soft-label and position-prior kernels.
//!
//! The individual kernel gives every pixel a distribution over
//! `[foreground, boundary, background]`. Pixels outside the boundary band are
//! one-hot; inside the band the boundary share is the pixel's normalized
//! distance to the contour and the remainder goes to the pixel's own
//! ground-truth class.
//!
//! The global kernel maps the training-set mean mask to a per-location loss
//! weight in `[a, b]`.

use crate::error::{Error, Result};
use crate::geometry::{BandMask, Spatial};
use crate::raster::{BinaryMask, ScalarField, TensorField};
use crate::Class;

/// How band distances are normalized into a boundary share.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NormMode {
    /// Divide by the sum of distances over all band pixels (band shares sum to 1).
    Sum,
    /// Divide by the band radius, clamped to 1.
    #[default]
    Max,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(NormMode::Sum),
            "max" => Ok(NormMode::Max),
            other => Err(Error::param("norm", format!("`{other}` is not one of sum, max"))),
        }
    }
}

/// Which way round the position prior is weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GlobalMode {
    /// `b - (1 - |m - 0.5| / 0.5)(b - a)`: uncertain locations get `a`.
    #[default]
    Literal,
    /// `a + (1 - |m - 0.5| / 0.5)(b - a)`: uncertain locations get `b`.
    Intent,
}

impl std::str::FromStr for GlobalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(GlobalMode::Literal),
            "intent" => Ok(GlobalMode::Intent),
            other => Err(Error::param(
                "mode",
                format!("`{other}` is not one of literal, intent"),
            )),
        }
    }
}

/// Per-pixel `[l_fg, l_bdry, l_bg]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabelField {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl SoftLabelField {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Dimensions(format!(
                "soft-label field {width}x{height} with {} pixels",
                data.len()
            )));
        }
        Ok(SoftLabelField {
            width,
            height,
            data,
        })
    }

    /// One-hot labels straight from a mask (foreground or background).
    pub fn one_hot(mask: &BinaryMask) -> Self {
        SoftLabelField {
            width: mask.width(),
            height: mask.height(),
            data: mask.data().iter().map(|&fg| one_hot_for(fg)).collect(),
        }
    }

    /// One-hot labels for arbitrary per-pixel classes.
    pub fn from_classes(width: usize, height: usize, classes: &[Class]) -> Result<Self> {
        let data = classes
            .iter()
            .map(|c| {
                let mut v = [0.0; 3];
                v[c.index()] = 1.0;
                v
            })
            .collect();
        SoftLabelField::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.data[row * self.width + col]
    }

    /// Planar 3-channel tensor in class order.
    pub fn to_tensor(&self) -> TensorField<f64> {
        let n = self.data.len();
        let mut data = vec![0.0; 3 * n];
        for (i, v) in self.data.iter().enumerate() {
            for (k, &x) in v.iter().enumerate() {
                data[k * n + i] = x;
            }
        }
        TensorField::new(self.width, self.height, 3, data).expect("valid dims")
    }

    pub fn from_tensor(tensor: &TensorField<f32>) -> Result<Self> {
        if tensor.channels() != 3 {
            return Err(Error::Dimensions(format!(
                "soft labels need 3 channels, found {}",
                tensor.channels()
            )));
        }
        let n = tensor.plane_len();
        let data = (0..n)
            .map(|i| {
                [0, 1, 2].map(|k| f64::from(tensor.data()[k * n + i]))
            })
            .collect();
        SoftLabelField::new(tensor.width(), tensor.height(), data)
    }

    /// The boundary share as a plane (for visualisation).
    pub fn boundary_plane(&self) -> ScalarField<f64> {
        ScalarField::new(
            self.width,
            self.height,
            self.data.iter().map(|v| v[Class::Boundary.index()]).collect(),
        )
        .expect("valid dims")
    }
}

impl Spatial for SoftLabelField {
    fn spatial_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn remap(&self, width: usize, height: usize, source: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                let (sr, sc) = source(r, c);
                data.push(self.get(sr, sc));
            }
        }
        SoftLabelField {
            width,
            height,
            data,
        }
    }
}

fn one_hot_for(foreground: bool) -> [f64; 3] {
    if foreground {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    }
}

/// Pixelwise mean of the masks (foreground = 1). Counts are accumulated as
/// integers, so the result does not depend on mask order.
pub fn compute_mean_mask(masks: &[BinaryMask]) -> Result<ScalarField<f64>> {
    let first = masks.first().ok_or(Error::Empty("no masks for the mean mask"))?;
    let (w, h) = first.dims();
    let mut counts = vec![0u64; w * h];
    for (i, mask) in masks.iter().enumerate() {
        if mask.dims() != (w, h) {
            return Err(Error::dims(&format!("mask #{i}"), (w, h), mask.dims()));
        }
        for (count, &fg) in counts.iter_mut().zip(mask.data()) {
            *count += u64::from(fg);
        }
    }
    let n = masks.len() as f64;
    ScalarField::new(w, h, counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Soft labels for one ground-truth mask with a band of total width `width_px`.
pub fn individual_kernel(mask: &BinaryMask, width_px: u32, norm: NormMode) -> SoftLabelField {
    let band = BandMask::from_mask(mask, width_px);
    kernel_from_band(mask, &band, norm)
}

/// Same as [`individual_kernel`] for a precomputed band.
pub fn kernel_from_band(mask: &BinaryMask, band: &BandMask, norm: NormMode) -> SoftLabelField {
    let (w, h) = mask.dims();
    let Some(distances) = band.distances() else {
        return SoftLabelField::one_hot(mask);
    };
    let members = band.members().data();
    let denom = match norm {
        NormMode::Sum => members
            .iter()
            .zip(distances.data())
            .filter(|(&m, _)| m)
            .map(|(_, &d)| d)
            .sum::<f64>(),
        NormMode::Max => band.radius(),
    };
    let data = mask
        .data()
        .iter()
        .zip(members)
        .zip(distances.data())
        .map(|((&fg, &in_band), &d)| {
            if !in_band {
                return one_hot_for(fg);
            }
            // A zero denominator only happens when every band pixel sits on the contour.
            let bdry = if denom > 0.0 { (d / denom).min(1.0) } else { 0.0 };
            let rest = 1.0 - bdry;
            if fg {
                [rest, bdry, 0.0]
            } else {
                [0.0, bdry, rest]
            }
        })
        .collect();
    SoftLabelField {
        width: w,
        height: h,
        data,
    }
}

/// Per-location loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalKernel {
    weights: ScalarField<f64>,
    a: f64,
    b: f64,
}

impl GlobalKernel {
    /// Constant weight everywhere (`a = b = value`).
    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self> {
        Ok(GlobalKernel {
            weights: ScalarField::filled(width, height, value)?,
            a: value,
            b: value,
        })
    }

    /// Arbitrary nonnegative weights, e.g. a cropped kernel.
    pub fn from_weights(weights: ScalarField<f64>) -> Result<Self> {
        let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in weights.data() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param("weights", format!("{v} is not a finite nonnegative weight")));
            }
            a = a.min(v);
            b = b.max(v);
        }
        Ok(GlobalKernel { weights, a, b })
    }

    pub fn weights(&self) -> &ScalarField<f64> {
        &self.weights
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights.get(row, col)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.weights.dims()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.a, self.b)
    }
}

impl Spatial for GlobalKernel {
    fn spatial_dims(&self) -> (usize, usize) {
        self.dims()
    }

    fn remap(&self, width: usize, height: usize, source: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        GlobalKernel {
            weights: self.weights.remap(width, height, source),
            a: self.a,
            b: self.b,
        }
    }
}

/// Weight for a single mean-mask value.
pub fn global_weight(mean: f64, a: f64, b: f64, mode: GlobalMode) -> f64 {
    let certainty = (mean - 0.5).abs() / 0.5;
    match mode {
        GlobalMode::Literal => b - (1.0 - certainty) * (b - a),
        GlobalMode::Intent => a + (1.0 - certainty) * (b - a),
    }
}

pub fn global_kernel(mean_mask: &ScalarField<f64>, a: f64, b: f64, mode: GlobalMode) -> Result<GlobalKernel> {
    if !(a.is_finite() && b.is_finite()) || a < 0.0 {
        return Err(Error::param("a", format!("need finite 0 <= a <= b, got a={a}, b={b}")));
    }
    if a > b {
        return Err(Error::param("b", format!("a={a} exceeds b={b}")));
    }
    if let Some(v) = mean_mask.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::param("mean_mask", format!("value {v} is outside [0, 1]")));
    }
    Ok(GlobalKernel {
        weights: mean_mask.map(|m| global_weight(m, a, b, mode)),
        a,
        b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row_mask() -> BinaryMask {
        BinaryMask::from_fn(7, 1, |_, c| c <= 3).unwrap()
    }

    /// Per-pixel oracle: brute-force distance to the contour pixels, band test,
    /// then the labelling rule written out directly.
    fn kernel_oracle(mask: &BinaryMask, width_px: u32, norm: NormMode) -> Vec<[f64; 3]> {
        let (w, h) = mask.dims();
        let contour: Vec<(i64, i64)> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .filter(|&(r, c)| {
                mask.get(r, c)
                    && ((r > 0 && !mask.get(r - 1, c))
                        || (r + 1 < h && !mask.get(r + 1, c))
                        || (c > 0 && !mask.get(r, c - 1))
                        || (c + 1 < w && !mask.get(r, c + 1)))
            })
            .map(|(r, c)| (r as i64, c as i64))
            .collect();
        let hot = |fg: bool| if fg { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
        if contour.is_empty() {
            return mask.data().iter().map(|&fg| hot(fg)).collect();
        }
        let radius = width_px as f64 / 2.0;
        let dist: Vec<f64> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r as i64, c as i64)))
            .map(|(r, c)| {
                contour
                    .iter()
                    .map(|&(pr, pc)| (((r - pr).pow(2) + (c - pc).pow(2)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = dist.iter().filter(|&&d| d <= radius).sum();
        mask.data()
            .iter()
            .zip(&dist)
            .map(|(&fg, &d)| {
                if d > radius {
                    return hot(fg);
                }
                let l = match norm {
                    NormMode::Sum if total > 0.0 => d / total,
                    NormMode::Max if radius > 0.0 => (d / radius).min(1.0),
                    _ => 0.0,
                };
                if fg {
                    [1.0 - l, l, 0.0]
                } else {
                    [0.0, l, 1.0 - l]
                }
            })
            .collect()
    }

    #[test]
    fn row_example_sum_mode() {
        let k = individual_kernel(&row_mask(), 2, NormMode::Sum);
        assert_eq!(k.get(0, 2), [0.5, 0.5, 0.0]);
        assert_eq!(k.get(0, 3), [1.0, 0.0, 0.0]);
        assert_eq!(k.get(0, 4), [0.0, 0.5, 0.5]);
        assert_eq!(k.get(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(k.get(0, 6), [0.0, 0.0, 1.0]);
        assert_eq!(k.data(), kernel_oracle(&row_mask(), 2, NormMode::Sum).as_slice());
    }

    #[test]
    fn row_example_max_mode() {
        let k = individual_kernel(&row_mask(), 2, NormMode::Max);
        assert_eq!(k.get(0, 2), [0.0, 1.0, 0.0]);
        assert_eq!(k.get(0, 3), [1.0, 0.0, 0.0]);
        assert_eq!(k.get(0, 4), [0.0, 1.0, 0.0]);
        assert_eq!(k.data(), kernel_oracle(&row_mask(), 2, NormMode::Max).as_slice());
    }

    #[test]
    fn degenerate_masks_are_one_hot() {
        let fg = BinaryMask::filled(4, 4, true).unwrap();
        assert_eq!(individual_kernel(&fg, 10, NormMode::Sum), SoftLabelField::one_hot(&fg));
        let bg = BinaryMask::filled(4, 4, false).unwrap();
        assert_eq!(individual_kernel(&bg, 10, NormMode::Max), SoftLabelField::one_hot(&bg));
    }

    #[test]
    fn zero_width_band_has_no_boundary_share() {
        let k = individual_kernel(&row_mask(), 0, NormMode::Max);
        assert_eq!(k, SoftLabelField::one_hot(&row_mask()));
        let k = individual_kernel(&row_mask(), 0, NormMode::Sum);
        assert_eq!(k, SoftLabelField::one_hot(&row_mask()));
    }

    #[test]
    fn mean_mask_examples() {
        let m = BinaryMask::from_fn(3, 2, |r, c| r == c).unwrap();
        let single = compute_mean_mask(std::slice::from_ref(&m)).unwrap();
        assert_eq!(single.data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

        let half = compute_mean_mask(&[
            BinaryMask::filled(2, 2, true).unwrap(),
            BinaryMask::filled(2, 2, false).unwrap(),
        ])
        .unwrap();
        assert!(half.data().iter().all(|&v| v == 0.5));

        let a = BinaryMask::new(1, 1, vec![true]).unwrap();
        let b = BinaryMask::new(1, 1, vec![false]).unwrap();
        let third = compute_mean_mask(&[a.clone(), a, b]).unwrap();
        assert_eq!(third.get(0, 0), 2.0 / 3.0);
    }

    #[test]
    fn mean_mask_errors() {
        assert!(matches!(compute_mean_mask(&[]), Err(Error::Empty(_))));
        let r = compute_mean_mask(&[
            BinaryMask::filled(2, 2, true).unwrap(),
            BinaryMask::filled(3, 2, true).unwrap(),
        ]);
        assert!(matches!(r, Err(Error::Dimensions(_))));
    }

    #[test]
    fn global_kernel_examples() {
        let m = ScalarField::new(3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        let lit = global_kernel(&m, 0.9, 1.0, GlobalMode::Literal).unwrap();
        assert_eq!(lit.weights().data(), &[1.0, 0.9, 1.0]);
        let int = global_kernel(&m, 0.9, 1.0, GlobalMode::Intent).unwrap();
        assert_eq!(int.weights().data(), &[0.9, 1.0, 0.9]);
    }

    #[test]
    fn global_kernel_errors() {
        let m = ScalarField::filled(2, 2, 0.5).unwrap();
        assert!(global_kernel(&m, 1.0, 0.9, GlobalMode::Literal).is_err());
        let bad = ScalarField::new(2, 1, vec![0.5, 1.5]).unwrap();
        assert!(global_kernel(&bad, 0.9, 1.0, GlobalMode::Literal).is_err());
    }

    #[test]
    fn equal_range_is_constant() {
        let m = ScalarField::new(4, 1, vec![0.0, 0.3, 0.5, 1.0]).unwrap();
        for mode in [GlobalMode::Literal, GlobalMode::Intent] {
            let k = global_kernel(&m, 0.7, 0.7, mode).unwrap();
            assert!(k.weights().data().iter().all(|&v| v == 0.7));
        }
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (2usize..14, 2usize..14).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h)
                .prop_map(move |d| BinaryMask::new(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn kernel_matches_oracle(mask in arb_mask(), p in 0u32..9, sum in any::<bool>()) {
            let norm = if sum { NormMode::Sum } else { NormMode::Max };
            let k = individual_kernel(&mask, p, norm);
            let oracle = kernel_oracle(&mask, p, norm);
            for (a, b) in k.data().iter().zip(&oracle) {
                for j in 0..3 {
                    prop_assert!((a[j] - b[j]).abs() <= 1e-12, "{:?} vs {:?}", a, b);
                }
            }
        }

        #[test]
        fn soft_labels_are_distributions(mask in arb_mask(), p in 2u32..9, sum in any::<bool>()) {
            let norm = if sum { NormMode::Sum } else { NormMode::Max };
            let k = individual_kernel(&mask, p, norm);
            let band = BandMask::from_mask(&mask, p);
            let mut band_total = 0.0;
            for (i, v) in k.data().iter().enumerate() {
                prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
                prop_assert_eq!(v[0] * v[2], 0.0);
                if band.members().data()[i] {
                    band_total += v[1];
                } else {
                    prop_assert!(v == &[1.0, 0.0, 0.0] || v == &[0.0, 0.0, 1.0]);
                }
            }
            if norm == NormMode::Sum && !band.is_empty() {
                prop_assert!((band_total - 1.0).abs() <= 1e-5);
            }
        }

        #[test]
        fn global_kernel_algebra(
            means in proptest::collection::vec(0.0f64..=1.0, 1..32),
            a in 0.0f64..2.0,
            span in 0.0f64..2.0,
        ) {
            let b = a + span;
            let n = means.len();
            let m = ScalarField::new(n, 1, means.clone()).unwrap();
            let flipped = m.map(|v| 1.0 - v);
            let lit = global_kernel(&m, a, b, GlobalMode::Literal).unwrap();
            let int = global_kernel(&m, a, b, GlobalMode::Intent).unwrap();
            let lit_f = global_kernel(&flipped, a, b, GlobalMode::Literal).unwrap();
            let int_f = global_kernel(&flipped, a, b, GlobalMode::Intent).unwrap();
            for i in 0..n {
                let (l, t) = (lit.weights().data()[i], int.weights().data()[i]);
                prop_assert!(l >= a - 1e-12 && l <= b + 1e-12);
                prop_assert!(t >= a - 1e-12 && t <= b + 1e-12);
                prop_assert!((l + t - (a + b)).abs() <= 1e-12);
                prop_assert!((l - lit_f.weights().data()[i]).abs() <= 1e-12);
                prop_assert!((t - int_f.weights().data()[i]).abs() <= 1e-12);
            }
        }
    }
}
