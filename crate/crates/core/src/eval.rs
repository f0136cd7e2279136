//! Segmentation metrics and trimap export.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{distance_transform, extract_contour, BandMask};
use crate::raster::{encode_gray8, BinaryMask};

/// How a single pair is scored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IouConvention {
    /// Intersection over union of the foreground sets.
    #[default]
    Foreground,
    /// Mean of the foreground and background IoUs.
    ClassMean,
}

fn check_pair(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::dims("prediction", gt.dims(), pred.dims()));
    }
    Ok(())
}

fn ratio(intersection: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

/// Foreground IoU restricted to pixels where `keep` is true. Empty union scores 1.
fn masked_iou(pred: &BinaryMask, gt: &BinaryMask, keep: impl Fn(usize) -> bool) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if keep(i) {
            inter += usize::from(p && g);
            union += usize::from(p || g);
        }
    }
    ratio(inter, union)
}

pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    iou_with(pred, gt, IouConvention::Foreground)
}

pub fn iou_with(pred: &BinaryMask, gt: &BinaryMask, convention: IouConvention) -> Result<f64> {
    check_pair(pred, gt)?;
    let fg = masked_iou(pred, gt, |_| true);
    Ok(match convention {
        IouConvention::Foreground => fg,
        IouConvention::ClassMean => {
            let bg = masked_iou(&pred.complement(), &gt.complement(), |_| true);
            (fg + bg) / 2.0
        }
    })
}

/// Average per-image IoU over `(prediction, ground truth)` pairs.
pub fn mean_iou(pairs: &[(BinaryMask, BinaryMask)]) -> Result<f64> {
    mean_iou_with(pairs, IouConvention::Foreground)
}

pub fn mean_iou_with(pairs: &[(BinaryMask, BinaryMask)], convention: IouConvention) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("no prediction/ground-truth pairs"));
    }
    let mut total = 0.0;
    for (pred, gt) in pairs {
        total += iou_with(pred, gt, convention)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Foreground IoU over the pixels within Euclidean distance `w` of the
/// ground-truth contour. An empty band scores 1.
pub fn boundary_band_iou(pred: &BinaryMask, gt: &BinaryMask, w: u32) -> Result<f64> {
    check_pair(pred, gt)?;
    if w == 0 {
        return Err(Error::param("w", "band radius must be at least 1"));
    }
    let contour = extract_contour(gt);
    let Ok(distances) = distance_transform(&contour) else {
        return Ok(1.0);
    };
    let radius = f64::from(w);
    let d = distances.data();
    Ok(masked_iou(pred, gt, |i| d[i] <= radius))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrimapLabel {
    Foreground,
    Unknown,
    Background,
}

impl TrimapLabel {
    pub fn gray(self) -> u8 {
        match self {
            TrimapLabel::Foreground => 255,
            TrimapLabel::Unknown => 128,
            TrimapLabel::Background => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trimap {
    width: usize,
    height: usize,
    labels: Vec<TrimapLabel>,
}

impl Trimap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[TrimapLabel] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> TrimapLabel {
        self.labels[row * self.width + col]
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_gray8(
            self.width,
            self.height,
            self.labels.iter().map(|l| l.gray()).collect(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::raster::write_file(path.as_ref(), &self.encode_png()?)
    }
}

/// Unknown region = the contour band of total width `width_px`.
pub fn make_trimap(mask: &BinaryMask, width_px: u32) -> Trimap {
    let band = BandMask::from_mask(mask, width_px);
    let labels = mask
        .data()
        .iter()
        .zip(band.members().data())
        .map(|(&fg, &unknown)| match (unknown, fg) {
            (true, _) => TrimapLabel::Unknown,
            (false, true) => TrimapLabel::Foreground,
            (false, false) => TrimapLabel::Background,
        })
        .collect();
    Trimap {
        width: mask.width(),
        height: mask.height(),
        labels,
    }
}

/// One row of the evaluation report.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub image_id: String,
    pub iou: f64,
    pub band_iou: f64,
}

/// Writes `image_id,iou,band_iou` CSV.
pub fn write_report(records: &[EvalRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "image_id,iou,band_iou")?;
    for r in records {
        writeln!(out, "{},{},{}", r.image_id, r.iou, r.band_iou)?;
    }
    Ok(())
}
