//! Per-pixel softmax cross-entropy variants with analytic gradients.
//!
//! Every segmentation loss here is a mean over pixels of
//! `w_s * -sum_j t_j log y_j` for some target distribution `t` and weight
//! `w_s`, so the gradient w.r.t. the logits is `w_s (y - t) / N`:
//!
//! | loss              | target `t`          | weight `w_s`      |
//! |-------------------|---------------------|-------------------|
//! | [`ik_loss`]       | soft labels         | 1                 |
//! | [`gk_loss`]       | one-hot hard label  | global kernel     |
//! | [`combined_loss`] | soft labels         | global kernel     |
//!
//! All functions are generic over the float type; verification runs in `f64`
//! and training in `f32`.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::kernels::{GlobalKernel, SoftLabelField};
use crate::raster::{BinaryMask, TensorField};
use crate::{Class, NUM_CLASSES};

/// Mean loss over pixels and its gradient with respect to the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LossResult<T> {
    pub value: T,
    pub gradient: TensorField<T>,
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("f64 converts to any float")
}

fn check_logits<T: Copy>(logits: &TensorField<T>, dims: (usize, usize)) -> Result<()> {
    if logits.channels() != NUM_CLASSES {
        return Err(Error::Dimensions(format!(
            "logits need {NUM_CLASSES} channels, found {}",
            logits.channels()
        )));
    }
    if logits.dims() != dims {
        return Err(Error::dims("logits", dims, logits.dims()));
    }
    Ok(())
}

/// Numerically stable log-softmax and softmax of one pixel.
pub fn log_softmax<T: Float, const N: usize>(z: [T; N]) -> ([T; N], [T; N]) {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let shifted = z.map(|v| v - max);
    let sum = shifted.iter().fold(T::zero(), |acc, &v| acc + v.exp());
    let log_sum = sum.ln();
    let log_p = shifted.map(|v| v - log_sum);
    (log_p, log_p.map(T::exp))
}

fn pixel<T: Copy>(logits: &TensorField<T>, i: usize) -> [T; NUM_CLASSES] {
    let n = logits.plane_len();
    let d = logits.data();
    [d[i], d[n + i], d[2 * n + i]]
}

pub fn softmax_pixelwise<T: Float>(logits: &TensorField<T>) -> Result<TensorField<T>> {
    check_logits(logits, logits.dims())?;
    let n = logits.plane_len();
    let mut out = logits.clone();
    for i in 0..n {
        let (_, p) = log_softmax(pixel(logits, i));
        for (k, &v) in p.iter().enumerate() {
            out.data_mut()[k * n + i] = v;
        }
    }
    Ok(out)
}

/// Shared kernel of all three segmentation losses.
fn weighted_soft_ce<T: Float>(
    logits: &TensorField<T>,
    target: impl Fn(usize) -> [T; NUM_CLASSES],
    weight: impl Fn(usize) -> T,
) -> LossResult<T> {
    let n = logits.plane_len();
    let inv_n = T::one() / cast(n as f64);
    let mut gradient = logits.map(|_| T::zero());
    let mut total = T::zero();
    for i in 0..n {
        let (log_p, p) = log_softmax(pixel(logits, i));
        let t = target(i);
        let w = weight(i);
        let mut ce = T::zero();
        for k in 0..NUM_CLASSES {
            if t[k] != T::zero() {
                ce = ce - t[k] * log_p[k];
            }
        }
        total = total + w * ce;
        let g = gradient.data_mut();
        for k in 0..NUM_CLASSES {
            g[k * n + i] = w * (p[k] - t[k]) * inv_n;
        }
    }
    LossResult {
        value: total * inv_n,
        gradient,
    }
}

/// Soft-label cross-entropy against the individual kernel.
pub fn ik_loss<T: Float>(logits: &TensorField<T>, kernel: &SoftLabelField) -> Result<LossResult<T>> {
    check_logits(logits, kernel.dims())?;
    let labels = kernel.data();
    Ok(weighted_soft_ce(logits, |i| labels[i].map(cast), |_| T::one()))
}

/// Hard-label cross-entropy weighted per location by the global kernel.
pub fn gk_loss<T: Float>(
    logits: &TensorField<T>,
    labels: &[Class],
    kernel: &GlobalKernel,
) -> Result<LossResult<T>> {
    check_logits(logits, kernel.dims())?;
    check_labels(logits, labels)?;
    let weights = kernel.weights().data();
    Ok(weighted_soft_ce(
        logits,
        |i| one_hot(labels[i]),
        |i| cast(weights[i]),
    ))
}

/// Soft-label cross-entropy scaled per location by the global kernel.
pub fn combined_loss<T: Float>(
    logits: &TensorField<T>,
    kernel_indv: &SoftLabelField,
    kernel_global: &GlobalKernel,
) -> Result<LossResult<T>> {
    check_logits(logits, kernel_indv.dims())?;
    if kernel_global.dims() != kernel_indv.dims() {
        return Err(Error::dims("global kernel", kernel_indv.dims(), kernel_global.dims()));
    }
    let labels = kernel_indv.data();
    let weights = kernel_global.weights().data();
    Ok(weighted_soft_ce(
        logits,
        |i| labels[i].map(cast),
        |i| cast(weights[i]),
    ))
}

/// Plain hard-label cross-entropy, written independently of the losses above
/// so it can serve as their reference.
pub fn cross_entropy<T: Float>(logits: &TensorField<T>, labels: &[Class]) -> Result<LossResult<T>> {
    check_labels(logits, labels)?;
    check_logits(logits, logits.dims())?;
    let n = logits.plane_len();
    let mut gradient = logits.map(|_| T::zero());
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let z = pixel(logits, i);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + z.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp()).ln();
        let g = label.index();
        total = total + (lse - z[g]);
        for k in 0..NUM_CLASSES {
            let y = (z[k] - lse).exp();
            let hot = if k == g { T::one() } else { T::zero() };
            gradient.data_mut()[k * n + i] = (y - hot) / cast(n as f64);
        }
    }
    Ok(LossResult {
        value: total / cast(n as f64),
        gradient,
    })
}

fn check_labels<T: Copy>(logits: &TensorField<T>, labels: &[Class]) -> Result<()> {
    if labels.len() != logits.plane_len() {
        return Err(Error::Dimensions(format!(
            "{} labels for {} pixels",
            labels.len(),
            logits.plane_len()
        )));
    }
    Ok(())
}

fn one_hot<T: Float>(class: Class) -> [T; NUM_CLASSES] {
    let mut v = [T::zero(); NUM_CLASSES];
    v[class.index()] = T::one();
    v
}

/// Foreground/background hard labels (the boundary class is never a hard target).
pub fn hard_labels(mask: &BinaryMask) -> Vec<Class> {
    mask.data()
        .iter()
        .map(|&fg| if fg { Class::Foreground } else { Class::Background })
        .collect()
}

/// Hair-length attribute for the auxiliary classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Attribute {
    LongHair = 0,
    ShortHair = 1,
}

impl Attribute {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "long" | "long-hair" | "0" => Ok(Attribute::LongHair),
            "short" | "short-hair" | "1" => Ok(Attribute::ShortHair),
            other => Err(Error::param("attribute", format!("`{other}` is not long or short"))),
        }
    }
}

/// Binary softmax cross-entropy on the attribute logits.
pub fn attribute_loss<T: Float>(logits: [T; 2], label: Attribute) -> (T, [T; 2]) {
    let (log_p, p) = log_softmax(logits);
    let mut grad = p;
    grad[label.index()] = grad[label.index()] - T::one();
    (-log_p[label.index()], grad)
}
