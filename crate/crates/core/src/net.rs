//! A small fully convolutional segmentation network with an attribute head.
//!
//! ```text
//! input (6) -> conv3x3 (16) -> relu -> conv3x3 (16) -> relu -> conv1x1 (3)  per-pixel logits
//!                                                 \-> mean pool -> fc 16->8 -> relu -> fc 8->2  attribute logits
//! ```
//!
//! All convolutions are stride 1 with zero "same" padding, so the logits have
//! the input's spatial size. Parameters are `f32` for training; the whole
//! network is generic over the float type so gradient checks can run in `f64`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{assemble_input, sample_crop_flip};
use crate::kernels::{
    compute_mean_mask, global_kernel, individual_kernel, GlobalKernel, GlobalMode, NormMode,
    SoftLabelField,
};
use crate::loss::{
    attribute_loss, combined_loss, cross_entropy, gk_loss, hard_labels, ik_loss, Attribute,
    LossResult,
};
use crate::raster::{self, BinaryMask, ScalarField, TensorField};
use crate::{seeded_rng, Class, NUM_CLASSES};

pub const INPUT_CHANNELS: usize = 6;
pub const HIDDEN_CHANNELS: usize = 16;
pub const ATTR_HIDDEN: usize = 8;
pub const ATTR_CLASSES: usize = 2;

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("f64 converts to any float")
}

/// Square-kernel convolution, weights laid out `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> Conv2d<T> {
    fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            weight: vec![T::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![T::zero(); out_channels],
        }
    }

    fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Copies planar `channels x height x width` data into a zero border of
    /// `pad` pixels on every side.
    fn pad(input: &[T], channels: usize, width: usize, height: usize, pad: usize) -> Vec<T> {
        let (pw, ph) = (width + 2 * pad, height + 2 * pad);
        let mut out = vec![T::zero(); channels * pw * ph];
        for c in 0..channels {
            for y in 0..height {
                let src = &input[(c * height + y) * width..][..width];
                out[(c * ph + y + pad) * pw + pad..][..width].copy_from_slice(src);
            }
        }
        out
    }

    fn weight_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx
    }

    fn forward(&self, input: &[T], width: usize, height: usize) -> Vec<T> {
        let n = width * height;
        let pad = self.kernel / 2;
        let (pw, ph) = (width + 2 * pad, height + 2 * pad);
        let padded = Self::pad(input, self.in_channels, width, height, pad);
        let mut out = vec![T::zero(); self.out_channels * n];
        for o in 0..self.out_channels {
            let out_plane = &mut out[o * n..(o + 1) * n];
            out_plane.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let src = &padded[i * pw * ph..(i + 1) * pw * ph];
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let w = self.weight[self.weight_index(o, i, ky, kx)];
                        for y in 0..height {
                            let s = &src[(y + ky) * pw + kx..][..width];
                            let d = &mut out_plane[y * width..][..width];
                            for (d, &s) in d.iter_mut().zip(s) {
                                *d = *d + w * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` and, if requested, the
    /// input gradient into `grad_input`.
    fn backward(
        &self,
        input: &[T],
        grad_out: &[T],
        width: usize,
        height: usize,
        grads: &mut Conv2d<T>,
        grad_input: Option<&mut [T]>,
    ) {
        let n = width * height;
        let pad = self.kernel / 2;
        let (pw, ph) = (width + 2 * pad, height + 2 * pad);
        let padded = Self::pad(input, self.in_channels, width, height, pad);
        let mut grad_padded = grad_input.as_ref().map(|_| vec![T::zero(); self.in_channels * pw * ph]);
        for o in 0..self.out_channels {
            let go = &grad_out[o * n..(o + 1) * n];
            grads.bias[o] = grads.bias[o] + go.iter().fold(T::zero(), |a, &v| a + v);
            for i in 0..self.in_channels {
                let src = &padded[i * pw * ph..(i + 1) * pw * ph];
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let widx = self.weight_index(o, i, ky, kx);
                        let w = self.weight[widx];
                        let mut acc = T::zero();
                        for y in 0..height {
                            let g = &go[y * width..][..width];
                            let s = &src[(y + ky) * pw + kx..][..width];
                            acc = g.iter().zip(s).fold(acc, |a, (&g, &s)| a + g * s);
                            if let Some(gp) = grad_padded.as_mut() {
                                let d = &mut gp[i * pw * ph + (y + ky) * pw + kx..][..width];
                                for (d, &g) in d.iter_mut().zip(g) {
                                    *d = *d + w * g;
                                }
                            }
                        }
                        grads.weight[widx] = grads.weight[widx] + acc;
                    }
                }
            }
        }
        if let (Some(gi), Some(gp)) = (grad_input, grad_padded) {
            for c in 0..self.in_channels {
                for y in 0..height {
                    let src = &gp[(c * ph + y + pad) * pw + pad..][..width];
                    let dst = &mut gi[(c * height + y) * width..][..width];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// Fully connected layer, weights laid out `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> Dense<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                row.iter().zip(x).fold(self.bias[o], |acc, (&w, &v)| acc + w * v)
            })
            .collect()
    }

    fn backward(&self, x: &[T], grad_out: &[T], grads: &mut Dense<T>) -> Vec<T> {
        let mut grad_in = vec![T::zero(); self.inputs];
        for o in 0..self.outputs {
            let g = grad_out[o];
            grads.bias[o] = grads.bias[o] + g;
            for i in 0..self.inputs {
                let k = o * self.inputs + i;
                grads.weight[k] = grads.weight[k] + g * x[i];
                grad_in[i] = grad_in[i] + self.weight[k] * g;
            }
        }
        grad_in
    }
}

/// Network parameters. The same type doubles as the gradient and momentum
/// container.
#[derive(Clone, Debug)]
pub struct TinyNet<T = f32> {
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub conv3: Conv2d<T>,
    pub attr1: Dense<T>,
    pub attr2: Dense<T>,
    generation: u64,
}

impl<T: PartialEq> PartialEq for TinyNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.conv1 == other.conv1
            && self.conv2 == other.conv2
            && self.conv3 == other.conv3
            && self.attr1 == other.attr1
            && self.attr2 == other.attr2
    }
}

/// Parameter names in checkpoint order.
pub const PARAM_NAMES: [&str; 10] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
    "attr1.weight",
    "attr1.bias",
    "attr2.weight",
    "attr2.bias",
];

/// Shapes matching [`PARAM_NAMES`].
pub fn param_shapes() -> [Vec<usize>; 10] {
    [
        vec![HIDDEN_CHANNELS, INPUT_CHANNELS, 3, 3],
        vec![HIDDEN_CHANNELS],
        vec![HIDDEN_CHANNELS, HIDDEN_CHANNELS, 3, 3],
        vec![HIDDEN_CHANNELS],
        vec![NUM_CLASSES, HIDDEN_CHANNELS, 1, 1],
        vec![NUM_CLASSES],
        vec![ATTR_HIDDEN, HIDDEN_CHANNELS],
        vec![ATTR_HIDDEN],
        vec![ATTR_CLASSES, ATTR_HIDDEN],
        vec![ATTR_CLASSES],
    ]
}

impl<T: Float> TinyNet<T> {
    pub fn zeros() -> Self {
        TinyNet {
            conv1: Conv2d::zeros(INPUT_CHANNELS, HIDDEN_CHANNELS, 3),
            conv2: Conv2d::zeros(HIDDEN_CHANNELS, HIDDEN_CHANNELS, 3),
            conv3: Conv2d::zeros(HIDDEN_CHANNELS, NUM_CLASSES, 1),
            attr1: Dense::zeros(HIDDEN_CHANNELS, ATTR_HIDDEN),
            attr2: Dense::zeros(ATTR_HIDDEN, ATTR_CLASSES),
            generation: 0,
        }
    }

    /// He-uniform weights (`U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`), zero biases.
    pub fn init(rng: &mut impl Rng) -> Self {
        let mut net = TinyNet::zeros();
        let fan_ins = [
            net.conv1.fan_in(),
            net.conv2.fan_in(),
            net.conv3.fan_in(),
            net.attr1.inputs,
            net.attr2.inputs,
        ];
        for (weights, fan_in) in [
            &mut net.conv1.weight,
            &mut net.conv2.weight,
            &mut net.conv3.weight,
            &mut net.attr1.weight,
            &mut net.attr2.weight,
        ]
        .into_iter()
        .zip(fan_ins)
        {
            let bound = (6.0 / fan_in as f64).sqrt();
            for w in weights.iter_mut() {
                *w = cast(rng.random_range(-bound..bound));
            }
        }
        net
    }

    pub fn params(&self) -> [(&'static str, &[T]); 10] {
        [
            (PARAM_NAMES[0], &self.conv1.weight),
            (PARAM_NAMES[1], &self.conv1.bias),
            (PARAM_NAMES[2], &self.conv2.weight),
            (PARAM_NAMES[3], &self.conv2.bias),
            (PARAM_NAMES[4], &self.conv3.weight),
            (PARAM_NAMES[5], &self.conv3.bias),
            (PARAM_NAMES[6], &self.attr1.weight),
            (PARAM_NAMES[7], &self.attr1.bias),
            (PARAM_NAMES[8], &self.attr2.weight),
            (PARAM_NAMES[9], &self.attr2.bias),
        ]
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> [(&'static str, &mut Vec<T>); 10] {
        self.generation += 1;
        [
            (PARAM_NAMES[0], &mut self.conv1.weight),
            (PARAM_NAMES[1], &mut self.conv1.bias),
            (PARAM_NAMES[2], &mut self.conv2.weight),
            (PARAM_NAMES[3], &mut self.conv2.bias),
            (PARAM_NAMES[4], &mut self.conv3.weight),
            (PARAM_NAMES[5], &mut self.conv3.bias),
            (PARAM_NAMES[6], &mut self.attr1.weight),
            (PARAM_NAMES[7], &mut self.attr1.bias),
            (PARAM_NAMES[8], &mut self.attr2.weight),
            (PARAM_NAMES[9], &mut self.attr2.bias),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// True for the parameters that only feed the attribute head.
    pub fn is_attribute_param(name: &str) -> bool {
        name.starts_with("attr")
    }

    pub fn cast<U: Float>(&self) -> TinyNet<U> {
        let mut out = TinyNet::<U>::zeros();
        for ((_, src), (_, dst)) in self.params().into_iter().zip(out.params_mut()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = U::from(s).expect("float cast");
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.params()
            .iter()
            .flat_map(|(_, p)| p.iter())
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn forward(&self, input: &TensorField<T>) -> Result<ForwardOutput<T>> {
        if input.channels() != INPUT_CHANNELS {
            return Err(Error::Dimensions(format!(
                "network input needs {INPUT_CHANNELS} channels, found {}",
                input.channels()
            )));
        }
        let (w, h) = input.dims();
        let n = w * h;
        let a1 = self.conv1.forward(input.data(), w, h);
        let h1: Vec<T> = a1.iter().map(|&v| v.max(T::zero())).collect();
        let a2 = self.conv2.forward(&h1, w, h);
        let h2: Vec<T> = a2.iter().map(|&v| v.max(T::zero())).collect();
        let logits = self.conv3.forward(&h2, w, h);

        let inv_n = T::one() / cast(n as f64);
        let pooled: Vec<T> = (0..HIDDEN_CHANNELS)
            .map(|c| h2[c * n..(c + 1) * n].iter().fold(T::zero(), |a, &v| a + v) * inv_n)
            .collect();
        let f1 = self.attr1.forward(&pooled);
        let r1: Vec<T> = f1.iter().map(|&v| v.max(T::zero())).collect();
        let attr = self.attr2.forward(&r1);

        Ok(ForwardOutput {
            logits: TensorField::new(w, h, NUM_CLASSES, logits)?,
            attr: [attr[0], attr[1]],
            cache: ForwardCache {
                width: w,
                height: h,
                generation: self.generation,
                input: input.data().to_vec(),
                a1,
                h1,
                a2,
                h2,
                pooled,
                f1,
                r1,
            },
        })
    }

    /// Parameter gradients given upstream gradients on the per-pixel logits
    /// and (optionally) the attribute logits.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &TensorField<T>,
        grad_attr: Option<[T; 2]>,
    ) -> Result<TinyNet<T>> {
        if cache.generation != self.generation {
            return Err(Error::param(
                "cache",
                "forward cache is stale: parameters changed since the forward pass",
            ));
        }
        if grad_logits.dims() != (cache.width, cache.height) || grad_logits.channels() != NUM_CLASSES {
            return Err(Error::param(
                "cache",
                format!(
                    "gradient {}x{}x{} does not match cached forward {}x{}x{NUM_CLASSES}",
                    grad_logits.width(),
                    grad_logits.height(),
                    grad_logits.channels(),
                    cache.width,
                    cache.height
                ),
            ));
        }
        let (w, h) = (cache.width, cache.height);
        let n = w * h;
        let mut grads = TinyNet::zeros();

        let mut g_h2 = vec![T::zero(); HIDDEN_CHANNELS * n];
        self.conv3
            .backward(&cache.h2, grad_logits.data(), w, h, &mut grads.conv3, Some(&mut g_h2));

        if let Some(ga) = grad_attr {
            let g_r1 = self.attr2.backward(&cache.r1, &ga, &mut grads.attr2);
            let g_f1: Vec<T> = g_r1
                .iter()
                .zip(&cache.f1)
                .map(|(&g, &f)| if f > T::zero() { g } else { T::zero() })
                .collect();
            let g_pooled = self.attr1.backward(&cache.pooled, &g_f1, &mut grads.attr1);
            let inv_n = T::one() / cast(n as f64);
            for c in 0..HIDDEN_CHANNELS {
                let share = g_pooled[c] * inv_n;
                for v in &mut g_h2[c * n..(c + 1) * n] {
                    *v = *v + share;
                }
            }
        }

        let g_a2: Vec<T> = g_h2
            .iter()
            .zip(&cache.a2)
            .map(|(&g, &a)| if a > T::zero() { g } else { T::zero() })
            .collect();
        let mut g_h1 = vec![T::zero(); HIDDEN_CHANNELS * n];
        self.conv2
            .backward(&cache.h1, &g_a2, w, h, &mut grads.conv2, Some(&mut g_h1));
        let g_a1: Vec<T> = g_h1
            .iter()
            .zip(&cache.a1)
            .map(|(&g, &a)| if a > T::zero() { g } else { T::zero() })
            .collect();
        self.conv1
            .backward(&cache.input, &g_a1, w, h, &mut grads.conv1, None);
        Ok(grads)
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    width: usize,
    height: usize,
    generation: u64,
    input: Vec<T>,
    a1: Vec<T>,
    h1: Vec<T>,
    a2: Vec<T>,
    h2: Vec<T>,
    pooled: Vec<T>,
    f1: Vec<T>,
    r1: Vec<T>,
}

impl<T: Float> ForwardCache<T> {
    /// Sign pattern of every rectifier input; used to detect kinks during
    /// finite differencing.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.a1
            .iter()
            .chain(&self.a2)
            .chain(&self.f1)
            .map(|&v| v > T::zero())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub logits: TensorField<T>,
    pub attr: [T; 2],
    pub cache: ForwardCache<T>,
}

/// `init_net`: deterministic He-uniform initialization from a seed.
pub fn init_net(seed: u64) -> TinyNet<f32> {
    TinyNet::init(&mut seeded_rng(seed))
}

/// One SGD step: `v = momentum * v + g; theta -= lr * v`.
pub fn sgd_step<T: Float>(
    net: &mut TinyNet<T>,
    grads: &TinyNet<T>,
    velocity: &mut TinyNet<T>,
    lr: T,
    momentum: T,
) -> Result<()> {
    for (((name, theta), (_, g)), (_, v)) in net.params().into_iter().zip(grads.params()).zip(velocity.params()) {
        if theta.len() != g.len() || theta.len() != v.len() {
            return Err(Error::Dimensions(format!(
                "{name}: {} parameters, {} gradients, {} velocities",
                theta.len(),
                g.len(),
                v.len()
            )));
        }
    }
    for (((_, theta), (_, g)), (_, v)) in net
        .params_mut()
        .into_iter()
        .zip(grads.params())
        .zip(velocity.params_mut())
    {
        for ((t, &g), v) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = momentum * *v + g;
            *t = *t - lr * *v;
        }
    }
    Ok(())
}

/// SGD with momentum state.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: TinyNet<T>,
}

impl<T: Float> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: TinyNet::zeros(),
        }
    }

    pub fn step(&mut self, net: &mut TinyNet<T>, grads: &TinyNet<T>) -> Result<()> {
        sgd_step(net, grads, &mut self.velocity, self.lr, self.momentum)
    }
}

/// Foreground where `z_fg >= z_bg`; the boundary logit is ignored.
pub fn mask_from_logits<T: Float>(logits: &TensorField<T>) -> Result<BinaryMask> {
    if logits.channels() != NUM_CLASSES {
        return Err(Error::Dimensions(format!(
            "logits need {NUM_CLASSES} channels, found {}",
            logits.channels()
        )));
    }
    let fg = logits.channel(Class::Foreground.index());
    let bg = logits.channel(Class::Background.index());
    BinaryMask::new(
        logits.width(),
        logits.height(),
        fg.iter().zip(bg).map(|(f, b)| f >= b).collect(),
    )
}

pub fn predict_mask<T: Float>(net: &TinyNet<T>, input: &TensorField<T>) -> Result<BinaryMask> {
    mask_from_logits(&net.forward(input)?.logits)
}

// ---------------------------------------------------------------------------
// Objective

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossMode {
    /// Soft labels only.
    Ik,
    /// Global weighting of hard labels only.
    Gk,
    /// Soft labels weighted by the global kernel.
    #[default]
    Combined,
    /// Plain hard-label cross-entropy.
    Baseline,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ik" => Ok(LossMode::Ik),
            "gk" => Ok(LossMode::Gk),
            "combined" => Ok(LossMode::Combined),
            "baseline" => Ok(LossMode::Baseline),
            other => Err(Error::param(
                "loss",
                format!("`{other}` is not one of ik, gk, combined, baseline"),
            )),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Ik => "ik",
            LossMode::Gk => "gk",
            LossMode::Combined => "combined",
            LossMode::Baseline => "baseline",
        })
    }
}

/// Per-sample supervision for one segmentation loss.
#[derive(Clone, Debug)]
pub struct Targets {
    mode: LossMode,
    soft: Option<SoftLabelField>,
    hard: Vec<Class>,
    global: GlobalKernel,
}

impl Targets {
    pub fn new(
        mode: LossMode,
        mask: &BinaryMask,
        global: GlobalKernel,
        width_px: u32,
        norm: NormMode,
    ) -> Result<Self> {
        if global.dims() != mask.dims() {
            return Err(Error::dims("global kernel", mask.dims(), global.dims()));
        }
        let soft = matches!(mode, LossMode::Ik | LossMode::Combined)
            .then(|| individual_kernel(mask, width_px, norm));
        Ok(Targets {
            mode,
            soft,
            hard: hard_labels(mask),
            global,
        })
    }

    pub fn mode(&self) -> LossMode {
        self.mode
    }

    pub fn soft_labels(&self) -> Option<&SoftLabelField> {
        self.soft.as_ref()
    }

    pub fn loss<T: Float>(&self, logits: &TensorField<T>) -> Result<LossResult<T>> {
        match (self.mode, &self.soft) {
            (LossMode::Ik, Some(soft)) => ik_loss(logits, soft),
            (LossMode::Combined, Some(soft)) => combined_loss(logits, soft, &self.global),
            (LossMode::Gk, _) => gk_loss(logits, &self.hard, &self.global),
            (LossMode::Baseline, _) => cross_entropy(logits, &self.hard),
            _ => unreachable!("soft labels are built for ik and combined"),
        }
    }
}

// ---------------------------------------------------------------------------
// Training

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Phase 1: segmentation only.
    pub iterations: usize,
    /// Phase 2: attribute head added, learning rate divided by 10.
    pub phase2_iterations: usize,
    pub crop: usize,
    pub flip_prob: f64,
    pub seed: u64,
    pub loss: LossMode,
    pub band_width: u32,
    pub norm: NormMode,
    pub global_mode: GlobalMode,
    pub a: f64,
    pub b: f64,
    /// Weight of the attribute loss in phase 2.
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2.5e-4,
            momentum: 0.0,
            iterations: 20_000,
            phase2_iterations: 20_000,
            crop: 400,
            flip_prob: 0.5,
            seed: 0,
            loss: LossMode::Combined,
            band_width: 10,
            norm: NormMode::Max,
            global_mode: GlobalMode::Literal,
            a: 0.9,
            b: 1.0,
            lambda: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::param("learning_rate", format!("{} must be finite and >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", format!("{} is not in [0, 1)", self.momentum)));
        }
        if self.iterations == 0 {
            return Err(Error::param("iterations", "need at least one iteration"));
        }
        if self.crop == 0 {
            return Err(Error::param("crop", "crop must be positive"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::param("flip_prob", format!("{} is not in [0, 1]", self.flip_prob)));
        }
        if !(self.a.is_finite() && self.b.is_finite() && 0.0 <= self.a && self.a <= self.b) {
            return Err(Error::param("a", format!("need 0 <= a <= b, got a={}, b={}", self.a, self.b)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::param("lambda", format!("{} must be finite and >= 0", self.lambda)));
        }
        Ok(())
    }
}

/// One training example: RGB image in `[0, 1]`, ground truth, optional attribute.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: TensorField<f32>,
    pub mask: BinaryMask,
    pub attribute: Option<Attribute>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub phase: u8,
    pub seg_loss: f64,
    pub attr_loss: f64,
    pub total: f64,
}

/// Writes `iteration,phase,seg_loss,attr_loss,total` CSV.
pub fn write_loss_log(log: &[LogEntry], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "iteration,phase,seg_loss,attr_loss,total")?;
    for e in log {
        writeln!(out, "{},{},{},{},{}", e.iteration, e.phase, e.seg_loss, e.attr_loss, e.total)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: TinyNet<f32>,
    pub initial: TinyNet<f32>,
    pub log: Vec<LogEntry>,
    pub mean_mask: ScalarField<f64>,
    pub global: GlobalKernel,
}

/// Mean mask and global kernel over a dataset's ground truth.
pub fn dataset_priors(dataset: &[Sample], config: &TrainConfig) -> Result<(ScalarField<f64>, GlobalKernel)> {
    let masks: Vec<BinaryMask> = dataset.iter().map(|s| s.mask.clone()).collect();
    let mean = compute_mean_mask(&masks)?;
    let global = global_kernel(&mean, config.a, config.b, config.global_mode)?;
    Ok((mean, global))
}

/// Two-phase SGD. Each iteration: pick a sample, crop/flip image, mask and
/// global kernel together, build the soft labels on the transformed mask,
/// then forward, loss, backward and update.
pub fn train(dataset: &[Sample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let first = dataset.first().ok_or(Error::Empty("training dataset"))?;
    let dims = first.mask.dims();
    for s in dataset {
        if s.mask.dims() != dims || s.image.dims() != dims {
            return Err(Error::Dimensions(format!(
                "sample `{}` is not {}x{} like the first sample",
                s.id, dims.0, dims.1
            )));
        }
    }
    if config.crop > dims.0.min(dims.1) {
        return Err(Error::param(
            "crop",
            format!("crop {} exceeds image size {}x{}", config.crop, dims.0, dims.1),
        ));
    }

    let (mean_mask, global) = dataset_priors(dataset, config)?;
    let inputs = dataset
        .iter()
        .map(|s| assemble_input(&s.image, &mean_mask))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = seeded_rng(config.seed);
    let mut net = TinyNet::<f32>::init(&mut rng);
    let initial = net.clone();
    let mut log = Vec::with_capacity(config.iterations + config.phase2_iterations);

    let phases = [
        (1u8, config.iterations, config.learning_rate),
        (2u8, config.phase2_iterations, config.learning_rate / 10.0),
    ];
    let mut iteration = 0;
    for (phase, steps, lr) in phases {
        let mut sgd = Sgd::new(lr as f32, config.momentum as f32);
        for _ in 0..steps {
            let idx = rng.random_range(0..dataset.len());
            let sample = &dataset[idx];
            let t = sample_crop_flip(dims.0, dims.1, config.crop, config.flip_prob, &mut rng)?;
            let input = t.apply(&inputs[idx])?;
            let mask = t.apply(&sample.mask)?;
            let targets = Targets::new(config.loss, &mask, t.apply(&global)?, config.band_width, config.norm)?;

            let out = net.forward(&input)?;
            let seg = targets.loss(&out.logits)?;
            let (attr_loss, grad_attr) = match (phase, sample.attribute) {
                (2, Some(label)) => {
                    let (v, g) = attribute_loss(out.attr, label);
                    let lambda = config.lambda as f32;
                    (v * lambda, Some(g.map(|x| x * lambda)))
                }
                _ => (0.0, None),
            };
            let total = seg.value + attr_loss;
            if !total.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    phase,
                    detail: format!(
                        "sample `{}`: seg_loss={}, attr_loss={attr_loss}",
                        sample.id, seg.value
                    ),
                });
            }
            let grads = net.backward(&out.cache, &seg.gradient, grad_attr)?;
            sgd.step(&mut net, &grads)?;
            log.push(LogEntry {
                iteration,
                phase,
                seg_loss: f64::from(seg.value),
                attr_loss: f64::from(attr_loss),
                total: f64::from(total),
            });
            iteration += 1;
        }
    }

    Ok(TrainOutcome {
        net,
        initial,
        log,
        mean_mask,
        global,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const MANIFEST_FILE: &str = "manifest.txt";

fn shape_string(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Parses `name shape` lines (`conv1.weight 16x6x3x3`). Blank lines and `#`
/// comments are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(shape), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format(format!("manifest line {}: expected `name shape`", lineno + 1)));
        };
        let dims = shape
            .split('x')
            .map(|d| {
                d.parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| Error::Format(format!("manifest line {}: bad dimension `{d}`", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((name.to_string(), dims));
    }
    Ok(out)
}

/// Writes `manifest.txt` plus one `BSNT` file per parameter (`<name>.bsnt`,
/// stored as `rows = shape[0]`, `cols = rest`, 1 channel).
pub fn save_checkpoint(net: &TinyNet<f32>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for ((name, values), shape) in net.params().into_iter().zip(param_shapes()) {
        manifest.push_str(&format!("{name} {}\n", shape_string(&shape)));
        let rows = shape[0];
        let tensor = TensorField::new(values.len() / rows, rows, 1, values.to_vec())?;
        raster::write_tensor(&tensor, dir.join(format!("{name}.bsnt")))?;
    }
    raster::write_file(&dir.join(MANIFEST_FILE), manifest.as_bytes())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<TinyNet<f32>> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let entries = parse_manifest(&text).map_err(|e| e.in_file(&manifest_path))?;
    let mut net = TinyNet::<f32>::zeros();
    let expected = param_shapes();
    if entries.len() != PARAM_NAMES.len() {
        return Err(Error::Format(format!(
            "{}: {} entries, expected {}",
            manifest_path.display(),
            entries.len(),
            PARAM_NAMES.len()
        )));
    }
    for (((name, slot), shape), (found_name, found_shape)) in
        net.params_mut().into_iter().zip(expected).zip(entries)
    {
        if found_name != name || found_shape != shape {
            return Err(Error::Format(format!(
                "{}: expected `{name} {}`, found `{found_name} {}`",
                manifest_path.display(),
                shape_string(&shape),
                shape_string(&found_shape)
            )));
        }
        let tensor = raster::read_tensor(dir.join(format!("{name}.bsnt")))?;
        if tensor.data().len() != slot.len() {
            return Err(Error::Format(format!(
                "{name}.bsnt holds {} values, expected {}",
                tensor.data().len(),
                slot.len()
            )));
        }
        slot.copy_from_slice(tensor.data());
    }
    Ok(net)
}

// ---------------------------------------------------------------------------
// Gradient check

/// Inputs for a finite-difference check, all in `f64`.
#[derive(Clone, Debug)]
pub struct GradCheckSample {
    pub input: TensorField<f64>,
    pub targets: Targets,
    pub attribute: Attribute,
    pub lambda: f64,
}

impl GradCheckSample {
    /// A random `size x size` instance: uniform inputs, a random blob mask
    /// and random global weights in `[0.9, 1.0]`.
    pub fn random(size: usize, mode: LossMode, rng: &mut impl Rng) -> Result<Self> {
        let input = TensorField::new(
            size,
            size,
            INPUT_CHANNELS,
            (0..INPUT_CHANNELS * size * size).map(|_| rng.random_range(0.0..1.0)).collect(),
        )?;
        let (cr, cc) = (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
        let radius = rng.random_range(0.25..0.6) * size as f64;
        let mut mask = BinaryMask::from_fn(size, size, |r, c| {
            (r as f64 - cr).hypot(c as f64 - cc) <= radius
        })?;
        if mask.count_foreground() == 0 || mask.count_foreground() == mask.len() {
            mask.set(0, 0, !mask.get(0, 0));
        }
        let weights = ScalarField::from_fn(size, size, |_, _| rng.random_range(0.9..=1.0))?;
        let attribute = if rng.random_bool(0.5) {
            Attribute::LongHair
        } else {
            Attribute::ShortHair
        };
        let width_px = 2 + 2 * (size as u32 / 4);
        let targets = Targets::new(mode, &mask, GlobalKernel::from_weights(weights)?, width_px, NormMode::Max)?;
        Ok(GradCheckSample {
            input,
            targets,
            attribute,
            lambda: 1.0,
        })
    }

    /// Scalar objective `seg + lambda * attr`.
    fn objective(&self, net: &TinyNet<f64>) -> Result<(f64, Vec<bool>)> {
        let out = net.forward(&self.input)?;
        let seg = self.targets.loss(&out.logits)?;
        let (attr, _) = attribute_loss(out.attr, self.attribute);
        Ok((seg.value + self.lambda * attr, out.cache.activation_pattern()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst error over the loss gradient w.r.t. the logits.
    pub logit_error: f64,
    /// Worst error over all network parameters.
    pub param_error: f64,
    pub worst_param: String,
    /// Parameters whose step straddled a rectifier kink and were re-checked with a smaller step.
    pub kink_retries: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.logit_error.max(self.param_error)
    }
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

pub const GRADCHECK_STEP: f64 = 1e-5;

/// Central differences (step `1e-5`) for every logit and every parameter,
/// compared against the analytic gradients.
///
/// If a parameter's `+h` or `-h` evaluation flips any rectifier, the
/// difference quotient is measuring a kink rather than the derivative; the
/// step is shrunk by 10x (up to three times) for that parameter.
pub fn gradient_check(net: &TinyNet<f64>, sample: &GradCheckSample) -> Result<GradCheckReport> {
    let h = GRADCHECK_STEP;
    let out = net.forward(&sample.input)?;

    // Loss level.
    let seg = sample.targets.loss(&out.logits)?;
    let mut logit_error: f64 = 0.0;
    for i in 0..out.logits.data().len() {
        let eval = |delta: f64| -> Result<f64> {
            let mut z = out.logits.clone();
            z.data_mut()[i] += delta;
            Ok(sample.targets.loss(&z)?.value)
        };
        let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
        logit_error = logit_error.max(relative_error(seg.gradient.data()[i], numeric));
    }
    let (_, attr_grad) = attribute_loss(out.attr, sample.attribute);
    for k in 0..ATTR_CLASSES {
        let eval = |delta: f64| {
            let mut a = out.attr;
            a[k] += delta;
            attribute_loss(a, sample.attribute).0
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        logit_error = logit_error.max(relative_error(attr_grad[k], numeric));
    }

    // Network level.
    let grad_attr = attr_grad.map(|g| g * sample.lambda);
    let analytic = net.backward(&out.cache, &seg.gradient, Some(grad_attr))?;
    let base_pattern = out.cache.activation_pattern();
    let mut probe = net.clone();
    let mut param_error: f64 = 0.0;
    let mut worst_param = String::new();
    let mut kink_retries = 0;
    for (p, (name, grads)) in analytic.params().into_iter().enumerate() {
        for (j, &g) in grads.iter().enumerate() {
            let original = net.params()[p].1[j];
            let mut step = h;
            let mut numeric = 0.0;
            for attempt in 0..4 {
                probe.params_mut()[p].1[j] = original + step;
                let (plus, pat_plus) = sample.objective(&probe)?;
                probe.params_mut()[p].1[j] = original - step;
                let (minus, pat_minus) = sample.objective(&probe)?;
                probe.params_mut()[p].1[j] = original;
                numeric = (plus - minus) / (2.0 * step);
                if (pat_plus == base_pattern && pat_minus == base_pattern) || attempt == 3 {
                    break;
                }
                kink_retries += 1;
                step /= 10.0;
            }
            let err = relative_error(g, numeric);
            if err > param_error {
                param_error = err;
                worst_param = format!("{name}[{j}]");
            }
        }
    }
    Ok(GradCheckReport {
        logit_error,
        param_error,
        worst_param,
        kink_retries,
    })
}
