//! Fixed convolutional feature extractors.
//!
//! Two backends exist: a VGG-family network (19 or 16 layer variant,
//! pretrained weights supplied by the caller or a seeded deterministic
//! initialization) and a three-layer `tiny` network whose whole purpose
//! is millisecond-scale tests that need no weight files.
//!
//! A network is immutable after construction. Feature extraction is
//! deterministic: same backend, same input, bit-identical features.

mod ops;
mod tiny;
mod vgg;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, Array3};

use crate::image::ImageTensor;
use crate::loss::{LayerDims, LayerFeatures};
use crate::{Error, Result, Scalar};

pub use vgg::{ConvTensors, PretrainedVgg};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum BackendKind {
    Vgg,
    Tiny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum VggVariant {
    Vgg19,
    Vgg16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Pooling {
    Max,
    Avg,
}

/// What a backend was built from; recorded in run manifests so a run
/// can be reproduced exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum WeightSource {
    /// Deterministic He-uniform initialization from the given seed.
    Seeded { seed: u64 },
    /// Weights ingested from a file; pinned by its SHA-256.
    Pretrained { sha256: String },
}

/// Construction-time choice of backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub variant: VggVariant,
    pub pooling: Pooling,
    pub seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Vgg,
            variant: VggVariant::Vgg19,
            pooling: Pooling::Max,
            seed: 0,
        }
    }
}

impl BackendConfig {
    pub fn tiny(seed: u64) -> Self {
        Self {
            kind: BackendKind::Tiny,
            seed,
            ..Self::default()
        }
    }

    /// Build the network. `pretrained` is only consulted for the VGG
    /// kind; without it the weights fall back to the seeded init.
    pub fn build<T: Scalar>(&self, pretrained: Option<PretrainedVgg>) -> Result<Network<T>> {
        match self.kind {
            BackendKind::Tiny => tiny::build(self.pooling, self.seed),
            BackendKind::Vgg => vgg::build(self.variant, self.pooling, self.seed, pretrained),
        }
    }
}

/// Identity of a constructed backend, sufficient to rebuild it.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub variant: Option<VggVariant>,
    pub pooling: Pooling,
    pub weight_source: WeightSource,
}

pub(crate) enum Op<T: Scalar> {
    Conv {
        weight: Array2<T>,
        bias: Vec<T>,
        in_ch: usize,
    },
    Relu,
    Pool(Pooling),
}

enum SavedOp<T: Scalar> {
    Conv { out: Array3<T> },
    Relu,
    MaxPool { argmax: Vec<u8>, in_dim: (usize, usize, usize) },
    AvgPool { in_dim: (usize, usize, usize) },
}

/// Everything the backward pass needs from one forward pass.
pub(crate) struct Tape<T: Scalar> {
    saved: Vec<SavedOp<T>>,
    deepest: usize,
    input_channels: usize,
    input_was_inverted: bool,
    input_hw: (usize, usize),
}

/// Per-channel affine input normalization applied after inversion and
/// channel replication.
#[derive(Debug, Clone, Copy)]
struct ChannelNorm {
    mean: [f64; 3],
    std: [f64; 3],
}

impl ChannelNorm {
    const IDENTITY: ChannelNorm = ChannelNorm {
        mean: [0.0; 3],
        std: [1.0; 3],
    };
    /// Convention of the publicly distributed VGG classification
    /// weights (RGB, inputs scaled to [0, 1]).
    const IMAGENET: ChannelNorm = ChannelNorm {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };
}

pub struct Network<T: Scalar> {
    ops: Vec<Op<T>>,
    /// Op index of the conv producing each named layer (pre-activation).
    tap_index: BTreeMap<String, usize>,
    tap_name_by_op: Vec<Option<String>>,
    layer_order: Vec<String>,
    channel_counts: BTreeMap<String, usize>,
    norm: ChannelNorm,
    descriptor: BackendDescriptor,
    extract_count: AtomicU64,
}

impl<T: Scalar> Network<T> {
    pub(crate) fn assemble(
        ops: Vec<Op<T>>,
        taps: Vec<(String, usize)>,
        norm_identity: bool,
        descriptor: BackendDescriptor,
    ) -> Self {
        let mut tap_index = BTreeMap::new();
        let mut tap_name_by_op = Vec::new();
        tap_name_by_op.resize(ops.len(), None);
        let mut layer_order = Vec::new();
        let mut channel_counts = BTreeMap::new();
        for (name, idx) in taps {
            let out_ch = match &ops[idx] {
                Op::Conv { weight, .. } => weight.nrows(),
                _ => unreachable!("taps sit on conv ops"),
            };
            channel_counts.insert(name.clone(), out_ch);
            tap_name_by_op[idx] = Some(name.clone());
            tap_index.insert(name.clone(), idx);
            layer_order.push(name);
        }
        Self {
            ops,
            tap_index,
            tap_name_by_op,
            layer_order,
            channel_counts,
            norm: if norm_identity {
                ChannelNorm::IDENTITY
            } else {
                ChannelNorm::IMAGENET
            },
            descriptor,
            extract_count: AtomicU64::new(0),
        }
    }

    /// Layer names in shallow-to-deep order.
    pub fn list_layers(&self) -> &[String] {
        &self.layer_order
    }

    pub fn channel_count(&self, layer: &str) -> Option<usize> {
        self.channel_counts.get(layer).copied()
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    /// How many feature extractions this instance has performed.
    pub fn extraction_count(&self) -> u64 {
        self.extract_count.load(Ordering::Relaxed)
    }

    /// Documented normalization constants: `(mean, std)` per channel.
    pub fn normalization(&self) -> ([f64; 3], [f64; 3]) {
        (self.norm.mean, self.norm.std)
    }

    pub fn has_layer(&self, name: &str) -> bool {
        self.tap_index.contains_key(name)
    }

    /// Map layer names to tap op indices; unknown names report the
    /// valid set.
    pub(crate) fn resolve_layers<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.tap_index.get(n.as_ref()).copied().ok_or_else(|| {
                    Error::invalid(format!(
                        "unknown layer {:?}; valid layers: {:?}",
                        n.as_ref(),
                        self.layer_order
                    ))
                })
            })
            .collect()
    }

    /// Invert (unless already inverted), replicate grayscale to three
    /// channels, and normalize; output is `3 x H x W`.
    pub fn preprocess(&self, img: &ImageTensor<T>) -> Array3<T> {
        self.preprocess_raw(&img.pixels(), img.is_inverted())
    }

    pub(crate) fn preprocess_raw(&self, pixels: &Array3<T>, inverted: bool) -> Array3<T> {
        let (h, w, c) = pixels.dim();
        let one = T::one();
        Array3::from_shape_fn((3, h, w), |(cn, y, x)| {
            let src = if c == 1 { 0 } else { cn };
            let mut v = pixels[[y, x, src]];
            if !inverted {
                v = one - v;
            }
            (v - T::from_f64(self.norm.mean[cn])) / T::from_f64(self.norm.std[cn])
        })
    }

    /// Chain rule through [`Self::preprocess_raw`]: gradient w.r.t. the
    /// network input becomes a gradient w.r.t. the raw pixels.
    fn preprocess_backward(
        &self,
        g_net: &Array3<T>,
        channels: usize,
        was_inverted: bool,
    ) -> Array3<T> {
        let (_, h, w) = g_net.dim();
        let sign = if was_inverted { T::one() } else { -T::one() };
        Array3::from_shape_fn((h, w, channels), |(y, x, c)| {
            let mut acc = T::zero();
            if channels == 1 {
                for cn in 0..3 {
                    acc += g_net[[cn, y, x]] / T::from_f64(self.norm.std[cn]);
                }
            } else {
                acc = g_net[[c, y, x]] / T::from_f64(self.norm.std[c]);
            }
            acc * sign
        })
    }

    /// Feature matrices (`N_l x M_l`) for the requested layers, plus
    /// their dims. One call = one extraction, whatever the layer count.
    pub fn extract_features<S: AsRef<str>>(
        &self,
        img: &ImageTensor<T>,
        layers: &[S],
    ) -> Result<(LayerFeatures<T>, LayerDims)> {
        let wanted = self.resolve_layers(layers)?;
        let px = img.pixels();
        let (features, dims, _) = self.run_forward(&px, img.is_inverted(), &wanted, false);
        Ok((features, dims))
    }

    pub(crate) fn extract_raw(
        &self,
        pixels: &Array3<T>,
        inverted: bool,
        wanted_ops: &[usize],
        with_tape: bool,
    ) -> (LayerFeatures<T>, LayerDims, Option<Tape<T>>) {
        self.run_forward(pixels, inverted, wanted_ops, with_tape)
    }

    fn run_forward(
        &self,
        pixels: &Array3<T>,
        inverted: bool,
        wanted_ops: &[usize],
        with_tape: bool,
    ) -> (LayerFeatures<T>, LayerDims, Option<Tape<T>>) {
        self.extract_count.fetch_add(1, Ordering::Relaxed);
        let (h, w, c) = pixels.dim();
        let mut x = self.preprocess_raw(pixels, inverted);
        let wanted: BTreeSet<usize> = wanted_ops.iter().copied().collect();
        let deepest = wanted.iter().next_back().copied().unwrap_or(0);
        let mut features = LayerFeatures::new();
        let mut dims = LayerDims::new();
        let mut saved: Vec<SavedOp<T>> = Vec::new();
        for (i, op) in self.ops.iter().enumerate().take(deepest + 1) {
            let y = match op {
                Op::Conv { weight, bias, .. } => {
                    let out = ops::conv3x3_forward(&x, weight, bias);
                    if wanted.contains(&i) {
                        let (n, hh, ww) = out.dim();
                        let name = self.tap_name_by_op[i].as_ref().expect("tapped conv");
                        let mat = out
                            .view()
                            .into_shape_with_order((n, hh * ww))
                            .expect("row-major reshape")
                            .to_owned();
                        features.insert(name.clone(), mat);
                        dims.insert(name.clone(), (n, hh * ww));
                    }
                    if with_tape {
                        saved.push(SavedOp::Conv { out: out.clone() });
                    }
                    out
                }
                Op::Relu => {
                    let out = ops::relu_forward(&x);
                    if with_tape {
                        saved.push(SavedOp::Relu);
                    }
                    out
                }
                Op::Pool(Pooling::Max) => {
                    let in_dim = x.dim();
                    let (out, argmax) = ops::maxpool2_forward(&x);
                    if with_tape {
                        saved.push(SavedOp::MaxPool { argmax, in_dim });
                    }
                    out
                }
                Op::Pool(Pooling::Avg) => {
                    let in_dim = x.dim();
                    let out = ops::avgpool2_forward(&x);
                    if with_tape {
                        saved.push(SavedOp::AvgPool { in_dim });
                    }
                    out
                }
            };
            x = y;
        }
        let tape = with_tape.then(|| Tape {
            saved,
            deepest,
            input_channels: c,
            input_was_inverted: inverted,
            input_hw: (h, w),
        });
        (features, dims, tape)
    }

    /// Back-propagate per-layer feature gradients (`N_l x M_l`, keyed by
    /// layer name) down to raw pixel space (`H x W x C`).
    pub(crate) fn backward_to_pixels(
        &self,
        tape: &Tape<T>,
        tap_grads: &BTreeMap<String, Array2<T>>,
    ) -> Array3<T> {
        let mut g: Option<Array3<T>> = None;
        for i in (0..=tape.deepest).rev() {
            if let Some(name) = &self.tap_name_by_op[i] {
                if let Some(gf) = tap_grads.get(name) {
                    let out_dim = match &tape.saved[i] {
                        SavedOp::Conv { out } => out.dim(),
                        _ => unreachable!("taps sit on conv ops"),
                    };
                    let inj = gf
                        .view()
                        .into_shape_with_order(out_dim)
                        .expect("row-major reshape")
                        .to_owned();
                    g = Some(match g {
                        Some(cur) => cur + inj,
                        None => inj,
                    });
                }
            }
            let Some(gi) = g else { g = None; continue };
            g = Some(match (&self.ops[i], &tape.saved[i]) {
                (Op::Conv { weight, in_ch, .. }, _) => {
                    ops::conv3x3_backward_input(&gi, weight, *in_ch)
                }
                (Op::Relu, _) => {
                    let pre = match &tape.saved[i - 1] {
                        SavedOp::Conv { out } => out,
                        _ => unreachable!("relu follows conv"),
                    };
                    ops::relu_backward(&gi, pre)
                }
                (Op::Pool(Pooling::Max), SavedOp::MaxPool { argmax, in_dim }) => {
                    ops::maxpool2_backward(&gi, argmax, *in_dim)
                }
                (Op::Pool(Pooling::Avg), SavedOp::AvgPool { in_dim }) => {
                    ops::avgpool2_backward(&gi, *in_dim)
                }
                _ => unreachable!("tape mismatches op list"),
            });
        }
        match g {
            Some(g_net) => {
                self.preprocess_backward(&g_net, tape.input_channels, tape.input_was_inverted)
            }
            None => Array3::zeros((tape.input_hw.0, tape.input_hw.1, tape.input_channels)),
        }
    }
}
