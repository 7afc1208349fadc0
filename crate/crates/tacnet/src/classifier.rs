//! Compact counting classifier: a small CNN over the `N × M` feature map
//! producing a posterior over `ζ + 1` count classes.
//!
//! Three convolution blocks (3×3, stride 1, zero padding, rectifier, average
//! pooling where the block stride exceeds 1), global average pooling, one
//! hidden affine layer, and an affine output layer with softmax. The
//! architecture is deliberately small; the interface is shape-checked so
//! larger backbones can slot in behind it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat::Mat;
use crate::real::Real;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("feature map shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid classifier config: {0}")]
    BadConfig(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// One convolution block: `out_channels` filters of the given 2D extent,
/// rectifier, then average pooling by `stride` when `stride > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
}

/// Structure of the compact CNN.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompactCnnConfig {
    pub conv_blocks: Vec<ConvBlockSpec>,
    pub hidden_dim: usize,
    pub n_classes: usize,
}

impl Default for CompactCnnConfig {
    fn default() -> Self {
        Self {
            conv_blocks: vec![
                ConvBlockSpec {
                    out_channels: 16,
                    kernel: (3, 3),
                    stride: 1,
                },
                ConvBlockSpec {
                    out_channels: 32,
                    kernel: (3, 3),
                    stride: 2,
                },
                ConvBlockSpec {
                    out_channels: 64,
                    kernel: (3, 3),
                    stride: 2,
                },
            ],
            hidden_dim: 128,
            n_classes: 11,
        }
    }
}

impl CompactCnnConfig {
    /// Maximum representable count; the classifier has `max_count() + 1`
    /// classes, the extra class being "no source or noise".
    pub fn max_count(&self) -> usize {
        self.n_classes - 1
    }

    fn validate(&self) -> Result<(), ClassifierError> {
        if self.n_classes < 2 {
            return Err(ClassifierError::BadConfig(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.conv_blocks.is_empty() {
            return Err(ClassifierError::BadConfig("no conv blocks".into()));
        }
        for b in &self.conv_blocks {
            if b.kernel.0 % 2 == 0 || b.kernel.1 % 2 == 0 {
                return Err(ClassifierError::BadConfig(format!(
                    "kernel extents must be odd, got {:?}",
                    b.kernel
                )));
            }
            if b.out_channels == 0 || b.stride == 0 {
                return Err(ClassifierError::BadConfig(
                    "zero out_channels or stride".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Posterior over count classes; entries are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior<F> {
    pub probs: Vec<F>,
}

impl<F: Real> Posterior<F> {
    /// Index of the maximal probability; ties break toward the smaller count.
    pub fn predict(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = k;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayer<F> {
    in_channels: usize,
    out_channels: usize,
    kernel: (usize, usize),
    pool_stride: usize,
    /// `[out][in][ky][kx]`, row-major.
    weight: Vec<F>,
    bias: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
struct Affine<F> {
    in_dim: usize,
    out_dim: usize,
    /// `[out][in]`, row-major.
    weight: Vec<F>,
    bias: Vec<F>,
}

/// All classifier parameters, built for a fixed input feature-map shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams<F> {
    config: CompactCnnConfig,
    input_shape: (usize, usize),
    blocks: Vec<ConvLayer<F>>,
    hidden: Affine<F>,
    output: Affine<F>,
}

/// Channels-first 3D volume used between conv blocks.
#[derive(Debug, Clone, PartialEq)]
struct Volume<F> {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<F>,
}

impl<F: Real> Volume<F> {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![F::zero(); c * h * w],
        }
    }

    #[inline]
    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    #[inline]
    fn get(&self, c: usize, y: usize, x: usize) -> F {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    fn set(&mut self, c: usize, y: usize, x: usize, v: F) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }
}

/// Forward intermediates for the backward pass.
#[derive(Debug, Clone)]
pub struct ClassifierActivations<F> {
    inputs: Vec<Volume<F>>,
    rectified: Vec<Volume<F>>,
    pooled_shape: Vec<(usize, usize)>,
    gap: Vec<F>,
    hidden_rect: Vec<F>,
    pub logits: Vec<F>,
    pub posterior: Posterior<F>,
}

/// Gradients for every classifier tensor, in the same layout as the params.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads<F> {
    pub block_weights: Vec<Vec<F>>,
    pub block_biases: Vec<Vec<F>>,
    pub hidden_weight: Vec<F>,
    pub hidden_bias: Vec<F>,
    pub output_weight: Vec<F>,
    pub output_bias: Vec<F>,
}

impl<F: Real> ClassifierGrads<F> {
    fn zeros_like(params: &ClassifierParams<F>) -> Self {
        Self {
            block_weights: params
                .blocks
                .iter()
                .map(|b| vec![F::zero(); b.weight.len()])
                .collect(),
            block_biases: params
                .blocks
                .iter()
                .map(|b| vec![F::zero(); b.bias.len()])
                .collect(),
            hidden_weight: vec![F::zero(); params.hidden.weight.len()],
            hidden_bias: vec![F::zero(); params.hidden.bias.len()],
            output_weight: vec![F::zero(); params.output.weight.len()],
            output_bias: vec![F::zero(); params.output.bias.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.block_weights
            .iter()
            .chain(self.block_biases.iter())
            .all(|v| v.iter().all(|g| g.is_finite()))
            && [
                &self.hidden_weight,
                &self.hidden_bias,
                &self.output_weight,
                &self.output_bias,
            ]
            .iter()
            .all(|v| v.iter().all(|g| g.is_finite()))
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        let acc = |a: &mut Vec<F>, b: &[F]| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        };
        for (a, b) in self.block_weights.iter_mut().zip(&other.block_weights) {
            acc(a, b);
        }
        for (a, b) in self.block_biases.iter_mut().zip(&other.block_biases) {
            acc(a, b);
        }
        acc(&mut self.hidden_weight, &other.hidden_weight);
        acc(&mut self.hidden_bias, &other.hidden_bias);
        acc(&mut self.output_weight, &other.output_weight);
        acc(&mut self.output_bias, &other.output_bias);
    }

    pub(crate) fn scale(&mut self, factor: F) {
        for v in self
            .block_weights
            .iter_mut()
            .chain(self.block_biases.iter_mut())
        {
            for g in v.iter_mut() {
                *g *= factor;
            }
        }
        for v in [
            &mut self.hidden_weight,
            &mut self.hidden_bias,
            &mut self.output_weight,
            &mut self.output_bias,
        ] {
            for g in v.iter_mut() {
                *g *= factor;
            }
        }
    }
}

fn normal<F: Real>(rng: &mut ChaCha8Rng, std: f64) -> F {
    // Box-Muller; adequate for weight init.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    F::of((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std)
}

impl<F: Real> ClassifierParams<F> {
    /// Builds a classifier for feature maps of `input_shape = (N, M)`.
    ///
    /// Convolution and hidden weights use scaled normal init; the output
    /// layer starts at zero so an untrained model emits a uniform posterior.
    pub fn init(
        config: CompactCnnConfig,
        input_shape: (usize, usize),
        seed: u64,
    ) -> Result<Self, ClassifierError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_channels = 1;
        let mut blocks = Vec::with_capacity(config.conv_blocks.len());
        for spec in &config.conv_blocks {
            let fan_in = in_channels * spec.kernel.0 * spec.kernel.1;
            let std = (2.0 / fan_in as f64).sqrt();
            let weight = (0..spec.out_channels * fan_in)
                .map(|_| normal(&mut rng, std))
                .collect();
            blocks.push(ConvLayer {
                in_channels,
                out_channels: spec.out_channels,
                kernel: spec.kernel,
                pool_stride: spec.stride,
                weight,
                bias: vec![F::zero(); spec.out_channels],
            });
            in_channels = spec.out_channels;
        }
        let gap_dim = in_channels;
        let hidden_std = (2.0 / gap_dim as f64).sqrt();
        let hidden = Affine {
            in_dim: gap_dim,
            out_dim: config.hidden_dim,
            weight: (0..config.hidden_dim * gap_dim)
                .map(|_| normal(&mut rng, hidden_std))
                .collect(),
            bias: vec![F::zero(); config.hidden_dim],
        };
        let output = Affine {
            in_dim: config.hidden_dim,
            out_dim: config.n_classes,
            weight: vec![F::zero(); config.n_classes * config.hidden_dim],
            bias: vec![F::zero(); config.n_classes],
        };
        Ok(Self {
            config,
            input_shape,
            blocks,
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &CompactCnnConfig {
        &self.config
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    /// Posterior over count classes for one feature map.
    pub fn forward(&self, features: &Mat<F>) -> Result<Posterior<F>, ClassifierError> {
        Ok(self.forward_cached(features)?.posterior)
    }

    /// Forward pass retaining intermediates for
    /// [`ClassifierParams::backward`].
    pub fn forward_cached(
        &self,
        features: &Mat<F>,
    ) -> Result<ClassifierActivations<F>, ClassifierError> {
        let actual = (features.rows(), features.cols());
        if actual != self.input_shape {
            return Err(ClassifierError::ShapeMismatch {
                expected: self.input_shape,
                actual,
            });
        }
        if !features.is_finite() {
            return Err(ClassifierError::NonFinite("feature map"));
        }

        let mut current = Volume::zeros(1, features.rows(), features.cols());
        current.data.copy_from_slice(features.as_slice());

        let mut inputs = Vec::with_capacity(self.blocks.len());
        let mut rectified = Vec::with_capacity(self.blocks.len());
        let mut pooled_shape = Vec::with_capacity(self.blocks.len());
        for layer in &self.blocks {
            inputs.push(current.clone());
            let conv = conv2d_same(&current, layer);
            let rect = relu(&conv);
            rectified.push(rect.clone());
            current = if layer.pool_stride > 1 {
                avg_pool(&rect, layer.pool_stride)
            } else {
                rect
            };
            pooled_shape.push((current.h, current.w));
        }

        // Global average over time and frequency.
        let plane = F::of((current.h * current.w) as f64);
        let gap: Vec<F> = (0..current.c)
            .map(|c| {
                let mut acc = F::zero();
                for y in 0..current.h {
                    for x in 0..current.w {
                        acc += current.get(c, y, x);
                    }
                }
                acc / plane
            })
            .collect();

        let hidden_pre = affine(&self.hidden, &gap);
        let hidden_rect: Vec<F> = hidden_pre
            .iter()
            .map(|&v| if v > F::zero() { v } else { F::zero() })
            .collect();
        let logits = affine(&self.output, &hidden_rect);
        let posterior = softmax(&logits);
        Ok(ClassifierActivations {
            inputs,
            rectified,
            pooled_shape,
            gap,
            hidden_rect,
            logits,
            posterior,
        })
    }

    /// Propagates `grad_probs = dC/d(posterior)` back through softmax and
    /// the network; returns parameter gradients and `dC/d(feature map)`.
    pub fn backward(
        &self,
        acts: &ClassifierActivations<F>,
        grad_probs: &[F],
    ) -> Result<(ClassifierGrads<F>, Mat<F>), ClassifierError> {
        if grad_probs.iter().any(|g| !g.is_finite()) {
            return Err(ClassifierError::NonFinite("upstream gradient"));
        }
        let probs = &acts.posterior.probs;
        // Softmax Jacobian: dC/dz_k = p_k (g_k - sum_j g_j p_j).
        let dot: F = grad_probs
            .iter()
            .zip(probs)
            .map(|(&g, &p)| g * p)
            .sum();
        let grad_logits: Vec<F> = grad_probs
            .iter()
            .zip(probs)
            .map(|(&g, &p)| p * (g - dot))
            .collect();

        let mut grads = ClassifierGrads::zeros_like(self);

        // Output affine.
        let grad_hidden_rect = affine_backward(
            &self.output,
            &acts.hidden_rect,
            &grad_logits,
            &mut grads.output_weight,
            &mut grads.output_bias,
        );
        // Hidden rectifier + affine.
        let grad_hidden_pre: Vec<F> = grad_hidden_rect
            .iter()
            .zip(&acts.hidden_rect)
            .map(|(&g, &v)| if v > F::zero() { g } else { F::zero() })
            .collect();
        let grad_gap = affine_backward(
            &self.hidden,
            &acts.gap,
            &grad_hidden_pre,
            &mut grads.hidden_weight,
            &mut grads.hidden_bias,
        );

        // Undo global average pooling.
        let (last_h, last_w) = *acts.pooled_shape.last().expect("at least one block");
        let last_c = self.blocks.last().expect("at least one block").out_channels;
        let plane = F::of((last_h * last_w) as f64);
        let mut grad_current = Volume::zeros(last_c, last_h, last_w);
        for c in 0..last_c {
            let g = grad_gap[c] / plane;
            for y in 0..last_h {
                for x in 0..last_w {
                    grad_current.set(c, y, x, g);
                }
            }
        }

        // Blocks in reverse.
        for (b, layer) in self.blocks.iter().enumerate().rev() {
            let rect = &acts.rectified[b];
            let mut grad_rect = if layer.pool_stride > 1 {
                avg_pool_backward(rect, &grad_current, layer.pool_stride)
            } else {
                grad_current
            };
            // Rectifier gate.
            for (g, &v) in grad_rect.data.iter_mut().zip(&rect.data) {
                if v <= F::zero() {
                    *g = F::zero();
                }
            }
            grad_current = conv2d_same_backward(
                &acts.inputs[b],
                layer,
                &grad_rect,
                &mut grads.block_weights[b],
                &mut grads.block_biases[b],
            );
        }

        let input_grad = Mat::from_vec(self.input_shape.0, self.input_shape.1, grad_current.data);
        Ok((grads, input_grad))
    }

    /// Stable tensor names and shapes, in checkpoint directory order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((
                format!("cls.conv{i}.weight"),
                vec![b.out_channels, b.in_channels, b.kernel.0, b.kernel.1],
            ));
            out.push((format!("cls.conv{i}.bias"), vec![b.out_channels]));
        }
        out.push((
            "cls.hidden.weight".into(),
            vec![self.hidden.out_dim, self.hidden.in_dim],
        ));
        out.push(("cls.hidden.bias".into(), vec![self.hidden.out_dim]));
        out.push((
            "cls.out.weight".into(),
            vec![self.output.out_dim, self.output.in_dim],
        ));
        out.push(("cls.out.bias".into(), vec![self.output.out_dim]));
        out
    }

    pub(crate) fn tensors(&self) -> Vec<(String, &[F])> {
        let mut out: Vec<(String, &[F])> = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("cls.conv{i}.weight"), &b.weight));
            out.push((format!("cls.conv{i}.bias"), &b.bias));
        }
        out.push(("cls.hidden.weight".into(), &self.hidden.weight));
        out.push(("cls.hidden.bias".into(), &self.hidden.bias));
        out.push(("cls.out.weight".into(), &self.output.weight));
        out.push(("cls.out.bias".into(), &self.output.bias));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<F>)> {
        let mut out: Vec<(String, &mut Vec<F>)> = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("cls.conv{i}.weight"), &mut b.weight));
            out.push((format!("cls.conv{i}.bias"), &mut b.bias));
        }
        out.push(("cls.hidden.weight".into(), &mut self.hidden.weight));
        out.push(("cls.hidden.bias".into(), &mut self.hidden.bias));
        out.push(("cls.out.weight".into(), &mut self.output.weight));
        out.push(("cls.out.bias".into(), &mut self.output.bias));
        out
    }

    /// Elementwise cast between scalar types.
    pub fn cast<G: Real>(&self) -> ClassifierParams<G> {
        let conv = |v: &[F]| -> Vec<G> { v.iter().map(|x| G::of(x.as_f64())).collect() };
        ClassifierParams {
            config: self.config.clone(),
            input_shape: self.input_shape,
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvLayer {
                    in_channels: b.in_channels,
                    out_channels: b.out_channels,
                    kernel: b.kernel,
                    pool_stride: b.pool_stride,
                    weight: conv(&b.weight),
                    bias: conv(&b.bias),
                })
                .collect(),
            hidden: Affine {
                in_dim: self.hidden.in_dim,
                out_dim: self.hidden.out_dim,
                weight: conv(&self.hidden.weight),
                bias: conv(&self.hidden.bias),
            },
            output: Affine {
                in_dim: self.output.in_dim,
                out_dim: self.output.out_dim,
                weight: conv(&self.output.weight),
                bias: conv(&self.output.bias),
            },
        }
    }
}

/// Numerically stable softmax.
pub fn softmax<F: Real>(logits: &[F]) -> Posterior<F> {
    let max = logits
        .iter()
        .fold(F::neg_infinity(), |acc, &v| if v > acc { v } else { acc });
    let exps: Vec<F> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    Posterior {
        probs: exps.into_iter().map(|e| e / sum).collect(),
    }
}

fn conv2d_same<F: Real>(input: &Volume<F>, layer: &ConvLayer<F>) -> Volume<F> {
    let (kh, kw) = layer.kernel;
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = Volume::zeros(layer.out_channels, input.h, input.w);
    for oc in 0..layer.out_channels {
        for y in 0..input.h {
            for x in 0..input.w {
                let mut acc = layer.bias[oc];
                for ic in 0..layer.in_channels {
                    for ky in 0..kh {
                        let iy = y as isize + ky as isize - ph as isize;
                        if iy < 0 || iy >= input.h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = x as isize + kx as isize - pw as isize;
                            if ix < 0 || ix >= input.w as isize {
                                continue;
                            }
                            let w = layer.weight[((oc * layer.in_channels + ic) * kh + ky) * kw + kx];
                            acc += w * input.get(ic, iy as usize, ix as usize);
                        }
                    }
                }
                out.set(oc, y, x, acc);
            }
        }
    }
    out
}

fn conv2d_same_backward<F: Real>(
    input: &Volume<F>,
    layer: &ConvLayer<F>,
    grad_out: &Volume<F>,
    grad_weight: &mut [F],
    grad_bias: &mut [F],
) -> Volume<F> {
    let (kh, kw) = layer.kernel;
    let (ph, pw) = (kh / 2, kw / 2);
    let mut grad_in = Volume::zeros(input.c, input.h, input.w);
    for oc in 0..layer.out_channels {
        for y in 0..input.h {
            for x in 0..input.w {
                let g = grad_out.get(oc, y, x);
                if g == F::zero() {
                    continue;
                }
                grad_bias[oc] += g;
                for ic in 0..layer.in_channels {
                    for ky in 0..kh {
                        let iy = y as isize + ky as isize - ph as isize;
                        if iy < 0 || iy >= input.h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = x as isize + kx as isize - pw as isize;
                            if ix < 0 || ix >= input.w as isize {
                                continue;
                            }
                            let widx = ((oc * layer.in_channels + ic) * kh + ky) * kw + kx;
                            let iidx = grad_in.idx(ic, iy as usize, ix as usize);
                            grad_weight[widx] += g * input.data[iidx];
                            grad_in.data[iidx] += g * layer.weight[widx];
                        }
                    }
                }
            }
        }
    }
    grad_in
}

fn relu<F: Real>(v: &Volume<F>) -> Volume<F> {
    Volume {
        c: v.c,
        h: v.h,
        w: v.w,
        data: v
            .data
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect(),
    }
}

/// Average pooling with `stride × stride` windows and ceil semantics;
/// partial edge windows average over the cells actually present.
fn avg_pool<F: Real>(input: &Volume<F>, stride: usize) -> Volume<F> {
    let oh = input.h.div_ceil(stride);
    let ow = input.w.div_ceil(stride);
    let mut out = Volume::zeros(input.c, oh, ow);
    for c in 0..input.c {
        for y in 0..oh {
            let y0 = y * stride;
            let y1 = (y0 + stride).min(input.h);
            for x in 0..ow {
                let x0 = x * stride;
                let x1 = (x0 + stride).min(input.w);
                let mut acc = F::zero();
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        acc += input.get(c, iy, ix);
                    }
                }
                out.set(c, y, x, acc / F::of(((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    out
}

fn avg_pool_backward<F: Real>(
    input: &Volume<F>,
    grad_out: &Volume<F>,
    stride: usize,
) -> Volume<F> {
    let mut grad_in = Volume::zeros(input.c, input.h, input.w);
    for c in 0..input.c {
        for y in 0..grad_out.h {
            let y0 = y * stride;
            let y1 = (y0 + stride).min(input.h);
            for x in 0..grad_out.w {
                let x0 = x * stride;
                let x1 = (x0 + stride).min(input.w);
                let g = grad_out.get(c, y, x) / F::of(((y1 - y0) * (x1 - x0)) as f64);
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let idx = grad_in.idx(c, iy, ix);
                        grad_in.data[idx] += g;
                    }
                }
            }
        }
    }
    grad_in
}

fn affine<F: Real>(layer: &Affine<F>, input: &[F]) -> Vec<F> {
    (0..layer.out_dim)
        .map(|o| {
            let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut acc = layer.bias[o];
            for (w, &v) in row.iter().zip(input) {
                acc += *w * v;
            }
            acc
        })
        .collect()
}

fn affine_backward<F: Real>(
    layer: &Affine<F>,
    input: &[F],
    grad_out: &[F],
    grad_weight: &mut [F],
    grad_bias: &mut [F],
) -> Vec<F> {
    let mut grad_in = vec![F::zero(); layer.in_dim];
    for o in 0..layer.out_dim {
        let g = grad_out[o];
        grad_bias[o] += g;
        let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
        let grow = &mut grad_weight[o * layer.in_dim..(o + 1) * layer.in_dim];
        for i in 0..layer.in_dim {
            grow[i] += g * input[i];
            grad_in[i] += g * row[i];
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> CompactCnnConfig {
        CompactCnnConfig {
            conv_blocks: vec![
                ConvBlockSpec {
                    out_channels: 4,
                    kernel: (3, 3),
                    stride: 1,
                },
                ConvBlockSpec {
                    out_channels: 6,
                    kernel: (3, 3),
                    stride: 2,
                },
            ],
            hidden_dim: 10,
            n_classes: 5,
        }
    }

    fn random_features(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 0.5)
    }

    #[test]
    fn posterior_sums_to_one() {
        let params: ClassifierParams<f64> =
            ClassifierParams::init(small_config(), (8, 3), 7).unwrap();
        for seed in 0..5 {
            let p = params.forward(&random_features(8, 3, seed)).unwrap();
            let sum: f64 = p.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(p.probs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn zero_input_zero_output_layer_gives_uniform() {
        let params: ClassifierParams<f64> =
            ClassifierParams::init(small_config(), (8, 3), 7).unwrap();
        let p = params.forward(&Mat::zeros(8, 3)).unwrap();
        for &v in &p.probs {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn eleven_classes_for_max_count_ten() {
        let config = CompactCnnConfig::default();
        assert_eq!(config.n_classes, 11);
        assert_eq!(config.max_count(), 10);
        let params: ClassifierParams<f32> = ClassifierParams::init(config, (40, 3), 0).unwrap();
        let p = params.forward(&Mat::zeros(40, 3)).unwrap();
        assert_eq!(p.probs.len(), 11);
    }

    #[test]
    fn predict_tie_breaks_small() {
        let p = Posterior {
            probs: vec![0.25f64; 4],
        };
        assert_eq!(p.predict(), 0);
        let p = Posterior {
            probs: vec![0.1, 0.6, 0.3],
        };
        assert_eq!(p.predict(), 1);
        let onehot = Posterior {
            probs: vec![0.0, 0.0, 0.0, 0.0, 1.0],
        };
        assert_eq!(onehot.predict(), 4);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let params: ClassifierParams<f64> =
            ClassifierParams::init(small_config(), (8, 3), 7).unwrap();
        let err = params.forward(&Mat::zeros(8, 4)).unwrap_err();
        assert_eq!(
            err,
            ClassifierError::ShapeMismatch {
                expected: (8, 3),
                actual: (8, 4)
            }
        );
    }

    #[test]
    fn softmax_shift_invariance_at_argmax() {
        let logits = vec![0.3, -1.2, 2.0, 1.99, -0.4];
        let base = softmax(&logits).predict();
        for shift in [-10.0, -0.5, 3.0, 100.0] {
            let shifted: Vec<f64> = logits.iter().map(|&z| z + shift).collect();
            assert_eq!(softmax(&shifted).predict(), base);
        }
    }

    /// Loss used by the finite-difference check: -ln p[label].
    fn nll(params: &ClassifierParams<f64>, features: &Mat<f64>, label: usize) -> f64 {
        -params.forward(features).unwrap().probs[label].ln()
    }

    #[test]
    fn gradients_match_finite_differences() {
        // A zero-init output layer would make upstream conv grads vanish;
        // nudge every tensor away from zero first.
        let mut params: ClassifierParams<f64> =
            ClassifierParams::init(small_config(), (6, 4), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (_, t) in params.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random::<f64>() * 0.2 - 0.1;
            }
        }
        let features = random_features(6, 4, 3);
        let label = 2usize;

        let acts = params.forward_cached(&features).unwrap();
        let mut grad_probs = vec![0.0; 5];
        grad_probs[label] = -1.0 / acts.posterior.probs[label];
        let (grads, input_grad) = params.backward(&acts, &grad_probs).unwrap();
        assert_eq!(
            (input_grad.rows(), input_grad.cols()),
            (features.rows(), features.cols())
        );

        let h = 1e-6;
        // Parameter gradients, a sample of scalars from every tensor.
        let names: Vec<String> = params.tensors().iter().map(|(n, _)| n.clone()).collect();
        for name in names {
            let len = params
                .tensors()
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t.len())
                .unwrap();
            let analytic_for = |g: &ClassifierGrads<f64>, idx: usize| -> f64 {
                let flat: Vec<(&str, &[f64])> = vec![
                    ("cls.conv0.weight", &g.block_weights[0]),
                    ("cls.conv0.bias", &g.block_biases[0]),
                    ("cls.conv1.weight", &g.block_weights[1]),
                    ("cls.conv1.bias", &g.block_biases[1]),
                    ("cls.hidden.weight", &g.hidden_weight),
                    ("cls.hidden.bias", &g.hidden_bias),
                    ("cls.out.weight", &g.output_weight),
                    ("cls.out.bias", &g.output_bias),
                ];
                flat.iter().find(|(n, _)| *n == name).unwrap().1[idx]
            };
            for idx in [0, len / 2, len - 1] {
                let mut plus = params.clone();
                for (n, t) in plus.tensors_mut() {
                    if n == name {
                        t[idx] += h;
                    }
                }
                let mut minus = params.clone();
                for (n, t) in minus.tensors_mut() {
                    if n == name {
                        t[idx] -= h;
                    }
                }
                let numeric = (nll(&plus, &features, label) - nll(&minus, &features, label))
                    / (2.0 * h);
                let analytic = analytic_for(&grads, idx);
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-5,
                    "{name}[{idx}]: {analytic} vs {numeric}"
                );
            }
        }

        // Input gradient.
        for (r, c) in [(0, 0), (3, 2), (5, 3)] {
            let mut plus = features.clone();
            plus.set(r, c, plus.get(r, c) + h);
            let mut minus = features.clone();
            minus.set(r, c, minus.get(r, c) - h);
            let numeric = (nll(&params, &plus, label) - nll(&params, &minus, label)) / (2.0 * h);
            let analytic = input_grad.get(r, c);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom < 1e-5,
                "input[{r},{c}]: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let params: ClassifierParams<f64> =
            ClassifierParams::init(small_config(), (6, 4), 11).unwrap();
        let acts = params.forward_cached(&random_features(6, 4, 1)).unwrap();
        let (grads, input_grad) = params.backward(&acts, &vec![0.0; 5]).unwrap();
        assert!(grads.hidden_weight.iter().all(|&g| g == 0.0));
        assert!(grads.output_weight.iter().all(|&g| g == 0.0));
        assert!(input_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn config_validation() {
        let mut bad = small_config();
        bad.n_classes = 1;
        assert!(ClassifierParams::<f64>::init(bad, (8, 3), 0).is_err());
        let mut bad = small_config();
        bad.conv_blocks[0].kernel = (2, 3);
        assert!(ClassifierParams::<f64>::init(bad, (8, 3), 0).is_err());
    }
}
