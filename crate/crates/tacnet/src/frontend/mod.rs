//! Learnable feature extractor: complex Gabor filtering, Gaussian low-pass
//! downsampling, and per-channel energy normalization (PCEN).
//!
//! A length-`L` chunk becomes an `N × M` nonnegative feature map:
//!
//! * filtering — each channel convolves the chunk with a complex Gabor
//!   kernel and takes the squared modulus (stride 1, zero padding, output
//!   length `L`),
//! * downsampling — each channel is smoothed with a unit-sum Gaussian
//!   kernel and subsampled by a fixed stride (`M = ceil(L / stride)`),
//! * compression — PCEN divides each frame by a running smoothed energy
//!   estimate raised to a per-channel exponent, then applies root
//!   compression with a per-channel offset.
//!
//! Every per-channel parameter (center frequency, filter width, pooling
//! width, PCEN gain/bias/root) is learnable; [`grad::FrontendGrads`] carries
//! exact derivatives for all of them.

mod grad;

pub use grad::{FrontendActivations, FrontendGrads};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat::Mat;
use crate::real::Real;

#[derive(Debug, Error, PartialEq)]
pub enum FrontendError {
    #[error("kernel width must be odd, got {0}")]
    EvenKernelWidth(usize),
    #[error("filter width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("center frequency {0} outside [0, 0.5) cycles/sample")]
    CenterFrequencyRange(f64),
    #[error("invalid band edges: f_min={f_min} Hz, f_max={f_max} Hz, nyquist={nyquist} Hz")]
    BandEdges {
        f_min: f64,
        f_max: f64,
        nyquist: f64,
    },
    #[error("need at least two filters, got {0}")]
    TooFewFilters(usize),
    #[error("empty input chunk")]
    EmptyChunk,
    #[error("negative energy {value} at channel {channel}, frame {frame}")]
    NegativeEnergy {
        channel: usize,
        frame: usize,
        value: f64,
    },
    #[error("non-finite upstream gradient")]
    NonFiniteUpstream,
}

/// Complex Gabor filterbank parameters.
///
/// `center_freqs` are in cycles/sample (so `(0, 0.5)` spans DC to Nyquist);
/// `widths` are time-domain Gaussian standard deviations in samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborParams<F> {
    pub center_freqs: Vec<F>,
    pub widths: Vec<F>,
}

/// Gaussian low-pass pooling parameters. `widths` are per-channel standard
/// deviations in samples; `stride` is the hop between retained frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingParams<F> {
    pub widths: Vec<F>,
    pub stride: usize,
    pub kernel_width: usize,
}

/// PCEN parameters: per-channel `gain` (the normalization exponent), `bias`
/// (the compression offset) and `root` (the compression exponent), plus the
/// fixed smoothing coefficient and division-guard floor.
#[derive(Debug, Clone, PartialEq)]
pub struct PcenParams<F> {
    pub gain: Vec<F>,
    pub bias: Vec<F>,
    pub root: Vec<F>,
    pub smooth: F,
    pub floor: F,
}

/// Structural (non-learnable) frontend configuration, as stored in run
/// configs and checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub n_filters: usize,
    pub kernel_width: usize,
    pub pool_stride: usize,
    pub pool_kernel_width: usize,
    pub init_pool_width: f64,
    pub pcen_smooth: f64,
    pub pcen_floor: f64,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            n_filters: 40,
            kernel_width: 401,
            pool_stride: 160,
            pool_kernel_width: 161,
            init_pool_width: 40.0,
            pcen_smooth: 0.04,
            pcen_floor: 1e-6,
            f_min_hz: 60.0,
            f_max_hz: 7_800.0,
        }
    }
}

/// All learnable frontend parameters plus the fixed structural choices.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendParams<F> {
    pub gabor: GaborParams<F>,
    pub pooling: PoolingParams<F>,
    pub pcen: PcenParams<F>,
    pub kernel_width: usize,
}

pub const DEFAULT_PCEN_GAIN: f64 = 0.96;
pub const DEFAULT_PCEN_BIAS: f64 = 2.0;
pub const DEFAULT_PCEN_ROOT: f64 = 0.5;
pub const DEFAULT_PCEN_SMOOTH: f64 = 0.04;
pub const DEFAULT_PCEN_FLOOR: f64 = 1e-6;

/// Minimum Gaussian width kept by [`FrontendParams::clamp`].
pub const MIN_WIDTH_SAMPLES: f64 = 0.5;
/// Minimum PCEN root exponent kept by [`FrontendParams::clamp`].
pub const MIN_PCEN_ROOT: f64 = 0.05;

fn check_kernel_width(width: usize) -> Result<(), FrontendError> {
    if width == 0 || width % 2 == 0 {
        return Err(FrontendError::EvenKernelWidth(width));
    }
    Ok(())
}

/// Gaussian envelope `exp(-n^2 / (2 sigma^2)) / (sqrt(2 pi) sigma)` sampled
/// at integer offsets `n = -(W-1)/2 ..= (W-1)/2`.
fn gaussian_envelope<F: Real>(sigma: F, width: usize) -> Vec<F> {
    let half = (width as isize - 1) / 2;
    let norm = F::one() / (F::of((2.0 * std::f64::consts::PI).sqrt()) * sigma);
    let two_sig_sq = F::of(2.0) * sigma * sigma;
    (-half..=half)
        .map(|n| {
            let nf = F::of(n as f64);
            norm * (-(nf * nf) / two_sig_sq).exp()
        })
        .collect()
}

/// Complex Gabor kernel sampled at integer offsets, returned as
/// `(real, imaginary)` parts of length `width`.
///
/// `mu` is the center frequency in cycles/sample; `mu = 0` reduces to the
/// Gaussian pooling kernel and is permitted for verification.
pub fn gabor_kernel<F: Real>(
    mu: F,
    sigma: F,
    width: usize,
) -> Result<(Vec<F>, Vec<F>), FrontendError> {
    check_kernel_width(width)?;
    if sigma <= F::zero() {
        return Err(FrontendError::NonPositiveWidth(sigma.as_f64()));
    }
    if mu < F::zero() || mu >= F::of(0.5) {
        return Err(FrontendError::CenterFrequencyRange(mu.as_f64()));
    }
    let envelope = gaussian_envelope(sigma, width);
    let half = (width as isize - 1) / 2;
    let tau_mu = F::of(std::f64::consts::TAU) * mu;
    let mut re = Vec::with_capacity(width);
    let mut im = Vec::with_capacity(width);
    for (k, &g) in envelope.iter().enumerate() {
        let n = F::of((k as isize - half) as f64);
        let phase = tau_mu * n;
        re.push(g * phase.cos());
        im.push(g * phase.sin());
    }
    Ok((re, im))
}

/// Gaussian pooling kernel before unit-sum renormalization; identical to
/// [`gabor_kernel`] at center frequency zero.
pub fn pooling_kernel<F: Real>(sigma: F, width: usize) -> Result<Vec<F>, FrontendError> {
    check_kernel_width(width)?;
    if sigma <= F::zero() {
        return Err(FrontendError::NonPositiveWidth(sigma.as_f64()));
    }
    Ok(gaussian_envelope(sigma, width))
}

/// Dot product with four independent accumulator lanes so the compiler can
/// vectorize despite strict float semantics. Deterministic within a build.
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [F::zero(); 4];
    let mut ac = a.chunks_exact(4);
    let mut bc = b.chunks_exact(4);
    for (ka, kb) in (&mut ac).zip(&mut bc) {
        lanes[0] += ka[0] * kb[0];
        lanes[1] += ka[1] * kb[1];
        lanes[2] += ka[2] * kb[2];
        lanes[3] += ka[3] * kb[3];
    }
    let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (x, y) in ac.remainder().iter().zip(bc.remainder()) {
        acc += *x * *y;
    }
    acc
}

/// Convolves `x` with a length-`width` kernel (zero padding, stride 1).
/// `out[t] = sum_k kernel[k] * x[t + half - k]`.
///
/// Internally the kernel is reversed once so the inner loop is a dot
/// product of two contiguous slices.
pub(crate) fn conv_same<F: Real>(x: &[F], kernel: &[F], out: &mut [F]) {
    let len = x.len();
    let width = kernel.len();
    let half = (width - 1) / 2;
    let reversed: Vec<F> = kernel.iter().rev().copied().collect();
    for (t, o) in out.iter_mut().enumerate() {
        // With j = width-1-k: out[t] = sum_j reversed[j] * x[t - half + j].
        let j_lo = half.saturating_sub(t);
        let j_hi = width.min(len + half - t);
        *o = dot(
            &reversed[j_lo..j_hi],
            &x[t + j_lo - half..t + j_hi - half],
        );
    }
}

/// Squared modulus of the complex Gabor filterbank response, one row per
/// channel, output length equal to input length.
pub fn filter_stage<F: Real>(
    x: &[F],
    params: &GaborParams<F>,
    kernel_width: usize,
) -> Result<Mat<F>, FrontendError> {
    let (out, _, _) = filter_stage_cached(x, params, kernel_width)?;
    Ok(out)
}

/// As [`filter_stage`], additionally returning the real/imaginary filter
/// responses needed for the backward pass.
pub(crate) fn filter_stage_cached<F: Real>(
    x: &[F],
    params: &GaborParams<F>,
    kernel_width: usize,
) -> Result<(Mat<F>, Mat<F>, Mat<F>), FrontendError> {
    if x.is_empty() {
        return Err(FrontendError::EmptyChunk);
    }
    let n_filters = params.center_freqs.len();
    let len = x.len();
    let mut energy = Mat::zeros(n_filters, len);
    let mut conv_re = Mat::zeros(n_filters, len);
    let mut conv_im = Mat::zeros(n_filters, len);
    for i in 0..n_filters {
        let (kre, kim) = gabor_kernel(params.center_freqs[i], params.widths[i], kernel_width)?;
        conv_same(x, &kre, conv_re.row_mut(i));
        conv_same(x, &kim, conv_im.row_mut(i));
        for t in 0..len {
            let a = conv_re.get(i, t);
            let b = conv_im.get(i, t);
            energy.set(i, t, a * a + b * b);
        }
    }
    Ok((energy, conv_re, conv_im))
}

/// Number of pooled frames for an input of `len` samples.
pub fn pooled_frames(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// Per-channel Gaussian smoothing (kernel renormalized to unit sum) followed
/// by subsampling at the configured stride.
pub fn pooling_stage<F: Real>(
    y1: &Mat<F>,
    params: &PoolingParams<F>,
) -> Result<Mat<F>, FrontendError> {
    let len = y1.cols();
    let frames = pooled_frames(len, params.stride);
    let half = (params.kernel_width - 1) / 2;
    let mut out = Mat::zeros(y1.rows(), frames);
    for i in 0..y1.rows() {
        let raw = pooling_kernel(params.widths[i], params.kernel_width)?;
        let sum: F = raw.iter().copied().sum();
        let row = y1.row(i);
        for m in 0..frames {
            let center = m * params.stride;
            let mut acc = F::zero();
            for (k, &w) in raw.iter().enumerate() {
                let idx = center as isize + half as isize - k as isize;
                if idx >= 0 && (idx as usize) < len {
                    acc += w * row[idx as usize];
                }
            }
            out.set(i, m, acc / sum);
        }
    }
    Ok(out)
}

/// PCEN compression. Each channel keeps a running smoothed energy
/// `smoothed[m] = (1 - s) * smoothed[m-1] + s * y[m]` (initialized to the
/// first frame) and emits
/// `(y[m] / (floor + smoothed[m])^gain + bias)^root - bias^root`.
pub fn pcen_stage<F: Real>(y2: &Mat<F>, params: &PcenParams<F>) -> Result<Mat<F>, FrontendError> {
    let (out, _) = pcen_stage_cached(y2, params)?;
    Ok(out)
}

pub(crate) fn pcen_stage_cached<F: Real>(
    y2: &Mat<F>,
    params: &PcenParams<F>,
) -> Result<(Mat<F>, Mat<F>), FrontendError> {
    let mut out = Mat::zeros(y2.rows(), y2.cols());
    let mut smoothed = Mat::zeros(y2.rows(), y2.cols());
    let s = params.smooth;
    for i in 0..y2.rows() {
        let gain = params.gain[i];
        let bias = params.bias[i];
        let root = params.root[i];
        let bias_pow = bias.powf(root);
        let mut prev = F::zero();
        for m in 0..y2.cols() {
            let y = y2.get(i, m);
            if y < F::zero() {
                return Err(FrontendError::NegativeEnergy {
                    channel: i,
                    frame: m,
                    value: y.as_f64(),
                });
            }
            let sm = if m == 0 {
                y
            } else {
                (F::one() - s) * prev + s * y
            };
            smoothed.set(i, m, sm);
            prev = sm;
            let scaled = y / (params.floor + sm).powf(gain);
            out.set(i, m, (scaled + bias).powf(root) - bias_pow);
        }
    }
    Ok((out, smoothed))
}

impl<F: Real> FrontendParams<F> {
    /// Number of filter channels.
    pub fn n_filters(&self) -> usize {
        self.gabor.center_freqs.len()
    }

    /// Mel-scale initialization: `n` center frequencies equally spaced on
    /// the mel scale between `f_min_hz` and `f_max_hz`, filter widths chosen
    /// so each filter's frequency-domain FWHM matches the spacing to its
    /// neighbors, pooling and PCEN at defaults.
    pub fn init_mel(
        n: usize,
        sample_rate_hz: u32,
        f_min_hz: f64,
        f_max_hz: f64,
        kernel_width: usize,
    ) -> Result<Self, FrontendError> {
        Self::init_mel_with(
            n,
            sample_rate_hz,
            f_min_hz,
            f_max_hz,
            kernel_width,
            &FrontendConfig::default(),
        )
    }

    /// As [`FrontendParams::init_mel`] with explicit pooling/PCEN settings.
    pub fn init_mel_with(
        n: usize,
        sample_rate_hz: u32,
        f_min_hz: f64,
        f_max_hz: f64,
        kernel_width: usize,
        cfg: &FrontendConfig,
    ) -> Result<Self, FrontendError> {
        check_kernel_width(kernel_width)?;
        check_kernel_width(cfg.pool_kernel_width)?;
        if n < 2 {
            return Err(FrontendError::TooFewFilters(n));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(0.0..f_max_hz).contains(&f_min_hz) || f_max_hz > nyquist {
            return Err(FrontendError::BandEdges {
                f_min: f_min_hz,
                f_max: f_max_hz,
                nyquist,
            });
        }

        let centers_hz = mel_center_grid(n, f_min_hz, f_max_hz);
        let center_freqs: Vec<F> = centers_hz
            .iter()
            .map(|&hz| F::of(hz / sample_rate_hz as f64))
            .collect();

        // Frequency-domain FWHM target = distance between neighboring
        // centers; a time-domain Gaussian of std sigma_t has frequency std
        // 1 / (2 pi sigma_t) cycles/sample.
        const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949; // 2 sqrt(2 ln 2)
        let widths: Vec<F> = (0..n)
            .map(|k| {
                let spacing_hz = if k == 0 {
                    centers_hz[1] - centers_hz[0]
                } else if k == n - 1 {
                    centers_hz[n - 1] - centers_hz[n - 2]
                } else {
                    (centers_hz[k + 1] - centers_hz[k - 1]) / 2.0
                };
                let sigma_f_cycles = spacing_hz / FWHM_PER_SIGMA / sample_rate_hz as f64;
                F::of(1.0 / (std::f64::consts::TAU * sigma_f_cycles))
            })
            .collect();

        Ok(Self {
            gabor: GaborParams {
                center_freqs,
                widths,
            },
            pooling: PoolingParams {
                widths: vec![F::of(cfg.init_pool_width); n],
                stride: cfg.pool_stride,
                kernel_width: cfg.pool_kernel_width,
            },
            pcen: PcenParams {
                gain: vec![F::of(DEFAULT_PCEN_GAIN); n],
                bias: vec![F::of(DEFAULT_PCEN_BIAS); n],
                root: vec![F::of(DEFAULT_PCEN_ROOT); n],
                smooth: F::of(cfg.pcen_smooth),
                floor: F::of(cfg.pcen_floor),
            },
            kernel_width,
        })
    }

    /// Builds the frontend described by `cfg` for the given sample rate.
    pub fn from_config(cfg: &FrontendConfig, sample_rate_hz: u32) -> Result<Self, FrontendError> {
        Self::init_mel_with(
            cfg.n_filters,
            sample_rate_hz,
            cfg.f_min_hz,
            cfg.f_max_hz,
            cfg.kernel_width,
            cfg,
        )
    }

    /// Full forward pass: filtering, pooling, compression.
    pub fn forward(&self, x: &[F]) -> Result<Mat<F>, FrontendError> {
        let y1 = filter_stage(x, &self.gabor, self.kernel_width)?;
        let y2 = pooling_stage(&y1, &self.pooling)?;
        pcen_stage(&y2, &self.pcen)
    }

    /// Projects parameters back into their valid ranges after an optimizer
    /// step. `window_len` bounds the center frequencies away from DC and
    /// Nyquist by one DFT bin.
    pub fn clamp(&mut self, window_len: usize) {
        let lo = F::one() / F::of(window_len as f64);
        let hi = F::of(0.5) - lo;
        for mu in &mut self.gabor.center_freqs {
            *mu = (*mu).max(lo).min(hi);
        }
        let min_width = F::of(MIN_WIDTH_SAMPLES);
        for w in &mut self.gabor.widths {
            *w = (*w).max(min_width);
        }
        for w in &mut self.pooling.widths {
            *w = (*w).max(min_width);
        }
        for g in &mut self.pcen.gain {
            *g = (*g).max(F::zero());
        }
        for b in &mut self.pcen.bias {
            *b = (*b).max(F::zero());
        }
        for r in &mut self.pcen.root {
            *r = (*r).max(F::of(MIN_PCEN_ROOT)).min(F::one());
        }
    }

    /// Elementwise cast between scalar types.
    pub fn cast<G: Real>(&self) -> FrontendParams<G> {
        let conv = |v: &[F]| -> Vec<G> { v.iter().map(|x| G::of(x.as_f64())).collect() };
        FrontendParams {
            gabor: GaborParams {
                center_freqs: conv(&self.gabor.center_freqs),
                widths: conv(&self.gabor.widths),
            },
            pooling: PoolingParams {
                widths: conv(&self.pooling.widths),
                stride: self.pooling.stride,
                kernel_width: self.pooling.kernel_width,
            },
            pcen: PcenParams {
                gain: conv(&self.pcen.gain),
                bias: conv(&self.pcen.bias),
                root: conv(&self.pcen.root),
                smooth: G::of(self.pcen.smooth.as_f64()),
                floor: G::of(self.pcen.floor.as_f64()),
            },
            kernel_width: self.kernel_width,
        }
    }
}

/// Mel scale: `mel(f) = 2595 log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// Inverse mel scale.
pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn mel_center_grid(n: usize, f_min_hz: f64, f_max_hz: f64) -> Vec<f64> {
    let lo = hz_to_mel(f_min_hz);
    let hi = hz_to_mel(f_max_hz);
    (0..n)
        .map(|k| mel_to_hz(lo + (hi - lo) * k as f64 / (n - 1) as f64))
        .collect()
}
