//! Audio source counting from raw waveforms.
//!
//! The pipeline maps small fixed-length windows of a single-channel mixture
//! to a count of simultaneously active sources:
//!
//! 1. [`signal`] — mixture construction, windowing, and mode-based labeling,
//! 2. [`frontend`] — a fully learnable feature extractor (complex Gabor
//!    filtering, Gaussian low-pass downsampling, per-channel energy
//!    normalization) with exact parameter gradients,
//! 3. [`classifier`] — a compact CNN producing a posterior over `ζ + 1`
//!    count classes,
//! 4. [`training`] — end-to-end optimization, gradient checking, and
//!    checkpoint persistence,
//! 5. [`dataset`] — synthetic mixture generation with ground-truth activity
//!    masks plus WAV corpus ingestion,
//! 6. [`eval`] — accuracy/MAE/confusion reporting and the window-size sweep.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); training
//! defaults to `f32`, gradient verification runs in `f64`.
//!
//! ```
//! use tacnet::frontend::FrontendParams;
//!
//! let params: FrontendParams<f64> = FrontendParams::init_mel(40, 16_000, 60.0, 7_800.0, 401)?;
//! let chunk = vec![0.0; 400];
//! let features = params.forward(&chunk)?;
//! assert_eq!((features.rows(), features.cols()), (40, 3));
//! # Ok::<(), tacnet::frontend::FrontendError>(())
//! ```

pub mod classifier;
pub mod dataset;
pub mod eval;
pub mod frontend;
pub mod guide;
pub mod mat;
pub mod real;
pub mod signal;
pub mod training;

pub use mat::Mat;
pub use real::Real;
pub use signal::{LabeledChunk, Waveform, WindowConfig};
pub use training::CountingModel;
