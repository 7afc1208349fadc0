//! End-to-end optimization of the frontend + classifier stack.
//!
//! The training objective is categorical cross-entropy over count classes,
//! minimized with adaptive moment estimation; after every step the frontend
//! parameters are clamped back into their valid ranges. A finite-difference
//! gradient-check harness guards the hand-derived backward passes, and
//! checkpoints persist the full model bit-exactly.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_MAGIC};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    ClassifierError, ClassifierGrads, ClassifierParams, CompactCnnConfig, Posterior,
};
use crate::frontend::{
    pooled_frames, FrontendConfig, FrontendError, FrontendGrads, FrontendParams,
};
use crate::real::Real;
use crate::signal::{LabeledChunk, WindowConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("frontend: {0}")]
    Frontend(#[from] FrontendError),
    #[error("classifier: {0}")]
    Classifier(#[from] ClassifierError),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty {0}")]
    EmptyDataset(&'static str),
    #[error("batch chunks have unequal lengths: {a} vs {b}")]
    RaggedBatch { a: usize, b: usize },
    #[error("chunk length {actual} does not match the model window of {expected} samples")]
    ChunkLength { expected: usize, actual: usize },
}

/// Probability floor applied before the log in the cross-entropy loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Categorical cross-entropy `-ln(max(probs[label], 1e-12))`.
pub fn cross_entropy_loss<F: Real>(
    posterior: &Posterior<F>,
    label: usize,
) -> Result<F, TrainError> {
    if label >= posterior.probs.len() {
        return Err(TrainError::LabelOutOfRange {
            label,
            n_classes: posterior.probs.len(),
        });
    }
    let floor = F::of(PROB_FLOOR);
    Ok(-posterior.probs[label].max(floor).ln())
}

/// The complete counting model: window geometry, learnable frontend, and
/// classifier, trained and persisted as one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct CountingModel<F> {
    pub window: WindowConfig,
    pub frontend: FrontendParams<F>,
    pub classifier: ClassifierParams<F>,
}

/// Gradients for every learnable tensor of a [`CountingModel`].
#[derive(Debug, Clone)]
pub struct ModelGrads<F> {
    pub frontend: FrontendGrads<F>,
    pub classifier: ClassifierGrads<F>,
}

impl<F: Real> ModelGrads<F> {
    fn add_assign(&mut self, other: &Self) {
        self.frontend.add_assign(&other.frontend);
        self.classifier.add_assign(&other.classifier);
    }

    fn scale(&mut self, factor: F) {
        self.frontend.scale(factor);
        self.classifier.scale(factor);
    }

    pub fn is_finite(&self) -> bool {
        self.frontend.is_finite() && self.classifier.is_finite()
    }

    /// Tensors in the same order and naming as [`CountingModel::tensors`].
    pub fn tensors(&self) -> Vec<(String, &[F])> {
        let mut out: Vec<(String, &[F])> = vec![
            ("gabor.center_freq".into(), &self.frontend.center_freqs[..]),
            ("gabor.width".into(), &self.frontend.widths[..]),
            ("pool.width".into(), &self.frontend.pool_widths[..]),
            ("pcen.gain".into(), &self.frontend.gain[..]),
            ("pcen.bias".into(), &self.frontend.bias[..]),
            ("pcen.root".into(), &self.frontend.root[..]),
        ];
        for (i, w) in self.classifier.block_weights.iter().enumerate() {
            out.push((format!("cls.conv{i}.weight"), &w[..]));
        }
        for (i, b) in self.classifier.block_biases.iter().enumerate() {
            out.push((format!("cls.conv{i}.bias"), &b[..]));
        }
        out.push((
            "cls.hidden.weight".into(),
            &self.classifier.hidden_weight[..],
        ));
        out.push(("cls.hidden.bias".into(), &self.classifier.hidden_bias[..]));
        out.push(("cls.out.weight".into(), &self.classifier.output_weight[..]));
        out.push(("cls.out.bias".into(), &self.classifier.output_bias[..]));
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

impl<F: Real> CountingModel<F> {
    /// Builds a model: mel-initialized frontend for the window's sample
    /// rate, classifier initialized from `seed` for the frontend's output
    /// shape.
    pub fn new(
        window: WindowConfig,
        frontend_cfg: &FrontendConfig,
        classifier_cfg: CompactCnnConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        let frontend = FrontendParams::from_config(frontend_cfg, window.sample_rate_hz)?;
        let input_shape = (
            frontend_cfg.n_filters,
            pooled_frames(window.window_len(), frontend_cfg.pool_stride),
        );
        let classifier = ClassifierParams::init(classifier_cfg, input_shape, seed)?;
        let mut model = Self {
            window,
            frontend,
            classifier,
        };
        // The mel grid can start below the window's 1/L frequency floor;
        // models satisfy the clamp invariants from construction on.
        model.clamp();
        Ok(model)
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.n_classes()
    }

    pub fn max_count(&self) -> usize {
        self.n_classes() - 1
    }

    pub fn window_len(&self) -> usize {
        self.window.window_len()
    }

    /// Posterior for one chunk of `window_len()` samples.
    pub fn forward(&self, samples: &[f64]) -> Result<Posterior<F>, TrainError> {
        let x = self.cast_chunk(samples)?;
        let features = self.frontend.forward(&x)?;
        Ok(self.classifier.forward(&features)?)
    }

    /// Cross-entropy loss of one labeled chunk; the path probed by the
    /// finite-difference gradient check.
    pub fn loss(&self, samples: &[f64], label: usize) -> Result<F, TrainError> {
        cross_entropy_loss(&self.forward(samples)?, label)
    }

    /// Loss, correctness, and exact gradients for one labeled chunk.
    pub fn loss_and_grads(
        &self,
        samples: &[f64],
        label: usize,
    ) -> Result<(F, bool, ModelGrads<F>), TrainError> {
        let x = self.cast_chunk(samples)?;
        let front_acts = self.frontend.forward_cached(&x)?;
        let cls_acts = self.classifier.forward_cached(&front_acts.output)?;
        let posterior = &cls_acts.posterior;
        let loss = cross_entropy_loss(posterior, label)?;
        let correct = posterior.predict() == label;

        // d(-ln max(p, floor))/dp is zero in the floored regime.
        let mut grad_probs = vec![F::zero(); posterior.probs.len()];
        let p = posterior.probs[label];
        if p > F::of(PROB_FLOOR) {
            grad_probs[label] = -F::one() / p;
        }
        let (cls_grads, input_grad) = self.classifier.backward(&cls_acts, &grad_probs)?;
        let front_grads = self.frontend.backward(&x, &front_acts, &input_grad)?;
        Ok((
            loss,
            correct,
            ModelGrads {
                frontend: front_grads,
                classifier: cls_grads,
            },
        ))
    }

    fn cast_chunk(&self, samples: &[f64]) -> Result<Vec<F>, TrainError> {
        let expected = self.window_len();
        if samples.len() != expected {
            return Err(TrainError::ChunkLength {
                expected,
                actual: samples.len(),
            });
        }
        Ok(samples.iter().map(|&v| F::of(v)).collect())
    }

    /// Projects all parameters back into their valid ranges.
    pub fn clamp(&mut self) {
        let window_len = self.window_len();
        self.frontend.clamp(window_len);
    }

    /// All learnable tensors with their stable names, sorted by name.
    pub fn tensors(&self) -> Vec<(String, &[F])> {
        let mut out: Vec<(String, &[F])> = vec![
            (
                "gabor.center_freq".into(),
                &self.frontend.gabor.center_freqs[..],
            ),
            ("gabor.width".into(), &self.frontend.gabor.widths[..]),
            ("pool.width".into(), &self.frontend.pooling.widths[..]),
            ("pcen.gain".into(), &self.frontend.pcen.gain[..]),
            ("pcen.bias".into(), &self.frontend.pcen.bias[..]),
            ("pcen.root".into(), &self.frontend.pcen.root[..]),
        ];
        out.extend(self.classifier.tensors());
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Mutable view of [`CountingModel::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<F>)> {
        let mut out: Vec<(String, &mut Vec<F>)> = vec![
            (
                "gabor.center_freq".into(),
                &mut self.frontend.gabor.center_freqs,
            ),
            ("gabor.width".into(), &mut self.frontend.gabor.widths),
            ("pool.width".into(), &mut self.frontend.pooling.widths),
            ("pcen.gain".into(), &mut self.frontend.pcen.gain),
            ("pcen.bias".into(), &mut self.frontend.pcen.bias),
            ("pcen.root".into(), &mut self.frontend.pcen.root),
        ];
        out.extend(self.classifier.tensors_mut());
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Elementwise cast between scalar types (used to run the `f64`
    /// gradient check on an `f32` training model).
    pub fn cast<G: Real>(&self) -> CountingModel<G> {
        CountingModel {
            window: self.window,
            frontend: self.frontend.cast(),
            classifier: self.classifier.cast(),
        }
    }

    /// Adds uniform noise of the given half-width to every tensor, then
    /// clamps. The gradient check uses this to probe a generic point in
    /// parameter space: the zero-initialized output layer would otherwise
    /// block gradient flow to everything upstream.
    pub fn jitter(&mut self, half_width: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, tensor) in self.tensors_mut() {
            for v in tensor.iter_mut() {
                *v += F::of((rng.random::<f64>() * 2.0 - 1.0) * half_width);
            }
        }
        self.clamp();
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Early stop after this many consecutive non-improving validation
    /// epochs; `None` disables early stopping.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            patience: None,
        }
    }
}

/// Adaptive moment estimation state, one slot per model tensor.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> AdamState<F> {
    pub fn new(model: &CountingModel<F>) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            step: 0,
            m: shapes.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    pub fn update(
        &mut self,
        model: &mut CountingModel<F>,
        grads: &ModelGrads<F>,
        cfg: &TrainConfig,
    ) {
        self.step += 1;
        let lr = F::of(cfg.learning_rate);
        let b1 = F::of(cfg.beta1);
        let b2 = F::of(cfg.beta2);
        let eps = F::of(cfg.adam_eps);
        let bc1 = F::one() - F::of(cfg.beta1.powi(self.step as i32));
        let bc2 = F::one() - F::of(cfg.beta2.powi(self.step as i32));
        let grad_tensors = grads.tensors();
        for (slot, (params, grad)) in model
            .tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .enumerate()
        {
            debug_assert_eq!(params.0, grad.0, "tensor order mismatch");
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for ((p, &g), (mi, vi)) in params
                .1
                .iter_mut()
                .zip(grad.1)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (F::one() - b1) * g;
                *vi = b2 * *vi + (F::one() - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Loss and accuracy of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Owns the model and optimizer state during training.
#[derive(Debug, Clone)]
pub struct Trainer<F> {
    pub model: CountingModel<F>,
    pub cfg: TrainConfig,
    adam: AdamState<F>,
}

impl<F: Real> Trainer<F> {
    pub fn new(model: CountingModel<F>, cfg: TrainConfig) -> Self {
        let adam = AdamState::new(&model);
        Self { model, cfg, adam }
    }

    /// One optimizer step over a minibatch: forward, mean loss, backward,
    /// update, clamp.
    pub fn train_step(&mut self, batch: &[&LabeledChunk]) -> Result<StepStats, TrainError> {
        let first = batch.first().ok_or(TrainError::EmptyDataset("batch"))?;
        for c in batch {
            if c.samples.len() != first.samples.len() {
                return Err(TrainError::RaggedBatch {
                    a: first.samples.len(),
                    b: c.samples.len(),
                });
            }
        }

        // Per-chunk passes are independent; the reduction below runs in
        // input order so results are bitwise reproducible.
        let per_chunk: Vec<(F, bool, ModelGrads<F>)> = batch
            .par_iter()
            .map(|chunk| self.model.loss_and_grads(&chunk.samples, chunk.label))
            .collect::<Result<_, _>>()?;

        let mut total_loss = F::zero();
        let mut correct = 0usize;
        let mut grads: Option<ModelGrads<F>> = None;
        for (loss, ok, g) in per_chunk {
            if !loss.is_finite() {
                return Err(TrainError::NonFinite("loss (forward pass)".into()));
            }
            total_loss += loss;
            correct += ok as usize;
            match grads.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => grads = Some(g),
            }
        }
        let mut grads = grads.expect("non-empty batch");
        let scale = F::one() / F::of(batch.len() as f64);
        grads.scale(scale);
        if !grads.is_finite() {
            let name = grads
                .tensors()
                .into_iter()
                .find(|(_, t)| t.iter().any(|g| !g.is_finite()))
                .map(|(n, _)| n)
                .unwrap_or_else(|| "unknown tensor".into());
            return Err(TrainError::NonFinite(format!("gradient of {name}")));
        }

        self.adam.update(&mut self.model, &grads, &self.cfg);
        self.model.clamp();

        Ok(StepStats {
            loss: (total_loss * scale).as_f64(),
            accuracy: correct as f64 / batch.len() as f64,
        })
    }
}

/// One line of training history, emitted per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub wall_seconds: f64,
}

/// Result of [`train_loop`]: the best model seen (by validation accuracy)
/// and the per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub model: CountingModel<F>,
    pub history: Vec<EpochRecord>,
}

/// Mean loss and accuracy over a chunk set, without updating parameters.
/// Returns NaNs for an empty set.
pub fn validate<F: Real>(
    model: &CountingModel<F>,
    chunks: &[LabeledChunk],
) -> Result<(f64, f64), TrainError> {
    if chunks.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let per_chunk: Vec<(f64, bool)> = chunks
        .par_iter()
        .map(|c| {
            let posterior = model.forward(&c.samples)?;
            let loss = cross_entropy_loss(&posterior, c.label)?;
            Ok((loss.as_f64(), posterior.predict() == c.label))
        })
        .collect::<Result<_, TrainError>>()?;
    let loss: f64 = per_chunk.iter().map(|(l, _)| l).sum::<f64>() / chunks.len() as f64;
    let acc = per_chunk.iter().filter(|(_, ok)| *ok).count() as f64 / chunks.len() as f64;
    Ok((loss, acc))
}

/// Epochs of shuffled minibatches with validation tracking.
///
/// Keeps the parameters with the best validation accuracy; with
/// `patience = Some(k)`, stops after `k + 1` consecutive non-improving
/// epochs. An empty validation set disables both (the final model wins).
pub fn train_loop<F: Real>(
    model: CountingModel<F>,
    train: &[LabeledChunk],
    val: &[LabeledChunk],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>, TrainError> {
    train_loop_with(model, train, val, cfg, |_| {})
}

/// [`train_loop`] with a per-epoch callback (history streaming).
pub fn train_loop_with<F: Real>(
    model: CountingModel<F>,
    train: &[LabeledChunk],
    val: &[LabeledChunk],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<F>, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset("training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trainer = Trainer::new(model, cfg.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, CountingModel<F>)> = None;
    let mut stale_epochs = 0usize;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch_idx in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&LabeledChunk> = batch_idx.iter().map(|&i| &train[i]).collect();
            let stats = trainer.train_step(&batch)?;
            loss_sum += stats.loss * batch.len() as f64;
            seen += batch.len();
        }
        let (val_loss, val_accuracy) = validate(&trainer.model, val)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss,
            val_accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);

        if val.is_empty() {
            continue;
        }
        let improved = best
            .as_ref()
            .map(|(acc, _)| val_accuracy > *acc)
            .unwrap_or(true);
        if improved {
            best = Some((val_accuracy, trainer.model.clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if let Some(patience) = cfg.patience {
                if stale_epochs > patience {
                    break;
                }
            }
        }
    }

    let model = best.map(|(_, m)| m).unwrap_or(trainer.model);
    Ok(TrainOutcome { model, history })
}

/// Per-tensor outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Every probed scalar had negligible analytic and numeric gradient.
    Degenerate,
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub probed: usize,
    pub max_rel_err: f64,
    pub status: CheckStatus,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    /// True when no tensor failed (degenerate tensors are skipped).
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.status != CheckStatus::Fail)
    }
}

/// Gradient check configuration.
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Base finite-difference step; each parameter is perturbed by
    /// `step * (|p| + 0.1)`, keeping truncation error small on the
    /// oscillatory center-frequency terms while bounding `f64` roundoff
    /// for near-zero parameters.
    pub step: f64,
    pub tolerance: f64,
    /// Scalars probed per tensor; tensors at most this large are probed
    /// exhaustively. `None` probes every scalar.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
    /// Test hook: corrupt this tensor's analytic gradient so the harness
    /// itself can be verified to catch mismatches.
    pub corrupt_tensor: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-5,
            max_per_tensor: Some(64),
            seed: 0,
            corrupt_tensor: None,
        }
    }
}

/// Gradient magnitudes below this are inside the roundoff noise of `f64`
/// central differences at the step sizes used here; such scalars are
/// skipped, and a tensor where every probe is skipped reports as
/// degenerate.
const DEGENERATE_FLOOR: f64 = 2e-5;

/// Additive floor of the relative finite-difference step.
const STEP_SCALE_FLOOR: f64 = 0.1;

/// Compares analytic gradients of the full chunk loss against central
/// finite differences, tensor by tensor.
pub fn grad_check(
    model: &CountingModel<f64>,
    samples: &[f64],
    label: usize,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, TrainError> {
    let (_, _, grads) = model.loss_and_grads(samples, label)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let names: Vec<String> = model.tensors().iter().map(|(n, _)| n.clone()).collect();
    let mut tensors = Vec::with_capacity(names.len());
    for (slot, name) in names.iter().enumerate() {
        let analytic_full = grads.tensors()[slot].1.to_vec();
        let len = analytic_full.len();
        let indices: Vec<usize> = match cfg.max_per_tensor {
            Some(max) if len > max => rand::seq::index::sample(&mut rng, len, max).into_vec(),
            _ => (0..len).collect(),
        };

        let corrupted = cfg.corrupt_tensor.as_deref() == Some(name.as_str());
        let mut max_rel_err = 0.0f64;
        let mut live = 0usize;
        for &idx in &indices {
            let mut analytic = analytic_full[idx];
            if corrupted {
                analytic = analytic * 1.5 + 1.0;
            }
            let base = model.tensors()[slot].1[idx];
            let fd = |h: f64| -> Result<f64, TrainError> {
                let mut plus = model.clone();
                plus.tensors_mut()[slot].1[idx] = base + h;
                let mut minus = model.clone();
                minus.tensors_mut()[slot].1[idx] = base - h;
                Ok((plus.loss(samples, label)? - minus.loss(samples, label)?) / (2.0 * h))
            };
            let h = cfg.step * (base.abs() + STEP_SCALE_FLOOR);
            let numeric = fd(h)?;
            let mag = analytic.abs().max(numeric.abs());
            if mag < DEGENERATE_FLOOR {
                continue;
            }
            live += 1;
            let mut rel = (analytic - numeric).abs() / mag;
            // Rectifier kinks and truncation inflate the estimate at the
            // base step but vanish once h drops below the kink distance; a
            // wrong gradient stays wrong at every step size.
            let mut halved = h;
            while rel >= cfg.tolerance && halved > h / 2048.0 {
                halved /= 2.0;
                let refined = fd(halved)?;
                rel = rel.min((analytic - refined).abs() / analytic.abs().max(refined.abs()));
            }
            max_rel_err = max_rel_err.max(rel);
        }
        let status = if live == 0 {
            CheckStatus::Degenerate
        } else if max_rel_err < cfg.tolerance {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        tensors.push(TensorCheck {
            name: name.clone(),
            probed: indices.len(),
            max_rel_err,
            status,
        });
    }
    Ok(GradCheckReport { tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ConvBlockSpec;

    fn tiny_cls_config(n_classes: usize) -> CompactCnnConfig {
        CompactCnnConfig {
            conv_blocks: vec![
                ConvBlockSpec {
                    out_channels: 4,
                    kernel: (3, 3),
                    stride: 1,
                },
                ConvBlockSpec {
                    out_channels: 8,
                    kernel: (3, 3),
                    stride: 2,
                },
            ],
            hidden_dim: 16,
            n_classes,
        }
    }

    fn tiny_frontend_config() -> FrontendConfig {
        FrontendConfig {
            n_filters: 4,
            kernel_width: 25,
            pool_stride: 40,
            pool_kernel_width: 41,
            ..FrontendConfig::default()
        }
    }

    fn tiny_model(seed: u64) -> CountingModel<f32> {
        let window = WindowConfig::new(10.0, 16_000).unwrap(); // L = 160
        CountingModel::new(window, &tiny_frontend_config(), tiny_cls_config(3), seed).unwrap()
    }

    fn tone_chunk(len: usize, freq: f64, amp: f64) -> Vec<f64> {
        (0..len)
            .map(|n| amp * (std::f64::consts::TAU * freq * n as f64).sin())
            .collect()
    }

    fn toy_chunks(n_per_class: usize) -> Vec<LabeledChunk> {
        // Two easily separable classes: a faint low tone vs a loud high one.
        let mut out = Vec::new();
        for i in 0..n_per_class {
            let phase = i as f64 * 0.37;
            out.push(LabeledChunk {
                samples: tone_chunk(160, 0.02 + 0.001 * phase.sin(), 0.05),
                label: 0,
            });
            out.push(LabeledChunk {
                samples: tone_chunk(160, 0.11 + 0.001 * phase.cos(), 0.6),
                label: 1,
            });
        }
        out
    }

    #[test]
    fn loss_trivial_values() {
        let uniform = Posterior {
            probs: vec![1.0f64 / 11.0; 11],
        };
        assert!((cross_entropy_loss(&uniform, 3).unwrap() - 11f64.ln()).abs() < 1e-12);
        assert!((11f64.ln() - 2.3979).abs() < 1e-4);

        let half = Posterior {
            probs: vec![0.5f64, 0.5],
        };
        assert!((cross_entropy_loss(&half, 0).unwrap() - 2f64.ln()).abs() < 1e-12);

        let mut onehot = vec![0.0f64; 5];
        onehot[2] = 1.0;
        let p = Posterior { probs: onehot };
        assert_eq!(cross_entropy_loss(&p, 2).unwrap(), 0.0);
        // Strictly positive for anything but the one-hot correct posterior.
        assert!(cross_entropy_loss(&p, 1).unwrap() > 0.0);
    }

    #[test]
    fn loss_rejects_out_of_range_label() {
        let p = Posterior {
            probs: vec![0.5f64, 0.5],
        };
        assert!(matches!(
            cross_entropy_loss(&p, 2).unwrap_err(),
            TrainError::LabelOutOfRange {
                label: 2,
                n_classes: 2
            }
        ));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let model = tiny_model(1);
        let reference = model.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(model, cfg);
        let chunks = toy_chunks(4);
        let refs: Vec<&LabeledChunk> = chunks.iter().collect();
        let stats = trainer.train_step(&refs).unwrap();
        assert!(stats.loss.is_finite());
        assert_eq!(trainer.model, reference);
    }

    #[test]
    fn adam_zero_gradients_keep_parameters() {
        let mut model = tiny_model(2);
        let reference = model.clone();
        let mut adam = AdamState::new(&model);
        let (_, _, mut grads) = model.loss_and_grads(&toy_chunks(1)[0].samples, 0).unwrap();
        grads.scale(0.0);
        adam.update(&mut model, &grads, &TrainConfig::default());
        assert_eq!(model, reference);
    }

    #[test]
    fn overfits_one_batch() {
        // Repeating one small batch must drive the loss down over any
        // coarse span.
        let model = tiny_model(3);
        let cfg = TrainConfig {
            learning_rate: 2e-3,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(model, cfg);
        let chunks = toy_chunks(4);
        let refs: Vec<&LabeledChunk> = chunks.iter().collect();
        let mut losses = Vec::new();
        for _ in 0..200 {
            losses.push(trainer.train_step(&refs).unwrap().loss);
        }
        for span in losses.chunks(50) {
            assert!(
                span.last().unwrap() < span.first().unwrap(),
                "loss did not decrease over span: {span:?}"
            );
        }
    }

    #[test]
    fn equal_seeds_give_identical_traces() {
        let chunks = toy_chunks(8);
        let run = || {
            let model = tiny_model(7);
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 4,
                seed: 42,
                ..TrainConfig::default()
            };
            train_loop(model, &chunks, &chunks[..4], &cfg)
                .unwrap()
                .history
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), b.len());
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.val_loss.to_bits(), rb.val_loss.to_bits());
            assert_eq!(ra.val_accuracy.to_bits(), rb.val_accuracy.to_bits());
        }
    }

    #[test]
    fn clamp_invariants_hold_after_steps() {
        let model = tiny_model(4);
        let window_len = model.window_len();
        let cfg = TrainConfig {
            learning_rate: 0.5, // aggressive on purpose
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(model, cfg);
        let chunks = toy_chunks(4);
        let refs: Vec<&LabeledChunk> = chunks.iter().collect();
        for _ in 0..20 {
            trainer.train_step(&refs).unwrap();
            let f = &trainer.model.frontend;
            let lo = 1.0 / window_len as f32;
            for &mu in &f.gabor.center_freqs {
                assert!(mu >= lo && mu <= 0.5 - lo);
            }
            for &w in f.gabor.widths.iter().chain(&f.pooling.widths) {
                assert!(w >= 0.5);
            }
            for &r in &f.pcen.root {
                assert!((0.05..=1.0).contains(&r));
            }
            for &v in f.pcen.gain.iter().chain(&f.pcen.bias) {
                assert!(v >= 0.0);
            }
        }
    }

    #[test]
    fn train_loop_single_epoch_history() {
        let chunks = toy_chunks(4);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let out = train_loop(tiny_model(5), &chunks, &chunks[..2], &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.history[0].epoch, 0);
    }

    #[test]
    fn train_loop_rejects_empty_train() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_loop(tiny_model(5), &[], &[], &cfg).unwrap_err(),
            TrainError::EmptyDataset("training set")
        ));
    }

    #[test]
    fn patience_zero_stops_after_first_non_improving_epoch() {
        // lr = 0 never improves, so epoch 1 is non-improving and the loop
        // must stop there.
        let chunks = toy_chunks(4);
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 4,
            learning_rate: 0.0,
            patience: Some(0),
            ..TrainConfig::default()
        };
        let out = train_loop(tiny_model(5), &chunks, &chunks[..4], &cfg).unwrap();
        assert_eq!(out.history.len(), 2);
    }

    fn check_model() -> (CountingModel<f64>, Vec<f64>) {
        let window = WindowConfig::new(10.0, 16_000).unwrap();
        let fcfg = FrontendConfig {
            n_filters: 3,
            kernel_width: 21,
            pool_stride: 40,
            pool_kernel_width: 21,
            // Narrow enough that the 21-tap kernel resolves width changes.
            init_pool_width: 4.0,
            ..FrontendConfig::default()
        };
        let model: CountingModel<f64> =
            CountingModel::new(window, &fcfg, tiny_cls_config(3), 11).unwrap();
        let chunk: Vec<f64> = (0..160)
            .map(|n| {
                0.4 * (std::f64::consts::TAU * 0.07 * n as f64).sin()
                    + 0.1 * (std::f64::consts::TAU * 0.23 * n as f64).cos()
            })
            .collect();
        (model, chunk)
    }

    #[test]
    fn grad_check_passes_on_fresh_model() {
        let (model, chunk) = check_model();
        let report = grad_check(&model, &chunk, 1, &GradCheckConfig::default()).unwrap();
        assert!(report.passed(), "{:?}", report.tensors);
        assert_eq!(report.tensors.len(), model.tensors().len());
    }

    #[test]
    fn grad_check_covers_every_tensor_after_jitter() {
        // At a generic parameter point no tensor may be degenerate.
        let (mut model, chunk) = check_model();
        model.jitter(0.05, 13);
        let report = grad_check(&model, &chunk, 1, &GradCheckConfig::default()).unwrap();
        for t in &report.tensors {
            assert_eq!(t.status, CheckStatus::Pass, "{t:?}");
        }
    }

    #[test]
    fn grad_check_flags_corrupted_tensor() {
        let (model, chunk) = check_model();
        let cfg = GradCheckConfig {
            corrupt_tensor: Some("pcen.gain".into()),
            ..GradCheckConfig::default()
        };
        let report = grad_check(&model, &chunk, 1, &cfg).unwrap();
        assert!(!report.passed());
        let bad = report
            .tensors
            .iter()
            .find(|t| t.name == "pcen.gain")
            .unwrap();
        assert_eq!(bad.status, CheckStatus::Fail);
        for t in &report.tensors {
            if t.name != "pcen.gain" {
                assert_ne!(t.status, CheckStatus::Fail, "{t:?}");
            }
        }
    }

    #[test]
    fn grad_check_reports_degenerate_on_blocked_path() {
        // A zero chunk plus the zero-initialized output layer gives a
        // uniform posterior whose gradients vanish upstream of the output
        // affine layer: those tensors are flagged degenerate, not failed.
        let (model, _) = check_model();
        let chunk = vec![0.0; 160];
        let report = grad_check(&model, &chunk, 0, &GradCheckConfig::default()).unwrap();
        let front = report
            .tensors
            .iter()
            .find(|t| t.name == "gabor.center_freq")
            .unwrap();
        assert_eq!(front.status, CheckStatus::Degenerate);
        assert!(report.passed());
    }

    #[test]
    fn tensor_names_align_between_model_and_grads() {
        let (model, chunk) = check_model();
        let (_, _, grads) = model.loss_and_grads(&chunk, 0).unwrap();
        let model_names: Vec<String> = model.tensors().iter().map(|(n, _)| n.clone()).collect();
        let grad_names: Vec<String> = grads.tensors().iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(model_names, grad_names);
        for ((_, p), (_, g)) in model.tensors().iter().zip(grads.tensors().iter()) {
            assert_eq!(p.len(), g.len());
        }
    }

    #[test]
    fn chunk_length_mismatch_is_rejected() {
        let model = tiny_model(0);
        let err = model.forward(&vec![0.0; 100]).unwrap_err();
        assert!(matches!(
            err,
            TrainError::ChunkLength {
                expected: 160,
                actual: 100
            }
        ));
    }
}
