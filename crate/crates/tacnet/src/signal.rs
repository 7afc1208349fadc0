//! Audio containers, mixture construction, windowing, and chunk labeling.
//!
//! A mixture is the plain sample-wise sum of equal-length sources. The
//! mixture is cut into contiguous fixed-length windows and every window is
//! labeled with the most frequent per-sample active-source count inside it
//! (the mode), ties broken toward the smaller count.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("sources disagree: {what} {a} vs {b}")]
    SourceMismatch { what: &'static str, a: u64, b: u64 },
    #[error("input of {total_len} samples is shorter than one window ({window_len} samples)")]
    ShorterThanWindow { total_len: usize, window_len: usize },
    #[error("activity interval [{start}, {end}) out of range for length {len}")]
    IntervalOutOfRange { start: usize, end: usize, len: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("window length must be at least one sample (window_ms={window_ms}, rate={rate} Hz)")]
    ZeroWindow { window_ms: f64, rate: u32 },
}

/// Sampled single-channel signal. Amplitudes are nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Half-open `[start, end)` sample ranges during which one source is active.
///
/// Intervals are kept sorted and non-overlapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityMask {
    pub intervals: Vec<(usize, usize)>,
}

impl ActivityMask {
    /// Normalizes arbitrary intervals: drops empties, sorts, merges overlaps.
    pub fn new(mut intervals: Vec<(usize, usize)>) -> Self {
        intervals.retain(|(s, e)| e > s);
        intervals.sort_unstable();
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(intervals.len());
        for (s, e) in intervals {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(e),
                _ => merged.push((s, e)),
            }
        }
        Self { intervals: merged }
    }

    /// Mask that is active over the whole `[0, len)` range.
    pub fn always(len: usize) -> Self {
        Self {
            intervals: vec![(0, len)],
        }
    }

    pub fn contains(&self, n: usize) -> bool {
        // Intervals are sorted; a binary search would do, but masks hold a
        // handful of intervals in practice.
        self.intervals.iter().any(|&(s, e)| s <= n && n < e)
    }

    pub fn end(&self) -> usize {
        self.intervals.last().map_or(0, |&(_, e)| e)
    }

    pub fn validate(&self, total_len: usize) -> Result<(), SignalError> {
        for &(start, end) in &self.intervals {
            if start >= end || end > total_len {
                return Err(SignalError::IntervalOutOfRange {
                    start,
                    end,
                    len: total_len,
                });
            }
        }
        Ok(())
    }
}

/// Fixed-length window of the mixture plus its count label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledChunk {
    pub samples: Vec<f64>,
    pub label: usize,
}

/// Window length configuration. `L` is derived as
/// `round(window_ms * sample_rate_hz / 1000)` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_ms: f64,
    pub sample_rate_hz: u32,
}

impl WindowConfig {
    pub const DEFAULT_WINDOW_MS: f64 = 25.0;
    pub const DEFAULT_SAMPLE_RATE_HZ: u32 = 16_000;

    pub fn new(window_ms: f64, sample_rate_hz: u32) -> Result<Self, SignalError> {
        let cfg = Self {
            window_ms,
            sample_rate_hz,
        };
        if window_ms <= 0.0 || cfg.window_len() == 0 {
            return Err(SignalError::ZeroWindow {
                window_ms,
                rate: sample_rate_hz,
            });
        }
        Ok(cfg)
    }

    /// Window length `L` in samples.
    pub fn window_len(&self) -> usize {
        (self.window_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_ms: Self::DEFAULT_WINDOW_MS,
            sample_rate_hz: Self::DEFAULT_SAMPLE_RATE_HZ,
        }
    }
}

/// Sums equal-length, equal-rate sources sample by sample.
///
/// The output is not renormalized; callers who need headroom scale the
/// sources before mixing.
pub fn mix_sources(sources: &[Waveform]) -> Result<Waveform, SignalError> {
    let first = sources.first().ok_or(SignalError::Empty("source list"))?;
    for s in &sources[1..] {
        if s.sample_rate_hz != first.sample_rate_hz {
            return Err(SignalError::SourceMismatch {
                what: "sample rates",
                a: first.sample_rate_hz as u64,
                b: s.sample_rate_hz as u64,
            });
        }
        if s.len() != first.len() {
            return Err(SignalError::SourceMismatch {
                what: "lengths",
                a: first.len() as u64,
                b: s.len() as u64,
            });
        }
    }
    let mut samples = vec![0.0f64; first.len()];
    for s in sources {
        for (acc, v) in samples.iter_mut().zip(&s.samples) {
            *acc += v;
        }
    }
    Ok(Waveform::new(samples, first.sample_rate_hz))
}

/// Contiguous non-overlapping sample windows `(a_i, b_i)` of length `L`.
///
/// A trailing remainder shorter than `L` is dropped, so exactly
/// `floor(total_len / L)` windows come back.
pub fn make_windows(
    total_len: usize,
    cfg: &WindowConfig,
) -> Result<Vec<(usize, usize)>, SignalError> {
    let window_len = cfg.window_len();
    if total_len < window_len {
        return Err(SignalError::ShorterThanWindow {
            total_len,
            window_len,
        });
    }
    let count = total_len / window_len;
    Ok((0..count)
        .map(|i| (i * window_len, (i + 1) * window_len))
        .collect())
}

/// Number of simultaneously active sources at every sample position.
pub fn active_count_per_sample(
    masks: &[ActivityMask],
    total_len: usize,
) -> Result<Vec<u32>, SignalError> {
    let mut counts = vec![0u32; total_len];
    for mask in masks {
        mask.validate(total_len)?;
        for &(start, end) in &mask.intervals {
            for c in &mut counts[start..end] {
                *c += 1;
            }
        }
    }
    Ok(counts)
}

/// The most frequent value of the vector; ties break toward the smaller count.
pub fn label_chunk_mode(counts: &[u32]) -> Result<usize, SignalError> {
    if counts.is_empty() {
        return Err(SignalError::Empty("count vector"));
    }
    let max = *counts.iter().max().expect("non-empty") as usize;
    let mut histogram = vec![0usize; max + 1];
    for &c in counts {
        histogram[c as usize] += 1;
    }
    let mut best = 0usize;
    for (value, &freq) in histogram.iter().enumerate() {
        // Strict '>' keeps the smallest value on ties.
        if freq > histogram[best] {
            best = value;
        }
    }
    Ok(best)
}

/// Windows the mixture and labels every chunk with the mode of its
/// per-sample active counts.
pub fn segment_and_label(
    mixture: &Waveform,
    masks: &[ActivityMask],
    cfg: &WindowConfig,
) -> Result<Vec<LabeledChunk>, SignalError> {
    let windows = make_windows(mixture.len(), cfg)?;
    let counts = active_count_per_sample(masks, mixture.len())?;
    windows
        .into_iter()
        .map(|(a, b)| {
            let label = label_chunk_mode(&counts[a..b])?;
            Ok(LabeledChunk {
                samples: mixture.samples[a..b].to_vec(),
                label,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(samples: &[f64]) -> Waveform {
        Waveform::new(samples.to_vec(), 16_000)
    }

    #[test]
    fn mix_adds_elementwise() {
        let out = mix_sources(&[wave(&[1.0, 2.0]), wave(&[3.0, 4.0])]).unwrap();
        assert_eq!(out.samples, vec![4.0, 6.0]);
    }

    #[test]
    fn mix_single_source_is_identity() {
        let s = wave(&[0.25, -0.5, 0.125]);
        assert_eq!(mix_sources(std::slice::from_ref(&s)).unwrap(), s);
    }

    #[test]
    fn mix_rejects_mismatched_lengths() {
        let err = mix_sources(&[wave(&[1.0]), wave(&[1.0, 2.0])]).unwrap_err();
        assert_eq!(
            err,
            SignalError::SourceMismatch {
                what: "lengths",
                a: 1,
                b: 2
            }
        );
    }

    #[test]
    fn mix_rejects_mismatched_rates() {
        let a = Waveform::new(vec![0.0], 16_000);
        let b = Waveform::new(vec![0.0], 8_000);
        let err = mix_sources(&[a, b]).unwrap_err();
        assert!(matches!(
            err,
            SignalError::SourceMismatch {
                what: "sample rates",
                ..
            }
        ));
    }

    #[test]
    fn windows_single_full() {
        let cfg = WindowConfig::new(25.0, 16_000).unwrap();
        assert_eq!(cfg.window_len(), 400);
        assert_eq!(make_windows(400, &cfg).unwrap(), vec![(0, 400)]);
    }

    #[test]
    fn windows_five_seconds_at_25ms_gives_200() {
        let cfg = WindowConfig::default();
        // 5 s at 16 kHz; oracle: floor(80_000 / 400).
        let windows = make_windows(80_000, &cfg).unwrap();
        assert_eq!(windows.len(), 80_000 / 400);
        assert_eq!(windows.len(), 200);
    }

    #[test]
    fn windows_drop_trailing_remainder() {
        let cfg = WindowConfig::default();
        let windows = make_windows(999, &cfg).unwrap();
        assert_eq!(windows, vec![(0, 400), (400, 800)]);
    }

    #[test]
    fn windows_reject_short_input() {
        let cfg = WindowConfig::default();
        assert_eq!(
            make_windows(399, &cfg).unwrap_err(),
            SignalError::ShorterThanWindow {
                total_len: 399,
                window_len: 400
            }
        );
    }

    #[test]
    fn active_counts_two_full_masks() {
        let masks = vec![ActivityMask::always(10), ActivityMask::always(10)];
        assert_eq!(active_count_per_sample(&masks, 10).unwrap(), vec![2; 10]);
    }

    #[test]
    fn active_counts_no_masks_all_zero() {
        assert_eq!(active_count_per_sample(&[], 5).unwrap(), vec![0; 5]);
    }

    #[test]
    fn active_counts_overlapping_masks() {
        // Brute-force oracle: membership count per sample.
        let masks = vec![
            ActivityMask::new(vec![(0, 5)]),
            ActivityMask::new(vec![(3, 8)]),
        ];
        let counts = active_count_per_sample(&masks, 10).unwrap();
        let oracle: Vec<u32> = (0..10)
            .map(|n| masks.iter().filter(|m| m.contains(n)).count() as u32)
            .collect();
        assert_eq!(counts, oracle);
        assert_eq!(counts, vec![1, 1, 1, 2, 2, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn active_counts_reject_out_of_range() {
        let masks = vec![ActivityMask::new(vec![(0, 11)])];
        assert!(matches!(
            active_count_per_sample(&masks, 10).unwrap_err(),
            SignalError::IntervalOutOfRange { .. }
        ));
    }

    #[test]
    fn mode_majority() {
        assert_eq!(label_chunk_mode(&[3, 3, 3, 4, 4]).unwrap(), 3);
    }

    #[test]
    fn mode_tie_breaks_small() {
        assert_eq!(label_chunk_mode(&[2, 2, 3, 3]).unwrap(), 2);
    }

    #[test]
    fn mode_constant_vector() {
        assert_eq!(label_chunk_mode(&[5; 400]).unwrap(), 5);
    }

    #[test]
    fn segment_five_seconds_yields_200_chunks() {
        let cfg = WindowConfig::default();
        let mixture = Waveform::new(vec![0.0; 80_000], 16_000);
        let chunks = segment_and_label(&mixture, &[], &cfg).unwrap();
        assert_eq!(chunks.len(), 200);
        assert!(chunks.iter().all(|c| c.label == 0));
        assert!(chunks.iter().all(|c| c.samples.len() == 400));
    }

    #[test]
    fn segment_labels_follow_activity() {
        // First half 2-active, second half 3-active, L = T/4.
        let total = 1600;
        let cfg = WindowConfig::new(25.0, 16_000).unwrap();
        let masks = vec![
            ActivityMask::always(total),
            ActivityMask::always(total),
            ActivityMask::new(vec![(total / 2, total)]),
        ];
        let mixture = Waveform::new(vec![0.0; total], 16_000);
        let labels: Vec<usize> = segment_and_label(&mixture, &masks, &cfg)
            .unwrap()
            .iter()
            .map(|c| c.label)
            .collect();
        // Oracle: per-sample counts then mode per window.
        let counts = active_count_per_sample(&masks, total).unwrap();
        let oracle: Vec<usize> = make_windows(total, &cfg)
            .unwrap()
            .iter()
            .map(|&(a, b)| label_chunk_mode(&counts[a..b]).unwrap())
            .collect();
        assert_eq!(labels, oracle);
        assert_eq!(labels, vec![2, 2, 3, 3]);
    }

    #[test]
    fn mask_normalization_merges_overlaps() {
        let m = ActivityMask::new(vec![(5, 9), (0, 3), (2, 6), (9, 9)]);
        assert_eq!(m.intervals, vec![(0, 9)]);
    }
}
