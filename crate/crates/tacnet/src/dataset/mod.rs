//! Dataset plumbing: synthetic mixture generation with ground-truth
//! activity, WAV corpus ingestion, manifests, and chunk streaming.
//!
//! Synthetic "speakers" are amplitude-modulated harmonic complexes, not
//! speech; they exist so that counting labels have an exact ground truth.
//! Splits are assigned per file (never per chunk) so no recording leaks
//! across train/val/test.

pub mod wav;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{
    mix_sources, segment_and_label, ActivityMask, LabeledChunk, SignalError, Waveform,
    WindowConfig,
};
use wav::{read_wav_mono16, write_wav_mono16, WavError};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("wav {path}: {source}")]
    Wav { path: PathBuf, source: WavError },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("manifest parse: {0}")]
    ManifestParse(String),
    #[error("manifest version {0} unsupported")]
    ManifestVersion(u32),
    #[error("nothing to generate (n_mixtures = 0)")]
    NothingToGenerate,
    #[error("invalid dataset config: {0}")]
    BadConfig(String),
    #[error("record {path}: {detail}")]
    BadRecord { path: PathBuf, detail: String },
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Train/validation/test assignment, fixed at file granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (train|val|test)")),
        }
    }
}

/// One source's ground-truth activity within a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceActivity {
    pub id: String,
    pub mask: ActivityMask,
}

/// One audio file plus everything needed to label its chunks.
///
/// `label_override` carries count-only annotations (ingestion mode b): the
/// file-level count is applied to every chunk, ignoring within-file silence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    pub audio_path: PathBuf,
    pub sample_rate_hz: u32,
    pub duration_samples: usize,
    pub sources: Vec<SourceActivity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_override: Option<usize>,
    pub split: Split,
}

/// Dataset manifest: versioned record list plus the chunking geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub window: WindowConfig,
    /// Maximum representable count ζ; labels range over `0..=max_count`.
    pub max_count: usize,
    pub records: Vec<MixtureRecord>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| DatasetError::ManifestParse(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| DatasetError::ManifestParse(e.to_string()))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(DatasetError::ManifestVersion(manifest.version));
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        for record in &self.records {
            if record.sources.len() > self.max_count {
                return Err(DatasetError::BadRecord {
                    path: record.audio_path.clone(),
                    detail: format!(
                        "{} sources exceed max_count {}",
                        record.sources.len(),
                        self.max_count
                    ),
                });
            }
            if let Some(label) = record.label_override {
                if label > self.max_count {
                    return Err(DatasetError::BadRecord {
                        path: record.audio_path.clone(),
                        detail: format!("label {label} exceeds max_count {}", self.max_count),
                    });
                }
            }
            for source in &record.sources {
                source
                    .mask
                    .validate(record.duration_samples)
                    .map_err(|e| DatasetError::BadRecord {
                        path: record.audio_path.clone(),
                        detail: e.to_string(),
                    })?;
            }
        }
        Ok(())
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &MixtureRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Count-class histogram of records, by their nominal source count
    /// (or override label).
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.max_count + 1];
        for r in &self.records {
            let label = r.label_override.unwrap_or(r.sources.len());
            hist[label] += 1;
        }
        hist
    }
}

/// Shape of one synthetic source: an amplitude-modulated harmonic complex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSourceConfig {
    pub fundamental_hz: (f64, f64),
    pub n_harmonics: usize,
    /// Amplitude-modulation rate range, mimicking syllabic rhythm.
    pub am_rate_hz: (f64, f64),
    /// Fraction of the mixture during which a source is active.
    pub duty_cycle: (f64, f64),
    /// Mixture peak is rescaled to at most this.
    pub peak_target: f64,
    /// Minimum ratio between any two fundamentals within one mixture.
    /// `1.0` disables the constraint; values around `1.12` (one semitone)
    /// keep sources individually resolvable instead of colliding in
    /// near-unison, which no counter could disambiguate in a 25 ms window.
    pub min_f0_ratio: f64,
}

impl Default for SyntheticSourceConfig {
    fn default() -> Self {
        Self {
            fundamental_hz: (90.0, 300.0),
            n_harmonics: 8,
            am_rate_hz: (2.0, 8.0),
            duty_cycle: (0.5, 0.9),
            peak_target: 0.99,
            min_f0_ratio: 1.0,
        }
    }
}

/// Parameters of one generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_mixtures: usize,
    pub max_count: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub window_ms: f64,
    pub seed: u64,
    /// Train/val/test ratios, applied per class with largest-remainder
    /// rounding.
    pub split_ratios: (f64, f64, f64),
    pub source: SyntheticSourceConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_mixtures: 22,
            max_count: 10,
            duration_s: 5.0,
            sample_rate_hz: 16_000,
            window_ms: WindowConfig::DEFAULT_WINDOW_MS,
            seed: 0,
            split_ratios: (0.8, 0.1, 0.1),
            source: SyntheticSourceConfig::default(),
        }
    }
}

/// Largest-remainder split of `n` items into train/val/test counts; ties
/// favor train, then val.
fn split_counts(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let total = ratios.0 + ratios.1 + ratios.2;
    let exact = [
        n as f64 * ratios.0 / total,
        n as f64 * ratios.1 / total,
        n as f64 * ratios.2 / total,
    ];
    let mut counts: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let mut remainder = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &slot in &order {
        if remainder == 0 {
            break;
        }
        counts[slot] += 1;
        remainder -= 1;
    }
    (counts[0], counts[1], counts[2])
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    range.0 + (range.1 - range.0) * rng.random::<f64>()
}

/// Random activity mask with `n_intervals` active stretches totalling
/// roughly `duty * total` samples.
fn random_mask(rng: &mut ChaCha8Rng, total: usize, duty: f64, n_intervals: usize) -> ActivityMask {
    let active_total = ((total as f64 * duty) as usize).max(n_intervals);
    // Random split of the active mass into interval lengths.
    let mut weights: Vec<f64> = (0..n_intervals).map(|_| rng.random::<f64>() + 0.2).collect();
    let wsum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w = *w / wsum * active_total as f64;
    }
    // Random split of the slack into gaps before each interval.
    let slack = total - active_total.min(total);
    let mut gaps: Vec<f64> = (0..n_intervals + 1).map(|_| rng.random::<f64>()).collect();
    let gsum: f64 = gaps.iter().sum();
    for g in &mut gaps {
        *g = *g / gsum * slack as f64;
    }
    let mut intervals = Vec::with_capacity(n_intervals);
    let mut cursor = 0f64;
    for i in 0..n_intervals {
        cursor += gaps[i];
        let start = (cursor as usize).min(total.saturating_sub(1));
        cursor += weights[i];
        let end = (cursor as usize).clamp(start + 1, total);
        intervals.push((start, end));
    }
    ActivityMask::new(intervals)
}

/// Fundamental respecting the per-mixture separation constraint; retries
/// draws until it clears every earlier source (bounded, deterministic).
fn draw_fundamental(rng: &mut ChaCha8Rng, cfg: &SyntheticSourceConfig, taken: &[f64]) -> f64 {
    let mut f0 = uniform(rng, cfg.fundamental_hz);
    if cfg.min_f0_ratio > 1.0 {
        for _ in 0..200 {
            let clear = taken
                .iter()
                .all(|&e| f0.max(e) / f0.min(e) >= cfg.min_f0_ratio);
            if clear {
                break;
            }
            f0 = uniform(rng, cfg.fundamental_hz);
        }
    }
    f0
}

fn harmonic_source(
    rng: &mut ChaCha8Rng,
    total: usize,
    sample_rate_hz: u32,
    cfg: &SyntheticSourceConfig,
    mask: &ActivityMask,
    f0: f64,
) -> Waveform {
    let am_rate = uniform(rng, cfg.am_rate_hz);
    let am_phase = uniform(rng, (0.0, std::f64::consts::TAU));
    let phases: Vec<f64> = (0..cfg.n_harmonics)
        .map(|_| uniform(rng, (0.0, std::f64::consts::TAU)))
        .collect();
    let rate = sample_rate_hz as f64;
    let mut samples = vec![0.0f64; total];
    for &(start, end) in &mask.intervals {
        for (n, s) in samples[start..end].iter_mut().enumerate() {
            let t = (start + n) as f64 / rate;
            let am = 0.3 + 0.7 * (0.5 + 0.5 * (std::f64::consts::TAU * am_rate * t + am_phase).sin());
            let mut v = 0.0;
            for (h, &phase) in phases.iter().enumerate() {
                let k = (h + 1) as f64;
                v += (std::f64::consts::TAU * f0 * k * t + phase).sin() / k;
            }
            *s = am * v;
        }
    }
    Waveform::new(samples, sample_rate_hz)
}

/// Generates class-balanced synthetic mixtures with exact activity masks.
///
/// Mixture `i` gets count class `i % (max_count + 1)`; count-0 mixtures are
/// low-amplitude noise. WAV files land in `out_dir` next to a
/// `manifest.json`; a fixed seed reproduces the files bit for bit.
pub fn synth_generate(out_dir: &Path, cfg: &SynthConfig) -> Result<DatasetManifest, DatasetError> {
    if cfg.n_mixtures == 0 {
        return Err(DatasetError::NothingToGenerate);
    }
    let n_classes = cfg.max_count + 1;
    let window = WindowConfig::new(cfg.window_ms, cfg.sample_rate_hz)?;
    let total = (cfg.duration_s * cfg.sample_rate_hz as f64).round() as usize;
    if total < window.window_len() {
        return Err(DatasetError::BadConfig(format!(
            "duration {}s is shorter than one {}ms window",
            cfg.duration_s, cfg.window_ms
        )));
    }
    let nyquist = cfg.sample_rate_hz as f64 / 2.0;
    if cfg.source.fundamental_hz.1 * cfg.source.n_harmonics as f64 >= nyquist {
        return Err(DatasetError::BadConfig(format!(
            "fundamental up to {} Hz with {} harmonics exceeds nyquist {} Hz",
            cfg.source.fundamental_hz.1, cfg.source.n_harmonics, nyquist
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let mut records = Vec::with_capacity(cfg.n_mixtures);
    for i in 0..cfg.n_mixtures {
        let count = i % n_classes;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);

        let (mixture, sources) = if count == 0 {
            let noise: Vec<f64> = (0..total)
                .map(|_| (rng.random::<f64>() - 0.5) * 0.01)
                .collect();
            (Waveform::new(noise, cfg.sample_rate_hz), Vec::new())
        } else {
            let mut waves = Vec::with_capacity(count);
            let mut sources = Vec::with_capacity(count);
            let mut fundamentals: Vec<f64> = Vec::with_capacity(count);
            for j in 0..count {
                let duty = uniform(&mut rng, cfg.source.duty_cycle);
                let n_intervals = rng.random_range(1..=4usize);
                let mask = random_mask(&mut rng, total, duty, n_intervals);
                let f0 = draw_fundamental(&mut rng, &cfg.source, &fundamentals);
                fundamentals.push(f0);
                waves.push(harmonic_source(
                    &mut rng,
                    total,
                    cfg.sample_rate_hz,
                    &cfg.source,
                    &mask,
                    f0,
                ));
                sources.push(SourceActivity {
                    id: format!("src{j}"),
                    mask,
                });
            }
            let mut mixture = mix_sources(&waves)?;
            let peak = mixture
                .samples
                .iter()
                .fold(0f64, |acc, &v| acc.max(v.abs()));
            if peak > cfg.source.peak_target {
                let scale = cfg.source.peak_target / peak;
                for v in &mut mixture.samples {
                    *v *= scale;
                }
            }
            (mixture, sources)
        };

        let file_name = format!("mix{i:05}_c{count}.wav");
        let path = out_dir.join(&file_name);
        write_wav_mono16(&path, &mixture.samples, cfg.sample_rate_hz)
            .map_err(|e| DatasetError::Wav { path, source: e })?;
        records.push(MixtureRecord {
            audio_path: PathBuf::from(file_name),
            sample_rate_hz: cfg.sample_rate_hz,
            duration_samples: total,
            sources,
            label_override: None,
            split: Split::Train, // reassigned below
        });
    }

    assign_splits_stratified(&mut records, cfg.max_count, cfg.split_ratios);

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        window,
        max_count: cfg.max_count,
        records,
    };
    manifest.validate()?;
    manifest.save(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Assigns splits per class, in record order, with largest-remainder
/// rounding of the ratios.
fn assign_splits_stratified(
    records: &mut [MixtureRecord],
    max_count: usize,
    ratios: (f64, f64, f64),
) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (idx, r) in records.iter().enumerate() {
        let label = r.label_override.unwrap_or(r.sources.len()).min(max_count);
        by_class.entry(label).or_default().push(idx);
    }
    for (_, indices) in by_class {
        let (n_train, n_val, _) = split_counts(indices.len(), ratios);
        for (pos, &idx) in indices.iter().enumerate() {
            records[idx].split = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
}

/// How ingested WAV files are annotated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotationMode {
    /// `<basename>.json` next to each WAV holds per-source activity
    /// intervals (see [`SidecarAnnotation`]).
    Sidecar,
    /// The speaker count is parsed from the file name: either the leading
    /// integer token (`3_mix.wav`) or a trailing `c<count>` token
    /// (`mix00001_c3.wav`). The count labels every chunk of the file.
    FilenameCount,
}

/// Schema of a mode-(a) annotation sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarAnnotation {
    pub sample_rate: u32,
    pub duration_samples: usize,
    pub sources: Vec<SidecarSource>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarSource {
    pub id: String,
    /// Half-open `[start, end)` sample intervals.
    pub intervals: Vec<(usize, usize)>,
}

/// A per-file problem encountered during ingestion; the run continues.
#[derive(Debug, Clone)]
pub struct IngestIssue {
    pub path: PathBuf,
    pub message: String,
}

/// Outcome of [`ingest_wav_dir`]: the manifest plus per-file issues.
#[derive(Debug)]
pub struct IngestOutcome {
    pub manifest: DatasetManifest,
    pub issues: Vec<IngestIssue>,
}

fn filename_count(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let mut tokens = stem.split('_');
    let first = tokens.next()?;
    if let Ok(count) = first.parse::<usize>() {
        return Some(count);
    }
    let last = stem.split('_').next_back()?;
    last.strip_prefix('c')?.parse::<usize>().ok()
}

/// Scans a directory of PCM WAV files into a manifest.
///
/// Unreadable files, sample-rate mismatches, and missing or inconsistent
/// annotations become [`IngestIssue`]s; the scan continues. An empty
/// directory yields an empty manifest plus a warning issue.
pub fn ingest_wav_dir(
    dir: &Path,
    mode: AnnotationMode,
    window: WindowConfig,
    max_count: usize,
    split_ratios: (f64, f64, f64),
) -> Result<IngestOutcome, DatasetError> {
    let mut wav_paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })
        .collect();
    wav_paths.sort();

    let mut issues = Vec::new();
    let mut records = Vec::new();
    for path in wav_paths {
        match ingest_one(&path, mode, &window, max_count) {
            Ok(record) => records.push(record),
            Err(message) => issues.push(IngestIssue {
                path: path.clone(),
                message,
            }),
        }
    }
    if records.is_empty() {
        issues.push(IngestIssue {
            path: dir.to_path_buf(),
            message: "no usable wav files found; manifest is empty".into(),
        });
    }

    assign_splits_stratified(&mut records, max_count, split_ratios);
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        window,
        max_count,
        records,
    };
    manifest.validate()?;
    Ok(IngestOutcome { manifest, issues })
}

fn ingest_one(
    path: &Path,
    mode: AnnotationMode,
    window: &WindowConfig,
    max_count: usize,
) -> Result<MixtureRecord, String> {
    let wave = read_wav_mono16(path).map_err(|e| e.to_string())?;
    if wave.sample_rate_hz != window.sample_rate_hz {
        return Err(format!(
            "sample rate {} Hz does not match configured {} Hz (resampling unsupported)",
            wave.sample_rate_hz, window.sample_rate_hz
        ));
    }
    let file_name = PathBuf::from(path.file_name().expect("file path"));
    match mode {
        AnnotationMode::Sidecar => {
            let sidecar_path = path.with_extension("json");
            let text = std::fs::read_to_string(&sidecar_path)
                .map_err(|_| format!("missing annotation sidecar {}", sidecar_path.display()))?;
            let annotation: SidecarAnnotation =
                serde_json::from_str(&text).map_err(|e| format!("sidecar parse: {e}"))?;
            if annotation.sample_rate != wave.sample_rate_hz {
                return Err(format!(
                    "sidecar sample rate {} != wav {}",
                    annotation.sample_rate, wave.sample_rate_hz
                ));
            }
            if annotation.duration_samples != wave.len() {
                return Err(format!(
                    "sidecar duration {} != wav {}",
                    annotation.duration_samples,
                    wave.len()
                ));
            }
            if annotation.sources.len() > max_count {
                return Err(format!(
                    "{} sources exceed max count {}",
                    annotation.sources.len(),
                    max_count
                ));
            }
            let sources: Vec<SourceActivity> = annotation
                .sources
                .into_iter()
                .map(|s| SourceActivity {
                    id: s.id,
                    mask: ActivityMask::new(s.intervals),
                })
                .collect();
            for s in &sources {
                s.mask
                    .validate(wave.len())
                    .map_err(|e| format!("source {}: {e}", s.id))?;
            }
            Ok(MixtureRecord {
                audio_path: file_name,
                sample_rate_hz: wave.sample_rate_hz,
                duration_samples: wave.len(),
                sources,
                label_override: None,
                split: Split::Train,
            })
        }
        AnnotationMode::FilenameCount => {
            let count = filename_count(path)
                .ok_or_else(|| "no count found in file name (want 3_x.wav or x_c3.wav)".to_string())?;
            if count > max_count {
                return Err(format!("count {count} exceeds max count {max_count}"));
            }
            Ok(MixtureRecord {
                audio_path: file_name,
                sample_rate_hz: wave.sample_rate_hz,
                duration_samples: wave.len(),
                sources: Vec::new(),
                label_override: Some(count),
                split: Split::Train,
            })
        }
    }
}

/// Chunks of one record, labeled from its masks (or its override label).
pub fn chunk_record(
    record: &MixtureRecord,
    base_dir: &Path,
    window: &WindowConfig,
) -> Result<Vec<LabeledChunk>, DatasetError> {
    let path = base_dir.join(&record.audio_path);
    let wave = read_wav_mono16(&path).map_err(|e| DatasetError::Wav {
        path: path.clone(),
        source: e,
    })?;
    if wave.sample_rate_hz != window.sample_rate_hz {
        return Err(DatasetError::BadRecord {
            path: record.audio_path.clone(),
            detail: format!(
                "sample rate {} != window config {}",
                wave.sample_rate_hz, window.sample_rate_hz
            ),
        });
    }
    let masks: Vec<ActivityMask> = record.sources.iter().map(|s| s.mask.clone()).collect();
    let mut chunks = segment_and_label(&wave, &masks, window)?;
    if let Some(label) = record.label_override {
        for c in &mut chunks {
            c.label = label;
        }
    }
    Ok(chunks)
}

/// All chunks of a manifest, partitioned by split.
#[derive(Debug, Default)]
pub struct ChunkedDataset {
    pub train: Vec<LabeledChunk>,
    pub val: Vec<LabeledChunk>,
    pub test: Vec<LabeledChunk>,
}

impl ChunkedDataset {
    pub fn split(&self, split: Split) -> &[LabeledChunk] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    /// `(split, class) -> chunk count` table.
    pub fn histogram(&self, max_count: usize) -> Vec<(Split, Vec<usize>)> {
        Split::ALL
            .iter()
            .map(|&s| {
                let mut hist = vec![0usize; max_count + 1];
                for c in self.split(s) {
                    if c.label <= max_count {
                        hist[c.label] += 1;
                    }
                }
                (s, hist)
            })
            .collect()
    }
}

/// Chunks every record of the manifest with its window config.
pub fn chunk_dataset(
    manifest: &DatasetManifest,
    base_dir: &Path,
) -> Result<ChunkedDataset, DatasetError> {
    let mut out = ChunkedDataset::default();
    for record in &manifest.records {
        let chunks = chunk_record(record, base_dir, &manifest.window)?;
        let bucket = match record.split {
            Split::Train => &mut out.train,
            Split::Val => &mut out.val,
            Split::Test => &mut out.test,
        };
        bucket.extend(chunks);
    }
    Ok(out)
}
