//! Minimal RIFF/WAVE I/O: PCM format code 1, 16-bit, mono, little-endian.
//!
//! Anything else (float PCM, multi-channel, other bit depths) is rejected
//! with a specific error; resampling is out of scope, so sample-rate policy
//! is the caller's.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::signal::Waveform;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a RIFF/WAVE file")]
    NotWave,
    #[error("missing {0} chunk")]
    MissingChunk(&'static str),
    #[error("unsupported format code {0} (only PCM = 1)")]
    UnsupportedFormat(u16),
    #[error("unsupported bit depth {0} (only 16)")]
    UnsupportedBits(u16),
    #[error("unsupported channel count {0} (only mono)")]
    UnsupportedChannels(u16),
    #[error("malformed wav: {0}")]
    Malformed(&'static str),
}

/// Writes `samples` (clamped to `[-1, 1]`) as 16-bit PCM mono.
pub fn write_wav_mono16(
    path: &Path,
    samples: &[f64],
    sample_rate_hz: u32,
) -> Result<(), WavError> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(sample_rate_hz * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &v in samples {
        // Symmetric inverse of the 1/32768 read normalization, so that
        // read -> write -> read is exact.
        let q = (v.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Reads a 16-bit PCM mono file; samples are normalized by `1/32768`.
pub fn read_wav_mono16(path: &Path) -> Result<Waveform, WavError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotWave);
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().expect("4 bytes")) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or(WavError::Malformed("chunk size overflow"))?;
        if body_end > bytes.len() {
            return Err(WavError::Malformed("chunk extends past end of file"));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(WavError::Malformed("fmt chunk too short"));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().expect("2 bytes"));
                let channels = u16::from_le_bytes(body[2..4].try_into().expect("2 bytes"));
                let rate = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
                let bits = u16::from_le_bytes(body[14..16].try_into().expect("2 bytes"));
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {} // LIST, fact, cue, ... skipped
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        pos = body_end + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or(WavError::MissingChunk("fmt "))?;
    if format != 1 {
        return Err(WavError::UnsupportedFormat(format));
    }
    if channels != 1 {
        return Err(WavError::UnsupportedChannels(channels));
    }
    if bits != 16 {
        return Err(WavError::UnsupportedBits(bits));
    }
    let data = data.ok_or(WavError::MissingChunk("data"))?;
    if data.len() % 2 != 0 {
        return Err(WavError::Malformed("odd data chunk length"));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok(Waveform::new(samples, rate))
}
