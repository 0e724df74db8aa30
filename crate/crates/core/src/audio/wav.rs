//! RIFF/WAVE PCM reader and writer, restricted to 16 kHz 16-bit mono.

use std::path::Path;

use super::WaveformClip;
use crate::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Parse a WAV byte buffer into raw int16 samples.
pub fn parse_wav_i16(bytes: &[u8]) -> Result<Vec<i16>> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(Error::format("riff", "missing RIFF signature"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::format("wave", "RIFF form type is not WAVE"));
    }
    let mut pos = 12;
    let mut fmt_seen = false;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(Error::format(
                String::from_utf8_lossy(id).trim().to_string(),
                format!("chunk claims {size} bytes but only {} remain", bytes.len() - body),
            ));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::format("fmt", format!("chunk too short ({size} bytes)")));
                }
                let audio_format = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if audio_format != 1 {
                    return Err(Error::format("audio_format", format!("expected 1 (PCM), found {audio_format}")));
                }
                if channels != 1 {
                    return Err(Error::format("num_channels", format!("expected 1 (mono), found {channels}")));
                }
                if rate != SAMPLE_RATE {
                    return Err(Error::format("sample_rate", format!("expected {SAMPLE_RATE}, found {rate}")));
                }
                if bits != 16 {
                    return Err(Error::format("bits_per_sample", format!("expected 16, found {bits}")));
                }
                fmt_seen = true;
            }
            b"data" => {
                if !fmt_seen {
                    return Err(Error::format("fmt", "data chunk before fmt chunk"));
                }
                if size % 2 != 0 {
                    return Err(Error::format("data", "odd byte count for 16-bit samples"));
                }
                return Ok(bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect());
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(Error::format(if fmt_seen { "data" } else { "fmt" }, "chunk not found"))
}

pub fn read_wav_i16(path: impl AsRef<Path>) -> Result<Vec<i16>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav_i16(&bytes).map_err(|e| match e {
        Error::Format { field, message } => Error::Format {
            field,
            message: format!("{message} ({})", path.display()),
        },
        e => e,
    })
}

/// Read a clip, scaling samples by 1/32768. Speaker and utterance ids are
/// left for the caller to fill in.
pub fn read_wav(path: impl AsRef<Path>) -> Result<WaveformClip> {
    let path = path.as_ref();
    let raw = read_wav_i16(path)?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(WaveformClip::new(raw.iter().map(|&s| s as f64 / 32768.0).collect(), 0, id))
}

/// Canonical 44-byte-header encoding.
pub fn encode_wav_i16(samples: &[i16]) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn write_wav_i16(path: impl AsRef<Path>, samples: &[i16]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_wav_i16(samples)).map_err(|e| Error::io(path, e))
}

/// Quantise to int16 (round to nearest, saturating) and write.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64]) -> Result<()> {
    let q: Vec<i16> = samples
        .iter()
        .map(|&x| (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
        .collect();
    write_wav_i16(path, &q)
}
