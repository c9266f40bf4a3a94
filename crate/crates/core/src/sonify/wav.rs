//! Minimal RIFF/WAVE support: 16-bit PCM mono output; 16-bit PCM or 32-bit
//! float input, mono or stereo (stereo is averaged down to mono).

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum WavError {
    #[error("malformed WAV at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn malformed<T>(offset: usize, message: impl Into<String>) -> Result<T, WavError> {
    Err(WavError::Parse {
        offset,
        message: message.into(),
    })
}

const PCM: u16 = 1;
const IEEE_FLOAT: u16 = 3;
const EXTENSIBLE: u16 = 0xFFFE;
const PCM_SCALE: f32 = 32767.0;

/// Encodes `signal` as 16-bit PCM mono. Samples are clamped to `[-1, 1]`.
pub fn encode_wav(signal: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = (signal.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + signal.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in signal {
        let x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
        let q = (x * PCM_SCALE).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(signal: &[f32], sample_rate: u32, path: impl AsRef<Path>) -> Result<(), WavError> {
    std::fs::write(path, encode_wav(signal, sample_rate))?;
    Ok(())
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f32>, u32), WavError> {
    decode_wav(&std::fs::read(path)?)
}

fn u16_at(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes a WAV byte buffer into mono samples and the sample rate.
pub fn decode_wav(bytes: &[u8]) -> Result<(Vec<f32>, u32), WavError> {
    if bytes.len() < 12 {
        return malformed(bytes.len(), "file ends inside the RIFF header");
    }
    if &bytes[0..4] != b"RIFF" {
        return malformed(0, "missing RIFF tag");
    }
    if &bytes[8..12] != b"WAVE" {
        return malformed(8, "missing WAVE tag");
    }
    let mut at = 12;
    let mut format: Option<Format> = None;
    while at < bytes.len() {
        if at + 8 > bytes.len() {
            return malformed(at, "file ends inside a chunk header");
        }
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let body = at + 8;
        if body + size > bytes.len() {
            return malformed(at + 4, format!("chunk size {size} runs past the end of the file"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return malformed(at + 4, "fmt chunk shorter than 16 bytes");
                }
                let mut tag = u16_at(bytes, body);
                if tag == EXTENSIBLE {
                    if size < 40 {
                        return malformed(at + 4, "extensible fmt chunk shorter than 40 bytes");
                    }
                    tag = u16_at(bytes, body + 24);
                }
                format = Some(Format {
                    tag,
                    channels: u16_at(bytes, body + 2),
                    sample_rate: u32_at(bytes, body + 4),
                    bits: u16_at(bytes, body + 14),
                });
            }
            b"data" => {
                let f = format.as_ref().map_or_else(|| malformed(at, "data chunk before fmt chunk"), Ok)?;
                return decode_samples(&bytes[body..body + size], f, body);
            }
            _ => {}
        }
        at = body + size + (size & 1);
    }
    malformed(bytes.len(), "no data chunk")
}

fn decode_samples(data: &[u8], f: &Format, offset: usize) -> Result<(Vec<f32>, u32), WavError> {
    if !(1..=2).contains(&f.channels) {
        return malformed(offset, format!("{} channels; only mono and stereo are supported", f.channels));
    }
    if f.sample_rate == 0 {
        return malformed(offset, "sample rate is zero");
    }
    let width = match (f.tag, f.bits) {
        (PCM, 16) => 2,
        (IEEE_FLOAT, 32) => 4,
        (tag, bits) => return malformed(offset, format!("unsupported encoding: format {tag}, {bits} bits")),
    };
    let frame = width * usize::from(f.channels);
    if !data.len().is_multiple_of(frame) {
        return malformed(offset + data.len() - data.len() % frame, "data ends inside a sample frame");
    }
    let sample = |chunk: &[u8]| -> f32 {
        if width == 2 {
            (f32::from(i16::from_le_bytes([chunk[0], chunk[1]])) / PCM_SCALE).max(-1.0)
        } else {
            f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]])
        }
    };
    let mono = data
        .chunks_exact(frame)
        .map(|fr| {
            if f.channels == 1 {
                sample(fr)
            } else {
                0.5 * (sample(&fr[..width]) + sample(&fr[width..]))
            }
        })
        .collect();
    Ok((mono, f.sample_rate))
}
