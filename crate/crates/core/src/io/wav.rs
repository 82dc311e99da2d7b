//! RIFF/WAVE, 16-bit PCM, mono.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};

pub const SUPPORTED_RATES: [u32; 3] = [8_000, 16_000, 24_000];

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if !SUPPORTED_RATES.contains(&sample_rate) {
            return Err(Error::invalid("AudioClip", format!("unsupported sample rate {sample_rate} Hz")));
        }
        if let Some((i, v)) = samples.iter().enumerate().find(|(_, v)| !(v.abs() <= 1.0)) {
            return Err(Error::invalid("AudioClip", format!("sample {i} = {v} outside [-1, 1]")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WavError {
    #[error("not a RIFF/WAVE file")]
    NotRiffWave,
    #[error("unsupported encoding (format tag {format}, {bits} bits); only 16-bit PCM is accepted")]
    NotPcm16 { format: u16, bits: u16 },
    #[error("{0} channels; only mono is accepted")]
    MultiChannel(u16),
    #[error("truncated {0} chunk")]
    Truncated(&'static str),
    #[error("missing {0} chunk")]
    MissingChunk(&'static str),
    #[error("unsupported sample rate {0} Hz")]
    UnsupportedRate(u32),
}

fn wav_err(path: &Path, e: WavError) -> Error {
    Error::format(path, e.to_string())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses an in-memory WAV file.
pub fn decode_wav(bytes: &[u8]) -> std::result::Result<AudioClip, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotRiffWave);
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body.checked_add(size).ok_or(WavError::Truncated("chunk"))?;
        match id {
            b"fmt " => {
                if size < 16 || end > bytes.len() {
                    return Err(WavError::Truncated("fmt"));
                }
                fmt = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            b"data" => {
                if end > bytes.len() {
                    return Err(WavError::Truncated("data"));
                }
                data = Some(&bytes[body..end]);
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = end + (size & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or(WavError::MissingChunk("fmt"))?;
    if format != 1 || bits != 16 {
        return Err(WavError::NotPcm16 { format, bits });
    }
    if channels != 1 {
        return Err(WavError::MultiChannel(channels));
    }
    if !SUPPORTED_RATES.contains(&rate) {
        return Err(WavError::UnsupportedRate(rate));
    }
    let data = data.ok_or(WavError::MissingChunk("data"))?;
    if data.len() % 2 != 0 {
        return Err(WavError::Truncated("data"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|p| f64::from(i16::from_le_bytes([p[0], p[1]])) / 32768.0)
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: rate,
    })
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|e| wav_err(path, e))
}

/// Encoded file plus the number of samples that had to be clamped.
pub fn encode_wav(samples: &[f64], sample_rate: u32) -> (Vec<u8>, usize) {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    let mut clamped = 0;
    for &s in samples {
        if !(s.abs() <= 1.0) {
            clamped += 1;
        }
        let q = if s.is_nan() { 0.0 } else { (s * 32768.0).round().clamp(-32768.0, 32767.0) };
        out.extend_from_slice(&(q as i16).to_le_bytes());
    }
    (out, clamped)
}

/// Writes `samples` as 16-bit PCM mono and returns how many were clamped.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<usize> {
    let path = path.as_ref();
    let (bytes, clamped) = encode_wav(samples, sample_rate);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(clamped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_make_a_200_byte_data_chunk() {
        let (bytes, clamped) = encode_wav(&[0.0; 100], 8000);
        assert_eq!(clamped, 0);
        assert_eq!(bytes.len(), 244);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(u32_at(&bytes, 40), 200);
        assert!(bytes[44..].iter().all(|b| *b == 0));
    }

    #[test]
    fn full_scale_negative_maps_to_minus_one() {
        let (mut bytes, _) = encode_wav(&[0.0], 24_000);
        bytes[44..46].copy_from_slice(&(-32768i16).to_le_bytes());
        let clip = decode_wav(&bytes).unwrap();
        assert_eq!(clip.samples, vec![-1.0]);
        assert_eq!(clip.sample_rate, 24_000);
    }

    #[test]
    fn out_of_range_samples_are_clamped_and_counted() {
        let (bytes, clamped) = encode_wav(&[1.5, -3.0, 1.0, 0.25], 8000);
        assert_eq!(clamped, 2);
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 32767);
        assert_eq!(i16::from_le_bytes([bytes[46], bytes[47]]), -32768);
        assert_eq!(i16::from_le_bytes([bytes[48], bytes[49]]), 32767);
    }

    #[test]
    fn rejects_unsupported_files() {
        assert_eq!(decode_wav(b"nope").unwrap_err(), WavError::NotRiffWave);

        let (good, _) = encode_wav(&[0.0; 4], 8000);
        let mut stereo = good.clone();
        stereo[22..24].copy_from_slice(&2u16.to_le_bytes());
        assert_eq!(decode_wav(&stereo).unwrap_err(), WavError::MultiChannel(2));

        let mut eight_bit = good.clone();
        eight_bit[34..36].copy_from_slice(&8u16.to_le_bytes());
        assert!(matches!(decode_wav(&eight_bit).unwrap_err(), WavError::NotPcm16 { bits: 8, .. }));

        let mut float = good.clone();
        float[20..22].copy_from_slice(&3u16.to_le_bytes());
        assert!(matches!(decode_wav(&float).unwrap_err(), WavError::NotPcm16 { format: 3, .. }));

        let truncated = &good[..good.len() - 3];
        assert_eq!(decode_wav(truncated).unwrap_err(), WavError::Truncated("data"));

        let mut rate = good;
        rate[24..28].copy_from_slice(&44_100u32.to_le_bytes());
        assert_eq!(decode_wav(&rate).unwrap_err(), WavError::UnsupportedRate(44_100));
    }

    #[test]
    fn skips_unknown_chunks() {
        let (good, _) = encode_wav(&[0.5, -0.5], 16_000);
        let mut with_list = good[..36].to_vec();
        with_list.extend_from_slice(b"LIST");
        with_list.extend_from_slice(&3u32.to_le_bytes());
        with_list.extend_from_slice(&[1, 2, 3, 0]);
        with_list.extend_from_slice(&good[36..]);
        let clip = decode_wav(&with_list).unwrap();
        assert_eq!(clip.samples, vec![0.5, -0.5]);
    }

    proptest! {
        #[test]
        fn round_trip_within_one_lsb(samples in prop::collection::vec(-1.0f64..=1.0, 0..300)) {
            let (bytes, clamped) = encode_wav(&samples, 8000);
            prop_assert_eq!(clamped, 0);
            let clip = decode_wav(&bytes).unwrap();
            prop_assert_eq!(clip.samples.len(), samples.len());
            for (a, b) in clip.samples.iter().zip(&samples) {
                prop_assert!((a - b).abs() <= 1.0 / 32768.0);
            }
        }
    }
}
