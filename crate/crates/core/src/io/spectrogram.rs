//! Spectrogram dumps as plain CSV: one row per frame, one column per bin.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dsp::{stft_magnitude, StftConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Renders a `[frames, bins]` matrix. Values use the shortest round-trip
/// representation so a reader recovers them exactly.
pub fn spectrogram_csv(mag: &Tensor) -> Result<String> {
    if mag.rank() != 2 {
        return Err(Error::shape("spectrogram_csv", "rank", 2, mag.rank()));
    }
    let bins = mag.shape()[1];
    let mut out = String::new();
    for row in mag.data().chunks(bins.max(1)) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Magnitude STFT of `samples` written to `path`. Returns `(frames, bins)`.
pub fn write_spectrogram(path: impl AsRef<Path>, samples: &[f64], cfg: &StftConfig) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let mag = stft_magnitude(&Tensor::from_vec(samples.to_vec()), cfg)?;
    fs::write(path, spectrogram_csv(&mag)?).map_err(|e| Error::io(path, e))?;
    Ok((mag.shape()[0], mag.shape()[1]))
}

pub fn read_spectrogram(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut bins = None;
    for (n, line) in text.lines().filter(|l| !l.is_empty()).enumerate() {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("row {n}: {e}")))?;
        match bins {
            None => bins = Some(row.len()),
            Some(b) if b != row.len() => {
                return Err(Error::format(path, format!("row {n} has {} values, expected {b}", row.len())))
            }
            _ => {}
        }
        data.extend(row);
    }
    let bins = bins.ok_or_else(|| Error::format(path, "empty spectrogram"))?;
    Tensor::new(vec![data.len() / bins, bins], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let x: Vec<f64> = (0..400).map(|i| (i as f64 * 0.3).sin() / 3.0).collect();
        let cfg = StftConfig::new(64, 16, 48).unwrap();
        let (frames, bins) = write_spectrogram(&path, &x, &cfg).unwrap();
        assert_eq!(bins, 33);
        let back = read_spectrogram(&path).unwrap();
        assert_eq!(back.shape(), &[frames, bins]);
        assert_eq!(back, stft_magnitude(&Tensor::from_vec(x), &cfg).unwrap());
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "1,2\n3\n").unwrap();
        assert!(read_spectrogram(&path).is_err());
    }
}
