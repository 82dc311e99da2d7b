//! Frame-rate conditioning features with a voiced/unvoiced decision.
//!
//! Each frame carries 27 values: log energy (dBFS), zero-crossing rate,
//! 24 log band energies on a log-frequency axis, and the binary V/UV flag
//! in the last column. Frame `j` covers samples `[j·hop, (j+1)·hop)`; the
//! analysis window spans two hops centred on that interval.

use std::f64::consts::PI;

use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::io::wav::AudioClip;
use crate::tensor::Tensor;

pub const N_BANDS: usize = 24;
pub const FEAT_DIM: usize = N_BANDS + 3;
pub const VUV_COLUMN: usize = FEAT_DIM - 1;

/// Frames quieter than this are unvoiced.
pub const ENERGY_THRESHOLD_DB: f64 = -60.0;
/// Frames crossing zero more often than this (per sample) are unvoiced.
pub const ZCR_THRESHOLD: f64 = 0.3;

const BAND_FMIN_HZ: f64 = 60.0;
const ENERGY_FLOOR: f64 = 1e-12;
const BAND_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionFeatures {
    /// `[n_frames, feat_dim]`, V/UV flag in the last column.
    pub frames: Tensor,
    pub vuv: Vec<u8>,
    pub frame_shift_ms: f64,
}

impl ConditionFeatures {
    pub fn new(frames: Tensor, vuv: Vec<u8>, frame_shift_ms: f64) -> Result<Self> {
        if frames.rank() != 2 {
            return Err(Error::shape("ConditionFeatures", "rank", 2, frames.rank()));
        }
        if frames.shape()[0] != vuv.len() {
            return Err(Error::shape("ConditionFeatures", "frames", frames.shape()[0], vuv.len()));
        }
        if let Some(bad) = vuv.iter().find(|v| **v > 1) {
            return Err(Error::invalid("ConditionFeatures", format!("V/UV value {bad} is not 0 or 1")));
        }
        Ok(Self {
            frames,
            vuv,
            frame_shift_ms,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.vuv.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        let d = self.feat_dim();
        &self.frames.data()[frame * d..(frame + 1) * d]
    }
}

/// Samples per frame for `sample_rate` and `frame_shift_ms`; must be a whole number.
pub fn hop_size(sample_rate: u32, frame_shift_ms: f64) -> Result<usize> {
    let hop = sample_rate as f64 * frame_shift_ms / 1000.0;
    let rounded = hop.round();
    if rounded < 1.0 || (hop - rounded).abs() > 1e-9 {
        return Err(Error::invalid(
            "extract_features",
            format!("{sample_rate} Hz × {frame_shift_ms} ms is not a whole number of samples ({hop})"),
        ));
    }
    Ok(rounded as usize)
}

struct BandBank {
    fft_size: usize,
    /// `N_BANDS × (fft_size/2 + 1)` triangular weights.
    weights: Vec<f64>,
}

impl BandBank {
    fn new(sample_rate: u32, fft_size: usize) -> Self {
        let bins = fft_size / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let (lo, hi) = (BAND_FMIN_HZ.ln(), nyquist.ln());
        let edges: Vec<f64> = (0..N_BANDS + 2)
            .map(|i| (lo + (hi - lo) * i as f64 / (N_BANDS + 1) as f64).exp())
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut weights = vec![0.0; N_BANDS * bins];
        for b in 0..N_BANDS {
            let (left, centre, right) = (edges[b], edges[b + 1], edges[b + 2]);
            let row = &mut weights[b * bins..(b + 1) * bins];
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                *w = if f > left && f <= centre {
                    (f - left) / (centre - left)
                } else if f > centre && f < right {
                    (right - f) / (right - centre)
                } else {
                    0.0
                };
            }
            // Bands narrower than one bin fall back to the nearest bin.
            if row.iter().all(|w| *w == 0.0) {
                let k = ((centre / bin_hz).round() as usize).min(bins - 1);
                row[k] = 1.0;
            }
        }
        Self { fft_size, weights }
    }
}

/// Stand-in acoustic analysis at `frame_shift_ms` intervals.
pub fn extract_features(clip: &AudioClip, frame_shift_ms: f64) -> Result<ConditionFeatures> {
    let hop = hop_size(clip.sample_rate, frame_shift_ms)?;
    let x = &clip.samples;
    let n_frames = x.len().div_ceil(hop);
    let win = 2 * hop;
    let bank = BandBank::new(clip.sample_rate, win.next_power_of_two().max(256));
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(bank.fft_size);
    let mut buf = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    let bins = bank.fft_size / 2 + 1;
    let hann: Vec<f64> = (0..win)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos())
        .collect();

    let mut data = Vec::with_capacity(n_frames * FEAT_DIM);
    let mut vuv = Vec::with_capacity(n_frames);
    let mut seg = vec![0.0; win];
    for j in 0..n_frames {
        let start = (j * hop) as isize - (hop / 2) as isize;
        for (i, s) in seg.iter_mut().enumerate() {
            let idx = start + i as isize;
            *s = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { 0.0 };
        }
        let mean_sq = seg.iter().map(|v| v * v).sum::<f64>() / win as f64;
        let energy_db = 10.0 * (mean_sq + ENERGY_FLOOR).log10();
        let crossings = seg.windows(2).filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0)).count();
        let zcr = crossings as f64 / (win - 1) as f64;

        buf.fill(0.0);
        for ((b, s), w) in buf.iter_mut().zip(&seg).zip(&hann) {
            *b = s * w;
        }
        fft.process(&mut buf, &mut spec)
            .map_err(|e| Error::invalid("extract_features", e.to_string()))?;
        let voiced = energy_db > ENERGY_THRESHOLD_DB && zcr < ZCR_THRESHOLD;

        data.push(energy_db);
        data.push(zcr);
        for b in 0..N_BANDS {
            let w = &bank.weights[b * bins..(b + 1) * bins];
            let e: f64 = w.iter().zip(&spec).map(|(w, c)| w * c.norm_sqr()).sum();
            data.push((e + BAND_FLOOR).ln());
        }
        data.push(if voiced { 1.0 } else { 0.0 });
        vuv.push(voiced as u8);
    }
    ConditionFeatures::new(Tensor::new(vec![n_frames, FEAT_DIM], data)?, vuv, frame_shift_ms)
}

/// Per-dimension mean/std used to standardise features. The V/UV column is
/// left binary (mean 0, std 1).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a ConditionFeatures>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        for feat in corpus {
            let d = feat.feat_dim();
            if sum.is_empty() {
                sum = vec![0.0; d];
                sum_sq = vec![0.0; d];
            } else if sum.len() != d {
                return Err(Error::shape("FeatureStats::fit", "feat_dim", sum.len(), d));
            }
            for row in feat.frames.data().chunks(d) {
                for (i, v) in row.iter().enumerate() {
                    sum[i] += v;
                    sum_sq[i] += v * v;
                }
            }
            count += feat.n_frames();
        }
        if count == 0 {
            return Err(Error::invalid("FeatureStats::fit", "no frames"));
        }
        let d = sum.len();
        let mut stats = Self::identity(d);
        for i in 0..d.saturating_sub(1) {
            let m = sum[i] / count as f64;
            let var = (sum_sq[i] / count as f64 - m * m).max(0.0);
            stats.mean[i] = m;
            stats.std[i] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Ok(stats)
    }

    pub fn apply(&self, feat: &ConditionFeatures) -> Result<ConditionFeatures> {
        let d = feat.feat_dim();
        if d != self.mean.len() {
            return Err(Error::shape("FeatureStats::apply", "feat_dim", self.mean.len(), d));
        }
        let data = feat
            .frames
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().enumerate().map(|(i, v)| (v - self.mean[i]) / self.std[i]))
            .collect();
        ConditionFeatures::new(
            Tensor::new(feat.frames.shape().to_vec(), data)?,
            feat.vuv.clone(),
            feat.frame_shift_ms,
        )
    }
}
