use rand::Rng;
use rand_distr::StandardNormal;

use crate::dsp::{extract_features, hop_size, upsample_vuv, ConditionFeatures, FeatureStats};
use crate::error::{Error, Result};
use crate::io::{make_synthetic_corpus, read_features, read_wav, AudioClip, ManifestEntry, SyntheticSpec};
use crate::models::BatchMasks;
use crate::tensor::Tensor;

/// One clip with its standardised features, padded to a whole number of frames.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub samples: Vec<f64>,
    pub features: ConditionFeatures,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub items: Vec<CorpusItem>,
    pub sample_rate: u32,
    pub hop: usize,
    pub stats: FeatureStats,
}

impl Corpus {
    /// Pairs clips with raw features. `stats` defaults to a fit over the
    /// corpus itself.
    pub fn new(pairs: Vec<(AudioClip, ConditionFeatures)>, stats: Option<FeatureStats>) -> Result<Self> {
        let (first, _) = pairs.first().ok_or_else(|| Error::invalid("corpus", "no items"))?;
        let sample_rate = first.sample_rate;
        let frame_shift = pairs[0].1.frame_shift_ms;
        let hop = hop_size(sample_rate, frame_shift)?;
        let dim = pairs[0].1.feat_dim();
        for (i, (clip, feat)) in pairs.iter().enumerate() {
            if clip.sample_rate != sample_rate || feat.frame_shift_ms != frame_shift {
                return Err(Error::invalid("corpus", format!("item {i}: sample rate or frame shift differs from item 0")));
            }
            if feat.feat_dim() != dim {
                return Err(Error::shape("corpus", "feat_dim", dim, feat.feat_dim()));
            }
            if feat.n_frames() != clip.len().div_ceil(hop) {
                return Err(Error::shape("corpus", "n_frames", clip.len().div_ceil(hop), feat.n_frames()));
            }
        }
        let stats = match stats {
            Some(s) => s,
            None => FeatureStats::fit(pairs.iter().map(|(_, f)| f))?,
        };
        let items = pairs
            .into_iter()
            .map(|(clip, feat)| {
                let mut samples = clip.samples;
                samples.resize(feat.n_frames() * hop, 0.0);
                Ok(CorpusItem {
                    samples,
                    features: stats.apply(&feat)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            items,
            sample_rate,
            hop,
            stats,
        })
    }

    pub fn from_manifest(entries: &[ManifestEntry], stats: Option<FeatureStats>) -> Result<Self> {
        let pairs = entries
            .iter()
            .map(|e| Ok((read_wav(&e.wav)?, read_features(&e.features)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs, stats)
    }

    /// Renders a synthetic corpus and analyses it with the feature extractor.
    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        let pairs = make_synthetic_corpus(spec)?
            .into_iter()
            .map(|c| {
                let f = extract_features(&c.clip, spec.frame_shift_ms)?;
                Ok((c.clip, f))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs, None)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn feat_dim(&self) -> usize {
        self.items[0].features.feat_dim()
    }

    /// Draws `batch_size` frame-aligned crops of `clip_samples` samples and
    /// matching Gaussian noise. Items shorter than a crop are zero-padded;
    /// the padding is marked unvoiced.
    pub fn sample_batch(&self, rng: &mut impl Rng, batch_size: usize, clip_samples: usize) -> Result<Batch> {
        if clip_samples == 0 || clip_samples % self.hop != 0 {
            return Err(Error::invalid(
                "sample_batch",
                format!("clip_samples {clip_samples} is not a positive multiple of hop {}", self.hop),
            ));
        }
        let crop_frames = clip_samples / self.hop;
        let dim = self.feat_dim();
        let mut wave = Vec::with_capacity(batch_size * clip_samples);
        let mut frames = vec![0.0; batch_size * dim * crop_frames];
        let mut masks = Vec::with_capacity(batch_size);
        for b in 0..batch_size {
            let item = &self.items[rng.gen_range(0..self.items.len())];
            let n = item.features.n_frames();
            let start = if n > crop_frames { rng.gen_range(0..=n - crop_frames) } else { 0 };
            let take = crop_frames.min(n);

            let s0 = start * self.hop;
            wave.extend_from_slice(&item.samples[s0..s0 + take * self.hop]);
            wave.resize((b + 1) * clip_samples, 0.0);

            let mut vuv = item.features.vuv[start..start + take].to_vec();
            vuv.resize(crop_frames, 0);
            masks.push(upsample_vuv(&vuv, self.hop)?);

            // Transpose to [aux_dim, frames].
            let base = b * dim * crop_frames;
            for j in 0..take {
                for (c, v) in item.features.row(start + j).iter().enumerate() {
                    frames[base + c * crop_frames + j] = *v;
                }
            }
        }
        let noise = (0..batch_size * clip_samples).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Batch {
            wave: Tensor::new(vec![batch_size, 1, clip_samples], wave)?,
            frames: Tensor::new(vec![batch_size, dim, crop_frames], frames)?,
            masks: BatchMasks::new(&masks)?,
            noise: Tensor::new(vec![batch_size, 1, clip_samples], noise)?,
            hop: self.hop,
        })
    }
}

/// A training batch. `frames` is frame-rate conditioning
/// `[batch, aux_dim, n_frames]`; the rest are sample-rate `[batch, 1, time]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub wave: Tensor,
    pub frames: Tensor,
    pub masks: BatchMasks,
    pub noise: Tensor,
    pub hop: usize,
}

/// Frame-major features `[n_frames, dim]` to a single-item conditioning
/// tensor `[1, dim, n_frames]`.
pub fn frames_to_conditioning(feat: &ConditionFeatures) -> Result<Tensor> {
    let (n, d) = (feat.n_frames(), feat.feat_dim());
    let mut out = vec![0.0; n * d];
    for j in 0..n {
        for (c, v) in feat.row(j).iter().enumerate() {
            out[c * n + j] = *v;
        }
    }
    Tensor::new(vec![1, d, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::features::VUV_COLUMN;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_clips: 3,
            ..SyntheticSpec::desk(4)
        }
    }

    #[test]
    fn crops_are_frame_aligned_and_consistent() {
        let corpus = Corpus::synthetic(&small_spec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = corpus.sample_batch(&mut rng, 2, 800).unwrap();
        assert_eq!(b.wave.shape(), &[2, 1, 800]);
        assert_eq!(b.frames.shape(), &[2, 27, 20]);
        assert_eq!(b.masks.time(), 800);
        // The V/UV column of the conditioning agrees with the mask.
        for item in 0..2 {
            for j in 0..20 {
                let flag = b.frames.data()[item * 27 * 20 + VUV_COLUMN * 20 + j];
                let mask = b.masks.voiced.data()[item * 800 + j * 40];
                assert_eq!(flag, mask);
            }
        }
    }

    #[test]
    fn short_items_are_padded_unvoiced() {
        let spec = SyntheticSpec {
            clip_seconds: 0.1,
            ..small_spec()
        };
        let corpus = Corpus::synthetic(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = corpus.sample_batch(&mut rng, 1, 1600).unwrap();
        assert!(b.wave.data()[800..].iter().all(|v| *v == 0.0));
        assert!(b.masks.voiced.data()[800..].iter().all(|v| *v == 0.0));
        assert!(b.masks.unvoiced.data()[800..].iter().all(|v| *v == 1.0));
    }

    #[test]
    fn misaligned_crop_rejected() {
        let corpus = Corpus::synthetic(&small_spec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(corpus.sample_batch(&mut rng, 1, 810).is_err());
    }

    #[test]
    fn conditioning_transpose() {
        let f = ConditionFeatures::new(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap(), vec![0, 1], 5.0).unwrap();
        assert_eq!(frames_to_conditioning(&f).unwrap().data(), &[1., 4., 2., 5., 3., 6.]);
    }
}
