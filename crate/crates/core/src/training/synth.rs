use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::data::frames_to_conditioning;
use super::trainer::read_stats;
use crate::autograd::Graph;
use crate::dsp::{hop_size, ConditionFeatures, FeatureStats};
use crate::error::{Error, Result};
use crate::io::checkpoint::Checkpoint;
use crate::models::{Conditioning, Generator, GeneratorConfig};
use crate::tensor::Tensor;

use super::config::TrainConfig;

/// A generator with the feature normalisation it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocoder {
    pub generator: Generator,
    pub stats: FeatureStats,
    pub sample_rate: u32,
    pub frame_shift_ms: f64,
}

impl Vocoder {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = TrainConfig::from_kv(&ck.config)?;
        let mut generator = Generator::new(cfg.generator.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        generator.params.load_from(ck, "g.")?;
        Ok(Self {
            generator,
            stats: read_stats(ck)?,
            sample_rate: cfg.sample_rate,
            frame_shift_ms: cfg.frame_shift_ms,
        })
    }

    /// Randomly initialised generator, as before any training.
    pub fn untrained(cfg: GeneratorConfig, stats: FeatureStats, sample_rate: u32, seed: u64) -> Result<Self> {
        Ok(Self {
            generator: Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))?,
            stats,
            sample_rate,
            frame_shift_ms: 5.0,
        })
    }

    pub fn hop(&self) -> Result<usize> {
        hop_size(self.sample_rate, self.frame_shift_ms)
    }

    /// Waveform of `n_frames · hop` samples for raw (unnormalised) features.
    pub fn synthesize(&self, feat: &ConditionFeatures, seed: u64) -> Result<Vec<f64>> {
        if feat.frame_shift_ms != self.frame_shift_ms {
            return Err(Error::Config(format!(
                "features use {} ms frames, model expects {} ms",
                feat.frame_shift_ms, self.frame_shift_ms
            )));
        }
        if feat.feat_dim() != self.generator.cfg.aux_dim {
            return Err(Error::shape("synthesize", "feat_dim", self.generator.cfg.aux_dim, feat.feat_dim()));
        }
        let hop = self.hop()?;
        let cond = frames_to_conditioning(&self.stats.apply(feat)?)?;
        let time = feat.n_frames() * hop;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..time).map(|_| rng.sample(StandardNormal)).collect();

        let mut g = Graph::new();
        let p = self.generator.params.bind(&mut g, false);
        let z = g.constant(Tensor::new(vec![1, 1, time], noise)?);
        let frames = g.constant(cond);
        let y = self.generator.forward(&mut g, &p, z, Conditioning::Frames { frames, hop })?;
        Ok(g.value(y).data().to_vec())
    }
}
