use std::path::Path;

use crate::dsp::hop_size;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::losses::{GanLossConfig, StftLossConfig};
use crate::models::{DiscriminatorConfig, GeneratorConfig};

use super::radam::Radam;

/// Everything needed to build the networks and run training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub d_freeze_steps: usize,
    pub batch_size: usize,
    pub clip_samples: usize,
    pub lr_init: f64,
    pub lr_half_every: usize,
    pub betas: (f64, f64),
    pub eps: f64,
    pub lambda_adv: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub sample_rate: u32,
    pub frame_shift_ms: f64,
    pub generator: GeneratorConfig,
    pub d_voiced: DiscriminatorConfig,
    pub d_unvoiced: DiscriminatorConfig,
    pub stft: StftLossConfig,
}

const SCALAR_KEYS: [&str; 14] = [
    "total_steps",
    "d_freeze_steps",
    "batch_size",
    "clip_samples",
    "lr_init",
    "lr_half_every",
    "beta1",
    "beta2",
    "eps",
    "lambda_adv",
    "seed",
    "checkpoint_every",
    "sample_rate",
    "frame_shift_ms",
];

impl TrainConfig {
    /// Full-scale settings: 24 kHz, one-second clips, 400K steps.
    pub fn full_scale() -> Self {
        Self {
            total_steps: 400_000,
            d_freeze_steps: 100_000,
            batch_size: 8,
            clip_samples: 24_000,
            lr_init: 1e-4,
            lr_half_every: 200_000,
            betas: (0.9, 0.999),
            eps: 1e-6,
            lambda_adv: 4.0,
            seed: 0,
            checkpoint_every: 10_000,
            sample_rate: 24_000,
            frame_shift_ms: 5.0,
            generator: GeneratorConfig::full_scale(),
            d_voiced: DiscriminatorConfig::voiced(64),
            d_unvoiced: DiscriminatorConfig::unvoiced(64),
            stft: StftLossConfig::for_rate(24_000),
        }
    }

    /// Single-core settings for the 8 kHz synthetic corpus.
    pub fn desk() -> Self {
        Self {
            total_steps: 2_000,
            d_freeze_steps: 300,
            batch_size: 4,
            clip_samples: 4_000,
            lr_init: 1e-3,
            lr_half_every: 1_000,
            seed: 42,
            checkpoint_every: 500,
            sample_rate: 8_000,
            generator: GeneratorConfig::desk(),
            d_voiced: DiscriminatorConfig::voiced(16),
            d_unvoiced: DiscriminatorConfig::unvoiced(16),
            stft: StftLossConfig::for_rate(8_000),
            ..Self::full_scale()
        }
    }

    pub fn hop(&self) -> Result<usize> {
        hop_size(self.sample_rate, self.frame_shift_ms)
    }

    pub fn optimizer(&self) -> Radam {
        Radam {
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.eps,
        }
    }

    pub fn gan(&self) -> GanLossConfig {
        GanLossConfig {
            lambda_adv: self.lambda_adv,
        }
    }

    /// `lr_init · 0.5^⌊step / lr_half_every⌋`.
    pub fn lr_at(&self, step: usize) -> f64 {
        lr_at(step, self.lr_init, self.lr_half_every)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.total_steps == 0 || self.d_freeze_steps >= self.total_steps {
            return fail(format!(
                "d_freeze_steps ({}) must be below total_steps ({})",
                self.d_freeze_steps, self.total_steps
            ));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 || self.lr_half_every == 0 {
            return fail("batch_size, checkpoint_every and lr_half_every must be positive".into());
        }
        if !(self.lr_init > 0.0 && self.lr_init.is_finite()) {
            return fail(format!("lr_init {} must be positive", self.lr_init));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) || !(self.eps > 0.0) {
            return fail("betas must lie in [0, 1) and eps must be positive".into());
        }
        self.gan().validate()?;
        self.stft.validate()?;
        self.generator.validate()?;
        self.d_voiced.validate()?;
        self.d_unvoiced.validate()?;
        let hop = self.hop()?;
        if self.clip_samples < self.stft.max_win() {
            return fail(format!(
                "clip_samples ({}) is shorter than the largest STFT window ({})",
                self.clip_samples,
                self.stft.max_win()
            ));
        }
        if self.clip_samples % hop != 0 {
            return fail(format!("clip_samples ({}) must be a multiple of the hop ({hop})", self.clip_samples));
        }
        let aux = self.generator.aux_dim;
        if self.d_voiced.aux_dim != aux || self.d_unvoiced.aux_dim != aux {
            return fail("generator and discriminators must share aux_dim".into());
        }
        Ok(())
    }

    pub fn known_keys() -> Vec<String> {
        let mut keys: Vec<String> = SCALAR_KEYS.iter().map(|k| k.to_string()).collect();
        keys.extend(GeneratorConfig::KEYS.iter().map(|k| k.to_string()));
        keys.extend(DiscriminatorConfig::keys("d_voiced"));
        keys.extend(DiscriminatorConfig::keys("d_unvoiced"));
        keys.extend(StftLossConfig::KEYS.iter().map(|k| k.to_string()));
        keys
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("total_steps", self.total_steps);
        kv.set("d_freeze_steps", self.d_freeze_steps);
        kv.set("batch_size", self.batch_size);
        kv.set("clip_samples", self.clip_samples);
        kv.set("lr_init", self.lr_init);
        kv.set("lr_half_every", self.lr_half_every);
        kv.set("beta1", self.betas.0);
        kv.set("beta2", self.betas.1);
        kv.set("eps", self.eps);
        kv.set("lambda_adv", self.lambda_adv);
        kv.set("seed", self.seed);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("sample_rate", self.sample_rate);
        kv.set("frame_shift_ms", self.frame_shift_ms);
        self.generator.write_kv(&mut kv);
        self.d_voiced.write_kv(&mut kv, "d_voiced");
        self.d_unvoiced.write_kv(&mut kv, "d_unvoiced");
        self.stft.write_kv(&mut kv);
        kv
    }

    /// Applies `kv` on top of `self`. Unknown keys are errors. The STFT
    /// resolutions follow `sample_rate` unless given explicitly.
    pub fn apply_kv(mut self, kv: &KeyValues) -> Result<Self> {
        let known = Self::known_keys();
        let known: Vec<&str> = known.iter().map(String::as_str).collect();
        kv.reject_unknown(&known)?;
        macro_rules! read {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.parsed($key)? {
                    $field = v;
                }
            };
        }
        let rate_before = self.sample_rate;
        read!("total_steps", self.total_steps);
        read!("d_freeze_steps", self.d_freeze_steps);
        read!("batch_size", self.batch_size);
        read!("clip_samples", self.clip_samples);
        read!("lr_init", self.lr_init);
        read!("lr_half_every", self.lr_half_every);
        read!("beta1", self.betas.0);
        read!("beta2", self.betas.1);
        read!("eps", self.eps);
        read!("lambda_adv", self.lambda_adv);
        read!("seed", self.seed);
        read!("checkpoint_every", self.checkpoint_every);
        read!("sample_rate", self.sample_rate);
        read!("frame_shift_ms", self.frame_shift_ms);
        if self.sample_rate != rate_before {
            self.stft = StftLossConfig::for_rate(self.sample_rate);
        }
        self.generator = self.generator.read_kv(kv)?;
        self.d_voiced = self.d_voiced.read_kv(kv, "d_voiced")?;
        self.d_unvoiced = self.d_unvoiced.read_kv(kv, "d_unvoiced")?;
        self.stft = self.stft.read_kv(kv)?;
        self.validate()?;
        Ok(self)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        Self::full_scale().apply_kv(kv)
    }

    pub fn load(base: Self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        base.apply_kv(&KeyValues::parse(&text)?)
    }
}

/// `lr_init · 0.5^⌊step / half_every⌋`.
pub fn lr_at(step: usize, lr_init: f64, half_every: usize) -> f64 {
    lr_init * 0.5f64.powi((step / half_every.max(1)) as i32)
}
