use rand::Rng;

use super::{check_wave, receptive_field, Bound, Conditioning, ParamSet};
use crate::autograd::{Graph, Var};
use crate::dsp::features::FEAT_DIM;
use crate::error::{Error, Result};
use crate::kv::{join, KeyValues};

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub conv_layers: usize,
    pub channels: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub leaky_alpha: f64,
    pub conditional: bool,
    pub aux_dim: usize,
}

impl DiscriminatorConfig {
    /// Long receptive field for harmonic regions (127 samples at kernel 3).
    pub fn voiced(channels: usize) -> Self {
        Self {
            conv_layers: 6,
            channels,
            kernel: 3,
            dilations: vec![1, 2, 4, 8, 16, 32],
            leaky_alpha: 0.2,
            conditional: true,
            aux_dim: FEAT_DIM,
        }
    }

    /// Undilated, 13-sample receptive field for noise regions.
    pub fn unvoiced(channels: usize) -> Self {
        Self {
            dilations: vec![1; 6],
            ..Self::voiced(channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_layers == 0 || self.dilations.len() != self.conv_layers {
            return Err(Error::Config(format!(
                "discriminator has {} conv layers but {} dilations",
                self.conv_layers,
                self.dilations.len()
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("discriminator kernel {} must be odd", self.kernel)));
        }
        if self.dilations.contains(&0) || self.channels == 0 || self.aux_dim == 0 {
            return Err(Error::Config("discriminator sizes must be positive".into()));
        }
        Ok(())
    }

    /// Span of the dilated CNN block, which is also the kernel length of
    /// the conditioning convolution.
    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel, &self.dilations)
    }

    pub fn write_kv(&self, kv: &mut KeyValues, prefix: &str) {
        kv.set(&format!("{prefix}.conv_layers"), self.conv_layers);
        kv.set(&format!("{prefix}.channels"), self.channels);
        kv.set(&format!("{prefix}.kernel"), self.kernel);
        kv.set(&format!("{prefix}.dilations"), join(&self.dilations));
        kv.set(&format!("{prefix}.leaky_alpha"), self.leaky_alpha);
        kv.set(&format!("{prefix}.conditional"), self.conditional);
        kv.set(&format!("{prefix}.aux_dim"), self.aux_dim);
    }

    pub fn keys(prefix: &str) -> Vec<String> {
        ["conv_layers", "channels", "kernel", "dilations", "leaky_alpha", "conditional", "aux_dim"]
            .iter()
            .map(|k| format!("{prefix}.{k}"))
            .collect()
    }

    pub fn read_kv(mut self, kv: &KeyValues, prefix: &str) -> Result<Self> {
        let key = |k: &str| format!("{prefix}.{k}");
        if let Some(v) = kv.parsed(&key("channels"))? {
            self.channels = v;
        }
        if let Some(v) = kv.parsed(&key("kernel"))? {
            self.kernel = v;
        }
        if let Some(v) = kv.list(&key("dilations"))? {
            self.dilations = v;
            self.conv_layers = self.dilations.len();
        }
        if let Some(v) = kv.parsed(&key("conv_layers"))? {
            self.conv_layers = v;
        }
        if let Some(v) = kv.parsed(&key("leaky_alpha"))? {
            self.leaky_alpha = v;
        }
        if let Some(v) = kv.parsed(&key("conditional"))? {
            self.conditional = v;
        }
        if let Some(v) = kv.parsed(&key("aux_dim"))? {
            self.aux_dim = v;
        }
        self.validate()?;
        Ok(self)
    }
}

/// Dilated CNN discriminator with optional projection conditioning.
///
/// `ψ` is the feature map after the last leaky ReLU. The score at each
/// sample is a 1×1 convolution of `ψ` plus, when conditional, the inner
/// product over channels of `ψ` with an embedding of the conditioning
/// features. The embedding convolution spans the block's receptive field.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (c, k) = (cfg.channels, cfg.kernel);
        let mut p = ParamSet::new();
        for i in 0..cfg.conv_layers {
            let c_in = if i == 0 { 1 } else { c };
            p.init_conv(&format!("conv.{i}.weight"), [c, c_in, k], rng);
            p.init_bias(&format!("conv.{i}.bias"), c);
        }
        p.init_conv("out.weight", [1, c, 1], rng);
        p.init_bias("out.bias", 1);
        if cfg.conditional {
            p.init_conv("embed.weight", [c, cfg.aux_dim, cfg.receptive_field()], rng);
            p.init_bias("embed.bias", c);
        }
        Ok(Self { cfg, params: p })
    }

    /// Condition embedding `[batch, channels, time]`. Independent of the
    /// waveform, so one embedding serves both real and generated inputs.
    pub fn embed(&self, g: &mut Graph, p: &Bound, cond: Conditioning) -> Result<Var> {
        if !self.cfg.conditional {
            return Err(Error::invalid("discriminator", "unconditional discriminator has no embedding"));
        }
        cond.conv(g, p.var("embed.weight"), Some(p.var("embed.bias")))
    }

    /// Per-sample scores `[batch, time]` for `wave: [batch, 1, time]`.
    pub fn score(&self, g: &mut Graph, p: &Bound, wave: Var, embedding: Option<Var>) -> Result<Var> {
        let (batch, time) = check_wave(g, "discriminator", wave)?;
        if self.cfg.conditional && embedding.is_none() {
            return Err(Error::invalid("discriminator", "conditional discriminator requires conditioning features"));
        }
        let mut x = wave;
        for (i, &d) in self.cfg.dilations.iter().enumerate() {
            let y = g.conv1d(x, p.var(&format!("conv.{i}.weight")), Some(p.var(&format!("conv.{i}.bias"))), d)?;
            x = g.leaky_relu(y, self.cfg.leaky_alpha)?;
        }
        let psi = x;
        let mut score = g.conv1d(psi, p.var("out.weight"), Some(p.var("out.bias")), 1)?;
        if let (true, Some(c)) = (self.cfg.conditional, embedding) {
            if g.shape(c) != g.shape(psi) {
                return Err(Error::shape(
                    "discriminator",
                    "embedding",
                    g.value(psi).numel(),
                    g.value(c).numel(),
                ));
            }
            let prod = g.mul(psi, c)?;
            let proj = g.sum_channels(prod)?;
            score = g.add(score, proj)?;
        }
        g.reshape(score, &[batch, time])
    }

    /// `embed` followed by `score`; `cond` is ignored when unconditional.
    pub fn forward(&self, g: &mut Graph, p: &Bound, wave: Var, cond: Option<Conditioning>) -> Result<Var> {
        let embedding = if self.cfg.conditional {
            let cond = cond.ok_or_else(|| {
                Error::invalid("discriminator", "conditional discriminator requires conditioning features")
            })?;
            let (batch, time) = check_wave(g, "discriminator", wave)?;
            cond.check(g, "discriminator", batch, self.cfg.aux_dim, time)?;
            Some(self.embed(g, p, cond)?)
        } else {
            None
        };
        self.score(g, p, wave, embedding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(conditional: bool) -> DiscriminatorConfig {
        DiscriminatorConfig {
            conv_layers: 3,
            channels: 4,
            kernel: 3,
            dilations: vec![1, 2, 4],
            leaky_alpha: 0.2,
            conditional,
            aux_dim: 2,
        }
    }

    #[test]
    fn table_configs() {
        assert_eq!(DiscriminatorConfig::voiced(64).receptive_field(), 127);
        assert_eq!(DiscriminatorConfig::unvoiced(64).receptive_field(), 13);
        let mut one = DiscriminatorConfig::voiced(8);
        one.kernel = 1;
        assert_eq!(one.receptive_field(), 1);
    }

    #[test]
    fn missing_conditioning_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Discriminator::new(small(true), &mut rng).unwrap();
        let mut g = Graph::new();
        let p = d.params.bind(&mut g, false);
        let w = g.constant(Tensor::zeros(&[1, 1, 16]));
        assert!(d.forward(&mut g, &p, w, None).is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut kv = KeyValues::new();
        let cfg = DiscriminatorConfig::unvoiced(16);
        cfg.write_kv(&mut kv, "dv");
        assert_eq!(DiscriminatorConfig::voiced(64).read_kv(&kv, "dv").unwrap(), cfg);
    }

    #[test]
    fn unconditional_output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Discriminator::new(small(false), &mut rng).unwrap();
        assert!(d.params.get("embed.weight").is_none());
        let mut g = Graph::new();
        let p = d.params.bind(&mut g, false);
        let w = g.constant(Tensor::ones(&[2, 1, 20]));
        let s = d.forward(&mut g, &p, w, None).unwrap();
        assert_eq!(g.shape(s), &[2, 20]);
    }
}
