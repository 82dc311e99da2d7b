use rand::Rng;

use super::{check_wave, receptive_field, Bound, Conditioning, ParamSet};
use crate::autograd::{Graph, Var};
use crate::dsp::features::FEAT_DIM;
use crate::error::{Error, Result};
use crate::kv::KeyValues;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub layers: usize,
    pub cycles: usize,
    pub residual_ch: usize,
    pub skip_ch: usize,
    pub kernel: usize,
    pub aux_dim: usize,
}

impl GeneratorConfig {
    /// 30 layers in three dilation cycles, 64 channels, kernel 5.
    pub fn full_scale() -> Self {
        Self {
            layers: 30,
            cycles: 3,
            residual_ch: 64,
            skip_ch: 64,
            kernel: 5,
            aux_dim: FEAT_DIM,
        }
    }

    pub fn desk() -> Self {
        Self {
            layers: 10,
            cycles: 2,
            residual_ch: 16,
            skip_ch: 16,
            kernel: 3,
            aux_dim: FEAT_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.cycles == 0 || self.layers % self.cycles != 0 {
            return Err(Error::Config(format!(
                "generator layers ({}) must be a positive multiple of cycles ({})",
                self.layers, self.cycles
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("generator kernel {} must be odd", self.kernel)));
        }
        if self.residual_ch == 0 || self.skip_ch == 0 || self.aux_dim == 0 {
            return Err(Error::Config("generator channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn dilations(&self) -> Vec<usize> {
        let per_cycle = self.layers / self.cycles;
        (0..self.layers).map(|i| 1 << (i % per_cycle)).collect()
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel, &self.dilations())
    }

    pub const KEYS: [&'static str; 6] = [
        "generator.layers",
        "generator.cycles",
        "generator.residual_channels",
        "generator.skip_channels",
        "generator.kernel",
        "generator.aux_dim",
    ];

    pub fn write_kv(&self, kv: &mut KeyValues) {
        let vals = [self.layers, self.cycles, self.residual_ch, self.skip_ch, self.kernel, self.aux_dim];
        for (k, v) in Self::KEYS.iter().zip(vals) {
            kv.set(k, v);
        }
    }

    /// Reads overrides from `kv` on top of `self`.
    pub fn read_kv(mut self, kv: &KeyValues) -> Result<Self> {
        let slots = [
            &mut self.layers,
            &mut self.cycles,
            &mut self.residual_ch,
            &mut self.skip_ch,
            &mut self.kernel,
            &mut self.aux_dim,
        ];
        for (k, slot) in Self::KEYS.iter().zip(slots) {
            if let Some(v) = kv.parsed(k)? {
                *slot = v;
            }
        }
        self.validate()?;
        Ok(self)
    }
}

/// Non-causal WaveNet mapping noise plus local conditioning to a waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub params: ParamSet,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (r, s, a, k) = (cfg.residual_ch, cfg.skip_ch, cfg.aux_dim, cfg.kernel);
        let mut p = ParamSet::new();
        p.init_conv("input.weight", [r, 1, 1], rng);
        p.init_bias("input.bias", r);
        for l in 0..cfg.layers {
            p.init_conv(&format!("layers.{l}.dilated.weight"), [2 * r, r, k], rng);
            p.init_bias(&format!("layers.{l}.dilated.bias"), 2 * r);
            p.init_conv(&format!("layers.{l}.cond.weight"), [2 * r, a, 1], rng);
            p.init_conv(&format!("layers.{l}.skip.weight"), [s, r, 1], rng);
            p.init_bias(&format!("layers.{l}.skip.bias"), s);
            p.init_conv(&format!("layers.{l}.out.weight"), [r, r, 1], rng);
            p.init_bias(&format!("layers.{l}.out.bias"), r);
        }
        p.init_conv("post.0.weight", [s, s, 1], rng);
        p.init_bias("post.0.bias", s);
        p.init_conv("post.1.weight", [1, s, 1], rng);
        p.init_bias("post.1.bias", 1);
        Ok(Self { cfg, params: p })
    }

    /// `z: [batch, 1, time]` → waveform `[batch, 1, time]`.
    ///
    /// Each layer: dilated conv, plus 1×1-projected conditioning, gated
    /// `tanh ⊙ σ`, then 1×1 convs to the residual and skip paths. Skips are
    /// summed and pass through ReLU → 1×1 → ReLU → 1×1.
    pub fn forward(&self, g: &mut Graph, p: &Bound, z: Var, cond: Conditioning) -> Result<Var> {
        let (batch, time) = check_wave(g, "generator", z)?;
        cond.check(g, "generator", batch, self.cfg.aux_dim, time)?;
        let residual_scale = 0.5f64.sqrt();

        let mut x = g.conv1d(z, p.var("input.weight"), Some(p.var("input.bias")), 1)?;
        let mut skips: Option<Var> = None;
        for (l, dilation) in self.cfg.dilations().into_iter().enumerate() {
            let y = g.conv1d(
                x,
                p.var(&format!("layers.{l}.dilated.weight")),
                Some(p.var(&format!("layers.{l}.dilated.bias"))),
                dilation,
            )?;
            let (c, hop) = cond.pointwise(g, p.var(&format!("layers.{l}.cond.weight")))?;
            let h = g.gate(y, Some(c), hop)?;

            let s = g.conv1d(
                h,
                p.var(&format!("layers.{l}.skip.weight")),
                Some(p.var(&format!("layers.{l}.skip.bias"))),
                1,
            )?;
            skips = Some(match skips {
                Some(acc) => g.add(acc, s)?,
                None => s,
            });
            let o = g.conv1d(
                h,
                p.var(&format!("layers.{l}.out.weight")),
                Some(p.var(&format!("layers.{l}.out.bias"))),
                1,
            )?;
            x = g.add_scaled(x, o, residual_scale)?;
        }
        let skips = skips.expect("at least one layer");
        let y = g.scale(skips, (1.0 / self.cfg.layers as f64).sqrt())?;
        let y = g.relu(y)?;
        let y = g.conv1d(y, p.var("post.0.weight"), Some(p.var("post.0.bias")), 1)?;
        let y = g.relu(y)?;
        g.conv1d(y, p.var("post.1.weight"), Some(p.var("post.1.bias")), 1)
    }
}
