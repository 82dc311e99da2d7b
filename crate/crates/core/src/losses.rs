//! Multi-resolution STFT loss and least-squares adversarial objectives.

use crate::autograd::{Graph, Var};
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::kv::{join, KeyValues};
use crate::tensor::Tensor;

/// Floor applied to magnitudes before taking logs.
pub const MAG_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct StftLossConfig {
    pub resolutions: Vec<StftConfig>,
}

impl StftLossConfig {
    pub fn new(resolutions: Vec<StftConfig>) -> Result<Self> {
        let cfg = Self { resolutions };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The three standard resolutions scaled to `sample_rate`.
    pub fn for_rate(sample_rate: u32) -> Self {
        Self {
            resolutions: StftConfig::multi_resolution(sample_rate),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::Config("at least one STFT resolution is required".into()));
        }
        for (i, r) in self.resolutions.iter().enumerate() {
            r.validate()?;
            if self.resolutions[..i].contains(r) {
                return Err(Error::Config(format!(
                    "duplicate STFT resolution ({}, {}, {})",
                    r.fft_size, r.hop_size, r.win_size
                )));
            }
        }
        Ok(())
    }

    pub fn max_win(&self) -> usize {
        self.resolutions.iter().map(|r| r.win_size).max().unwrap_or(0)
    }

    pub const KEYS: [&'static str; 3] = ["stft.fft_sizes", "stft.hop_sizes", "stft.win_sizes"];

    pub fn write_kv(&self, kv: &mut KeyValues) {
        let col = |f: fn(&StftConfig) -> usize| join(&self.resolutions.iter().map(f).collect::<Vec<_>>());
        kv.set(Self::KEYS[0], col(|r| r.fft_size));
        kv.set(Self::KEYS[1], col(|r| r.hop_size));
        kv.set(Self::KEYS[2], col(|r| r.win_size));
    }

    /// Overrides from `kv`; all three lists must be given together.
    pub fn read_kv(self, kv: &KeyValues) -> Result<Self> {
        let lists: Vec<Option<Vec<usize>>> = Self::KEYS.iter().map(|k| kv.list(k)).collect::<Result<_>>()?;
        match (&lists[0], &lists[1], &lists[2]) {
            (None, None, None) => Ok(self),
            (Some(f), Some(h), Some(w)) if f.len() == h.len() && h.len() == w.len() => {
                let res = f
                    .iter()
                    .zip(h)
                    .zip(w)
                    .map(|((&f, &h), &w)| StftConfig::new(f, h, w))
                    .collect::<Result<Vec<_>>>()?;
                Self::new(res)
            }
            _ => Err(Error::Config(format!(
                "{} must all be given with equal lengths",
                Self::KEYS.join(", ")
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLossConfig {
    pub lambda_adv: f64,
}

impl Default for GanLossConfig {
    fn default() -> Self {
        Self { lambda_adv: 4.0 }
    }
}

impl GanLossConfig {
    /// Zero is accepted so the adversarial term can be switched off.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_adv >= 0.0 && self.lambda_adv.is_finite()) {
            return Err(Error::Config(format!("lambda_adv {} must be finite and non-negative", self.lambda_adv)));
        }
        Ok(())
    }
}

fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa.len() != sb.len() {
        return Err(Error::shape(op, "rank", sa.len(), sb.len()));
    }
    if let Some((x, y)) = sa.iter().zip(sb).find(|(x, y)| x != y) {
        return Err(Error::shape(op, "dimension", *x, *y));
    }
    Ok(())
}

/// `‖X − X̂‖_F / ‖X‖_F`.
pub fn spectral_convergence(g: &mut Graph, mag_x: Var, mag_xhat: Var) -> Result<Var> {
    same_shape(g, "spectral_convergence", mag_x, mag_xhat)?;
    if g.value(mag_x).data().iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("spectral_convergence", "reference magnitude is all zero"));
    }
    let diff = g.sub(mag_x, mag_xhat)?;
    let num = g.frobenius_norm(diff)?;
    let den = g.frobenius_norm(mag_x)?;
    g.div(num, den)
}

/// Mean absolute difference of floored log magnitudes.
pub fn log_stft_magnitude_loss(g: &mut Graph, mag_x: Var, mag_xhat: Var) -> Result<Var> {
    same_shape(g, "log_stft_magnitude_loss", mag_x, mag_xhat)?;
    let lx = g.clamp_min(mag_x, MAG_FLOOR)?;
    let lx = g.log(lx)?;
    let ly = g.clamp_min(mag_xhat, MAG_FLOOR)?;
    let ly = g.log(ly)?;
    let d = g.sub(lx, ly)?;
    let n = g.value(d).numel() as f64;
    let l1 = g.l1_norm(d)?;
    g.scale(l1, 1.0 / n)
}

/// Per-resolution parts of the STFT loss, for reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct StftLossParts {
    pub spectral_convergence: Vec<f64>,
    pub log_magnitude: Vec<f64>,
}

/// Mean over resolutions of spectral convergence plus log-magnitude loss.
///
/// `x` and `xhat` are waveforms shaped `[time]`, `[batch, time]` or
/// `[batch, 1, time]`. Norms and means run over the whole batch.
pub fn multi_res_stft_loss(g: &mut Graph, x: Var, xhat: Var, cfg: &StftLossConfig) -> Result<Var> {
    multi_res_stft_loss_parts(g, x, xhat, cfg).map(|(v, _)| v)
}

pub fn multi_res_stft_loss_parts(
    g: &mut Graph,
    x: Var,
    xhat: Var,
    cfg: &StftLossConfig,
) -> Result<(Var, StftLossParts)> {
    cfg.validate()?;
    same_shape(g, "multi_res_stft_loss", x, xhat)?;
    let rows = |g: &mut Graph, v: Var| -> Result<Var> {
        let s = g.shape(v).to_vec();
        match s.as_slice() {
            [_] | [_, _] => Ok(v),
            [b, 1, t] => g.reshape(v, &[*b, *t]),
            _ => Err(Error::shape("multi_res_stft_loss", "waveform rank", 2, s.len())),
        }
    };
    let x = rows(g, x)?;
    let xhat = rows(g, xhat)?;
    let mut parts = StftLossParts {
        spectral_convergence: Vec::new(),
        log_magnitude: Vec::new(),
    };
    let mut total: Option<Var> = None;
    for res in &cfg.resolutions {
        let mx = g.stft_magnitude(x, res)?;
        let my = g.stft_magnitude(xhat, res)?;
        let sc = spectral_convergence(g, mx, my)?;
        let lm = log_stft_magnitude_loss(g, mx, my)?;
        parts.spectral_convergence.push(g.value(sc).data()[0]);
        parts.log_magnitude.push(g.value(lm).data()[0]);
        let term = g.add(sc, lm)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    let total = total.expect("validated non-empty");
    let loss = g.scale(total, 1.0 / cfg.resolutions.len() as f64)?;
    Ok((loss, parts))
}

/// Multi-resolution loss between two plain waveforms, without gradients.
/// The longer signal is truncated to the shorter one.
pub fn stft_loss_between(x: &[f64], xhat: &[f64], cfg: &StftLossConfig) -> Result<f64> {
    let n = x.len().min(xhat.len());
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_vec(x[..n].to_vec()));
    let b = g.constant(Tensor::from_vec(xhat[..n].to_vec()));
    let loss = multi_res_stft_loss(&mut g, a, b, cfg)?;
    Ok(g.value(loss).data()[0])
}

/// `mean (1 − real)² + mean fake²` over every element.
pub fn discriminator_loss(g: &mut Graph, real: Var, fake: Var) -> Result<Var> {
    if g.value(real).numel() == 0 || g.value(fake).numel() == 0 {
        return Err(Error::invalid("discriminator_loss", "empty score vector"));
    }
    let r = g.add_scalar(real, -1.0)?;
    let r = g.square(r)?;
    let r = g.mean(r)?;
    let f = g.square(fake)?;
    let f = g.mean(f)?;
    g.add(r, f)
}

/// `mean (1 − fake)²`.
pub fn adversarial_loss(g: &mut Graph, fake: Var) -> Result<Var> {
    if g.value(fake).numel() == 0 {
        return Err(Error::invalid("adversarial_loss", "empty score vector"));
    }
    let f = g.add_scalar(fake, -1.0)?;
    let f = g.square(f)?;
    g.mean(f)
}

/// Scores already multiplied by `mask`, with the number of active samples.
#[derive(Clone, Copy, Debug)]
pub struct MaskedScores {
    pub scores: Var,
    pub mask: Var,
    pub active: usize,
}

/// `Σ mask·(target − s)² / active`, or a constant 0 when no sample is active.
fn masked_square_mean(g: &mut Graph, s: &MaskedScores, target: f64) -> Result<Var> {
    if s.active == 0 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let d = g.add_scalar(s.scores, -target)?;
    let d = g.square(d)?;
    let d = g.mul(d, s.mask)?;
    let d = g.sum(d)?;
    g.scale(d, 1.0 / s.active as f64)
}

/// Least-squares discriminator objective restricted to active samples.
pub fn masked_discriminator_loss(g: &mut Graph, real: &MaskedScores, fake: &MaskedScores) -> Result<Var> {
    let r = masked_square_mean(g, real, 1.0)?;
    let f = masked_square_mean(g, fake, 0.0)?;
    g.add(r, f)
}

/// Least-squares generator objective restricted to active samples.
pub fn masked_adversarial_loss(g: &mut Graph, fake: &MaskedScores) -> Result<Var> {
    masked_square_mean(g, fake, 1.0)
}

#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: Var,
    pub stft: Var,
    pub adv_v: Var,
    pub adv_uv: Var,
}

/// `L_stft(x, x̂) + (λ/2)·(adv_v + adv_uv)`.
pub fn generator_loss(
    g: &mut Graph,
    x: Var,
    xhat: Var,
    v_fake: &MaskedScores,
    uv_fake: &MaskedScores,
    gan: &GanLossConfig,
    stft: &StftLossConfig,
) -> Result<GeneratorLoss> {
    gan.validate()?;
    let stft_loss = multi_res_stft_loss(g, x, xhat, stft)?;
    let adv_v = masked_adversarial_loss(g, v_fake)?;
    let adv_uv = masked_adversarial_loss(g, uv_fake)?;
    let adv = g.add(adv_v, adv_uv)?;
    let adv = g.scale(adv, 0.5 * gan.lambda_adv)?;
    let total = g.add(stft_loss, adv)?;
    Ok(GeneratorLoss {
        total,
        stft: stft_loss,
        adv_v,
        adv_uv,
    })
}
