//! Finite-difference checks of every differentiable building block, from
//! single ops up to whole networks, on instances small enough to run in
//! seconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{grad_check, Graph, Var};
use crate::dsp::{upsample_vuv, StftConfig};
use crate::error::Result;
use crate::losses::{
    adversarial_loss, discriminator_loss, log_stft_magnitude_loss, masked_discriminator_loss, multi_res_stft_loss,
    spectral_convergence, StftLossConfig,
};
use crate::models::{
    BatchMasks, Conditioning, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
    VoicingAwareDiscriminators,
};
use crate::tensor::Tensor;

/// Tolerance for elementwise and reduction ops.
pub const ELEMENTWISE_TOL: f64 = 1e-4;
/// Tolerance for convolutions, transforms, losses and networks.
pub const COMPOSITE_TOL: f64 = 1e-3;
/// Finite-difference step.
pub const EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape")
}

/// `Σ y ⊙ r` for a fixed random `r`: a generic scalar readout of `y`.
fn readout(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(uniform(&mut rng, g.shape(y), -1.0, 1.0));
    let p = g.mul(y, r)?;
    g.sum(p)
}

struct Suite {
    rng: ChaCha8Rng,
    reports: Vec<GradReport>,
}

impl Suite {
    fn check<F>(&mut self, name: &'static str, tolerance: f64, point: Tensor, f: F) -> Result<()>
    where
        F: Fn(&mut Graph, Var) -> Result<Var>,
    {
        let max_rel_err = grad_check(f, &point, EPS)?;
        self.reports.push(GradReport {
            name,
            max_rel_err,
            tolerance,
        });
        Ok(())
    }

    fn draw(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        uniform(&mut self.rng, shape, lo, hi)
    }
}

fn small_generator() -> GeneratorConfig {
    GeneratorConfig {
        layers: 4,
        cycles: 2,
        residual_ch: 4,
        skip_ch: 4,
        kernel: 3,
        aux_dim: 3,
    }
}

fn small_discriminator(voiced: bool) -> DiscriminatorConfig {
    let base = if voiced {
        DiscriminatorConfig::voiced(4)
    } else {
        DiscriminatorConfig::unvoiced(4)
    };
    DiscriminatorConfig { aux_dim: 3, ..base }
}

/// Runs the full suite. Every case uses at most 512 input samples.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        reports: Vec::new(),
    };
    elementwise(&mut s)?;
    convolutions(&mut s)?;
    spectral(&mut s)?;
    losses(&mut s)?;
    networks(&mut s)?;
    Ok(s.reports)
}

fn elementwise(s: &mut Suite) -> Result<()> {
    let x = s.draw(&[2, 4, 8], -2.0, 2.0);
    let other = s.draw(&[2, 4, 8], 0.5, 2.0);
    let cond = s.draw(&[2, 4, 2], -1.0, 1.0);
    let tol = ELEMENTWISE_TOL;
    s.check("tanh", tol, x.clone(), |g, x| {
        let y = g.tanh(x)?;
        readout(g, y, 1)
    })?;
    s.check("sigmoid", tol, x.clone(), |g, x| {
        let y = g.sigmoid(x)?;
        readout(g, y, 2)
    })?;
    s.check("leaky_relu", tol, x.clone(), |g, x| {
        let y = g.leaky_relu(x, 0.2)?;
        readout(g, y, 3)
    })?;
    s.check("mul/div", tol, x.clone(), |g, x| {
        let o = g.constant(other.clone());
        let y = g.mul(x, o)?;
        let y = g.div(y, o)?;
        let y = g.mul(y, x)?;
        readout(g, y, 4)
    })?;
    s.check("log", tol, other.clone(), |g, x| {
        let y = g.log(x)?;
        readout(g, y, 5)
    })?;
    s.check("gate", tol, x.clone(), |g, x| {
        let c = g.constant(cond.clone());
        let y = g.gate(x, Some(c), 4)?;
        readout(g, y, 6)
    })?;
    s.check("add_scaled", tol, x.clone(), |g, x| {
        let o = g.constant(other.clone());
        let y = g.add_scaled(x, o, 0.5f64.sqrt())?;
        let y = g.square(y)?;
        readout(g, y, 7)
    })?;
    s.check("mean/l1/frobenius", tol, x.clone(), |g, x| {
        let m = g.mean(x)?;
        let l = g.l1_norm(x)?;
        let f = g.frobenius_norm(x)?;
        let y = g.add(m, l)?;
        g.add(y, f)
    })?;
    s.check("narrow/sum_channels/repeat", tol, x, |g, x| {
        let n = g.narrow_channels(x, 1, 2)?;
        let c = g.sum_channels(n)?;
        let r = g.repeat_last(c, 3)?;
        readout(g, r, 8)
    })?;
    Ok(())
}

fn convolutions(s: &mut Suite) -> Result<()> {
    let x = s.draw(&[2, 3, 32], -1.0, 1.0);
    let w = s.draw(&[4, 3, 3], -1.0, 1.0);
    let b = s.draw(&[4], -1.0, 1.0);
    let tol = COMPOSITE_TOL;
    s.check("conv1d input", tol, x.clone(), |g, xv| {
        let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv1d(xv, wv, Some(bv), 2)?;
        readout(g, y, 10)
    })?;
    s.check("conv1d weight", tol, w.clone(), |g, wv| {
        let (xv, bv) = (g.constant(x.clone()), g.constant(b.clone()));
        let y = g.conv1d(xv, wv, Some(bv), 2)?;
        readout(g, y, 10)
    })?;
    s.check("conv1d bias", tol, b, |g, b| {
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.conv1d(xv, wv, Some(b), 2)?;
        readout(g, y, 10)
    })?;
    let frames = s.draw(&[1, 3, 8], -1.0, 1.0);
    let wr = s.draw(&[2, 3, 7], -1.0, 1.0);
    s.check("conv1d over repeated frames", tol, frames.clone(), |g, f| {
        let w = g.constant(wr.clone());
        let y = g.conv1d_repeated(f, 4, w, None)?;
        readout(g, y, 11)
    })?;
    s.check("conv1d over repeated frames, weight", tol, wr, |g, w| {
        let f = g.constant(frames.clone());
        let y = g.conv1d_repeated(f, 4, w, None)?;
        readout(g, y, 11)
    })?;
    Ok(())
}

fn spectral(s: &mut Suite) -> Result<()> {
    let x = s.draw(&[2, 256], -1.0, 1.0);
    let cfg = StftConfig::new(64, 16, 48)?;
    s.check("stft magnitude", COMPOSITE_TOL, x, |g, x| {
        let m = g.stft_magnitude(x, &cfg)?;
        readout(g, m, 12)
    })
}

fn losses(s: &mut Suite) -> Result<()> {
    let x = s.draw(&[2, 256], -1.0, 1.0);
    let xhat = s.draw(&[2, 256], -1.0, 1.0);
    let cfg = StftConfig::new(64, 16, 48)?;
    let multi = StftLossConfig::new(vec![
        StftConfig::new(32, 8, 24)?,
        StftConfig::new(64, 16, 48)?,
        StftConfig::new(128, 32, 96)?,
    ])?;
    let tol = COMPOSITE_TOL;
    let mags = |g: &mut Graph, x: &Tensor, probe: Var| -> Result<(Var, Var)> {
        let xv = g.constant(x.clone());
        Ok((g.stft_magnitude(xv, &cfg)?, g.stft_magnitude(probe, &cfg)?))
    };
    s.check("spectral convergence", tol, xhat.clone(), |g, p| {
        let (mx, mp) = mags(g, &x, p)?;
        spectral_convergence(g, mx, mp)
    })?;
    s.check("log stft magnitude loss", tol, xhat.clone(), |g, p| {
        let (mx, mp) = mags(g, &x, p)?;
        log_stft_magnitude_loss(g, mx, mp)
    })?;
    s.check("multi-resolution stft loss", tol, xhat, |g, p| {
        let xv = g.constant(x.clone());
        multi_res_stft_loss(g, xv, p, &multi)
    })?;
    let real = s.draw(&[2, 64], -1.0, 2.0);
    let fake = s.draw(&[2, 64], -1.0, 2.0);
    s.check("discriminator loss", ELEMENTWISE_TOL, real, |g, r| {
        let f = g.constant(fake.clone());
        discriminator_loss(g, r, f)
    })?;
    s.check("adversarial loss", ELEMENTWISE_TOL, fake, |g, f| adversarial_loss(g, f))?;
    Ok(())
}

fn networks(s: &mut Suite) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.rng.gen());
    let gen = Generator::new(small_generator(), &mut rng)?;
    let (hop, frames) = (8, 8);
    let time = hop * frames;
    let z = s.draw(&[1, 1, time], -1.0, 1.0);
    let cond = s.draw(&[1, 3, frames], -1.0, 1.0);
    let tol = COMPOSITE_TOL;
    let run_gen = |g: &mut Graph, z: Var, f: Var, probe: Option<(&str, Var)>| -> Result<Var> {
        let mut p = gen.params.bind(g, false);
        if let Some((name, v)) = probe {
            p.substitute(name, v);
        }
        let y = gen.forward(g, &p, z, Conditioning::Frames { frames: f, hop })?;
        readout(g, y, 20)
    };
    s.check("generator output wrt noise", tol, z.clone(), |g, zv| {
        let f = g.constant(cond.clone());
        run_gen(g, zv, f, None)
    })?;
    s.check("generator output wrt conditioning", tol, cond.clone(), |g, f| {
        let zv = g.constant(z.clone());
        run_gen(g, zv, f, None)
    })?;
    let w = gen.params.get("layers.1.dilated.weight").expect("exists").clone();
    s.check("generator output wrt a dilated weight", tol, w, |g, w| {
        let (zv, f) = (g.constant(z.clone()), g.constant(cond.clone()));
        run_gen(g, zv, f, Some(("layers.1.dilated.weight", w)))
    })?;

    // Discriminator scores on 256 samples, longer than the voiced RF.
    let d = Discriminator::new(small_discriminator(true), &mut rng)?;
    let (hop, frames) = (16, 16);
    let wave = s.draw(&[1, 1, hop * frames], -1.0, 1.0);
    let dcond = s.draw(&[1, 3, frames], -1.0, 1.0);
    let run_d = |g: &mut Graph, x: Var, f: Var, probe: Option<(&str, Var)>| -> Result<Var> {
        let mut p = d.params.bind(g, false);
        if let Some((name, v)) = probe {
            p.substitute(name, v);
        }
        let y = d.forward(g, &p, x, Some(Conditioning::Frames { frames: f, hop }))?;
        readout(g, y, 21)
    };
    s.check("discriminator score wrt waveform", tol, wave.clone(), |g, x| {
        let f = g.constant(dcond.clone());
        run_d(g, x, f, None)
    })?;
    let we = d.params.get("embed.weight").expect("conditional").clone();
    s.check("discriminator score wrt projection weight", tol, we, |g, w| {
        let (x, f) = (g.constant(wave.clone()), g.constant(dcond.clone()));
        run_d(g, x, f, Some(("embed.weight", w)))
    })?;
    let wc = d.params.get("conv.2.weight").expect("exists").clone();
    s.check("discriminator score wrt a conv weight", tol, wc, |g, w| {
        let (x, f) = (g.constant(wave.clone()), g.constant(dcond.clone()));
        run_d(g, x, f, Some(("conv.2.weight", w)))
    })?;

    // The full masked objective of the voicing-aware pair.
    let pair = VoicingAwareDiscriminators::new(small_discriminator(true), small_discriminator(false), &mut rng)?;
    let vuv: Vec<u8> = (0..frames).map(|j| u8::from((j / 3) % 2 == 0)).collect();
    let masks = BatchMasks::new(&[upsample_vuv(&vuv, hop)?])?;
    let real = s.draw(&[1, 1, hop * frames], -1.0, 1.0);
    s.check("masked discriminator objective wrt fake", tol, wave, |g, fake| {
        masked_objective(g, &pair, &masks, &real, &dcond, hop, fake)
    })?;
    Ok(())
}

fn masked_objective(
    g: &mut Graph,
    pair: &VoicingAwareDiscriminators,
    masks: &BatchMasks,
    real: &Tensor,
    cond: &Tensor,
    hop: usize,
    fake: Var,
) -> Result<Var> {
    let pv = pair.voiced.params.bind(g, false);
    let puv = pair.unvoiced.params.bind(g, false);
    let x = g.constant(real.clone());
    let frames = g.constant(cond.clone());
    let sc = pair.scores(g, &pv, &puv, x, fake, Conditioning::Frames { frames, hop }, masks)?;
    let lv = masked_discriminator_loss(g, &sc.v_real, &sc.v_fake)?;
    let luv = masked_discriminator_loss(g, &sc.uv_real, &sc.uv_fake)?;
    g.add(lv, luv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let reports = gradient_suite(7).unwrap();
        assert!(reports.len() >= 20);
        for r in &reports {
            assert!(r.passed(), "{}: {:e} >= {:e}", r.name, r.max_rel_err, r.tolerance);
        }
    }
}
