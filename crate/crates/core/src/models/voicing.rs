use rand::Rng;

use super::{check_wave, Bound, Conditioning, Discriminator, DiscriminatorConfig};
use crate::autograd::{Graph, Var};
use crate::dsp::VoicingMasks;
use crate::error::{Error, Result};
use crate::losses::MaskedScores;
use crate::tensor::Tensor;

/// Sample-level masks for a batch, `[batch, 1, time]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMasks {
    pub voiced: Tensor,
    pub unvoiced: Tensor,
}

impl BatchMasks {
    pub fn new(items: &[VoicingMasks]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("voicing masks", "empty batch"))?;
        let time = first.len();
        let mut voiced = Vec::with_capacity(items.len() * time);
        let mut unvoiced = Vec::with_capacity(items.len() * time);
        for m in items {
            if m.len() != time {
                return Err(Error::shape("voicing masks", "mask length", time, m.len()));
            }
            voiced.extend_from_slice(&m.voiced);
            unvoiced.extend_from_slice(&m.unvoiced);
        }
        let shape = vec![items.len(), 1, time];
        Ok(Self {
            voiced: Tensor::new(shape.clone(), voiced)?,
            unvoiced: Tensor::new(shape, unvoiced)?,
        })
    }

    pub fn batch(&self) -> usize {
        self.voiced.shape()[0]
    }

    pub fn time(&self) -> usize {
        self.voiced.shape()[2]
    }

    pub fn voiced_count(&self) -> usize {
        self.voiced.data().iter().filter(|v| **v > 0.0).count()
    }

    pub fn unvoiced_count(&self) -> usize {
        self.voiced.numel() - self.voiced_count()
    }
}

/// Masked scores of both discriminators on real and generated audio.
#[derive(Clone, Copy, Debug)]
pub struct VoicingScores {
    pub v_real: MaskedScores,
    pub v_fake: MaskedScores,
    pub uv_real: MaskedScores,
    pub uv_fake: MaskedScores,
}

/// Per-batch state shared by every scoring call: mask constants and the
/// condition embeddings of both discriminators.
#[derive(Clone, Copy, Debug)]
pub struct VoicingContext {
    v_wave_mask: Var,
    uv_wave_mask: Var,
    v_score_mask: Var,
    uv_score_mask: Var,
    v_active: usize,
    uv_active: usize,
    v_embed: Option<Var>,
    uv_embed: Option<Var>,
}

/// D^v with a long dilated receptive field and D^uv with an undilated one.
#[derive(Clone, Debug, PartialEq)]
pub struct VoicingAwareDiscriminators {
    pub voiced: Discriminator,
    pub unvoiced: Discriminator,
}

impl VoicingAwareDiscriminators {
    pub fn new(v: DiscriminatorConfig, uv: DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            voiced: Discriminator::new(v, rng)?,
            unvoiced: Discriminator::new(uv, rng)?,
        })
    }

    pub fn prepare(
        &self,
        g: &mut Graph,
        pv: &Bound,
        puv: &Bound,
        cond: Conditioning,
        masks: &BatchMasks,
    ) -> Result<VoicingContext> {
        let (b, t) = (masks.batch(), masks.time());
        let v_wave_mask = g.constant(masks.voiced.clone());
        let uv_wave_mask = g.constant(masks.unvoiced.clone());
        let v_score_mask = g.constant(masks.voiced.clone().reshape(vec![b, t])?);
        let uv_score_mask = g.constant(masks.unvoiced.clone().reshape(vec![b, t])?);
        let mut embed = |d: &Discriminator, p: &Bound| -> Result<Option<Var>> {
            if !d.cfg.conditional {
                return Ok(None);
            }
            cond.check(g, "voicing-aware discriminator", b, d.cfg.aux_dim, t)?;
            d.embed(g, p, cond).map(Some)
        };
        let v_embed = embed(&self.voiced, pv)?;
        let uv_embed = embed(&self.unvoiced, puv)?;
        Ok(VoicingContext {
            v_wave_mask,
            uv_wave_mask,
            v_score_mask,
            uv_score_mask,
            v_active: masks.voiced_count(),
            uv_active: masks.unvoiced_count(),
            v_embed,
            uv_embed,
        })
    }

    /// Scores `wave` with both discriminators. Each sees only its own
    /// region of the input, and each score map is zeroed outside it.
    pub fn score_pair(
        &self,
        g: &mut Graph,
        pv: &Bound,
        puv: &Bound,
        ctx: &VoicingContext,
        wave: Var,
    ) -> Result<(MaskedScores, MaskedScores)> {
        let (b, t) = check_wave(g, "voicing-aware discriminator", wave)?;
        let mask_shape = g.shape(ctx.v_wave_mask);
        if mask_shape[0] != b {
            return Err(Error::shape("voicing-aware discriminator", "mask batch", b, mask_shape[0]));
        }
        if mask_shape[2] != t {
            return Err(Error::shape("voicing-aware discriminator", "mask length", t, mask_shape[2]));
        }
        let v = self.masked(g, &self.voiced, pv, wave, ctx.v_wave_mask, ctx.v_score_mask, ctx.v_embed)?;
        let uv = self.masked(g, &self.unvoiced, puv, wave, ctx.uv_wave_mask, ctx.uv_score_mask, ctx.uv_embed)?;
        Ok((
            MaskedScores {
                scores: v,
                mask: ctx.v_score_mask,
                active: ctx.v_active,
            },
            MaskedScores {
                scores: uv,
                mask: ctx.uv_score_mask,
                active: ctx.uv_active,
            },
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn masked(
        &self,
        g: &mut Graph,
        d: &Discriminator,
        p: &Bound,
        wave: Var,
        wave_mask: Var,
        score_mask: Var,
        embed: Option<Var>,
    ) -> Result<Var> {
        let input = g.mul(wave, wave_mask)?;
        let s = d.score(g, p, input, embed)?;
        g.mul(s, score_mask)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn scores(
        &self,
        g: &mut Graph,
        pv: &Bound,
        puv: &Bound,
        x: Var,
        xhat: Var,
        cond: Conditioning,
        masks: &BatchMasks,
    ) -> Result<VoicingScores> {
        let ctx = self.prepare(g, pv, puv, cond, masks)?;
        let (v_real, uv_real) = self.score_pair(g, pv, puv, &ctx, x)?;
        let (v_fake, uv_fake) = self.score_pair(g, pv, puv, &ctx, xhat)?;
        Ok(VoicingScores {
            v_real,
            v_fake,
            uv_real,
            uv_fake,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::upsample_vuv;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(rng: &mut ChaCha8Rng) -> VoicingAwareDiscriminators {
        let mut v = DiscriminatorConfig::voiced(4);
        v.aux_dim = 3;
        let mut uv = DiscriminatorConfig::unvoiced(4);
        uv.aux_dim = 3;
        VoicingAwareDiscriminators::new(v, uv, rng).unwrap()
    }

    #[test]
    fn batch_masks_reject_ragged_items() {
        let a = upsample_vuv(&[1, 0], 4).unwrap();
        let b = upsample_vuv(&[1], 4).unwrap();
        assert!(BatchMasks::new(&[a.clone(), b]).is_err());
        let m = BatchMasks::new(&[a.clone(), a]).unwrap();
        assert_eq!((m.batch(), m.time(), m.voiced_count(), m.unvoiced_count()), (2, 8, 8, 8));
    }

    #[test]
    fn scores_vanish_outside_each_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = pair(&mut rng);
        let masks = BatchMasks::new(&[upsample_vuv(&[1, 0, 0, 1], 8).unwrap()]).unwrap();
        let mut g = Graph::new();
        let pv = d.voiced.params.bind(&mut g, false);
        let puv = d.unvoiced.params.bind(&mut g, false);
        let wave = g.constant(Tensor::new(vec![1, 1, 32], (0..32).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap());
        let h = g.constant(Tensor::ones(&[1, 3, 4]));
        let s = d
            .scores(&mut g, &pv, &puv, wave, wave, Conditioning::Frames { frames: h, hop: 8 }, &masks)
            .unwrap();
        let v = g.value(s.v_real.scores).data().to_vec();
        let uv = g.value(s.uv_real.scores).data().to_vec();
        for t in 0..32 {
            let voiced = t < 8 || t >= 24;
            if voiced {
                assert_eq!(uv[t], 0.0);
            } else {
                assert_eq!(v[t], 0.0);
            }
        }
        assert_eq!((s.v_real.active, s.uv_real.active), (16, 16));
    }

    #[test]
    fn mask_length_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = pair(&mut rng);
        let masks = BatchMasks::new(&[upsample_vuv(&[1, 0], 8).unwrap()]).unwrap();
        let mut g = Graph::new();
        let pv = d.voiced.params.bind(&mut g, false);
        let puv = d.unvoiced.params.bind(&mut g, false);
        let wave = g.constant(Tensor::zeros(&[1, 1, 24]));
        let h = g.constant(Tensor::ones(&[1, 3, 3]));
        assert!(d
            .scores(&mut g, &pv, &puv, wave, wave, Conditioning::Frames { frames: h, hop: 8 }, &masks)
            .is_err());
    }
}
