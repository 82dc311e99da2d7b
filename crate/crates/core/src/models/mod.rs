//! Networks: non-causal WaveNet generator, projection-conditioned CNN
//! discriminator, and the voiced/unvoiced discriminator pair.

mod discriminator;
mod generator;
mod params;
mod voicing;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorConfig};
pub use params::{Bound, ParamSet};
pub use voicing::{BatchMasks, VoicingAwareDiscriminators, VoicingContext, VoicingScores};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};

/// Input span of a stack of stride-1 convolutions: `1 + (k − 1)·Σ d`.
pub fn receptive_field(kernel: usize, dilations: &[usize]) -> usize {
    1 + kernel.saturating_sub(1) * dilations.iter().sum::<usize>()
}

/// Local conditioning as seen by a network.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning {
    /// Frame-rate features `[batch, aux_dim, n_frames]`; the network sees
    /// them repeated `hop` times.
    Frames { frames: Var, hop: usize },
    /// Features already at sample rate, `[batch, aux_dim, time]`.
    Upsampled(Var),
}

impl Conditioning {
    pub(crate) fn time(&self, g: &Graph) -> usize {
        match *self {
            Conditioning::Frames { frames, hop } => g.shape(frames)[2] * hop,
            Conditioning::Upsampled(h) => g.shape(h)[2],
        }
    }

    pub(crate) fn check(&self, g: &Graph, op: &'static str, batch: usize, aux_dim: usize, time: usize) -> Result<()> {
        let var = match *self {
            Conditioning::Frames { frames, .. } => frames,
            Conditioning::Upsampled(h) => h,
        };
        let shape = g.shape(var);
        if shape.len() != 3 {
            return Err(Error::shape(op, "conditioning rank", 3, shape.len()));
        }
        if shape[0] != batch {
            return Err(Error::shape(op, "conditioning batch", batch, shape[0]));
        }
        if shape[1] != aux_dim {
            return Err(Error::shape(op, "conditioning channels", aux_dim, shape[1]));
        }
        let t = self.time(g);
        if t != time {
            return Err(Error::shape(op, "conditioning time", time, t));
        }
        Ok(())
    }

    /// Kernel-1 projection evaluated at the conditioning's own rate, with
    /// the hop that maps it back onto samples.
    pub(crate) fn pointwise(&self, g: &mut Graph, weight: Var) -> Result<(Var, usize)> {
        match *self {
            Conditioning::Frames { frames, hop } => Ok((g.conv1d(frames, weight, None, 1)?, hop)),
            Conditioning::Upsampled(h) => Ok((g.conv1d(h, weight, None, 1)?, 1)),
        }
    }

    /// "Same"-padded convolution of the conditioning sequence.
    pub(crate) fn conv(&self, g: &mut Graph, weight: Var, bias: Option<Var>) -> Result<Var> {
        match *self {
            Conditioning::Frames { frames, hop } => g.conv1d_repeated(frames, hop, weight, bias),
            Conditioning::Upsampled(h) => g.conv1d(h, weight, bias, 1),
        }
    }
}

pub(crate) fn check_wave(g: &Graph, op: &'static str, wave: Var) -> Result<(usize, usize)> {
    let s = g.shape(wave);
    if s.len() != 3 {
        return Err(Error::shape(op, "rank", 3, s.len()));
    }
    if s[1] != 1 {
        return Err(Error::shape(op, "channels", 1, s[1]));
    }
    Ok((s[0], s[2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_receptive_fields() {
        assert_eq!(receptive_field(3, &[1, 2, 4, 8, 16, 32]), 127);
        assert_eq!(receptive_field(3, &[1; 6]), 13);
        let gen: Vec<usize> = (0..30).map(|i| 1 << (i % 10)).collect();
        assert_eq!(receptive_field(5, &gen), 12_277);
        assert_eq!(receptive_field(1, &[1, 2, 4]), 1);
    }
}
