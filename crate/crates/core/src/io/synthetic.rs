//! Synthetic speech-like corpus with exact voicing labels.
//!
//! A clip alternates harmonic segments (three harmonics of a gliding F0
//! under a smooth amplitude envelope) with uniform-noise segments at
//! −20 dBFS RMS. Segment boundaries fall on frame boundaries and are joined
//! by 20 ms linear crossfades, so the frame label is exact everywhere except
//! inside the crossfades.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::features::hop_size;
use crate::error::{Error, Result};
use crate::io::wav::AudioClip;

pub const CROSSFADE_MS: f64 = 20.0;
/// Peak of a uniform distribution whose RMS is −20 dBFS.
pub const NOISE_PEAK: f64 = 0.1 * 1.732_050_807_568_877_2;
const HARMONIC_GAINS: [f64; 3] = [1.0, 0.5, 0.25];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Harmonic,
    Noise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SegmentPlan {
    /// Alternating kinds with durations drawn from `[min_frames, max_frames]`;
    /// the first kind is random.
    Alternating { min_frames: usize, max_frames: usize },
    /// The same explicit plan for every clip (truncated/extended to length).
    Fixed(Vec<Segment>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_clips: usize,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub f0_range_hz: (f64, f64),
    pub frame_shift_ms: f64,
    pub plan: SegmentPlan,
}

impl SyntheticSpec {
    /// 64 half-second clips at 8 kHz.
    pub fn desk(seed: u64) -> Self {
        Self {
            seed,
            n_clips: 64,
            clip_seconds: 0.5,
            sample_rate: 8_000,
            f0_range_hz: (100.0, 250.0),
            frame_shift_ms: 5.0,
            plan: SegmentPlan::Alternating {
                min_frames: 16,
                max_frames: 36,
            },
        }
    }

    pub fn hop(&self) -> Result<usize> {
        hop_size(self.sample_rate, self.frame_shift_ms)
    }

    pub fn clip_frames(&self) -> Result<usize> {
        let samples = (self.clip_seconds * self.sample_rate as f64).round() as usize;
        Ok(samples.div_ceil(self.hop()?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticClip {
    pub clip: AudioClip,
    pub segments: Vec<Segment>,
    /// Ground-truth frame label: 1 exactly on harmonic-segment frames.
    pub vuv: Vec<u8>,
    /// Frames overlapping a crossfade.
    pub crossfade: Vec<bool>,
}

/// Frame labels implied by a segment list.
pub fn labels_from_segments(segments: &[Segment]) -> Vec<u8> {
    segments
        .iter()
        .flat_map(|s| std::iter::repeat_n((s.kind == SegmentKind::Harmonic) as u8, s.frames))
        .collect()
}

fn draw_plan(plan: &SegmentPlan, total: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Segment>> {
    let mut segs = Vec::new();
    let mut used = 0;
    match plan {
        SegmentPlan::Alternating { min_frames, max_frames } => {
            if *min_frames == 0 || min_frames > max_frames {
                return Err(Error::invalid("make_synthetic_corpus", "bad segment duration range"));
            }
            let mut kind = if rng.gen_bool(0.5) { SegmentKind::Harmonic } else { SegmentKind::Noise };
            while used < total {
                let frames = rng.gen_range(*min_frames..=*max_frames).min(total - used);
                segs.push(Segment { kind, frames });
                used += frames;
                kind = match kind {
                    SegmentKind::Harmonic => SegmentKind::Noise,
                    SegmentKind::Noise => SegmentKind::Harmonic,
                };
            }
        }
        SegmentPlan::Fixed(list) => {
            if list.is_empty() || list.iter().any(|s| s.frames == 0) {
                return Err(Error::invalid("make_synthetic_corpus", "empty segment in fixed plan"));
            }
            for s in list.iter().cycle() {
                if used >= total {
                    break;
                }
                let frames = s.frames.min(total - used);
                segs.push(Segment { kind: s.kind, frames });
                used += frames;
            }
        }
    }
    Ok(segs)
}

fn render(spec: &SyntheticSpec, segments: &[Segment], hop: usize, n_samples: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let sr = spec.sample_rate as f64;
    let n_frames = n_samples.div_ceil(hop);
    // Harmonic gain per sample: 1 on harmonic segments, 0 on noise, linear
    // ramps across each boundary.
    let mut gain = vec![0.0; n_samples];
    let mut f0 = vec![0.0; n_samples];
    let mut env = vec![0.0; n_samples];
    let mut boundaries = Vec::new();
    let mut start = 0;
    let mut prev_f0 = rng.gen_range(spec.f0_range_hz.0..=spec.f0_range_hz.1);
    for (i, seg) in segments.iter().enumerate() {
        let s0 = start * hop;
        let s1 = ((start + seg.frames) * hop).min(n_samples);
        let (fa, fb) = (prev_f0, rng.gen_range(spec.f0_range_hz.0..=spec.f0_range_hz.1));
        let level = rng.gen_range(0.25..0.45);
        let harmonic = seg.kind == SegmentKind::Harmonic;
        for t in s0..s1 {
            let u = (t - s0) as f64 / (s1 - s0).max(1) as f64;
            gain[t] = if harmonic { 1.0 } else { 0.0 };
            f0[t] = fa + (fb - fa) * u;
            env[t] = level * (0.8 + 0.2 * (PI * u).sin());
        }
        if harmonic {
            prev_f0 = fb;
        }
        if i > 0 {
            boundaries.push(s0);
        }
        start += seg.frames;
    }
    let half = ((CROSSFADE_MS / 2000.0) * sr).round() as usize;
    let mut crossfade = vec![false; n_frames];
    for &b in &boundaries {
        let lo = b.saturating_sub(half);
        let hi = (b + half).min(n_samples);
        let (ga, gb) = (gain[lo], gain[hi - 1]);
        for (t, g) in gain.iter_mut().enumerate().take(hi).skip(lo) {
            let u = (t - lo) as f64 / (hi - lo) as f64;
            *g = ga + (gb - ga) * u;
        }
        for flag in &mut crossfade[lo / hop..hi.div_ceil(hop).min(n_frames)] {
            *flag = true;
        }
    }
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n_samples);
    for t in 0..n_samples {
        phase += 2.0 * PI * f0[t] / sr;
        let harm: f64 = HARMONIC_GAINS
            .iter()
            .enumerate()
            .map(|(h, g)| g * ((h + 1) as f64 * phase).sin())
            .sum::<f64>()
            / 1.75;
        let noise = rng.gen_range(-NOISE_PEAK..=NOISE_PEAK);
        out.push(gain[t] * env[t] * harm + (1.0 - gain[t]) * noise);
    }
    (out, crossfade)
}

/// Generates `spec.n_clips` clips. Clip `i` depends only on `(seed, i)`.
pub fn make_synthetic_corpus(spec: &SyntheticSpec) -> Result<Vec<SyntheticClip>> {
    let hop = spec.hop()?;
    let n_samples = (spec.clip_seconds * spec.sample_rate as f64).round() as usize;
    if n_samples == 0 {
        return Err(Error::invalid("make_synthetic_corpus", "clip length is zero"));
    }
    let total_frames = spec.clip_frames()?;
    (0..spec.n_clips)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let segments = draw_plan(&spec.plan, total_frames, &mut rng)?;
            let (samples, crossfade) = render(spec, &segments, hop, n_samples, &mut rng);
            let vuv = labels_from_segments(&segments);
            Ok(SyntheticClip {
                clip: AudioClip::new(samples, spec.sample_rate)?,
                segments,
                vuv,
                crossfade,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_harmonic_plan_is_all_voiced() {
        let spec = SyntheticSpec {
            n_clips: 2,
            plan: SegmentPlan::Fixed(vec![Segment {
                kind: SegmentKind::Harmonic,
                frames: 1000,
            }]),
            ..SyntheticSpec::desk(1)
        };
        for c in make_synthetic_corpus(&spec).unwrap() {
            assert_eq!(c.vuv.len(), 100);
            assert!(c.vuv.iter().all(|v| *v == 1));
            assert!(c.crossfade.iter().all(|f| !f));
        }
    }

    #[test]
    fn labels_follow_segments() {
        let spec = SyntheticSpec::desk(9);
        for c in make_synthetic_corpus(&spec).unwrap() {
            assert_eq!(c.segments.iter().map(|s| s.frames).sum::<usize>(), c.vuv.len());
            assert_eq!(labels_from_segments(&c.segments), c.vuv);
            for pair in c.segments.windows(2) {
                assert_ne!(pair[0].kind, pair[1].kind);
            }
            assert!(c.clip.samples.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = make_synthetic_corpus(&SyntheticSpec::desk(42)).unwrap();
        let b = make_synthetic_corpus(&SyntheticSpec::desk(42)).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_corpus(&SyntheticSpec::desk(43)).unwrap();
        assert_ne!(a[0].clip.samples, c[0].clip.samples);
    }

    #[test]
    fn noise_level_is_minus_twenty_dbfs() {
        let spec = SyntheticSpec {
            n_clips: 1,
            clip_seconds: 2.0,
            plan: SegmentPlan::Fixed(vec![Segment {
                kind: SegmentKind::Noise,
                frames: 400,
            }]),
            ..SyntheticSpec::desk(3)
        };
        let c = &make_synthetic_corpus(&spec).unwrap()[0];
        let rms = (c.clip.samples.iter().map(|v| v * v).sum::<f64>() / c.clip.len() as f64).sqrt();
        let db = 20.0 * rms.log10();
        assert!((db + 20.0).abs() < 0.2, "{db}");
    }
}
