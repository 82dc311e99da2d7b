//! Three interactive views of the vocoder building blocks, compiled to
//! WebAssembly for `www/index.html`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use wavegan::autograd::Graph;
use wavegan::dsp::{stft_magnitude, StftConfig};
use wavegan::io::{make_synthetic_corpus, SyntheticSpec};
use wavegan::losses::{stft_loss_between, StftLossConfig};
use wavegan::models::{Discriminator, DiscriminatorConfig};
use wavegan::Tensor;

const RATE: u32 = 8_000;

fn js_err(e: wavegan::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// `|∂score[centre] / ∂wave[t]|` for a randomly initialised discriminator
/// with the given dilations. The non-zero span is the receptive field.
pub fn probe(kernel: usize, dilations: &[usize], time: usize, seed: u64) -> wavegan::Result<Vec<f64>> {
    let cfg = DiscriminatorConfig {
        conv_layers: dilations.len(),
        kernel,
        dilations: dilations.to_vec(),
        conditional: false,
        ..DiscriminatorConfig::voiced(8)
    };
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Discriminator::new(cfg, &mut rng)?;
    let mut g = Graph::new();
    let p = d.params.bind(&mut g, false);
    let noise: Vec<f64> = (0..time).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let wave = g.leaf(Tensor::new(vec![1, 1, time], noise)?, true);
    let s = d.score(&mut g, &p, wave, None)?;
    let mut pick = vec![0.0; time];
    pick[time / 2] = 1.0;
    let pick = g.constant(Tensor::new(vec![1, time], pick)?);
    let s = g.mul(s, pick)?;
    let s = g.sum(s)?;
    let grads = g.backward(s)?;
    Ok(grads.get(wave).map_or_else(|| vec![0.0; time], |t| t.data().iter().map(|v| v.abs()).collect()))
}

#[wasm_bindgen(js_name = receptiveFieldProbe)]
pub fn receptive_field_probe(kernel: usize, dilations: Vec<u32>, seed: u64) -> Result<Vec<f64>, JsError> {
    let dilations: Vec<usize> = dilations.into_iter().map(|d| d as usize).collect();
    let rf = wavegan::models::receptive_field(kernel, &dilations);
    let time = (2 * rf + 64).next_power_of_two();
    probe(kernel, &dilations, time, seed).map_err(js_err)
}

#[wasm_bindgen(js_name = analyticReceptiveField)]
pub fn analytic_receptive_field(kernel: usize, dilations: Vec<u32>) -> usize {
    let dilations: Vec<usize> = dilations.into_iter().map(|d| d as usize).collect();
    wavegan::models::receptive_field(kernel, &dilations)
}

/// One synthetic clip with its V/UV track and log-magnitude spectrogram.
#[wasm_bindgen]
pub struct Clip {
    samples: Vec<f64>,
    vuv: Vec<u8>,
    spectrogram: Vec<f64>,
    bins: usize,
}

#[wasm_bindgen]
impl Clip {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, seconds: f64) -> Result<Clip, JsError> {
        render_clip(seed, seconds).map_err(js_err)
    }

    pub fn samples(&self) -> Vec<f64> {
        self.samples.clone()
    }

    pub fn vuv(&self) -> Vec<u8> {
        self.vuv.clone()
    }

    /// `log10` magnitudes, frame-major.
    pub fn spectrogram(&self) -> Vec<f64> {
        self.spectrogram.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn bins(&self) -> usize {
        self.bins
    }

    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.spectrogram.len() / self.bins
    }

    #[wasm_bindgen(getter, js_name = sampleRate)]
    pub fn sample_rate(&self) -> u32 {
        RATE
    }
}

fn spec(seed: u64, seconds: f64) -> SyntheticSpec {
    SyntheticSpec {
        n_clips: 1,
        clip_seconds: seconds.clamp(0.1, 4.0),
        ..SyntheticSpec::desk(seed)
    }
}

pub fn render_clip(seed: u64, seconds: f64) -> wavegan::Result<Clip> {
    let clip = make_synthetic_corpus(&spec(seed, seconds))?.remove(0);
    let cfg = StftConfig::new(256, 40, 200)?;
    let mag = stft_magnitude(&Tensor::from_vec(clip.clip.samples.clone()), &cfg)?;
    Ok(Clip {
        spectrogram: mag.data().iter().map(|m| m.max(1e-7).log10()).collect(),
        bins: cfg.n_bins(),
        samples: clip.clip.samples,
        vuv: clip.vuv,
    })
}

/// Multi-resolution STFT loss between a clip and the clip plus white noise
/// at each standard deviation in `levels`.
pub fn noise_curve(seed: u64, levels: &[f64]) -> wavegan::Result<Vec<f64>> {
    let clean = make_synthetic_corpus(&spec(seed, 0.5))?.remove(0).clip.samples;
    let cfg = StftLossConfig::for_rate(RATE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    levels
        .iter()
        .map(|&sigma| {
            // Uniform noise with standard deviation `sigma`.
            let half = sigma * 3f64.sqrt();
            let noisy: Vec<f64> = clean.iter().map(|x| x + rng.gen_range(-half..=half)).collect();
            stft_loss_between(&clean, &noisy, &cfg)
        })
        .collect()
}

#[wasm_bindgen(js_name = stftLossCurve)]
pub fn stft_loss_curve(seed: u64, levels: Vec<f64>) -> Result<Vec<f64>, JsError> {
    noise_curve(seed, &levels).map_err(js_err)
}
