use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavegan::autograd::{grad_check, Graph};
use wavegan::dsp::{stft_magnitude, upsample_vuv, StftConfig};
use wavegan::io::synthetic::labels_from_segments;
use wavegan::io::{make_synthetic_corpus, SyntheticSpec};
use wavegan::losses::{
    discriminator_loss, generator_loss, multi_res_stft_loss, GanLossConfig, MaskedScores, StftLossConfig,
};
use wavegan::models::{
    BatchMasks, Conditioning, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
    VoicingAwareDiscriminators,
};
use wavegan::training::lr_at;
use wavegan::Tensor;

fn seeded(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn small_stft() -> StftLossConfig {
    StftLossConfig::new(vec![
        StftConfig::new(32, 8, 24).unwrap(),
        StftConfig::new(64, 16, 48).unwrap(),
    ])
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn same_padding_keeps_length(half in 0usize..4, dilation in 1usize..6, time in 1usize..40, seed in any::<u64>()) {
        let k = 2 * half + 1;
        let mut g = Graph::new();
        let x = g.constant(seeded(seed, &[2, 3, time]));
        let w = g.constant(seeded(seed ^ 1, &[4, 3, k]));
        let y = g.conv1d(x, w, None, dilation).unwrap();
        prop_assert_eq!(g.shape(y), &[2, 4, time]);
    }

    #[test]
    fn gradients_accumulate_additively(seed in any::<u64>()) {
        let x0 = seeded(seed, &[3, 7]);
        let grad_of = |which: u8| {
            let mut g = Graph::new();
            let x = g.param(x0.clone());
            let a = g.tanh(x).unwrap();
            let a = g.sum(a).unwrap();
            let b = g.square(x).unwrap();
            let b = g.mean(b).unwrap();
            let root = match which {
                0 => a,
                1 => b,
                _ => g.add(a, b).unwrap(),
            };
            g.backward(root).unwrap().get(x).unwrap().data().to_vec()
        };
        let (ga, gb, gab) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..gab.len() {
            prop_assert!((ga[i] + gb[i] - gab[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn elementwise_gradients(seed in any::<u64>()) {
        let x = seeded(seed, &[2, 5]).map(|v| v * 2.0);
        let pos = x.map(|v| v.abs() + 0.5);
        let err = [
            grad_check(|g, v| { let y = g.tanh(v)?; g.sum(y) }, &x, 1e-5).unwrap(),
            grad_check(|g, v| { let y = g.sigmoid(v)?; g.sum(y) }, &x, 1e-5).unwrap(),
            grad_check(|g, v| { let y = g.square(v)?; g.mean(y) }, &x, 1e-5).unwrap(),
            grad_check(|g, v| { let y = g.log(v)?; g.sum(y) }, &pos, 1e-5).unwrap(),
            grad_check(|g, v| g.frobenius_norm(v), &x, 1e-5).unwrap(),
        ];
        for e in err {
            prop_assert!(e < 1e-4, "{e}");
        }
    }

    #[test]
    fn stft_is_positively_homogeneous(seed in any::<u64>(), a in 0.01f64..50.0) {
        let x = seeded(seed, &[300]);
        let cfg = StftConfig::new(64, 16, 48).unwrap();
        let m = stft_magnitude(&x, &cfg).unwrap();
        let ma = stft_magnitude(&x.map(|v| a * v), &cfg).unwrap();
        for (p, q) in m.data().iter().zip(ma.data()) {
            prop_assert!((a * p - q).abs() <= 1e-9 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn stft_loss_is_non_negative_and_zero_on_identity(seed in any::<u64>()) {
        let x = seeded(seed, &[2, 256]);
        let y = seeded(seed ^ 7, &[2, 256]);
        let mut g = Graph::new();
        let (xv, yv) = (g.constant(x), g.constant(y));
        let same = multi_res_stft_loss(&mut g, xv, xv, &small_stft()).unwrap();
        let diff = multi_res_stft_loss(&mut g, xv, yv, &small_stft()).unwrap();
        prop_assert_eq!(g.value(same).data()[0], 0.0);
        prop_assert!(g.value(diff).data()[0] > 0.0);
    }

    #[test]
    fn discriminator_loss_zero_only_at_targets(real in prop::collection::vec(-2.0f64..2.0, 1..12), fake in prop::collection::vec(-2.0f64..2.0, 1..12)) {
        let mut g = Graph::new();
        let at_target = real.iter().all(|v| *v == 1.0) && fake.iter().all(|v| *v == 0.0);
        let r = g.constant(Tensor::from_vec(real));
        let f = g.constant(Tensor::from_vec(fake));
        let l = discriminator_loss(&mut g, r, f).unwrap();
        let v = g.value(l).data()[0];
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, at_target);
    }

    #[test]
    fn generator_output_matches_noise_length(frames in 1usize..12, hop in 1usize..9, seed in any::<u64>()) {
        let cfg = GeneratorConfig { layers: 4, cycles: 2, residual_ch: 4, skip_ch: 4, kernel: 3, aux_dim: 3 };
        let gen = Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let time = frames * hop;
        let mut g = Graph::new();
        let p = gen.params.bind(&mut g, false);
        let z = g.constant(seeded(seed, &[1, 1, time]));
        let h = g.constant(seeded(seed ^ 3, &[1, 3, frames]));
        let y = gen.forward(&mut g, &p, z, Conditioning::Frames { frames: h, hop }).unwrap();
        prop_assert_eq!(g.shape(y), &[1, 1, time]);
    }

    #[test]
    fn lr_never_increases(init in 1e-6f64..1.0, half in 1usize..1000, step in 0usize..100_000) {
        prop_assert!(lr_at(step + 1, init, half) <= lr_at(step, init, half));
    }

    #[test]
    fn synthetic_labels_follow_segments(seed in any::<u64>()) {
        let spec = SyntheticSpec { n_clips: 2, clip_seconds: 0.3, ..SyntheticSpec::desk(seed) };
        let a = make_synthetic_corpus(&spec).unwrap();
        prop_assert_eq!(&a, &make_synthetic_corpus(&spec).unwrap());
        for clip in &a {
            prop_assert_eq!(&clip.vuv, &labels_from_segments(&clip.segments));
        }
    }

    #[test]
    fn masks_stay_complementary(vuv in prop::collection::vec(0u8..=1, 1..30), hop in 1usize..10) {
        let m = BatchMasks::new(&[upsample_vuv(&vuv, hop).unwrap()]).unwrap();
        for (v, u) in m.voiced.data().iter().zip(m.unvoiced.data()) {
            prop_assert_eq!(v + u, 1.0);
        }
    }
}

/// Energy of one Hann-windowed frame through the STFT and through a naive
/// DFT: both sides of the spectrum summed, against `N · Σ (w·x)²`.
#[test]
fn parseval_on_an_isolated_frame() {
    for (fft, seed) in [(64, 1), (256, 2), (128, 3)] {
        let cfg = StftConfig::new(fft, fft, fft).unwrap();
        let x = seeded(seed, &[fft]);
        let mag = stft_magnitude(&x, &cfg).unwrap();
        assert_eq!(mag.shape(), &[1, fft / 2 + 1]);
        let weight = |k: usize| if k == 0 || k == fft / 2 { 1.0 } else { 2.0 };
        let spectral: f64 = mag.data().iter().enumerate().map(|(k, m)| weight(k) * m * m).sum();

        let windowed: Vec<f64> = x.data().iter().zip(cfg.window_coefficients()).map(|(a, w)| a * w).collect();
        let naive: f64 = (0..fft / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in windowed.iter().enumerate() {
                    let ph = -2.0 * std::f64::consts::PI * (k * n) as f64 / fft as f64;
                    re += v * ph.cos();
                    im += v * ph.sin();
                }
                weight(k) * (re * re + im * im)
            })
            .sum();
        let energy: f64 = windowed.iter().map(|v| v * v).sum::<f64>() * fft as f64;
        assert!((spectral - naive).abs() < 1e-6 * naive, "fft {fft}: {spectral} vs naive {naive}");
        assert!((spectral - energy).abs() < 1e-6 * energy, "fft {fft}: {spectral} vs {energy}");
    }
}

#[test]
fn generator_loss_without_adversary_is_the_stft_loss() {
    let mut g = Graph::new();
    let x = g.constant(seeded(1, &[2, 1, 256]));
    let xhat = g.param(seeded(2, &[2, 1, 256]));
    let scores = g.param(seeded(3, &[2, 256]));
    let mask = g.constant(Tensor::ones(&[2, 256]));
    let fake = MaskedScores { scores, mask, active: 512 };
    let gl = generator_loss(&mut g, x, xhat, &fake, &fake, &GanLossConfig { lambda_adv: 0.0 }, &small_stft()).unwrap();
    let stft = multi_res_stft_loss(&mut g, x, xhat, &small_stft()).unwrap();
    assert_eq!(g.value(gl.total).data(), g.value(stft).data());
    let grads = g.backward(gl.total).unwrap();
    assert!(grads.get(scores).is_none_or(|t| t.data().iter().all(|v| *v == 0.0)));
}

/// Scaling the projection weights by `a` scales the projection term by `a`.
#[test]
fn projection_term_is_linear_in_embedding_weights() {
    let mut cfg = DiscriminatorConfig::voiced(4);
    cfg.aux_dim = 3;
    let d = Discriminator::new(cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let wave = seeded(4, &[1, 1, 128]);
    let feats = seeded(5, &[1, 3, 8]);
    let score_with = |a: f64| {
        let mut scaled = d.clone();
        for name in ["embed.weight", "embed.bias"] {
            let t = scaled.params.get_mut(name).unwrap();
            *t = t.map(|v| a * v);
        }
        let mut g = Graph::new();
        let p = scaled.params.bind(&mut g, false);
        let w = g.constant(wave.clone());
        let h = g.constant(feats.clone());
        let s = scaled.forward(&mut g, &p, w, Some(Conditioning::Frames { frames: h, hop: 16 })).unwrap();
        g.value(s).data().to_vec()
    };
    let base = score_with(0.0);
    let one = score_with(1.0);
    for a in [0.5, 2.0, -3.0] {
        let sa = score_with(a);
        for t in 0..base.len() {
            let want = a * (one[t] - base[t]);
            assert!((sa[t] - base[t] - want).abs() < 1e-10 * (1.0 + want.abs()));
        }
    }
}

#[test]
fn empty_region_contributes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut v = DiscriminatorConfig::voiced(4);
    v.aux_dim = 3;
    let mut uv = DiscriminatorConfig::unvoiced(4);
    uv.aux_dim = 3;
    let pair = VoicingAwareDiscriminators::new(v, uv, &mut rng).unwrap();
    let masks = BatchMasks::new(&[upsample_vuv(&[0, 0, 0, 0], 16).unwrap()]).unwrap();
    let mut g = Graph::new();
    let pv = pair.voiced.params.bind(&mut g, true);
    let puv = pair.unvoiced.params.bind(&mut g, true);
    let x = g.constant(seeded(1, &[1, 1, 64]));
    let h = g.constant(seeded(2, &[1, 3, 4]));
    let s = pair.scores(&mut g, &pv, &puv, x, x, Conditioning::Frames { frames: h, hop: 16 }, &masks).unwrap();
    let l = wavegan::losses::masked_discriminator_loss(&mut g, &s.v_real, &s.v_fake).unwrap();
    assert_eq!(g.value(l).data(), &[0.0]);
}
