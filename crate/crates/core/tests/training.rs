use wavegan::io::checkpoint::Checkpoint;
use wavegan::io::SyntheticSpec;
use wavegan::losses::stft_loss_between;
use wavegan::training::trainer::snapshot;
use wavegan::training::{Corpus, TrainConfig, Trainer, Vocoder};

fn quick_config(steps: usize) -> TrainConfig {
    TrainConfig {
        total_steps: steps,
        d_freeze_steps: steps - 1,
        batch_size: 2,
        clip_samples: 2_000,
        ..TrainConfig::desk()
    }
}

/// Mean loss of an untrained generator over the first clips of `corpus`.
fn untrained_baseline(corpus: &Corpus, cfg: &TrainConfig, clips: &[(Vec<f64>, wavegan::dsp::ConditionFeatures)]) -> f64 {
    let v = Vocoder::untrained(cfg.generator.clone(), corpus.stats.clone(), cfg.sample_rate, cfg.seed).unwrap();
    let total: f64 = clips
        .iter()
        .map(|(wave, feat)| stft_loss_between(wave, &v.synthesize(feat, 0).unwrap(), &cfg.stft).unwrap())
        .sum();
    total / clips.len() as f64
}

fn raw_clips(spec: &SyntheticSpec) -> Vec<(Vec<f64>, wavegan::dsp::ConditionFeatures)> {
    wavegan::io::make_synthetic_corpus(spec)
        .unwrap()
        .into_iter()
        .map(|c| {
            let f = wavegan::dsp::extract_features(&c.clip, spec.frame_shift_ms).unwrap();
            (c.clip.samples, f)
        })
        .collect()
}

#[test]
fn trained_synthesis_beats_untrained_baseline_on_held_out_clip() {
    let cfg = quick_config(150);
    let corpus = Corpus::synthetic(&SyntheticSpec::desk(42)).unwrap();
    let mut trainer = Trainer::new(cfg.clone(), corpus.stats.clone()).unwrap();
    while trainer.step < cfg.total_steps {
        trainer.step_on(&corpus).unwrap();
    }
    let train_clips = raw_clips(&SyntheticSpec {
        n_clips: 8,
        ..SyntheticSpec::desk(42)
    });
    let baseline = untrained_baseline(&corpus, &cfg, &train_clips);

    let held_out = raw_clips(&SyntheticSpec {
        n_clips: 1,
        ..SyntheticSpec::desk(4242)
    });
    let (wave, feat) = &held_out[0];
    let vocoder = Vocoder::from_checkpoint(&trainer.to_checkpoint()).unwrap();
    let out = vocoder.synthesize(feat, 0).unwrap();
    assert_eq!(out.len(), feat.n_frames() * vocoder.hop().unwrap());
    let trained = stft_loss_between(wave, &out, &cfg.stft).unwrap();
    assert!(trained < baseline, "trained {trained} vs untrained baseline {baseline}");
}

#[test]
fn lambda_zero_joint_step_equals_generator_only_step() {
    let corpus = Corpus::synthetic(&SyntheticSpec {
        n_clips: 6,
        ..SyntheticSpec::desk(3)
    })
    .unwrap();
    let base = TrainConfig {
        lambda_adv: 0.0,
        ..quick_config(3)
    };
    let mut joint = Trainer::new(
        TrainConfig {
            d_freeze_steps: 1,
            ..base.clone()
        },
        corpus.stats.clone(),
    )
    .unwrap();
    let mut g_only = Trainer::new(base, corpus.stats.clone()).unwrap();
    for _ in 0..2 {
        joint.step_on(&corpus).unwrap();
        g_only.step_on(&corpus).unwrap();
    }
    assert_eq!(snapshot(&joint.generator.params), snapshot(&g_only.generator.params));
    assert_ne!(
        snapshot(&joint.discriminators.voiced.params),
        snapshot(&g_only.discriminators.voiced.params)
    );
}

#[test]
fn same_seed_same_trajectory_and_resume() {
    let corpus = Corpus::synthetic(&SyntheticSpec {
        n_clips: 6,
        ..SyntheticSpec::desk(5)
    })
    .unwrap();
    let cfg = TrainConfig {
        d_freeze_steps: 2,
        ..quick_config(5)
    };
    let run = |from: Option<Checkpoint>| {
        let mut t = match from {
            Some(ck) => Trainer::from_checkpoint(&ck).unwrap(),
            None => Trainer::new(cfg.clone(), corpus.stats.clone()).unwrap(),
        };
        let mut rows = Vec::new();
        let mut mid = None;
        while t.step < cfg.total_steps {
            rows.push(t.step_on(&corpus).unwrap());
            if t.step == 3 {
                mid = Some(Checkpoint::decode(&t.to_checkpoint().encode(), "mem".as_ref()).unwrap());
            }
        }
        (t, rows, mid)
    };
    let (a, rows_a, mid) = run(None);
    let (b, rows_b, _) = run(None);
    assert_eq!(a, b);
    assert_eq!(rows_a, rows_b);
    let (c, rows_c, _) = run(mid);
    assert_eq!(c, a);
    assert_eq!(rows_c[..], rows_a[3..]);
}
