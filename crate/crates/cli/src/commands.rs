use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use wavegan::dsp::{extract_features, FeatureStats, StftConfig};
use wavegan::gradcheck::gradient_suite;
use wavegan::io::checkpoint::Checkpoint;
use wavegan::io::{
    make_synthetic_corpus, read_features, read_manifest, read_wav, write_features, write_manifest, write_spectrogram,
    write_wav, ManifestEntry, SyntheticSpec,
};
use wavegan::losses::{stft_loss_between, StftLossConfig};
use wavegan::models::receptive_field;
use wavegan::training::{train_loop, Corpus, TrainConfig, Trainer, Vocoder};
use wavegan::{Error, Result};

use crate::{ConfigArgs, InspectArgs, SynthArgs, SynthCorpusArgs, TrainArgs};

const MANIFEST: &str = "manifest.tsv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "clip".into(), |s| s.to_string_lossy().into_owned())
}

pub fn featurize(wavs: &[PathBuf], out: &Path, frame_shift_ms: f64) -> Result<()> {
    create_dir(out)?;
    let mut entries = Vec::with_capacity(wavs.len());
    for wav in wavs {
        let clip = read_wav(wav)?;
        let feat = extract_features(&clip, frame_shift_ms)?;
        let cache = out.join(format!("{}.vwf", stem(wav)));
        write_features(&cache, &feat)?;
        let wav = fs::canonicalize(wav).unwrap_or_else(|_| wav.clone());
        entries.push(ManifestEntry { wav, features: cache });
    }
    let manifest = out.join(MANIFEST);
    write_manifest(&manifest, &entries)?;
    println!("{} clips -> {}", entries.len(), manifest.display());
    Ok(())
}

pub fn synth_corpus(a: &SynthCorpusArgs) -> Result<()> {
    let spec = SyntheticSpec {
        seed: a.seed,
        n_clips: a.clips,
        clip_seconds: a.seconds,
        sample_rate: a.sample_rate,
        ..SyntheticSpec::desk(a.seed)
    };
    let (wav_dir, feat_dir) = (a.out.join("wav"), a.out.join("features"));
    create_dir(&wav_dir)?;
    create_dir(&feat_dir)?;
    let mut entries = Vec::new();
    for (i, c) in make_synthetic_corpus(&spec)?.iter().enumerate() {
        let wav = wav_dir.join(format!("clip_{i:03}.wav"));
        write_wav(&wav, &c.clip.samples, c.clip.sample_rate)?;
        // Analyse what a reader of the WAV sees, after PCM16 quantisation.
        let feat = extract_features(&read_wav(&wav)?, spec.frame_shift_ms)?;
        let features = feat_dir.join(format!("clip_{i:03}.vwf"));
        write_features(&features, &feat)?;
        entries.push(ManifestEntry { wav, features });
    }
    let manifest = a.out.join(MANIFEST);
    write_manifest(&manifest, &entries)?;
    println!("{} clips -> {}", entries.len(), manifest.display());
    Ok(())
}

fn load_config(a: &ConfigArgs) -> Result<TrainConfig> {
    let base = if a.desk { TrainConfig::desk() } else { TrainConfig::full_scale() };
    match &a.config {
        Some(path) => TrainConfig::load(base, path),
        None => Ok(base),
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let entries = read_manifest(&a.manifest)?;
    let (mut trainer, corpus) = match &a.resume {
        Some(ck) => {
            let mut trainer = Trainer::from_checkpoint(&Checkpoint::load(ck)?)?;
            // The seed drives every batch, so only the step budget may change.
            if a.seed.is_some_and(|s| s != trainer.cfg.seed) {
                return Err(Error::Config("--seed cannot change on resume".into()));
            }
            if let Some(steps) = a.steps {
                trainer.cfg.total_steps = steps;
                trainer.cfg.validate()?;
            }
            let corpus = Corpus::from_manifest(&entries, Some(trainer.stats.clone()))?;
            (trainer, corpus)
        }
        None => {
            let mut cfg = load_config(&a.config)?;
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            if let Some(steps) = a.steps {
                cfg.total_steps = steps;
            }
            let corpus = Corpus::from_manifest(&entries, None)?;
            (Trainer::new(cfg, corpus.stats.clone())?, corpus)
        }
    };
    let start = Instant::now();
    let every = a.log_every;
    let first = trainer.step;
    train_loop(&mut trainer, &corpus, &a.out, |m| {
        if every > 0 && m.step % every == 0 {
            println!("{m} ({:.1}s)", start.elapsed().as_secs_f64());
        }
    })?;
    println!(
        "trained steps {}..={} in {:.1}s -> {}",
        first + 1,
        trainer.step,
        start.elapsed().as_secs_f64(),
        a.out.display()
    );
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let vocoder = Vocoder::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    let (feat, reference) = match (&a.features, &a.wav) {
        (Some(cache), _) => (read_features(cache)?, None),
        (None, Some(wav)) => {
            let clip = read_wav(wav)?;
            if clip.sample_rate != vocoder.sample_rate {
                return Err(Error::Config(format!(
                    "{} is {} Hz, model is {} Hz",
                    wav.display(),
                    clip.sample_rate,
                    vocoder.sample_rate
                )));
            }
            (extract_features(&clip, vocoder.frame_shift_ms)?, Some(clip.samples))
        }
        (None, None) => unreachable!("clap requires --features or --wav"),
    };
    let samples = vocoder.synthesize(&feat, a.seed)?;
    let clipped = write_wav(&a.out, &samples, vocoder.sample_rate)?;
    println!(
        "{} samples ({:.3}s) -> {}{}",
        samples.len(),
        samples.len() as f64 / vocoder.sample_rate as f64,
        a.out.display(),
        if clipped > 0 { format!(", {clipped} samples clipped") } else { String::new() }
    );
    let spec_cfg = StftConfig::multi_resolution(vocoder.sample_rate)[0].clone();
    if let Some(path) = &a.dump_spec {
        let (frames, bins) = write_spectrogram(path, &samples, &spec_cfg)?;
        println!("spectrogram {frames}x{bins} -> {}", path.display());
    }
    if let Some(reference) = reference {
        if let Some(path) = &a.dump_reference {
            let (frames, bins) = write_spectrogram(path, &reference, &spec_cfg)?;
            println!("reference spectrogram {frames}x{bins} -> {}", path.display());
        }
        let loss = stft_loss_between(&reference, &samples, &StftLossConfig::for_rate(vocoder.sample_rate))?;
        println!("multi-resolution STFT loss vs input: {loss:.6}");
    }
    Ok(())
}

pub fn inspect(a: &InspectArgs) -> Result<()> {
    let cfg = match &a.checkpoint {
        Some(path) => TrainConfig::from_kv(&Checkpoint::load(path)?.config)?,
        None => load_config(&a.config)?,
    };
    let t = Trainer::new(cfg.clone(), FeatureStats::identity(cfg.generator.aux_dim))?;
    let g = &cfg.generator;
    println!("generator");
    println!("  layers {} in {} cycles, kernel {}", g.layers, g.cycles, g.kernel);
    println!("  residual {} skip {} aux {}", g.residual_ch, g.skip_ch, g.aux_dim);
    println!("  dilations {:?}", g.dilations());
    println!("  receptive field {}", g.receptive_field());
    println!("  parameters {}", t.generator.params.numel());
    let ds = [
        ("voiced discriminator", &cfg.d_voiced, &t.discriminators.voiced.params),
        ("unvoiced discriminator", &cfg.d_unvoiced, &t.discriminators.unvoiced.params),
    ];
    for (name, d, params) in ds {
        println!("{name}");
        println!("  conv layers {}, channels {}, kernel {}", d.conv_layers, d.channels, d.kernel);
        println!("  dilations {:?}", d.dilations);
        println!("  receptive field {}", receptive_field(d.kernel, &d.dilations));
        println!("  parameters {}", params.numel());
    }
    println!("training");
    println!(
        "  {} Hz, hop {}, {} steps ({} generator-only), batch {} x {} samples",
        cfg.sample_rate,
        cfg.hop()?,
        cfg.total_steps,
        cfg.d_freeze_steps,
        cfg.batch_size,
        cfg.clip_samples
    );
    Ok(())
}

pub fn gradcheck(seed: u64) -> Result<bool> {
    let start = Instant::now();
    let reports = gradient_suite(seed)?;
    for r in &reports {
        println!(
            "{} {:<40} max rel err {:.3e} (tol {:.0e})",
            if r.passed() { "ok  " } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.tolerance
        );
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!(
        "{} checks, {failed} failed, {:.1}s",
        reports.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(failed == 0)
}
