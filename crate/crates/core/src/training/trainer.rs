use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::{Batch, Corpus};
use super::radam::Moments;
use crate::autograd::{Gradients, Graph, Var};
use crate::dsp::FeatureStats;
use crate::error::{Error, Result};
use crate::io::checkpoint::Checkpoint;
use crate::losses::{generator_loss, masked_adversarial_loss, masked_discriminator_loss, multi_res_stft_loss};
use crate::models::{Conditioning, Generator, ParamSet, VoicingAwareDiscriminators};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    GeneratorOnly,
    Joint,
}

/// Losses of one step. `step` counts completed steps, so the first row is 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub stft: f64,
    pub adv_v: f64,
    pub adv_uv: f64,
    pub d_v: f64,
    pub d_uv: f64,
}

impl StepMetrics {
    pub const CSV_HEADER: &'static str = "step,lr,stft,adv_v,adv_uv,d_v,d_uv";

    fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("lr", self.lr),
            ("stft", self.stft),
            ("adv_v", self.adv_v),
            ("adv_uv", self.adv_uv),
            ("d_v", self.d_v),
            ("d_uv", self.d_uv),
        ]
    }

    /// Errors on the first non-finite value, with the full row as context.
    pub fn check_finite(&self) -> Result<()> {
        match self.named().into_iter().find(|(_, v)| !v.is_finite()) {
            Some((metric, _)) => Err(Error::NonFiniteLoss {
                step: self.step,
                metric,
                dump: self.to_string(),
            }),
            None => Ok(()),
        }
    }

    pub fn csv_row(&self) -> String {
        let vals: Vec<String> = self.named().iter().map(|(_, v)| v.to_string()).collect();
        format!("{},{}", self.step, vals.join(","))
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed metrics row `{line}`"));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(bad());
        }
        let f = |i: usize| cols[i].parse::<f64>().map_err(|_| bad());
        Ok(Self {
            step: cols[0].parse().map_err(|_| bad())?,
            lr: f(1)?,
            stft: f(2)?,
            adv_v: f(3)?,
            adv_uv: f(4)?,
            d_v: f(5)?,
            d_uv: f(6)?,
        })
    }
}

impl fmt::Display for StepMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step {}", self.step)?;
        for (name, v) in self.named() {
            write!(f, " {name}={v:.6}")?;
        }
        Ok(())
    }
}

/// Networks, optimizer state and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub generator: Generator,
    pub discriminators: VoicingAwareDiscriminators,
    pub stats: FeatureStats,
    pub g_moments: Moments,
    pub dv_moments: Moments,
    pub duv_moments: Moments,
    /// Completed steps.
    pub step: usize,
}

fn grads_for(grads: &mut Gradients, vars: &[Var]) -> Vec<Option<Tensor>> {
    vars.iter().map(|v| grads.take(*v)).collect()
}

impl Trainer {
    /// Fresh networks initialised from `cfg.seed`.
    pub fn new(cfg: TrainConfig, stats: FeatureStats) -> Result<Self> {
        cfg.validate()?;
        super::heap::retain_freed_buffers();
        if stats.mean.len() != cfg.generator.aux_dim {
            return Err(Error::shape("trainer", "feature stats", cfg.generator.aux_dim, stats.mean.len()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let generator = Generator::new(cfg.generator.clone(), &mut rng)?;
        let discriminators = VoicingAwareDiscriminators::new(cfg.d_voiced.clone(), cfg.d_unvoiced.clone(), &mut rng)?;
        Ok(Self {
            g_moments: Moments::zeros_like(&generator.params),
            dv_moments: Moments::zeros_like(&discriminators.voiced.params),
            duv_moments: Moments::zeros_like(&discriminators.unvoiced.params),
            cfg,
            generator,
            discriminators,
            stats,
            step: 0,
        })
    }

    pub fn phase(&self) -> Phase {
        if self.step < self.cfg.d_freeze_steps {
            Phase::GeneratorOnly
        } else {
            Phase::Joint
        }
    }

    /// RNG for the step about to run; depends only on the seed and the step.
    pub fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.step as u64 + 1);
        rng
    }

    pub fn next_batch(&self, corpus: &Corpus) -> Result<Batch> {
        if corpus.hop != self.cfg.hop()? || corpus.sample_rate != self.cfg.sample_rate {
            return Err(Error::Config(format!(
                "corpus is {} Hz with hop {}, config expects {} Hz with hop {}",
                corpus.sample_rate,
                corpus.hop,
                self.cfg.sample_rate,
                self.cfg.hop()?
            )));
        }
        corpus.sample_batch(&mut self.step_rng(), self.cfg.batch_size, self.cfg.clip_samples)
    }

    /// Draws the step's batch from `corpus` and trains on it.
    pub fn step_on(&mut self, corpus: &Corpus) -> Result<StepMetrics> {
        let batch = self.next_batch(corpus)?;
        self.train_step(&batch)
    }

    /// One optimisation step. The generator is updated first; in the joint
    /// phase both discriminators are then updated on audio regenerated by
    /// the updated generator and detached from its parameters.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepMetrics> {
        let lr = self.cfg.lr_at(self.step);
        let t = self.step + 1;
        let phase = self.phase();
        let opt = self.cfg.optimizer();
        let gan = self.cfg.gan();

        // Generator update.
        let (stft, adv_v, adv_uv, g_grads, frozen_xhat) = {
            let mut g = Graph::new();
            let pg = self.generator.params.bind(&mut g, true);
            let g_vars: Vec<Var> = pg.vars().map(|(_, v)| v).collect();
            let x = g.constant(batch.wave.clone());
            let z = g.constant(batch.noise.clone());
            let frames = g.constant(batch.frames.clone());
            let cond = Conditioning::Frames { frames, hop: batch.hop };
            let xhat = self.generator.forward(&mut g, &pg, z, cond)?;
            let (loss, stft, adv_v, adv_uv) = match phase {
                Phase::Joint => {
                    let pv = self.discriminators.voiced.params.bind(&mut g, false);
                    let puv = self.discriminators.unvoiced.params.bind(&mut g, false);
                    let ctx = self.discriminators.prepare(&mut g, &pv, &puv, cond, &batch.masks)?;
                    let (v_fake, uv_fake) = self.discriminators.score_pair(&mut g, &pv, &puv, &ctx, xhat)?;
                    let l = generator_loss(&mut g, x, xhat, &v_fake, &uv_fake, &gan, &self.cfg.stft)?;
                    (l.total, l.stft, Some(l.adv_v), Some(l.adv_uv))
                }
                Phase::GeneratorOnly => {
                    let s = multi_res_stft_loss(&mut g, x, xhat, &self.cfg.stft)?;
                    (s, s, None, None)
                }
            };
            let read = |v: Option<Var>| v.map(|v| g.value(v).data()[0]);
            let (stft, adv_v, adv_uv) = (g.value(stft).data()[0], read(adv_v), read(adv_uv));
            if !g.value(loss).data()[0].is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: t,
                    metric: "generator loss",
                    dump: format!("stft={stft} adv_v={adv_v:?} adv_uv={adv_uv:?}"),
                });
            }
            let mut grads = g.backward(loss)?;
            // While D is frozen its pass only reports metrics, which are
            // taken on this output rather than a regenerated one.
            let frozen_xhat = (phase == Phase::GeneratorOnly).then(|| g.value(xhat).clone());
            (stft, adv_v, adv_uv, grads_for(&mut grads, &g_vars), frozen_xhat)
        };
        opt.step(&mut self.generator.params, &mut self.g_moments, &g_grads, lr, t)?;
        drop(g_grads);

        // Discriminator pass on fresh, detached generator output.
        let (adv_v, adv_uv, d_v, d_uv) = {
            let mut g = Graph::new();
            let train_d = phase == Phase::Joint;
            let pv = self.discriminators.voiced.params.bind(&mut g, train_d);
            let puv = self.discriminators.unvoiced.params.bind(&mut g, train_d);
            let v_vars: Vec<Var> = pv.vars().map(|(_, v)| v).collect();
            let uv_vars: Vec<Var> = puv.vars().map(|(_, v)| v).collect();
            let x = g.constant(batch.wave.clone());
            let frames = g.constant(batch.frames.clone());
            let cond = Conditioning::Frames { frames, hop: batch.hop };
            let xhat = match frozen_xhat {
                Some(v) => g.constant(v),
                None => {
                    let pg = self.generator.params.bind(&mut g, false);
                    let z = g.constant(batch.noise.clone());
                    let xhat = self.generator.forward(&mut g, &pg, z, cond)?;
                    g.detach(xhat)
                }
            };
            let ctx = self.discriminators.prepare(&mut g, &pv, &puv, cond, &batch.masks)?;
            let (v_real, uv_real) = self.discriminators.score_pair(&mut g, &pv, &puv, &ctx, x)?;
            let (v_fake, uv_fake) = self.discriminators.score_pair(&mut g, &pv, &puv, &ctx, xhat)?;
            let d_v = masked_discriminator_loss(&mut g, &v_real, &v_fake)?;
            let d_uv = masked_discriminator_loss(&mut g, &uv_real, &uv_fake)?;
            let value = |g: &Graph, v: Var| g.value(v).data()[0];
            // During the freeze the adversarial terms are only reported.
            let adv_v = match adv_v {
                Some(a) => a,
                None => {
                    let a = masked_adversarial_loss(&mut g, &v_fake)?;
                    value(&g, a)
                }
            };
            let adv_uv = match adv_uv {
                Some(a) => a,
                None => {
                    let a = masked_adversarial_loss(&mut g, &uv_fake)?;
                    value(&g, a)
                }
            };
            let (dv_val, duv_val) = (value(&g, d_v), value(&g, d_uv));
            if train_d {
                for (name, v) in [("d_v", dv_val), ("d_uv", duv_val)] {
                    if !v.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            step: t,
                            metric: name,
                            dump: format!("stft={stft} d_v={dv_val} d_uv={duv_val}"),
                        });
                    }
                }
                let total = g.add(d_v, d_uv)?;
                let mut grads = g.backward(total)?;
                let gv = grads_for(&mut grads, &v_vars);
                let guv = grads_for(&mut grads, &uv_vars);
                drop(grads);
                drop(g);
                opt.step(&mut self.discriminators.voiced.params, &mut self.dv_moments, &gv, lr, t)?;
                opt.step(&mut self.discriminators.unvoiced.params, &mut self.duv_moments, &guv, lr, t)?;
            }
            (adv_v, adv_uv, dv_val, duv_val)
        };

        self.step = t;
        let m = StepMetrics {
            step: t,
            lr,
            stft,
            adv_v,
            adv_uv,
            d_v,
            d_uv,
        };
        m.check_finite()?;
        Ok(m)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint {
            config: self.cfg.to_kv(),
            tensors: Vec::new(),
        };
        ck.push("state.step", Tensor::scalar(self.step as f64));
        ck.push("stats.mean", Tensor::from_vec(self.stats.mean.clone()));
        ck.push("stats.std", Tensor::from_vec(self.stats.std.clone()));
        self.generator.params.write_to(&mut ck, "g.");
        self.discriminators.voiced.params.write_to(&mut ck, "dv.");
        self.discriminators.unvoiced.params.write_to(&mut ck, "duv.");
        self.g_moments.write_to(&mut ck, "opt.g.");
        self.dv_moments.write_to(&mut ck, "opt.dv.");
        self.duv_moments.write_to(&mut ck, "opt.duv.");
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = TrainConfig::from_kv(&ck.config)?;
        let stats = read_stats(ck)?;
        let mut t = Self::new(cfg, stats)?;
        let step = ck
            .tensor("state.step")
            .ok_or_else(|| Error::Config("checkpoint lacks `state.step`".into()))?
            .item()?;
        t.step = step as usize;
        t.generator.params.load_from(ck, "g.")?;
        t.discriminators.voiced.params.load_from(ck, "dv.")?;
        t.discriminators.unvoiced.params.load_from(ck, "duv.")?;
        t.g_moments.load_from(ck, "opt.g.")?;
        t.dv_moments.load_from(ck, "opt.dv.")?;
        t.duv_moments.load_from(ck, "opt.duv.")?;
        Ok(t)
    }
}

pub(crate) fn read_stats(ck: &Checkpoint) -> Result<FeatureStats> {
    let get = |name: &str| {
        ck.tensor(name)
            .map(|t| t.data().to_vec())
            .ok_or_else(|| Error::Config(format!("checkpoint lacks `{name}`")))
    };
    Ok(FeatureStats {
        mean: get("stats.mean")?,
        std: get("stats.std")?,
    })
}

/// Snapshot parameters of a network, for comparisons in tests and tools.
pub fn snapshot(p: &ParamSet) -> Vec<u64> {
    p.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
}

pub fn checkpoint_path(out_dir: &Path, step: usize) -> PathBuf {
    out_dir.join(format!("checkpoint_{step:07}.vwg"))
}

pub const METRICS_FILE: &str = "metrics.csv";

/// Runs `trainer` up to `cfg.total_steps`, appending to `out_dir/metrics.csv`
/// and saving a checkpoint every `checkpoint_every` steps and at the end.
/// Rows already in the log beyond the trainer's step are discarded first,
/// so a resumed run produces the same log as an uninterrupted one.
pub fn train_loop(
    trainer: &mut Trainer,
    corpus: &Corpus,
    out_dir: &Path,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<Vec<StepMetrics>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(METRICS_FILE);
    let mut rows = if trainer.step > 0 && log_path.exists() {
        read_metrics(&log_path)?
    } else {
        Vec::new()
    };
    rows.retain(|r| r.step <= trainer.step);
    let mut text = String::from(StepMetrics::CSV_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    fs::write(&log_path, &text).map_err(|e| Error::io(&log_path, e))?;
    let mut log = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let total = trainer.cfg.total_steps;
    while trainer.step < total {
        let m = trainer.step_on(corpus)?;
        writeln!(log, "{}", m.csv_row()).map_err(|e| Error::io(&log_path, e))?;
        on_step(&m);
        rows.push(m);
        if trainer.step % trainer.cfg.checkpoint_every == 0 || trainer.step == total {
            trainer.to_checkpoint().save(checkpoint_path(out_dir, trainer.step))?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(StepMetrics::CSV_HEADER) {
        return Err(Error::format(path, "missing metrics header"));
    }
    lines.filter(|l| !l.is_empty()).map(StepMetrics::parse_csv_row).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::SyntheticSpec;

    fn tiny_cfg() -> TrainConfig {
        let mut c = TrainConfig::desk();
        c.generator.layers = 2;
        c.generator.cycles = 1;
        c.generator.residual_ch = 4;
        c.generator.skip_ch = 4;
        c.d_voiced.channels = 4;
        c.d_unvoiced.channels = 4;
        c.batch_size = 2;
        c.clip_samples = 800;
        c.total_steps = 4;
        c.d_freeze_steps = 2;
        c.checkpoint_every = 2;
        c
    }

    fn corpus() -> Corpus {
        Corpus::synthetic(&SyntheticSpec {
            n_clips: 3,
            ..SyntheticSpec::desk(7)
        })
        .unwrap()
    }

    #[test]
    fn csv_rows_round_trip() {
        let m = StepMetrics {
            step: 3,
            lr: 1e-4,
            stft: 0.1 + 0.2,
            adv_v: 1.0 / 3.0,
            adv_uv: 0.0,
            d_v: 2.5,
            d_uv: 1e-300,
        };
        assert_eq!(StepMetrics::parse_csv_row(&m.csv_row()).unwrap(), m);
    }

    #[test]
    fn non_finite_metric_is_reported() {
        let m = StepMetrics {
            step: 9,
            lr: 1e-4,
            stft: f64::NAN,
            adv_v: 0.0,
            adv_uv: 0.0,
            d_v: 0.0,
            d_uv: 0.0,
        };
        let e = m.check_finite().unwrap_err().to_string();
        assert!(e.contains("stft") && e.contains("step 9"), "{e}");
    }

    #[test]
    fn phases_follow_step() {
        let c = corpus();
        let mut t = Trainer::new(tiny_cfg(), c.stats.clone()).unwrap();
        assert_eq!(t.phase(), Phase::GeneratorOnly);
        let dv = snapshot(&t.discriminators.voiced.params);
        t.step_on(&c).unwrap();
        t.step_on(&c).unwrap();
        assert_eq!(snapshot(&t.discriminators.voiced.params), dv);
        assert_eq!(t.phase(), Phase::Joint);
        t.step_on(&c).unwrap();
        assert_ne!(snapshot(&t.discriminators.voiced.params), dv);
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = corpus();
        let mut t = Trainer::new(tiny_cfg(), c.stats.clone()).unwrap();
        t.step_on(&c).unwrap();
        let back = Trainer::from_checkpoint(&t.to_checkpoint()).unwrap();
        assert_eq!(back, t);
    }
}
