//! Trains the desk configuration on the synthetic corpus and prints
//! progress. Usage: `desk_run [out_dir] [steps]`.

use std::path::PathBuf;
use std::time::Instant;

use wavegan::io::SyntheticSpec;
use wavegan::training::{train_loop, Corpus, TrainConfig, Trainer};

fn main() -> wavegan::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "desk_run".into()));
    let mut cfg = TrainConfig::desk();
    if let Some(steps) = args.next() {
        cfg.total_steps = steps.parse().expect("steps");
        cfg.d_freeze_steps = cfg.d_freeze_steps.min(cfg.total_steps - 1);
    }
    let corpus = Corpus::synthetic(&SyntheticSpec::desk(cfg.seed))?;
    let mut trainer = Trainer::new(cfg, corpus.stats.clone())?;
    let start = Instant::now();
    train_loop(&mut trainer, &corpus, &out, |m| {
        if m.step % 50 == 0 || m.step <= 10 {
            println!("{m} ({:.1}s)", start.elapsed().as_secs_f64());
        }
    })?;
    Ok(())
}
