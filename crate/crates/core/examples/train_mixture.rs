//! Train the kernel-discriminator GAN on a synthetic mixture preset and print
//! mode coverage, high-quality percentage and reverse KL as training goes.
//!
//! cargo run --release --example train_mixture -- ring8 2000 [seed]
//!
//! Presets: grid25, grid49, ring8, circle. The preset's default settings are
//! used unchanged apart from the round count.

use std::time::Instant;

use okgan::gan::{train_okgan_2d, TrainConfig, TrainerState, TrainingHooks};
use okgan::metrics::evaluate;
use okgan::numerics::{RngState, Stream};
use okgan::synthdata::{save_vectors_csv, GaussianMixtureSpec};

struct Progress {
    spec: GaussianMixtureSpec,
    rng: RngState,
    samples: usize,
    started: Instant,
}

impl TrainingHooks for Progress {
    fn on_eval(&mut self, state: &TrainerState) -> okgan::Result<()> {
        let x = state.generate(self.samples, &mut self.rng)?;
        let r = evaluate(&x, &self.spec, state.round)?;
        let center = r.center_captured.map_or(String::new(), |c| format!("  center {c}"));
        println!(
            "round {:5}  {:6.0}s  modes {:3}/{}  hq {:5.1}%  reverse kl {:.4}{center}",
            r.round,
            self.started.elapsed().as_secs_f64(),
            r.modes_captured,
            r.total_modes,
            r.high_quality_pct,
            r.reverse_kl
        );
        Ok(())
    }
}

fn main() -> okgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let preset = args.first().map_or("ring8", String::as_str);
    let mut config = TrainConfig::for_preset(preset)?;
    if let Some(r) = args.get(1) {
        config.rounds = r.parse().expect("rounds must be an integer");
    }
    if let Some(s) = args.get(2) {
        config.seed = s.parse().expect("seed must be an integer");
    }
    config.eval_every = (config.rounds / 20).max(1);

    let mut progress = Progress {
        spec: GaussianMixtureSpec::preset(preset)?,
        rng: RngState::substream(config.seed, Stream::Eval),
        samples: config.eval_samples,
        started: Instant::now(),
    };
    let state = train_okgan_2d(&config, &mut progress)?;

    let out = format!("{preset}_samples.csv");
    let x = state.generate(config.eval_samples, &mut RngState::substream(config.seed, Stream::Eval))?;
    save_vectors_csv(&out, &x)?;
    println!("wrote {} samples to {out}", x.rows());
    Ok(())
}
