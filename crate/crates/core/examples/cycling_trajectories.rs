//! Record discriminator scores on fixed probe points while training the
//! kernel discriminator and an MLP discriminator from the same seed, then
//! project both trajectories onto their top two principal components.
//!
//! cargo run --release --example cycling_trajectories -- [rounds]
//!
//! Writes trajectory_okgan.csv and trajectory_vgan.csv (round,pc1,pc2).

use okgan::diagnostics::{turning_angle_fraction, ScoreScale, TrajectoryRecorder};
use okgan::gan::{load_data, TrainConfig, Trainer, TrainerKind, TrainerState, TrainingHooks};

struct Record(TrajectoryRecorder);

impl TrainingHooks for Record {
    fn on_record(&mut self, state: &TrainerState) -> okgan::Result<()> {
        self.0.record_state(state, ScoreScale::Logit)
    }
}

fn main() -> okgan::Result<()> {
    let rounds = std::env::args().nth(1).map_or(300, |r| r.parse().expect("rounds must be an integer"));
    let mut config = TrainConfig::for_preset("grid25")?;
    config.rounds = rounds;
    config.eval_every = rounds + 1;
    config.record_every = 5;
    let data = load_data(&config)?;

    for (kind, tag) in [(TrainerKind::Okgan, "okgan"), (TrainerKind::Vanilla, "vgan")] {
        config.trainer = kind;
        let mut trainer = Trainer::new(config.clone(), data.clone())?;
        // same seed, same probes for both discriminators
        let mut recorder = Record(TrajectoryRecorder::for_seed(&data, config.probes, config.seed)?);
        recorder.0.record_state(trainer.state(), ScoreScale::Logit)?;
        trainer.run(&mut recorder)?;
        let path = format!("trajectory_{tag}.csv");
        let projection = recorder.0.write_csv(&path)?;
        println!(
            "{tag:5}: {} rows -> {path}, probes {}, sharp turns {:.3}",
            recorder.0.len(),
            &recorder.0.probe_hash()[..12],
            turning_angle_fraction(&projection).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
