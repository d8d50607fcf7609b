//! Save a checkpoint halfway through training, resume from it and confirm
//! the resumed run ends in exactly the same state as an uninterrupted one.
//!
//! cargo run --release --example checkpoint_resume

use okgan::gan::{load_checkpoint, load_data, save_checkpoint, NoHooks, TrainConfig, Trainer};

fn main() -> okgan::Result<()> {
    let mut config = TrainConfig::for_preset("circle")?;
    config.generator.hidden = vec![64, 64];
    config.rounds = 20;
    let data = load_data(&config)?;

    let mut straight = Trainer::new(config.clone(), data.clone())?;
    straight.run_rounds(10, &mut NoHooks)?;
    let path = std::env::temp_dir().join("okgan_example.ckpt");
    save_checkpoint(straight.state(), &path)?;
    straight.run_rounds(10, &mut NoHooks)?;

    let mut resumed = Trainer::resume(config, data, load_checkpoint(&path)?)?;
    println!("resumed at round {}", resumed.state().round);
    resumed.run_rounds(10, &mut NoHooks)?;

    let (a, b) = (straight.state().fingerprint(), resumed.state().fingerprint());
    println!("uninterrupted {}\nresumed       {}", &a[..16], &b[..16]);
    assert_eq!(a, b, "resumed training diverged from the uninterrupted run");
    println!("identical after {} rounds", resumed.state().round);
    Ok(())
}
