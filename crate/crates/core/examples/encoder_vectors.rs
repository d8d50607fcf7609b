//! Encoder variant on flat vectors: the classifier works on learned features
//! instead of raw inputs. Uses a small synthetic "image" dataset of noisy
//! bar patterns so it runs without downloads; point it at a CSV or .bin file
//! of flat vectors to train on real data.
//!
//! cargo run --release --example encoder_vectors -- [vectors.csv] [rounds]

use okgan::gan::{train_okgan_encoder, TrainConfig, TrainerState, TrainingHooks};
use okgan::numerics::{Matrix, RngState};
use okgan::synthdata::{load_vectors, DataSource, VectorDataset};

struct Losses;

impl TrainingHooks for Losses {
    fn after_encoder_step(&mut self, state: &TrainerState, loss: f64) {
        if state.round.is_multiple_of(25) {
            println!("round {:4}  encoder loss {loss:.4}", state.round);
        }
    }
}

/// 8x8 images with one bright horizontal or vertical bar plus noise, in [-1, 1].
fn bars(rng: &mut RngState, n: usize) -> okgan::Result<VectorDataset> {
    let mut data = Vec::with_capacity(n * 64);
    for _ in 0..n {
        let line = (rng.uniform() * 8.0) as usize % 8;
        let vertical = rng.uniform() < 0.5;
        for r in 0..8 {
            for c in 0..8 {
                let on = if vertical { c == line } else { r == line };
                data.push(if on { 0.9 } else { -0.9 } + 0.05 * rng.normal());
            }
        }
    }
    VectorDataset::new(Matrix::from_vec(n, 64, data)?)
}

fn main() -> okgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dataset = match args.first() {
        Some(path) => load_vectors(path, true)?,
        None => bars(&mut RngState::new(3), 2000)?,
    };
    let mut config = TrainConfig::for_vectors("bars");
    config.rounds = args.get(1).map_or(200, |r| r.parse().expect("rounds must be an integer"));
    config.generator.hidden = vec![128, 128];
    config.encoder.hidden = vec![128];
    config.encoder.output_dim = 16;
    config.noise_dim = 16;

    let state = train_okgan_encoder(&config, DataSource::Vectors(dataset), &mut Losses)?;
    let x = state.generate(4, &mut RngState::new(0))?;
    for row in x.row_iter() {
        let img: String = row
            .chunks(8)
            .map(|r| r.iter().map(|&v| if v > 0.0 { '#' } else { '.' }).collect::<String>() + "\n")
            .collect();
        println!("{img}");
    }
    Ok(())
}
