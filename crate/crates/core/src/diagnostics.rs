//! Discriminator score trajectories on fixed probe points and their 2-D PCA
//! projection, plus wall-clock timing of classifier updates.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::gan::{TrainConfig, TrainerState};
use crate::numerics::{pca_top2, standard_normal, Matrix, RngState, Stream};
use crate::okc::BudgetedKernelMachine;
use crate::synthdata::DataSource;
use crate::util::Fingerprint;

pub const DEFAULT_PROBES: usize = 256;

/// How network discriminators are scored on the probes. Kernel classifiers
/// always report their raw value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScoreScale {
    #[default]
    Logit,
    Probability,
}

/// Scores of a discriminator on fixed probe points, one row per recorded round.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecorder {
    probes: Matrix,
    rows: Vec<Vec<f64>>,
    rounds: Vec<u64>,
}

impl TrajectoryRecorder {
    /// Draws `m` probes from the real distribution.
    pub fn init_probes(source: &DataSource, m: usize, rng: &mut RngState) -> Result<Self> {
        if m < 2 {
            return Err(invalid(format!("need at least 2 probes, got {m}")));
        }
        Self::from_probes(source.sample(rng, m))
    }

    /// Probes drawn from the dedicated probe stream of `seed`, so two runs
    /// with the same seed share them.
    pub fn for_seed(source: &DataSource, m: usize, seed: u64) -> Result<Self> {
        Self::init_probes(source, m, &mut RngState::substream(seed, Stream::Probes))
    }

    pub fn from_probes(probes: Matrix) -> Result<Self> {
        if probes.rows() < 2 {
            return Err(invalid("need at least 2 probes"));
        }
        Ok(Self {
            probes,
            rows: Vec::new(),
            rounds: Vec::new(),
        })
    }

    pub fn probes(&self) -> &Matrix {
        &self.probes
    }

    pub fn probe_hash(&self) -> String {
        Fingerprint::new().f64s(self.probes.as_slice()).hex()
    }

    pub fn rounds(&self) -> &[u64] {
        &self.rounds
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends `score_fn(probes)` as the row for `round`.
    pub fn record<F>(&mut self, score_fn: F, round: u64) -> Result<()>
    where
        F: FnOnce(&Matrix) -> Result<Vec<f64>>,
    {
        if self.rounds.last().is_some_and(|&last| round <= last) {
            return Err(invalid(format!(
                "round {round} recorded after round {}",
                self.rounds.last().expect("non-empty")
            )));
        }
        let row = score_fn(&self.probes)?;
        if row.len() != self.probes.rows() {
            return Err(invalid(format!(
                "score function returned {} values for {} probes",
                row.len(),
                self.probes.rows()
            )));
        }
        self.rows.push(row);
        self.rounds.push(round);
        Ok(())
    }

    /// Records the trainer's discriminator at its current round.
    pub fn record_state(&mut self, state: &TrainerState, scale: ScoreScale) -> Result<()> {
        let network = state.machine().is_none();
        self.record(
            |x| {
                let mut s = state.discriminator_scores(x)?;
                if network && scale == ScoreScale::Probability {
                    s.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
                }
                Ok(s)
            },
            state.round,
        )
    }

    /// The recorded rows as a `T x m` matrix.
    pub fn matrix(&self) -> Result<Matrix> {
        Matrix::from_vec(self.rows.len(), self.probes.rows(), self.rows.concat())
    }

    /// Rows projected on their top two principal directions (`T x 2`).
    pub fn project(&self) -> Result<Matrix> {
        if self.rows.len() < 3 {
            return Err(invalid(format!("projection needs at least 3 recorded rounds, got {}", self.rows.len())));
        }
        pca_top2(&self.matrix()?)
    }

    /// Writes `round,pc1,pc2`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<Matrix> {
        let proj = self.project()?;
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "round,pc1,pc2")?;
        for (r, p) in self.rounds.iter().zip(proj.row_iter()) {
            writeln!(w, "{r},{},{}", p[0], p[1])?;
        }
        w.flush()?;
        Ok(proj)
    }
}

/// Fraction of consecutive step pairs along a projected trajectory whose
/// direction turns by more than 90 degrees. A descriptive heuristic for
/// oscillation; zero-length steps are skipped. `None` with fewer than two
/// non-zero steps.
pub fn turning_angle_fraction(projection: &Matrix) -> Option<f64> {
    let steps: Vec<[f64; 2]> = projection
        .row_iter()
        .zip(projection.row_iter().skip(1))
        .map(|(a, b)| [b[0] - a[0], b[1] - a[1]])
        .filter(|s| s[0] != 0.0 || s[1] != 0.0)
        .collect();
    if steps.len() < 2 {
        return None;
    }
    let sharp = steps
        .windows(2)
        .filter(|w| w[0][0] * w[1][0] + w[0][1] * w[1][1] < 0.0)
        .count();
    Some(sharp as f64 / (steps.len() - 1) as f64)
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("linear fit needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(invalid("linear fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Wall-clock cost of one classifier round per batch size.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingReport {
    pub sizes: Vec<usize>,
    pub mean_seconds: Vec<f64>,
    pub std_seconds: Vec<f64>,
    pub median_seconds: Vec<f64>,
    /// Timed repetitions per size (after the discarded warm-up).
    pub reps: usize,
}

impl TimingReport {
    pub fn fit(&self) -> Result<LinearFit> {
        let x: Vec<f64> = self.sizes.iter().map(|&s| s as f64).collect();
        linear_fit(&x, &self.mean_seconds)
    }

    /// Writes `batch_size,mean_seconds,std_seconds`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "batch_size,mean_seconds,std_seconds")?;
        for ((s, m), sd) in self.sizes.iter().zip(&self.mean_seconds).zip(&self.std_seconds) {
            writeln!(w, "{s},{m},{sd}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Times `reps` classifier rounds on `2 * size` examples for each size, on a
/// classifier whose budget is already full. One extra leading repetition per
/// size is run and discarded.
pub fn time_discriminator_update(config: &TrainConfig, sizes: &[usize], reps: usize) -> Result<TimingReport> {
    if reps < 3 {
        return Err(invalid("timing needs at least 3 repetitions"));
    }
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(invalid("batch sizes must be positive and strictly increasing"));
    }
    let source = crate::gan::load_data(config)?;
    let mut data_rng = RngState::substream(config.seed, Stream::Data);
    let mut noise_rng = RngState::substream(config.seed, Stream::Noise);
    let mut shuffle_rng = RngState::substream(config.seed, Stream::Shuffle);
    let dim = source.dim();

    let mut report = TimingReport {
        sizes: sizes.to_vec(),
        mean_seconds: Vec::new(),
        std_seconds: Vec::new(),
        median_seconds: Vec::new(),
        reps,
    };
    for &size in sizes {
        if config.minibatch > 2 * size {
            return Err(invalid(format!("minibatch {} exceeds 2 x batch size {size}", config.minibatch)));
        }
        let mut machine = BudgetedKernelMachine::new(config.kernel.clone(), config.classifier)?;
        while machine.len() < config.classifier.budget {
            let reals = source.sample(&mut data_rng, size);
            let fakes = standard_normal(&mut noise_rng, size, dim);
            machine.fit_round(&reals, &fakes, config.minibatch, &mut shuffle_rng)?;
        }
        let mut times = Vec::with_capacity(reps);
        for rep in 0..=reps {
            let reals = source.sample(&mut data_rng, size);
            let fakes = standard_normal(&mut noise_rng, size, dim);
            let start = Instant::now();
            machine.fit_round(&reals, &fakes, config.minibatch, &mut shuffle_rng)?;
            let elapsed = start.elapsed().as_secs_f64();
            if rep > 0 {
                times.push(elapsed);
            }
        }
        let mean = times.iter().sum::<f64>() / reps as f64;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        times.sort_by(f64::total_cmp);
        let median = if reps % 2 == 1 {
            times[reps / 2]
        } else {
            0.5 * (times[reps / 2 - 1] + times[reps / 2])
        };
        report.mean_seconds.push(mean);
        report.std_seconds.push(var.sqrt());
        report.median_seconds.push(median);
    }
    Ok(report)
}
