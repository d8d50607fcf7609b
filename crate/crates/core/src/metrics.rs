//! Mode-coverage metrics for 2-D mixture benchmarks.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::numerics::Matrix;
use crate::synthdata::{GaussianMixtureSpec, MixtureKind};

/// Radius multiplier for "close to a mode".
pub const SIGMA_RADIUS: f64 = 3.0;

// A distance equal to the radius up to rounding is treated as outside, so
// that e.g. 0.15 against 3 * 0.05 = 0.15000000000000002 is excluded.
const BOUNDARY_RTOL: f64 = 1e-12;

fn within(dist: f64, sigma: f64) -> bool {
    let r = SIGMA_RADIUS * sigma;
    dist < r * (1.0 - BOUNDARY_RTOL)
}

fn dist_to(center: &[f64; 2], x: &[f64]) -> f64 {
    (x[0] - center[0]).hypot(x[1] - center[1])
}

/// Nearest mode index and distance; ties go to the lowest index.
pub fn nearest_mode(spec: &GaussianMixtureSpec, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, m) in spec.modes().iter().enumerate() {
        let d = dist_to(&m.center, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn check(samples: &Matrix) -> Result<()> {
    if samples.cols() != 2 {
        return Err(dim_err(format!("metrics expect 2-D samples, got {} columns", samples.cols())));
    }
    if samples.rows() == 0 {
        return Err(invalid("metrics need at least one sample"));
    }
    Ok(())
}

/// Number of modes with at least one sample strictly within 3 sigma.
pub fn count_modes(samples: &Matrix, spec: &GaussianMixtureSpec) -> Result<usize> {
    check(samples)?;
    Ok(spec
        .modes()
        .iter()
        .filter(|m| samples.row_iter().any(|x| within(dist_to(&m.center, x), m.sigma)))
        .count())
}

/// Percentage of samples strictly within 3 sigma of their nearest mode.
pub fn high_quality_pct(samples: &Matrix, spec: &GaussianMixtureSpec) -> Result<f64> {
    check(samples)?;
    let good = samples
        .row_iter()
        .filter(|x| {
            let (k, d) = nearest_mode(spec, x);
            within(d, spec.modes()[k].sigma)
        })
        .count();
    Ok(100.0 * good as f64 / samples.rows() as f64)
}

/// Variants of the reverse-KL computation. The defaults (natural log, every
/// sample assigned) are what [`reverse_kl`] uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KlOptions {
    /// Report in bits instead of nats.
    pub base2: bool,
    /// Build the empirical distribution only from samples within 3 sigma of
    /// their nearest mode.
    pub high_quality_only: bool,
}

/// `KL(q || p)` in nats with `q` the empirical nearest-mode frequencies and
/// `p` the mode weights.
pub fn reverse_kl(samples: &Matrix, spec: &GaussianMixtureSpec) -> Result<f64> {
    reverse_kl_with(samples, spec, KlOptions::default())
}

pub fn reverse_kl_with(samples: &Matrix, spec: &GaussianMixtureSpec, opts: KlOptions) -> Result<f64> {
    check(samples)?;
    let mut counts = vec![0usize; spec.num_modes()];
    for x in samples.row_iter() {
        let (k, d) = nearest_mode(spec, x);
        if !opts.high_quality_only || within(d, spec.modes()[k].sigma) {
            counts[k] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(invalid("no sample is close enough to any mode to form a distribution"));
    }
    let mut kl = 0.0;
    for (c, m) in counts.iter().zip(spec.modes()) {
        if *c > 0 {
            let q = *c as f64 / total as f64;
            kl += q * (q / m.weight).ln();
        }
    }
    // tiny negative values can only come from rounding
    let kl = kl.max(0.0);
    Ok(if opts.base2 { kl / std::f64::consts::LN_2 } else { kl })
}

/// Whether any sample lies strictly within 3 sigma of the origin mode of the
/// circle benchmark.
pub fn center_captured(samples: &Matrix, spec: &GaussianMixtureSpec) -> Result<bool> {
    check(samples)?;
    if spec.kind != MixtureKind::Circle {
        return Err(invalid("center_captured applies only to the circle mixture"));
    }
    let k = spec
        .center_mode()
        .ok_or_else(|| invalid("circle mixture has no mode at the origin"))?;
    let m = &spec.modes()[k];
    Ok(samples.row_iter().any(|x| within(dist_to(&m.center, x), m.sigma)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub round: u64,
    pub n_samples: usize,
    pub modes_captured: usize,
    pub total_modes: usize,
    pub high_quality_pct: f64,
    pub reverse_kl: f64,
    pub center_captured: Option<u8>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "round,modes,hq_pct,reverse_kl,center_captured";

    pub fn csv_row(&self) -> String {
        let center = self.center_captured.map(|c| c.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.round, self.modes_captured, self.high_quality_pct, self.reverse_kl, center
        )
    }
}

pub fn evaluate(samples: &Matrix, spec: &GaussianMixtureSpec, round: u64) -> Result<MetricsReport> {
    evaluate_with(samples, spec, round, KlOptions::default())
}

pub fn evaluate_with(
    samples: &Matrix,
    spec: &GaussianMixtureSpec,
    round: u64,
    kl: KlOptions,
) -> Result<MetricsReport> {
    let center = if spec.kind == MixtureKind::Circle {
        Some(u8::from(center_captured(samples, spec)?))
    } else {
        None
    };
    Ok(MetricsReport {
        round,
        n_samples: samples.rows(),
        modes_captured: count_modes(samples, spec)?,
        total_modes: spec.num_modes(),
        high_quality_pct: high_quality_pct(samples, spec)?,
        reverse_kl: reverse_kl_with(samples, spec, kl)?,
        center_captured: center,
    })
}
