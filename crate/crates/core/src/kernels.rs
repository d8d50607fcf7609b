//! Kernel families, their input-space gradients, and the geometric bandwidth
//! schedule used for the Gaussian kernel on synthetic data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::numerics::{dot, sq_dist, Matrix};

/// A positive semi-definite kernel with its parameters.
///
/// Serializes as `{"<variant>": {<params>}}`, e.g. `{"gaussian": {"gamma": 0.2}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(-gamma |x - x'|^2)`
    Gaussian { gamma: f64 },
    /// `<x, x'>`
    Linear {},
    /// `(gamma <x, x'> + coef0)^degree`
    Polynomial { gamma: f64, coef0: f64, degree: u32 },
    /// `(1 + |x - x'|^2 / (2 alpha))^-alpha`
    RationalQuadratic { alpha: f64 },
    /// Sum of Gaussian kernels over `gammas`.
    MixedGaussian { gammas: Vec<f64> },
    /// Linear kernel plus a sum of rational quadratic kernels over `alphas`.
    MixedRqLinear { alphas: Vec<f64> },
}

impl KernelSpec {
    pub fn gaussian(gamma: f64) -> Self {
        KernelSpec::Gaussian { gamma }
    }

    /// Cubic polynomial with zero offset.
    pub fn polynomial(gamma: f64) -> Self {
        KernelSpec::Polynomial {
            gamma,
            coef0: 0.0,
            degree: 3,
        }
    }

    /// Bandwidths `1 / (2 s^2)` for `s` in {2, 5, 10, 20, 40, 80}.
    pub fn default_mixed_gaussian() -> Self {
        let gammas = [2.0f64, 5.0, 10.0, 20.0, 40.0, 80.0]
            .iter()
            .map(|s| 1.0 / (2.0 * s * s))
            .collect();
        KernelSpec::MixedGaussian { gammas }
    }

    pub fn default_mixed_rq_linear() -> Self {
        KernelSpec::MixedRqLinear {
            alphas: vec![0.2, 0.5, 1.0, 2.0, 5.0],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Linear {} => "linear",
            KernelSpec::Polynomial { .. } => "polynomial",
            KernelSpec::RationalQuadratic { .. } => "rational_quadratic",
            KernelSpec::MixedGaussian { .. } => "mixed_gaussian",
            KernelSpec::MixedRqLinear { .. } => "mixed_rq_linear",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{} kernel: {what} must be positive, got {v}", self.name())))
            }
        };
        match self {
            KernelSpec::Gaussian { gamma } => positive(*gamma, "gamma"),
            KernelSpec::Linear {} => Ok(()),
            KernelSpec::Polynomial { gamma, coef0, degree } => {
                positive(*gamma, "gamma")?;
                if !coef0.is_finite() {
                    return Err(invalid("polynomial kernel: coef0 must be finite"));
                }
                if *degree == 0 {
                    return Err(invalid("polynomial kernel: degree must be at least 1"));
                }
                Ok(())
            }
            KernelSpec::RationalQuadratic { alpha } => positive(*alpha, "alpha"),
            KernelSpec::MixedGaussian { gammas } => {
                if gammas.is_empty() {
                    return Err(invalid("mixed gaussian kernel needs at least one gamma"));
                }
                gammas.iter().try_for_each(|g| positive(*g, "gamma"))
            }
            KernelSpec::MixedRqLinear { alphas } => {
                if alphas.is_empty() {
                    return Err(invalid("mixed RQ-linear kernel needs at least one alpha"));
                }
                alphas.iter().try_for_each(|a| positive(*a, "alpha"))
            }
        }
    }

    /// `k(x, x')`.
    pub fn eval(&self, x: &[f64], xp: &[f64]) -> Result<f64> {
        if x.len() != xp.len() {
            return Err(dim_err(format!("kernel arguments of length {} and {}", x.len(), xp.len())));
        }
        Ok(self.eval_unchecked(x, xp))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], xp: &[f64]) -> f64 {
        match self {
            KernelSpec::Gaussian { gamma } => (-gamma * sq_dist(x, xp)).exp(),
            KernelSpec::Linear {} => dot(x, xp),
            KernelSpec::Polynomial { gamma, coef0, degree } => {
                (gamma * dot(x, xp) + coef0).powi(*degree as i32)
            }
            KernelSpec::RationalQuadratic { alpha } => rq(*alpha, sq_dist(x, xp)),
            KernelSpec::MixedGaussian { gammas } => {
                let d2 = sq_dist(x, xp);
                let mut k = 0.0;
                for g in gammas {
                    k += (-g * d2).exp();
                }
                k
            }
            KernelSpec::MixedRqLinear { alphas } => {
                let d2 = sq_dist(x, xp);
                let mut k = dot(x, xp);
                for &a in alphas {
                    k += rq(a, d2);
                }
                k
            }
        }
    }

    /// Gram block `K[i, j] = k(W_i, X_j)` of shape `B x n`.
    pub fn eval_batch(&self, w: &Matrix, x: &Matrix) -> Result<Matrix> {
        if w.cols() != x.cols() {
            return Err(dim_err(format!(
                "kernel batch: {} columns vs {} columns",
                w.cols(),
                x.cols()
            )));
        }
        let n = x.rows();
        let mut out = Matrix::zeros(w.rows(), n);
        if n == 0 {
            return Ok(out);
        }
        out.as_mut_slice()
            .par_chunks_mut(n)
            .zip(w.as_slice().par_chunks(w.cols().max(1)))
            .for_each(|(dst, wi)| {
                for (v, xj) in dst.iter_mut().zip(x.row_iter()) {
                    *v = self.eval_unchecked(wi, xj);
                }
            });
        Ok(out)
    }

    /// `grad_x k(w, x)`.
    pub fn grad_x(&self, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        if w.len() != x.len() {
            return Err(dim_err(format!("kernel arguments of length {} and {}", w.len(), x.len())));
        }
        let mut g = vec![0.0; x.len()];
        self.accumulate_grad(w, x, 1.0, &mut g);
        Ok(g)
    }

    /// Adds `coef * grad_x k(w, x)` to `out` and returns `k(w, x)`.
    #[inline]
    pub(crate) fn accumulate_grad(&self, w: &[f64], x: &[f64], coef: f64, out: &mut [f64]) -> f64 {
        match self {
            KernelSpec::Gaussian { gamma } => {
                let k = (-gamma * sq_dist(x, w)).exp();
                let s = -2.0 * gamma * k * coef;
                for ((o, xi), wi) in out.iter_mut().zip(x).zip(w) {
                    *o += s * (xi - wi);
                }
                k
            }
            KernelSpec::Linear {} => {
                out.iter_mut().zip(w).for_each(|(o, wi)| *o += coef * wi);
                dot(w, x)
            }
            KernelSpec::Polynomial { gamma, coef0, degree } => {
                let base = gamma * dot(w, x) + coef0;
                let d = *degree as i32;
                let s = coef * f64::from(*degree) * gamma * base.powi(d - 1);
                out.iter_mut().zip(w).for_each(|(o, wi)| *o += s * wi);
                base.powi(d)
            }
            KernelSpec::RationalQuadratic { alpha } => {
                let d2 = sq_dist(x, w);
                let (k, s) = rq_with_slope(*alpha, d2);
                for ((o, xi), wi) in out.iter_mut().zip(x).zip(w) {
                    *o -= coef * s * (xi - wi);
                }
                k
            }
            KernelSpec::MixedGaussian { gammas } => {
                let d2 = sq_dist(x, w);
                let mut k = 0.0;
                let mut s = 0.0;
                for g in gammas {
                    let kg = (-g * d2).exp();
                    k += kg;
                    s += -2.0 * g * kg;
                }
                for ((o, xi), wi) in out.iter_mut().zip(x).zip(w) {
                    *o += coef * s * (xi - wi);
                }
                k
            }
            KernelSpec::MixedRqLinear { alphas } => {
                let d2 = sq_dist(x, w);
                let mut k = dot(w, x);
                let mut s = 0.0;
                for &a in alphas {
                    let (ka, sa) = rq_with_slope(a, d2);
                    k += ka;
                    s += sa;
                }
                for ((o, xi), wi) in out.iter_mut().zip(x).zip(w) {
                    *o += coef * (wi - s * (xi - wi));
                }
                k
            }
        }
    }
}

#[inline]
fn rq(alpha: f64, d2: f64) -> f64 {
    rq_with_slope(alpha, d2).0
}

/// RQ value and the factor `(1 + d2/(2 alpha))^(-alpha-1)` in its gradient.
#[inline]
fn rq_with_slope(alpha: f64, d2: f64) -> (f64, f64) {
    let base = 1.0 + d2 / (2.0 * alpha);
    (base.powf(-alpha), base.powf(-alpha - 1.0))
}

/// Geometric growth of the Gaussian bandwidth: `gamma_n = initial * ratio^n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSchedule {
    pub initial: f64,
    pub ratio: f64,
}

impl GammaSchedule {
    pub fn new(initial: f64, ratio: f64) -> Result<Self> {
        if !(initial > 0.0) || !initial.is_finite() {
            return Err(invalid(format!("initial gamma must be positive, got {initial}")));
        }
        if !(ratio >= 1.0) || !ratio.is_finite() {
            return Err(invalid(format!("gamma ratio must be at least 1, got {ratio}")));
        }
        Ok(Self { initial, ratio })
    }

    pub fn gamma_after(&self, steps: u64) -> f64 {
        self.initial * self.ratio.powf(steps as f64)
    }
}

/// Advances a Gaussian kernel's bandwidth by one schedule step.
pub fn schedule_step(spec: &KernelSpec, schedule: &GammaSchedule) -> Result<KernelSpec> {
    match spec {
        KernelSpec::Gaussian { gamma } => Ok(KernelSpec::Gaussian {
            gamma: gamma * schedule.ratio,
        }),
        other => Err(invalid(format!(
            "gamma schedule applies only to the gaussian kernel, not {}",
            other.name()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let g = KernelSpec::gaussian(0.7);
        assert_eq!(g.eval(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        assert_eq!(KernelSpec::Linear {}.eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        // <x, x'> = 100 with gamma 0.01, degree 3 -> 1
        let p = KernelSpec::polynomial(0.01);
        let v = p.eval(&[10.0, 0.0], &[10.0, 5.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let r = KernelSpec::RationalQuadratic { alpha: 3.0 };
        assert_eq!(r.eval(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 1.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(KernelSpec::gaussian(1.0).eval(&[1.0], &[1.0, 2.0]).is_err());
        assert!(KernelSpec::gaussian(1.0).grad_x(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn validation() {
        assert!(KernelSpec::gaussian(0.0).validate().is_err());
        assert!(KernelSpec::MixedGaussian { gammas: vec![] }.validate().is_err());
        assert!(KernelSpec::MixedRqLinear { alphas: vec![1.0, -1.0] }.validate().is_err());
        assert!(KernelSpec::default_mixed_gaussian().validate().is_ok());
        assert!(KernelSpec::default_mixed_rq_linear().validate().is_ok());
    }

    #[test]
    fn stationary_points() {
        let w = [0.4, -0.2, 1.0];
        assert_eq!(KernelSpec::gaussian(2.0).grad_x(&w, &w).unwrap(), vec![0.0; 3]);
        assert_eq!(KernelSpec::Linear {}.grad_x(&w, &[9.0, 9.0, 9.0]).unwrap(), w.to_vec());
    }

    #[test]
    fn schedule_steps() {
        let s = GammaSchedule::new(0.2, 1.0015).unwrap();
        let k = schedule_step(&KernelSpec::gaussian(0.2), &s).unwrap();
        assert_eq!(k, KernelSpec::gaussian(0.2 * 1.0015));
        assert!((0.2f64 * 1.0015 - 0.2003).abs() < 1e-15);

        let flat = GammaSchedule::new(3.2, 1.0).unwrap();
        assert_eq!(schedule_step(&KernelSpec::gaussian(3.2), &flat).unwrap(), KernelSpec::gaussian(3.2));

        let s = GammaSchedule::new(3.2, 1.0015).unwrap();
        let mut k = KernelSpec::gaussian(3.2);
        for _ in 0..100 {
            k = schedule_step(&k, &s).unwrap();
        }
        let KernelSpec::Gaussian { gamma } = k else { unreachable!() };
        let closed = 3.2 * 1.0015f64.powi(100);
        assert!((gamma - closed).abs() / closed < 1e-13);
        assert!((s.gamma_after(100) - closed).abs() / closed < 1e-13);

        assert!(schedule_step(&KernelSpec::Linear {}, &s).is_err());
        assert!(GammaSchedule::new(0.2, 0.99).is_err());
    }

    #[test]
    fn json_shape() {
        let json = serde_json::to_string(&KernelSpec::gaussian(0.2)).unwrap();
        assert_eq!(json, r#"{"gaussian":{"gamma":0.2}}"#);
        let lin: KernelSpec = serde_json::from_str(r#"{"linear":{}}"#).unwrap();
        assert_eq!(lin, KernelSpec::Linear {});
    }
}
