//! Budgeted online kernel classifier.
//!
//! The classifier is a kernel expansion `f(x) = rho + sum_i alpha_i k(w_i, x)`
//! over at most `B` stored examples. Each minibatch update
//!
//! 1. scores the batch against the expansion as it stood before the batch,
//! 2. shrinks every stored coefficient by `(1 - eta * lambda)`,
//! 3. appends one entry per example with `alpha = -eta * l'(f(x), y)`,
//! 4. sets `rho` to the mean of the new coefficients, and
//! 5. evicts the oldest entries until at most `B` remain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::kernels::KernelSpec;
use crate::numerics::{Matrix, RngState};
use crate::util::Fingerprint;

/// Classification loss used for the coefficient updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Hinge { margin: f64 },
    Logistic {},
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Hinge { margin: 1.0 }
    }
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossKind::Hinge { margin } if !(*margin > 0.0) || !margin.is_finite() => {
                Err(invalid(format!("hinge margin must be positive, got {margin}")))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::Hinge { margin } => (margin - y * f).max(0.0),
            // ln(1 + exp(-y f)), stable for large |f|
            LossKind::Logistic {} => {
                let z = -y * f;
                if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    /// `d l(f, y) / d f`. The hinge subgradient at the kink is 0.
    pub fn derivative(&self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::Hinge { margin } => {
                if margin - y * f > 0.0 {
                    -y
                } else {
                    0.0
                }
            }
            LossKind::Logistic {} => -y / (1.0 + (y * f).exp()),
        }
    }
}

/// Hyperparameters of the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OkcParams {
    pub budget: usize,
    pub eta: f64,
    pub lambda: f64,
    pub loss: LossKind,
    /// Ablation: drop entries whose new coefficient is exactly zero.
    #[serde(default)]
    pub skip_zero_coefficients: bool,
}

impl Default for OkcParams {
    fn default() -> Self {
        Self {
            budget: 4096,
            eta: 0.05,
            lambda: 0.1,
            loss: LossKind::default(),
            skip_zero_coefficients: false,
        }
    }
}

impl OkcParams {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(invalid("budget must be at least 1"));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(invalid(format!("step size must be positive, got {}", self.eta)));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("regularization must be positive, got {}", self.lambda)));
        }
        if self.eta * self.lambda >= 1.0 {
            return Err(invalid("eta * lambda must be below 1 for the coefficient decay"));
        }
        self.loss.validate()
    }

    pub fn decay(&self) -> f64 {
        1.0 - self.eta * self.lambda
    }
}

/// Borrowed view of one stored example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetEntry<'a> {
    pub example: &'a [f64],
    pub coefficient: f64,
    pub insertion_index: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetedKernelMachine {
    kernel: KernelSpec,
    params: OkcParams,
    dim: Option<usize>,
    /// Row-major examples, oldest first.
    examples: Vec<f64>,
    coefficients: Vec<f64>,
    insertion: Vec<u64>,
    offset: f64,
    next_index: u64,
}

impl BudgetedKernelMachine {
    pub fn new(kernel: KernelSpec, params: OkcParams) -> Result<Self> {
        kernel.validate()?;
        params.validate()?;
        Ok(Self {
            kernel,
            params,
            dim: None,
            examples: Vec::new(),
            coefficients: Vec::new(),
            insertion: Vec::new(),
            offset: 0.0,
            next_index: 0,
        })
    }

    /// Rebuilds a machine from stored parts (checkpoint restore).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        kernel: KernelSpec,
        params: OkcParams,
        dim: Option<usize>,
        examples: Vec<f64>,
        coefficients: Vec<f64>,
        insertion: Vec<u64>,
        offset: f64,
        next_index: u64,
    ) -> Result<Self> {
        kernel.validate()?;
        params.validate()?;
        let n = coefficients.len();
        let d = dim.unwrap_or(0);
        if insertion.len() != n || examples.len() != n * d || (n > 0 && dim.is_none()) {
            return Err(dim_err("inconsistent budget arrays"));
        }
        if n > params.budget {
            return Err(invalid("stored entries exceed the budget"));
        }
        if insertion.windows(2).any(|w| w[0] >= w[1]) || insertion.last().is_some_and(|&l| l >= next_index) {
            return Err(invalid("insertion indices must be strictly increasing"));
        }
        Ok(Self {
            kernel,
            params,
            dim,
            examples,
            coefficients,
            insertion,
            offset,
            next_index,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn set_kernel(&mut self, kernel: KernelSpec) -> Result<()> {
        kernel.validate()?;
        self.kernel = kernel;
        Ok(())
    }

    pub fn params(&self) -> &OkcParams {
        &self.params
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn examples_flat(&self) -> &[f64] {
        &self.examples
    }

    pub fn insertion_indices(&self) -> &[u64] {
        &self.insertion
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = BudgetEntry<'_>> + '_ {
        let d = self.dim.unwrap_or(0);
        (0..self.len()).map(move |i| BudgetEntry {
            example: &self.examples[i * d..(i + 1) * d],
            coefficient: self.coefficients[i],
            insertion_index: self.insertion[i],
        })
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self.dim {
            Some(own) if own != d => Err(dim_err(format!(
                "inputs have dimension {d}, stored examples have {own}"
            ))),
            _ => Ok(()),
        }
    }

    /// `f(x)` for a single point.
    pub fn score(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut sum = 0.0;
        for (w, &a) in self.examples.chunks_exact(d.max(1)).zip(&self.coefficients) {
            if a != 0.0 {
                sum += a * self.kernel.eval_unchecked(w, x);
            }
        }
        self.offset + sum
    }

    /// `f(x)` for every row of `x`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_dim(x.cols())?;
        let d = x.cols();
        let mut out = vec![0.0; x.rows()];
        if d == 0 {
            out.iter_mut().for_each(|v| *v = self.offset);
            return Ok(out);
        }
        out.par_iter_mut()
            .zip(x.as_slice().par_chunks(d))
            .for_each(|(o, row)| *o = self.score(row));
        Ok(out)
    }

    /// `grad_x f(x)`.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let mut g = vec![0.0; x.len()];
        self.score_and_grad_into(x, &mut g);
        Ok(g)
    }

    fn score_and_grad_into(&self, x: &[f64], g: &mut [f64]) -> f64 {
        let d = x.len();
        let mut sum = 0.0;
        for (w, &a) in self.examples.chunks_exact(d.max(1)).zip(&self.coefficients) {
            if a != 0.0 {
                sum += a * self.kernel.accumulate_grad(w, x, a, g);
            }
        }
        self.offset + sum
    }

    /// Scores and input gradients for every row of `x`.
    pub fn scores_and_gradients(&self, x: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        self.check_dim(x.cols())?;
        let d = x.cols();
        let mut scores = vec![0.0; x.rows()];
        let mut grads = Matrix::zeros(x.rows(), d);
        if d == 0 {
            scores.iter_mut().for_each(|v| *v = self.offset);
            return Ok((scores, grads));
        }
        scores
            .par_iter_mut()
            .zip(grads.as_mut_slice().par_chunks_mut(d))
            .zip(x.as_slice().par_chunks(d))
            .for_each(|((s, g), row)| *s = self.score_and_grad_into(row, g));
        Ok((scores, grads))
    }

    /// One minibatch update; see the module docs for the exact steps.
    pub fn update_minibatch(&mut self, x: &Matrix, y: &[f64]) -> Result<()> {
        if x.rows() != y.len() {
            return Err(dim_err(format!("{} examples but {} labels", x.rows(), y.len())));
        }
        if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(invalid(format!("labels must be +1 or -1, got {bad}")));
        }
        if x.rows() == 0 {
            return Ok(());
        }
        self.check_dim(x.cols())?;
        let d = x.cols();

        let scores = self.predict(x)?;
        let decay = self.params.decay();
        self.coefficients.iter_mut().for_each(|a| *a *= decay);

        let mut sum_new = 0.0;
        for ((row, &yi), &fi) in x.row_iter().zip(y).zip(&scores) {
            let alpha = -self.params.eta * self.params.loss.derivative(fi, yi);
            sum_new += alpha;
            if alpha == 0.0 && self.params.skip_zero_coefficients {
                continue;
            }
            self.examples.extend_from_slice(row);
            self.coefficients.push(alpha);
            self.insertion.push(self.next_index);
            self.next_index += 1;
        }
        self.dim = Some(d);
        self.offset = sum_new / x.rows() as f64;

        let excess = self.len().saturating_sub(self.params.budget);
        if excess > 0 {
            self.examples.drain(..excess * d);
            self.coefficients.drain(..excess);
            self.insertion.drain(..excess);
        }
        Ok(())
    }

    /// One discriminator round: label reals `+1` and fakes `-1`, shuffle, and
    /// apply [`update_minibatch`](Self::update_minibatch) over consecutive
    /// chunks of `batch` examples (the last chunk may be smaller).
    pub fn fit_round(&mut self, reals: &Matrix, fakes: &Matrix, batch: usize, rng: &mut RngState) -> Result<usize> {
        let total = reals.rows() + fakes.rows();
        if reals.rows() == 0 || fakes.rows() == 0 {
            return Err(invalid("fit_round needs both real and fake examples"));
        }
        if batch == 0 || batch > total {
            return Err(invalid(format!("minibatch size {batch} must lie in 1..={total}")));
        }
        let data = reals.vstack(fakes)?;
        let labels: Vec<f64> = (0..total)
            .map(|i| if i < reals.rows() { 1.0 } else { -1.0 })
            .collect();
        let mut order: Vec<usize> = (0..total).collect();
        rng.shuffle(&mut order);
        let mut updates = 0;
        for chunk in order.chunks(batch) {
            let xb = data.select_rows(chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| labels[i]).collect();
            self.update_minibatch(&xb, &yb)?;
            updates += 1;
        }
        Ok(updates)
    }

    /// `sum_ij alpha_i alpha_j k(w_i, w_j)`; the offset is not regularized.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let d = self.dim.unwrap_or(0);
        let n = self.len();
        let mut total = 0.0;
        for i in 0..n {
            let wi = &self.examples[i * d..(i + 1) * d];
            let mut row = 0.0;
            for j in 0..n {
                row += self.coefficients[j] * self.kernel.eval_unchecked(wi, &self.examples[j * d..(j + 1) * d]);
            }
            total += self.coefficients[i] * row;
        }
        total
    }

    /// `(1/m) sum l(f(x_i), y_i) + (lambda/2) |f|_H^2`.
    pub fn regularized_risk(&self, x: &Matrix, y: &[f64], lambda: f64) -> Result<f64> {
        if x.rows() != y.len() || x.rows() == 0 {
            return Err(dim_err("risk needs a non-empty labeled set"));
        }
        let scores = self.predict(x)?;
        let loss: f64 = scores
            .iter()
            .zip(y)
            .map(|(&f, &yi)| self.params.loss.value(f, yi))
            .sum::<f64>()
            / y.len() as f64;
        Ok(loss + 0.5 * lambda * self.rkhs_norm_sq())
    }

    /// Digest of the complete state, for frozen-state assertions.
    pub fn fingerprint(&self) -> String {
        let mut fp = Fingerprint::new();
        fp.str(&serde_json::to_string(&self.kernel).unwrap_or_default());
        fp.f64s(&[self.params.eta, self.params.lambda, self.offset]);
        fp.u64(self.next_index);
        fp.f64s(&self.examples);
        fp.f64s(&self.coefficients);
        for &i in &self.insertion {
            fp.u64(i);
        }
        fp.hex()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn machine(budget: usize) -> BudgetedKernelMachine {
        BudgetedKernelMachine::new(
            KernelSpec::gaussian(1.0),
            OkcParams {
                budget,
                ..OkcParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn loss_derivatives() {
        let h = LossKind::default();
        assert_eq!(h.derivative(0.0, 1.0), -1.0);
        assert_eq!(h.derivative(2.0, 1.0), 0.0);
        assert_eq!(h.derivative(1.0, 1.0), 0.0);
        assert_eq!(h.derivative(0.5, -1.0), 1.0);
        let l = LossKind::Logistic {};
        assert!((l.derivative(0.0, 1.0) + 0.5).abs() < 1e-15);
        assert!((l.value(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!(l.value(-800.0, 1.0).is_finite());
    }

    #[test]
    fn empty_machine_predicts_zero() {
        let m = machine(8);
        let x = Matrix::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.input_gradient(&[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn first_update_from_empty() {
        let mut m = machine(8);
        let x = Matrix::from_rows(&[[0.3, -0.4]]).unwrap();
        m.update_minibatch(&x, &[1.0]).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m.coefficients()[0] - 0.05).abs() < 1e-15);
        assert!((m.offset() - 0.05).abs() < 1e-15);
        // single Gaussian entry at its own location, rho reset to 0
        let mut m0 = m.clone();
        m0.offset = 0.0;
        assert!((m0.predict(&x).unwrap()[0] - 0.05).abs() < 1e-15);
        assert_eq!(m0.input_gradient(&[0.3, -0.4]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn existing_coefficients_decay() {
        let mut m = machine(8);
        m.update_minibatch(&Matrix::from_rows(&[[0.0, 0.0]]).unwrap(), &[1.0]).unwrap();
        m.update_minibatch(&Matrix::from_rows(&[[5.0, 5.0]]).unwrap(), &[-1.0]).unwrap();
        assert!((m.coefficients()[0] - 0.04975).abs() < 1e-15);
    }

    #[test]
    fn fifo_keeps_latest_entries() {
        let mut m = machine(3);
        for i in 0..5 {
            let x = Matrix::from_rows(&[[i as f64, 0.0]]).unwrap();
            m.update_minibatch(&x, &[1.0]).unwrap();
        }
        assert_eq!(m.insertion_indices(), &[2, 3, 4]);
        let firsts: Vec<f64> = m.entries().map(|e| e.example[0]).collect();
        assert_eq!(firsts, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn bad_labels_and_dims_rejected() {
        let mut m = machine(4);
        let x = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        assert!(m.update_minibatch(&x, &[0.5]).is_err());
        m.update_minibatch(&x, &[1.0]).unwrap();
        assert!(m.predict(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn fit_round_batching() {
        let mut rng = RngState::new(1);
        let reals = Matrix::filled(4, 2, 1.0);
        let fakes = Matrix::filled(4, 2, -1.0);
        let mut m = machine(100);
        assert_eq!(m.fit_round(&reals, &fakes, 8, &mut rng).unwrap(), 1);
        assert_eq!(m.len(), 8);
        assert_eq!(m.fit_round(&reals, &fakes, 3, &mut rng).unwrap(), 3);
        assert_eq!(m.len(), 16);
        assert!(m.fit_round(&reals, &fakes, 9, &mut rng).is_err());
        assert!(m.fit_round(&Matrix::zeros(0, 2), &fakes, 2, &mut rng).is_err());
    }

    #[test]
    fn zero_coefficient_ablation_skips_entries() {
        let mut m = BudgetedKernelMachine::new(
            KernelSpec::gaussian(1.0),
            OkcParams {
                skip_zero_coefficients: true,
                ..OkcParams::default()
            },
        )
        .unwrap();
        // reals with f >= 1 after enough updates stop creating entries
        let x = Matrix::filled(1, 2, 0.0);
        for _ in 0..200 {
            m.update_minibatch(&x, &[1.0]).unwrap();
        }
        assert!(m.len() < 200);
        assert!(m.coefficients().iter().all(|&a| a != 0.0));
    }

    #[test]
    fn all_zero_machine_risk_is_one() {
        let m = BudgetedKernelMachine::from_parts(
            KernelSpec::gaussian(1.0),
            OkcParams::default(),
            Some(2),
            vec![0.0, 0.0, 1.0, 1.0],
            vec![0.0, 0.0],
            vec![0, 1],
            0.0,
            2,
        )
        .unwrap();
        let x = Matrix::from_rows(&[[0.5, 0.5], [2.0, -1.0]]).unwrap();
        assert_eq!(m.regularized_risk(&x, &[1.0, -1.0], 0.1).unwrap(), 1.0);
    }

    #[test]
    fn single_entry_norm() {
        let m = BudgetedKernelMachine::from_parts(
            KernelSpec::gaussian(0.3),
            OkcParams::default(),
            Some(2),
            vec![0.7, -0.1],
            vec![-0.3],
            vec![5],
            0.4,
            6,
        )
        .unwrap();
        assert!((m.rkhs_norm_sq() - 0.09).abs() < 1e-16);
    }
}
