//! Fully connected networks with optional 1-D batch normalization.
//!
//! Each layer computes `act(bn(x W + b))`. Weights are stored `in x out` so a
//! batch `X` (`n x in`) maps to `X W` without a transpose. Parameters are
//! exposed as an ordered list of flat slices (`weights, bias[, scale, shift]`
//! per layer); gradients and optimizer state follow the same order.

use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, Op};
use super::rng::RngState;
use crate::error::{dim_err, invalid, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Leaky ReLU with slope [`LEAKY_SLOPE`].
    LeakyRelu,
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu => {
                if v > 0.0 {
                    v
                } else {
                    LEAKY_SLOPE * v
                }
            }
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative given the pre-activation `a` and output `y`.
    #[inline]
    fn derivative(self, a: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if a > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Training,
    Evaluation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        Self {
            scale: vec![1.0; width],
            shift: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for j in 0..mean.len() {
            self.running_mean[j] = m * self.running_mean[j] + (1.0 - m) * mean[j];
            self.running_var[j] = (m * self.running_var[j] + (1.0 - m) * var[j]).max(self.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub batch_norm: Option<BatchNormState>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(
        weights: Matrix,
        bias: Vec<f64>,
        batch_norm: bool,
        activation: Activation,
    ) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(dim_err(format!(
                "bias of length {} for {} outputs",
                bias.len(),
                weights.cols()
            )));
        }
        let batch_norm = batch_norm.then(|| BatchNormState::new(weights.cols()));
        Ok(Self {
            weights,
            bias,
            batch_norm,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Shape of one layer for [`MlpNetwork::init`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub units: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl LayerSpec {
    pub fn new(units: usize, activation: Activation, batch_norm: bool) -> Self {
        Self {
            units,
            activation,
            batch_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<DenseLayer>,
    /// Bumped whenever parameters change; caches remember the value they saw.
    generation: u64,
}

#[derive(Clone, Debug)]
struct LayerCache {
    input: Matrix,
    /// Normalized pre-activations when the layer has batch norm.
    normalized: Option<Matrix>,
    inv_std: Vec<f64>,
    pre_activation: Matrix,
    output: Matrix,
}

/// Intermediates from a forward pass, consumed by [`MlpNetwork::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    mode: Mode,
    generation: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.layers.last().expect("network has layers").output
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub scale: Option<Vec<f64>>,
    pub shift: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<LayerGrads>,
}

impl MlpGradients {
    /// Gradient slices in parameter order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for g in &self.layers {
            out.push(g.weights.as_slice());
            out.push(g.bias.as_slice());
            if let (Some(s), Some(t)) = (&g.scale, &g.shift) {
                out.push(s.as_slice());
                out.push(t.as_slice());
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&v| v == 0.0))
    }
}

impl MlpNetwork {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(dim_err(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].output_dim(),
                    i + 1,
                    w[1].input_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    /// Weights drawn from `N(0, INIT_STD^2)`, biases zero, batch norm at identity.
    pub fn init(input_dim: usize, specs: &[LayerSpec], rng: &mut RngState) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut fan_in = input_dim;
        for spec in specs {
            if spec.units == 0 {
                return Err(invalid("layer with zero units"));
            }
            let mut w = Matrix::zeros(fan_in, spec.units);
            w.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = INIT_STD * rng.normal());
            layers.push(DenseLayer::new(
                w,
                vec![0.0; spec.units],
                spec.batch_norm,
                spec.activation,
            )?);
            fan_in = spec.units;
        }
        Self::from_layers(layers)
    }

    /// A single identity layer of width `dim`.
    pub fn identity(dim: usize) -> Self {
        let layer = DenseLayer::new(Matrix::identity(dim), vec![0.0; dim], false, Activation::Identity)
            .expect("identity layer is well formed");
        Self::from_layers(vec![layer]).expect("single layer")
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable layer access. Counts as a parameter change.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_dim())
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| l.batch_norm.is_some())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weights.as_slice().len()
                    + l.bias.len()
                    + l.batch_norm.as_ref().map_or(0, |b| 2 * b.scale.len())
            })
            .sum()
    }

    /// Parameter slices in canonical order. Counts as a parameter change.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &mut self.layers {
            out.push(l.weights.as_mut_slice());
            out.push(l.bias.as_mut_slice());
            if let Some(bn) = &mut l.batch_norm {
                out.push(bn.scale.as_mut_slice());
                out.push(bn.shift.as_mut_slice());
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 4);
        for l in &self.layers {
            out.push(l.weights.as_slice());
            out.push(l.bias.as_slice());
            if let Some(bn) = &l.batch_norm {
                out.push(bn.scale.as_slice());
                out.push(bn.shift.as_slice());
            }
        }
        out
    }

    /// Forward pass. In training mode batch norm uses batch statistics and
    /// folds them into the running statistics.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<(Matrix, ForwardCache)> {
        let (cache, stats) = self.run(x, mode)?;
        if mode == Mode::Training {
            for (layer, stat) in self.layers.iter_mut().zip(stats) {
                if let (Some(bn), Some((mean, var))) = (&mut layer.batch_norm, stat) {
                    bn.update_running(&mean, &var);
                }
            }
        }
        Ok((cache.output().clone(), cache))
    }

    /// Forward pass that leaves running statistics untouched.
    pub fn forward_frozen(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, ForwardCache)> {
        let (cache, _) = self.run(x, mode)?;
        Ok((cache.output().clone(), cache))
    }

    /// Evaluation-mode output without keeping intermediates.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x, Mode::Evaluation)?;
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = self.affine(layer, &h)?;
            if let Some(bn) = &layer.batch_norm {
                let inv: Vec<f64> = bn.running_var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
                for row in z.as_mut_slice().chunks_exact_mut(layer.output_dim()) {
                    for j in 0..row.len() {
                        row[j] = bn.scale[j] * (row[j] - bn.running_mean[j]) * inv[j] + bn.shift[j];
                    }
                }
            }
            let act = layer.activation;
            z.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            h = z;
        }
        Ok(h)
    }

    fn check_input(&self, x: &Matrix, mode: Mode) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(dim_err(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        if mode == Mode::Training && self.has_batch_norm() && x.rows() < 2 {
            return Err(invalid("batch norm in training mode needs at least 2 rows"));
        }
        Ok(())
    }

    fn affine(&self, layer: &DenseLayer, h: &Matrix) -> Result<Matrix> {
        let mut z = Matrix::matmul(h, Op::N, &layer.weights, Op::N)?;
        for row in z.as_mut_slice().chunks_exact_mut(layer.output_dim()) {
            row.iter_mut().zip(&layer.bias).for_each(|(v, b)| *v += b);
        }
        Ok(z)
    }

    #[allow(clippy::type_complexity)]
    fn run(&self, x: &Matrix, mode: Mode) -> Result<(ForwardCache, Vec<Option<(Vec<f64>, Vec<f64>)>>)> {
        self.check_input(x, mode)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let width = layer.output_dim();
            let z = self.affine(layer, &h)?;
            let (pre, normalized, inv_std, stat) = match &layer.batch_norm {
                None => (z, None, Vec::new(), None),
                Some(bn) => {
                    let (mean, var) = match mode {
                        Mode::Training => batch_moments(&z),
                        Mode::Evaluation => (bn.running_mean.clone(), bn.running_var.clone()),
                    };
                    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
                    let mut xhat = z;
                    for row in xhat.as_mut_slice().chunks_exact_mut(width) {
                        for j in 0..width {
                            row[j] = (row[j] - mean[j]) * inv[j];
                        }
                    }
                    let mut pre = xhat.clone();
                    for row in pre.as_mut_slice().chunks_exact_mut(width) {
                        for j in 0..width {
                            row[j] = bn.scale[j] * row[j] + bn.shift[j];
                        }
                    }
                    let stat = (mode == Mode::Training).then_some((mean, var));
                    (pre, Some(xhat), inv, stat)
                }
            };
            let act = layer.activation;
            let output = pre.map(|v| act.apply(v));
            caches.push(LayerCache {
                input: h,
                normalized,
                inv_std,
                pre_activation: pre,
                output: output.clone(),
            });
            stats.push(stat);
            h = output;
        }
        Ok((
            ForwardCache {
                layers: caches,
                mode,
                generation: self.generation,
            },
            stats,
        ))
    }

    /// Gradients of `<dY, Y>` with respect to every parameter and to the input.
    pub fn backward(&self, cache: &ForwardCache, dy: &Matrix) -> Result<(MlpGradients, Matrix)> {
        if cache.generation != self.generation || cache.layers.len() != self.layers.len() {
            return Err(invalid("forward cache is stale or belongs to another network"));
        }
        if dy.shape() != cache.output().shape() {
            return Err(dim_err(format!(
                "upstream gradient is {:?}, output is {:?}",
                dy.shape(),
                cache.output().shape()
            )));
        }
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        let mut upstream = dy.clone();
        for (layer, lc) in self.layers.iter().zip(&cache.layers).rev() {
            let width = layer.output_dim();
            let n = upstream.rows();
            // through the activation
            let mut d_pre = upstream;
            for ((g, &a), &y) in d_pre
                .as_mut_slice()
                .iter_mut()
                .zip(lc.pre_activation.as_slice())
                .zip(lc.output.as_slice())
            {
                *g *= layer.activation.derivative(a, y);
            }
            // through batch norm
            let (dz, d_scale, d_shift) = match (&layer.batch_norm, &lc.normalized) {
                (Some(bn), Some(xhat)) => {
                    let mut d_scale = vec![0.0; width];
                    let mut d_shift = vec![0.0; width];
                    for (grow, xrow) in d_pre.row_iter().zip(xhat.row_iter()) {
                        for j in 0..width {
                            d_scale[j] += grow[j] * xrow[j];
                            d_shift[j] += grow[j];
                        }
                    }
                    let mut dz = d_pre;
                    match cache.mode {
                        Mode::Training => {
                            // dxhat = g * scale; dz = inv/n * (n dxhat - sum dxhat - xhat sum(dxhat xhat))
                            let mut sum_dxhat = vec![0.0; width];
                            let mut sum_dxhat_xhat = vec![0.0; width];
                            for j in 0..width {
                                sum_dxhat[j] = bn.scale[j] * d_shift[j];
                                sum_dxhat_xhat[j] = bn.scale[j] * d_scale[j];
                            }
                            let nf = n as f64;
                            for (row, xrow) in dz
                                .as_mut_slice()
                                .chunks_exact_mut(width)
                                .zip(xhat.row_iter())
                            {
                                for j in 0..width {
                                    let dxhat = row[j] * bn.scale[j];
                                    row[j] = lc.inv_std[j] / nf
                                        * (nf * dxhat - sum_dxhat[j] - xrow[j] * sum_dxhat_xhat[j]);
                                }
                            }
                        }
                        Mode::Evaluation => {
                            for row in dz.as_mut_slice().chunks_exact_mut(width) {
                                for j in 0..width {
                                    row[j] *= bn.scale[j] * lc.inv_std[j];
                                }
                            }
                        }
                    }
                    (dz, Some(d_scale), Some(d_shift))
                }
                _ => (d_pre, None, None),
            };
            let d_weights = Matrix::matmul(&lc.input, Op::T, &dz, Op::N)?;
            let mut d_bias = vec![0.0; width];
            for row in dz.row_iter() {
                d_bias.iter_mut().zip(row).for_each(|(b, g)| *b += g);
            }
            upstream = Matrix::matmul(&dz, Op::N, &layer.weights, Op::T)?;
            grads.push(LayerGrads {
                weights: d_weights,
                bias: d_bias,
                scale: d_scale,
                shift: d_shift,
            });
        }
        grads.reverse();
        Ok((MlpGradients { layers: grads }, upstream))
    }
}

/// Per-column mean and biased variance.
fn batch_moments(z: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mean = z.column_means();
    let mut var = vec![0.0; z.cols()];
    for row in z.row_iter() {
        for j in 0..row.len() {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    let n = z.rows() as f64;
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(rng: &mut RngState, bn: bool) -> MlpNetwork {
        let mut net = MlpNetwork::init(
            3,
            &[
                LayerSpec::new(5, Activation::Tanh, bn),
                LayerSpec::new(4, Activation::LeakyRelu, bn),
                LayerSpec::new(2, Activation::Identity, false),
            ],
            rng,
        )
        .unwrap();
        // larger weights than the default init so the check is not dominated by tiny values
        for s in net.params_mut() {
            s.iter_mut().for_each(|v| *v = 0.5 * rng.normal());
        }
        net
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = MlpNetwork::identity(2);
        let x = Matrix::from_rows(&[[1.0, -2.0], [3.5, 0.25]]).unwrap();
        let (y, _) = net.forward(&x, Mode::Training).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn relu_clamps_negative_inputs() {
        let layer = DenseLayer::new(Matrix::identity(2), vec![0.0; 2], false, Activation::Relu).unwrap();
        let net = MlpNetwork::from_layers(vec![layer]).unwrap();
        let y = net.predict(&Matrix::from_rows(&[[-1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(y.row(0), &[0.0, 2.0]);
    }

    #[test]
    fn batch_norm_train_output_is_standardized() {
        let mut rng = RngState::new(5);
        let mut net = MlpNetwork::init(3, &[LayerSpec::new(6, Activation::Identity, true)], &mut rng).unwrap();
        // eps = 0 isolates the standardization itself
        net.layers_mut()[0].batch_norm.as_mut().unwrap().eps = 0.0;
        let x = crate::numerics::rng::sample_gaussian(&mut rng, 32, 3, &[1.0, -2.0, 0.5], 3.0).unwrap();
        let (y, _) = net.forward(&x, Mode::Training).unwrap();
        let (mean, var) = batch_moments(&y);
        for (m, v) in mean.iter().zip(&var) {
            assert!(m.abs() < 1e-9, "mean {m}");
            assert!((v - 1.0).abs() < 1e-9, "var {v}");
        }
    }

    #[test]
    fn single_row_batch_norm_training_rejected() {
        let mut rng = RngState::new(1);
        let mut net = small_net(&mut rng, true);
        assert!(net.forward(&Matrix::zeros(1, 3), Mode::Training).is_err());
        assert!(net.forward(&Matrix::zeros(1, 3), Mode::Evaluation).is_ok());
        assert!(net.forward(&Matrix::zeros(4, 2), Mode::Evaluation).is_err());
    }

    #[test]
    fn linear_layer_input_gradient_is_transpose() {
        let w = Matrix::from_rows(&[[1.0, 2.0, 0.5], [-1.0, 0.0, 3.0]]).unwrap();
        let layer = DenseLayer::new(w.clone(), vec![0.1, 0.2, 0.3], false, Activation::Identity).unwrap();
        let mut net = MlpNetwork::from_layers(vec![layer]).unwrap();
        let x = Matrix::from_rows(&[[0.3, -0.7]]).unwrap();
        let (_, cache) = net.forward(&x, Mode::Training).unwrap();
        let dy = Matrix::from_rows(&[[1.0, -2.0, 0.5]]).unwrap();
        let (_, dx) = net.backward(&cache, &dy).unwrap();
        let expect = Matrix::matmul(&dy, Op::N, &w, Op::T).unwrap();
        assert_eq!(dx, expect);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = RngState::new(2);
        let mut net = small_net(&mut rng, true);
        let x = crate::numerics::rng::standard_normal(&mut rng, 6, 3);
        let (y, cache) = net.forward(&x, Mode::Training).unwrap();
        let (g, dx) = net.backward(&cache, &Matrix::zeros(y.rows(), y.cols())).unwrap();
        assert!(g.is_zero());
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = RngState::new(3);
        let mut net = small_net(&mut rng, false);
        let x = crate::numerics::rng::standard_normal(&mut rng, 4, 3);
        let (y, cache) = net.forward(&x, Mode::Training).unwrap();
        net.params_mut()[0][0] += 1.0;
        assert!(net.backward(&cache, &y).is_err());
    }

    #[test]
    fn running_variance_stays_above_eps() {
        let mut rng = RngState::new(4);
        let mut net = MlpNetwork::init(2, &[LayerSpec::new(3, Activation::Relu, true)], &mut rng).unwrap();
        let x = Matrix::filled(8, 2, 1.0);
        for _ in 0..500 {
            net.forward(&x, Mode::Training).unwrap();
        }
        let bn = net.layers()[0].batch_norm.as_ref().unwrap();
        assert!(bn.running_var.iter().all(|&v| v >= bn.eps));
    }

    #[test]
    fn eval_output_approaches_train_output_as_statistics_settle() {
        let mut rng = RngState::new(6);
        let mut net = small_net(&mut rng, true);
        let x = crate::numerics::rng::standard_normal(&mut rng, 64, 3);
        let gap = |net: &mut MlpNetwork| {
            let (train, _) = net.forward_frozen(&x, Mode::Training).unwrap();
            let eval = net.predict(&x).unwrap();
            train.as_slice().iter().zip(eval.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let before = gap(&mut net);
        for _ in 0..300 {
            net.forward(&x, Mode::Training).unwrap();
        }
        let after = gap(&mut net);
        assert!(after < before * 1e-3 && after < 1e-3, "{before} -> {after}");
    }
}
