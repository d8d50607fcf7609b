//! Independent reference implementations shared by the integration tests and
//! the acceptance runner.

#![allow(dead_code)]

use okgan::kernels::KernelSpec;
use okgan::numerics::{LayerSpec, Matrix, MlpNetwork, Mode, RngState};
use okgan::okc::{BudgetedKernelMachine, OkcParams};
use okgan::synthdata::{GaussianMixtureSpec, MixtureKind, MixtureMode};

pub const KERNEL_FLOOR: f64 = 1e-6;
pub const NETWORK_FLOOR: f64 = 1e-3;

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero derivatives
/// from turning rounding noise into large relative errors.
///
/// Kernel checks use [`KERNEL_FLOOR`]. Network losses sum many O(1) terms,
/// so their central differences carry absolute noise near `1e-10` and a
/// parameter whose exact gradient is zero (a bias feeding batch norm) would
/// fail any tiny floor; they use [`NETWORK_FLOOR`].
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn uniform_in(rng: &mut RngState, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

pub fn random_vec(rng: &mut RngState, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.normal()).collect()
}

/// Kernel value written straight from the formulas, without going through
/// the library's evaluation code.
pub fn naive_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let ip: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    match spec {
        KernelSpec::Gaussian { gamma } => (-gamma * sq).exp(),
        KernelSpec::Linear {} => ip,
        KernelSpec::Polynomial { gamma, coef0, degree } => (gamma * ip + coef0).powi(*degree as i32),
        KernelSpec::RationalQuadratic { alpha } => (1.0 + sq / (2.0 * alpha)).powf(-alpha),
        KernelSpec::MixedGaussian { gammas } => gammas.iter().map(|g| (-g * sq).exp()).sum(),
        KernelSpec::MixedRqLinear { alphas } => ip + alphas.iter().map(|a| (1.0 + sq / (2.0 * a)).powf(-a)).sum::<f64>(),
    }
}

/// One random spec per family, cycling through all six.
pub fn random_kernel(rng: &mut RngState, family: usize) -> KernelSpec {
    match family % 6 {
        0 => KernelSpec::gaussian(uniform_in(rng, 0.05, 2.0)),
        1 => KernelSpec::Linear {},
        2 => KernelSpec::Polynomial {
            gamma: uniform_in(rng, 0.1, 1.0),
            coef0: uniform_in(rng, 0.0, 1.0),
            degree: 1 + (rng.uniform() * 3.0) as u32,
        },
        3 => KernelSpec::RationalQuadratic {
            alpha: uniform_in(rng, 0.2, 3.0),
        },
        4 => KernelSpec::MixedGaussian {
            gammas: (0..3).map(|_| uniform_in(rng, 0.05, 2.0)).collect(),
        },
        _ => KernelSpec::MixedRqLinear {
            alphas: (0..3).map(|_| uniform_in(rng, 0.2, 3.0)).collect(),
        },
    }
}

/// Central difference of `f` along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Largest relative error between the analytic kernel gradient and central
/// differences over one random (w, x, spec) triple.
pub fn kernel_grad_case(rng: &mut RngState, family: usize) -> f64 {
    let d = 1 + (rng.uniform() * 4.0) as usize;
    let spec = random_kernel(rng, family);
    let w = random_vec(rng, d, 0.8);
    let x = random_vec(rng, d, 0.8);
    let analytic = spec.grad_x(&w, &x).unwrap();
    (0..d)
        .map(|i| {
            let fd = central_diff(|p| spec.eval(&w, p).unwrap(), &x, i, 1e-5);
            rel_err(analytic[i], fd, KERNEL_FLOOR)
        })
        .fold(0.0, f64::max)
}

/// Small random machine: `n` random entries in dimension `d`.
pub fn random_machine(rng: &mut RngState, spec: KernelSpec, n: usize, d: usize) -> BudgetedKernelMachine {
    let examples: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
    let coefficients: Vec<f64> = (0..n).map(|_| 0.1 * rng.normal()).collect();
    BudgetedKernelMachine::from_parts(
        spec,
        OkcParams::default(),
        Some(d),
        examples,
        coefficients,
        (0..n as u64).collect(),
        0.1 * rng.normal(),
        n as u64,
    )
    .unwrap()
}

/// `f(x) = rho + sum_i alpha_i k(w_i, x)` as a plain loop over the entries.
pub fn naive_score(m: &BudgetedKernelMachine, x: &[f64]) -> f64 {
    m.offset()
        + m.entries()
            .map(|e| e.coefficient * naive_kernel(m.kernel(), e.example, x))
            .sum::<f64>()
}

pub fn input_gradient_case(rng: &mut RngState, family: usize) -> f64 {
    let d = 1 + (rng.uniform() * 3.0) as usize;
    let spec = random_kernel(rng, family);
    let m = random_machine(rng, spec, 12, d);
    let x = random_vec(rng, d, 0.8);
    let analytic = m.input_gradient(&x).unwrap();
    (0..d)
        .map(|i| {
            let fd = central_diff(|p| m.score(p), &x, i, 1e-5);
            rel_err(analytic[i], fd, KERNEL_FLOOR)
        })
        .fold(0.0, f64::max)
}

/// Reference update kept as plain vectors of (example, coefficient, index).
#[derive(Default)]
pub struct ReferenceMachine {
    pub entries: Vec<(Vec<f64>, f64, u64)>,
    pub offset: f64,
    pub next: u64,
}

impl ReferenceMachine {
    pub fn update(&mut self, spec: &KernelSpec, params: &OkcParams, x: &Matrix, y: &[f64]) {
        let scores: Vec<f64> = x
            .row_iter()
            .map(|row| self.offset + self.entries.iter().map(|(w, a, _)| a * naive_kernel(spec, w, row)).sum::<f64>())
            .collect();
        for e in &mut self.entries {
            e.1 *= 1.0 - params.eta * params.lambda;
        }
        let mut sum = 0.0;
        for ((row, &yi), &fi) in x.row_iter().zip(y).zip(&scores) {
            let slope = if yi * fi < 1.0 { -yi } else { 0.0 };
            let alpha = -params.eta * slope;
            sum += alpha;
            self.entries.push((row.to_vec(), alpha, self.next));
            self.next += 1;
        }
        self.offset = sum / x.rows() as f64;
        while self.entries.len() > params.budget {
            self.entries.remove(0);
        }
    }
}

/// Random network with at most three layers of at most 16 units.
pub fn random_network(rng: &mut RngState, input_dim: usize, output_dim: usize) -> MlpNetwork {
    use okgan::numerics::Activation::*;
    let acts = [Relu, LeakyRelu, Tanh, Identity];
    let hidden = (rng.uniform() * 3.0) as usize;
    let mut specs: Vec<LayerSpec> = (0..hidden)
        .map(|_| {
            let units = 2 + (rng.uniform() * 15.0) as usize;
            let act = acts[(rng.uniform() * 4.0) as usize % 4];
            LayerSpec::new(units, act, rng.uniform() < 0.5)
        })
        .collect();
    specs.push(LayerSpec::new(output_dim, Identity, false));
    let mut net = MlpNetwork::init(input_dim, &specs, rng).unwrap();
    // the default init is tiny; spread the weights so the activations see
    // both sides of their kinks
    for layer in net.layers_mut() {
        let scale = 1.0 / (layer.input_dim() as f64).sqrt();
        for w in layer.weights.as_mut_slice() {
            *w = scale * rng.normal();
        }
        for b in &mut layer.bias {
            *b = 0.1 * rng.normal();
        }
    }
    net
}

/// Loss `sum(out * probe)` through the network in training mode, so batch
/// statistics take part in the gradient.
fn probe_loss(net: &MlpNetwork, x: &Matrix, probe: &Matrix) -> f64 {
    let (y, _) = net.forward_frozen(x, Mode::Training).unwrap();
    y.frobenius_dot(probe)
}

/// Worst relative error of parameter and input gradients of a random
/// network against central differences with step 1e-5.
pub fn mlp_grad_case(rng: &mut RngState) -> f64 {
    let din = 1 + (rng.uniform() * 4.0) as usize;
    let dout = 1 + (rng.uniform() * 3.0) as usize;
    let n = 3 + (rng.uniform() * 6.0) as usize;
    let net = random_network(rng, din, dout);
    let x = Matrix::from_vec(n, din, random_vec(rng, n * din, 1.0)).unwrap();
    let probe = Matrix::from_vec(n, dout, random_vec(rng, n * dout, 1.0)).unwrap();
    let (_, cache) = net.forward_frozen(&x, Mode::Training).unwrap();
    let (grads, dx) = net.backward(&cache, &probe).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let slices = grads.slices();
    for (p, g) in slices.iter().enumerate() {
        for j in 0..g.len() {
            let shifted = |delta: f64| {
                let mut n2 = net.clone();
                n2.params_mut()[p][j] += delta;
                probe_loss(&n2, &x, &probe)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max(rel_err(g[j], fd, NETWORK_FLOOR));
        }
    }
    for j in 0..n * din {
        let shifted = |delta: f64| {
            let mut x2 = x.clone();
            x2.as_mut_slice()[j] += delta;
            probe_loss(&net, &x2, &probe)
        };
        let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
        worst = worst.max(rel_err(dx.as_slice()[j], fd, NETWORK_FLOOR));
    }
    worst
}

/// Naive nearest-mode assignment with ties to the lowest index.
pub fn naive_nearest(x: &[f64], spec: &GaussianMixtureSpec) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, m) in spec.modes().iter().enumerate() {
        let d = (x[0] - m.center[0]).hypot(x[1] - m.center[1]);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn naive_within(x: &[f64], m: &MixtureMode) -> bool {
    let d = (x[0] - m.center[0]).hypot(x[1] - m.center[1]);
    d < 3.0 * m.sigma * (1.0 - 1e-12)
}

/// Modes with at least one sample within three standard deviations.
pub fn naive_modes(samples: &Matrix, spec: &GaussianMixtureSpec) -> usize {
    spec.modes()
        .iter()
        .filter(|m| samples.row_iter().any(|x| naive_within(x, m)))
        .count()
}

/// Percentage of samples within three standard deviations of their nearest mode.
pub fn naive_hq(samples: &Matrix, spec: &GaussianMixtureSpec) -> f64 {
    let good = samples
        .row_iter()
        .filter(|x| naive_within(x, &spec.modes()[naive_nearest(x, spec)]))
        .count();
    100.0 * good as f64 / samples.rows() as f64
}

/// `sum_i q_i ln(q_i / p_i)` over nearest-mode frequencies `q`.
pub fn naive_reverse_kl(samples: &Matrix, spec: &GaussianMixtureSpec) -> f64 {
    let mut counts = vec![0usize; spec.modes().len()];
    for x in samples.row_iter() {
        counts[naive_nearest(x, spec)] += 1;
    }
    let n = samples.rows() as f64;
    let kl: f64 = counts
        .iter()
        .zip(spec.modes())
        .filter(|(&c, _)| c > 0)
        .map(|(&c, m)| {
            let q = c as f64 / n;
            q * (q / m.weight).ln()
        })
        .sum();
    kl.max(0.0)
}

/// Random mixture with at most `max_modes` modes plus samples near them.
pub fn random_metric_instance(rng: &mut RngState, max_modes: usize, max_n: usize) -> (GaussianMixtureSpec, Matrix) {
    let k = 1 + (rng.uniform() * max_modes as f64) as usize;
    let raw: Vec<f64> = (0..k).map(|_| 0.2 + rng.uniform()).collect();
    let total: f64 = raw.iter().sum();
    let modes: Vec<MixtureMode> = raw
        .iter()
        .map(|w| MixtureMode {
            center: [uniform_in(rng, -2.0, 2.0), uniform_in(rng, -2.0, 2.0)],
            sigma: uniform_in(rng, 0.05, 0.3),
            weight: w / total,
            multiplicity: 1,
        })
        .collect();
    let spec = GaussianMixtureSpec::new(MixtureKind::Custom, modes).unwrap();
    let n = 1 + (rng.uniform() * max_n as f64) as usize;
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let m = &spec.modes()[(rng.uniform() * k as f64) as usize % k];
        let spread = uniform_in(rng, 0.0, 5.0) * m.sigma;
        rows.push([m.center[0] + spread * rng.normal(), m.center[1] + spread * rng.normal()]);
    }
    (spec, Matrix::from_rows(&rows).unwrap())
}

/// End-to-end hinge generator loss: analytic parameter gradient through the
/// classifier (and an encoder on odd cases) against central differences.
pub fn generator_loss_case(rng: &mut RngState, case: usize) -> f64 {
    use okgan::gan::generator_loss_and_grad;
    let noise = 2;
    let data_dim = 2 + (rng.uniform() * 2.0) as usize;
    let generator = random_network(rng, noise, data_dim);
    let encoder = (case % 2 == 1).then(|| random_network(rng, data_dim, 2));
    let feature_dim = encoder.as_ref().map_or(data_dim, |e| e.output_dim());
    let spec = random_kernel(rng, [0, 3, 4][case % 3]);
    let machine = random_machine(rng, spec, 16, feature_dim);
    let n = 4 + (rng.uniform() * 6.0) as usize;
    let z = Matrix::from_vec(n, noise, random_vec(rng, n * noise, 1.0)).unwrap();
    let (_, grads) = generator_loss_and_grad(&generator, encoder.as_ref(), &machine, &z).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (p, g) in grads.slices().iter().enumerate() {
        for j in 0..g.len() {
            let shifted = |delta: f64| {
                let mut g2 = generator.clone();
                g2.params_mut()[p][j] += delta;
                generator_loss_and_grad(&g2, encoder.as_ref(), &machine, &z).unwrap().0
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max(rel_err(g[j], fd, NETWORK_FLOOR));
        }
    }
    worst
}
