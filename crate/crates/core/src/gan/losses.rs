//! Losses and their gradients for the generator, encoder and the MLP baseline.
//!
//! The `*_loss_and_grad` functions are pure (no running-statistic updates)
//! so they can be probed with finite differences; the trainers use the
//! `*_backprop` variants on caches from their own forward passes.

use crate::error::{dim_err, Error, Result};
use crate::numerics::{ForwardCache, Matrix, MlpGradients, MlpNetwork, Mode};
use crate::okc::BudgetedKernelMachine;

/// Log arguments of the cross-entropy baseline are clamped to
/// `[LOG_CLAMP, 1 - LOG_CLAMP]`.
pub const LOG_CLAMP: f64 = 1e-7;

fn sigmoid(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// `-ln(clamp(p))` and whether `p` was inside the clamp range.
fn neg_log_clamped(p: f64) -> (f64, bool) {
    let inside = p > LOG_CLAMP && p < 1.0 - LOG_CLAMP;
    (-p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP).ln(), inside)
}

fn check_scores(scores: &[f64]) -> Result<()> {
    match scores.iter().find(|s| !s.is_finite()) {
        Some(s) => Err(Error::NonFinite(format!("classifier score {s}"))),
        None => Ok(()),
    }
}

/// Hinge generator loss `mean max(0, 1 - f(features))` and its gradient with
/// respect to the generator, chained through the optional encoder.
pub(super) fn generator_backprop(
    generator: &MlpNetwork,
    gen_cache: &ForwardCache,
    encoder: Option<(&MlpNetwork, &ForwardCache)>,
    machine: &BudgetedKernelMachine,
    features: &Matrix,
) -> Result<(f64, MlpGradients)> {
    let n = features.rows();
    let (scores, mut upstream) = machine.scores_and_gradients(features)?;
    check_scores(&scores)?;
    let mut loss = 0.0;
    for (i, &s) in scores.iter().enumerate() {
        let row = upstream.row_mut(i);
        if s < 1.0 {
            loss += 1.0 - s;
            row.iter_mut().for_each(|g| *g *= -1.0 / n as f64);
        } else {
            row.iter_mut().for_each(|g| *g = 0.0);
        }
    }
    let dx = match encoder {
        Some((enc, cache)) => enc.backward(cache, &upstream)?.1,
        None => upstream,
    };
    let (grads, _) = generator.backward(gen_cache, &dx)?;
    Ok((loss / n as f64, grads))
}

/// Hinge generator loss on noise `z` with every network in training mode.
pub fn generator_loss_and_grad(
    generator: &MlpNetwork,
    encoder: Option<&MlpNetwork>,
    machine: &BudgetedKernelMachine,
    z: &Matrix,
) -> Result<(f64, MlpGradients)> {
    let (x, gen_cache) = generator.forward_frozen(z, Mode::Training)?;
    match encoder {
        Some(enc) => {
            let (e, enc_cache) = enc.forward_frozen(&x, Mode::Training)?;
            generator_backprop(generator, &gen_cache, Some((enc, &enc_cache)), machine, &e)
        }
        None => generator_backprop(generator, &gen_cache, None, machine, &x),
    }
}

/// Encoder loss `mean_real max(0, 1 - f) + mean_fake max(0, 1 + f)` where the
/// cached batch holds `n_real` real rows followed by the fakes.
pub(super) fn encoder_backprop(
    encoder: &MlpNetwork,
    cache: &ForwardCache,
    machine: &BudgetedKernelMachine,
    n_real: usize,
) -> Result<(f64, MlpGradients)> {
    let features = cache.output();
    let total = features.rows();
    if n_real == 0 || n_real >= total {
        return Err(dim_err("encoder batch needs both real and fake rows"));
    }
    let n_fake = total - n_real;
    let (scores, mut upstream) = machine.scores_and_gradients(features)?;
    check_scores(&scores)?;
    let mut loss = 0.0;
    for (i, &s) in scores.iter().enumerate() {
        let (margin, sign, count) = if i < n_real {
            (1.0 - s, -1.0, n_real)
        } else {
            (1.0 + s, 1.0, n_fake)
        };
        let row = upstream.row_mut(i);
        if margin > 0.0 {
            loss += margin / count as f64;
            row.iter_mut().for_each(|g| *g *= sign / count as f64);
        } else {
            row.iter_mut().for_each(|g| *g = 0.0);
        }
    }
    let (grads, _) = encoder.backward(cache, &upstream)?;
    Ok((loss, grads))
}

pub fn encoder_loss_and_grad(
    encoder: &MlpNetwork,
    machine: &BudgetedKernelMachine,
    reals: &Matrix,
    fakes: &Matrix,
) -> Result<(f64, MlpGradients)> {
    let batch = reals.vstack(fakes)?;
    let (_, cache) = encoder.forward_frozen(&batch, Mode::Training)?;
    encoder_backprop(encoder, &cache, machine, reals.rows())
}

/// Cross-entropy discriminator loss `-mean ln D(x) - mean ln(1 - D(G(z)))`
/// with `D = sigmoid(logit)`, and its parameter gradient.
pub fn vanilla_discriminator_loss_and_grad(
    disc: &MlpNetwork,
    reals: &Matrix,
    fakes: &Matrix,
) -> Result<(f64, MlpGradients)> {
    let (nr, nf) = (reals.rows(), fakes.rows());
    let batch = reals.vstack(fakes)?;
    let (logits, cache) = disc.forward_frozen(&batch, Mode::Training)?;
    let mut dlogits = Matrix::zeros(nr + nf, 1);
    let mut loss = 0.0;
    for i in 0..nr + nf {
        let l = logits[(i, 0)];
        if i < nr {
            let p = sigmoid(l);
            let (v, inside) = neg_log_clamped(p);
            loss += v / nr as f64;
            if inside {
                dlogits[(i, 0)] = -(1.0 - p) / nr as f64;
            }
        } else {
            let q = sigmoid(-l);
            let (v, inside) = neg_log_clamped(q);
            loss += v / nf as f64;
            if inside {
                dlogits[(i, 0)] = (1.0 - q) / nf as f64;
            }
        }
    }
    let (grads, _) = disc.backward(&cache, &dlogits)?;
    Ok((loss, grads))
}

/// Non-saturating generator loss `-mean ln D(G(z))` given the generator's
/// cached forward pass producing `x`.
pub(super) fn vanilla_generator_backprop(
    generator: &MlpNetwork,
    gen_cache: &ForwardCache,
    disc: &MlpNetwork,
    x: &Matrix,
) -> Result<(f64, MlpGradients)> {
    let n = x.rows();
    let (logits, disc_cache) = disc.forward_frozen(x, Mode::Training)?;
    let mut dlogits = Matrix::zeros(n, 1);
    let mut loss = 0.0;
    for i in 0..n {
        let p = sigmoid(logits[(i, 0)]);
        let (v, inside) = neg_log_clamped(p);
        loss += v / n as f64;
        if inside {
            dlogits[(i, 0)] = -(1.0 - p) / n as f64;
        }
    }
    let (_, dx) = disc.backward(&disc_cache, &dlogits)?;
    let (grads, _) = generator.backward(gen_cache, &dx)?;
    Ok((loss, grads))
}

pub fn vanilla_generator_loss_and_grad(
    generator: &MlpNetwork,
    disc: &MlpNetwork,
    z: &Matrix,
) -> Result<(f64, MlpGradients)> {
    let (x, cache) = generator.forward_frozen(z, Mode::Training)?;
    vanilla_generator_backprop(generator, &cache, disc, &x)
}

/// Value of the two-player game `mean ln D(x) + mean ln(1 - D(G(z)))` from
/// discriminator probabilities on real and fake samples.
pub fn vanilla_value(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let mean_log = |ps: &mut dyn Iterator<Item = f64>, n: usize| {
        ps.map(|p| p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP).ln()).sum::<f64>() / n as f64
    };
    mean_log(&mut d_real.iter().copied(), d_real.len()) + mean_log(&mut d_fake.iter().map(|p| 1.0 - p), d_fake.len())
}
