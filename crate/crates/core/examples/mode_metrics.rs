//! Mode coverage, high-quality percentage and reverse KL for a few
//! hand-made sample sets, without training anything.
//!
//! cargo run --release --example mode_metrics

use okgan::metrics::{evaluate, reverse_kl_with, KlOptions};
use okgan::numerics::{Matrix, RngState};
use okgan::synthdata::GaussianMixtureSpec;

fn show(label: &str, x: &Matrix, spec: &GaussianMixtureSpec) -> okgan::Result<()> {
    let r = evaluate(x, spec, 0)?;
    let bits = reverse_kl_with(x, spec, KlOptions { base2: true, ..KlOptions::default() })?;
    println!(
        "{label:<28} modes {:3}/{:<3} hq {:5.1}%  kl {:.4} nats ({:.4} bits)  center {:?}",
        r.modes_captured, r.total_modes, r.high_quality_pct, r.reverse_kl, bits, r.center_captured
    );
    Ok(())
}

fn main() -> okgan::Result<()> {
    let mut rng = RngState::new(0);
    for name in ["grid25", "ring8", "circle"] {
        let spec = GaussianMixtureSpec::preset(name)?;
        show(&format!("{name}: true samples"), &spec.sample(&mut rng, 2500), &spec)?;

        let center = spec.modes()[0].center;
        let collapsed = Matrix::from_rows(&vec![center; 2500])?;
        show(&format!("{name}: one-mode collapse"), &collapsed, &spec)?;

        // true samples smeared with three times their own spread
        let mut blurred = spec.sample(&mut rng, 2500);
        let sigma = spec.modes()[0].sigma;
        blurred.as_mut_slice().iter_mut().for_each(|v| *v += 3.0 * sigma * rng.normal());
        show(&format!("{name}: blurred"), &blurred, &spec)?;
    }
    Ok(())
}
