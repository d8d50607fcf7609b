//! Time one discriminator round against the number of examples per round and
//! fit a line through the means.
//!
//! cargo run --release --example update_timing

use okgan::diagnostics::time_discriminator_update;
use okgan::gan::TrainConfig;

fn main() -> okgan::Result<()> {
    let config = TrainConfig::for_preset("grid25")?;
    let report = time_discriminator_update(&config, &[128, 256, 512, 1024], 5)?;
    for ((size, mean), std) in report.sizes.iter().zip(&report.mean_seconds).zip(&report.std_seconds) {
        println!("{size:5} examples  {:8.2} ms  (sd {:.2} ms)", mean * 1e3, std * 1e3);
    }
    let fit = report.fit()?;
    println!("{:.3} us per example, R^2 = {:.4}", fit.slope * 1e6, fit.r_squared);
    Ok(())
}
