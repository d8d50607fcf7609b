//! Online kernel classifier on two Gaussian blobs: accuracy per round, how
//! the budget fills up and what the oldest surviving coefficient looks like.
//!
//! cargo run --release --example kernel_classifier

use okgan::kernels::KernelSpec;
use okgan::numerics::{sample_gaussian, Matrix, RngState};
use okgan::okc::{BudgetedKernelMachine, OkcParams};

fn accuracy(m: &BudgetedKernelMachine, pos: &Matrix, neg: &Matrix) -> okgan::Result<f64> {
    let hits = m.predict(pos)?.iter().filter(|&&s| s > 0.0).count() + m.predict(neg)?.iter().filter(|&&s| s < 0.0).count();
    Ok(hits as f64 / (pos.rows() + neg.rows()) as f64)
}

fn main() -> okgan::Result<()> {
    let mut rng = RngState::new(1);
    let params = OkcParams {
        budget: 512,
        ..OkcParams::default()
    };
    let mut machine = BudgetedKernelMachine::new(KernelSpec::gaussian(0.5), params)?;

    for round in 1..=10 {
        let pos = sample_gaussian(&mut rng, 100, 2, &[1.5, 0.0], 0.5)?;
        let neg = sample_gaussian(&mut rng, 100, 2, &[-1.5, 0.0], 0.5)?;
        machine.fit_round(&pos, &neg, 64, &mut rng)?;
        let oldest = machine.entries().next().expect("entries after a round");
        // examples already outside the margin get a zero coefficient
        let active = machine.coefficients().iter().filter(|&&a| a != 0.0).count();
        println!(
            "round {round:2}  stored {:4}  nonzero {active:4}  offset {:+.4}  oldest #{:<5} accuracy {:.3}",
            machine.len(),
            machine.offset(),
            oldest.insertion_index,
            accuracy(&machine, &pos, &neg)?
        );
    }

    let x = [0.3, 0.1];
    println!("f({x:?}) = {:.4}, grad = {:?}", machine.score(&x), machine.input_gradient(&x)?);
    Ok(())
}
