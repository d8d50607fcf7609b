#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN
#![allow(clippy::needless_range_loop)]

//! GAN training with an online kernel classifier as the discriminator.
//!
//! The discriminator is a budgeted kernel expansion refit every round
//! ([`okc`]); the generator is an MLP trained against its frozen scores
//! ([`gan`]). Mode-collapse benchmarks live in [`synthdata`] and [`metrics`],
//! discriminator trajectories and timing in [`diagnostics`].
//!
//! ## Examples
//!
//! ```text
//! cargo run --release --example kernel_classifier       # classifier on two blobs
//! cargo run --release --example train_mixture -- ring8 5000
//! cargo run --release --example mode_metrics            # metrics on hand-made samples
//! cargo run --release --example cycling_trajectories    # kernel vs MLP discriminator
//! cargo run --release --example update_timing           # update cost vs batch size
//! cargo run --release --example checkpoint_resume
//! cargo run --release --example encoder_vectors         # encoder variant on flat vectors
//! ```
//!
//! The `okgan` binary wraps the same pieces as `train`, `eval`, `viz-cycling`,
//! `bench` and `gen` subcommands; see [`cli`].

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod gan;
pub mod kernels;
pub mod numerics;
pub mod metrics;
pub mod okc;
pub mod synthdata;
pub mod util;

pub use error::{Error, Result};
