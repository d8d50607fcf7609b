//! Dense linear algebra, seeded randomness, MLPs with batch norm, Adam and PCA.

pub mod adam;
pub mod matrix;
pub mod mlp;
pub mod pca;
pub mod rng;

pub use adam::AdamState;
pub use matrix::{dot, sq_dist, Matrix, Op};
pub use mlp::{Activation, BatchNormState, DenseLayer, ForwardCache, LayerSpec, MlpGradients, MlpNetwork, Mode};
pub use pca::{pca_top2, pca_top2_detailed, Pca2};
pub use rng::{sample_gaussian, standard_normal, RngSnapshot, RngState, Stream};
