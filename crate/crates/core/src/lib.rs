//! UMAP's similarity construction and negative-sampling optimizer, together
//! with the loss functionals needed to see what that optimizer actually
//! minimizes.
//!
//! Points go in through [`datagen`], become a fuzzy kNN graph in
//! [`simgraph`], are laid out by [`optimizer`] under the low-dimensional
//! [`kernel`], and are scored by [`losses`]. [`pumap`] models the batch
//! sampler of the parametric variant.

pub mod datagen;
pub mod error;
pub mod kernel;
pub mod losses;
pub mod optimizer;
pub mod pumap;
pub mod rng;
pub mod simgraph;

pub use datagen::{gen_ring, gen_uniform_square, Dataset};
pub use error::{Error, Result};
pub use kernel::{fit_ab, Kernel};
pub use losses::{LogMode, LossParts, LossRecord, TargetSimilarities};
pub use optimizer::{Embedding, EpochSampleLog, OptimizerConfig};
pub use pumap::{BatchSimConfig, PairCountEstimates};
pub use simgraph::{build_umap_graph, Metric, Perturbation, SimilarityGraph};
