//! Multi-instance visual-semantic embedding.
//!
//! Images are bags of instance features (the whole frame plus subregions).
//! A linear map followed by L2 normalization embeds every instance into a
//! fixed label space; a label's distance to an image is the smallest squared
//! distance over the image's instances. Training minimizes pairwise hinge
//! ranking losses over those distances with momentum SGD, and inference ranks
//! labels by distance while reporting which instance supports each label.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`, which is what the file formats
//! and the CLI use.

pub mod bags;
pub mod embedding;
pub mod error;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod scalar;
pub mod semantic_space;
pub mod synth;
pub mod trainer;

pub use bags::{build_bag, grid_subregion_geometries, passes_region_filter, RegionFilter, RegionGeometry};
pub use embedding::{bag_label_distance, BagDistance};
pub use error::{Error, Result};
pub use inference::{localize_label, predict, zero_shot_predict};
pub use losses::{
    label_rank, mie_loss, mie_rank_weighted_loss, rank_weight, whole_image_ranking_loss, LossKind,
    PairSet,
};
pub use metrics::{evaluate_annotations, map_at_k, upper_bound_assignments, MapAveraging, MetricsReport};
pub use scalar::{Scalar, TwoFloat};
pub use semantic_space::{load_label_space, rank_labels_by_distance, squared_distance};
pub use synth::{generate, SynthConfig};
pub use trainer::{finite_difference_check, train, train_from, TrainHistory};

pub type LabelSpace = semantic_space::LabelSpace<f64>;
pub type InstanceBag = bags::InstanceBag<f64>;
pub type EmbeddingModel = embedding::EmbeddingModel<f64>;
pub type LossConfig = losses::LossConfig<f64>;
pub type LossValueGrad = losses::LossValueGrad<f64>;
pub type TrainConfig = trainer::TrainConfig<f64>;
pub type PredictionList = inference::PredictionList<f64>;
pub type SynthDataset = synth::SynthDataset<f64>;

pub type LabelSpaceF32 = semantic_space::LabelSpace<f32>;
pub type InstanceBagF32 = bags::InstanceBag<f32>;
pub type EmbeddingModelF32 = embedding::EmbeddingModel<f32>;
pub type TrainConfigF32 = trainer::TrainConfig<f32>;
