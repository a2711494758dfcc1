//! Metrics and qualitative outputs for trained (or freshly initialised) models.

pub mod depth;
pub mod frechet;
pub mod qualitative;
pub mod report;
pub mod rotation;

pub use depth::{depth_prediction_ce, depth_prediction_metrics, dp_fake, dp_real};
pub use frechet::{embedding_stats, frechet_distance, make_embedder, Embedder, EmbedderKind, GaussianStats, IdentityDownsample, RandomConvEmbedder};
pub use qualitative::{compose_grid, export_pointcloud, interpolate, rotation_sweep, write_grid, Interpolated, LatentSpace};
pub use report::{MetricEntry, MetricReport};
pub use rotation::{pair_scores, rotation_consistency, rotation_precision, rotation_scores, AnglePairs, GeneratorViews, RotationScores, ToyViews, ViewSource};
