//! Riemannian machinery over latent spaces: pullback metric tensors, metric
//! fields induced by the model's stochastic decoder and forward maps, spline
//! curves with pinned endpoints, discrete curve length and energy, geodesic
//! estimation, and the volume measure used for manifold visualization.

pub mod field;
pub mod geodesic;
pub mod metric;
pub mod spline;

pub use field::{
    composite_metric, decoder_metric_parts, CompositeField, DecoderField, ForwardField,
    FunctionField, IdentityField, MetricField,
};
pub use geodesic::{
    curve_length, estimate_geodesic, estimate_geodesic_batch, GeodesicConfig, GeodesicResult,
};
pub use metric::{
    expected_metric, expected_metric_parts, lemma_ebab, pullback, skewed_metric, volume_measure,
    MetricTensor,
};
pub use spline::{SplineCurve, NUM_BASIS};
