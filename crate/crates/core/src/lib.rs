//! Precondition generation for event mentions.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root pin the common instantiations.

pub mod candidate;
pub mod corpus;
pub mod decode;
pub mod experiment;
pub mod lm;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod vocab;

pub use scalar::Scalar;

pub type DistributionF64 = lm::Distribution<f64>;
pub type DistributionF32 = lm::Distribution<f32>;
pub type NGramModelF64 = lm::NGramModel<f64>;
pub type NGramModelF32 = lm::NGramModel<f32>;
pub type ExplicitTableModelF64 = lm::ExplicitTableModel<f64>;
pub type ExplicitTableModelF32 = lm::ExplicitTableModel<f32>;
pub type AnyModelF64 = lm::AnyModel<f64>;
pub type CandidateF64 = candidate::Candidate<f64>;
pub type CandidateF32 = candidate::Candidate<f32>;
pub type DecodeConfigF64 = decode::DecodeConfig<f64>;
pub type DecodeConfigF32 = decode::DecodeConfig<f32>;
pub type RankerModelF64 = pipeline::RankerModel<f64>;
pub type RankerModelF32 = pipeline::RankerModel<f32>;
pub type FilterStatsF64 = pipeline::FilterStats<f64>;
pub type FilterStatsF32 = pipeline::FilterStats<f32>;
pub type CountEmbedderF64 = pipeline::CountEmbedder<f64>;
pub type DiversityReportF64 = metrics::DiversityReport<f64>;
pub type DiversityReportF32 = metrics::DiversityReport<f32>;
pub type TrainedModelsF64 = experiment::TrainedModels<f64>;
pub type TrainedModelsF32 = experiment::TrainedModels<f32>;
