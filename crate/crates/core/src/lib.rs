pub mod chunk;
pub mod corpus;
pub mod evaluation;
pub mod graph;
pub mod intensity;
pub mod labels;
pub mod llm;
pub mod net;
pub mod pipeline;
pub mod prompt;
pub mod pseudocode;
pub mod store;

/// Double-precision instantiations of the generic numeric types.
pub type FeatureWeightsF64 = intensity::FeatureWeights<f64>;
pub type EmbeddingIndexF64 = store::EmbeddingIndex<f64>;
pub type RetrievalHitF64 = store::RetrievalHit<f64>;
pub type EvalReportF64 = evaluation::EvalReport<f64>;
pub type PipelineF64 = pipeline::Pipeline<f64>;
