//! Disentanglement scores over deterministic representations, globally and
//! restricted to small neighbourhoods of factor space.

mod local;
mod mi;
mod scores;

pub use local::{
    local_metric, sample_local_factors, write_metric_csv, FactorEmbedding, LocalSampleSpec, LocalScore, Metric,
    ModelEmbedding, METRIC_CSV_HEADER,
};
pub use mi::{discretize, entropy, mutual_info_discrete, MIProfile};
pub use scores::{mig, modularity};
