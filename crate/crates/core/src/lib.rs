//! Cross-scale graph classification: multi-scale graph wavelet convolution,
//! spectral pooling through an orthogonal cosine transform, weighted
//! cross-entropy / link-prediction training, a synthetic cross-scale
//! benchmark generator, and executable Lipschitz stability checks.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod graph;
pub mod layers;
pub mod linalg;
pub mod model;
pub mod plot;
pub mod spectral;
pub mod stability;
pub mod stats;
pub mod synth;
pub mod train;
pub mod tu;

pub use error::{Error, Result};
pub use graph::{split_dataset, split_indices, Graph, GraphDataset, SplitIndices, SplitSpec};
pub use spectral::{BasisMode, SpectralTransform, WaveletBasis};
pub use stats::{dataset_statistics, DatasetStats, StatsRecord};
pub use tu::{export_tu_dataset, load_tu_dataset, load_tu_dataset_with, TuOptions};
pub use eval::{run_ablation, run_experiment, run_sensitivity, Aggregate, ExperimentPlan, SweepAxis};
pub use model::{Model, ModelConfig, Variant};
pub use stability::{stability_report, LipschitzReport};
pub use synth::{build_msg, MsgConfig};
pub use train::{fit, train, TrainConfig};
