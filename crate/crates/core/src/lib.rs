// SPDX-License-Identifier: MIT OR Apache-2.0

//! # gcc-core
//!
//! Discovery and validation of granular concept circuits: per-query,
//! concept-specific subgraphs of neurons spanning the probe layers of a
//! layered feed-forward vision model.
//!
//! Pipeline:
//!
//! 1. [`model`] loads a TOML manifest + `f32` blob and runs forward passes
//!    with activation capture and channel interventions.
//! 2. [`index`] sweeps a dataset once and keeps per-neuron activation
//!    summaries, top-k sample sets and root-node selection.
//! 3. [`scores`] computes neuron sensitivity (masking a source channel and
//!    re-running one span) and semantic flow (top-k sample overlap).
//! 4. [`threshold`] turns a sensitivity vector into a cut via a registry of
//!    strategies (peaks-over-threshold with a GPD tail fit by default).
//! 5. [`discovery`] grows one circuit per root with a memoized worklist and
//!    merges / intersects circuits across roots and queries.
//! 6. [`eval`] runs ablation faithfulness, edge deletion/insertion curves and
//!    misclassification audits.
//! 7. [`export`] writes Sankey, DOT and activation-region artifacts.

pub mod dataset;
pub mod discovery;
pub mod error;
pub mod eval;
pub mod export;
pub mod index;
pub mod model;
pub mod neuron;
pub mod registry;
pub mod report;
pub mod scores;
pub mod tensor;
pub mod threshold;

pub use dataset::DatasetPack;
pub use discovery::{
    common_concepts, discover_all, discover_circuit, merge_circuits, unique_concepts, Circuit,
    CircuitEdge, DiscoveryConfig, ExpansionCache, FlowAnchor,
};
pub use error::{GccError, Result};
pub use index::{ActivationIndex, ActivationSummary, Aggregation, TopKSet};
pub use model::{
    load_model, load_model_from_path, Ablation, AblationMode, AblationSet, ActivationTrace,
    EdgeMode, LayerKind, LayerSpec, ModelSpec,
};
pub use neuron::NeuronRef;
pub use scores::{neuron_sensitivity, semantic_flow, FlowScore, SensitivityVector};
pub use tensor::{mask_channel, Tensor};
pub use threshold::{
    fit_gpd, mean_threshold, pot_threshold, GpdFit, PotConfig, ThresholdDecision, ThresholdStrategy,
};

/// Toolkit version embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
