//! Known/unknown traffic classification over N-packet subflows.
//!
//! A flow is cut into fixed-size subflows, each subflow is scored by a
//! gradient-boosted tree ensemble, and the per-subflow predictions are mapped
//! to class likelihoods estimated from calibration confusion counts. The
//! joint likelihood ratio over a flow's subflows is then checked against a
//! certainty threshold in one of several decision modes.
//!
//! The pipeline, bottom-up:
//!
//! * [`packet_io`] reads classic PCAP files and the `pktrec` text format.
//! * [`flow`] groups packets into 5-tuple flows and segments subflows.
//! * [`features`] computes the `core8` / `ext14` statistics per subflow.
//! * [`models`] holds the GBDT plus Gaussian naive Bayes and KNN baselines.
//! * [`likelihood`] fits the confusion-derived likelihood table and
//!   accumulates joint log-likelihoods.
//! * [`classify`] turns likelihood sequences into flow verdicts.
//! * [`eval`] runs the split / train / calibrate / classify experiment grid.
//! * [`synth`] generates labeled synthetic traces.

pub mod classify;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod likelihood;
pub mod models;
pub mod packet_io;
pub mod synth;

pub use classify::{DecisionMode, DecisionPolicy, FlowDecision, Verdict};
pub use error::{Error, Result};
pub use features::{FeatureSet, FeatureVector};
pub use flow::{ClassLabel, Flow, FlowKey, Subflow};
pub use likelihood::{ConfusionCounts, LikelihoodState, LikelihoodTable};
pub use models::{GbdtModel, GbdtParams, ModelBundle, SubflowPrediction};
pub use packet_io::PacketRecord;
