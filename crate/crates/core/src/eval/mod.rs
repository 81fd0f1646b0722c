//! Metrics, corpus generation and edit sweeps.

pub mod corpus;
pub mod metrics;
pub mod sweep;

pub use corpus::{generate_corpus, load_corpus, save_corpus, training_pairs, CorpusConfig, CorpusItem, Manifest};
pub use metrics::{classify_failure, compliance_error, distance_error, iou, violation_ratio, EditKind};
pub use sweep::{sweep_lattice, sweep_nodesign, sweep_warp, SweepConfig, SweepReport, Topology};
