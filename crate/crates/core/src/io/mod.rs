//! File formats and synthetic data.

pub mod mot;
pub mod synthetic;
pub mod tables;

pub use mot::{read_detections, read_ground_truth, read_mot, write_detections, write_results, MotRecord};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticSequence};
pub use tables::{read_appearance, read_scored_edges, write_appearance, ScoredEdge};
