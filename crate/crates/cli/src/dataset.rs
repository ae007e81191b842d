//! Synthetic dataset directories.
//!
//! A dataset directory holds `det.txt` (detections, MOT format, id column =
//! ground-truth identity or −1), `gt.txt` (ground truth, MOT format),
//! `app.txt` (appearance vectors keyed by detection ordinal) and
//! `seqinfo.toml` (frame rate, length, image size, camera motion).

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mpntrack::encoders::AppearanceProvider;
use mpntrack::graph::Detection;
use mpntrack::io::{self, SyntheticSequence};
use mpntrack::trainer::TrainingSequence;
use serde::{Deserialize, Serialize};

pub const DETECTIONS: &str = "det.txt";
pub const GROUND_TRUTH: &str = "gt.txt";
pub const APPEARANCE: &str = "app.txt";
pub const SEQINFO: &str = "seqinfo.toml";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqInfo {
    pub fps: f64,
    pub n_frames: usize,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub moving_camera: bool,
}

pub struct Dataset {
    pub info: SeqInfo,
    pub detections: Vec<Detection>,
}

impl Dataset {
    pub fn training_sequence(&self) -> TrainingSequence {
        TrainingSequence {
            detections: self.detections.clone(),
            n_frames: self.info.n_frames,
            fps: self.info.fps,
            moving_camera: self.info.moving_camera,
        }
    }
}

pub fn write(dir: &Path, seq: &SyntheticSequence, width: f64, height: f64) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    io::write_detections(&dir.join(DETECTIONS), &seq.detections)?;
    io::write_results(&dir.join(GROUND_TRUTH), &seq.ground_truth)?;
    io::write_appearance(&dir.join(APPEARANCE), &seq.detections)?;
    let info = SeqInfo {
        fps: seq.fps,
        n_frames: seq.n_frames,
        width,
        height,
        moving_camera: false,
    };
    fs::write(dir.join(SEQINFO), toml::to_string(&info)?)?;
    Ok(())
}

pub fn read_info(dir: &Path) -> Result<SeqInfo> {
    let path = dir.join(SEQINFO);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn read(dir: &Path) -> Result<Dataset> {
    let info = read_info(dir)?;
    let mut detections = io::read_detections(&dir.join(DETECTIONS))?;
    let appearance = io::read_appearance(&dir.join(APPEARANCE))?;
    AppearanceProvider::File(appearance).assign(&mut detections)?;
    Ok(Dataset { info, detections })
}
