use serde::{Deserialize, Serialize};

use crate::graph::BBox;

/// One box of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackBox {
    /// Zero-based frame index.
    pub frame: usize,
    pub bbox: BBox,
    /// Index of the originating detection; `None` for interpolated boxes.
    pub detection: Option<usize>,
}

/// Time-ordered boxes sharing one identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u32,
    pub boxes: Vec<TrackBox>,
}

impl Trajectory {
    pub fn new(id: u32, mut boxes: Vec<TrackBox>) -> Self {
        boxes.sort_by_key(|b| b.frame);
        Self { id, boxes }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn first_frame(&self) -> Option<usize> {
        self.boxes.first().map(|b| b.frame)
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.boxes.last().map(|b| b.frame)
    }

    pub fn box_at(&self, frame: usize) -> Option<&TrackBox> {
        self.boxes
            .binary_search_by_key(&frame, |b| b.frame)
            .ok()
            .map(|i| &self.boxes[i])
    }
}
