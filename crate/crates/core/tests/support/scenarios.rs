//! The worked scenarios of `docs/metrics.md`, with their hand-computed values.

use mpntrack::graph::BBox;
use mpntrack::trajectory::{TrackBox, Trajectory};

pub struct Expected {
    pub mota: f64,
    pub idf1: f64,
    pub mostly_tracked: usize,
    pub mostly_lost: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub id_switches: usize,
}

pub struct Scenario {
    pub name: &'static str,
    pub gt: Vec<Trajectory>,
    pub pred: Vec<Trajectory>,
    pub expected: Expected,
}

fn track(id: u32, boxes: &[(usize, f64)]) -> Trajectory {
    Trajectory::new(
        id,
        boxes
            .iter()
            .map(|&(frame, x)| TrackBox {
                frame,
                bbox: BBox::new(x, 0.0, 10.0, 10.0),
                detection: None,
            })
            .collect(),
    )
}

fn still(id: u32, x: f64, frames: std::ops::Range<usize>) -> Trajectory {
    track(id, &frames.map(|f| (f, x)).collect::<Vec<_>>())
}

pub fn scenarios() -> Vec<Scenario> {
    const A: u32 = 0;
    const B: u32 = 1;
    vec![
        Scenario {
            name: "perfect tracking",
            gt: vec![still(A, 0.0, 0..3), still(B, 100.0, 0..3)],
            pred: vec![still(7, 0.0, 0..3), still(9, 100.0, 0..3)],
            expected: Expected {
                mota: 1.0,
                idf1: 1.0,
                mostly_tracked: 2,
                mostly_lost: 0,
                false_positives: 0,
                false_negatives: 0,
                id_switches: 0,
            },
        },
        Scenario {
            name: "one miss and one false positive",
            gt: vec![still(A, 0.0, 0..2), still(B, 100.0, 0..2)],
            pred: vec![still(1, 0.0, 0..2), track(2, &[(0, 100.0), (1, 300.0)])],
            expected: Expected {
                mota: 0.5,
                idf1: 0.75,
                mostly_tracked: 1,
                mostly_lost: 0,
                false_positives: 1,
                false_negatives: 1,
                id_switches: 0,
            },
        },
        Scenario {
            name: "identity swap",
            gt: vec![still(A, 0.0, 0..4), still(B, 100.0, 0..4)],
            pred: vec![
                track(1, &[(0, 0.0), (1, 0.0), (2, 100.0), (3, 100.0)]),
                track(2, &[(0, 100.0), (1, 100.0), (2, 0.0), (3, 0.0)]),
            ],
            expected: Expected {
                mota: 0.75,
                idf1: 0.5,
                mostly_tracked: 2,
                mostly_lost: 0,
                false_positives: 0,
                false_negatives: 0,
                id_switches: 2,
            },
        },
        Scenario {
            name: "track split in two",
            gt: vec![still(A, 0.0, 0..6)],
            pred: vec![still(1, 0.0, 0..3), still(2, 0.0, 3..6)],
            expected: Expected {
                mota: 1.0 - 1.0 / 6.0,
                idf1: 0.5,
                mostly_tracked: 1,
                mostly_lost: 0,
                false_positives: 0,
                false_negatives: 0,
                id_switches: 1,
            },
        },
        Scenario {
            name: "carry-over and a lost track",
            gt: vec![still(A, 0.0, 0..2), still(B, 100.0, 0..5)],
            pred: vec![track(1, &[(0, 0.0), (1, 2.5)]), track(2, &[(1, 0.0)])],
            expected: Expected {
                mota: 1.0 - 6.0 / 7.0,
                idf1: 0.4,
                mostly_tracked: 1,
                mostly_lost: 1,
                false_positives: 1,
                false_negatives: 5,
                id_switches: 0,
            },
        },
    ]
}
