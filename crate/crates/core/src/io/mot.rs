//! MOTChallenge-style text files.
//!
//! Every line is `frame,id,left,top,width,height,conf,x,y,z` with 1-based
//! frames. Frames are converted to 0-based indices on read and back on write.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{BBox, Detection};
use crate::trajectory::{TrackBox, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotRecord {
    /// 1-based, as stored in the file.
    pub frame: usize,
    pub id: i64,
    pub bbox: BBox,
    pub conf: f64,
    pub extra: [f64; 3],
}

pub fn parse_mot(text: &str, path: &Path) -> Result<Vec<MotRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 7 {
            return Err(err(format!("expected at least 7 fields, found {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| err(format!("field {} is not a number: `{}`", i + 1, fields[i])))
        };
        let frame = num(0)?;
        if frame < 1.0 || frame.fract() != 0.0 {
            return Err(err(format!("frame must be a positive integer, got `{}`", fields[0])));
        }
        let id = num(1)?;
        if id.fract() != 0.0 {
            return Err(err(format!("id must be an integer, got `{}`", fields[1])));
        }
        let bbox = BBox::new(num(2)?, num(3)?, num(4)?, num(5)?);
        if !bbox.is_valid() {
            return Err(err("box width and height must be positive".into()));
        }
        let mut extra = [-1.0; 3];
        for (k, slot) in extra.iter_mut().enumerate() {
            if fields.len() > 7 + k {
                *slot = num(7 + k)?;
            }
        }
        out.push(MotRecord {
            frame: frame as usize,
            id: id as i64,
            bbox,
            conf: num(6)?,
            extra,
        });
    }
    Ok(out)
}

pub fn read_mot(path: &Path) -> Result<Vec<MotRecord>> {
    parse_mot(&fs::read_to_string(path)?, path)
}

/// Detections in file order; `id` is the 0-based line ordinal among records,
/// and a nonnegative id column becomes the ground-truth identity.
pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    Ok(records_to_detections(&read_mot(path)?))
}

pub fn records_to_detections(records: &[MotRecord]) -> Vec<Detection> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d = Detection::new(i, r.frame - 1, r.bbox).with_confidence(r.conf);
            if r.id >= 0 {
                d.with_track(r.id as u32)
            } else {
                d
            }
        })
        .collect()
}

/// Ground-truth boxes grouped by id into trajectories ordered by id.
pub fn read_ground_truth(path: &Path) -> Result<Vec<Trajectory>> {
    records_to_trajectories(&read_mot(path)?, path)
}

pub fn records_to_trajectories(records: &[MotRecord], path: &Path) -> Result<Vec<Trajectory>> {
    let mut by_id: BTreeMap<i64, Vec<TrackBox>> = BTreeMap::new();
    for r in records {
        by_id.entry(r.id).or_default().push(TrackBox {
            frame: r.frame - 1,
            bbox: r.bbox,
            detection: None,
        });
    }
    let mut out = Vec::with_capacity(by_id.len());
    for (id, boxes) in by_id {
        let id = u32::try_from(id).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("track id {id} is not a nonnegative integer"),
        })?;
        let traj = Trajectory::new(id, boxes);
        if traj.boxes.windows(2).any(|w| w[0].frame == w[1].frame) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("track {id} has two boxes in one frame"),
            });
        }
        out.push(traj);
    }
    Ok(out)
}

/// Trajectories as MOT lines sorted by frame, then id; conf 1, trailing −1.
pub fn format_trajectories(trajectories: &[Trajectory]) -> String {
    let mut rows: Vec<(usize, u32, BBox)> = trajectories
        .iter()
        .flat_map(|t| t.boxes.iter().map(move |b| (b.frame, t.id, b.bbox)))
        .collect();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut s = String::new();
    for (frame, id, b) in rows {
        let _ = writeln!(s, "{},{},{},{},{},{},1,-1,-1,-1", frame + 1, id, b.x, b.y, b.w, b.h);
    }
    s
}

pub fn write_results(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    fs::write(path, format_trajectories(trajectories))?;
    Ok(())
}

/// Detections in file order. The id column carries the ground-truth identity,
/// or −1 when there is none.
pub fn format_detections(detections: &[Detection]) -> String {
    let mut s = String::new();
    for d in detections {
        let id = d.gt_track.map_or(-1, i64::from);
        let b = d.bbox;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},-1,-1,-1",
            d.frame + 1,
            id,
            b.x,
            b.y,
            b.w,
            b.h,
            d.confidence
        );
    }
    s
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    fs::write(path, format_detections(detections))?;
    Ok(())
}
