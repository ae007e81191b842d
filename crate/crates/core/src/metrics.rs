//! CLEAR-MOT and identity metrics. The matching rules and formulas are
//! described in `docs/metrics.md`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::BBox;
use crate::trajectory::Trajectory;

pub const DEFAULT_IOU: f64 = 0.5;
pub const MOSTLY_TRACKED: f64 = 0.8;
pub const MOSTLY_LOST: f64 = 0.2;

/// Minimum-cost assignment of rows to columns. Every row of a matrix with at
/// most as many rows as columns is assigned (and vice versa); the result maps
/// each row to its column, if any.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        let by_col = hungarian(&transposed);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }
    // Shortest augmenting paths with row/column potentials; index 0 is a
    // virtual column.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// One-to-one matching of ground-truth boxes to predicted boxes in a frame.
///
/// `carry` lists `(gt, pred)` index pairs to keep when they still overlap
/// by at least `iou_min`; they are taken in order and each box is used once.
/// The remaining boxes are matched for maximum cardinality, then maximum
/// total IoU. Returns `(gt, pred)` pairs sorted by ground-truth index.
pub fn match_frame(gt: &[BBox], pred: &[BBox], iou_min: f64, carry: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut pairs = Vec::new();
    for &(g, p) in carry {
        if g < gt.len() && p < pred.len() && !gt_used[g] && !pred_used[p] && gt[g].iou(&pred[p]) >= iou_min {
            gt_used[g] = true;
            pred_used[p] = true;
            pairs.push((g, p));
        }
    }
    let free_gt: Vec<usize> = (0..gt.len()).filter(|&g| !gt_used[g]).collect();
    let free_pred: Vec<usize> = (0..pred.len()).filter(|&p| !pred_used[p]).collect();
    if !free_gt.is_empty() && !free_pred.is_empty() {
        // Any assignment using an invalid pair costs more than every
        // assignment using only valid pairs.
        let invalid = 1.0 + free_gt.len().min(free_pred.len()) as f64;
        let cost: Vec<Vec<f64>> = free_gt
            .iter()
            .map(|&g| {
                free_pred
                    .iter()
                    .map(|&p| {
                        let iou = gt[g].iou(&pred[p]);
                        if iou >= iou_min {
                            1.0 - iou
                        } else {
                            invalid
                        }
                    })
                    .collect()
            })
            .collect();
        for (r, c) in hungarian(&cost).into_iter().enumerate() {
            if let Some(c) = c {
                let (g, p) = (free_gt[r], free_pred[c]);
                if gt[g].iou(&pred[p]) >= iou_min {
                    pairs.push((g, p));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Boxes of every frame, keyed by frame, as `(track id, box)` sorted by id.
fn boxes_by_frame(tracks: &[Trajectory]) -> BTreeMap<usize, Vec<(u32, BBox)>> {
    let mut frames: BTreeMap<usize, Vec<(u32, BBox)>> = BTreeMap::new();
    for t in tracks {
        for b in &t.boxes {
            frames.entry(b.frame).or_default().push((t.id, b.bbox));
        }
    }
    for v in frames.values_mut() {
        v.sort_by_key(|(id, _)| *id);
    }
    frames
}

fn check_ids(tracks: &[Trajectory], what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for t in tracks {
        if !seen.insert(t.id) {
            return Err(Error::InvalidParameter(format!("duplicate {what} track id {}", t.id)));
        }
        if t.boxes.windows(2).any(|w| w[0].frame == w[1].frame) {
            return Err(Error::InvalidParameter(format!(
                "{what} track {} has two boxes in one frame",
                t.id
            )));
        }
    }
    Ok(())
}

/// CLEAR-MOT counts.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ClearMot {
    pub gt_boxes: usize,
    pub pred_boxes: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub id_switches: usize,
    pub mota: f64,
    /// Per ground-truth track: (frames matched, frames present).
    pub coverage: BTreeMap<u32, (usize, usize)>,
}

pub fn clear_mot(gt: &[Trajectory], pred: &[Trajectory], iou_min: f64) -> Result<ClearMot> {
    check_ids(gt, "ground-truth")?;
    check_ids(pred, "predicted")?;
    let gt_frames = boxes_by_frame(gt);
    let pred_frames = boxes_by_frame(pred);
    let mut out = ClearMot::default();
    for t in gt {
        out.coverage.insert(t.id, (0, t.len()));
    }
    let mut last: HashMap<u32, u32> = HashMap::new();
    let empty = Vec::new();
    let frames: std::collections::BTreeSet<usize> = gt_frames.keys().chain(pred_frames.keys()).copied().collect();
    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let p = pred_frames.get(&f).unwrap_or(&empty);
        let carry: Vec<(usize, usize)> = g
            .iter()
            .enumerate()
            .filter_map(|(gi, (gid, _))| {
                let h = last.get(gid)?;
                p.iter().position(|(pid, _)| pid == h).map(|pi| (gi, pi))
            })
            .collect();
        let gb: Vec<BBox> = g.iter().map(|x| x.1).collect();
        let pb: Vec<BBox> = p.iter().map(|x| x.1).collect();
        let pairs = match_frame(&gb, &pb, iou_min, &carry);
        out.gt_boxes += g.len();
        out.pred_boxes += p.len();
        out.false_negatives += g.len() - pairs.len();
        out.false_positives += p.len() - pairs.len();
        for (gi, pi) in pairs {
            let (gid, pid) = (g[gi].0, p[pi].0);
            if let Some(prev) = last.insert(gid, pid) {
                if prev != pid {
                    out.id_switches += 1;
                }
            }
            out.coverage.get_mut(&gid).expect("known track").0 += 1;
        }
    }
    if out.gt_boxes == 0 {
        return Err(Error::NoGroundTruth);
    }
    out.mota = mota_value(out.false_negatives, out.false_positives, out.id_switches, out.gt_boxes);
    Ok(out)
}

fn mota_value(fn_: usize, fp: usize, idsw: usize, gt: usize) -> f64 {
    1.0 - (fn_ + fp + idsw) as f64 / gt as f64
}

/// Identity counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct IdScores {
    pub idtp: usize,
    pub gt_boxes: usize,
    pub pred_boxes: usize,
    pub idf1: f64,
}

fn idf1_value(idtp: usize, gt: usize, pred: usize) -> f64 {
    if gt + pred == 0 {
        1.0
    } else {
        2.0 * idtp as f64 / (gt + pred) as f64
    }
}

pub fn idf1(gt: &[Trajectory], pred: &[Trajectory], iou_min: f64) -> Result<IdScores> {
    check_ids(gt, "ground-truth")?;
    check_ids(pred, "predicted")?;
    let gt_index: HashMap<u32, usize> = gt.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
    let pred_index: HashMap<u32, usize> = pred.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
    let mut overlap = vec![vec![0usize; pred.len()]; gt.len()];
    let pred_frames = boxes_by_frame(pred);
    for (f, g) in boxes_by_frame(gt) {
        let Some(p) = pred_frames.get(&f) else { continue };
        for (gid, gb) in &g {
            for (pid, pb) in p {
                if gb.iou(pb) >= iou_min {
                    overlap[gt_index[gid]][pred_index[pid]] += 1;
                }
            }
        }
    }
    let cost: Vec<Vec<f64>> = overlap
        .iter()
        .map(|r| r.iter().map(|&c| -(c as f64)).collect())
        .collect();
    let idtp = hungarian(&cost)
        .into_iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| overlap[r][c]))
        .sum();
    let gt_boxes = gt.iter().map(Trajectory::len).sum();
    let pred_boxes = pred.iter().map(Trajectory::len).sum();
    Ok(IdScores {
        idtp,
        gt_boxes,
        pred_boxes,
        idf1: idf1_value(idtp, gt_boxes, pred_boxes),
    })
}

/// Mostly tracked, partially tracked and mostly lost ground-truth tracks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TrackCoverage {
    pub mostly_tracked: usize,
    pub partially_tracked: usize,
    pub mostly_lost: usize,
}

pub fn mt_ml(clear: &ClearMot) -> TrackCoverage {
    let mut out = TrackCoverage::default();
    for &(matched, present) in clear.coverage.values() {
        let ratio = if present == 0 {
            0.0
        } else {
            matched as f64 / present as f64
        };
        if ratio >= MOSTLY_TRACKED {
            out.mostly_tracked += 1;
        } else if ratio <= MOSTLY_LOST {
            out.mostly_lost += 1;
        } else {
            out.partially_tracked += 1;
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalResult {
    pub mota: f64,
    pub idf1: f64,
    pub mostly_tracked: usize,
    pub partially_tracked: usize,
    pub mostly_lost: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub id_switches: usize,
    pub gt_boxes: usize,
    pub pred_boxes: usize,
    pub idtp: usize,
}

impl EvalResult {
    /// Sums counts over sequences and recomputes the ratios.
    pub fn aggregate(results: &[EvalResult]) -> Result<EvalResult> {
        let mut out = EvalResult::default();
        for r in results {
            out.mostly_tracked += r.mostly_tracked;
            out.partially_tracked += r.partially_tracked;
            out.mostly_lost += r.mostly_lost;
            out.false_positives += r.false_positives;
            out.false_negatives += r.false_negatives;
            out.id_switches += r.id_switches;
            out.gt_boxes += r.gt_boxes;
            out.pred_boxes += r.pred_boxes;
            out.idtp += r.idtp;
        }
        if out.gt_boxes == 0 {
            return Err(Error::NoGroundTruth);
        }
        out.mota = mota_value(out.false_negatives, out.false_positives, out.id_switches, out.gt_boxes);
        out.idf1 = idf1_value(out.idtp, out.gt_boxes, out.pred_boxes);
        Ok(out)
    }
}

pub fn evaluate(gt: &[Trajectory], pred: &[Trajectory], iou_min: f64) -> Result<EvalResult> {
    let clear = clear_mot(gt, pred, iou_min)?;
    let id = idf1(gt, pred, iou_min)?;
    let cov = mt_ml(&clear);
    Ok(EvalResult {
        mota: clear.mota,
        idf1: id.idf1,
        mostly_tracked: cov.mostly_tracked,
        partially_tracked: cov.partially_tracked,
        mostly_lost: cov.mostly_lost,
        false_positives: clear.false_positives,
        false_negatives: clear.false_negatives,
        id_switches: clear.id_switches,
        gt_boxes: clear.gt_boxes,
        pred_boxes: clear.pred_boxes,
        idtp: id.idtp,
    })
}

/// A named row of a metrics table with an optional constraint-satisfaction
/// ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub name: String,
    pub result: EvalResult,
    pub constraint_satisfaction: Option<f64>,
}

pub const TABLE_HEADER: &str = "name,MOTA,IDF1,MT,ML,FP,FN,IDSW,Constr";

/// CSV table; ratios as percentages with three decimals, empty `Constr` when
/// unknown.
pub fn format_table(rows: &[TableRow]) -> String {
    let mut s = String::from(TABLE_HEADER);
    s.push('\n');
    for r in rows {
        let e = &r.result;
        let constr = r
            .constraint_satisfaction
            .map(|c| format!("{:.3}", 100.0 * c))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{:.3},{:.3},{},{},{},{},{},{}",
            r.name,
            100.0 * e.mota,
            100.0 * e.idf1,
            e.mostly_tracked,
            e.mostly_lost,
            e.false_positives,
            e.false_negatives,
            e.id_switches,
            constr
        );
    }
    s
}

/// Fixed-width table for terminals.
pub fn format_summary(rows: &[TableRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(8);
    let mut s = format!(
        "{:<width$} {:>7} {:>7} {:>5} {:>5} {:>7} {:>7} {:>6} {:>7}\n",
        "", "MOTA", "IDF1", "MT", "ML", "FP", "FN", "ID Sw.", "Constr"
    );
    for r in rows {
        let e = &r.result;
        let constr = r
            .constraint_satisfaction
            .map(|c| format!("{:.1}", 100.0 * c))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<width$} {:>7.1} {:>7.1} {:>5} {:>5} {:>7} {:>7} {:>6} {:>7}",
            r.name,
            100.0 * e.mota,
            100.0 * e.idf1,
            e.mostly_tracked,
            e.mostly_lost,
            e.false_positives,
            e.false_negatives,
            e.id_switches,
            constr
        );
    }
    s
}
