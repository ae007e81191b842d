//! Appearance-vector and scored-edge text files.
//!
//! Appearance file: one line per detection, `id,c1,c2,...,cd`, where `id` is
//! the detection's 0-based ordinal in its detection file.
//!
//! Scored-edge file: one line per edge, `src,dst,score[,label]`, with `src`
//! and `dst` node indices and `src` the earlier endpoint.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{BBox, Detection, TrackingGraph};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn parse_appearance(text: &str, path: &Path) -> Result<HashMap<usize, Vec<f64>>> {
    let mut map = HashMap::new();
    let mut dim = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let id: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err(path, n + 1, "first field must be a detection id"))?;
        let v: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(path, n + 1, format!("not a number: `{f}`")))
            })
            .collect::<Result<_>>()?;
        if v.is_empty() {
            return Err(parse_err(path, n + 1, "empty appearance vector"));
        }
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(parse_err(
                    path,
                    n + 1,
                    format!("expected {d} components, found {}", v.len()),
                ));
            }
            _ => {}
        }
        if map.insert(id, v).is_some() {
            return Err(parse_err(path, n + 1, format!("duplicate id {id}")));
        }
    }
    Ok(map)
}

pub fn read_appearance(path: &Path) -> Result<HashMap<usize, Vec<f64>>> {
    parse_appearance(&fs::read_to_string(path)?, path)
}

pub fn format_appearance(detections: &[Detection]) -> String {
    let mut s = String::new();
    for d in detections {
        let _ = write!(s, "{}", d.id);
        for c in &d.appearance {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
    }
    s
}

pub fn write_appearance(path: &Path, detections: &[Detection]) -> Result<()> {
    fs::write(path, format_appearance(detections))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredEdge {
    pub src: usize,
    pub dst: usize,
    pub score: f64,
}

pub fn parse_scored_edges(text: &str, path: &Path) -> Result<Vec<ScoredEdge>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(parse_err(path, n + 1, "expected `src,dst,score`"));
        }
        let idx = |i: usize| -> Result<usize> {
            fields[i]
                .parse()
                .map_err(|_| parse_err(path, n + 1, format!("not a node index: `{}`", fields[i])))
        };
        let score: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(path, n + 1, format!("not a number: `{}`", fields[2])))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(parse_err(path, n + 1, format!("score {score} outside [0, 1]")));
        }
        out.push(ScoredEdge {
            src: idx(0)?,
            dst: idx(1)?,
            score,
        });
    }
    Ok(out)
}

pub fn read_scored_edges(path: &Path) -> Result<Vec<ScoredEdge>> {
    parse_scored_edges(&fs::read_to_string(path)?, path)
}

/// `src,dst,score,label` lines in edge order.
pub fn format_labeled_edges(graph: &TrackingGraph, scores: &[f64], labels: &[bool]) -> String {
    let mut s = String::new();
    for ((e, score), label) in graph.edges().iter().zip(scores).zip(labels) {
        let _ = writeln!(s, "{},{},{},{}", e.src, e.dst, score, u8::from(*label));
    }
    s
}

/// Builds a graph from a bare directed edge list. Each node is placed in the
/// frame equal to the length of the longest edge path reaching it, so that
/// every edge points forward in time. Returns the graph and the scores
/// reordered to the graph's edge order.
pub fn graph_from_scored_edges(edges: &[ScoredEdge]) -> Result<(TrackingGraph, Vec<f64>)> {
    let n = edges.iter().map(|e| e.src.max(e.dst) + 1).max().unwrap_or(0);
    let mut out_adj = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for e in edges {
        if e.src == e.dst {
            return Err(Error::InvalidParameter(format!("self loop at node {}", e.src)));
        }
        out_adj[e.src].push(e.dst);
        indeg[e.dst] += 1;
    }
    let mut depth = vec![0usize; n];
    let mut queue: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(u) = queue.pop() {
        seen += 1;
        for &v in &out_adj[u] {
            depth[v] = depth[v].max(depth[u] + 1);
            indeg[v] -= 1;
            if indeg[v] == 0 {
                queue.push(v);
            }
        }
    }
    if seen != n {
        return Err(Error::InvalidParameter("edge list contains a cycle".into()));
    }
    let nodes = (0..n)
        .map(|i| Detection::new(i, depth[i], BBox::new(0.0, 0.0, 1.0, 1.0)))
        .collect();
    let graph = TrackingGraph::from_edges(nodes, edges.iter().map(|e| (e.src, e.dst)))?;
    if graph.num_edges() != edges.len() {
        return Err(Error::InvalidParameter("duplicate edges in edge list".into()));
    }
    let mut scores = vec![0.0; edges.len()];
    for e in edges {
        let idx = graph.edge_index(e.src, e.dst).expect("edge was inserted");
        scores[idx] = e.score;
    }
    Ok((graph, scores))
}
