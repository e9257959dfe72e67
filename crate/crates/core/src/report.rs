//! Run reports and plot-ready CSV dumps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Comparisons, IterationRecord, ReidResults, TrainingRun};
use crate::types::{
    CameraId, Correspondence, EventStream, NodeId, PipelineConfig, SearchWindow, TopologyEdge, TopologyGraph, Zone,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSummary {
    pub source: NodeId,
    pub dest: NodeId,
    pub mu: f64,
    pub sigma: f64,
    pub fit_error: f64,
    pub confidence: f64,
    pub support: usize,
    pub valid: bool,
    pub retained: bool,
    pub window: SearchWindow,
}

impl From<&TopologyEdge> for EdgeSummary {
    fn from(e: &TopologyEdge) -> Self {
        Self {
            source: e.source,
            dest: e.dest,
            mu: e.dist.mu,
            sigma: e.dist.sigma,
            fit_error: e.dist.fit_error,
            confidence: e.dist.confidence,
            support: e.dist.support,
            valid: e.valid,
            retained: e.retained,
            window: e.window,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReidSummary {
    pub correspondences: usize,
    pub reliable: usize,
    pub comparisons: u64,
}

impl From<&ReidResults> for ReidSummary {
    fn from(r: &ReidResults) -> Self {
        Self {
            correspondences: r.correspondences.len(),
            reliable: r.reliable.len(),
            comparisons: r.comparisons,
        }
    }
}

/// Everything `train` produces except wall-clock timings, so that a fixed
/// seed gives a byte-identical file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: PipelineConfig,
    pub tracks: usize,
    pub cameras: Vec<CameraId>,
    pub camera_links: Vec<EdgeSummary>,
    pub zones: Vec<Zone>,
    pub zone_links: Vec<EdgeSummary>,
    pub history: Vec<IterationRecord>,
    pub comparisons: Comparisons,
    pub initial: ReidSummary,
    pub result: ReidSummary,
    pub correspondences: Vec<Correspondence>,
}

impl TrainingReport {
    pub fn new(run: &TrainingRun, stream: &EventStream, cfg: &PipelineConfig) -> Self {
        Self {
            config: cfg.clone(),
            tracks: stream.len(),
            cameras: stream.cameras().collect(),
            camera_links: run.state.camera_topology.edges.iter().map(EdgeSummary::from).collect(),
            zones: run.state.topology.zones.clone(),
            zone_links: run.state.topology.edges.iter().map(EdgeSummary::from).collect(),
            history: run.state.history.clone(),
            comparisons: run.state.comparisons.clone(),
            initial: ReidSummary::from(&run.initial),
            result: ReidSummary::from(&run.result),
            correspondences: run.result.correspondences.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub config: PipelineConfig,
    pub tracks: usize,
    pub valid_links: usize,
    pub result: ReidSummary,
    pub correspondences: Vec<Correspondence>,
}

impl TestReport {
    pub fn new(results: &ReidResults, topology: &TopologyGraph, stream: &EventStream, cfg: &PipelineConfig) -> Self {
        Self {
            config: cfg.clone(),
            tracks: stream.len(),
            valid_links: topology.valid_edges().count(),
            result: ReidSummary::from(results),
            correspondences: results.correspondences.clone(),
        }
    }
}

/// Stage name to seconds.
pub type Timings = BTreeMap<String, f64>;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Histogram and fitted curve of one link: a `bin_center,mass,fitted_value`
/// table followed by a `#` comment line with the fit summary.
pub fn link_csv(edge: &TopologyEdge) -> String {
    let d = &edge.dist;
    let mut out = String::from("bin_center,mass,fitted_value\n");
    for (x, m) in d.bin_centers().into_iter().zip(&d.masses) {
        let _ = writeln!(out, "{x},{m},{}", d.fitted_value(x));
    }
    let _ = writeln!(
        out,
        "# mu={},sigma={},fit_error={},confidence={},support={}",
        d.mu, d.sigma, d.fit_error, d.confidence, d.support
    );
    out
}

pub fn link_csv_name(edge: &TopologyEdge) -> String {
    format!("link_{}__{}.csv", edge.source, edge.dest)
}

/// Writes one CSV per edge of `graph` into `dir`.
pub fn dump_plots(graph: &TopologyGraph, dir: &Path) -> Result<Vec<PathBuf>> {
    graph
        .edges
        .iter()
        .map(|e| {
            let path = dir.join(link_csv_name(e));
            write_text(&path, &link_csv(e))?;
            Ok(path)
        })
        .collect()
}

fn camera_matrix(graph: &TopologyGraph, cell: impl Fn(&TopologyEdge) -> String) -> String {
    let mut cams: Vec<CameraId> = graph.nodes.iter().map(|n| n.camera()).collect();
    cams.sort();
    cams.dedup();
    let mut out = String::from("source");
    for c in &cams {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for a in &cams {
        out.push_str(&a.to_string());
        for b in &cams {
            out.push(',');
            let edge = graph
                .edges
                .iter()
                .find(|e| e.source.camera() == *a && e.dest.camera() == *b);
            if let Some(e) = edge {
                out.push_str(&cell(e));
            }
        }
        out.push('\n');
    }
    out
}

/// Camera-by-camera confidence matrix of a camera-level graph; rows are
/// sources. Missing pairs (the diagonal) are left empty.
pub fn confidence_map_csv(graph: &TopologyGraph) -> String {
    camera_matrix(graph, |e| e.dist.confidence.to_string())
}

/// Same layout as [`confidence_map_csv`] with 1 for valid links and 0
/// otherwise.
pub fn validity_map_csv(graph: &TopologyGraph) -> String {
    camera_matrix(graph, |e| u8::from(e.valid).to_string())
}

pub fn write_confidence_maps(graph: &TopologyGraph, dir: &Path) -> Result<()> {
    write_text(&dir.join("confidence_map.csv"), &confidence_map_csv(graph))?;
    write_text(&dir.join("validity_map.csv"), &validity_map_csv(graph))
}
