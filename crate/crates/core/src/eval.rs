//! Evaluation metrics against simulator ground truth.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::simgen::GroundTruth;
use crate::types::{Correspondence, NodeId, TopologyGraph, TrackId};

/// Fraction of ground-truth pairs recovered: `TP / T_gt`. A prediction is a
/// true positive when its exact (exit track, matched track) pair is in the
/// ground truth; duplicates count once.
pub fn reid_accuracy(pred: &[Correspondence], gt: &GroundTruth) -> Result<f64> {
    if gt.correspondences.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let truth: HashSet<(TrackId, TrackId)> = gt
        .correspondences
        .iter()
        .map(|c| (c.exit_track, c.entry_track))
        .collect();
    let hits: HashSet<(TrackId, TrackId)> = pred
        .iter()
        .map(|c| (c.exit_track, c.matched_track))
        .filter(|p| truth.contains(p))
        .collect();
    Ok(hits.len() as f64 / truth.len() as f64)
}

/// Closed-form Bhattacharyya distance between two univariate Gaussians.
pub fn bhattacharyya_gaussian(g1: (f64, f64), g2: (f64, f64)) -> Result<f64> {
    let ((m1, s1), (m2, s2)) = (g1, g2);
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(invalid("bhattacharyya", "sigma must be positive"));
    }
    let v = s1 * s1 + s2 * s2;
    Ok(0.25 * (m1 - m2).powi(2) / v + 0.5 * (v / (2.0 * s1 * s2)).ln())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkDistance {
    pub source: NodeId,
    pub dest: NodeId,
    /// `None` when the link was not recovered.
    pub distance: Option<f64>,
    pub penalty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyDistance {
    /// Mean over recovered links only; `None` when nothing was recovered.
    pub matched: Option<f64>,
    /// Mean over all links, missing ones contributing their penalty.
    pub penalized: f64,
    pub missing: usize,
    pub links: Vec<LinkDistance>,
}

/// Gaussian stand-in for a flat transit histogram over `[0, window]`.
pub fn flat_fit(window: f64) -> (f64, f64) {
    (0.5 * window, window / 12f64.sqrt())
}

/// Mean Bhattacharyya distance between the valid links of `inferred` and the
/// links of `gt`, matched by (source, dest). Both graphs must use the same
/// node naming (see [`align_to_ground_truth`]). A missing link costs the
/// distance between its ground truth and `flat`.
pub fn topology_distance(inferred: &TopologyGraph, gt: &TopologyGraph, flat: (f64, f64)) -> Result<TopologyDistance> {
    if gt.edges.is_empty() {
        return Err(invalid("topology distance", "ground truth has no links"));
    }
    let mut links = Vec::with_capacity(gt.edges.len());
    for g in &gt.edges {
        let truth = (g.dist.mu, g.dist.sigma);
        let penalty = bhattacharyya_gaussian(truth, flat)?;
        let distance = match inferred.edge(g.source, g.dest).filter(|e| e.valid) {
            Some(e) => Some(bhattacharyya_gaussian((e.dist.mu, e.dist.sigma), truth)?),
            None => None,
        };
        links.push(LinkDistance {
            source: g.source,
            dest: g.dest,
            distance,
            penalty,
        });
    }
    let found: Vec<f64> = links.iter().filter_map(|l| l.distance).collect();
    let matched = (!found.is_empty()).then(|| found.iter().sum::<f64>() / found.len() as f64);
    let penalized =
        links.iter().map(|l| l.distance.unwrap_or(l.penalty)).sum::<f64>() / links.len() as f64;
    Ok(TopologyDistance {
        matched,
        penalized,
        missing: links.len() - found.len(),
        links,
    })
}

/// Precision and recall of the valid directed links of `inferred` against the
/// valid links of `gt`. With nothing predicted, precision is 1.
pub fn link_precision_recall(inferred: &TopologyGraph, gt: &TopologyGraph) -> (f64, f64) {
    let pred: BTreeSet<(NodeId, NodeId)> = inferred.valid_edges().map(|e| (e.source, e.dest)).collect();
    let truth: BTreeSet<(NodeId, NodeId)> = gt.valid_edges().map(|e| (e.source, e.dest)).collect();
    let correct = pred.intersection(&truth).count() as f64;
    let precision = if pred.is_empty() { 1.0 } else { correct / pred.len() as f64 };
    let recall = if truth.is_empty() { 1.0 } else { correct / truth.len() as f64 };
    (precision, recall)
}

/// Renames learned zones after the nearest physical zone of the same camera.
/// Edges that collapse onto the same physical pair keep the most confident
/// one.
pub fn align_to_ground_truth(inferred: &TopologyGraph, gt: &GroundTruth) -> TopologyGraph {
    let mut rename: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for z in &inferred.zones {
        let nearest = gt
            .zones
            .iter()
            .filter(|(c, _, _)| *c == z.camera)
            .min_by(|a, b| {
                let d = |p: [f64; 2]| (p[0] - z.centroid[0]).powi(2) + (p[1] - z.centroid[1]).powi(2);
                d(a.2).total_cmp(&d(b.2))
            });
        if let Some((camera, id, _)) = nearest {
            rename.insert(
                z.node(),
                NodeId::Zone {
                    camera: *camera,
                    kind: z.kind,
                    zone: *id,
                },
            );
        }
    }
    let map = |n: NodeId| rename.get(&n).copied().unwrap_or(n);

    let mut merged: BTreeMap<(NodeId, NodeId), crate::types::TopologyEdge> = BTreeMap::new();
    for e in &inferred.edges {
        let mut e = e.clone();
        e.source = map(e.source);
        e.dest = map(e.dest);
        e.dist.source = e.source;
        e.dist.dest = e.dest;
        let key = (e.source, e.dest);
        let replace = match merged.get(&key) {
            None => true,
            Some(old) => (e.valid, e.dist.confidence) > (old.valid, old.dist.confidence),
        };
        if replace {
            merged.insert(key, e);
        }
    }
    let mut nodes: Vec<NodeId> = inferred.nodes.iter().map(|n| map(*n)).collect();
    nodes.sort();
    nodes.dedup();
    TopologyGraph {
        level: inferred.level,
        nodes,
        zones: inferred.zones.clone(),
        edges: merged.into_values().collect(),
    }
}

/// Metrics document written by the `evaluate` command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub reid_accuracy: Option<f64>,
    pub reid_accuracy_reliable: Option<f64>,
    pub topology_distance_matched: Option<f64>,
    pub topology_distance_penalized: Option<f64>,
    pub link_precision: Option<f64>,
    pub link_recall: Option<f64>,
    pub missing_links: Option<usize>,
    pub wall_time_seconds: BTreeMap<String, f64>,
}
