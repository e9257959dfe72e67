//! Domain types shared by every stage: descriptors, tracks, zones, transit
//! distributions and the topology graph.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Point2 = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraId(pub u32);

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

/// Unit-norm, non-negative appearance descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Validates and L2-normalizes `values`. Vectors already of unit norm are
    /// kept bit-for-bit.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("feature vector", "empty"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid(
                "feature vector",
                format!("entries must be finite and non-negative, found {v}"),
            ));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(invalid("feature vector", "zero norm"));
        }
        if (norm - 1.0).abs() > 1e-12 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self(values))
    }

    /// Clamps negative entries to zero before normalizing. Falls back to the
    /// uniform direction if everything was clamped away.
    pub fn from_raw_clamped(values: Vec<f64>) -> Self {
        let dim = values.len().max(1);
        let clamped: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
        Self::new(clamped).unwrap_or_else(|_| Self(vec![1.0 / (dim as f64).sqrt(); dim]))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = crate::Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub camera: CameraId,
    pub time: f64,
    pub position: Point2,
    pub feature: FeatureVector,
}

/// One person's passage through one camera view.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonTrack {
    /// Ground-truth identity. Only evaluation reads it.
    pub label: Option<u64>,
    pub camera: CameraId,
    observations: Vec<Observation>,
    pub entry_point: Point2,
    pub exit_point: Point2,
}

fn in_unit_square(p: Point2) -> bool {
    p.iter().all(|c| (0.0..=1.0).contains(c))
}

impl PersonTrack {
    pub fn new(
        camera: CameraId,
        label: Option<u64>,
        observations: Vec<Observation>,
        entry_point: Point2,
        exit_point: Point2,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(invalid("track", "no observations"));
        }
        for (i, obs) in observations.iter().enumerate() {
            if obs.camera != camera {
                return Err(invalid(
                    "track",
                    format!("observation {i} is from {} not {camera}", obs.camera),
                ));
            }
            if !(obs.time.is_finite() && obs.time >= 0.0) {
                return Err(invalid("track", format!("observation {i} has time {}", obs.time)));
            }
            if !in_unit_square(obs.position) {
                return Err(invalid(
                    "track",
                    format!("observation {i} position {:?} outside [0,1]^2", obs.position),
                ));
            }
        }
        if let Some(i) = observations.windows(2).position(|w| w[1].time <= w[0].time) {
            return Err(invalid(
                "track",
                format!("observations not strictly increasing in time at index {}", i + 1),
            ));
        }
        if !in_unit_square(entry_point) || !in_unit_square(exit_point) {
            return Err(invalid("track", "entry/exit point outside [0,1]^2"));
        }
        let dim = observations[0].feature.dim();
        if observations.iter().any(|o| o.feature.dim() != dim) {
            return Err(invalid("track", "mixed descriptor dimensions"));
        }
        Ok(Self {
            label,
            camera,
            observations,
            entry_point,
            exit_point,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn entry_time(&self) -> f64 {
        self.observations[0].time
    }

    pub fn exit_time(&self) -> f64 {
        self.observations[self.observations.len() - 1].time
    }

    pub fn dim(&self) -> usize {
        self.observations[0].feature.dim()
    }

    pub fn without_label(mut self) -> Self {
        self.label = None;
        self
    }
}

/// Stable track identity: camera plus ordinal among that camera's tracks in
/// stream order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrackId {
    pub camera: CameraId,
    pub seq: u32,
}

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.camera, self.seq)
    }
}

/// An ordered collection of tracks with derived ids and per-camera indexes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventStream {
    tracks: Vec<PersonTrack>,
    ids: Vec<TrackId>,
    by_camera: BTreeMap<CameraId, Vec<usize>>,
}

impl EventStream {
    pub fn new(tracks: Vec<PersonTrack>) -> Self {
        let mut by_camera: BTreeMap<CameraId, Vec<usize>> = BTreeMap::new();
        let mut ids = Vec::with_capacity(tracks.len());
        for (i, t) in tracks.iter().enumerate() {
            let list = by_camera.entry(t.camera).or_default();
            ids.push(TrackId {
                camera: t.camera,
                seq: list.len() as u32,
            });
            list.push(i);
        }
        Self {
            tracks,
            ids,
            by_camera,
        }
    }

    pub fn tracks(&self) -> &[PersonTrack] {
        &self.tracks
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn id(&self, index: usize) -> TrackId {
        self.ids[index]
    }

    pub fn index_of(&self, id: TrackId) -> Option<usize> {
        self.by_camera
            .get(&id.camera)
            .and_then(|v| v.get(id.seq as usize))
            .copied()
    }

    pub fn track(&self, id: TrackId) -> Option<&PersonTrack> {
        self.index_of(id).map(|i| &self.tracks[i])
    }

    pub fn cameras(&self) -> impl Iterator<Item = CameraId> + '_ {
        self.by_camera.keys().copied()
    }

    pub fn camera_tracks(&self, camera: CameraId) -> &[usize] {
        self.by_camera.get(&camera).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn dim(&self) -> Option<usize> {
        self.tracks.first().map(PersonTrack::dim)
    }

    /// Strips ground-truth labels.
    pub fn blind(&self) -> Self {
        Self::new(self.tracks.iter().cloned().map(PersonTrack::without_label).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoneKind {
    Entry,
    Exit,
}

impl ZoneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ZoneKind::Entry => "entry",
            ZoneKind::Exit => "exit",
        }
    }
}

/// A learned entry or exit region of a camera view, modelled as a 2D Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub camera: CameraId,
    pub zone_id: u32,
    pub kind: ZoneKind,
    pub centroid: Point2,
    pub spread: [[f64; 2]; 2],
}

impl Zone {
    pub fn new(
        camera: CameraId,
        zone_id: u32,
        kind: ZoneKind,
        centroid: Point2,
        spread: [[f64; 2]; 2],
    ) -> Result<Self> {
        let [[a, b], [c, d]] = spread;
        if (b - c).abs() > 1e-12 * (1.0 + b.abs()) {
            return Err(invalid("zone", "covariance not symmetric"));
        }
        if !(a > 0.0 && a * d - b * c > 0.0) {
            return Err(invalid("zone", "covariance not positive definite"));
        }
        Ok(Self {
            camera,
            zone_id,
            kind,
            centroid,
            spread,
        })
    }

    pub fn node(&self) -> NodeId {
        NodeId::Zone {
            camera: self.camera,
            kind: self.kind,
            zone: self.zone_id,
        }
    }

    pub fn log_likelihood(&self, p: Point2) -> f64 {
        gaussian2_log_pdf(p, self.centroid, self.spread)
    }
}

pub(crate) fn gaussian2_log_pdf(p: Point2, mean: Point2, cov: [[f64; 2]; 2]) -> f64 {
    let [[a, b], [_, d]] = cov;
    let det = a * d - b * b;
    let dx = p[0] - mean[0];
    let dy = p[1] - mean[1];
    let maha = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
    -0.5 * maha - 0.5 * det.ln() - std::f64::consts::LN_2 - std::f64::consts::PI.ln()
}

/// A topology vertex: a whole camera, or one of its entry/exit zones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NodeId {
    Camera { camera: CameraId },
    Zone {
        camera: CameraId,
        kind: ZoneKind,
        zone: u32,
    },
}

impl NodeId {
    pub fn camera(self) -> CameraId {
        match self {
            NodeId::Camera { camera } | NodeId::Zone { camera, .. } => camera,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Camera { camera } => write!(f, "{camera}"),
            NodeId::Zone { camera, kind, zone } => {
                let k = match kind {
                    ZoneKind::Entry => "in",
                    ZoneKind::Exit => "out",
                };
                write!(f, "{camera}Z{zone}{k}")
            }
        }
    }
}

/// Normalized transit-time histogram with its Gaussian fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitDistribution {
    pub source: NodeId,
    pub dest: NodeId,
    pub bin_edges: Vec<f64>,
    pub masses: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub amplitude: f64,
    pub fit_error: f64,
    pub confidence: f64,
    pub support: usize,
    /// Samples that fell outside the histogram range.
    pub discarded: usize,
}

impl TransitDistribution {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn fitted_value(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

/// Per-edge search window. `t_lower`/`t_upper` are the quantile bounds of the
/// fit the window was planned from, `width` is the window length T, `[lo, hi]`
/// is the admissible transit-time range used to gate candidates and `target`
/// the transit time the forest slot is chosen around.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchWindow {
    pub t_lower: f64,
    pub t_upper: f64,
    pub width: f64,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub target: f64,
}

impl SearchWindow {
    pub fn contains(&self, delta_t: f64) -> bool {
        delta_t >= self.lo && delta_t <= self.hi
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyEdge {
    pub source: NodeId,
    pub dest: NodeId,
    pub dist: TransitDistribution,
    pub valid: bool,
    pub window: SearchWindow,
    /// Set when the latest refit degenerated and the previous fit was kept.
    #[serde(default)]
    pub retained: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyLevel {
    Camera,
    Zone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyGraph {
    pub level: TopologyLevel,
    pub nodes: Vec<NodeId>,
    #[serde(default)]
    pub zones: Vec<Zone>,
    pub edges: Vec<TopologyEdge>,
}

impl TopologyGraph {
    pub fn empty(level: TopologyLevel) -> Self {
        Self {
            level,
            nodes: Vec::new(),
            zones: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn valid_edges(&self) -> impl Iterator<Item = &TopologyEdge> {
        self.edges.iter().filter(|e| e.valid)
    }

    pub fn edge(&self, source: NodeId, dest: NodeId) -> Option<&TopologyEdge> {
        self.edges
            .iter()
            .find(|e| e.source == source && e.dest == dest)
    }

    pub fn is_valid_link(&self, source: NodeId, dest: NodeId) -> bool {
        self.edge(source, dest).is_some_and(|e| e.valid)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub exit_track: TrackId,
    pub matched_track: TrackId,
    pub similarity: f64,
    pub delta_t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Minimum number of samples in each child of a split.
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` means floor(sqrt(D)).
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 16,
            min_samples_leaf: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsMode {
    /// Central quantiles of the fitted Gaussian.
    #[default]
    Parametric,
    /// Quantiles of the empirical histogram.
    Empirical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub theta_sim: f64,
    pub theta_conf: f64,
    pub initial_window_t: f64,
    pub quantile_r: f64,
    pub bin_width: f64,
    pub sigma_scale: f64,
    /// Forest-series stride as a fraction of the slot width T.
    pub slot_stride_fraction: f64,
    pub forest: ForestParams,
    pub k_max: usize,
    pub bounds_mode: BoundsMode,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            theta_sim: 0.7,
            theta_conf: 0.4,
            initial_window_t: 600.0,
            quantile_r: 95.0,
            bin_width: 2.0,
            sigma_scale: 60.0,
            slot_stride_fraction: 0.25,
            forest: ForestParams::default(),
            k_max: 5,
            bounds_mode: BoundsMode::Parametric,
            tolerance: 0.01,
            max_iterations: 10,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.theta_sim) {
            return Err(invalid("config", "theta_sim must lie in (0,1)"));
        }
        if !unit(self.theta_conf) {
            return Err(invalid("config", "theta_conf must lie in (0,1)"));
        }
        if !(self.initial_window_t > 0.0) {
            return Err(invalid("config", "initial_window_t must be positive"));
        }
        if !(self.quantile_r > 0.0 && self.quantile_r < 100.0) {
            return Err(invalid("config", "quantile_r must lie in (0,100)"));
        }
        if !(self.bin_width > 0.0) || !(self.sigma_scale > 0.0) {
            return Err(invalid("config", "bin_width and sigma_scale must be positive"));
        }
        if !(self.slot_stride_fraction > 0.0 && self.slot_stride_fraction <= 1.0) {
            return Err(invalid("config", "slot_stride_fraction must lie in (0,1]"));
        }
        if self.forest.n_trees == 0 || self.forest.max_depth == 0 || self.forest.min_samples_leaf == 0 {
            return Err(invalid("config", "forest sizes must be positive"));
        }
        if self.k_max == 0 {
            return Err(invalid("config", "k_max must be positive"));
        }
        Ok(())
    }
}
