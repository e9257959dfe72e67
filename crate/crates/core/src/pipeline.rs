//! Joint re-identification and topology inference.
//!
//! Training runs three stages: camera-to-camera links over a wide two-sided
//! window, zone-to-zone links over a one-sided window for camera pairs that
//! survived, then iterative refinement where each valid edge narrows its
//! window, retrains its destination forests, re-matches and refits until the
//! fitted transit laws stop moving.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{bhattacharyya_gaussian, reid_accuracy};
use crate::forest::{similarity, train_forest_series_on, ForestSeries, GalleryItem};
use crate::par;
use crate::simgen::GroundTruth;
use crate::topology::fit::{empirical_bounds, time_bounds, transit_distribution, update_window, Histogram};
use crate::topology::gather::{filter_reliable, gather_correspondences, Gathered, TransitRange};
use crate::topology::zones::{assign_zone, learn_zones_from_stream};
use crate::types::{
    BoundsMode, CameraId, Correspondence, EventStream, NodeId, PipelineConfig, SearchWindow,
    TopologyEdge, TopologyGraph, TopologyLevel, TrackId, TransitDistribution, Zone, ZoneKind,
};

type EdgeKey = (NodeId, NodeId);

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn node_code(n: NodeId) -> u64 {
    match n {
        NodeId::Camera { camera } => camera.0 as u64,
        NodeId::Zone { camera, kind, zone } => {
            (1 << 40) | ((kind as u64) << 36) | ((zone as u64) << 20) | camera.0 as u64
        }
    }
}

fn derive_seed(base: u64, node: NodeId, salt: u64) -> u64 {
    splitmix(splitmix(base ^ node_code(node)).wrapping_add(salt))
}

/// Track routing to learned zones: which exit zone each track left through
/// and which entry zone it appeared in.
#[derive(Clone, Debug, Default)]
pub struct Routing {
    exits: BTreeMap<NodeId, Vec<usize>>,
    entries: BTreeMap<NodeId, Vec<usize>>,
}

impl Routing {
    pub fn new(stream: &EventStream, zones: &[Zone]) -> Self {
        let mut r = Routing::default();
        for (i, t) in stream.tracks().iter().enumerate() {
            if let Some(z) = assign_zone(zones, t.camera, ZoneKind::Exit, t.exit_point) {
                r.exits.entry(z.node()).or_default().push(i);
            }
            if let Some(z) = assign_zone(zones, t.camera, ZoneKind::Entry, t.entry_point) {
                r.entries.entry(z.node()).or_default().push(i);
            }
        }
        r
    }

    pub fn by_camera(stream: &EventStream) -> Self {
        let mut r = Routing::default();
        for camera in stream.cameras() {
            let node = NodeId::Camera { camera };
            let list = stream.camera_tracks(camera).to_vec();
            r.exits.insert(node, list.clone());
            r.entries.insert(node, list);
        }
        r
    }

    pub fn exits_at(&self, node: NodeId) -> &[usize] {
        self.exits.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn entries_at(&self, node: NodeId) -> &[usize] {
        self.entries.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn exit_node(&self, track: usize) -> Option<NodeId> {
        self.exits
            .iter()
            .find(|(_, v)| v.binary_search(&track).is_ok())
            .map(|(n, _)| *n)
    }

    pub fn entry_node(&self, track: usize) -> Option<NodeId> {
        self.entries
            .iter()
            .find(|(_, v)| v.binary_search(&track).is_ok())
            .map(|(n, _)| *n)
    }
}

/// Forest series over the tracks in `members`, each labelled by its stream
/// index.
pub fn train_gallery_series(
    stream: &EventStream,
    members: &[usize],
    width: f64,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<ForestSeries> {
    let items: Vec<GalleryItem<'_>> = members
        .iter()
        .map(|&i| GalleryItem {
            label: i as u64,
            track: &stream.tracks()[i],
        })
        .collect();
    train_forest_series_on(&items, width, width * cfg.slot_stride_fraction, &cfg.forest, seed)
}

fn window_from_range(range: TransitRange, t_lower: f64, t_upper: f64, width: f64) -> SearchWindow {
    SearchWindow {
        t_lower,
        t_upper,
        width,
        lo: range.lo,
        hi: range.hi,
        target: range.target,
    }
}

fn fit_edge(
    source: NodeId,
    dest: NodeId,
    reliable: &[Correspondence],
    range: (f64, f64),
    cfg: &PipelineConfig,
) -> Result<(TransitDistribution, bool)> {
    let dts: Vec<f64> = reliable.iter().map(|c| c.delta_t).collect();
    let (dist, fit) = transit_distribution(source, dest, &dts, cfg.bin_width, range, cfg.sigma_scale)?;
    Ok((dist, fit.degenerate))
}

/// Step 1 of the refinement: quantile bounds of the current fit and the window
/// length `T = (T_U - T_L) / (1 - E)`, capped at the initial window. A
/// degenerate fit keeps `fallback` as the length.
pub fn planned_window(dist: &TransitDistribution, cfg: &PipelineConfig, fallback: f64) -> (f64, f64, f64) {
    let (tl, tu) = match cfg.bounds_mode {
        BoundsMode::Parametric => time_bounds(dist.mu, dist.sigma, cfg.quantile_r),
        BoundsMode::Empirical => {
            let hist = Histogram {
                edges: dist.bin_edges.clone(),
                masses: dist.masses.clone(),
                support: dist.support,
                discarded: dist.discarded,
            };
            empirical_bounds(&hist, cfg.quantile_r)
        }
    }
    .unwrap_or((dist.mu - 0.5 * fallback, dist.mu + 0.5 * fallback));
    let width = update_window(dist.fit_error, tl, tu)
        .unwrap_or(fallback)
        .min(cfg.initial_window_t);
    (tl, tu, width)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Comparisons {
    pub camera_stage: u64,
    pub zone_stage: u64,
    pub iterations: u64,
}

impl Comparisons {
    pub fn total(&self) -> u64 {
        self.camera_stage + self.zone_stage + self.iterations
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityChange {
    pub source: NodeId,
    pub dest: NodeId,
    pub valid: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 0 is the zone-to-zone initialization.
    pub iteration: usize,
    /// Mean Bhattacharyya distance between consecutive fits of the edges that
    /// were valid going into the pass.
    pub convergence: Option<f64>,
    pub valid_edges: usize,
    pub correspondences: usize,
    pub reliable: usize,
    pub comparisons: u64,
    pub reid_accuracy: Option<f64>,
    pub reid_accuracy_reliable: Option<f64>,
    pub validity_changes: Vec<ValidityChange>,
    /// Kept out of serialized reports so that they stay reproducible.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineState {
    pub camera_topology: TopologyGraph,
    pub topology: TopologyGraph,
    pub correspondences: BTreeMap<EdgeKey, Vec<Correspondence>>,
    /// Edges refreshed by each pass: every zone edge that has ever been valid.
    pub active: BTreeSet<EdgeKey>,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
    pub comparisons: Comparisons,
}

impl PipelineState {
    /// Correspondences on currently valid edges, ordered by edge then exit.
    pub fn valid_correspondences(&self) -> Vec<Correspondence> {
        self.topology
            .valid_edges()
            .flat_map(|e| {
                self.correspondences
                    .get(&(e.source, e.dest))
                    .into_iter()
                    .flatten()
                    .copied()
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReidResults {
    pub correspondences: Vec<Correspondence>,
    pub reliable: Vec<Correspondence>,
    pub comparisons: u64,
    pub wall_time_seconds: f64,
}

impl ReidResults {
    fn from_all(correspondences: Vec<Correspondence>, theta_sim: f64, comparisons: u64, started: Instant) -> Self {
        let reliable = filter_reliable(&correspondences, theta_sim);
        Self {
            correspondences,
            reliable,
            comparisons,
            wall_time_seconds: started.elapsed().as_secs_f64(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StageOutput {
    pub graph: TopologyGraph,
    pub correspondences: BTreeMap<EdgeKey, Vec<Correspondence>>,
    pub comparisons: u64,
}

struct EdgeOutcome {
    edge: TopologyEdge,
    correspondences: Vec<Correspondence>,
    comparisons: u64,
}

/// Matches, filters and fits one directed pair under a fixed search range.
#[allow(clippy::too_many_arguments)]
fn evaluate_pair(
    stream: &EventStream,
    source: NodeId,
    dest: NodeId,
    exits: &[usize],
    series: &ForestSeries,
    range: TransitRange,
    hist_range: (f64, f64),
    window: SearchWindow,
    cfg: &PipelineConfig,
) -> Result<EdgeOutcome> {
    let Gathered {
        correspondences,
        comparisons,
    } = gather_correspondences(stream, exits, series, range);
    let reliable = filter_reliable(&correspondences, cfg.theta_sim);
    let (dist, _) = fit_edge(source, dest, &reliable, hist_range, cfg)?;
    Ok(EdgeOutcome {
        edge: TopologyEdge {
            source,
            dest,
            valid: dist.confidence > cfg.theta_conf,
            dist,
            window,
            retained: false,
        },
        correspondences,
        comparisons,
    })
}

fn collect_stage(level: TopologyLevel, nodes: Vec<NodeId>, zones: Vec<Zone>, outcomes: Vec<EdgeOutcome>) -> StageOutput {
    let mut correspondences = BTreeMap::new();
    let mut edges = Vec::with_capacity(outcomes.len());
    let mut comparisons = 0;
    for o in outcomes {
        comparisons += o.comparisons;
        correspondences.insert((o.edge.source, o.edge.dest), o.correspondences);
        edges.push(o.edge);
    }
    StageOutput {
        graph: TopologyGraph {
            level,
            nodes,
            zones,
            edges,
        },
        correspondences,
        comparisons,
    }
}

/// Camera-to-camera inference over every ordered camera pair with the
/// two-sided window `[t - T, t + T]`.
pub fn infer_cam_links(stream: &EventStream, cfg: &PipelineConfig) -> Result<StageOutput> {
    cfg.validate()?;
    let t0 = cfg.initial_window_t;
    let cameras: Vec<CameraId> = stream.cameras().collect();
    let nodes: Vec<NodeId> = cameras.iter().map(|&camera| NodeId::Camera { camera }).collect();
    let routing = Routing::by_camera(stream);

    let series = par::map(&nodes, |&n| {
        train_gallery_series(stream, routing.entries_at(n), t0, cfg, derive_seed(cfg.seed, n, 0))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let pairs: Vec<(usize, usize)> = (0..nodes.len())
        .flat_map(|a| (0..nodes.len()).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    let range = TransitRange::two_sided(t0);
    let window = window_from_range(range, -t0, t0, t0);
    let outcomes = par::map(&pairs, |&(a, b)| {
        evaluate_pair(
            stream,
            nodes[a],
            nodes[b],
            routing.exits_at(nodes[a]),
            &series[b],
            range,
            (-t0, t0),
            window,
            cfg,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(collect_stage(TopologyLevel::Camera, nodes, Vec::new(), outcomes))
}

/// Zone-to-zone inference: exit zone to entry zone of a different camera, for
/// camera pairs that are valid in `cam_graph`, with window `[t, t + T]`.
pub fn infer_zone_links(
    stream: &EventStream,
    cam_graph: &TopologyGraph,
    zones: &[Zone],
    cfg: &PipelineConfig,
) -> Result<StageOutput> {
    cfg.validate()?;
    let t0 = cfg.initial_window_t;
    let routing = Routing::new(stream, zones);
    let exits: Vec<&Zone> = zones.iter().filter(|z| z.kind == ZoneKind::Exit).collect();
    let entries: Vec<&Zone> = zones.iter().filter(|z| z.kind == ZoneKind::Entry).collect();

    let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
    for x in &exits {
        for y in &entries {
            if x.camera == y.camera {
                continue;
            }
            let cam_link = cam_graph.is_valid_link(
                NodeId::Camera { camera: x.camera },
                NodeId::Camera { camera: y.camera },
            );
            if cam_link {
                pairs.push((x.node(), y.node()));
            }
        }
    }

    let dests: Vec<NodeId> = pairs
        .iter()
        .map(|p| p.1)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let series: BTreeMap<NodeId, ForestSeries> = dests
        .iter()
        .copied()
        .zip(
            par::map(&dests, |&n| {
                train_gallery_series(stream, routing.entries_at(n), t0, cfg, derive_seed(cfg.seed, n, 1))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?,
        )
        .collect();

    let range = TransitRange::one_sided(t0);
    let window = window_from_range(range, 0.0, t0, t0);
    let outcomes = par::map(&pairs, |&(src, dst)| {
        evaluate_pair(
            stream,
            src,
            dst,
            routing.exits_at(src),
            &series[&dst],
            range,
            (0.0, t0),
            window,
            cfg,
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let nodes = zones.iter().map(Zone::node).collect();
    Ok(collect_stage(TopologyLevel::Zone, nodes, zones.to_vec(), outcomes))
}

/// Mean Bhattacharyya distance between the fits of `before` and `after` over
/// the edges valid in `before`. Zero when there are none.
pub fn convergence_metric(before: &TopologyGraph, after: &TopologyGraph) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for e in before.valid_edges() {
        if let Some(a) = after.edge(e.source, e.dest) {
            total += bhattacharyya_gaussian((e.dist.mu, e.dist.sigma), (a.dist.mu, a.dist.sigma)).unwrap_or(0.0);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// One refinement pass over every active edge:
/// 1. window bounds and length from the current fit,
/// 2. retrain the destination entry-zone forests with that length,
/// 3. match each exit against the slot nearest `t + mu`, gated by the window,
/// 4. refit from the reliable matches.
///
/// An edge whose refit degenerates keeps its previous distribution, window and
/// correspondences and is flagged `retained`.
pub fn iterate(mut state: PipelineState, stream: &EventStream, cfg: &PipelineConfig) -> Result<PipelineState> {
    let started = Instant::now();
    let t0 = cfg.initial_window_t;
    let routing = Routing::new(stream, &state.topology.zones);
    let iteration = state.iteration + 1;
    let before = state.topology.clone();

    let work: Vec<usize> = state
        .topology
        .edges
        .iter()
        .enumerate()
        .filter(|(_, e)| state.active.contains(&(e.source, e.dest)))
        .map(|(i, _)| i)
        .collect();

    let outcomes = par::map(&work, |&i| -> Result<(usize, Option<EdgeOutcome>)> {
        let prev = &before.edges[i];
        let (tl, tu, width) = planned_window(&prev.dist, cfg, prev.window.width);
        let range = TransitRange::around(prev.dist.mu, width, true);
        let series = train_gallery_series(
            stream,
            routing.entries_at(prev.dest),
            width,
            cfg,
            derive_seed(cfg.seed, prev.dest, 2 + iteration as u64),
        )?;
        let window = window_from_range(range, tl, tu, width);
        let outcome = evaluate_pair(
            stream,
            prev.source,
            prev.dest,
            routing.exits_at(prev.source),
            &series,
            range,
            (0.0, t0),
            window,
            cfg,
        )?;
        let degenerate = outcome.edge.dist.fit_error >= 1.0 || outcome.edge.dist.support == 0;
        Ok((i, (!degenerate).then_some(outcome)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut comparisons = 0;
    let mut changes = Vec::new();
    for (i, outcome) in outcomes {
        let edge = &mut state.topology.edges[i];
        match outcome {
            Some(o) => {
                comparisons += o.comparisons;
                if o.edge.valid != edge.valid {
                    changes.push(ValidityChange {
                        source: edge.source,
                        dest: edge.dest,
                        valid: o.edge.valid,
                    });
                }
                state.correspondences.insert((edge.source, edge.dest), o.correspondences);
                *edge = o.edge;
            }
            None => {
                debug!("edge {} -> {} degenerated; keeping previous fit", edge.source, edge.dest);
                edge.retained = true;
            }
        }
    }
    state.comparisons.iterations += comparisons;
    for e in state.topology.valid_edges() {
        state.active.insert((e.source, e.dest));
    }

    let convergence = convergence_metric(&before, &state.topology);
    state.iteration = iteration;
    let all = state.valid_correspondences();
    let reliable = filter_reliable(&all, cfg.theta_sim).len();
    state.history.push(IterationRecord {
        iteration,
        convergence: Some(convergence),
        valid_edges: state.topology.valid_edges().count(),
        correspondences: all.len(),
        reliable,
        comparisons,
        reid_accuracy: None,
        reid_accuracy_reliable: None,
        validity_changes: changes,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    });
    Ok(state)
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub state: PipelineState,
    /// Re-id result of the zone-to-zone initialization, before refinement.
    pub initial: ReidResults,
    /// Correspondences of the final pass on valid edges.
    pub result: ReidResults,
    pub wall_time_seconds: BTreeMap<String, f64>,
}

fn annotate_accuracy(record: &mut IterationRecord, all: &[Correspondence], cfg: &PipelineConfig, gt: Option<&GroundTruth>) {
    if let Some(gt) = gt.filter(|g| !g.correspondences.is_empty()) {
        record.reid_accuracy = reid_accuracy(all, gt).ok();
        record.reid_accuracy_reliable = reid_accuracy(&filter_reliable(all, cfg.theta_sim), gt).ok();
    }
}

/// Full training: camera links, zone learning, zone links, then refinement
/// until the convergence metric drops below `cfg.tolerance` or
/// `cfg.max_iterations` passes have run. `gt`, when given, is only used to
/// annotate the history with accuracies.
pub fn run_training(stream: &EventStream, cfg: &PipelineConfig, gt: Option<&GroundTruth>) -> Result<TrainingRun> {
    cfg.validate()?;
    let started = Instant::now();
    let mut times = BTreeMap::new();

    let cam = infer_cam_links(stream, cfg)?;
    times.insert("camera_stage".to_string(), started.elapsed().as_secs_f64());
    info!(
        "camera stage: {} of {} camera pairs valid",
        cam.graph.valid_edges().count(),
        cam.graph.edges.len()
    );

    let mut state = PipelineState {
        camera_topology: cam.graph,
        topology: TopologyGraph::empty(TopologyLevel::Zone),
        correspondences: BTreeMap::new(),
        active: BTreeSet::new(),
        iteration: 0,
        history: Vec::new(),
        comparisons: Comparisons {
            camera_stage: cam.comparisons,
            ..Comparisons::default()
        },
    };

    if state.camera_topology.valid_edges().next().is_none() {
        let result = ReidResults::from_all(Vec::new(), cfg.theta_sim, state.comparisons.total(), started);
        times.insert("total".to_string(), started.elapsed().as_secs_f64());
        return Ok(TrainingRun {
            state,
            initial: result.clone(),
            result,
            wall_time_seconds: times,
        });
    }

    let zone_started = Instant::now();
    let zones = learn_zones_from_stream(stream, cfg.k_max, cfg.seed)?;
    let zone = infer_zone_links(stream, &state.camera_topology, &zones, cfg)?;
    state.topology = zone.graph;
    state.correspondences = zone.correspondences;
    state.comparisons.zone_stage = zone.comparisons;
    state.active = state.topology.valid_edges().map(|e| (e.source, e.dest)).collect();
    times.insert("zone_stage".to_string(), zone_started.elapsed().as_secs_f64());

    let initial_all = state.valid_correspondences();
    let mut record = IterationRecord {
        iteration: 0,
        convergence: None,
        valid_edges: state.topology.valid_edges().count(),
        correspondences: initial_all.len(),
        reliable: filter_reliable(&initial_all, cfg.theta_sim).len(),
        comparisons: zone.comparisons,
        wall_time_seconds: zone_started.elapsed().as_secs_f64(),
        ..IterationRecord::default()
    };
    annotate_accuracy(&mut record, &initial_all, cfg, gt);
    state.history.push(record);
    let initial = ReidResults::from_all(
        initial_all,
        cfg.theta_sim,
        state.comparisons.camera_stage + state.comparisons.zone_stage,
        started,
    );
    info!("zone stage: {} valid zone links", state.topology.valid_edges().count());

    let iter_started = Instant::now();
    while state.iteration < cfg.max_iterations && !state.active.is_empty() {
        state = iterate(state, stream, cfg)?;
        let all = state.valid_correspondences();
        let record = state.history.last_mut().expect("iterate records history");
        annotate_accuracy(record, &all, cfg, gt);
        let metric = record.convergence.unwrap_or(0.0);
        info!(
            "iteration {}: convergence {:.4}, {} valid edges",
            state.iteration, metric, record.valid_edges
        );
        if metric < cfg.tolerance {
            break;
        }
    }
    times.insert("iterations".to_string(), iter_started.elapsed().as_secs_f64());

    let result = ReidResults::from_all(
        state.valid_correspondences(),
        cfg.theta_sim,
        state.comparisons.total(),
        started,
    );
    times.insert("total".to_string(), started.elapsed().as_secs_f64());
    Ok(TrainingRun {
        state,
        initial,
        result,
        wall_time_seconds: times,
    })
}

/// Appearance-only baseline: every track is compared against every track of
/// every other camera entering within `[t - T, t + T]` of its exit, and the
/// most similar one is taken (ties to the earliest in stream order).
pub fn exhaustive_baseline(stream: &EventStream, cfg: &PipelineConfig) -> Result<ReidResults> {
    cfg.validate()?;
    let started = Instant::now();
    let t0 = cfg.initial_window_t;
    let tracks = stream.tracks();
    let mut by_entry: Vec<usize> = (0..tracks.len()).collect();
    by_entry.sort_by(|&a, &b| tracks[a].entry_time().total_cmp(&tracks[b].entry_time()).then(a.cmp(&b)));
    let entry_times: Vec<f64> = by_entry.iter().map(|&i| tracks[i].entry_time()).collect();

    let indices: Vec<usize> = (0..tracks.len()).collect();
    let per_exit = par::map(&indices, |&ei| {
        let probe = &tracks[ei];
        let t = probe.exit_time();
        let lo = entry_times.partition_point(|&x| x < t - t0);
        let hi = entry_times.partition_point(|&x| x <= t + t0);
        let mut candidates: Vec<usize> = by_entry[lo..hi]
            .iter()
            .copied()
            .filter(|&j| tracks[j].camera != probe.camera)
            .collect();
        candidates.sort_unstable();
        let mut best: Option<(usize, f64)> = None;
        let mut cost = 0u64;
        for j in candidates {
            let cand = &tracks[j];
            cost += (probe.observations().len() * cand.observations().len()) as u64;
            let s = similarity(probe, cand).unwrap_or(0.0);
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((j, s));
            }
        }
        let c = best.map(|(j, s)| Correspondence {
            exit_track: stream.id(ei),
            matched_track: stream.id(j),
            similarity: s,
            delta_t: tracks[j].entry_time() - t,
        });
        (c, cost)
    });
    let comparisons = per_exit.iter().map(|(_, c)| c).sum();
    let all = per_exit.into_iter().filter_map(|(c, _)| c).collect();
    Ok(ReidResults::from_all(all, cfg.theta_sim, comparisons, started))
}

/// Event-correlation baseline: for each exit-zone to entry-zone pair of
/// different cameras, the histogram of all entry-minus-exit time differences
/// in `[0, T]`, with no appearance matching. Fitting and gating are the same
/// as for the appearance-based links.
pub fn event_correlation_baseline(stream: &EventStream, cfg: &PipelineConfig) -> Result<TopologyGraph> {
    cfg.validate()?;
    if stream.is_empty() {
        return Ok(TopologyGraph::empty(TopologyLevel::Zone));
    }
    let zones = learn_zones_from_stream(stream, cfg.k_max, cfg.seed)?;
    event_correlation_with_zones(stream, &zones, cfg)
}

pub fn event_correlation_with_zones(stream: &EventStream, zones: &[Zone], cfg: &PipelineConfig) -> Result<TopologyGraph> {
    let t0 = cfg.initial_window_t;
    let routing = Routing::new(stream, zones);
    let tracks = stream.tracks();
    let mut pairs = Vec::new();
    for x in zones.iter().filter(|z| z.kind == ZoneKind::Exit) {
        for y in zones.iter().filter(|z| z.kind == ZoneKind::Entry && z.camera != x.camera) {
            pairs.push((x.node(), y.node()));
        }
    }
    let range = TransitRange::one_sided(t0);
    let window = window_from_range(range, 0.0, t0, t0);
    let edges = par::map(&pairs, |&(src, dst)| -> Result<TopologyEdge> {
        let mut dts = Vec::new();
        for &e in routing.exits_at(src) {
            let t = tracks[e].exit_time();
            for &g in routing.entries_at(dst) {
                let dt = tracks[g].entry_time() - t;
                if range.contains(dt) {
                    dts.push(dt);
                }
            }
        }
        let (dist, _) = transit_distribution(src, dst, &dts, cfg.bin_width, (0.0, t0), cfg.sigma_scale)?;
        Ok(TopologyEdge {
            source: src,
            dest: dst,
            valid: dist.confidence > cfg.theta_conf,
            dist,
            window,
            retained: false,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(TopologyGraph {
        level: TopologyLevel::Zone,
        nodes: zones.iter().map(Zone::node).collect(),
        zones: zones.to_vec(),
        edges,
    })
}

/// Test-stage re-identification with a frozen topology: per valid edge, the
/// edge's stored window gates the search and sets the slot width, and forests
/// are trained on the test stream. The topology is not modified.
pub fn run_test(stream: &EventStream, topology: &TopologyGraph, cfg: &PipelineConfig) -> Result<ReidResults> {
    cfg.validate()?;
    let started = Instant::now();
    let routing = Routing::new(stream, &topology.zones);
    let edges: Vec<&TopologyEdge> = topology.valid_edges().collect();
    let outcomes = par::map(&edges, |e| -> Result<Gathered> {
        let w = e.window;
        let range = TransitRange {
            lo: w.lo,
            hi: w.hi,
            target: w.target,
        };
        let series = train_gallery_series(
            stream,
            routing.entries_at(e.dest),
            w.width,
            cfg,
            derive_seed(cfg.seed, e.dest, 0xFFFF),
        )?;
        Ok(gather_correspondences(stream, routing.exits_at(e.source), &series, range))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let comparisons = outcomes.iter().map(|g| g.comparisons).sum();
    let all = outcomes.into_iter().flat_map(|g| g.correspondences).collect();
    Ok(ReidResults::from_all(all, cfg.theta_sim, comparisons, started))
}

/// Zone-level topology fitted directly from known correspondences, routed
/// through `zones`. Used as the true-matching reference.
pub fn topology_from_pairs(
    stream: &EventStream,
    zones: &[Zone],
    pairs: &[(TrackId, TrackId)],
    cfg: &PipelineConfig,
) -> Result<TopologyGraph> {
    let t0 = cfg.initial_window_t;
    let routing = Routing::new(stream, zones);
    let mut grouped: BTreeMap<EdgeKey, Vec<f64>> = BTreeMap::new();
    for &(a, b) in pairs {
        let (Some(ia), Some(ib)) = (stream.index_of(a), stream.index_of(b)) else {
            continue;
        };
        let (Some(src), Some(dst)) = (routing.exit_node(ia), routing.entry_node(ib)) else {
            continue;
        };
        let dt = stream.tracks()[ib].entry_time() - stream.tracks()[ia].exit_time();
        grouped.entry((src, dst)).or_default().push(dt);
    }
    let mut edges = Vec::new();
    for ((src, dst), dts) in grouped {
        let (dist, _) = transit_distribution(src, dst, &dts, cfg.bin_width, (0.0, t0), cfg.sigma_scale)?;
        let (tl, tu, width) = planned_window(&dist, cfg, t0);
        let range = TransitRange::around(dist.mu, width, true);
        edges.push(TopologyEdge {
            source: src,
            dest: dst,
            valid: dist.confidence > cfg.theta_conf,
            dist,
            window: window_from_range(range, tl, tu, width),
            retained: false,
        });
    }
    Ok(TopologyGraph {
        level: TopologyLevel::Zone,
        nodes: zones.iter().map(Zone::node).collect(),
        zones: zones.to_vec(),
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_node_and_salt() {
        let a = NodeId::Camera { camera: CameraId(1) };
        let b = NodeId::Camera { camera: CameraId(2) };
        assert_ne!(derive_seed(0, a, 0), derive_seed(0, b, 0));
        assert_ne!(derive_seed(0, a, 0), derive_seed(0, a, 1));
        assert_eq!(derive_seed(5, a, 3), derive_seed(5, a, 3));
    }

    #[test]
    fn convergence_is_zero_for_identical_graphs() {
        let g = TopologyGraph::empty(TopologyLevel::Zone);
        assert_eq!(convergence_metric(&g, &g), 0.0);
    }

    #[test]
    fn planned_window_follows_fit_error() {
        let cfg = PipelineConfig::default();
        let mut d = TransitDistribution {
            source: NodeId::Camera { camera: CameraId(1) },
            dest: NodeId::Camera { camera: CameraId(2) },
            bin_edges: vec![0.0, 1.0],
            masses: vec![1.0],
            mu: 30.0,
            sigma: 5.0,
            amplitude: 1.0,
            fit_error: 0.0,
            confidence: 0.9,
            support: 10,
            discarded: 0,
        };
        let (tl, tu, w) = planned_window(&d, &cfg, 600.0);
        assert!((w - (tu - tl)).abs() < 1e-12);
        d.fit_error = 0.5;
        assert!((planned_window(&d, &cfg, 600.0).2 - 2.0 * (tu - tl)).abs() < 1e-9);
        d.fit_error = 1.0;
        assert_eq!(planned_window(&d, &cfg, 123.0).2, 123.0);
        d.fit_error = 0.999_999;
        assert_eq!(planned_window(&d, &cfg, 123.0).2, 600.0);
    }
}
