//! Synthetic camera-network scenarios with known ground truth.
//!
//! Every identity performs a random walk over the linked zones: it appears in
//! a camera, dwells, leaves through one of the camera's zones, and either
//! re-enters the linked zone of another camera after a Gaussian transit time
//! or leaves the network.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::types::{
    CameraId, EventStream, FeatureVector, NodeId, Observation, PersonTrack, Point2, SearchWindow,
    TopologyEdge, TopologyGraph, TopologyLevel, TrackId, TransitDistribution, ZoneKind,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub id: u32,
    pub centroid: Point2,
    /// Isotropic standard deviation of entry/exit points.
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub id: CameraId,
    pub zones: Vec<ZoneSpec>,
    /// Overrides the scenario descriptor noise for this camera.
    #[serde(default)]
    pub noise: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub from_camera: CameraId,
    pub from_zone: u32,
    pub to_camera: CameraId,
    pub to_zone: u32,
    pub mu: f64,
    pub sigma: f64,
    /// Probability that a person leaving through `from_zone` takes this link.
    pub probability: f64,
}

impl LinkSpec {
    pub fn source(&self) -> NodeId {
        NodeId::Zone {
            camera: self.from_camera,
            kind: ZoneKind::Exit,
            zone: self.from_zone,
        }
    }

    pub fn dest(&self) -> NodeId {
        NodeId::Zone {
            camera: self.to_camera,
            kind: ZoneKind::Entry,
            zone: self.to_zone,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub cameras: Vec<CameraSpec>,
    pub links: Vec<LinkSpec>,
    pub identities: usize,
    pub dim: usize,
    /// Expected norm of the additive descriptor noise; each component gets
    /// standard deviation `noise / sqrt(dim)`.
    pub noise: f64,
    pub duration: f64,
    /// Identity arrivals per second; `None` spreads arrivals over `duration`.
    pub arrival_rate: Option<f64>,
    pub distractor_fraction: f64,
    pub dwell: (f64, f64),
    pub observations: (usize, usize),
    pub max_hops: usize,
    /// Cameras where identities first appear; empty means any camera.
    pub start_cameras: Vec<CameraId>,
    /// Resample negative transit times so every link has Δt >= 0.
    pub clamp_negative: bool,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            cameras: Vec::new(),
            links: Vec::new(),
            identities: 300,
            dim: 64,
            noise: 0.05,
            duration: 3600.0,
            arrival_rate: None,
            distractor_fraction: 0.3,
            dwell: (60.0, 300.0),
            observations: (4, 10),
            max_hops: 20,
            start_cameras: Vec::new(),
            clamp_negative: true,
            seed: 0,
        }
    }
}

/// Canonical image position of a physical zone id.
fn zone_position(id: u32) -> Point2 {
    match id {
        1 => [0.1, 0.5],
        2 => [0.9, 0.5],
        3 => [0.5, 0.1],
        4 => [0.5, 0.9],
        5 => [0.12, 0.12],
        6 => [0.88, 0.88],
        _ => [0.88, 0.12],
    }
}

const ZONE_SPREAD: f64 = 0.025;

fn camera(id: u32, zones: &[u32]) -> CameraSpec {
    CameraSpec {
        id: CameraId(id),
        zones: zones
            .iter()
            .map(|&z| ZoneSpec {
                id: z,
                centroid: zone_position(z),
                spread: ZONE_SPREAD,
            })
            .collect(),
        noise: None,
    }
}

fn link(from: (u32, u32), to: (u32, u32), mu: f64, sigma: f64, probability: f64) -> LinkSpec {
    LinkSpec {
        from_camera: CameraId(from.0),
        from_zone: from.1,
        to_camera: CameraId(to.0),
        to_zone: to.1,
        mu,
        sigma,
        probability,
    }
}

/// `(camera, zone)`.
pub type ZoneRef = (u32, u32);

/// Ground-truth zone-to-zone transit laws of the reference nine-camera network.
pub const REFERENCE_LINKS: [(ZoneRef, ZoneRef, f64, f64); 14] = [
    ((1, 1), (2, 5), 34.7, 6.04),
    ((2, 5), (1, 1), 40.4, 5.93),
    ((2, 2), (3, 1), 36.3, 5.79),
    ((3, 1), (2, 2), 37.0, 8.90),
    ((3, 2), (5, 6), -0.57, 3.23),
    ((5, 6), (3, 2), 1.59, 2.32),
    ((3, 3), (7, 3), 4.3, 3.5),
    ((7, 3), (3, 3), 4.68, 3.04),
    ((4, 4), (5, 2), 30.1, 12.5),
    ((5, 2), (4, 4), 28.6, 14.8),
    ((7, 1), (8, 2), 28.4, 6.36),
    ((8, 2), (7, 1), 30.0, 4.02),
    ((8, 1), (9, 2), 11.7, 4.24),
    ((9, 2), (8, 1), 10.5, 4.08),
];

/// Nine cameras wired by the fourteen reference links. Camera 6 has two
/// doors but no links.
pub fn default_scenario() -> ScenarioSpec {
    ScenarioSpec {
        cameras: vec![
            camera(1, &[1]),
            camera(2, &[5, 2]),
            camera(3, &[1, 2, 3]),
            camera(4, &[4]),
            camera(5, &[6, 2]),
            camera(6, &[1, 2]),
            camera(7, &[3, 1]),
            camera(8, &[2, 1]),
            camera(9, &[2]),
        ],
        links: REFERENCE_LINKS
            .iter()
            .map(|&(f, t, mu, sigma)| link(f, t, mu, sigma, 0.95))
            .collect(),
        ..ScenarioSpec::default()
    }
}

/// Three cameras in a chain C1 - C2 - C3, each with one unlinked door through
/// which people enter and leave the network. Everyone arrives within the
/// first ten minutes and the recording is long enough that no walk is cut
/// off.
pub fn micro_scenario() -> ScenarioSpec {
    ScenarioSpec {
        cameras: vec![camera(1, &[1, 2]), camera(2, &[1, 2, 3]), camera(3, &[1, 2])],
        links: vec![
            link((1, 1), (2, 1), 30.0, 3.0, 1.0),
            link((2, 1), (1, 1), 32.0, 3.0, 1.0),
            link((2, 2), (3, 1), 20.0, 2.5, 1.0),
            link((3, 1), (2, 2), 22.0, 2.5, 1.0),
        ],
        identities: 20,
        noise: 0.0,
        distractor_fraction: 0.0,
        arrival_rate: Some(20.0 / 600.0),
        duration: 9000.0,
        max_hops: 20,
        ..ScenarioSpec::default()
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(invalid("scenario", "no cameras"));
        }
        if self.dim == 0 {
            return Err(invalid("scenario", "descriptor dimension must be positive"));
        }
        if !(self.duration > 0.0) {
            return Err(invalid("scenario", "duration must be positive"));
        }
        if !(self.noise >= 0.0) {
            return Err(invalid("scenario", "noise must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.distractor_fraction) {
            return Err(invalid("scenario", "distractor_fraction must lie in [0,1]"));
        }
        if !(self.dwell.0 > 0.0 && self.dwell.1 >= self.dwell.0) {
            return Err(invalid("scenario", "dwell range must be positive and ordered"));
        }
        if self.observations.0 == 0 || self.observations.1 < self.observations.0 {
            return Err(invalid("scenario", "observation range must be positive and ordered"));
        }
        if let Some(rate) = self.arrival_rate {
            if !(rate > 0.0) {
                return Err(invalid("scenario", "arrival_rate must be positive"));
            }
        }
        for cam in &self.cameras {
            if cam.zones.is_empty() {
                return Err(invalid("scenario", format!("camera {} has no zones", cam.id)));
            }
            for z in &cam.zones {
                if !(z.spread > 0.0) || !z.centroid.iter().all(|c| (0.0..=1.0).contains(c)) {
                    return Err(invalid("scenario", format!("bad zone {} on {}", z.id, cam.id)));
                }
            }
            if cam.noise.is_some_and(|n| !(n >= 0.0)) {
                return Err(invalid("scenario", format!("negative noise on {}", cam.id)));
            }
        }
        if let Some(c) = self.start_cameras.iter().find(|c| !self.cameras.iter().any(|k| k.id == **c)) {
            return Err(invalid("scenario", format!("unknown start camera {c}")));
        }
        let mut out_prob: BTreeMap<(CameraId, u32), f64> = BTreeMap::new();
        for l in &self.links {
            if !(l.sigma > 0.0) {
                return Err(invalid("scenario", "link sigma must be positive"));
            }
            if !(0.0..=1.0).contains(&l.probability) {
                return Err(invalid("scenario", "link probability must lie in [0,1]"));
            }
            if l.from_camera == l.to_camera {
                return Err(invalid("scenario", "links must join different cameras"));
            }
            for (c, z) in [(l.from_camera, l.from_zone), (l.to_camera, l.to_zone)] {
                if self.zone(c, z).is_none() {
                    return Err(invalid("scenario", format!("link references unknown zone {c}Z{z}")));
                }
            }
            *out_prob.entry((l.from_camera, l.from_zone)).or_default() += l.probability;
        }
        if let Some(((c, z), p)) = out_prob.iter().find(|(_, p)| **p > 1.0 + 1e-9) {
            return Err(invalid(
                "scenario",
                format!("traversal probabilities out of {c}Z{z} sum to {p} > 1"),
            ));
        }
        Ok(())
    }

    pub fn zone(&self, camera: CameraId, zone: u32) -> Option<&ZoneSpec> {
        self.cameras
            .iter()
            .find(|c| c.id == camera)
            .and_then(|c| c.zones.iter().find(|z| z.id == zone))
    }

    fn camera_noise(&self, camera: CameraId) -> f64 {
        self.cameras
            .iter()
            .find(|c| c.id == camera)
            .and_then(|c| c.noise)
            .unwrap_or(self.noise)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtCorrespondence {
    pub exit_track: TrackId,
    pub entry_track: TrackId,
    pub identity: u64,
    pub link: usize,
    pub delta_t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub correspondences: Vec<GtCorrespondence>,
    pub links: Vec<LinkSpec>,
    /// Physical zones as (camera, zone id, centroid).
    pub zones: Vec<(CameraId, u32, Point2)>,
}

impl GroundTruth {
    /// Zone-level ground-truth topology; distributions carry only (mu, sigma).
    pub fn topology(&self) -> TopologyGraph {
        let mut nodes = Vec::new();
        let edges = self
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let support = self.correspondences.iter().filter(|c| c.link == i).count();
                nodes.push(l.source());
                nodes.push(l.dest());
                TopologyEdge {
                    source: l.source(),
                    dest: l.dest(),
                    dist: TransitDistribution {
                        source: l.source(),
                        dest: l.dest(),
                        bin_edges: Vec::new(),
                        masses: Vec::new(),
                        mu: l.mu,
                        sigma: l.sigma,
                        amplitude: 0.0,
                        fit_error: 0.0,
                        confidence: 1.0,
                        support,
                        discarded: 0,
                    },
                    valid: true,
                    window: SearchWindow {
                        t_lower: l.mu - 1.96 * l.sigma,
                        t_upper: l.mu + 1.96 * l.sigma,
                        width: 3.92 * l.sigma,
                        lo: l.mu - 1.96 * l.sigma,
                        hi: l.mu + 1.96 * l.sigma,
                        target: l.mu,
                    },
                    retained: false,
                }
            })
            .collect();
        nodes.sort();
        nodes.dedup();
        TopologyGraph {
            level: TopologyLevel::Zone,
            nodes,
            zones: Vec::new(),
            edges,
        }
    }

    /// Camera pairs joined by at least one link.
    pub fn camera_links(&self) -> Vec<(CameraId, CameraId)> {
        let mut pairs: Vec<_> = self.links.iter().map(|l| (l.from_camera, l.to_camera)).collect();
        pairs.sort();
        pairs.dedup();
        pairs
    }
}

struct RawTrack {
    track: PersonTrack,
}

fn clamp_unit(p: Point2) -> Point2 {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)]
}

struct Sim<'a> {
    spec: &'a ScenarioSpec,
    rng: ChaCha8Rng,
    std: Normal<f64>,
}

impl Sim<'_> {
    fn point_in(&mut self, zone: &ZoneSpec) -> Point2 {
        let dx = self.std.sample(&mut self.rng) * zone.spread;
        let dy = self.std.sample(&mut self.rng) * zone.spread;
        clamp_unit([zone.centroid[0] + dx, zone.centroid[1] + dy])
    }

    fn descriptor(&mut self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.spec.dim)
            .map(|_| self.std.sample(&mut self.rng).abs())
            .collect();
        FeatureVector::from_raw_clamped(raw).as_slice().to_vec()
    }

    fn track(
        &mut self,
        identity: u64,
        canonical: &[f64],
        camera: CameraId,
        entry_zone: &ZoneSpec,
        exit_zone: &ZoneSpec,
        entry_time: f64,
    ) -> PersonTrack {
        let (dmin, dmax) = self.spec.dwell;
        let dwell = self.rng.random_range(dmin..=dmax);
        let (kmin, kmax) = self.spec.observations;
        let k = self.rng.random_range(kmin..=kmax);
        let entry_point = self.point_in(entry_zone);
        let exit_point = self.point_in(exit_zone);
        let noise = self.spec.camera_noise(camera) / (self.spec.dim as f64).sqrt();
        let step = if k > 1 { dwell / (k - 1) as f64 } else { 0.0 };
        let mut observations = Vec::with_capacity(k);
        for i in 0..k {
            let frac = if k > 1 { i as f64 / (k - 1) as f64 } else { 0.0 };
            let time = entry_time + i as f64 * step;
            let position = clamp_unit([
                entry_point[0] + frac * (exit_point[0] - entry_point[0]),
                entry_point[1] + frac * (exit_point[1] - entry_point[1]),
            ]);
            let raw: Vec<f64> = canonical
                .iter()
                .map(|c| c + noise * self.std.sample(&mut self.rng))
                .collect();
            observations.push(Observation {
                camera,
                time,
                position,
                feature: FeatureVector::from_raw_clamped(raw),
            });
        }
        PersonTrack::new(camera, Some(identity), observations, entry_point, exit_point)
            .expect("simulated tracks satisfy track invariants")
    }

    fn transit(&mut self, link: &LinkSpec) -> f64 {
        let law = Normal::new(link.mu, link.sigma).expect("validated sigma");
        loop {
            let dt = law.sample(&mut self.rng);
            if !self.spec.clamp_negative || dt >= 0.0 {
                return dt;
            }
        }
    }
}

/// Runs the scenario. Output tracks are ordered by entry time; ground-truth
/// correspondences reference them by [`TrackId`].
pub fn simulate(spec: &ScenarioSpec) -> Result<(EventStream, GroundTruth)> {
    spec.validate()?;
    let mut sim = Sim {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        std: Normal::new(0.0, 1.0).unwrap(),
    };
    let rate = spec
        .arrival_rate
        .unwrap_or(spec.identities.max(1) as f64 / spec.duration);
    let inter = Exp::new(rate).map_err(|e| invalid("scenario", e.to_string()))?;

    let mut raw: Vec<RawTrack> = Vec::new();
    // (track index of exit, track index of entry, link, dt)
    let mut pairs: Vec<(usize, usize, usize, f64)> = Vec::new();
    let mut clock = 0.0;
    for identity in 0..spec.identities as u64 {
        clock += inter.sample(&mut sim.rng);
        let canonical = sim.descriptor();
        let distractor = sim.rng.random::<f64>() < spec.distractor_fraction;

        let mut camera = if spec.start_cameras.is_empty() {
            spec.cameras[sim.rng.random_range(0..spec.cameras.len())].id
        } else {
            spec.start_cameras[sim.rng.random_range(0..spec.start_cameras.len())]
        };
        let cam = spec.cameras.iter().find(|c| c.id == camera).unwrap();
        let mut entry_zone = cam.zones[sim.rng.random_range(0..cam.zones.len())].clone();
        let mut t = clock;
        let mut prev: Option<(usize, usize, f64)> = None;
        for hop in 0..=spec.max_hops {
            if t >= spec.duration || t < 0.0 {
                break;
            }
            let cam = spec.cameras.iter().find(|c| c.id == camera).unwrap();
            let (linked, unlinked): (Vec<&ZoneSpec>, Vec<&ZoneSpec>) = cam
                .zones
                .iter()
                .partition(|z| spec.links.iter().any(|l| l.from_camera == camera && l.from_zone == z.id));
            let doors = if linked.is_empty() { &unlinked } else { &linked };
            let mut exit_zone = doors[sim.rng.random_range(0..doors.len())].clone();

            // pick an outgoing link of the exit zone, or leave
            let mut chosen = None;
            if !distractor && hop < spec.max_hops {
                let mut u = sim.rng.random::<f64>();
                for (li, l) in spec.links.iter().enumerate() {
                    if l.from_camera == camera && l.from_zone == exit_zone.id {
                        if u < l.probability {
                            chosen = Some(li);
                            break;
                        }
                        u -= l.probability;
                    }
                }
            }
            // people leaving the network use an unlinked door when there is one
            if chosen.is_none() && !unlinked.is_empty() && !unlinked.iter().any(|z| z.id == exit_zone.id) {
                exit_zone = unlinked[sim.rng.random_range(0..unlinked.len())].clone();
            }

            let track = sim.track(identity, &canonical, camera, &entry_zone, &exit_zone, t);
            let exit_time = track.exit_time();
            raw.push(RawTrack { track });
            let idx = raw.len() - 1;
            if let Some((from, link, dt)) = prev.take() {
                pairs.push((from, idx, link, dt));
            }
            let Some(li) = chosen else { break };
            let l = &spec.links[li];
            let dt = sim.transit(l);
            t = exit_time + dt;
            camera = l.to_camera;
            entry_zone = spec.zone(l.to_camera, l.to_zone).unwrap().clone();
            prev = Some((idx, li, dt));
        }
    }

    // order by entry time; ties keep generation order
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        raw[a]
            .track
            .entry_time()
            .total_cmp(&raw[b].track.entry_time())
            .then(a.cmp(&b))
    });
    let mut position = vec![0usize; raw.len()];
    for (new, &old) in order.iter().enumerate() {
        position[old] = new;
    }
    let mut slots: Vec<Option<PersonTrack>> = raw.into_iter().map(|r| Some(r.track)).collect();
    let tracks: Vec<PersonTrack> = order.iter().map(|&i| slots[i].take().unwrap()).collect();
    let stream = EventStream::new(tracks);

    let correspondences = pairs
        .into_iter()
        .map(|(from, to, link, delta_t)| {
            let exit_track = stream.id(position[from]);
            let entry_track = stream.id(position[to]);
            let identity = stream.tracks()[position[from]].label.unwrap();
            let exit_time = stream.tracks()[position[from]].exit_time();
            let entry_time = stream.tracks()[position[to]].entry_time();
            debug_assert!((entry_time - exit_time - delta_t).abs() < 1e-6);
            GtCorrespondence {
                exit_track,
                entry_track,
                identity,
                link,
                delta_t: entry_time - exit_time,
            }
        })
        .collect();
    let zones = spec
        .cameras
        .iter()
        .flat_map(|c| c.zones.iter().map(move |z| (c.id, z.id, z.centroid)))
        .collect();
    Ok((
        stream,
        GroundTruth {
            correspondences,
            links: spec.links.clone(),
            zones,
        },
    ))
}

/// Stream containing a single traversal of one link by one identity, with no
/// other traffic.
pub fn single_traversal_scenario(link: LinkSpec, noise: f64, seed: u64) -> ScenarioSpec {
    let (from, to) = ((link.from_camera.0, link.from_zone), (link.to_camera.0, link.to_zone));
    ScenarioSpec {
        cameras: vec![camera(from.0, &[from.1]), camera(to.0, &[to.1])],
        links: vec![LinkSpec {
            probability: 1.0,
            ..link
        }],
        identities: 1,
        noise,
        distractor_fraction: 0.0,
        max_hops: 1,
        start_cameras: vec![CameraId(from.0)],
        arrival_rate: Some(1.0),
        seed,
        ..ScenarioSpec::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_table_values() {
        let s = default_scenario();
        s.validate().unwrap();
        assert_eq!(s.cameras.len(), 9);
        assert_eq!(s.links.len(), 14);
        let find = |f: (u32, u32), t: (u32, u32)| {
            s.links
                .iter()
                .find(|l| {
                    (l.from_camera.0, l.from_zone, l.to_camera.0, l.to_zone) == (f.0, f.1, t.0, t.1)
                })
                .map(|l| (l.mu, l.sigma))
        };
        assert_eq!(find((1, 1), (2, 5)), Some((34.7, 6.04)));
        assert_eq!(find((8, 1), (9, 2)), Some((11.7, 4.24)));
        assert_eq!(find((5, 2), (4, 4)), Some((28.6, 14.8)));
        assert_eq!(find((3, 2), (5, 6)), Some((-0.57, 3.23)));
        assert_eq!((s.identities, s.dim, s.duration), (300, 64, 3600.0));
    }

    #[test]
    fn zero_noise_single_link() {
        let l = link((1, 1), (2, 1), 30.0, 4.0, 1.0);
        let spec = single_traversal_scenario(l, 0.0, 3);
        let (stream, gt) = simulate(&spec).unwrap();
        assert_eq!(stream.len(), 2);
        assert_eq!(gt.correspondences.len(), 1);
        let (a, b) = (&stream.tracks()[0], &stream.tracks()[1]);
        for (x, y) in a.observations().iter().zip(b.observations()) {
            assert_eq!(x.feature, y.feature);
        }
        let dt = gt.correspondences[0].delta_t;
        assert!((dt - 30.0).abs() < 6.0 * 4.0);
        assert!((b.entry_time() - a.exit_time() - dt).abs() < 1e-9);
    }

    #[test]
    fn simulation_is_deterministic() {
        let spec = ScenarioSpec {
            identities: 40,
            ..default_scenario()
        };
        let (a, ga) = simulate(&spec).unwrap();
        let (b, gb) = simulate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        let other = simulate(&ScenarioSpec { seed: 1, ..spec }).unwrap().0;
        assert_ne!(a, other);
    }

    #[test]
    fn correspondences_join_same_identity_across_cameras() {
        let (stream, gt) = simulate(&ScenarioSpec {
            identities: 60,
            ..default_scenario()
        })
        .unwrap();
        assert!(!gt.correspondences.is_empty());
        for c in &gt.correspondences {
            let a = stream.track(c.exit_track).unwrap();
            let b = stream.track(c.entry_track).unwrap();
            assert_eq!(a.label, b.label);
            assert_ne!(a.camera, b.camera);
            assert!(c.delta_t >= 0.0);
        }
        for t in stream.tracks() {
            for o in t.observations() {
                assert_eq!(o.camera, t.camera);
                assert!(o.position.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = default_scenario();
        s.links[0].sigma = 0.0;
        assert!(simulate(&s).is_err());
        let mut s = default_scenario();
        s.links.push(s.links[0].clone());
        s.links[0].probability = 0.6;
        s.links[14].probability = 0.6;
        assert!(s.validate().is_err());
        let mut s = default_scenario();
        s.links[0].to_zone = 42;
        assert!(s.validate().is_err());
        assert!(ScenarioSpec::default().validate().is_err());
    }

    #[test]
    fn negative_transit_is_clamped_only_on_request() {
        let l = link((1, 1), (2, 1), -0.57, 3.23, 1.0);
        let mut neg = 0;
        for seed in 0..200 {
            let (_, gt) = simulate(&single_traversal_scenario(l.clone(), 0.0, seed)).unwrap();
            assert!(gt.correspondences[0].delta_t >= 0.0);
            let spec = ScenarioSpec {
                clamp_negative: false,
                ..single_traversal_scenario(l.clone(), 0.0, seed)
            };
            let (_, gt) = simulate(&spec).unwrap();
            neg += usize::from(gt.correspondences[0].delta_t < 0.0);
        }
        assert!(neg > 50);
    }
}
