//! Entry/exit zone learning: per camera and kind, a 2D Gaussian mixture fitted
//! by EM with the component count picked by BIC.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{gaussian2_log_pdf, CameraId, EventStream, Point2, Zone, ZoneKind};

const COV_FLOOR: f64 = 1e-6;
const MAX_EM_ITERS: usize = 300;
const EM_RESTARTS: usize = 3;

#[derive(Clone, Debug)]
struct Component {
    weight: f64,
    mean: Point2,
    cov: [[f64; 2]; 2],
}

#[derive(Clone, Debug)]
pub struct MixtureFit {
    components: Vec<Component>,
    pub log_likelihood: f64,
    pub bic: f64,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn kmeans_pp(points: &[Point2], k: usize, rng: &mut ChaCha8Rng) -> Vec<Point2> {
    let d2 = |a: Point2, b: Point2| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    while centers.len() < k {
        let dists: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| d2(*p, *c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = dists.iter().sum();
        if total <= 0.0 {
            centers.push(points[rng.random_range(0..points.len())]);
            continue;
        }
        let mut r = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, d) in dists.iter().enumerate() {
            if r < *d {
                pick = i;
                break;
            }
            r -= d;
        }
        centers.push(points[pick]);
    }
    centers
}

fn em(points: &[Point2], k: usize, rng: &mut ChaCha8Rng) -> MixtureFit {
    let n = points.len();
    let (_, gc) = mean_cov(points, &vec![1.0; n]);
    let mut comps: Vec<Component> = kmeans_pp(points, k, rng)
        .into_iter()
        .map(|mean| Component {
            weight: 1.0 / k as f64,
            mean,
            cov: gc,
        })
        .collect();

    let mut resp = vec![vec![0.0; k]; n];
    let mut prev = f64::NEG_INFINITY;
    let mut ll = prev;
    for _ in 0..MAX_EM_ITERS {
        // E step
        ll = 0.0;
        let mut terms = vec![0.0; k];
        for (i, p) in points.iter().enumerate() {
            for (j, c) in comps.iter().enumerate() {
                terms[j] = c.weight.ln() + gaussian2_log_pdf(*p, c.mean, c.cov);
            }
            let lse = log_sum_exp(&terms);
            ll += lse;
            for j in 0..k {
                resp[i][j] = (terms[j] - lse).exp();
            }
        }
        // M step
        for (j, c) in comps.iter_mut().enumerate() {
            let w: Vec<f64> = resp.iter().map(|r| r[j]).collect();
            let nk: f64 = w.iter().sum();
            if nk < 1e-9 {
                // dead component: park it on a random point
                c.mean = points[rng.random_range(0..n)];
                c.cov = gc;
                c.weight = 1e-6;
                continue;
            }
            let (m, cov) = mean_cov(points, &w);
            c.mean = m;
            c.cov = cov;
            c.weight = nk / n as f64;
        }
        if (ll - prev).abs() <= 1e-8 * ll.abs().max(1.0) {
            break;
        }
        prev = ll;
    }
    let params = (6 * k - 1) as f64;
    MixtureFit {
        components: comps,
        log_likelihood: ll,
        bic: -2.0 * ll + params * (n as f64).ln(),
    }
}

fn mean_cov(points: &[Point2], w: &[f64]) -> (Point2, [[f64; 2]; 2]) {
    let total: f64 = w.iter().sum();
    let mut m = [0.0; 2];
    for (p, wi) in points.iter().zip(w) {
        m[0] += wi * p[0];
        m[1] += wi * p[1];
    }
    m[0] /= total;
    m[1] /= total;
    let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
    for (p, wi) in points.iter().zip(w) {
        let (dx, dy) = (p[0] - m[0], p[1] - m[1]);
        a += wi * dx * dx;
        b += wi * dx * dy;
        d += wi * dy * dy;
    }
    let cov = [
        [a / total + COV_FLOOR, b / total],
        [b / total, d / total + COV_FLOOR],
    ];
    (m, cov)
}

/// Best mixture over `1..=k_max` components by BIC. Deterministic for `seed`.
pub fn fit_mixture(points: &[Point2], k_max: usize, seed: u64) -> Option<MixtureFit> {
    if points.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<MixtureFit> = None;
    for k in 1..=k_max.min(points.len()) {
        let fit = (0..EM_RESTARTS)
            .map(|_| em(points, k, &mut rng))
            .max_by(|a, b| a.log_likelihood.total_cmp(&b.log_likelihood))
            .unwrap();
        if best.as_ref().is_none_or(|b| fit.bic < b.bic) {
            best = Some(fit);
        }
    }
    best
}

fn zones_from_fit(camera: CameraId, kind: ZoneKind, fit: MixtureFit) -> Vec<Zone> {
    let mut comps = fit.components;
    comps.retain(|c| c.weight > 1e-3);
    comps.sort_by(|a, b| {
        a.mean[0]
            .total_cmp(&b.mean[0])
            .then(a.mean[1].total_cmp(&b.mean[1]))
    });
    comps
        .into_iter()
        .enumerate()
        .map(|(i, c)| Zone {
            camera,
            zone_id: i as u32,
            kind,
            centroid: c.mean,
            spread: c.cov,
        })
        .collect()
}

/// Learns zones from explicit point sets keyed by camera and kind. Zone ids
/// are assigned per camera/kind in order of centroid x, then y.
pub fn learn_zones(
    points: &BTreeMap<(CameraId, ZoneKind), Vec<Point2>>,
    k_max: usize,
    seed: u64,
) -> Result<Vec<Zone>> {
    let mut zones = Vec::new();
    for (i, ((camera, kind), pts)) in points.iter().enumerate() {
        let fit = fit_mixture(pts, k_max.max(1), seed.wrapping_add(i as u64)).ok_or(
            Error::NoPoints {
                camera: camera.0,
                kind: kind.as_str(),
            },
        )?;
        zones.extend(zones_from_fit(*camera, *kind, fit));
    }
    Ok(zones)
}

/// Entry and exit points of every track, grouped by camera and kind.
pub fn zone_points(stream: &EventStream) -> BTreeMap<(CameraId, ZoneKind), Vec<Point2>> {
    let mut points: BTreeMap<(CameraId, ZoneKind), Vec<Point2>> = BTreeMap::new();
    for t in stream.tracks() {
        points
            .entry((t.camera, ZoneKind::Entry))
            .or_default()
            .push(t.entry_point);
        points
            .entry((t.camera, ZoneKind::Exit))
            .or_default()
            .push(t.exit_point);
    }
    points
}

pub fn learn_zones_from_stream(stream: &EventStream, k_max: usize, seed: u64) -> Result<Vec<Zone>> {
    learn_zones(&zone_points(stream), k_max, seed)
}

/// Most likely zone of `kind` on `camera` for `point`; ties go to the lowest id.
pub fn assign_zone(zones: &[Zone], camera: CameraId, kind: ZoneKind, point: Point2) -> Option<&Zone> {
    let mut best: Option<(&Zone, f64)> = None;
    for z in zones.iter().filter(|z| z.camera == camera && z.kind == kind) {
        let ll = z.log_likelihood(point);
        let better = match best {
            None => true,
            Some((bz, bl)) => ll > bl || (ll == bl && z.zone_id < bz.zone_id),
        };
        if better {
            best = Some((z, ll));
        }
    }
    best.map(|(z, _)| z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn key(c: u32, kind: ZoneKind) -> (CameraId, ZoneKind) {
        (CameraId(c), kind)
    }

    #[test]
    fn identical_points_give_one_zone() {
        let mut pts = BTreeMap::new();
        pts.insert(key(1, ZoneKind::Exit), vec![[0.3, 0.7]; 40]);
        let zones = learn_zones(&pts, 5, 0).unwrap();
        assert_eq!(zones.len(), 1);
        assert!((zones[0].centroid[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn two_clouds_are_separated() {
        let sd = 0.02;
        let mut ok = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, sd).unwrap();
            let a = [0.3, 0.5];
            let b = [0.3 + 10.0 * sd, 0.5];
            let mut cloud = |c: Point2| -> Vec<Point2> {
                (0..100)
                    .map(|_| [c[0] + n.sample(&mut rng), c[1] + n.sample(&mut rng)])
                    .collect()
            };
            let (pa, pb) = (cloud(a), cloud(b));
            let mean = |v: &[Point2]| {
                let s = v.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
                [s[0] / v.len() as f64, s[1] / v.len() as f64]
            };
            let (ma, mb) = (mean(&pa), mean(&pb));
            let mut pts = BTreeMap::new();
            pts.insert(key(1, ZoneKind::Entry), [pa, pb].concat());
            let zones = learn_zones(&pts, 5, seed).unwrap();
            if zones.len() == 2 {
                let d = |z: &Zone, m: Point2| ((z.centroid[0] - m[0]).powi(2) + (z.centroid[1] - m[1]).powi(2)).sqrt();
                if d(&zones[0], ma) < 0.02 && d(&zones[1], mb) < 0.02 {
                    ok += 1;
                }
            }
        }
        assert_eq!(ok, 10);
    }

    #[test]
    fn k_max_one_forces_single_zone() {
        let mut pts = BTreeMap::new();
        pts.insert(key(2, ZoneKind::Entry), vec![[0.1, 0.1], [0.9, 0.9], [0.1, 0.12], [0.88, 0.9]]);
        assert_eq!(learn_zones(&pts, 1, 3).unwrap().len(), 1);
    }

    #[test]
    fn empty_point_set_is_an_error() {
        let mut pts = BTreeMap::new();
        pts.insert(key(4, ZoneKind::Exit), vec![]);
        assert!(matches!(learn_zones(&pts, 3, 0), Err(Error::NoPoints { camera: 4, .. })));
    }

    #[test]
    fn assignment_rules() {
        let cov = [[0.01, 0.0], [0.0, 0.01]];
        let zones = vec![
            Zone::new(CameraId(1), 0, ZoneKind::Entry, [0.2, 0.5], cov).unwrap(),
            Zone::new(CameraId(1), 1, ZoneKind::Entry, [0.8, 0.5], cov).unwrap(),
            Zone::new(CameraId(1), 0, ZoneKind::Exit, [0.5, 0.5], cov).unwrap(),
        ];
        let z = assign_zone(&zones, CameraId(1), ZoneKind::Exit, [0.9, 0.9]).unwrap();
        assert_eq!((z.zone_id, z.kind), (0, ZoneKind::Exit));
        let z = assign_zone(&zones, CameraId(1), ZoneKind::Entry, [0.8, 0.5]).unwrap();
        assert_eq!(z.zone_id, 1);
        let z = assign_zone(&zones, CameraId(1), ZoneKind::Entry, [0.5, 0.5]).unwrap();
        assert_eq!(z.zone_id, 0);
        assert!(assign_zone(&zones, CameraId(2), ZoneKind::Entry, [0.5, 0.5]).is_none());
    }
}
