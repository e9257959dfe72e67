use crate::forest::{similarity, ForestSeries};
use crate::par;
use crate::types::{Correspondence, EventStream};

/// Admissible transit-time range `[lo, hi]` relative to an exit time. The
/// forest slot is chosen nearest `exit + target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitRange {
    pub lo: f64,
    pub hi: f64,
    pub target: f64,
}

impl TransitRange {
    /// `[t - T, t + T]`, slot targeted at `t`.
    pub fn two_sided(t: f64) -> Self {
        Self {
            lo: -t,
            hi: t,
            target: 0.0,
        }
    }

    /// `[t, t + T]`, slot targeted at the middle of the range.
    pub fn one_sided(t: f64) -> Self {
        Self {
            lo: 0.0,
            hi: t,
            target: 0.5 * t,
        }
    }

    /// Window of length `width` centred on the expected transit time `mu`,
    /// optionally floored at zero.
    pub fn around(mu: f64, width: f64, non_negative: bool) -> Self {
        let lo = mu - 0.5 * width;
        Self {
            lo: if non_negative { lo.max(0.0) } else { lo },
            hi: mu + 0.5 * width,
            target: mu,
        }
    }

    pub fn contains(&self, dt: f64) -> bool {
        dt >= self.lo && dt <= self.hi
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gathered {
    pub correspondences: Vec<Correspondence>,
    /// Appearance-level matching operations: one per probe appearance pushed
    /// through a forest, plus one per appearance pair scored for similarity.
    pub comparisons: u64,
}

/// Searches the destination gallery for each exiting track.
///
/// `exits` and the series labels are indices into `stream`. Each exit yields
/// at most one correspondence: the multi-shot best match among gallery tracks
/// of the chosen slot whose entry falls inside `range`. Exits with no eligible
/// gallery track are skipped.
pub fn gather_correspondences(
    stream: &EventStream,
    exits: &[usize],
    series: &ForestSeries,
    range: TransitRange,
) -> Gathered {
    let tracks = stream.tracks();
    let per_exit = par::map(exits, |&ei| {
        let probe = &tracks[ei];
        let t = probe.exit_time();
        let Ok(forest) = series.forest_for_time(t + range.target) else {
            return (None, 0);
        };
        let in_window = |label: u64| {
            let g = &tracks[label as usize];
            g.camera != probe.camera && range.contains(g.entry_time() - t)
        };
        if !forest.labels().iter().any(|&l| in_window(l)) {
            return (None, 0);
        }
        let k = probe.observations().len() as u64;
        let Ok(Some((label, _))) = forest.best_match_where(probe, in_window) else {
            return (None, k);
        };
        let matched = &tracks[label as usize];
        let s = similarity(probe, matched).unwrap_or(0.0);
        let cost = k + k * matched.observations().len() as u64;
        let c = Correspondence {
            exit_track: stream.id(ei),
            matched_track: stream.id(label as usize),
            similarity: s,
            delta_t: matched.entry_time() - t,
        };
        (Some(c), cost)
    });
    let mut out = Gathered::default();
    for (c, cost) in per_exit {
        out.comparisons += cost;
        out.correspondences.extend(c);
    }
    out
}

/// Correspondences whose similarity strictly exceeds `theta_sim`.
pub fn filter_reliable(cands: &[Correspondence], theta_sim: f64) -> Vec<Correspondence> {
    cands
        .iter()
        .filter(|c| c.similarity > theta_sim)
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{train_forest_series_on, GalleryItem};
    use crate::types::{CameraId, FeatureVector, ForestParams, Observation, PersonTrack, TrackId};

    fn track(cam: u32, t0: f64, f: Vec<f64>) -> PersonTrack {
        let obs = (0..3)
            .map(|i| Observation {
                camera: CameraId(cam),
                time: t0 + i as f64,
                position: [0.5, 0.5],
                feature: FeatureVector::new(f.clone()).unwrap(),
            })
            .collect();
        PersonTrack::new(CameraId(cam), None, obs, [0.5; 2], [0.5; 2]).unwrap()
    }

    fn series(stream: &EventStream, gallery: &[usize]) -> ForestSeries {
        let items: Vec<_> = gallery
            .iter()
            .map(|&i| GalleryItem {
                label: i as u64,
                track: &stream.tracks()[i],
            })
            .collect();
        train_forest_series_on(&items, 600.0, 150.0, &ForestParams::default(), 1).unwrap()
    }

    fn c(s: f64) -> Correspondence {
        Correspondence {
            exit_track: TrackId { camera: CameraId(1), seq: 0 },
            matched_track: TrackId { camera: CameraId(2), seq: 0 },
            similarity: s,
            delta_t: 1.0,
        }
    }

    #[test]
    fn empty_gallery_yields_nothing() {
        let stream = EventStream::new(vec![track(1, 0.0, vec![1.0, 0.0])]);
        let g = gather_correspondences(&stream, &[0], &ForestSeries::default(), TransitRange::one_sided(600.0));
        assert!(g.correspondences.is_empty());
        assert_eq!(g.comparisons, 0);
    }

    #[test]
    fn identical_match_inside_window() {
        // exit at t=2, gallery entry at t=30
        let stream = EventStream::new(vec![
            track(1, 0.0, vec![1.0, 2.0]),
            track(2, 30.0, vec![1.0, 2.0]),
            track(2, 40.0, vec![2.0, 0.1]),
        ]);
        let s = series(&stream, &[1, 2]);
        let g = gather_correspondences(&stream, &[0], &s, TransitRange::one_sided(600.0));
        assert_eq!(g.correspondences.len(), 1);
        let c = g.correspondences[0];
        assert_eq!(c.matched_track, stream.id(1));
        assert!((c.similarity - 1.0).abs() < 1e-12);
        assert_eq!(c.delta_t, 28.0);
        assert_eq!(g.comparisons, 3 + 9);
    }

    #[test]
    fn window_gates_identical_candidates() {
        let stream = EventStream::new(vec![
            track(1, 100.0, vec![1.0, 2.0]),
            track(2, 50.0, vec![1.0, 2.0]),
        ]);
        let s = series(&stream, &[1]);
        let g = gather_correspondences(&stream, &[0], &s, TransitRange::one_sided(600.0));
        assert!(g.correspondences.is_empty());
        let g = gather_correspondences(&stream, &[0], &s, TransitRange::two_sided(600.0));
        assert_eq!(g.correspondences.len(), 1);
        assert_eq!(g.correspondences[0].delta_t, -52.0);
    }

    #[test]
    fn reliable_filter_is_strict() {
        assert!(filter_reliable(&[c(0.7)], 0.7).is_empty());
        assert_eq!(filter_reliable(&[c(0.71)], 0.7).len(), 1);
        assert!(filter_reliable(&[], 0.7).is_empty());
    }

    #[test]
    fn around_floors_at_zero() {
        let r = TransitRange::around(2.0, 10.0, true);
        assert_eq!((r.lo, r.hi, r.target), (0.0, 7.0, 2.0));
        let r = TransitRange::around(2.0, 10.0, false);
        assert_eq!(r.lo, -3.0);
    }
}
