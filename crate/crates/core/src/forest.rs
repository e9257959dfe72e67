//! Random-forest person classifiers.
//!
//! Each gallery person (or gallery track, in blind mode) is one class and every
//! appearance of that person is one training sample. A probe track is scored
//! by averaging the per-appearance posteriors over all of its appearances.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::types::{FeatureVector, ForestParams, PersonTrack};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    /// Sparse class distribution: (class index, probability), sorted by class.
    Leaf { probs: Vec<(u32, f64)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    fn leaf(&self, x: &[f64]) -> &[(u32, f64)] {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                TreeNode::Leaf { probs } => return probs,
            }
        }
    }
}

/// A trained classifier over a fixed, sorted label set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<DecisionTree>,
    labels: Vec<u64>,
    dim: usize,
    /// Entry-time span `[start, end)` of the gallery this forest was trained on.
    pub window: (f64, f64),
}

/// Posterior over a forest's label set.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior<'a> {
    labels: &'a [u64],
    probs: Vec<f64>,
}

impl<'a> Posterior<'a> {
    pub fn labels(&self) -> &'a [u64] {
        self.labels
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, label: u64) -> f64 {
        self.labels
            .binary_search(&label)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.labels.iter().copied().zip(self.probs.iter().copied())
    }

    /// Highest-probability label among those accepted by `allowed`; ties go to
    /// the smallest label.
    pub fn argmax_where(&self, mut allowed: impl FnMut(u64) -> bool) -> Option<(u64, f64)> {
        let mut best: Option<(u64, f64)> = None;
        for (label, p) in self.iter() {
            if !allowed(label) {
                continue;
            }
            // labels ascend, so strict > keeps the smallest label on ties
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((label, p));
            }
        }
        best
    }

    pub fn argmax(&self) -> (u64, f64) {
        self.argmax_where(|_| true)
            .expect("forest label sets are never empty")
    }
}

/// Gallery sample: a track and the class it stands for.
#[derive(Clone, Copy, Debug)]
pub struct GalleryItem<'a> {
    pub label: u64,
    pub track: &'a PersonTrack,
}

impl Forest {
    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains_label(&self, label: u64) -> bool {
        self.labels.binary_search(&label).is_ok()
    }

    /// Average of the per-tree leaf distributions for one appearance.
    pub fn predict_posterior(&self, v: &FeatureVector) -> Result<Posterior<'_>> {
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.dim(),
            });
        }
        let mut probs = vec![0.0; self.labels.len()];
        self.accumulate(v.as_slice(), &mut probs);
        let scale = 1.0 / self.trees.len() as f64;
        probs.iter_mut().for_each(|p| *p *= scale);
        Ok(Posterior {
            labels: &self.labels,
            probs,
        })
    }

    fn accumulate(&self, x: &[f64], out: &mut [f64]) {
        for tree in &self.trees {
            for &(c, p) in tree.leaf(x) {
                out[c as usize] += p;
            }
        }
    }

    /// Multi-shot posterior: arithmetic mean of the single-shot posteriors of
    /// every appearance in `probe`.
    pub fn predict_multishot(&self, probe: &PersonTrack) -> Result<Posterior<'_>> {
        let obs = probe.observations();
        if obs.is_empty() {
            return Err(Error::EmptyProbe);
        }
        let mut sum = vec![0.0; self.labels.len()];
        for o in obs {
            let single = self.predict_posterior(&o.feature)?;
            sum.iter_mut().zip(&single.probs).for_each(|(s, p)| *s += p);
        }
        let k = obs.len() as f64;
        sum.iter_mut().for_each(|s| *s /= k);
        Ok(Posterior {
            labels: &self.labels,
            probs: sum,
        })
    }

    /// Final matched label and its multi-shot posterior value.
    pub fn best_match(&self, probe: &PersonTrack) -> Result<(u64, f64)> {
        Ok(self.predict_multishot(probe)?.argmax())
    }

    /// Like [`Forest::best_match`] but restricted to labels accepted by
    /// `allowed`. Returns `None` when no label qualifies.
    pub fn best_match_where(
        &self,
        probe: &PersonTrack,
        allowed: impl FnMut(u64) -> bool,
    ) -> Result<Option<(u64, f64)>> {
        Ok(self.predict_multishot(probe)?.argmax_where(allowed))
    }
}

/// Trains a forest whose classes are the identity labels carried by `gallery`.
pub fn train_forest(gallery: &[PersonTrack], hyper: &ForestParams, seed: u64) -> Result<Forest> {
    let items = gallery
        .iter()
        .map(|t| {
            t.label
                .map(|label| GalleryItem { label, track: t })
                .ok_or(Error::UnlabeledTrack)
        })
        .collect::<Result<Vec<_>>>()?;
    train_forest_on(&items, hyper, seed)
}

/// Trains a forest on explicitly labeled gallery tracks. Tracks sharing a
/// label pool their appearances into one class.
pub fn train_forest_on(items: &[GalleryItem<'_>], hyper: &ForestParams, seed: u64) -> Result<Forest> {
    if items.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let mut labels: Vec<u64> = items.iter().map(|g| g.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let dim = items[0].track.dim();

    let mut xs: Vec<&[f64]> = Vec::new();
    let mut ys: Vec<u32> = Vec::new();
    let (mut start, mut end) = (f64::INFINITY, f64::NEG_INFINITY);
    for g in items {
        if g.track.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: g.track.dim(),
            });
        }
        let class = labels.binary_search(&g.label).unwrap() as u32;
        for o in g.track.observations() {
            xs.push(o.feature.as_slice());
            ys.push(class);
        }
        start = start.min(g.track.entry_time());
        end = end.max(g.track.entry_time());
    }

    let n_classes = labels.len();
    let trees = par::map_range(hyper.n_trees, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(seed, i as u64));
        TreeBuilder::new(&xs, &ys, n_classes, dim, hyper).build(&mut rng)
    });
    Ok(Forest {
        trees,
        labels,
        dim,
        window: (start, end),
    })
}

fn tree_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

struct TreeBuilder<'a> {
    xs: &'a [&'a [f64]],
    ys: &'a [u32],
    n_classes: usize,
    dim: usize,
    hyper: &'a ForestParams,
    mtry: usize,
    nodes: Vec<TreeNode>,
    // scratch
    left_counts: Vec<u32>,
    right_counts: Vec<u32>,
    pairs: Vec<(f64, u32)>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<'a> TreeBuilder<'a> {
    fn new(
        xs: &'a [&'a [f64]],
        ys: &'a [u32],
        n_classes: usize,
        dim: usize,
        hyper: &'a ForestParams,
    ) -> Self {
        let mtry = hyper
            .max_features
            .unwrap_or_else(|| (dim as f64).sqrt().floor() as usize)
            .clamp(1, dim);
        Self {
            xs,
            ys,
            n_classes,
            dim,
            hyper,
            mtry,
            nodes: Vec::new(),
            left_counts: vec![0; n_classes],
            right_counts: vec![0; n_classes],
            pairs: Vec::new(),
        }
    }

    fn build(mut self, rng: &mut ChaCha8Rng) -> DecisionTree {
        let n = self.xs.len();
        let sample: Vec<usize> = if self.hyper.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        self.grow(sample, 0, rng);
        DecisionTree { nodes: self.nodes }
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(TreeNode::Leaf { probs: Vec::new() });

        let pure = idx.iter().all(|&i| self.ys[i] == self.ys[idx[0]]);
        let split = if pure
            || depth >= self.hyper.max_depth
            || idx.len() < 2 * self.hyper.min_samples_leaf
        {
            None
        } else {
            self.find_split(&idx, rng)
        };

        match split {
            None => {
                self.nodes[id as usize] = TreeNode::Leaf {
                    probs: self.distribution(&idx),
                };
            }
            Some(best) => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx
                    .into_iter()
                    .partition(|&i| self.xs[i][best.feature] <= best.threshold);
                let left = self.grow(l, depth + 1, rng);
                let right = self.grow(r, depth + 1, rng);
                self.nodes[id as usize] = TreeNode::Split {
                    feature: best.feature as u32,
                    threshold: best.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }

    fn distribution(&self, idx: &[usize]) -> Vec<(u32, f64)> {
        let mut counts: Vec<(u32, f64)> = Vec::new();
        let mut sorted: Vec<u32> = idx.iter().map(|&i| self.ys[i]).collect();
        sorted.sort_unstable();
        for c in sorted {
            match counts.last_mut() {
                Some((last, n)) if *last == c => *n += 1.0,
                _ => counts.push((c, 1.0)),
            }
        }
        let total = idx.len() as f64;
        counts.iter_mut().for_each(|(_, n)| *n /= total);
        counts
    }

    /// Gini-optimal threshold over a random feature subset. If none of the
    /// first `mtry` features admits a valid split, keeps scanning the rest.
    fn find_split(&mut self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let mut features: Vec<usize> = (0..self.dim).collect();
        features.shuffle(rng);

        let n = idx.len() as f64;
        self.right_counts.iter_mut().for_each(|c| *c = 0);
        for &i in idx {
            self.right_counts[self.ys[i] as usize] += 1;
        }
        let parent_sq: f64 = self
            .right_counts
            .iter()
            .map(|&c| (c as f64) * (c as f64))
            .sum();
        // weighted impurity times n: n - sum_sq/n
        let parent = n - parent_sq / n;

        let mut best: Option<BestSplit> = None;
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some(s) = self.best_threshold(idx, f, parent_sq) {
                if s.score < parent - 1e-12 && best.as_ref().is_none_or(|b| s.score < b.score) {
                    best = Some(s);
                }
            }
        }
        best
    }

    fn best_threshold(&mut self, idx: &[usize], feature: usize, parent_sq: f64) -> Option<BestSplit> {
        let min_leaf = self.hyper.min_samples_leaf;
        self.pairs.clear();
        self.pairs
            .extend(idx.iter().map(|&i| (self.xs[i][feature], self.ys[i])));
        self.pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if self.pairs[0].0 == self.pairs[self.pairs.len() - 1].0 {
            return None;
        }

        self.left_counts.iter_mut().for_each(|c| *c = 0);
        let mut right = self.right_counts.clone();
        let total = self.pairs.len();
        let (mut sq_l, mut sq_r) = (0.0f64, parent_sq);
        let mut best: Option<BestSplit> = None;
        for k in 0..total - 1 {
            let c = self.pairs[k].1 as usize;
            let l = self.left_counts[c] as f64;
            let r = right[c] as f64;
            sq_l += 2.0 * l + 1.0;
            sq_r -= 2.0 * r - 1.0;
            self.left_counts[c] += 1;
            right[c] -= 1;

            let n_l = k + 1;
            let n_r = total - n_l;
            if n_l < min_leaf || n_r < min_leaf {
                continue;
            }
            let (v, next) = (self.pairs[k].0, self.pairs[k + 1].0);
            if v == next {
                continue;
            }
            let score = (n_l as f64 - sq_l / n_l as f64) + (n_r as f64 - sq_r / n_r as f64);
            if best.as_ref().is_none_or(|b| score < b.score) {
                let mid = 0.5 * (v + next);
                // guard against midpoints that round onto the upper value
                let threshold = if mid < next { mid } else { v };
                best = Some(BestSplit {
                    feature,
                    threshold,
                    score,
                });
            }
        }
        debug_assert_eq!(self.n_classes, right.len());
        best
    }
}

/// Cosine similarity of the closest appearance pair between two tracks, in
/// [0, 1] for non-negative unit descriptors. Symmetric by construction.
pub fn similarity(a: &PersonTrack, b: &PersonTrack) -> Result<f64> {
    let (oa, ob) = (a.observations(), b.observations());
    if oa.is_empty() || ob.is_empty() {
        return Err(Error::EmptyProbe);
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut best = 0.0f64;
    for x in oa {
        for y in ob {
            best = best.max(x.feature.dot(&y.feature));
        }
    }
    Ok(best.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestSlot {
    pub center: f64,
    pub forest: Forest,
}

/// Forests trained on consecutive time slots `[center - T/2, center + T/2)`
/// of one gallery node.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForestSeries {
    pub width: f64,
    pub stride: f64,
    slots: Vec<ForestSlot>,
}

impl ForestSeries {
    pub fn slots(&self) -> &[ForestSlot] {
        &self.slots
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    /// Slot whose center is nearest `t`; ties go to the earlier slot.
    pub fn slot_for_time(&self, t: f64) -> Result<&ForestSlot> {
        if self.slots.is_empty() {
            return Err(Error::NoForest);
        }
        let i = self.slots.partition_point(|s| s.center < t);
        let slot = match (i.checked_sub(1), self.slots.get(i)) {
            (Some(p), Some(next)) => {
                let prev = &self.slots[p];
                if t - prev.center <= next.center - t {
                    prev
                } else {
                    next
                }
            }
            (Some(p), None) => &self.slots[p],
            (None, Some(next)) => next,
            (None, None) => unreachable!(),
        };
        Ok(slot)
    }

    pub fn forest_for_time(&self, t: f64) -> Result<&Forest> {
        self.slot_for_time(t).map(|s| &s.forest)
    }
}

/// Slot grid: centers at integer multiples of `stride`; a track joins every
/// slot whose span contains its entry time. Empty slots are omitted.
pub fn slot_memberships<'a>(
    gallery: &[GalleryItem<'a>],
    width: f64,
    stride: f64,
) -> Vec<(i64, Vec<GalleryItem<'a>>)> {
    if gallery.is_empty() {
        return Vec::new();
    }
    let half = 0.5 * width;
    let mut slots: std::collections::BTreeMap<i64, Vec<GalleryItem<'a>>> = Default::default();
    for g in gallery {
        let t = g.track.entry_time();
        // centers c with c - half <= t < c + half
        let k_lo = ((t - half) / stride).floor() as i64;
        let k_hi = ((t + half) / stride).ceil() as i64;
        for k in k_lo..=k_hi {
            let c = k as f64 * stride;
            if c - half <= t && t < c + half {
                slots.entry(k).or_default().push(*g);
            }
        }
    }
    slots.into_iter().collect()
}

pub fn train_forest_series_on(
    gallery: &[GalleryItem<'_>],
    width: f64,
    stride: f64,
    hyper: &ForestParams,
    seed: u64,
) -> Result<ForestSeries> {
    if !(width > 0.0) || !(stride > 0.0) {
        return Err(crate::error::invalid(
            "forest series",
            "window and stride must be positive",
        ));
    }
    let members = slot_memberships(gallery, width, stride);
    let slots = par::map(&members, |(k, items)| {
        let slot_seed = seed.wrapping_add((*k as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
        train_forest_on(items, hyper, slot_seed).map(|forest| ForestSlot {
            center: *k as f64 * stride,
            forest,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ForestSeries {
        width,
        stride,
        slots,
    })
}

/// Labeled-gallery convenience wrapper around [`train_forest_series_on`].
pub fn train_forest_series(
    gallery: &[PersonTrack],
    width: f64,
    stride: f64,
    hyper: &ForestParams,
    seed: u64,
) -> Result<ForestSeries> {
    let items = gallery
        .iter()
        .map(|t| {
            t.label
                .map(|label| GalleryItem { label, track: t })
                .ok_or(Error::UnlabeledTrack)
        })
        .collect::<Result<Vec<_>>>()?;
    train_forest_series_on(&items, width, stride, hyper, seed)
}
