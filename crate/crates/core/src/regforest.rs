//! Class-specific random regression forests for onset/offset estimation.
//!
//! Every training segment carries its distance (in segments) back to the
//! first segment of its event and forward to the last one. Trees split on
//! single-channel threshold tests chosen from a random pool to minimize the
//! summed squared deviation of those distance pairs, and each leaf keeps a
//! pair of univariate Gaussians over the distances it received.
//!
//! At estimation time a segment observed at grid index `n'` is routed to one
//! leaf per tree; the leaf Gaussians are shifted to `n' - mean_on` (onset) and
//! `n' + mean_off` (offset) and averaged over trees.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SegmentFeatures;
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSegment {
    pub x: Vec<f64>,
    /// Segments back to the event's first segment.
    pub d_plus: f64,
    /// Segments forward to the event's last segment.
    pub d_minus: f64,
    pub class_label: usize,
}

/// One training segment per event segment, labelled with its boundary distances.
pub fn build_regression_training_set(events: &[Vec<SegmentFeatures>], class_label: usize) -> Result<Vec<TrainingSegment>> {
    if events.is_empty() {
        return Err(Error::EmptyClass(class_label));
    }
    let mut out = Vec::with_capacity(events.iter().map(Vec::len).sum());
    for event in events {
        if event.is_empty() {
            return Err(Error::EmptyEvent);
        }
        let n = event.len();
        for (i, seg) in event.iter().enumerate() {
            out.push(TrainingSegment {
                x: seg.values.clone(),
                d_plus: i as f64,
                d_minus: (n - 1 - i) as f64,
                class_label,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitTest {
    pub channel: usize,
    pub threshold: f64,
}

impl SplitTest {
    /// `true` (go right) iff `x[channel] > threshold`.
    #[inline]
    pub fn apply(&self, x: &[f64]) -> bool {
        x[self.channel] > self.threshold
    }
}

pub fn apply_test(t: &SplitTest, x: &SegmentFeatures) -> bool {
    t.apply(&x.values)
}

/// Random tests: uniform channel, threshold uniform over that channel's range in `rows`.
pub fn sample_test_pool<R: Rng + ?Sized>(rng: &mut R, dimension: usize, rows: &[&[f64]], size: usize) -> Vec<SplitTest> {
    assert!(!rows.is_empty(), "test pool for an empty node");
    let mut lo = vec![f64::INFINITY; dimension];
    let mut hi = vec![f64::NEG_INFINITY; dimension];
    for row in rows {
        for (r, &v) in row[..dimension].iter().enumerate() {
            lo[r] = lo[r].min(v);
            hi[r] = hi[r].max(v);
        }
    }
    (0..size)
        .map(|_| {
            let channel = rng.random_range(0..dimension);
            let u: f64 = rng.random();
            let threshold = (lo[channel] + (hi[channel] - lo[channel]) * u).min(hi[channel]);
            SplitTest { channel, threshold }
        })
        .collect()
}

fn side_cost(side: &[&TrainingSegment]) -> f64 {
    let n = side.len() as f64;
    let mp = side.iter().map(|s| s.d_plus).sum::<f64>() / n;
    let mm = side.iter().map(|s| s.d_minus).sum::<f64>() / n;
    side.iter()
        .map(|s| (s.d_plus - mp).powi(2) + (s.d_minus - mm).powi(2))
        .sum()
}

/// Summed squared deviation of the distance pairs from their side means.
pub fn split_cost(left: &[&TrainingSegment], right: &[&TrainingSegment]) -> Result<f64> {
    if left.is_empty() || right.is_empty() {
        return Err(Error::EmptySide);
    }
    Ok(side_cost(left) + side_cost(right))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub test: SplitTest,
    pub pool_index: usize,
    pub cost: f64,
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    sp: f64,
    sm: f64,
    qp: f64,
    qm: f64,
}

impl Moments {
    fn add(mut self, s: &TrainingSegment) -> Self {
        self.n += 1.0;
        self.sp += s.d_plus;
        self.sm += s.d_minus;
        self.qp += s.d_plus * s.d_plus;
        self.qm += s.d_minus * s.d_minus;
        self
    }

    fn minus(&self, o: &Moments) -> Moments {
        Moments {
            n: self.n - o.n,
            sp: self.sp - o.sp,
            sm: self.sm - o.sm,
            qp: self.qp - o.qp,
            qm: self.qm - o.qm,
        }
    }

    fn sse(&self) -> f64 {
        ((self.qp - self.sp * self.sp / self.n) + (self.qm - self.sm * self.sm / self.n)).max(0.0)
    }
}

/// The pool test with minimal [`split_cost`] among those leaving both sides
/// non-empty; ties go to the lowest pool index.
pub fn select_best_test(pool: &[SplitTest], data: &[&TrainingSegment]) -> Result<SplitChoice> {
    assert!(!pool.is_empty(), "empty test pool");
    let n = data.len();
    if n < 2 {
        return Err(Error::NoValidSplit);
    }
    let dim = pool.iter().map(|t| t.channel).max().unwrap_or(0) + 1;

    // Per used channel: sorted values and prefix moments, so each test costs one binary search.
    let mut used = vec![false; dim];
    pool.iter().for_each(|t| used[t.channel] = true);
    let columns: Vec<Option<(Vec<f64>, Vec<Moments>)>> = (0..dim)
        .map(|r| {
            used[r].then(|| {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| data[a].x[r].total_cmp(&data[b].x[r]));
                let values: Vec<f64> = order.iter().map(|&i| data[i].x[r]).collect();
                let mut prefix = Vec::with_capacity(n + 1);
                let mut acc = Moments::default();
                prefix.push(acc);
                for &i in &order {
                    acc = acc.add(data[i]);
                    prefix.push(acc);
                }
                (values, prefix)
            })
        })
        .collect();

    let mut best: Option<SplitChoice> = None;
    for (pool_index, test) in pool.iter().enumerate() {
        let (values, prefix) = columns[test.channel].as_ref().expect("channel prepared");
        let k = values.partition_point(|&v| v <= test.threshold);
        if k == 0 || k == n {
            continue;
        }
        let left = prefix[k];
        let right = prefix[n].minus(&left);
        let cost = left.sse() + right.sse();
        if best.map_or(true, |b| cost < b.cost) {
            best = Some(SplitChoice {
                test: *test,
                pool_index,
                cost,
            });
        }
    }
    best.ok_or(Error::NoValidSplit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeafModel {
    pub mean_on: f64,
    pub var_on: f64,
    pub mean_off: f64,
    pub var_off: f64,
    pub count: usize,
}

/// Means and population variances (floored at `var_floor`) of the leaf's distances.
pub fn fit_leaf(data: &[&TrainingSegment], var_floor: f64) -> LeafModel {
    assert!(!data.is_empty(), "leaf without samples");
    let n = data.len() as f64;
    let mean_on = data.iter().map(|s| s.d_plus).sum::<f64>() / n;
    let mean_off = data.iter().map(|s| s.d_minus).sum::<f64>() / n;
    let var_on = data.iter().map(|s| (s.d_plus - mean_on).powi(2)).sum::<f64>() / n;
    let var_off = data.iter().map(|s| (s.d_minus - mean_off).powi(2)).sum::<f64>() / n;
    LeafModel {
        mean_on,
        var_on: var_on.max(var_floor),
        mean_off,
        var_off: var_off.max(var_floor),
        count: data.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples: usize,
    pub tests_per_node: usize,
    pub subsample: f64,
    pub var_floor: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 10,
            max_depth: 12,
            min_samples: 20,
            tests_per_node: 20_000,
            subsample: 0.5,
            var_floor: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { test: SplitTest, left: u32, right: u32 },
    Leaf(LeafModel),
}

/// Flat node array, root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    /// Index of the leaf node reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { test, left, right } => {
                    i = if test.apply(x) { *right } else { *left } as usize;
                }
                Node::Leaf(_) => return i,
            }
        }
    }

    pub fn route(&self, x: &[f64]) -> &LeafModel {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf(leaf) => leaf,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &LeafModel> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(l) => Some(l),
            Node::Split { .. } => None,
        })
    }
}

pub fn route<'t>(tree: &'t RegressionTree, x: &SegmentFeatures) -> &'t LeafModel {
    tree.route(&x.values)
}

/// A grown tree plus, for every node index that is a leaf, the positions in
/// the training slice that reached it.
pub struct GrownTree {
    pub tree: RegressionTree,
    pub leaf_members: Vec<(usize, Vec<usize>)>,
}

struct Grower<'a, R> {
    data: &'a [&'a TrainingSegment],
    cfg: &'a ForestConfig,
    rng: &'a mut R,
    dim: usize,
    nodes: Vec<Node>,
    members: Vec<(usize, Vec<usize>)>,
}

impl<R: Rng> Grower<'_, R> {
    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> u32 {
        let slot = self.nodes.len();
        let node_data: Vec<&TrainingSegment> = idx.iter().map(|&i| self.data[i]).collect();
        let choice = if depth >= self.cfg.max_depth || idx.len() <= self.cfg.min_samples {
            None
        } else {
            let rows: Vec<&[f64]> = node_data.iter().map(|s| s.x.as_slice()).collect();
            let pool = sample_test_pool(self.rng, self.dim, &rows, self.cfg.tests_per_node.max(1));
            select_best_test(&pool, &node_data).ok()
        };
        let Some(choice) = choice else {
            self.nodes.push(Node::Leaf(fit_leaf(&node_data, self.cfg.var_floor)));
            self.members.push((slot, idx));
            return slot as u32;
        };
        let (right_idx, left_idx): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| choice.test.apply(&self.data[i].x));
        self.nodes.push(Node::Split {
            test: choice.test,
            left: 0,
            right: 0,
        });
        let l = self.grow(left_idx, depth + 1);
        let r = self.grow(right_idx, depth + 1);
        if let Node::Split { left, right, .. } = &mut self.nodes[slot] {
            *left = l;
            *right = r;
        }
        slot as u32
    }
}

/// Grows one tree and reports which training positions landed in each leaf.
pub fn grow_tree_traced<R: Rng>(data: &[&TrainingSegment], cfg: &ForestConfig, rng: &mut R) -> GrownTree {
    assert!(!data.is_empty(), "cannot grow a tree on no data");
    let mut grower = Grower {
        data,
        cfg,
        dim: data[0].x.len(),
        rng,
        nodes: Vec::new(),
        members: Vec::new(),
    };
    grower.grow((0..data.len()).collect(), 0);
    GrownTree {
        tree: RegressionTree { nodes: grower.nodes },
        leaf_members: grower.members,
    }
}

pub fn grow_tree<R: Rng>(data: &[&TrainingSegment], cfg: &ForestConfig, rng: &mut R) -> RegressionTree {
    grow_tree_traced(data, cfg, rng).tree
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorForest {
    pub class_id: usize,
    pub config: ForestConfig,
    pub seed: u64,
    pub trees: Vec<RegressionTree>,
}

/// Sorted positions of the per-tree subsample.
pub fn tree_subsample(n: usize, fraction: f64, seed: u64, tree: usize) -> (Vec<usize>, rng::StreamRng) {
    let mut rng = rng::stream(seed, tag::REGRESSION_TREE, tree as u64);
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    (idx, rng)
}

/// Trains `cfg.n_trees` trees on independent subsamples of the class's segments.
/// Tree `t` uses the stream keyed on `(seed, t)`, so the result does not depend
/// on scheduling.
pub fn train_forest(events: &[Vec<SegmentFeatures>], class_id: usize, cfg: &ForestConfig, seed: u64) -> Result<RegressorForest> {
    let segments = build_regression_training_set(events, class_id)?;
    let n_trees = cfg.n_trees.max(1);
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let (idx, mut rng) = tree_subsample(segments.len(), cfg.subsample, seed, t);
            let data: Vec<&TrainingSegment> = idx.iter().map(|&i| &segments[i]).collect();
            grow_tree(&data, cfg, &mut rng)
        })
        .collect();
    Ok(RegressorForest {
        class_id,
        config: cfg.clone(),
        seed,
        trees,
    })
}

impl RegressorForest {
    pub fn dimension_hint(&self) -> Option<usize> {
        self.trees
            .iter()
            .flat_map(|t| &t.nodes)
            .filter_map(|n| match n {
                Node::Split { test, .. } => Some(test.channel + 1),
                Node::Leaf(_) => None,
            })
            .max()
    }

    pub fn estimate(&self, x: &[f64], n_prime: f64) -> BoundaryEstimate {
        BoundaryEstimate {
            n_prime,
            leaves: self.trees.iter().map(|t| *t.route(x)).collect(),
        }
    }
}

#[inline]
pub fn gaussian_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    (-(d * d) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Onset/offset densities produced by one segment observed at index `n_prime`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEstimate {
    pub n_prime: f64,
    /// Leaf reached in each tree.
    pub leaves: Vec<LeafModel>,
}

impl BoundaryEstimate {
    pub fn tree_onset(&self, tree: usize, n: f64) -> f64 {
        let l = &self.leaves[tree];
        gaussian_pdf(n, self.n_prime - l.mean_on, l.var_on)
    }

    pub fn tree_offset(&self, tree: usize, n: f64) -> f64 {
        let l = &self.leaves[tree];
        gaussian_pdf(n, self.n_prime + l.mean_off, l.var_off)
    }

    pub fn onset(&self, n: f64) -> f64 {
        (0..self.leaves.len()).map(|t| self.tree_onset(t, n)).sum::<f64>() / self.leaves.len() as f64
    }

    pub fn offset(&self, n: f64) -> f64 {
        (0..self.leaves.len()).map(|t| self.tree_offset(t, n)).sum::<f64>() / self.leaves.len() as f64
    }
}

pub fn forest_estimate(forest: &RegressorForest, x: &SegmentFeatures, n_prime: usize) -> BoundaryEstimate {
    forest.estimate(&x.values, n_prime as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn seg(d_plus: f64, d_minus: f64) -> TrainingSegment {
        TrainingSegment {
            x: vec![d_plus, d_minus],
            d_plus,
            d_minus,
            class_label: 0,
        }
    }

    fn feats(values: Vec<f64>, i: usize) -> SegmentFeatures {
        SegmentFeatures {
            values,
            segment_index: i,
        }
    }

    #[test]
    fn distances_follow_segment_positions() {
        let one = vec![vec![feats(vec![0.0], 0)]];
        let set = build_regression_training_set(&one, 3).unwrap();
        assert_eq!((set[0].d_plus, set[0].d_minus, set[0].class_label), (0.0, 0.0, 3));

        let five = vec![(0..5).map(|i| feats(vec![i as f64], i)).collect::<Vec<_>>()];
        let set = build_regression_training_set(&five, 0).unwrap();
        assert_eq!((set[2].d_plus, set[2].d_minus), (2.0, 2.0));
        assert_eq!((set[0].d_plus, set[0].d_minus), (0.0, 4.0));
        assert!(set.iter().all(|s| s.d_plus + s.d_minus == 4.0));

        assert!(matches!(build_regression_training_set(&[], 7), Err(Error::EmptyClass(7))));
    }

    #[test]
    fn pool_size_and_degenerate_range() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let row = [0.25, -3.0, 9.0];
        let pool = sample_test_pool(&mut rng, 3, &[&row[..]], 5);
        assert_eq!(pool.len(), 5);
        for t in &pool {
            assert_eq!(t.threshold, row[t.channel]);
        }
    }

    #[test]
    fn strict_threshold_boundary() {
        let t = SplitTest { channel: 1, threshold: 2.0 };
        assert!(!t.apply(&[0.0, 2.0]));
        assert!(t.apply(&[0.0, 3.0]));
        assert!(!t.apply(&[0.0, 1.0]));
    }

    #[test]
    fn split_cost_hand_values() {
        let (a, b, c) = (seg(1.0, 2.0), seg(3.0, 4.0), seg(5.0, 6.0));
        assert_eq!(split_cost(&[&a, &b], &[&c]).unwrap(), 4.0);
        assert_eq!(split_cost(&[&b, &a], &[&c]).unwrap(), 4.0);
        assert_eq!(split_cost(&[&c, &c], &[&a]).unwrap(), 0.0);
        assert!(matches!(split_cost(&[], &[&a]), Err(Error::EmptySide)));
    }

    #[test]
    fn best_test_edge_cases() {
        let (a, b) = (seg(0.0, 4.0), seg(4.0, 0.0));
        let t = SplitTest { channel: 0, threshold: 1.0 };
        let choice = select_best_test(&[t], &[&a, &b]).unwrap();
        assert_eq!((choice.test, choice.pool_index, choice.cost), (t, 0, 0.0));

        let same = [TrainingSegment { x: vec![1.0, 1.0], ..a.clone() }, TrainingSegment { x: vec![1.0, 1.0], ..b.clone() }];
        let refs: Vec<&TrainingSegment> = same.iter().collect();
        let pool = [SplitTest { channel: 0, threshold: 1.0 }, SplitTest { channel: 1, threshold: 0.5 }];
        assert!(matches!(select_best_test(&pool, &refs), Err(Error::NoValidSplit)));
    }

    #[test]
    fn ties_go_to_lowest_pool_index() {
        let data = [seg(0.0, 0.0), seg(10.0, 10.0)];
        let refs: Vec<&TrainingSegment> = data.iter().collect();
        let pool = [
            SplitTest { channel: 0, threshold: 0.0 },
            SplitTest { channel: 1, threshold: 5.0 },
            SplitTest { channel: 0, threshold: 5.0 },
        ];
        assert_eq!(select_best_test(&pool, &refs).unwrap().pool_index, 0);
    }

    #[test]
    fn leaf_statistics() {
        let (a, b) = (seg(2.0, 1.0), seg(4.0, 1.0));
        let leaf = fit_leaf(&[&a, &b], 1e-3);
        assert_eq!((leaf.mean_on, leaf.var_on), (3.0, 1.0));
        assert_eq!((leaf.mean_off, leaf.var_off), (1.0, 1e-3));
        let single = fit_leaf(&[&a], 1.0);
        assert_eq!((single.var_on, single.var_off, single.count), (1.0, 1.0, 1));
    }

    fn random_data(seed: u64, n: usize) -> Vec<TrainingSegment> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.random_range(1..12usize);
                let pos = rng.random_range(0..len);
                TrainingSegment {
                    x: (0..4).map(|_| rng.random_range(-1.0..1.0) + pos as f64 * 0.1).collect(),
                    d_plus: pos as f64,
                    d_minus: (len - 1 - pos) as f64,
                    class_label: 0,
                }
            })
            .collect()
    }

    #[test]
    fn depth_and_count_caps_at_root() {
        let data = random_data(3, 30);
        let refs: Vec<&TrainingSegment> = data.iter().collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let cfg = ForestConfig { max_depth: 0, tests_per_node: 50, ..Default::default() };
        assert_eq!(grow_tree(&refs, &cfg, &mut rng).nodes.len(), 1);
        let cfg = ForestConfig { min_samples: 30, tests_per_node: 50, ..Default::default() };
        let tree = grow_tree(&refs, &cfg, &mut rng);
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.leaves().next().unwrap().count, 30);
    }

    #[test]
    fn forest_training_is_deterministic() {
        let events: Vec<Vec<SegmentFeatures>> = (0..6)
            .map(|e| (0..5 + e).map(|i| feats(vec![i as f64, (e * i) as f64, 1.0], i)).collect())
            .collect();
        let cfg = ForestConfig { n_trees: 3, tests_per_node: 100, min_samples: 2, ..Default::default() };
        let a = train_forest(&events, 0, &cfg, 42).unwrap();
        let b = train_forest(&events, 0, &cfg, 42).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.trees.len(), 3);

        let one = ForestConfig { n_trees: 1, ..cfg.clone() };
        let tiny = train_forest(&events[..1], 0, &one, 1).unwrap();
        assert_eq!(tiny.trees.len(), 1);
        assert!(tiny.trees[0].leaves().count() >= 1);
    }

    #[test]
    fn tree_subsamples_differ() {
        let (a, _) = tree_subsample(200, 0.5, 9, 0);
        let (b, _) = tree_subsample(200, 0.5, 9, 1);
        assert_eq!(a.len(), 100);
        assert_ne!(a, b);
    }

    #[test]
    fn single_tree_density_values() {
        let leaf = LeafModel { mean_on: 3.0, var_on: 1.0, mean_off: 2.0, var_off: 4.0, count: 1 };
        let est = BoundaryEstimate { n_prime: 10.0, leaves: vec![leaf] };
        assert!((est.onset(7.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert!((est.onset(6.0) - est.onset(8.0)).abs() < 1e-15);
        assert!((est.offset(12.0) - 1.0 / (8.0 * PI).sqrt()).abs() < 1e-12);

        let other = LeafModel { mean_on: 3.0, var_on: 1.0, ..leaf };
        let two = BoundaryEstimate { n_prime: 10.0, leaves: vec![leaf, other] };
        let expected = 0.5 * (two.tree_onset(0, 7.0) + two.tree_onset(1, 7.0));
        assert!((two.onset(7.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn unused_channels_do_not_affect_routing() {
        let tree = RegressionTree {
            nodes: vec![
                Node::Split { test: SplitTest { channel: 0, threshold: 0.0 }, left: 1, right: 2 },
                Node::Leaf(LeafModel { mean_on: 1.0, var_on: 1.0, mean_off: 1.0, var_off: 1.0, count: 1 }),
                Node::Leaf(LeafModel { mean_on: 2.0, var_on: 1.0, mean_off: 2.0, var_off: 1.0, count: 1 }),
            ],
        };
        assert_eq!(tree.route(&[1.0, 5.0]), tree.route(&[1.0, -99.0]));
        assert_eq!(tree.route(&[-1.0, 5.0]).mean_on, 1.0);
        let single = RegressionTree { nodes: vec![tree.nodes[2].clone()] };
        assert_eq!(single.route(&[123.0]).mean_on, 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pool_thresholds_stay_in_range(seed in any::<u64>(), n in 1usize..30) {
            let data = random_data(seed, n);
            let rows: Vec<&[f64]> = data.iter().map(|s| s.x.as_slice()).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for t in sample_test_pool(&mut rng, 4, &rows, 200) {
                let lo = rows.iter().map(|r| r[t.channel]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[t.channel]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(t.threshold >= lo && t.threshold <= hi);
            }
        }

        #[test]
        fn trees_respect_stopping_rules(seed in any::<u64>(), n in 1usize..120, depth in 0usize..6, nmin in 1usize..15) {
            let data = random_data(seed, n);
            let refs: Vec<&TrainingSegment> = data.iter().collect();
            let cfg = ForestConfig { max_depth: depth, min_samples: nmin, tests_per_node: 40, var_floor: 0.5, ..Default::default() };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let grown = grow_tree_traced(&refs, &cfg, &mut rng);
            prop_assert!(grown.tree.depth() <= depth);
            // Replay: each member routes to its own leaf, leaf stats match membership.
            let mut seen = vec![false; n];
            for (node, members) in &grown.leaf_members {
                let Node::Leaf(leaf) = &grown.tree.nodes[*node] else { panic!("member list on split node") };
                prop_assert_eq!(leaf.count, members.len());
                prop_assert!(leaf.var_on >= 0.5 && leaf.var_off >= 0.5);
                for &m in members {
                    prop_assert_eq!(grown.tree.leaf_index(&data[m].x), *node);
                    seen[m] = true;
                }
                // Uncapped leaves only arise when no test can separate the samples.
                let capped = members.len() <= nmin || depth_of(&grown.tree, *node) == depth;
                if !capped {
                    let rows: Vec<&TrainingSegment> = members.iter().map(|&m| &data[m]).collect();
                    let first = &rows[0].x;
                    prop_assert!(rows.iter().all(|r| &r.x == first));
                }
            }
            prop_assert!(seen.into_iter().all(|s| s));
        }
    }

    fn depth_of(tree: &RegressionTree, target: usize) -> usize {
        fn walk(nodes: &[Node], i: usize, d: usize, target: usize) -> Option<usize> {
            if i == target {
                return Some(d);
            }
            match &nodes[i] {
                Node::Leaf(_) => None,
                Node::Split { left, right, .. } => walk(nodes, *left as usize, d + 1, target).or_else(|| walk(nodes, *right as usize, d + 1, target)),
            }
        }
        walk(&tree.nodes, 0, 0, target).unwrap()
    }
}
