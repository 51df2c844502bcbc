//! Multi-class random forest supplying segment-level class posteriors.
//!
//! Plain Breiman forest: bootstrap per tree, Gini splits over a random subset
//! of `sqrt(D)` channels per node, fully grown trees whose leaves keep class
//! histograms. The posterior is the average of the leaf class fractions.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SegmentFeatures;
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherConfig {
    pub n_trees: usize,
    /// Channels tried per split; `None` means `round(sqrt(D))`.
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    /// Folds used when scoring training events.
    pub folds: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_features: None,
            min_samples_leaf: 1,
            max_depth: None,
            folds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassNode {
    Split {
        channel: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        counts: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTree {
    pub nodes: Vec<ClassNode>,
}

impl ClassTree {
    pub fn leaf(&self, x: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                ClassNode::Split {
                    channel,
                    threshold,
                    left,
                    right,
                } => i = if x[*channel] > *threshold { *right } else { *left } as usize,
                ClassNode::Leaf { counts } => return counts,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherModel {
    pub n_classes: usize,
    pub dimension: usize,
    pub config: MatcherConfig,
    pub seed: u64,
    pub trees: Vec<ClassTree>,
}

impl MatcherModel {
    /// Soft vote: mean over trees of the reached leaf's class fractions.
    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.n_classes];
        for tree in &self.trees {
            let counts = tree.leaf(x);
            let total: u32 = counts.iter().sum();
            let inv = 1.0 / total as f64;
            for (pc, &c) in p.iter_mut().zip(counts) {
                *pc += c as f64 * inv;
            }
        }
        let inv = 1.0 / self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v *= inv);
        p
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.posterior(x);
        argmax(&p)
    }
}

pub fn posterior(m: &MatcherModel, x: &SegmentFeatures) -> Vec<f64> {
    m.posterior(&x.values)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct TreeBuilder<'a> {
    rows: &'a [&'a [f64]],
    labels: &'a [usize],
    n_classes: usize,
    mtry: usize,
    min_leaf: usize,
    max_depth: usize,
}

struct BestSplit {
    channel: usize,
    threshold: f64,
    score: f64,
}

impl TreeBuilder<'_> {
    fn build<R: Rng>(&self, mut idx: Vec<usize>, rng: &mut R) -> ClassTree {
        let dim = self.rows[0].len();
        let mut channels: Vec<usize> = (0..dim).collect();
        let mut nodes: Vec<ClassNode> = Vec::new();
        // (slot, start, end, depth)
        let mut stack = vec![(0usize, 0usize, idx.len(), 0usize)];
        nodes.push(ClassNode::Leaf { counts: Vec::new() });
        while let Some((slot, start, end, depth)) = stack.pop() {
            let counts = self.histogram(&idx[start..end]);
            let n = end - start;
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let split = if pure || depth >= self.max_depth || n < 2 * self.min_leaf {
                None
            } else {
                channels.shuffle(rng);
                self.best_split(&mut idx[start..end], &channels, &counts)
            };
            let Some(split) = split else {
                nodes[slot] = ClassNode::Leaf { counts };
                continue;
            };
            let slice = &mut idx[start..end];
            let mut mid = 0;
            for i in 0..slice.len() {
                if self.rows[slice[i]][split.channel] <= split.threshold {
                    slice.swap(i, mid);
                    mid += 1;
                }
            }
            let left = nodes.len();
            nodes.push(ClassNode::Leaf { counts: Vec::new() });
            nodes.push(ClassNode::Leaf { counts: Vec::new() });
            nodes[slot] = ClassNode::Split {
                channel: split.channel,
                threshold: split.threshold,
                left: left as u32,
                right: left as u32 + 1,
            };
            stack.push((left + 1, start + mid, end, depth + 1));
            stack.push((left, start, start + mid, depth + 1));
        }
        ClassTree { nodes }
    }

    fn histogram(&self, idx: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_classes];
        for &i in idx {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    /// Examines `mtry` channels in the given order, continuing past them only
    /// while none of the examined channels admits a split.
    fn best_split(&self, idx: &mut [usize], channels: &[usize], total: &[u32]) -> Option<BestSplit> {
        let n = idx.len();
        let total_sq: f64 = total.iter().map(|&c| (c as f64).powi(2)).sum();
        let mut best: Option<BestSplit> = None;
        let mut left = vec![0u32; self.n_classes];
        for (k, &ch) in channels.iter().enumerate() {
            if k >= self.mtry && best.is_some() {
                break;
            }
            idx.sort_by(|&a, &b| self.rows[a][ch].total_cmp(&self.rows[b][ch]));
            left.iter_mut().for_each(|c| *c = 0);
            let mut right = total.to_vec();
            let (mut sq_left, mut sq_right) = (0.0, total_sq);
            for i in 0..n - 1 {
                let y = self.labels[idx[i]];
                sq_left += 2.0 * left[y] as f64 + 1.0;
                sq_right -= 2.0 * right[y] as f64 - 1.0;
                left[y] += 1;
                right[y] -= 1;
                let nl = i + 1;
                if nl < self.min_leaf || n - nl < self.min_leaf {
                    continue;
                }
                let (v, next) = (self.rows[idx[i]][ch], self.rows[idx[i + 1]][ch]);
                if v >= next {
                    continue;
                }
                // Maximizing this minimizes the weighted Gini impurity.
                let score = sq_left / nl as f64 + sq_right / (n - nl) as f64;
                if best.as_ref().map_or(true, |b| score > b.score) {
                    let mid = 0.5 * (v + next);
                    best = Some(BestSplit {
                        channel: ch,
                        threshold: if mid < next { mid } else { v },
                        score,
                    });
                }
            }
        }
        best
    }
}

/// Trains the matcher on labelled segment rows.
pub fn train_matcher(rows: &[&[f64]], labels: &[usize], n_classes: usize, cfg: &MatcherConfig, seed: u64) -> Result<MatcherModel> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    let first = labels.first().copied().ok_or(Error::SingleClass)?;
    if labels.iter().all(|&l| l == first) {
        return Err(Error::SingleClass);
    }
    let dim = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    let n_classes = n_classes.max(labels.iter().max().unwrap() + 1);
    let mtry = cfg
        .max_features
        .unwrap_or_else(|| (dim as f64).sqrt().round() as usize)
        .clamp(1, dim);
    let builder = TreeBuilder {
        rows,
        labels,
        n_classes,
        mtry,
        min_leaf: cfg.min_samples_leaf.max(1),
        max_depth: cfg.max_depth.unwrap_or(usize::MAX),
    };
    let n = rows.len();
    let trees = (0..cfg.n_trees.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, tag::MATCHER_TREE, t as u64);
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            builder.build(bootstrap, &mut rng)
        })
        .collect();
    Ok(MatcherModel {
        n_classes,
        dimension: dim,
        config: cfg.clone(),
        seed,
        trees,
    })
}

/// Convenience wrapper flattening labelled events into segment rows.
pub fn train_matcher_on_events(events: &[&[SegmentFeatures]], labels: &[usize], n_classes: usize, cfg: &MatcherConfig, seed: u64) -> Result<MatcherModel> {
    let mut rows = Vec::new();
    let mut seg_labels = Vec::new();
    for (event, &label) in events.iter().zip(labels) {
        for s in event.iter() {
            rows.push(s.values.as_slice());
            seg_labels.push(label);
        }
    }
    train_matcher(&rows, &seg_labels, n_classes, cfg, seed)
}

/// Fold id per event. Within each class the events are shuffled and dealt
/// round-robin, continuing the deal across classes so fold sizes stay even.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::stream(seed, tag::FOLDS, k as u64);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedMatchers {
    pub fold_of_event: Vec<usize>,
    pub models: Vec<MatcherModel>,
}

impl FoldedMatchers {
    /// The matcher that never saw event `event`.
    pub fn matcher_for_event(&self, event: usize) -> &MatcherModel {
        &self.models[self.fold_of_event[event]]
    }

    /// Events whose segments trained matcher `k`.
    pub fn training_events(&self, k: usize) -> Vec<usize> {
        (0..self.fold_of_event.len())
            .filter(|&e| self.fold_of_event[e] != k)
            .collect()
    }
}

pub fn train_folded_matchers(
    events: &[&[SegmentFeatures]],
    labels: &[usize],
    n_classes: usize,
    k: usize,
    cfg: &MatcherConfig,
    seed: u64,
) -> Result<FoldedMatchers> {
    if k < 2 || events.len() < k {
        return Err(Error::TooFewEvents {
            events: events.len(),
            folds: k,
        });
    }
    let fold_of_event = stratified_folds(labels, k, seed);
    let models = (0..k)
        .map(|fold| {
            let (ev, lab): (Vec<&[SegmentFeatures]>, Vec<usize>) = (0..events.len())
                .filter(|&e| fold_of_event[e] != fold)
                .map(|e| (events[e], labels[e]))
                .unzip();
            train_matcher_on_events(&ev, &lab, n_classes, cfg, rng::derive_seed(seed, tag::FOLDS, fold as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FoldedMatchers {
        fold_of_event,
        models,
    })
}
