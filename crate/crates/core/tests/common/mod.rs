//! Brute-force reference implementations shared by the integration tests.
//!
//! Everything here is written from the model definitions directly: no helper
//! from the library is used for routing, densities, padding or split costs.

#![allow(dead_code)]

use regbank::matcher::{ClassNode, MatcherModel};
use regbank::regforest::{LeafModel, Node, RegressionTree, RegressorForest, SplitTest, TrainingSegment};

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = (x - mean) / var.sqrt();
    (-0.5 * z * z).exp() / (var.sqrt() * (2.0 * std::f64::consts::PI).sqrt())
}

pub fn walk_tree<'t>(tree: &'t RegressionTree, x: &[f64]) -> &'t LeafModel {
    let mut node = &tree.nodes[0];
    loop {
        match node {
            Node::Split { test, left, right } => {
                let next = if x[test.channel] > test.threshold { right } else { left };
                node = &tree.nodes[*next as usize];
            }
            Node::Leaf(leaf) => return leaf,
        }
    }
}

pub fn walk_posterior(m: &MatcherModel, x: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; m.n_classes];
    for tree in &m.trees {
        let mut i = 0;
        let counts = loop {
            match &tree.nodes[i] {
                ClassNode::Split {
                    channel,
                    threshold,
                    left,
                    right,
                } => i = if x[*channel] > *threshold { *right as usize } else { *left as usize },
                ClassNode::Leaf { counts } => break counts,
            }
        };
        let total: f64 = counts.iter().map(|&c| c as f64).sum();
        for (pc, &c) in p.iter_mut().zip(counts) {
            *pc += c as f64 / total / m.trees.len() as f64;
        }
    }
    p
}

/// Onset and offset densities of one tree for a segment at `n_prime`, at grid point `n`.
pub fn tree_densities(tree: &RegressionTree, x: &[f64], n_prime: f64, n: f64) -> (f64, f64) {
    let leaf = walk_tree(tree, x);
    (
        normal_pdf(n, n_prime - leaf.mean_on, leaf.var_on),
        normal_pdf(n, n_prime + leaf.mean_off, leaf.var_off),
    )
}

/// Structured descriptor by triple loop: grid points x segments x trees.
/// The event is padded with `2N` zero segments on each side.
pub fn oracle_phi(bank: &[RegressorForest], matcher: &MatcherModel, event: &[Vec<f64>]) -> Vec<f64> {
    let n = event.len();
    let dim = event[0].len();
    let mut padded = vec![vec![0.0; dim]; 2 * n];
    padded.extend(event.iter().cloned());
    padded.extend(vec![vec![0.0; dim]; 2 * n]);
    let grid = padded.len();
    bank.iter()
        .map(|forest| {
            let c = forest.class_id;
            let (mut best_on, mut best_off) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for g in 0..grid {
                let (mut on, mut off) = (0.0, 0.0);
                for (i, x) in padded.iter().enumerate() {
                    let w = walk_posterior(matcher, x)[c];
                    let (mut t_on, mut t_off) = (0.0, 0.0);
                    for tree in &forest.trees {
                        let (a, b) = tree_densities(tree, x, i as f64, g as f64);
                        t_on += a;
                        t_off += b;
                    }
                    on += w * t_on / forest.trees.len() as f64;
                    off += w * t_off / forest.trees.len() as f64;
                }
                best_on = best_on.max(on);
                best_off = best_off.max(off);
            }
            (best_on + best_off) / 2.0
        })
        .collect()
}

/// Sum of squared deviations of both distances from each side's mean.
pub fn oracle_split_cost(data: &[&TrainingSegment], test: &SplitTest) -> Option<f64> {
    let (right, left): (Vec<&TrainingSegment>, Vec<&TrainingSegment>) =
        data.iter().partition(|s| s.x[test.channel] > test.threshold);
    if left.is_empty() || right.is_empty() {
        return None;
    }
    let sse = |side: &[&TrainingSegment]| {
        let k = side.len() as f64;
        let mp = side.iter().map(|s| s.d_plus).sum::<f64>() / k;
        let mm = side.iter().map(|s| s.d_minus).sum::<f64>() / k;
        side.iter().map(|s| (s.d_plus - mp).powi(2) + (s.d_minus - mm).powi(2)).sum::<f64>()
    };
    Some(sse(&left) + sse(&right))
}

/// Exhaustive minimization over the pool: (index, cost) of the first minimum.
pub fn oracle_best_split(pool: &[SplitTest], data: &[&TrainingSegment]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in pool.iter().enumerate() {
        if let Some(c) = oracle_split_cost(data, t) {
            if best.is_none_or(|(_, b)| c < b) {
                best = Some((i, c));
            }
        }
    }
    best
}
