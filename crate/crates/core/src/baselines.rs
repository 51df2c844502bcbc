//! Bag-of-words baselines: k-means codebooks, flat and temporal-pyramid
//! histograms, and max voting over raw bank responses.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SegmentFeatures;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub centroids: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Codebook {
    pub fn size(&self) -> usize {
        self.centroids.len()
    }

    pub fn dimension(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Index of the nearest centroid and its squared distance; ties go to the lower index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

fn distinct_count(points: &[&[f64]], cap: usize) -> usize {
    let mut seen: Vec<&[f64]> = Vec::new();
    for p in points {
        if !seen.iter().any(|s| s == p) {
            seen.push(p);
            if seen.len() >= cap {
                break;
            }
        }
    }
    seen.len()
}

/// k-means with k-means++ seeding; see [`kmeans_traced`].
pub fn kmeans(points: &[&[f64]], k: usize, seed: u64, max_iters: usize) -> Result<Codebook> {
    kmeans_traced(points, k, seed, max_iters).map(|(c, _)| c)
}

/// Runs Lloyd iterations until the assignment stops changing or `max_iters`
/// is reached. Also returns the inertia measured after every assignment step.
pub fn kmeans_traced(points: &[&[f64]], k: usize, seed: u64, max_iters: usize) -> Result<(Codebook, Vec<f64>)> {
    let distinct = distinct_count(points, k.max(1));
    if k == 0 || distinct < k {
        return Err(Error::TooFewPoints { distinct, k });
    }
    let dim = points[0].len();
    let mut rng = rng::stream(seed, rng::tag::KMEANS, 0);

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
        }
        let c = points[pick].to_vec();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c));
        }
        centroids.push(c);
    }

    let mut book = Codebook { centroids };
    let mut assign: Vec<usize> = vec![usize::MAX; points.len()];
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let nearest: Vec<(usize, f64)> = points.par_iter().map(|p| book.nearest(p)).collect();
        history.push(nearest.iter().map(|&(_, d)| d).sum());
        let changed = nearest.iter().zip(&assign).any(|(&(a, _), &b)| a != b);
        if !changed {
            break;
        }
        for (a, &(c, _)) in assign.iter_mut().zip(&nearest) {
            *a = c;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut dist: Vec<f64> = nearest.iter().map(|&(_, d)| d).collect();
        for c in 0..k {
            if counts[c] > 0 {
                book.centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
                continue;
            }
            // Re-seed from the point currently farthest from its centroid.
            let far = (0..points.len()).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
            book.centroids[c] = points[far].to_vec();
            dist[far] = 0.0;
        }
    }
    Ok((book, history))
}

/// Per-dimension z-scoring fitted on training segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::TooFewSamples { needed: 1, found: 0 });
        };
        let n = rows.len() as f64;
        let dim = first.len();
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var.iter().map(|s| (s / n).sqrt().max(1e-9)).collect();
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

fn counts(rows: &[&[f64]], book: &Codebook) -> Vec<f64> {
    let mut h = vec![0.0; book.size()];
    for r in rows {
        h[book.nearest(r).0] += 1.0;
    }
    h
}

fn rows_of(seq: &[SegmentFeatures]) -> Vec<&[f64]> {
    seq.iter().map(|s| s.values.as_slice()).collect()
}

/// ℓ1-normalized histogram of nearest-codeword assignments.
pub fn bow_encode(seq: &[SegmentFeatures], book: &Codebook) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::EmptyEvent);
    }
    let n = seq.len() as f64;
    Ok(counts(&rows_of(seq), book).into_iter().map(|c| c / n).collect())
}

/// How pyramid levels are weighted before the global normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PyramidWeighting {
    #[default]
    Flat,
    /// Spatial-pyramid-matching weights: `1/2^(L-1)` for level 0 and `1/2^(L-l)` for level `l >= 1`.
    Spm,
}

impl PyramidWeighting {
    fn weight(self, level: usize, levels: usize) -> f64 {
        match self {
            PyramidWeighting::Flat => 1.0,
            PyramidWeighting::Spm if level == 0 => 0.5f64.powi(levels as i32 - 1),
            PyramidWeighting::Spm => 0.5f64.powi((levels - level) as i32),
        }
    }
}

/// Contiguous near-equal cells; earlier cells take the remainder.
pub fn pyramid_cells(n: usize, cells: usize) -> Vec<std::ops::Range<usize>> {
    let (base, extra) = (n / cells, n % cells);
    let mut start = 0;
    (0..cells)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Concatenated per-cell histograms over levels `0..levels`, globally ℓ1-normalized.
/// Dimension is `V * (2^levels - 1)`; empty cells contribute zeros.
pub fn pbow_encode(seq: &[SegmentFeatures], book: &Codebook, levels: usize, weighting: PyramidWeighting) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::EmptyEvent);
    }
    if levels == 0 {
        return Err(Error::InvalidConfig("pyramid needs at least one level".into()));
    }
    let rows = rows_of(seq);
    let mut out = Vec::with_capacity(book.size() * ((1 << levels) - 1));
    let mut mass = 0.0;
    for level in 0..levels {
        let w = weighting.weight(level, levels);
        for cell in pyramid_cells(rows.len(), 1 << level) {
            let len = cell.len();
            let h = counts(&rows[cell], book);
            if len > 0 {
                mass += w;
                out.extend(h.into_iter().map(|c| w * (c / len as f64)));
            } else {
                out.extend(h);
            }
        }
    }
    Ok(out.into_iter().map(|v| v / mass).collect())
}

/// Class of the largest raw bank response; ties go to the lowest class id.
pub fn max_vote(phi: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in phi.iter().enumerate() {
        if v > phi[best] {
            best = i;
        }
    }
    best
}
