//! Bank-of-regressors descriptor.
//!
//! For class `c`, every segment of a (zero-padded) event casts onset and
//! offset votes through forest `c`, weighted by the matcher's posterior
//! `P(c | x)`. The votes accumulate into two confidence curves over the padded
//! segment grid; the descriptor entry is the mean of the two curve maxima.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SegmentFeatures;
use crate::matcher::{FoldedMatchers, MatcherModel};
use crate::regforest::{gaussian_pdf, Node, RegressorForest};

pub const DEFAULT_PAD_FACTOR: usize = 5;

/// Zero segments placed before the event in a sequence padded to `factor * n`.
pub fn pad_before(n: usize, factor: usize) -> usize {
    factor.saturating_sub(1) * n / 2
}

/// Pads with all-zero segments to `factor * n`, originals centered.
pub fn pad_sequence(seq: &[SegmentFeatures], factor: usize) -> Vec<SegmentFeatures> {
    assert!(!seq.is_empty(), "cannot pad an empty sequence");
    let n = seq.len();
    let total = factor.max(1) * n;
    let before = pad_before(n, factor.max(1));
    let dim = seq[0].dim();
    (0..total)
        .map(|i| {
            if i >= before && i < before + n {
                SegmentFeatures {
                    values: seq[i - before].values.clone(),
                    segment_index: i,
                }
            } else {
                SegmentFeatures::zeros(dim, i)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurves {
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
}

impl ScoreCurves {
    pub fn len(&self) -> usize {
        self.f_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_plus.is_empty()
    }
}

fn check_dims(forest: &RegressorForest, dim: usize) -> Result<()> {
    match forest.dimension_hint() {
        Some(d) if d > dim => Err(Error::DimensionMismatch { expected: d, found: dim }),
        _ => Ok(()),
    }
}

/// Curves from explicit per-segment weights (`weights[i] = P(c | x_i)`).
pub fn score_curves_weighted(forest: &RegressorForest, weights: &[f64], padded: &[SegmentFeatures]) -> Result<ScoreCurves> {
    if weights.len() != padded.len() {
        return Err(Error::LengthMismatch {
            left: weights.len(),
            right: padded.len(),
        });
    }
    if let Some(s) = padded.first() {
        check_dims(forest, s.dim())?;
    }
    let grid = padded.len();
    let mut f_plus = vec![0.0; grid];
    let mut f_minus = vec![0.0; grid];
    if grid == 0 {
        return Ok(ScoreCurves { f_plus, f_minus });
    }
    let t_inv = 1.0 / forest.trees.len() as f64;
    // Leaf densities depend only on n - n', so each leaf gets one table over
    // offsets -(grid-1)..=(grid-1).
    let span = 2 * grid - 1;
    let mut tables: Vec<Vec<Option<(Vec<f64>, Vec<f64>)>>> = forest.trees.iter().map(|t| vec![None; t.nodes.len()]).collect();

    for (i, (seg, &w)) in padded.iter().zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        let scale = w * t_inv;
        for (t, tree) in forest.trees.iter().enumerate() {
            let leaf_idx = tree.leaf_index(&seg.values);
            let (on, off) = tables[t][leaf_idx].get_or_insert_with(|| {
                let Node::Leaf(leaf) = &tree.nodes[leaf_idx] else { unreachable!() };
                let origin = (grid - 1) as f64;
                let on = (0..span).map(|k| gaussian_pdf(k as f64 - origin, -leaf.mean_on, leaf.var_on)).collect();
                let off = (0..span).map(|k| gaussian_pdf(k as f64 - origin, leaf.mean_off, leaf.var_off)).collect();
                (on, off)
            });
            // Offset n - i maps to table slot n - i + grid - 1.
            let start = grid - 1 - i;
            for (dst, src) in f_plus.iter_mut().zip(&on[start..start + grid]) {
                *dst += scale * src;
            }
            for (dst, src) in f_minus.iter_mut().zip(&off[start..start + grid]) {
                *dst += scale * src;
            }
        }
    }
    Ok(ScoreCurves { f_plus, f_minus })
}

/// Posterior-weighted onset/offset curves of `forest` over a padded sequence.
pub fn score_curves(forest: &RegressorForest, matcher: &MatcherModel, padded: &[SegmentFeatures]) -> Result<ScoreCurves> {
    if let Some(s) = padded.first() {
        if s.dim() != matcher.dimension {
            return Err(Error::DimensionMismatch {
                expected: matcher.dimension,
                found: s.dim(),
            });
        }
    }
    let weights: Vec<f64> = padded
        .iter()
        .map(|s| matcher.posterior(&s.values)[forest.class_id])
        .collect();
    score_curves_weighted(forest, &weights, padded)
}

/// Mean of the onset and offset curve maxima.
pub fn phi_entry(curves: &ScoreCurves) -> f64 {
    assert!(!curves.is_empty(), "empty score curves");
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    0.5 * (max(&curves.f_plus) + max(&curves.f_minus))
}

/// Padded sequence plus segment posteriors, shared by every forest in the bank.
pub struct ScoredEvent {
    pub padded: Vec<SegmentFeatures>,
    pub posteriors: Vec<Vec<f64>>,
}

impl ScoredEvent {
    pub fn new(matcher: &MatcherModel, event: &[SegmentFeatures], pad_factor: usize) -> Result<Self> {
        if event.is_empty() {
            return Err(Error::EmptyEvent);
        }
        if let Some(bad) = event.iter().find(|s| s.dim() != matcher.dimension) {
            return Err(Error::DimensionMismatch {
                expected: matcher.dimension,
                found: bad.dim(),
            });
        }
        let padded = pad_sequence(event, pad_factor);
        let zero = matcher.posterior(&vec![0.0; matcher.dimension]);
        let before = pad_before(event.len(), pad_factor.max(1));
        let posteriors = (0..padded.len())
            .map(|i| {
                if i >= before && i < before + event.len() {
                    matcher.posterior(&padded[i].values)
                } else {
                    zero.clone()
                }
            })
            .collect();
        Ok(Self { padded, posteriors })
    }

    pub fn curves(&self, forest: &RegressorForest) -> Result<ScoreCurves> {
        let weights: Vec<f64> = self.posteriors.iter().map(|p| p[forest.class_id]).collect();
        score_curves_weighted(forest, &weights, &self.padded)
    }
}

/// Raw descriptor: one entry per forest of the bank, in bank order.
pub fn extract_bor(bank: &[RegressorForest], matcher: &MatcherModel, event: &[SegmentFeatures], pad_factor: usize) -> Result<Vec<f64>> {
    let scored = ScoredEvent::new(matcher, event, pad_factor)?;
    bank.iter()
        .map(|forest| scored.curves(forest).map(|c| phi_entry(&c)))
        .collect()
}

/// Mean segment posterior over the unpadded event, l1-normalized.
pub fn extract_unstructured(matcher: &MatcherModel, event: &[SegmentFeatures]) -> Result<Vec<f64>> {
    if event.is_empty() {
        return Err(Error::EmptyEvent);
    }
    let mut acc = vec![0.0; matcher.n_classes];
    for s in event {
        for (a, p) in acc.iter_mut().zip(matcher.posterior(&s.values)) {
            *a += p;
        }
    }
    let n = event.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(l1_normalize(acc))
}

pub fn l1_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    Raw,
    MaxNormalized,
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorDescriptor {
    pub phi: Vec<f64>,
    pub phi_hat: Option<Vec<f64>>,
    pub state: Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    /// Per-class maximum of the raw entries over the training events.
    pub class_maxima: Vec<f64>,
}

pub fn fit_normalizer(training: &[Vec<f64>]) -> Result<NormalizationStats> {
    let first = training.first().ok_or(Error::TooFewSamples { needed: 1, found: 0 })?;
    let mut class_maxima = vec![0.0f64; first.len()];
    for row in training {
        if row.len() != class_maxima.len() {
            return Err(Error::DimensionMismatch {
                expected: class_maxima.len(),
                found: row.len(),
            });
        }
        for (m, &v) in class_maxima.iter_mut().zip(row) {
            *m = m.max(v);
        }
    }
    Ok(NormalizationStats { class_maxima })
}

/// Divides by the training maxima (zero maxima map to zero), then l1-normalizes.
/// Test values above the training maximum are kept as they are.
pub fn normalize(raw: &[f64], stats: &NormalizationStats) -> Result<BorDescriptor> {
    if raw.len() != stats.class_maxima.len() {
        return Err(Error::DimensionMismatch {
            expected: stats.class_maxima.len(),
            found: raw.len(),
        });
    }
    let scaled = raw
        .iter()
        .zip(&stats.class_maxima)
        .map(|(&v, &m)| if m > 0.0 { v / m } else { 0.0 })
        .collect();
    Ok(BorDescriptor {
        phi: l1_normalize(scaled),
        phi_hat: None,
        state: Normalization::L1,
    })
}

/// Raw structured and unstructured descriptors of a set of events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDescriptors {
    pub raw: Vec<Vec<f64>>,
    pub phi_hat: Vec<Vec<f64>>,
}

fn describe(bank: &[RegressorForest], matcher: &MatcherModel, event: &[SegmentFeatures], pad_factor: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((extract_bor(bank, matcher, event, pad_factor)?, extract_unstructured(matcher, event)?))
}

/// Descriptors of unseen events, scored with a single matcher.
pub fn extract_descriptors(bank: &[RegressorForest], matcher: &MatcherModel, events: &[&[SegmentFeatures]], pad_factor: usize) -> Result<EventDescriptors> {
    let rows: Vec<(Vec<f64>, Vec<f64>)> = events
        .par_iter()
        .map(|e| describe(bank, matcher, e, pad_factor))
        .collect::<Result<_>>()?;
    let (raw, phi_hat) = rows.into_iter().unzip();
    Ok(EventDescriptors { raw, phi_hat })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDescriptors {
    pub descriptors: EventDescriptors,
    pub stats: NormalizationStats,
    pub normalized: Vec<BorDescriptor>,
}

/// Training events are scored by the matcher of their held-out fold; the bank
/// itself is the full-data bank. The normalizer is fitted on the result.
pub fn extract_training_descriptors(
    bank: &[RegressorForest],
    folded: &FoldedMatchers,
    events: &[&[SegmentFeatures]],
    pad_factor: usize,
) -> Result<TrainingDescriptors> {
    if folded.fold_of_event.len() != events.len() {
        return Err(Error::LengthMismatch {
            left: folded.fold_of_event.len(),
            right: events.len(),
        });
    }
    let rows: Vec<(Vec<f64>, Vec<f64>)> = events
        .par_iter()
        .enumerate()
        .map(|(e, ev)| describe(bank, folded.matcher_for_event(e), ev, pad_factor))
        .collect::<Result<_>>()?;
    let (raw, phi_hat): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let stats = fit_normalizer(&raw)?;
    let normalized = raw
        .iter()
        .zip(&phi_hat)
        .map(|(r, h)| {
            normalize(r, &stats).map(|mut d| {
                d.phi_hat = Some(h.clone());
                d
            })
        })
        .collect::<Result<_>>()?;
    Ok(TrainingDescriptors {
        descriptors: EventDescriptors { raw, phi_hat },
        stats,
        normalized,
    })
}
