//! Cross-validated grid search over the margin parameter and kernel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{kernel_matrix, KernelMatrix, KernelSpec, Sample};
use super::ovo::ovo_train_precomputed;
use super::smo::SmoParams;
use crate::error::{Error, Result};
use crate::matcher::stratified_folds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CvScheme {
    KFold(usize),
    LeaveOneOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub c_values: Vec<f64>,
    pub kernels: Vec<KernelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub kernel: KernelSpec,
    pub c_reg: f64,
    /// `None` when a fold failed to train.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub kernel: KernelSpec,
    pub c_reg: f64,
    pub cv_accuracy: f64,
    /// Binary-or-multiclass fits performed (one per fold per grid point).
    pub fits: usize,
    pub table: Vec<GridPoint>,
}

fn fold_ids(labels: &[usize], scheme: CvScheme, seed: u64) -> (Vec<usize>, usize) {
    match scheme {
        CvScheme::LeaveOneOut => ((0..labels.len()).collect(), labels.len()),
        CvScheme::KFold(k) => {
            let k = k.clamp(2, labels.len().max(2));
            (stratified_folds(labels, k, seed), k)
        }
    }
}

fn cv_accuracy(k: &KernelMatrix, samples: &[Sample], labels: &[usize], folds: &[usize], n_folds: usize, spec: &KernelSpec, params: &SmoParams) -> Option<f64> {
    let mut correct = 0usize;
    for f in 0..n_folds {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == f).collect();
        if test.is_empty() {
            continue;
        }
        let first = labels[train[0]];
        if train.iter().all(|&i| labels[i] == first) {
            correct += test.iter().filter(|&&i| labels[i] == first).count();
            continue;
        }
        let model = ovo_train_precomputed(k, samples, &train, labels, spec, params).ok()?;
        for &i in &test {
            if model.predict(&samples[i]).ok()? == labels[i] {
                correct += 1;
            }
        }
    }
    Some(correct as f64 / labels.len() as f64)
}

/// Picks the grid point with the best cross-validated accuracy; ties go to
/// the smallest `C`, then the smallest kernel parameter, then grid order.
pub fn tune(samples: &[Sample], labels: &[usize], grid: &Grid, scheme: CvScheme, base: &SmoParams, seed: u64) -> Result<TuneResult> {
    if grid.c_values.is_empty() || grid.kernels.is_empty() {
        return Err(Error::InvalidConfig("empty tuning grid".into()));
    }
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: samples.len() });
    }
    let (folds, n_folds) = fold_ids(labels, scheme, seed);
    let single = grid.c_values.len() == 1 && grid.kernels.len() == 1;
    let mut table = Vec::new();
    for spec in &grid.kernels {
        let k = kernel_matrix(spec, samples)?;
        let rows: Vec<GridPoint> = grid
            .c_values
            .par_iter()
            .map(|&c_reg| {
                let params = SmoParams { c_reg, ..base.clone() };
                let accuracy = if single { Some(0.0) } else { cv_accuracy(&k, samples, labels, &folds, n_folds, spec, &params) };
                GridPoint {
                    kernel: spec.clone(),
                    c_reg,
                    accuracy,
                }
            })
            .collect();
        table.extend(rows);
    }
    let fits = if single { 0 } else { table.len() * n_folds };
    let mut best: Option<&GridPoint> = None;
    for p in &table {
        let Some(acc) = p.accuracy else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let bacc = b.accuracy.unwrap();
                acc > bacc || (acc == bacc && (p.c_reg < b.c_reg || (p.c_reg == b.c_reg && p.kernel.param() < b.kernel.param())))
            }
        };
        if better {
            best = Some(p);
        }
    }
    let best = best.ok_or(Error::NoConvergence { iterations: base.max_iter })?;
    Ok(TuneResult {
        kernel: best.kernel.clone(),
        c_reg: best.c_reg,
        cv_accuracy: best.accuracy.unwrap(),
        fits,
        table,
    })
}
