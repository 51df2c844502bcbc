use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Descriptor channels an event can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    /// The primary descriptor (BoR phi, or a BoW histogram).
    Main,
    /// The unstructured posterior descriptor.
    Aux,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Main => "main",
            Channel::Aux => "aux",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub main: Vec<f64>,
    pub aux: Option<Vec<f64>>,
}

impl Sample {
    pub fn new(main: Vec<f64>) -> Self {
        Self { main, aux: None }
    }

    pub fn with_aux(main: Vec<f64>, aux: Vec<f64>) -> Self {
        Self { main, aux: Some(aux) }
    }

    pub fn channel(&self, c: Channel) -> Result<&[f64]> {
        match c {
            Channel::Main => Ok(&self.main),
            Channel::Aux => self.aux.as_deref().ok_or(Error::MissingChannel(c.name())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
    Chi2 { gamma: f64 },
    Hist,
    /// `exp(-gamma * sum_k D_chi2(channel k) / scale_k)`.
    ExtendedGaussian { scales: Vec<(Channel, f64)>, gamma: f64 },
}

impl KernelSpec {
    /// Parameter used to order otherwise tied grid points.
    pub fn param(&self) -> f64 {
        match self {
            KernelSpec::Linear | KernelSpec::Hist => 0.0,
            KernelSpec::Rbf { gamma } | KernelSpec::Chi2 { gamma } | KernelSpec::ExtendedGaussian { gamma, .. } => *gamma,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Chi2 { .. } => "chi2",
            KernelSpec::Hist => "hist",
            KernelSpec::ExtendedGaussian { .. } => "extended_gaussian",
        }
    }
}

fn chi2_unchecked(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(&a, &b)| {
            let s = a + b;
            if s > 0.0 {
                (a - b) * (a - b) / s
            } else {
                0.0
            }
        })
        .sum()
}

/// `sum (u_i - v_i)^2 / (u_i + v_i)`, skipping terms with a zero denominator.
pub fn chi2_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    if let Some((index, &value)) = u.iter().chain(v).enumerate().find(|(_, &x)| x < 0.0) {
        return Err(Error::NegativeEntry {
            index: index % u.len().max(1),
            value,
        });
    }
    Ok(chi2_unchecked(u, v))
}

fn same_len(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() == v.len() {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            left: u.len(),
            right: v.len(),
        })
    }
}

pub fn kernel_eval(spec: &KernelSpec, a: &Sample, b: &Sample) -> Result<f64> {
    match spec {
        KernelSpec::ExtendedGaussian { scales, gamma } => {
            let mut total = 0.0;
            for &(ch, scale) in scales {
                total += chi2_distance(a.channel(ch)?, b.channel(ch)?)? / scale;
            }
            Ok((-gamma * total).exp())
        }
        _ => {
            let (u, v) = (&a.main, &b.main);
            same_len(u, v)?;
            Ok(match spec {
                KernelSpec::Linear => u.iter().zip(v).map(|(x, y)| x * y).sum(),
                KernelSpec::Rbf { gamma } => (-gamma * u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).exp(),
                KernelSpec::Chi2 { gamma } => (-gamma * chi2_distance(u, v)?).exp(),
                KernelSpec::Hist => u.iter().zip(v).map(|(x, y)| x.min(*y)).sum(),
                KernelSpec::ExtendedGaussian { .. } => unreachable!(),
            })
        }
    }
}

/// Dense symmetric Gram matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl KernelMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Restriction to the rows and columns in `idx`.
    pub fn subset(&self, idx: &[usize]) -> KernelMatrix {
        let n = idx.len();
        let mut data = Vec::with_capacity(n * n);
        for &i in idx {
            data.extend(idx.iter().map(|&j| self.get(i, j)));
        }
        KernelMatrix { n, data }
    }
}

pub fn kernel_matrix(spec: &KernelSpec, samples: &[Sample]) -> Result<KernelMatrix> {
    let n = samples.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| kernel_eval(spec, &samples[i], &samples[j])).collect::<Result<Vec<f64>>>())
        .collect::<Result<_>>()?;
    let mut data = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Ok(KernelMatrix { n, data })
}

pub const MIN_CHANNEL_SCALE: f64 = 1e-12;

/// Mean chi-square distance over all unordered training pairs, per channel.
pub fn channel_scales(samples: &[Sample], channels: &[Channel]) -> Result<Vec<(Channel, f64)>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: n });
    }
    channels
        .iter()
        .map(|&ch| {
            let views: Vec<&[f64]> = samples.iter().map(|s| s.channel(ch)).collect::<Result<_>>()?;
            let total: f64 = (0..n)
                .into_par_iter()
                .map(|i| ((i + 1)..n).map(|j| chi2_distance(views[i], views[j])).sum::<Result<f64>>())
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .sum();
            let pairs = (n * (n - 1) / 2) as f64;
            Ok((ch, (total / pairs).max(MIN_CHANNEL_SCALE)))
        })
        .collect()
}
