use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kernel::{kernel_eval, kernel_matrix, KernelMatrix, KernelSpec, Sample};
use super::smo::{smo_train_binary, SmoParams};
use crate::error::{Error, Result};

/// Pairwise machine: positive decision values vote for `positive`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub positive: usize,
    pub negative: usize,
    /// Positions in [`SvmModel::support_vectors`].
    pub support: Vec<usize>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub c_reg: f64,
    pub classes: Vec<usize>,
    pub support_vectors: Vec<Sample>,
    pub machines: Vec<BinaryMachine>,
}

impl SvmModel {
    pub fn decision_values(&self, x: &Sample) -> Result<Vec<f64>> {
        let k: Vec<f64> = self
            .support_vectors
            .iter()
            .map(|sv| kernel_eval(&self.kernel, sv, x))
            .collect::<Result<_>>()?;
        Ok(self
            .machines
            .iter()
            .map(|m| m.support.iter().zip(&m.coef).map(|(&s, c)| c * k[s]).sum::<f64>() + m.bias)
            .collect())
    }

    /// Majority vote; ties go to the larger summed |decision| over won
    /// machines, then to the lowest class id.
    pub fn predict(&self, x: &Sample) -> Result<usize> {
        let dv = self.decision_values(x)?;
        let mut votes: BTreeMap<usize, (usize, f64)> = self.classes.iter().map(|&c| (c, (0, 0.0))).collect();
        for (m, v) in self.machines.iter().zip(&dv) {
            let winner = if *v > 0.0 { m.positive } else { m.negative };
            let e = votes.get_mut(&winner).expect("known class");
            e.0 += 1;
            e.1 += v.abs();
        }
        let mut best = self.classes[0];
        for (&c, &(n, mag)) in &votes {
            let (bn, bmag) = votes[&best];
            if n > bn || (n == bn && mag > bmag) {
                best = c;
            }
        }
        Ok(best)
    }
}

pub fn ovo_predict(model: &SvmModel, x: &Sample) -> Result<usize> {
    model.predict(x)
}

pub fn ovo_train(samples: &[Sample], labels: &[usize], spec: &KernelSpec, params: &SmoParams) -> Result<SvmModel> {
    let k = kernel_matrix(spec, samples)?;
    let idx: Vec<usize> = (0..samples.len()).collect();
    ovo_train_precomputed(&k, samples, &idx, labels, spec, params)
}

/// One-vs-one training on the rows `idx` of a precomputed Gram matrix.
pub fn ovo_train_precomputed(
    k: &KernelMatrix,
    samples: &[Sample],
    idx: &[usize],
    labels: &[usize],
    spec: &KernelSpec,
    params: &SmoParams,
) -> Result<SvmModel> {
    if samples.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: samples.len(),
            right: labels.len(),
        });
    }
    let mut classes: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let mut sv_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut machines = Vec::new();
    for (a_pos, &a) in classes.iter().enumerate() {
        for &b in &classes[a_pos + 1..] {
            let members: Vec<usize> = idx.iter().copied().filter(|&i| labels[i] == a || labels[i] == b).collect();
            let y: Vec<f64> = members.iter().map(|&i| if labels[i] == a { 1.0 } else { -1.0 }).collect();
            let sol = smo_train_binary(&k.subset(&members), &y, params)?;
            let mut support = Vec::new();
            let mut coef = Vec::new();
            for (local, &global) in members.iter().enumerate() {
                if sol.alpha[local] > 0.0 {
                    let next = sv_of.len();
                    support.push(*sv_of.entry(global).or_insert(next));
                    coef.push(sol.alpha[local] * y[local]);
                }
            }
            machines.push(BinaryMachine {
                positive: a,
                negative: b,
                support,
                coef,
                bias: sol.bias,
            });
        }
    }
    let mut support_vectors = vec![None; sv_of.len()];
    for (global, pos) in sv_of {
        support_vectors[pos] = Some(samples[global].clone());
    }
    Ok(SvmModel {
        kernel: spec.clone(),
        c_reg: params.c_reg,
        classes,
        support_vectors: support_vectors.into_iter().map(|s| s.expect("filled")).collect(),
        machines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(c_reg: f64) -> SmoParams {
        SmoParams { c_reg, ..Default::default() }
    }

    #[test]
    fn two_classes_use_one_machine() {
        let samples: Vec<Sample> = [-2.0, -1.0, 1.0, 2.0].iter().map(|&x| Sample::new(vec![x])).collect();
        let labels = [3, 3, 7, 7];
        let m = ovo_train(&samples, &labels, &KernelSpec::Linear, &params(10.0)).unwrap();
        assert_eq!(m.machines.len(), 1);
        assert_eq!(m.classes, vec![3, 7]);
        for (s, &l) in samples.iter().zip(&labels) {
            let dv = m.decision_values(s).unwrap()[0];
            assert_eq!(m.predict(s).unwrap(), if dv > 0.0 { 3 } else { 7 });
            assert_eq!(m.predict(s).unwrap(), l);
        }
    }

    #[test]
    fn separable_three_classes() {
        let centers = [[0.0, 5.0], [5.0, -3.0], [-5.0, -3.0]];
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for d in [[0.3, 0.1], [-0.2, 0.4], [0.1, -0.3], [-0.4, -0.2]] {
                samples.push(Sample::new(vec![ctr[0] + d[0], ctr[1] + d[1]]));
                labels.push(c);
            }
        }
        let m = ovo_train(&samples, &labels, &KernelSpec::Rbf { gamma: 0.1 }, &params(10.0)).unwrap();
        assert_eq!(m.machines.len(), 3);
        for (s, &l) in samples.iter().zip(&labels) {
            assert_eq!(m.predict(s).unwrap(), l);
        }
        let far = Sample::new(vec![0.0, 9.0]);
        assert_eq!(m.predict(&far).unwrap(), 0);
        assert_eq!(m.predict(&far).unwrap(), m.predict(&far).unwrap());
    }

    #[test]
    fn vote_ties_fall_back_to_magnitude_then_id() {
        let model = SvmModel {
            kernel: KernelSpec::Linear,
            c_reg: 1.0,
            classes: vec![0, 1, 2],
            support_vectors: vec![Sample::new(vec![1.0])],
            machines: vec![
                BinaryMachine { positive: 0, negative: 1, support: vec![0], coef: vec![1.0], bias: 0.0 },
                BinaryMachine { positive: 1, negative: 2, support: vec![0], coef: vec![2.0], bias: 0.0 },
                BinaryMachine { positive: 2, negative: 0, support: vec![0], coef: vec![3.0], bias: 0.0 },
            ],
        };
        // x = 1: every machine's positive class wins once; magnitudes 1, 2, 3.
        assert_eq!(model.predict(&Sample::new(vec![1.0])).unwrap(), 2);
        let flat = SvmModel {
            machines: model.machines.iter().map(|m| BinaryMachine { coef: vec![1.0], ..m.clone() }).collect(),
            ..model
        };
        assert_eq!(flat.predict(&Sample::new(vec![1.0])).unwrap(), 0);
    }
}
