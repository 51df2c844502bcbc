//! Classification metrics and the text report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Model selection outcome echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub kernel: String,
    pub param: f64,
    pub c_reg: f64,
    pub cv_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub system: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub selection: Option<Selection>,
    pub config: Vec<(String, String)>,
    pub timing: Vec<(String, f64)>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, per-class precision/recall/F1, macro-F1 and the confusion matrix.
pub fn evaluate(predictions: &[usize], truths: &[usize], classes: &[String]) -> Result<EvaluationReport> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, found: 0 });
    }
    let c = classes.len();
    if let Some(&bad) = predictions.iter().chain(truths).find(|&&v| v >= c) {
        return Err(Error::DimensionMismatch { expected: c, found: bad + 1 });
    }
    let mut confusion = vec![vec![0usize; c]; c];
    for (&p, &t) in predictions.iter().zip(truths) {
        confusion[t][p] += 1;
    }
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let tp = confusion[k][k];
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[k]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassMetrics {
                class: classes[k].clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let trace: usize = (0..c).map(|k| confusion[k][k]).sum();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / c as f64;
    Ok(EvaluationReport {
        system: String::new(),
        accuracy: ratio(trace, truths.len()),
        macro_f1,
        per_class,
        confusion,
        selection: None,
        config: Vec::new(),
        timing: Vec::new(),
    })
}

impl EvaluationReport {
    /// Delimited text: summary lines, a per-class table, the confusion
    /// matrix, then the configuration echo.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# regbank report");
        let _ = writeln!(s, "system,{}", self.system);
        let _ = writeln!(s, "accuracy,{}", self.accuracy);
        let _ = writeln!(s, "macro_f1,{}", self.macro_f1);
        if let Some(sel) = &self.selection {
            let _ = writeln!(s, "kernel,{}", sel.kernel);
            let _ = writeln!(s, "kernel_param,{}", sel.param);
            let _ = writeln!(s, "c,{}", sel.c_reg);
            let _ = writeln!(s, "cv_accuracy,{}", sel.cv_accuracy);
        }
        let _ = writeln!(s, "\n# per class\nclass,precision,recall,f1,support");
        for m in &self.per_class {
            let _ = writeln!(s, "{},{},{},{},{}", m.class, m.precision, m.recall, m.f1, m.support);
        }
        let _ = writeln!(s, "\n# confusion (rows: truth, columns: prediction)");
        let names: Vec<&str> = self.per_class.iter().map(|m| m.class.as_str()).collect();
        let _ = writeln!(s, "truth,{}", names.join(","));
        for (name, row) in names.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{name},{}", cells.join(","));
        }
        let _ = writeln!(s, "\n# config\nkey,value");
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k},{v}");
        }
        if !self.timing.is_empty() {
            let _ = writeln!(s, "\n# timing\nstage,seconds");
            for (k, v) in &self.timing {
                let _ = writeln!(s, "{k},{v:.3}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn all_correct() {
        let r = evaluate(&[0, 1, 2, 1], &[0, 1, 2, 1], &names(3)).unwrap();
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn constant_prediction_on_balanced_pair() {
        let r = evaluate(&[0, 0, 0, 0], &[0, 0, 1, 1], &names(2)).unwrap();
        assert_eq!(r.accuracy, 0.5);
        // Class 0: P = 1/2, R = 1, F1 = 2/3. Class 1: F1 = 0.
        let p: f64 = 0.5;
        let f1_0 = 2.0 * p * 1.0 / (p + 1.0);
        assert!((r.macro_f1 - f1_0 / 2.0).abs() < 1e-12);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(evaluate(&[0], &[0, 1], &names(2)), Err(Error::LengthMismatch { .. })));
    }

    proptest! {
        #[test]
        fn confusion_consistency(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let r = evaluate(&p, &t, &names(4)).unwrap();
            let trace: usize = (0..4).map(|k| r.confusion[k][k]).sum();
            prop_assert!((r.accuracy - trace as f64 / t.len() as f64).abs() < 1e-15);
            for k in 0..4 {
                let row: usize = r.confusion[k].iter().sum();
                prop_assert_eq!(row, t.iter().filter(|&&v| v == k).count());
            }
        }
    }
}
