use std::fmt;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::Model;

/// Confusion matrix (rows = true class, columns = predicted) and the
/// summary metrics derived from it.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    /// Mean over classes of `TP/(TP+FP)`; a class never predicted counts 0.
    pub macro_precision: f64,
    /// Mean over classes of `TP/(TP+FN)`; a class with no samples counts 0.
    pub macro_recall: f64,
    /// True-class sample counts.
    pub class_counts: Vec<usize>,
}

impl EvalReport {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::Data("cannot evaluate an empty set".into()));
        }
        if truth.len() != predicted.len() {
            return Err(Error::Data(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            for v in [t, p] {
                if v >= classes {
                    return Err(Error::Index {
                        what: "class",
                        index: v,
                        len: classes,
                    });
                }
            }
            confusion[t][p] += 1;
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let diag = |c: usize| confusion[c][c];
        let row = |c: usize| confusion[c].iter().sum::<usize>();
        let col = |c: usize| confusion.iter().map(|r| r[c]).sum::<usize>();
        let mean = |f: &dyn Fn(usize) -> f64| (0..classes).map(f).sum::<f64>() / classes as f64;
        let trace: usize = (0..classes).map(diag).sum();
        Ok(Self {
            accuracy: ratio(trace, truth.len()),
            macro_precision: mean(&|c| ratio(diag(c), col(c))),
            macro_recall: mean(&|c| ratio(diag(c), row(c))),
            class_counts: (0..classes).map(row).collect(),
            confusion,
        })
    }

    pub fn samples(&self) -> usize {
        self.class_counts.iter().sum()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples={}", self.samples())?;
        writeln!(f, "accuracy={:.6}", self.accuracy)?;
        writeln!(f, "macro_precision={:.6}", self.macro_precision)?;
        writeln!(f, "macro_recall={:.6}", self.macro_recall)?;
        let counts: Vec<_> = self.class_counts.iter().map(|c| c.to_string()).collect();
        writeln!(f, "class_counts={}", counts.join(","))?;
        writeln!(f, "confusion=")?;
        for row in &self.confusion {
            let cells: Vec<_> = row.iter().map(|c| c.to_string()).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}

/// Inference-mode predictions over `samples`, reduced in index order.
pub fn evaluate(model: &Model<f32>, samples: &[Sample]) -> Result<EvalReport> {
    let predict = |s: &Sample| model.predict(&s.clip).map(|p| p.class);
    #[cfg(feature = "parallel")]
    let predicted: Vec<usize> = {
        use rayon::prelude::*;
        samples.par_iter().map(predict).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let predicted: Vec<usize> = samples.iter().map(predict).collect::<Result<_>>()?;
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    EvalReport::from_predictions(&truth, &predicted, model.config().classes)
}
