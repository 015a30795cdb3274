use std::fmt;

use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::numerics::gradcheck::{max_relative_error, numeric_gradient, FD_STEP, FD_TOLERANCE};
use crate::numerics::{Rng, Tensor};

const SMOOTHING: f64 = 0.1;

/// Worst relative error over one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub numel: usize,
    pub max_rel_error: f64,
}

impl GradcheckEntry {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed(self.tolerance))
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradcheckEntry> {
        self.entries.iter().filter(|e| !e.passed(self.tolerance))
    }

    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let status = if e.passed(self.tolerance) { "ok  " } else { "FAIL" };
            writeln!(f, "{status} {:<40} {:.3e}", e.name, e.max_rel_error)?;
        }
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} {} tensors, max relative error {:.3e} (tolerance {:.0e})",
            self.entries.len(),
            self.max_error(),
            self.tolerance
        )
    }
}

/// Builds the model in double precision and checks every parameter.
pub fn gradcheck(config: &ModelConfig, seed: u64) -> Result<GradcheckReport> {
    let model = Model::<f64>::new(config.clone(), seed)?;
    gradcheck_model(&model, seed, |_| {})
}

/// Compares the analytic gradient of the smoothed loss on one random clip
/// with central differences, for every element of every parameter.
///
/// `tamper` may modify the analytic gradients before comparison.
pub fn gradcheck_model(
    model: &Model<f64>,
    seed: u64,
    tamper: impl FnOnce(&mut [Tensor<f64>]),
) -> Result<GradcheckReport> {
    let cfg = model.config();
    let clip = Rng::new(seed)
        .derive(0x4743)
        .uniform_tensor::<f64>(&cfg.geometry.shape())
        .map(|x| 2.0 * x - 1.0);
    let target = (seed % cfg.classes as u64) as usize;
    let rng = Rng::new(seed);

    let mut analytic = model.loss_and_grad(&clip, target, SMOOTHING, &rng, false)?.grads;
    tamper(&mut analytic);

    let params: Vec<Tensor<f64>> = model.params().tensors().cloned().collect();
    let objective = |xs: &[Tensor<f64>]| {
        let m = model
            .with_params(model.params().with_tensors(xs.to_vec()))
            .expect("perturbation keeps the layout");
        m.loss_and_grad(&clip, target, SMOOTHING, &rng, false)
            .expect("forward succeeded unperturbed")
            .loss
    };
    let numeric = numeric_gradient(&params, objective, FD_STEP);

    let entries = model
        .params()
        .iter()
        .zip(analytic.iter().zip(&numeric))
        .map(|((name, t), (a, n))| GradcheckEntry {
            name: name.to_string(),
            numel: t.len(),
            max_rel_error: max_relative_error(a, n),
        })
        .collect();
    Ok(GradcheckReport {
        entries,
        tolerance: FD_TOLERANCE,
    })
}
