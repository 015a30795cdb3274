use crate::error::{Error, Result};

/// `lr0 · ½ · (1 + cos(π · step / total_steps))`, no warmup, floor 0.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("cosine schedule needs at least one step".into()));
    }
    if step > total_steps {
        return Err(Error::Config(format!(
            "step {step} beyond schedule length {total_steps}"
        )));
    }
    let progress = step as f64 / total_steps as f64;
    Ok((lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint_are_exact() {
        assert_eq!(cosine_lr(0, 1000, 1e-4).unwrap(), 1e-4);
        assert_eq!(cosine_lr(500, 1000, 1e-4).unwrap(), 5e-5);
        assert_eq!(cosine_lr(1000, 1000, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn monotone_non_increasing() {
        for total in [1, 7, 300, 1001] {
            let lrs: Vec<f64> = (0..=total).map(|s| cosine_lr(s, total, 1e-4).unwrap()).collect();
            assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn invalid_arguments() {
        assert!(matches!(cosine_lr(0, 0, 1e-4), Err(Error::Config(_))));
        assert!(cosine_lr(11, 10, 1e-4).is_err());
    }
}
