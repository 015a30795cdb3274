use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Rng, Scalar, Tensor};

/// Axis mirrored by the flip augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FlipAxis {
    /// Upside down: rows of every frame reversed.
    #[default]
    Height,
    /// Left-right mirror.
    Width,
}

impl fmt::Display for FlipAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlipAxis::Height => "height",
            FlipAxis::Width => "width",
        })
    }
}

impl FromStr for FlipAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "height" => Ok(FlipAxis::Height),
            "width" => Ok(FlipAxis::Width),
            other => Err(Error::Config(format!(
                "flip axis must be `height` or `width`, got `{other}`"
            ))),
        }
    }
}

/// Mirrors every frame of a `T×H×W×D` clip along `axis`.
pub fn flip<S: Scalar>(clip: &Tensor<S>, axis: FlipAxis) -> Tensor<S> {
    let &[t, h, w, d] = clip.shape() else {
        panic!("flip expects a T×H×W×D clip, got {:?}", clip.shape());
    };
    let src = clip.data();
    let mut out = Vec::with_capacity(src.len());
    for f in 0..t {
        for y in 0..h {
            let sy = if axis == FlipAxis::Height { h - 1 - y } else { y };
            for x in 0..w {
                let sx = if axis == FlipAxis::Width { w - 1 - x } else { x };
                let start = ((f * h + sy) * w + sx) * d;
                out.extend_from_slice(&src[start..start + d]);
            }
        }
    }
    Tensor::from_vec(clip.shape(), out).unwrap()
}

/// Random flip and additive Gaussian noise on a normalised clip.
///
/// Always consumes two uniforms for the decisions, then one Gaussian per
/// element when noise is applied. The result is clamped to `[-1, 1]`.
pub fn augment<S: Scalar>(
    clip: &Tensor<S>,
    rng: &mut Rng,
    flip_prob: f64,
    flip_axis: FlipAxis,
    noise_prob: f64,
    noise_sigma: f64,
) -> Tensor<S> {
    let do_flip = rng.bernoulli(flip_prob);
    let do_noise = rng.bernoulli(noise_prob);
    if !do_flip && !do_noise {
        return clip.clone();
    }
    let mut out = if do_flip {
        flip(clip, flip_axis)
    } else {
        clip.clone()
    };
    if do_noise {
        let (lo, hi) = (-S::one(), S::one());
        for v in out.data_mut() {
            *v = (*v + S::lit(noise_sigma * rng.gaussian())).max(lo).min(hi);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(seed: u64) -> Tensor<f32> {
        Rng::new(seed)
            .uniform_tensor::<f32>(&[3, 4, 5, 2])
            .map(|x| 2.0 * x - 1.0)
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let c = clip(1);
        let mut rng = Rng::new(0);
        for _ in 0..10 {
            assert_eq!(augment(&c, &mut rng, 0.0, FlipAxis::Height, 0.0, 0.01), c);
        }
    }

    #[test]
    fn flip_is_an_involution_and_keeps_shape() {
        let c = clip(2);
        for axis in [FlipAxis::Height, FlipAxis::Width] {
            let f = flip(&c, axis);
            assert_eq!(f.shape(), c.shape());
            assert_ne!(f, c);
            assert_eq!(flip(&f, axis), c);
        }
        // Height flip maps row 0 to row H−1 within each frame.
        let f = flip(&c, FlipAxis::Height);
        assert_eq!(f.get(&[1, 0, 2, 1]), c.get(&[1, 3, 2, 1]));
    }

    #[test]
    fn noise_has_half_normal_mean_abs() {
        let zeros = Tensor::<f64>::zeros(&[10, 10, 10, 100]);
        let sigma = 0.01;
        let out = augment(&zeros, &mut Rng::new(5), 0.0, FlipAxis::Height, 1.0, sigma);
        let mean_abs = out.data().iter().map(|v| v.abs()).sum::<f64>() / out.len() as f64;
        let oracle = sigma * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean_abs / oracle - 1.0).abs() < 0.05, "{mean_abs} vs {oracle}");
    }

    #[test]
    fn output_is_clamped_and_deterministic() {
        let ones = Tensor::<f32>::ones(&[2, 2, 2, 3]);
        let a = augment(&ones, &mut Rng::new(8), 0.5, FlipAxis::Width, 1.0, 0.5);
        let b = augment(&ones, &mut Rng::new(8), 0.5, FlipAxis::Width, 1.0, 0.5);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn axis_parses() {
        assert_eq!("width".parse::<FlipAxis>().unwrap(), FlipAxis::Width);
        assert!("depth".parse::<FlipAxis>().is_err());
    }
}
