//! Training objective terms evaluated on supplied tensors.
//!
//! Squared-norm terms are reduced with the mean over elements. The
//! histogram term is piecewise constant in pixel values and is evaluated,
//! not differentiated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BINS: usize = 256;

fn mean_squared_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if a.is_empty() {
        return Err(Error::invalid("cannot reduce an empty tensor"));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Denoising objective for one draw: mean of `(ε - ε_θ)²` over elements.
pub fn diff_mse(noise: &Tensor, predicted_noise: &Tensor) -> Result<f64> {
    mean_squared_error(noise, predicted_noise)
}

/// Gradient of [`diff_mse`] with respect to the predicted noise.
pub fn diff_mse_grad(noise: &Tensor, predicted_noise: &Tensor) -> Result<Tensor> {
    noise.ensure_same_shape(predicted_noise)?;
    let n = noise.len() as f64;
    let data = predicted_noise
        .data()
        .iter()
        .zip(noise.data())
        .map(|(p, e)| 2.0 * (p - e) / n)
        .collect();
    Tensor::new(predicted_noise.shape(), data)
}

/// Depth alignment loss between generated depth `depth` and ground truth
/// `target`, with its gradient with respect to `depth`.
pub fn alignment_loss(depth: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let loss = mean_squared_error(depth, target)?;
    let n = depth.len() as f64;
    let grad = depth
        .data()
        .iter()
        .zip(target.data())
        .map(|(d, t)| 2.0 * (d - t) / n)
        .collect();
    Ok((loss, Tensor::new(depth.shape(), grad)?))
}

/// Normalized per-channel intensity histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorHistogram {
    pub bins: usize,
    /// One probability vector per channel.
    pub channels: Vec<Vec<f64>>,
}

/// Bins each channel of an `H×W×C` image with values in `[0, 1]`. Bin `k`
/// holds `[k/bins, (k+1)/bins)`; 1.0 lands in the last bin.
pub fn histogram(image: &Tensor, bins: usize) -> Result<ColorHistogram> {
    if bins == 0 {
        return Err(Error::invalid("bins must be >= 1"));
    }
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::mismatch(format!(
            "histogram expects an HxWxC image, got shape {shape:?}"
        )));
    }
    let c = shape[2];
    let pixels = shape[0] * shape[1];
    if pixels == 0 || c == 0 {
        return Err(Error::invalid("histogram of an empty image"));
    }
    let mut counts = vec![vec![0usize; bins]; c];
    for (i, &v) in image.data().iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::ValueOutOfRange { index: i, value: v });
        }
        let k = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[i % c][k] += 1;
    }
    let channels = counts
        .into_iter()
        .map(|ch| ch.into_iter().map(|n| n as f64 / pixels as f64).collect())
        .collect();
    Ok(ColorHistogram { bins, channels })
}

/// Sum over channels of the L1 distance between normalized histograms.
pub fn color_loss(image: &Tensor, target: &Tensor, bins: usize) -> Result<f64> {
    let a = histogram(image, bins)?;
    let b = histogram(target, bins)?;
    if a.channels.len() != b.channels.len() {
        return Err(Error::mismatch(format!(
            "channel counts differ: {} vs {}",
            a.channels.len(),
            b.channels.len()
        )));
    }
    Ok(a.channels
        .iter()
        .zip(&b.channels)
        .map(|(ha, hb)| ha.iter().zip(hb).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum())
}

/// Relative weights of the three terms in [`weighted_total_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub diff: f64,
    pub alignment: f64,
    pub color: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            diff: 1.0,
            alignment: 1.0,
            color: 1.0,
        }
    }
}

/// Unweighted sum of the three terms.
pub fn total_loss(diff: f64, alignment: f64, color: f64) -> Result<f64> {
    weighted_total_loss(diff, alignment, color, &LossWeights::default())
}

pub fn weighted_total_loss(diff: f64, alignment: f64, color: f64, w: &LossWeights) -> Result<f64> {
    if ![diff, alignment, color, w.diff, w.alignment, w.color]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::invalid("loss terms and weights must be finite"));
    }
    Ok(w.diff * diff + w.alignment * alignment + w.color * color)
}

/// All three terms and their sum, as reported by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub diff: Option<f64>,
    pub alignment: f64,
    pub color: f64,
    pub total: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        t(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    #[test]
    fn diff_mse_examples() {
        let a = Tensor::filled(&[2, 3], 1.0).unwrap();
        let z = Tensor::filled(&[2, 3], 0.0).unwrap();
        assert_eq!(diff_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(diff_mse(&a, &z).unwrap(), 1.0);

        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let x = random(&[2, 3], &mut rng);
        let y = random(&[2, 3], &mut rng);
        let mut brute = 0.0;
        for i in 0..6 {
            let d = x.data()[i] - y.data()[i];
            brute += d * d;
        }
        assert!((diff_mse(&x, &y).unwrap() - brute / 6.0).abs() < 1e-12);
        assert!(diff_mse(&x, &Tensor::filled(&[3, 2], 0.0).unwrap()).is_err());
    }

    #[test]
    fn diff_mse_grad_matches_finite_differences() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let e = random(&[3, 4], &mut rng);
        let p = random(&[3, 4], &mut rng);
        let g = diff_mse_grad(&e, &p).unwrap();
        let h = 1e-4;
        for i in 0..12 {
            let bump = |s: f64| {
                let mut d = p.data().to_vec();
                d[i] += s;
                diff_mse(&e, &t(&[3, 4], d)).unwrap()
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() <= 1e-8 + 1e-5 * fd.abs());
        }
    }

    #[test]
    fn alignment_examples() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let d = random(&[4, 4], &mut rng);
        let (loss, grad) = alignment_loss(&d, &d).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));

        let target = random(&[4, 4], &mut rng);
        let (base, _) = alignment_loss(&d, &target).unwrap();
        let s = 3.0;
        let (scaled, _) = alignment_loss(&d.map(|v| v * s), &target.map(|v| v * s)).unwrap();
        assert!((scaled - s * s * base).abs() < 1e-12);
    }

    #[test]
    fn histogram_examples() {
        let zero = Tensor::filled(&[2, 2, 3], 0.0).unwrap();
        let h = histogram(&zero, 256).unwrap();
        for ch in &h.channels {
            assert_eq!(ch[0], 1.0);
            assert!(ch[1..].iter().all(|&v| v == 0.0));
        }

        // One pixel per 8-bit level.
        let data: Vec<f64> = (0..256)
            .flat_map(|k| {
                let v = k as f64 / 255.0;
                [v, v, v]
            })
            .collect();
        let h = histogram(&t(&[16, 16, 3], data), 256).unwrap();
        for ch in &h.channels {
            assert!(ch.iter().all(|&v| (v - 1.0 / 256.0).abs() < 1e-15));
        }

        let one = Tensor::filled(&[1, 1, 3], 1.0).unwrap();
        assert_eq!(histogram(&one, 4).unwrap().channels[0], vec![0.0, 0.0, 0.0, 1.0]);
        assert!(histogram(&Tensor::filled(&[1, 1, 3], 1.5).unwrap(), 4).is_err());
        assert!(histogram(&Tensor::filled(&[3, 3], 0.5).unwrap(), 4).is_err());
    }

    #[test]
    fn color_loss_examples() {
        let a = Tensor::filled(&[4, 4, 3], 0.1).unwrap();
        let b = Tensor::filled(&[4, 4, 3], 0.9).unwrap();
        assert_eq!(color_loss(&a, &a, 256).unwrap(), 0.0);
        assert_eq!(color_loss(&a, &b, 256).unwrap(), 6.0);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0).unwrap(), 6.0);
        assert!(total_loss(f64::NAN, 0.0, 0.0).is_err());
        assert!(total_loss(0.0, f64::INFINITY, 0.0).is_err());
        let w = LossWeights {
            diff: 2.0,
            alignment: 0.5,
            color: 0.0,
        };
        assert_eq!(weighted_total_loss(1.0, 2.0, 3.0, &w).unwrap(), 3.0);
    }

    fn image_strategy() -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(0.0..=1.0f64, 4 * 5 * 3)
            .prop_map(|d| Tensor::new(&[4, 5, 3], d).unwrap())
    }

    proptest! {
        #[test]
        fn color_loss_properties(a in image_strategy(), b in image_strategy(), seed in any::<u64>()) {
            let ab = color_loss(&a, &b, 16).unwrap();
            let ba = color_loss(&b, &a, 16).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=6.0 + 1e-12).contains(&ab));
            prop_assert_eq!(color_loss(&a, &a, 16).unwrap(), 0.0);

            // Shuffling whole pixels keeps the histogram.
            let mut order: Vec<usize> = (0..20).collect();
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let shuffled: Vec<f64> = order
                .iter()
                .flat_map(|&p| a.data()[p * 3..p * 3 + 3].to_vec())
                .collect();
            let shuffled = Tensor::new(&[4, 5, 3], shuffled).unwrap();
            prop_assert_eq!(histogram(&shuffled, 16).unwrap(), histogram(&a, 16).unwrap());
            prop_assert!((color_loss(&shuffled, &b, 16).unwrap() - ab).abs() < 1e-12);
        }

        #[test]
        fn histogram_sums_to_one(a in image_strategy(), bins in 1usize..300) {
            for ch in histogram(&a, bins).unwrap().channels {
                prop_assert!(ch.iter().all(|&v| v >= 0.0));
                prop_assert!((ch.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
