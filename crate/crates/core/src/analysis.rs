//! Image fidelity metrics and floor splitting of camera positions.
//!
//! FID and LPIPS need pretrained feature networks and are not provided here;
//! compute them with an external toolkit on the exported PNGs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported for identical inputs instead of an infinite ratio.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio in decibels, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor, b: &Tensor, max_value: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if a.is_empty() {
        return Err(Error::invalid("psnr of empty images"));
    }
    if !(max_value.is_finite() && max_value > 0.0) {
        return Err(Error::invalid("max_value must be positive"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_value * max_value / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

/// Mean windowed SSIM with the default Gaussian window. Accepts `H×W` or
/// `H×W×C` tensors; multi-channel inputs average the per-channel scores.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}

pub fn ssim_with(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (h, w, c) = match *a.shape() {
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        ref s => {
            return Err(Error::mismatch(format!(
                "ssim expects HxW or HxWxC, got {s:?}"
            )))
        }
    };
    if params.window == 0 || h < params.window || w < params.window {
        return Err(Error::invalid(format!(
            "image {w}x{h} is smaller than the {0}x{0} window",
            params.window
        )));
    }
    let kernel = gaussian_kernel(params.window, params.sigma);
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);

    let mut total = 0.0;
    for ch in 0..c {
        let x: Vec<f64> = a.data().iter().skip(ch).step_by(c).copied().collect();
        let y: Vec<f64> = b.data().iter().skip(ch).step_by(c).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

        let mu_x = filter_valid(&x, w, h, &kernel);
        let mu_y = filter_valid(&y, w, h, &kernel);
        let e_xx = filter_valid(&xx, w, h, &kernel);
        let e_yy = filter_valid(&yy, w, h, &kernel);
        let e_xy = filter_valid(&xy, w, h, &kernel);

        let mut sum = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
        }
        total += sum / mu_x.len() as f64;
    }
    Ok(total / c as f64)
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let norm: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / norm).collect()
}

/// Separable 2D filtering over positions where the window fits entirely.
fn filter_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for r in 0..h {
        let line = &plane[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = kernel.iter().zip(&line[c..c + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = kernel
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * rows[(r + i) * ow + c])
                .sum();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    /// Neighborhood radius in meters.
    pub eps: f64,
    /// Neighbors (including the point itself) required for a core point.
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            eps: 0.8,
            min_pts: 3,
        }
    }
}

pub const NOISE: i64 = -1;

/// DBSCAN over camera heights. Returns one label per position, `-1` for
/// noise. Clusters are numbered in the order their seeding core point
/// appears in the input.
pub fn cluster_floors(positions: &[CameraPosition], params: &DbscanParams) -> Result<Vec<i64>> {
    if positions.is_empty() {
        return Err(Error::invalid("no camera positions to cluster"));
    }
    if !(params.eps.is_finite() && params.eps > 0.0) || params.min_pts == 0 {
        return Err(Error::invalid("DBSCAN needs eps > 0 and min_pts >= 1"));
    }
    if let Some(i) = positions.iter().position(|p| !p.z.is_finite()) {
        return Err(Error::invalid(format!("camera {i} has a non-finite z")));
    }

    // In one dimension an eps-ball is a contiguous run of the sorted heights.
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| positions[a].z.total_cmp(&positions[b].z));
    let sorted_z: Vec<f64> = order.iter().map(|&i| positions[i].z).collect();
    let neighbors = |i: usize| -> &[usize] {
        let z = positions[i].z;
        let lo = sorted_z.partition_point(|&v| v < z - params.eps);
        let hi = sorted_z.partition_point(|&v| v <= z + params.eps);
        &order[lo..hi]
    };

    const UNVISITED: i64 = i64::MIN;
    let mut labels = vec![UNVISITED; positions.len()];
    let mut next = 0i64;
    let mut queue = Vec::new();
    for seed in 0..positions.len() {
        if labels[seed] != UNVISITED {
            continue;
        }
        let hood = neighbors(seed);
        if hood.len() < params.min_pts {
            labels[seed] = NOISE;
            continue;
        }
        labels[seed] = next;
        queue.clear();
        queue.extend_from_slice(hood);
        while let Some(j) = queue.pop() {
            if labels[j] == NOISE {
                labels[j] = next;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = next;
            let hood = neighbors(j);
            if hood.len() >= params.min_pts {
                queue.extend_from_slice(hood);
            }
        }
        next += 1;
    }
    Ok(labels)
}

/// Cluster count, noise count and labels, as printed by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorSummary {
    pub clusters: usize,
    pub noise: usize,
    pub labels: Vec<i64>,
}

impl FloorSummary {
    pub fn from_labels(labels: Vec<i64>) -> Self {
        let clusters = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
        let noise = labels.iter().filter(|&&l| l == NOISE).count();
        Self {
            clusters,
            noise,
            labels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn plane(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Tensor {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Tensor::new(&[h, w], data).unwrap()
    }

    fn cams(zs: &[f64]) -> Vec<CameraPosition> {
        zs.iter()
            .enumerate()
            .map(|(i, &z)| CameraPosition {
                x: i as f64,
                y: 0.0,
                z,
            })
            .collect()
    }

    #[test]
    fn psnr_examples() {
        let a = plane(8, 8, |r, c| ((r * 8 + c) * 3) as f64);
        let b = a.map(|v| v + 1.0);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), 100.0);
        let expected = 10.0 * (255.0f64 * 255.0).log10();
        assert!((psnr(&a, &b, 255.0).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 48.1308).abs() < 1e-4);
        assert_eq!(psnr(&a, &b, 255.0).unwrap(), psnr(&b, &a, 255.0).unwrap());
        assert!(psnr(&a, &plane(4, 16, |_, _| 0.0), 255.0).is_err());
    }

    #[test]
    fn psnr_falls_with_noise() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let base = plane(32, 32, |r, c| (r + c) as f64 / 62.0);
        let noise: Vec<f64> = (0..1024).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scores: Vec<f64> = [0.01, 0.05, 0.2]
            .iter()
            .map(|amp| {
                let noisy = Tensor::new(
                    &[32, 32],
                    base.data().iter().zip(&noise).map(|(v, n)| v + amp * n).collect(),
                )
                .unwrap();
                psnr(&base, &noisy, 1.0).unwrap()
            })
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2]);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let a = plane(20, 24, |_, _| rng.gen_range(0.0..1.0));
        let b = a.map(|v| (v * 0.8 + 0.1).sin().abs());
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
        let s = ssim(&a, &b).unwrap();
        assert!((-1.0..1.0).contains(&s));
    }

    #[test]
    fn ssim_of_constants_matches_closed_form() {
        let (p, q) = (0.2, 0.7);
        let a = plane(12, 12, |_, _| p);
        let b = plane(12, 12, |_, _| q);
        let c1 = 0.01f64 * 0.01;
        let expected = (2.0 * p * q + c1) / (p * p + q * q + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = plane(10, 30, |_, _| 0.0);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn two_floors() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(21);
        let mut zs: Vec<f64> = (0..20).map(|_| rng.gen_range(-0.1..0.1)).collect();
        zs.extend((0..20).map(|_| 3.0 + rng.gen_range(-0.1..0.1)));
        let labels = cluster_floors(&cams(&zs), &DbscanParams::default()).unwrap();
        let summary = FloorSummary::from_labels(labels.clone());
        assert_eq!((summary.clusters, summary.noise), (2, 0));
        assert!(labels[..20].iter().all(|&l| l == 0));
        assert!(labels[20..].iter().all(|&l| l == 1));
    }

    #[test]
    fn identical_and_isolated_points() {
        let labels = cluster_floors(&cams(&[1.5; 6]), &DbscanParams::default()).unwrap();
        assert_eq!(labels, vec![0; 6]);
        let labels = cluster_floors(&cams(&[0.0, 10.0]), &DbscanParams::default()).unwrap();
        assert_eq!(labels, vec![NOISE, NOISE]);
        assert!(cluster_floors(&[], &DbscanParams::default()).is_err());
    }

    #[test]
    fn border_points_join_cluster() {
        // 0.0 and 0.1 are core with eps 0.5, min_pts 3; 0.55 is a border point
        // reached only from 0.1.
        let labels = cluster_floors(
            &cams(&[0.55, 0.0, 0.1, 0.05]),
            &DbscanParams { eps: 0.5, min_pts: 3 },
        )
        .unwrap();
        assert_eq!(labels, vec![0, 0, 0, 0]);
    }

    /// Brute-force DBSCAN with explicit pairwise distances; used to check
    /// the sorted-neighborhood implementation.
    fn brute_force(zs: &[f64], p: &DbscanParams) -> Vec<i64> {
        let n = zs.len();
        let nb = |i: usize| (0..n).filter(|&j| (zs[i] - zs[j]).abs() <= p.eps).collect::<Vec<_>>();
        let core: Vec<bool> = (0..n).map(|i| nb(i).len() >= p.min_pts).collect();
        let mut labels = vec![i64::MIN; n];
        let mut next = 0;
        for s in 0..n {
            if labels[s] != i64::MIN || !core[s] {
                continue;
            }
            let mut stack = vec![s];
            while let Some(i) = stack.pop() {
                if labels[i] != i64::MIN {
                    continue;
                }
                labels[i] = next;
                if core[i] {
                    stack.extend(nb(i).into_iter().filter(|&j| labels[j] == i64::MIN));
                }
            }
            next += 1;
        }
        labels.into_iter().map(|l| if l == i64::MIN { NOISE } else { l }).collect()
    }

    #[test]
    fn agrees_with_brute_force_partition() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(33);
        for _ in 0..50 {
            let n = rng.gen_range(1..40);
            let zs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..8.0)).collect();
            let p = DbscanParams {
                eps: rng.gen_range(0.1..1.0),
                min_pts: rng.gen_range(1..5),
            };
            let ours = cluster_floors(&cams(&zs), &p).unwrap();
            let theirs = brute_force(&zs, &p);
            // Core points and noise agree exactly; cluster count agrees.
            for i in 0..n {
                assert_eq!(ours[i] == NOISE, theirs[i] == NOISE);
            }
            assert_eq!(
                FloorSummary::from_labels(ours).clusters,
                FloorSummary::from_labels(theirs).clusters
            );
        }
    }

    #[test]
    fn translation_and_duplication_invariance() {
        let zs = [0.0, 0.2, 0.3, 2.9, 3.0, 3.1, 6.5];
        let p = DbscanParams::default();
        let base = cluster_floors(&cams(&zs), &p).unwrap();
        let shifted: Vec<f64> = zs.iter().map(|z| z + 12.25).collect();
        assert_eq!(cluster_floors(&cams(&shifted), &p).unwrap(), base);
        let doubled: Vec<f64> = zs.iter().chain(zs.iter()).copied().collect();
        let count = |l: Vec<i64>| FloorSummary::from_labels(l).clusters;
        assert_eq!(count(cluster_floors(&cams(&doubled), &p).unwrap()), count(base));
    }
}
