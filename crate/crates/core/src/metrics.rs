//! Image-quality and overlap metrics on volumes normalized to `[0, 1]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_kernel;
use crate::volume::Volume;

pub fn metric_l1(a: &Volume, b: &Volume) -> Result<f64> {
    a.grid().check_same(b.grid(), "L1")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(sum / a.data().len() as f64)
}

pub fn metric_mse(a: &Volume, b: &Volume) -> Result<f64> {
    a.grid().check_same(b.grid(), "MSE")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// PSNR in dB; identical volumes have no finite value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn value(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

/// `10 · log10(max² / mse)`.
pub fn psnr_from_mse(mse: f64, max: f64) -> Psnr {
    if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (max * max / mse).log10())
    }
}

pub fn metric_psnr(a: &Volume, b: &Volume) -> Result<Psnr> {
    Ok(psnr_from_mse(metric_mse(a, b)?, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

/// Correlates one axis with `kernel`, keeping only fully covered positions.
fn valid_filter_axis(src: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let w = kernel.len();
    let mut out_dims = dims;
    out_dims[axis] = dims[axis] + 1 - w;
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for k in 0..out_dims[2] {
        for j in 0..out_dims[1] {
            for i in 0..out_dims[0] {
                let base = i + dims[0] * (j + dims[1] * k);
                let acc: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(o, &c)| c * src[base + o * stride])
                    .sum();
                out.push(acc);
            }
        }
    }
    (out, out_dims)
}

fn gaussian_mean(src: Vec<f64>, dims: [usize; 3], kernel: &[f64]) -> Vec<f64> {
    let (x, d) = valid_filter_axis(&src, dims, 0, kernel);
    let (y, d) = valid_filter_axis(&x, d, 1, kernel);
    valid_filter_axis(&y, d, 2, kernel).0
}

/// Mean SSIM over every position where the Gaussian window fits inside the volume.
pub fn metric_ssim_with(a: &Volume, b: &Volume, cfg: &SsimConfig) -> Result<f64> {
    a.grid().check_same(b.grid(), "SSIM")?;
    let dims = a.dims();
    if cfg.window == 0 || cfg.window.is_multiple_of(2) {
        return Err(Error::InvalidValue(format!(
            "SSIM window must be odd, got {}",
            cfg.window
        )));
    }
    if dims.iter().any(|&d| d < cfg.window) {
        return Err(Error::InvalidValue(format!(
            "volume {dims:?} smaller than the {}-voxel SSIM window",
            cfg.window
        )));
    }
    let kernel = gaussian_kernel(cfg.sigma, cfg.window / 2);
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let xx = x.iter().map(|v| v * v).collect();
    let yy = y.iter().map(|v| v * v).collect();
    let xy = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mu_x = gaussian_mean(x, dims, &kernel);
    let mu_y = gaussian_mean(y, dims, &kernel);
    let e_xx = gaussian_mean(xx, dims, &kernel);
    let e_yy = gaussian_mean(yy, dims, &kernel);
    let e_xy = gaussian_mean(xy, dims, &kernel);
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    let n = mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = e_xx[i] - mx * mx;
        let vy = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / n as f64)
}

pub fn metric_ssim(a: &Volume, b: &Volume) -> Result<f64> {
    metric_ssim_with(a, b, &SsimConfig::default())
}

/// Dice overlap of `a >= threshold` and `b >= threshold`; two empty masks score 1.
pub fn metric_dice(a: &Volume, b: &Volume, threshold: f32) -> Result<f64> {
    a.grid().check_same(b.grid(), "Dice")?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (ma, mb) = (x >= threshold, y >= threshold);
        inter += (ma && mb) as usize;
        na += ma as usize;
        nb += mb as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn pattern(n: usize, phase: usize) -> Volume {
        Volume::from_fn(Grid::cubic(n), |i, j, k| {
            ((i * 7 + j * 3 + k * 5 + phase) % 13) as f32 / 12.0
        })
        .unwrap()
    }

    #[test]
    fn identical_volumes() {
        let v = pattern(12, 0);
        assert_eq!(metric_l1(&v, &v).unwrap(), 0.0);
        assert_eq!(metric_psnr(&v, &v).unwrap(), Psnr::Infinite);
        assert!((metric_ssim(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(metric_dice(&v, &v, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn psnr_closed_form() {
        assert_eq!(psnr_from_mse(0.01, 1.0), Psnr::Finite(20.0));
        let a = psnr_from_mse(0.001, 1.0).value();
        let b = psnr_from_mse(0.01, 1.0).value();
        assert!(a > b);
        assert_eq!(Psnr::Infinite.to_string(), "inf");
    }

    #[test]
    fn dice_disjoint_and_partial() {
        let g = Grid::new([4, 1, 1], [1.0; 3]).unwrap();
        let a = Volume::new(g.clone(), vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = Volume::new(g.clone(), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let c = Volume::new(g, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(metric_dice(&a, &b, 0.5).unwrap(), 0.0);
        assert!((metric_dice(&a, &c, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ssim_needs_room_for_window() {
        let v = pattern(8, 0);
        assert!(metric_ssim(&v, &v).is_err());
    }

    #[test]
    fn ssim_drops_with_distortion() {
        let a = pattern(14, 0);
        let b = pattern(14, 4);
        let s = metric_ssim(&a, &b).unwrap();
        assert!(s < 0.9 && s > -1.0);
    }
}
