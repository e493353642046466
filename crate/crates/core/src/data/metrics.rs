//! Counting and density-map quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::tensor::Tensor;

/// PSNR reported for a perfect reconstruction.
pub const PSNR_CAP_DB: f64 = 100.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean absolute count error.
    pub mae: f64,
    /// Root mean squared count error.
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn check_pair(pred: &[f64], gt: &[f64]) -> Result<(), DataError> {
    if pred.is_empty() {
        return Err(DataError::EmptyMetrics);
    }
    if pred.len() != gt.len() {
        return Err(DataError::MetricMismatch(format!(
            "{} predictions for {} ground truths",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Mean absolute error of per-image counts.
pub fn count_mae(pred: &[f64], gt: &[f64]) -> Result<f64, DataError> {
    check_pair(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// Root mean squared error of per-image counts.
pub fn count_rmse(pred: &[f64], gt: &[f64]) -> Result<f64, DataError> {
    check_pair(pred, gt)?;
    let ms = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / pred.len() as f64;
    Ok(ms.sqrt())
}

fn map_pair<'a>(pred: &'a Tensor<f32>, gt: &'a Tensor<f32>) -> Result<(Vec<f64>, Vec<f64>), DataError> {
    if pred.shape() != gt.shape() {
        return Err(DataError::MetricMismatch(format!(
            "map shapes {:?} and {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let f = |t: &Tensor<f32>| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
    Ok((f(pred), f(gt)))
}

/// Peak signal-to-noise ratio with the ground-truth maximum as peak.
/// A perfect match returns [`PSNR_CAP_DB`]; an all-zero ground truth with a
/// nonzero error returns 0.
pub fn psnr(pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64, DataError> {
    let (p, g) = map_pair(pred, gt)?;
    let mse = p.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    let peak = g.iter().copied().fold(0.0f64, f64::max);
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    if peak <= 0.0 {
        return Ok(0.0);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window(size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean structural similarity of one map pair.
///
/// Both maps are scaled by the ground truth's value range so the dynamic
/// range is 1, then compared with an 11x11 Gaussian window (sigma 1.5)
/// over every fully contained window position. Maps smaller than the
/// window use a window as large as the smaller side.
pub fn ssim(pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64, DataError> {
    let (p, g) = map_pair(pred, gt)?;
    let s = gt.shape();
    let (lo, hi) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let norm = |v: &[f64]| v.iter().map(|x| (x - lo) / range).collect::<Vec<_>>();
    let (p, g) = (norm(&p), norm(&g));
    let win = SSIM_WINDOW.min(s.h).min(s.w);
    let kernel = gaussian_window(win);
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.h * s.w;
            for i in 0..=s.h - win {
                for j in 0..=s.w - win {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for (a, ka) in kernel.iter().enumerate() {
                        for (b, kb) in kernel.iter().enumerate() {
                            let k = ka * kb;
                            let idx = base + (i + a) * s.w + j + b;
                            let (x, y) = (p[idx], g[idx]);
                            mx += k * x;
                            my += k * y;
                            xx += k * x * x;
                            yy += k * y * y;
                            xy += k * x * y;
                        }
                    }
                    let vx = xx - mx * mx;
                    let vy = yy - my * my;
                    let cov = xy - mx * my;
                    total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                        / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
        }
    }
    Ok(total / count as f64)
}

/// Counting and map-quality metrics over a set of predictions.
pub fn evaluate(preds: &[Tensor<f32>], gts: &[Tensor<f32>]) -> Result<Metrics, DataError> {
    if preds.is_empty() {
        return Err(DataError::EmptyMetrics);
    }
    if preds.len() != gts.len() {
        return Err(DataError::MetricMismatch(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let sum = |t: &Tensor<f32>| t.data().iter().map(|&v| v as f64).sum::<f64>();
    let pc: Vec<f64> = preds.iter().map(sum).collect();
    let gc: Vec<f64> = gts.iter().map(sum).collect();
    let mut psnr_total = 0.0;
    let mut ssim_total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        psnr_total += psnr(p, g)?;
        ssim_total += ssim(p, g)?;
    }
    let n = preds.len() as f64;
    Ok(Metrics {
        mae: count_mae(&pc, &gc)?,
        mse: count_rmse(&pc, &gc)?,
        psnr: psnr_total / n,
        ssim: ssim_total / n,
    })
}
