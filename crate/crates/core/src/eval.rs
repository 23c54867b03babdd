//! Evaluation metrics over predicted affordances: success rate, normalized
//! scanpath saliency, distance-to-mask, and rotation geodesic error.
//!
//! The metric names follow affordance-grounding conventions; the exact
//! rules used here are fixed choices of this codebase:
//! - SR: the prediction's nearest integer pixel lies inside the mask.
//! - NSS: predictions rendered as a sum of isotropic Gaussians, z-normalized
//!   over the image, averaged over mask pixels.
//! - DTM: Euclidean distance to the nearest mask pixel over the image
//!   diagonal, zero when inside.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::Mask;
use crate::geometry::{PixelPoint, Quaternion};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("ground-truth mask is empty")]
    EmptyMask,
    #[error("no predicted points supplied")]
    NoPredictions,
}

/// Per-sample metric row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sample_id: u64,
    pub sr: u8,
    pub nss: f64,
    pub dtm: f64,
    pub rot_err: f64,
}

/// Aggregate report: rows plus their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub rows: Vec<EvalRow>,
    pub mean_sr: f64,
    pub mean_nss: f64,
    pub mean_dtm: f64,
    pub mean_rot_err: f64,
    pub median_rot_err: f64,
}

impl EvalResult {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_sr = rows.iter().map(|r| r.sr as f64).sum::<f64>() / n;
        let mean_nss = rows.iter().map(|r| r.nss).sum::<f64>() / n;
        let mean_dtm = rows.iter().map(|r| r.dtm).sum::<f64>() / n;
        let mean_rot_err = rows.iter().map(|r| r.rot_err).sum::<f64>() / n;
        let mut errs: Vec<f64> = rows.iter().map(|r| r.rot_err).collect();
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median_rot_err = if errs.is_empty() {
            0.0
        } else if errs.len() % 2 == 1 {
            errs[errs.len() / 2]
        } else {
            0.5 * (errs[errs.len() / 2 - 1] + errs[errs.len() / 2])
        };
        Self { rows, mean_sr, mean_nss, mean_dtm, mean_rot_err, median_rot_err }
    }
}

/// 1 iff the prediction's nearest integer pixel is inside the mask.
pub fn success_rate(pred: &PixelPoint, gt_mask: &Mask) -> Result<u8, EvalError> {
    if gt_mask.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    Ok(match pred.nearest_pixel(gt_mask.width, gt_mask.height) {
        Some((u, v)) if gt_mask.get(u, v) => 1,
        _ => 0,
    })
}

/// Renders the predictions as unit-amplitude isotropic Gaussians, z-scores
/// the map over all pixels, and averages over mask pixels. A constant map
/// (zero variance) scores 0.
pub fn nss(pred_points: &[PixelPoint], gt_mask: &Mask, sigma_h: f64) -> Result<f64, EvalError> {
    if gt_mask.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    if pred_points.is_empty() {
        return Err(EvalError::NoPredictions);
    }
    let (w, h) = (gt_mask.width, gt_mask.height);
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma_h * sigma_h);
    let mut map = vec![0.0f64; w * h];
    for v in 0..h {
        for u in 0..w {
            let mut s = 0.0;
            for p in pred_points {
                let du = u as f64 - p.u;
                let dv = v as f64 - p.v;
                s += (-(du * du + dv * dv) * inv_two_sigma_sq).exp();
            }
            map[v * w + u] = s;
        }
    }
    let n = map.len() as f64;
    let mean = map.iter().sum::<f64>() / n;
    let var = map.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for v in 0..h {
        for u in 0..w {
            if gt_mask.get(u, v) {
                acc += (map[v * w + u] - mean) / sd;
                count += 1;
            }
        }
    }
    Ok(acc / count as f64)
}

/// Distance from the prediction to the nearest mask pixel, normalized by the
/// image diagonal; exactly zero when the rounded prediction is inside.
pub fn dtm(pred: &PixelPoint, gt_mask: &Mask) -> Result<f64, EvalError> {
    if gt_mask.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    let (w, h) = (gt_mask.width, gt_mask.height);
    if let Some((u, v)) = pred.nearest_pixel(w, h) {
        if gt_mask.get(u, v) {
            return Ok(0.0);
        }
    }
    let mut best = f64::INFINITY;
    for v in 0..h {
        for u in 0..w {
            if gt_mask.get(u, v) {
                let du = pred.u - u as f64;
                let dv = pred.v - v as f64;
                best = best.min((du * du + dv * dv).sqrt());
            }
        }
    }
    let diag = ((w * w + h * h) as f64).sqrt();
    Ok(best / diag)
}

/// Geodesic angle between two rotations: `2 acos(|<q1, q2>|)`, in [0, pi].
pub fn rotation_error(pred: &Quaternion, gt: &Quaternion) -> f64 {
    pred.geodesic(gt)
}
