//! Mask agreement metrics.

use super::RewardError;
use crate::aperture::Mask;

/// Machine epsilon as used by the reference structure-measure code.
const EPS: f64 = f64::EPSILON;

fn check_dims(pred: &Mask, gt: &Mask) -> Result<(), RewardError> {
    if pred.dims() != gt.dims() {
        return Err(RewardError::DimensionMismatch { pred: pred.dims(), gt: gt.dims() });
    }
    Ok(())
}

/// Intersection over union. Two empty masks agree perfectly (1.0).
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64, RewardError> {
    check_dims(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.bits().iter().zip(gt.bits()) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Structure measure with equal object/region balance, treating `pred` as a
/// {0,1} saliency map.
pub fn s_measure(pred: &Mask, gt: &Mask) -> Result<f64, RewardError> {
    check_dims(pred, gt)?;
    let (w, h) = gt.dims();
    let n = (w as usize) * (h as usize);
    if n == 0 {
        return Err(RewardError::DimensionMismatch { pred: pred.dims(), gt: gt.dims() });
    }
    let p: Vec<f64> = pred.bits().iter().map(|&b| f64::from(u8::from(b))).collect();
    let g = gt.bits();
    let gt_mean = gt.count() as f64 / n as f64;
    if gt_mean == 0.0 {
        return Ok(1.0 - mean(&p));
    }
    if gt_mean == 1.0 {
        return Ok(mean(&p));
    }
    let q = 0.5 * s_object(&p, g, gt_mean) + 0.5 * s_region(&p, g, w as usize, h as usize);
    Ok(q.max(0.0))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; a single value has zero spread.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn object_score(values: &[f64]) -> f64 {
    let x = mean(values);
    2.0 * x / (x * x + 1.0 + std_dev(values) + EPS)
}

fn s_object(p: &[f64], g: &[bool], u: f64) -> f64 {
    let fg: Vec<f64> = p.iter().zip(g).filter(|(_, &g)| g).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = p.iter().zip(g).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p).collect();
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// Centroid of the ground truth in 1-based pixel units, rounded.
fn centroid(g: &[bool], w: usize, h: usize) -> (usize, usize) {
    let total = g.iter().filter(|&&b| b).count();
    if total == 0 {
        return ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize);
    }
    let (mut sx, mut sy) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if g[y * w + x] {
                sx += x + 1;
                sy += y + 1;
            }
        }
    }
    let cx = (sx as f64 / total as f64).round() as usize;
    let cy = (sy as f64 / total as f64).round() as usize;
    (cx, cy)
}

fn s_region(p: &[f64], g: &[bool], w: usize, h: usize) -> f64 {
    let (cx, cy) = centroid(g, w, h);
    let area = (w * h) as f64;
    let quadrants = [(0, cx, 0, cy), (cx, w, 0, cy), (0, cx, cy, h), (cx, w, cy, h)];
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let weights = [w1, w2, w3, 1.0 - w1 - w2 - w3];
    quadrants
        .iter()
        .zip(weights)
        .map(|(&(x0, x1, y0, y1), wt)| {
            let mut pq = Vec::with_capacity((x1 - x0) * (y1 - y0));
            let mut gq = Vec::with_capacity(pq.capacity());
            for y in y0..y1 {
                for x in x0..x1 {
                    pq.push(p[y * w + x]);
                    gq.push(f64::from(u8::from(g[y * w + x])));
                }
            }
            // an empty quadrant carries zero weight and contributes nothing
            if pq.is_empty() {
                0.0
            } else {
                wt * block_ssim(&pq, &gq)
            }
        })
        .sum()
}

fn block_ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let (x, y) = (mean(p), mean(g));
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in p.iter().zip(g) {
        sxx += (a - x) * (a - x);
        syy += (b - y) * (b - y);
        sxy += (a - x) * (b - y);
    }
    let denom = n - 1.0 + EPS;
    let (sxx, syy, sxy) = (sxx / denom, syy / denom, sxy / denom);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sxx + syy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}
