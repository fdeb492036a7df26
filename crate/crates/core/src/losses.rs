//! Volumetric objective: masked MSE, per-plane SSIM with a 3×3 Gaussian
//! window, gradient-magnitude loss, and an optional attenuation regularizer.
//!
//! Every term reads voxels through the fan mask (out-of-mask values are treated
//! as zero), and each `*_with_grad` returns `∂loss/∂pred` alongside the value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::VolumeGrid;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_SIGMA: f64 = 1.5;

/// Normalized 3×3 Gaussian window, row-major over `(dy, dx) ∈ {−1,0,1}²`.
pub fn ssim_kernel() -> [f64; 9] {
    let mut k = [0.0; 9];
    for dy in -1i32..=1 {
        for dx in -1i32..=1 {
            let r2 = (dx * dx + dy * dy) as f64;
            k[((dy + 1) * 3 + dx + 1) as usize] = (-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    #[default]
    None,
    /// Mean absolute difference of attenuation between neighbouring fan samples.
    TvAttenuation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_ssim: f64,
    pub lambda_reg: f64,
    pub lambda_grad: f64,
    pub warmup_fraction: f64,
    #[serde(default)]
    pub regularizer: RegularizerKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.2,
            lambda_reg: 0.0,
            lambda_grad: 0.1,
            warmup_fraction: 0.1,
            regularizer: RegularizerKind::None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return Err(Error::Config("lambda_ssim must lie in [0, 1]".into()));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_grad >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Whether the gradient-magnitude term is active at `step`.
    pub fn grad_active(&self, step: usize, total_steps: usize) -> bool {
        step as f64 >= self.warmup_fraction * total_steps as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub mse: f64,
    pub ssim_loss: f64,
    pub grad_loss: f64,
    pub reg_loss: f64,
}

/// Borrowed volume data for loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Voxels<'a> {
    pub dims: [usize; 3],
    pub data: &'a [f64],
    pub mask: &'a [bool],
}

impl<'a> Voxels<'a> {
    pub fn new(dims: [usize; 3], data: &'a [f64], mask: &'a [bool]) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        debug_assert_eq!(mask.len(), data.len());
        Self { dims, data, mask }
    }

    #[inline]
    fn at(&self, i: usize) -> f64 {
        if self.mask[i] {
            self.data[i]
        } else {
            0.0
        }
    }
}

fn check_pair(pred: &Voxels, truth: &Voxels) -> Result<()> {
    if pred.dims != truth.dims {
        return Err(Error::DimMismatch(format!(
            "prediction {:?} vs truth {:?}",
            pred.dims, truth.dims
        )));
    }
    if pred.mask != truth.mask {
        return Err(Error::DimMismatch("prediction and truth masks differ".into()));
    }
    Ok(())
}

/// Mean squared error over in-mask voxels.
pub fn mse_with_grad(pred: &Voxels, truth: &Voxels) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, truth)?;
    let count = pred.mask.iter().filter(|m| **m).count();
    let mut grad = vec![0.0; pred.data.len()];
    if count == 0 {
        return Ok((0.0, grad));
    }
    let n = count as f64;
    let mut sum = 0.0;
    for i in 0..pred.data.len() {
        if pred.mask[i] {
            let d = pred.data[i] - truth.data[i];
            sum += d * d;
            grad[i] = 2.0 * d / n;
        }
    }
    Ok((sum / n, grad))
}

/// `1 − mean local SSIM`, windows centered on interior in-mask voxels of each
/// `(x, y)` plane.
pub fn ssim_with_grad(pred: &Voxels, truth: &Voxels) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, truth)?;
    let [w, h, d] = pred.dims;
    let kernel = ssim_kernel();
    let mut grad = vec![0.0; pred.data.len()];
    if w < 3 || h < 3 {
        return Ok((0.0, grad));
    }
    // (center, ∂S/∂μx, ∂S/∂σx², ∂S/∂σxy, μx, μy)
    let mut partials = Vec::new();
    let mut total = 0.0;
    for k in 0..d {
        for j in 1..h - 1 {
            for i in 1..w - 1 {
                let c = i + w * (j + h * k);
                if !pred.mask[c] {
                    continue;
                }
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..3 {
                    for dx in 0..3 {
                        let n = (i + dx - 1) + w * ((j + dy - 1) + h * k);
                        let wt = kernel[dy * 3 + dx];
                        let (x, y) = (pred.at(n), truth.at(n));
                        mx += wt * x;
                        my += wt * y;
                        sxx += wt * x * x;
                        syy += wt * y * y;
                        sxy += wt * x * y;
                    }
                }
                sxx -= mx * mx;
                syy -= my * my;
                sxy -= mx * my;
                let a1 = 2.0 * mx * my + SSIM_C1;
                let a2 = 2.0 * sxy + SSIM_C2;
                let b1 = mx * mx + my * my + SSIM_C1;
                let b2 = sxx + syy + SSIM_C2;
                let s = a1 * a2 / (b1 * b2);
                total += s;
                let d_mu = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
                let d_sxx = -s / b2;
                let d_sxy = 2.0 * a1 / (b1 * b2);
                partials.push((c, d_mu, d_sxx, d_sxy, mx, my));
            }
        }
    }
    if partials.is_empty() {
        return Ok((0.0, grad));
    }
    let count = partials.len() as f64;
    let scale = -1.0 / count;
    for (c, d_mu, d_sxx, d_sxy, mx, my) in partials {
        let (i, rest) = (c % w, c / w);
        let (j, k) = (rest % h, rest / h);
        for dy in 0..3 {
            for dx in 0..3 {
                let n = (i + dx - 1) + w * ((j + dy - 1) + h * k);
                if !pred.mask[n] {
                    continue;
                }
                let wt = kernel[dy * 3 + dx];
                let (x, y) = (pred.data[n], truth.at(n));
                grad[n] += scale * wt * (d_mu + d_sxx * 2.0 * (x - mx) + d_sxy * (y - my));
            }
        }
    }
    Ok((1.0 - total / count, grad))
}

/// Mean `|‖∇pred‖ − ‖∇truth‖|` over voxels whose forward neighbours along all
/// three axes are in the mask.
pub fn grad_loss_with_grad(pred: &Voxels, truth: &Voxels) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, truth)?;
    let [w, h, d] = pred.dims;
    if w < 2 || h < 2 || d < 2 {
        return Err(Error::DimMismatch(format!(
            "gradient loss needs at least 2 voxels per axis, got {:?}",
            pred.dims
        )));
    }
    let strides = [1, w, w * h];
    let mut grad = vec![0.0; pred.data.len()];
    let mut terms = Vec::new();
    let mut sum = 0.0;
    for k in 0..d - 1 {
        for j in 0..h - 1 {
            for i in 0..w - 1 {
                let c = i + w * (j + h * k);
                if !pred.mask[c] || strides.iter().any(|s| !pred.mask[c + s]) {
                    continue;
                }
                let gp: [f64; 3] = strides.map(|s| pred.data[c + s] - pred.data[c]);
                let gt: [f64; 3] = strides.map(|s| truth.data[c + s] - truth.data[c]);
                let mp = gp.iter().map(|v| v * v).sum::<f64>().sqrt();
                let mt = gt.iter().map(|v| v * v).sum::<f64>().sqrt();
                sum += (mp - mt).abs();
                terms.push((c, gp, mp, (mp - mt).signum()));
            }
        }
    }
    if terms.is_empty() {
        return Ok((0.0, grad));
    }
    let n = terms.len() as f64;
    for (c, gp, mp, sign) in terms {
        if mp == 0.0 || sign == 0.0 {
            continue;
        }
        for (axis, s) in strides.iter().enumerate() {
            let g = sign * gp[axis] / mp / n;
            grad[c + s] += g;
            grad[c] -= g;
        }
    }
    Ok((sum / n, grad))
}

/// Mean `|α_{next} − α|` over along-ray and across-ray neighbours of a fan grid.
pub fn tv_attenuation_with_grad(alpha: &[f64], n_rays: usize, n_samples: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; alpha.len()];
    let mut pairs = Vec::new();
    for k in 0..n_rays {
        for j in 0..n_samples {
            let i = k * n_samples + j;
            if j + 1 < n_samples {
                pairs.push((i, i + 1));
            }
            if k + 1 < n_rays {
                pairs.push((i, i + n_samples));
            }
        }
    }
    if pairs.is_empty() {
        return (0.0, grad);
    }
    let n = pairs.len() as f64;
    let mut sum = 0.0;
    for (a, b) in pairs {
        let diff = alpha[b] - alpha[a];
        sum += diff.abs();
        let s = diff.signum() / n;
        grad[b] += s;
        grad[a] -= s;
    }
    (sum / n, grad)
}

fn with_pair<R>(pred: &VolumeGrid, truth: &VolumeGrid, f: impl FnOnce(&Voxels, &Voxels) -> Result<R>) -> Result<R> {
    pred.check_same_shape(truth)?;
    let p = pred.data_f64();
    let t = truth.data_f64();
    let pv = Voxels::new(pred.dims, &p, &pred.fan_mask);
    let tv = Voxels::new(truth.dims, &t, &truth.fan_mask);
    f(&pv, &tv)
}

pub fn mse(pred: &VolumeGrid, truth: &VolumeGrid) -> Result<f64> {
    with_pair(pred, truth, |p, t| Ok(mse_with_grad(p, t)?.0))
}

pub fn ssim_loss(pred: &VolumeGrid, truth: &VolumeGrid) -> Result<f64> {
    with_pair(pred, truth, |p, t| Ok(ssim_with_grad(p, t)?.0))
}

pub fn grad_loss(pred: &VolumeGrid, truth: &VolumeGrid) -> Result<f64> {
    with_pair(pred, truth, |p, t| Ok(grad_loss_with_grad(p, t)?.0))
}

/// Combined objective and its gradient w.r.t. `pred`.
pub fn total_loss_with_grad(
    pred: &Voxels,
    truth: &Voxels,
    config: &LossConfig,
    step: usize,
    total_steps: usize,
    reg_loss: f64,
) -> Result<(LossReport, Vec<f64>)> {
    let lambda = config.lambda_ssim;
    let (mse, g_mse) = mse_with_grad(pred, truth)?;
    let (ssim, g_ssim) = if lambda > 0.0 {
        ssim_with_grad(pred, truth)?
    } else {
        (ssim_with_grad(pred, truth)?.0, Vec::new())
    };
    let active = config.grad_active(step, total_steps) && config.lambda_grad > 0.0;
    let (grad_term, g_grad) = if active {
        grad_loss_with_grad(pred, truth)?
    } else {
        (0.0, Vec::new())
    };
    let mut total = (1.0 - lambda) * mse + lambda * ssim + config.lambda_reg * reg_loss;
    if active {
        total += config.lambda_grad * grad_term;
    }
    let mut grad = g_mse;
    for (i, g) in grad.iter_mut().enumerate() {
        *g *= 1.0 - lambda;
        if lambda > 0.0 {
            *g += lambda * g_ssim[i];
        }
        if active {
            *g += config.lambda_grad * g_grad[i];
        }
    }
    Ok((
        LossReport {
            total,
            mse,
            ssim_loss: ssim,
            grad_loss: grad_term,
            reg_loss,
        },
        grad,
    ))
}

/// Combined objective on two grids; `reg_loss` comes from the regularizer hook.
pub fn total_loss(
    pred: &VolumeGrid,
    truth: &VolumeGrid,
    config: &LossConfig,
    step: usize,
    total_steps: usize,
    reg_loss: f64,
) -> Result<LossReport> {
    config.validate()?;
    with_pair(pred, truth, |p, t| {
        Ok(total_loss_with_grad(p, t, config, step, total_steps, reg_loss)?.0)
    })
}
