use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const SILOG_LAMBDA: f64 = 0.85;
/// Added to sigmoid outputs and normalized targets before taking logs.
pub const SILOG_SHIFT: f64 = 1e-3;

/// `sqrt(mean(d^2) - lambda * mean(d)^2)` with `d = ln pred - ln gt`,
/// evaluated as `mean((d - m)^2) + (1 - lambda) m^2` to avoid cancellation.
pub fn silog(g: &mut Graph, pred: Var, gt: Var, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("silog lambda must lie in [0, 1]"));
    }
    if g.value(pred).data.iter().chain(&g.value(gt).data).any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("silog needs strictly positive inputs"));
    }
    check_same(g, pred, gt)?;
    let lp = g.ln(pred);
    let lg = g.ln(gt);
    let d = g.sub(lp, lg);
    let c = g.center(d);
    let c2 = g.mul(c, c);
    let spread = g.mean(c2);
    let m = g.mean(d);
    let m2 = g.mul(m, m);
    let m2 = g.scale(m2, 1.0 - lambda);
    let total = g.add(spread, m2);
    Ok(g.sqrt(total))
}

pub fn silog_loss(pred: &Tensor, gt: &Tensor, lambda: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (p, t) = (g.input(pred.clone()), g.input(gt.clone()));
    let l = silog(&mut g, p, t, lambda)?;
    Ok(g.scalar_value(l))
}

/// Structural similarity settings for [`recip_ssim`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    /// Dynamic range of the reciprocal; the stabilizers are `(0.01 L)^2`
    /// and `(0.03 L)^2`.
    pub dynamic_range: f64,
    pub alpha: f64,
}

impl Default for SsimConfig {
    /// Reciprocals of values floored at 0.1 span `[1, 10]`.
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            dynamic_range: 9.0,
            alpha: 0.1,
        }
    }
}

/// Normalized Gaussian taps, the window clipped to the image size.
pub fn gaussian_window(window: usize, sigma: f64, max: usize) -> Vec<f64> {
    let mut k = window.min(max).max(1);
    if k % 2 == 0 {
        k -= 1;
    }
    let c = (k / 2) as f64;
    let w: Vec<f64> = (0..k).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM of two `[n, c, h, w]` tensors.
pub fn ssim(g: &mut Graph, x: Var, y: Var, cfg: &SsimConfig) -> Result<Var> {
    check_same(g, x, y)?;
    let (_, _, h, w) = g.value(x).dims4();
    let kernel = gaussian_window(cfg.window, cfg.sigma, h.min(w));
    let c1 = (0.01 * cfg.dynamic_range).powi(2);
    let c2 = (0.03 * cfg.dynamic_range).powi(2);
    let mx = g.blur(x, &kernel);
    let my = g.blur(y, &kernel);
    let xx = g.mul(x, x);
    let yy = g.mul(y, y);
    let xy = g.mul(x, y);
    let bxx = g.blur(xx, &kernel);
    let byy = g.blur(yy, &kernel);
    let bxy = g.blur(xy, &kernel);
    let mx2 = g.mul(mx, mx);
    let my2 = g.mul(my, my);
    let mxy = g.mul(mx, my);
    let sxx = g.sub(bxx, mx2);
    let syy = g.sub(byy, my2);
    let sxy = g.sub(bxy, mxy);
    let a = g.scale(mxy, 2.0);
    let a = g.add_scalar(a, c1);
    let b = g.scale(sxy, 2.0);
    let b = g.add_scalar(b, c2);
    let num = g.mul(a, b);
    let c = g.add(mx2, my2);
    let c = g.add_scalar(c, c1);
    let d = g.add(sxx, syy);
    let d = g.add_scalar(d, c2);
    let den = g.mul(c, d);
    let map = g.div(num, den);
    Ok(g.mean(map))
}

/// `(1 - SSIM(1/pred, 1/gt)) / 2 + alpha * mean|pred - gt|`.
pub fn recip_ssim(g: &mut Graph, pred: Var, gt: Var, cfg: &SsimConfig) -> Result<Var> {
    if g.value(pred).data.iter().chain(&g.value(gt).data).any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("reciprocal SSIM needs strictly positive inputs"));
    }
    let rp = g.recip(pred);
    let rg = g.recip(gt);
    let s = ssim(g, rp, rg, cfg)?;
    let s = g.scale(s, -0.5);
    let term = g.add_scalar(s, 0.5);
    if cfg.alpha == 0.0 {
        return Ok(term);
    }
    let diff = g.sub(pred, gt);
    let l1 = g.abs(diff);
    let l1 = g.mean(l1);
    let l1 = g.scale(l1, cfg.alpha);
    Ok(g.add(term, l1))
}

pub fn recip_ssim_loss(pred: &Tensor, gt: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (p, t) = (g.input(pred.clone()), g.input(gt.clone()));
    let l = recip_ssim(&mut g, p, t, cfg)?;
    Ok(g.scalar_value(l))
}

/// Mean squared error.
pub fn mse(g: &mut Graph, pred: Var, gt: Var) -> Result<Var> {
    check_same(g, pred, gt)?;
    let d = g.sub(pred, gt);
    let d2 = g.mul(d, d);
    Ok(g.mean(d2))
}

pub fn wrench_loss(pred: &[f64; 6], gt: &[f64; 6]) -> f64 {
    pred.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 6.0
}

fn check_same(g: &Graph, a: Var, b: Var) -> Result<()> {
    if g.value(a).shape != g.value(b).shape {
        return Err(Error::invalid(format!(
            "loss operands differ in shape: {:?} vs {:?}",
            g.value(a).shape,
            g.value(b).shape
        )));
    }
    Ok(())
}
