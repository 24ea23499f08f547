//! Reconstruction quality and compression accounting.

use crate::error::{Error, Result};
use crate::patch::ImageGray;
use crate::tensor::Tensor3;
use crate::NNZ_EPS;

/// `||x - x_ref|| / ||x_ref||` over flat buffers.
pub fn rel_err(x: &[f64], x_ref: &[f64]) -> Result<f64> {
    if x.len() != x_ref.len() {
        return Err(Error::shape(format!(
            "relative error: lengths {} vs {}",
            x.len(),
            x_ref.len()
        )));
    }
    let ref_norm = x_ref.iter().map(|v| v * v).sum::<f64>().sqrt();
    if ref_norm == 0.0 {
        return Err(Error::Numeric("relative error against a zero reference".into()));
    }
    let diff = x
        .iter()
        .zip(x_ref)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / ref_norm)
}

pub fn rel_err_tensor(x: &Tensor3, x_ref: &Tensor3) -> Result<f64> {
    if x.dims() != x_ref.dims() {
        return Err(Error::shape(format!(
            "relative error: dims {:?} vs {:?}",
            x.dims(),
            x_ref.dims()
        )));
    }
    rel_err(x.data(), x_ref.data())
}

pub fn rel_err_image(x: &ImageGray, x_ref: &ImageGray) -> Result<f64> {
    if x.rows() != x_ref.rows() || x.cols() != x_ref.cols() {
        return Err(Error::shape("relative error: image sizes differ"));
    }
    rel_err(x.data(), x_ref.data())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn ssim_window_weights() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            let v = (-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[i * SSIM_WINDOW + j] = v;
            sum += v;
        }
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Mean structural similarity over all fully interior 11x11 Gaussian windows,
/// with the given dynamic range.
pub fn ssim_with_range(x: &ImageGray, y: &ImageGray, dynamic_range: f64) -> Result<f64> {
    if x.rows() != y.rows() || x.cols() != y.cols() {
        return Err(Error::shape("ssim: image sizes differ"));
    }
    if x.rows() < SSIM_WINDOW || x.cols() < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "ssim: image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            x.rows(),
            y.cols()
        )));
    }
    if !(dynamic_range > 0.0) {
        return Err(Error::Config(format!("ssim dynamic range must be > 0, got {dynamic_range}")));
    }
    let w = ssim_window_weights();
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let mut acc = 0.0;
    let mut count = 0usize;
    for top in 0..=(x.rows() - SSIM_WINDOW) {
        for left in 0..=(x.cols() - SSIM_WINDOW) {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let wt = w[i * SSIM_WINDOW + j];
                    mx += wt * x.at(top + i, left + j);
                    my += wt * y.at(top + i, left + j);
                }
            }
            let (mut vx, mut vy, mut vxy) = (0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let wt = w[i * SSIM_WINDOW + j];
                    let dx = x.at(top + i, left + j) - mx;
                    let dy = y.at(top + i, left + j) - my;
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    vxy += wt * dx * dy;
                }
            }
            let num = (2.0 * mx * my + c1) * (2.0 * vxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            acc += num / den;
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// SSIM at the unit dynamic range used for [0,1] images.
pub fn ssim(x: &ImageGray, y: &ImageGray) -> Result<f64> {
    ssim_with_range(x, y, 1.0)
}

pub fn nnz_count(data: &[f64]) -> usize {
    data.iter().filter(|v| v.abs() > NNZ_EPS).count()
}

/// Storage accounting for a coefficient/dictionary pair against the raw pixel
/// count it reproduces.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionReport {
    pub nnz_c: usize,
    pub nnz_d: usize,
    pub pixels: usize,
    /// One-off cost including the dictionary itself.
    pub ratio_with_dict: f64,
    /// Marginal cost per image once the dictionary is shared.
    pub ratio_amortized: f64,
    pub rel_err: f64,
}

pub fn compression_report(c: &Tensor3, d: &Tensor3, pixels: usize, rel_err: f64) -> CompressionReport {
    let nnz_c = nnz_count(c.data());
    let nnz_d = nnz_count(d.data());
    CompressionReport {
        nnz_c,
        nnz_d,
        pixels,
        ratio_with_dict: (nnz_c + nnz_d) as f64 / pixels as f64,
        ratio_amortized: nnz_c as f64 / pixels as f64,
        rel_err,
    }
}
