//! Gaussian blur models, noise injection, and dictionary-constrained
//! deblurring through the composite patch/synthesis operator.

use crate::error::{Error, Result};
use crate::mrnsd::{initial_guess, mrnsd_op, DictOp, LinearOp, MrnsdConfig, SolveReport};
use crate::patch::{depatchify, patchify, ImageGray, PatchGrid};
use crate::tensor::{tprod, Tensor3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Half of a symmetric one-dimensional blur kernel; `v[0]` is the center tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    v: Vec<f64>,
    sigma: f64,
}

impl Psf {
    pub fn kernel(&self) -> &[f64] {
        &self.v
    }

    pub fn bandwidth(&self) -> usize {
        self.v.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

fn psf_from_exponent(bw: usize, sigma: f64, scale: f64) -> Result<Psf> {
    if bw == 0 {
        return Err(Error::Config("psf bandwidth must be at least 1".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("psf sigma must be > 0, got {sigma}")));
    }
    let v = (0..bw).map(|k| (-scale * (k * k) as f64).exp()).collect();
    Ok(Psf { v, sigma })
}

/// `v[k] = exp(-k^2 / sqrt(2 sigma))`, the kernel used to build the trimmed
/// test problems. Not a textbook Gaussian; see [`gaussian_psf_standard`].
pub fn gaussian_psf(bw: usize, sigma: f64) -> Result<Psf> {
    psf_from_exponent(bw, sigma, 1.0 / (2.0 * sigma).sqrt())
}

/// Textbook density `v[k] = exp(-k^2 / (2 sigma^2))`.
pub fn gaussian_psf_standard(bw: usize, sigma: f64) -> Result<Psf> {
    psf_from_exponent(bw, sigma, 1.0 / (2.0 * sigma * sigma))
}

/// Whole-sample reflection of an out-of-range index back into `0..n`.
fn reflect(t: isize, n: usize) -> usize {
    if t < 0 {
        (-t) as usize
    } else if t as usize >= n {
        2 * (n - 1) - t as usize
    } else {
        t as usize
    }
}

fn correlate_reflexive(x: &[f64], v: &[f64], y: &mut [f64]) {
    let n = x.len();
    let e = v.len() as isize - 1;
    for (i, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in -e..=e {
            acc += v[k.unsigned_abs()] * x[reflect(i as isize + k, n)];
        }
        *out = acc;
    }
}

fn correlate_reflexive_adjoint(y: &[f64], v: &[f64], z: &mut [f64]) {
    let n = y.len();
    let e = v.len() as isize - 1;
    z.fill(0.0);
    for (i, &yi) in y.iter().enumerate() {
        for k in -e..=e {
            z[reflect(i as isize + k, n)] += v[k.unsigned_abs()] * yi;
        }
    }
}

/// Symmetric banded Toeplitz action (zero boundary); self-adjoint.
fn correlate_zero(x: &[f64], v: &[f64], y: &mut [f64]) {
    let n = x.len() as isize;
    let e = v.len() as isize - 1;
    for (i, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in -e..=e {
            let t = i as isize + k;
            if t >= 0 && t < n {
                acc += v[k.unsigned_abs()] * x[t as usize];
            }
        }
        *out = acc;
    }
}

fn blur_columns(img: &ImageGray, v: &[f64], corr: fn(&[f64], &[f64], &mut [f64])) -> ImageGray {
    let (rows, cols) = (img.rows(), img.cols());
    let mut out = ImageGray::zeros(rows, cols);
    for j in 0..cols {
        corr(
            &img.data()[j * rows..(j + 1) * rows],
            v,
            &mut out.data_mut()[j * rows..(j + 1) * rows],
        );
    }
    out
}

fn blur_rows(img: &ImageGray, v: &[f64], corr: fn(&[f64], &[f64], &mut [f64])) -> ImageGray {
    let (rows, cols) = (img.rows(), img.cols());
    let mut out = ImageGray::zeros(rows, cols);
    let mut line = vec![0.0; cols];
    let mut blurred = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            line[j] = img.at(i, j);
        }
        corr(&line, v, &mut blurred);
        for j in 0..cols {
            *out.at_mut(i, j) = blurred[j];
        }
    }
    out
}

fn check_kernel_fits(psf: &Psf, rows: usize, cols: usize) -> Result<()> {
    if psf.bandwidth() > rows.min(cols) {
        return Err(Error::shape(format!(
            "kernel bandwidth {} exceeds image dimension {}x{}",
            psf.bandwidth(),
            rows,
            cols
        )));
    }
    Ok(())
}

/// Separable correlation with whole-sample symmetric edge padding.
pub fn blur_reflexive(img: &ImageGray, psf: &Psf) -> Result<ImageGray> {
    check_kernel_fits(psf, img.rows(), img.cols())?;
    Ok(blur_rows(&blur_columns(img, &psf.v, correlate_reflexive), &psf.v, correlate_reflexive))
}

pub fn blur_reflexive_adjoint(img: &ImageGray, psf: &Psf) -> Result<ImageGray> {
    check_kernel_fits(psf, img.rows(), img.cols())?;
    Ok(blur_columns(
        &blur_rows(img, &psf.v, correlate_reflexive_adjoint),
        &psf.v,
        correlate_reflexive_adjoint,
    ))
}

fn check_trim(rows: usize, cols: usize, margin: usize) -> Result<()> {
    if rows <= 2 * margin || cols <= 2 * margin {
        return Err(Error::shape(format!(
            "margin {margin} leaves no interior in a {rows}x{cols} image"
        )));
    }
    Ok(())
}

/// Zero-boundary Toeplitz blur on both axes, then a `margin`-pixel crop on
/// every side, vectorized column-major.
pub fn blur_trimmed(img: &ImageGray, psf: &Psf, margin: usize) -> Result<Vec<f64>> {
    check_kernel_fits(psf, img.rows(), img.cols())?;
    check_trim(img.rows(), img.cols(), margin)?;
    let t = blur_rows(&blur_columns(img, &psf.v, correlate_zero), &psf.v, correlate_zero);
    let (or, oc) = (img.rows() - 2 * margin, img.cols() - 2 * margin);
    let mut out = Vec::with_capacity(or * oc);
    for j in 0..oc {
        for i in 0..or {
            out.push(t.at(margin + i, margin + j));
        }
    }
    Ok(out)
}

pub fn blur_trimmed_adjoint(
    r: &[f64],
    psf: &Psf,
    rows: usize,
    cols: usize,
    margin: usize,
) -> Result<ImageGray> {
    check_kernel_fits(psf, rows, cols)?;
    check_trim(rows, cols, margin)?;
    let (or, oc) = (rows - 2 * margin, cols - 2 * margin);
    if r.len() != or * oc {
        return Err(Error::shape(format!("trimmed residual length {} expected {}", r.len(), or * oc)));
    }
    let mut embedded = ImageGray::zeros(rows, cols);
    for j in 0..oc {
        for i in 0..or {
            *embedded.at_mut(margin + i, margin + j) = r[j * or + i];
        }
    }
    Ok(blur_columns(&blur_rows(&embedded, &psf.v, correlate_zero), &psf.v, correlate_zero))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlurMode {
    Reflexive,
    Trimmed,
}

/// Blur as a linear map on column-major image vectors.
#[derive(Debug, Clone)]
pub struct BlurOperator {
    mode: BlurMode,
    psf: Psf,
    rows: usize,
    cols: usize,
    margin: usize,
}

impl BlurOperator {
    pub fn reflexive(psf: Psf, rows: usize, cols: usize) -> Result<Self> {
        check_kernel_fits(&psf, rows, cols)?;
        Ok(BlurOperator { mode: BlurMode::Reflexive, psf, rows, cols, margin: 0 })
    }

    pub fn trimmed(psf: Psf, rows: usize, cols: usize, margin: usize) -> Result<Self> {
        check_kernel_fits(&psf, rows, cols)?;
        check_trim(rows, cols, margin)?;
        Ok(BlurOperator { mode: BlurMode::Trimmed, psf, rows, cols, margin })
    }

    pub fn mode(&self) -> BlurMode {
        self.mode
    }

    pub fn psf(&self) -> &Psf {
        &self.psf
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Dimensions of the blurred output grid (cropped in trimmed mode).
    pub fn out_dims(&self) -> (usize, usize) {
        match self.mode {
            BlurMode::Reflexive => (self.rows, self.cols),
            BlurMode::Trimmed => (self.rows - 2 * self.margin, self.cols - 2 * self.margin),
        }
    }

    fn image_from(&self, x: &[f64]) -> Result<ImageGray> {
        ImageGray::from_vec(self.rows, self.cols, x.to_vec())
    }
}

impl LinearOp for BlurOperator {
    fn domain_len(&self) -> usize {
        self.rows * self.cols
    }

    fn range_len(&self) -> usize {
        let (r, c) = self.out_dims();
        r * c
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let img = self.image_from(x)?;
        match self.mode {
            BlurMode::Reflexive => out.copy_from_slice(blur_reflexive(&img, &self.psf)?.data()),
            BlurMode::Trimmed => out.copy_from_slice(&blur_trimmed(&img, &self.psf, self.margin)?),
        }
        Ok(())
    }

    fn adjoint(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        match self.mode {
            BlurMode::Reflexive => {
                let img = self.image_from(y)?;
                out.copy_from_slice(blur_reflexive_adjoint(&img, &self.psf)?.data());
            }
            BlurMode::Trimmed => {
                let z = blur_trimmed_adjoint(y, &self.psf, self.rows, self.cols, self.margin)?;
                out.copy_from_slice(z.data());
            }
        }
        Ok(())
    }
}

/// Adds `c * g` with standard Gaussian `g` and `c` solved so the realized
/// noise-to-signal ratio equals `level` exactly.
pub fn add_noise(b: &[f64], level: f64, seed: u64) -> Result<Vec<f64>> {
    if !(level >= 0.0) {
        return Err(Error::Config(format!("noise level must be >= 0, got {level}")));
    }
    if level == 0.0 {
        return Ok(b.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g: Vec<f64> = (0..b.len()).map(|_| rng.sample(StandardNormal)).collect();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if g_norm == 0.0 {
        return Ok(b.to_vec());
    }
    let c = level * b_norm / g_norm;
    Ok(b.iter().zip(&g).map(|(bi, gi)| bi + c * gi).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QMode {
    /// First differences between every adjacent pair.
    Full,
    /// One difference row per interior patch boundary.
    PatchJump { p: usize, q: usize },
}

/// Weighted first-difference stack `[I (x) Q ; Q (x) I]` applied implicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchRegularizer {
    lambda: f64,
    mode: QMode,
}

impl PatchRegularizer {
    pub fn new(lambda: f64, mode: QMode) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("regularization weight must be >= 0, got {lambda}")));
        }
        if let QMode::PatchJump { p, q } = mode {
            if p == 0 || q == 0 {
                return Err(Error::Config("patch-jump regularizer needs positive patch dims".into()));
            }
        }
        Ok(PatchRegularizer { lambda, mode })
    }

    /// The empty stack: no smoothing rows at all.
    pub fn none() -> Self {
        PatchRegularizer { lambda: 0.0, mode: QMode::Full }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mode(&self) -> QMode {
        self.mode
    }

    /// Difference rows along one axis as (low, high) index pairs.
    fn axis_pairs(&self, n: usize, patch: usize) -> Result<Vec<(usize, usize)>> {
        if self.lambda == 0.0 {
            return Ok(Vec::new());
        }
        match self.mode {
            QMode::Full => Ok((0..n - 1).map(|t| (t, t + 1)).collect()),
            QMode::PatchJump { .. } => {
                if n % patch != 0 {
                    return Err(Error::shape(format!(
                        "patch-jump regularizer: {patch} does not divide axis length {n}"
                    )));
                }
                Ok((1..n / patch).map(|k| (k * patch - 1, k * patch)).collect())
            }
        }
    }

    fn vertical_pairs(&self, rows: usize) -> Result<Vec<(usize, usize)>> {
        let patch = match self.mode {
            QMode::Full => 1,
            QMode::PatchJump { p, .. } => p,
        };
        self.axis_pairs(rows, patch)
    }

    fn horizontal_pairs(&self, cols: usize) -> Result<Vec<(usize, usize)>> {
        let patch = match self.mode {
            QMode::Full => 1,
            QMode::PatchJump { q, .. } => q,
        };
        self.axis_pairs(cols, patch)
    }

    /// Total stacked rows contributed for an image of the given size.
    pub fn range_len(&self, rows: usize, cols: usize) -> Result<usize> {
        Ok(self.vertical_pairs(rows)?.len() * cols + rows * self.horizontal_pairs(cols)?.len())
    }

    fn apply_into(&self, img: &ImageGray, out: &mut [f64]) -> Result<()> {
        let (rows, cols) = (img.rows(), img.cols());
        let vp = self.vertical_pairs(rows)?;
        let hp = self.horizontal_pairs(cols)?;
        let mut idx = 0;
        for j in 0..cols {
            for &(lo, hi) in &vp {
                out[idx] = self.lambda * (img.at(hi, j) - img.at(lo, j));
                idx += 1;
            }
        }
        for &(lo, hi) in &hp {
            for i in 0..rows {
                out[idx] = self.lambda * (img.at(i, hi) - img.at(i, lo));
                idx += 1;
            }
        }
        Ok(())
    }

    fn adjoint_accumulate(&self, r: &[f64], acc: &mut ImageGray) -> Result<()> {
        let (rows, cols) = (acc.rows(), acc.cols());
        let vp = self.vertical_pairs(rows)?;
        let hp = self.horizontal_pairs(cols)?;
        let mut idx = 0;
        for j in 0..cols {
            for &(lo, hi) in &vp {
                *acc.at_mut(hi, j) += self.lambda * r[idx];
                *acc.at_mut(lo, j) -= self.lambda * r[idx];
                idx += 1;
            }
        }
        for &(lo, hi) in &hp {
            for i in 0..rows {
                *acc.at_mut(i, hi) += self.lambda * r[idx];
                *acc.at_mut(i, lo) -= self.lambda * r[idx];
                idx += 1;
            }
        }
        Ok(())
    }
}

/// Blur rows stacked over smoothing rows, acting on image vectors.
pub struct StackedBlurOp {
    blur: BlurOperator,
    reg: PatchRegularizer,
    reg_rows: usize,
}

impl StackedBlurOp {
    pub fn new(blur: BlurOperator, reg: PatchRegularizer) -> Result<Self> {
        let (rows, cols) = blur.image_dims();
        let reg_rows = reg.range_len(rows, cols)?;
        Ok(StackedBlurOp { blur, reg, reg_rows })
    }
}

impl LinearOp for StackedBlurOp {
    fn domain_len(&self) -> usize {
        self.blur.domain_len()
    }

    fn range_len(&self) -> usize {
        self.blur.range_len() + self.reg_rows
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let split = self.blur.range_len();
        self.blur.apply(x, &mut out[..split])?;
        if self.reg_rows > 0 {
            let (rows, cols) = self.blur.image_dims();
            let img = ImageGray::from_vec(rows, cols, x.to_vec())?;
            self.reg.apply_into(&img, &mut out[split..])?;
        }
        Ok(())
    }

    fn adjoint(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let split = self.blur.range_len();
        self.blur.adjoint(&y[..split], out)?;
        if self.reg_rows > 0 {
            let (rows, cols) = self.blur.image_dims();
            let mut acc = ImageGray::from_vec(rows, cols, out.to_vec())?;
            self.reg.adjoint_accumulate(&y[split..], &mut acc)?;
            out.copy_from_slice(acc.data());
        }
        Ok(())
    }
}

/// Coefficients -> [blur(assemble); smoothing rows] where assemble is
/// depatchify of the dictionary t-product.
pub struct CompositeOp {
    dict: DictOp,
    blur: BlurOperator,
    grid: PatchGrid,
    reg: PatchRegularizer,
    reg_rows: usize,
}

pub fn composite_op(
    blur: &BlurOperator,
    d: &Tensor3,
    grid: &PatchGrid,
    reg: &PatchRegularizer,
) -> Result<CompositeOp> {
    let (rows, cols) = blur.image_dims();
    if rows != grid.image_rows() || cols != grid.image_cols() {
        return Err(Error::shape(format!(
            "blur grid {}x{} does not match patch grid image {}x{}",
            rows,
            cols,
            grid.image_rows(),
            grid.image_cols()
        )));
    }
    let (p, _, q) = d.dims();
    if p != grid.p || q != grid.q {
        return Err(Error::shape(format!(
            "dictionary patches {p}x{q} do not match the grid patch size {}x{}",
            grid.p, grid.q
        )));
    }
    let reg_rows = reg.range_len(rows, cols)?;
    let dict = DictOp::new(d, grid.m())?;
    Ok(CompositeOp { dict, blur: blur.clone(), grid: *grid, reg: *reg, reg_rows })
}

impl CompositeOp {
    fn assemble(&self, x: &[f64]) -> Result<ImageGray> {
        let (p, m, q) = self.dict.data_dims();
        let mut z = vec![0.0; p * m * q];
        self.dict.apply(x, &mut z)?;
        depatchify(&Tensor3::from_data(p, m, q, z)?, &self.grid)
    }
}

impl LinearOp for CompositeOp {
    fn domain_len(&self) -> usize {
        self.dict.domain_len()
    }

    fn range_len(&self) -> usize {
        self.blur.range_len() + self.reg_rows
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let img = self.assemble(x)?;
        let split = self.blur.range_len();
        self.blur.apply(img.data(), &mut out[..split])?;
        if self.reg_rows > 0 {
            self.reg.apply_into(&img, &mut out[split..])?;
        }
        Ok(())
    }

    fn adjoint(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let split = self.blur.range_len();
        let (rows, cols) = self.blur.image_dims();
        let mut img_vec = vec![0.0; rows * cols];
        self.blur.adjoint(&y[..split], &mut img_vec)?;
        let mut acc = ImageGray::from_vec(rows, cols, img_vec)?;
        if self.reg_rows > 0 {
            self.reg.adjoint_accumulate(&y[split..], &mut acc)?;
        }
        let (p, _, q) = self.dict.data_dims();
        let z = patchify(&acc, p, q)?;
        self.dict.adjoint(z.data(), out)
    }
}

fn stacked_rhs(b: &[f64], extra: usize) -> Vec<f64> {
    let mut rhs = Vec::with_capacity(b.len() + extra);
    rhs.extend_from_slice(b);
    rhs.resize(b.len() + extra, 0.0);
    rhs
}

fn clamp_unit(img: &mut ImageGray) {
    for v in img.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Non-negative descent on the composite operator; the reconstruction is
/// assembled from the final coefficients and clamped to [0,1] for output
/// only (iterates are never clamped).
pub fn deblur_tensor(
    b: &[f64],
    blur: &BlurOperator,
    d: &Tensor3,
    grid: &PatchGrid,
    reg: &PatchRegularizer,
    cfg: &MrnsdConfig,
) -> Result<(ImageGray, SolveReport)> {
    if b.len() != blur.range_len() {
        return Err(Error::shape(format!(
            "blurred data length {} expected {}",
            b.len(),
            blur.range_len()
        )));
    }
    let op = composite_op(blur, d, grid, reg)?;
    let rhs = stacked_rhs(b, op.range_len() - b.len());
    let x0 = initial_guess(d, grid.m(), cfg.floor)?;
    let (x, report) = mrnsd_op(&op, &rhs, x0.data(), cfg)?;
    let (s, m, q) = d_coeff_dims(d, grid.m());
    let c = Tensor3::from_data(s, m, q, x)?;
    let mut img = depatchify(&tprod(d, &c)?, grid)?;
    clamp_unit(&mut img);
    Ok((img, report))
}

fn d_coeff_dims(d: &Tensor3, m: usize) -> (usize, usize, usize) {
    (d.cols(), m, d.depth())
}

/// Pixel-basis baseline: the same descent run directly on the blur rows,
/// started from the all-ones image.
pub fn deblur_matrix(
    b: &[f64],
    blur: &BlurOperator,
    reg: &PatchRegularizer,
    cfg: &MrnsdConfig,
) -> Result<(ImageGray, SolveReport)> {
    if b.len() != blur.range_len() {
        return Err(Error::shape(format!(
            "blurred data length {} expected {}",
            b.len(),
            blur.range_len()
        )));
    }
    let op = StackedBlurOp::new(blur.clone(), *reg)?;
    let rhs = stacked_rhs(b, op.range_len() - b.len());
    let x0 = vec![1.0; op.domain_len()];
    let (x, report) = mrnsd_op(&op, &rhs, &x0, cfg)?;
    let (rows, cols) = blur.image_dims();
    let mut img = ImageGray::from_vec(rows, cols, x)?;
    clamp_unit(&mut img);
    Ok((img, report))
}

/// Pixelwise convex combination.
pub fn combine(images: &[ImageGray], weights: &[f64]) -> Result<ImageGray> {
    if images.is_empty() || images.len() != weights.len() {
        return Err(Error::Config(format!(
            "combine: {} images vs {} weights",
            images.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Config("combine: weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("combine: weights sum to {total}, expected 1")));
    }
    let (rows, cols) = (images[0].rows(), images[0].cols());
    if images.iter().any(|im| im.rows() != rows || im.cols() != cols) {
        return Err(Error::shape("combine: image sizes differ"));
    }
    if images.len() == 1 {
        return Ok(images[0].clone());
    }
    let mut out = ImageGray::zeros(rows, cols);
    for (img, &w) in images.iter().zip(weights) {
        for (o, v) in out.data_mut().iter_mut().zip(img.data()) {
            *o += w * v;
        }
    }
    Ok(out)
}
