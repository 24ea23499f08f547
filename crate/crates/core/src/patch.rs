//! Image <-> patch-tensor codec.
//!
//! An `N_r x N_c` image is carved into non-overlapping `p x q` patches; patch
//! `(r, c)` of the patch grid becomes lateral slice `j = c*n_r + r` (0-based,
//! columns of patches enumerated first down, then right), and pixel `(i, k)`
//! of a patch lands at tensor entry `(i, j, k)`. The mapping is bijective and
//! linear, so images round-trip bit-exactly.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Grayscale image, column-major pixel storage, values conventionally in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ImageGray {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "image dims must be >= 1");
        ImageGray { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                *img.at_mut(i, j) = f(i, j);
            }
        }
        img
    }

    /// Wraps a column-major pixel buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("image dims must be >= 1"));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "pixel count {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(ImageGray { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }

    /// Column-major pixel buffer; this is `vec(B)` for the image `B`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Replicate-edge padding up to the next multiple of `(p, q)` in each
    /// dimension. A convenience for inputs the codec would otherwise reject;
    /// no-op when the image already divides evenly.
    pub fn pad_to_multiple(&self, p: usize, q: usize) -> Result<ImageGray> {
        if p == 0 || q == 0 {
            return Err(Error::shape("patch dims must be >= 1"));
        }
        let rows = self.rows.div_ceil(p) * p;
        let cols = self.cols.div_ceil(q) * q;
        if rows == self.rows && cols == self.cols {
            return Ok(self.clone());
        }
        Ok(ImageGray::from_fn(rows, cols, |i, j| {
            self.at(i.min(self.rows - 1), j.min(self.cols - 1))
        }))
    }
}

/// RGB image as three same-shaped grayscale planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub channels: [ImageGray; 3],
}

impl ImageRgb {
    pub fn new(channels: [ImageGray; 3]) -> Result<Self> {
        let (r, c) = (channels[0].rows(), channels[0].cols());
        for ch in &channels[1..] {
            if ch.rows() != r || ch.cols() != c {
                return Err(Error::shape("rgb channels must share dimensions"));
            }
        }
        Ok(ImageRgb { channels })
    }

    pub fn rows(&self) -> usize {
        self.channels[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.channels[0].cols()
    }
}

/// Patch layout of an image: `p x q` patches tiling an `N_r x N_c` frame in an
/// `n_r x n_c` grid of `M` patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub p: usize,
    pub q: usize,
    pub n_r: usize,
    pub n_c: usize,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize, p: usize, q: usize) -> Result<Self> {
        if p == 0 || q == 0 || rows == 0 || cols == 0 {
            return Err(Error::shape("patch and image dims must be >= 1"));
        }
        if rows % p != 0 || cols % q != 0 {
            return Err(Error::shape(format!(
                "patch size {p}x{q} does not tile image {rows}x{cols}"
            )));
        }
        Ok(PatchGrid { p, q, n_r: rows / p, n_c: cols / q })
    }

    /// Number of patches.
    pub fn m(&self) -> usize {
        self.n_r * self.n_c
    }

    pub fn image_rows(&self) -> usize {
        self.n_r * self.p
    }

    pub fn image_cols(&self) -> usize {
        self.n_c * self.q
    }
}

/// Carves `img` into a `p x M x q` patch tensor.
pub fn patchify(img: &ImageGray, p: usize, q: usize) -> Result<Tensor3> {
    let grid = PatchGrid::new(img.rows(), img.cols(), p, q)?;
    let mut t = Tensor3::zeros(p, grid.m(), q);
    for j in 0..grid.m() {
        let (r, c) = (j % grid.n_r, j / grid.n_r);
        for k in 0..q {
            for i in 0..p {
                *t.at_mut(i, j, k) = img.at(r * p + i, c * q + k);
            }
        }
    }
    Ok(t)
}

/// Reassembles an image from its patch tensor. Exact inverse of [`patchify`].
pub fn depatchify(t: &Tensor3, grid: &PatchGrid) -> Result<ImageGray> {
    if t.dims() != (grid.p, grid.m(), grid.q) {
        return Err(Error::shape(format!(
            "patch tensor {:?} does not match grid {}x{} of {}x{} patches",
            t.dims(),
            grid.n_r,
            grid.n_c,
            grid.p,
            grid.q
        )));
    }
    let mut img = ImageGray::zeros(grid.image_rows(), grid.image_cols());
    for j in 0..grid.m() {
        let (r, c) = (j % grid.n_r, j / grid.n_r);
        for k in 0..grid.q {
            for i in 0..grid.p {
                *img.at_mut(r * grid.p + i, c * grid.q + k) = t.at(i, j, k);
            }
        }
    }
    Ok(img)
}

/// Patchifies each channel and concatenates the lateral slices: R slices
/// first, then G, then B, giving a `p x 3M x q` tensor.
pub fn patchify_color(img: &ImageRgb, p: usize, q: usize) -> Result<Tensor3> {
    let grid = PatchGrid::new(img.rows(), img.cols(), p, q)?;
    let m = grid.m();
    let mut t = Tensor3::zeros(p, 3 * m, q);
    for (ch, plane) in img.channels.iter().enumerate() {
        let part = patchify(plane, p, q)?;
        for j in 0..m {
            t.copy_lateral_from(ch * m + j, &part, j)?;
        }
    }
    Ok(t)
}

/// Inverse of [`patchify_color`].
pub fn depatchify_color(t: &Tensor3, grid: &PatchGrid) -> Result<ImageRgb> {
    let m = grid.m();
    if t.dims() != (grid.p, 3 * m, grid.q) {
        return Err(Error::shape(format!(
            "color patch tensor {:?} does not match 3x{} slices of {}x{} patches",
            t.dims(),
            m,
            grid.p,
            grid.q
        )));
    }
    let mut planes = Vec::with_capacity(3);
    for ch in 0..3 {
        let mut part = Tensor3::zeros(grid.p, m, grid.q);
        for j in 0..m {
            part.copy_lateral_from(j, t, ch * m + j)?;
        }
        planes.push(depatchify(&part, grid)?);
    }
    let b = planes.pop().unwrap();
    let g = planes.pop().unwrap();
    let r = planes.pop().unwrap();
    ImageRgb::new([r, g, b])
}

/// Pixel permutation relating the flattened image to the flattened unfolded
/// patch tensor: `vec(img)[perm[t]] = vec(unfold(patchify(img)))[t]`.
///
/// `vec` is column-major on both sides; `unfold` of a `p x M x q` tensor is
/// the `pq x M` matrix whose row `k*p + i` holds tensor entry `(i, j, k)`.
pub fn perm_map(grid: &PatchGrid) -> Vec<usize> {
    let (p, q, n_r) = (grid.p, grid.q, grid.n_r);
    let rows = grid.image_rows();
    let m = grid.m();
    let mut perm = vec![0usize; rows * grid.image_cols()];
    for j in 0..m {
        let (r, c) = (j % n_r, j / n_r);
        for k in 0..q {
            for i in 0..p {
                let t = j * (p * q) + k * p + i;
                perm[t] = (c * q + k) * rows + (r * p + i);
            }
        }
    }
    perm
}

/// Inverts an index bijection.
pub fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (t, &s) in perm.iter().enumerate() {
        inv[s] = t;
    }
    inv
}
