//! Third-order tensor algebra under the t-product.
//!
//! A tensor here is an `l x m x n` array of `f64`. Frontal slice `k` is the
//! `l x m` matrix obtained by fixing the third index; lateral slice `j` is the
//! `l x 1 x n` slab fixing the second index; a tube is the length-`n` fiber
//! along the third dimension. The t-product `A * B = fold(circ(A) . unfold(B))`
//! is computed facewise in the Fourier domain; `tprod_naive` materializes the
//! block-circulant and exists as a reference oracle.

use nalgebra::DMatrix;
use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft;

/// Dense real third-order tensor, frontal-slice major, column-major slices.
///
/// Element `(i, j, k)` lives at `data[k*l*m + j*l + i]`, which is also the
/// exact byte order of the on-disk tensor format.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    rows: usize,
    cols: usize,
    depth: usize,
    data: Vec<f64>,
}

/// Complex companion of [`Tensor3`]; the image of the transform applied along
/// the third dimension. Same memory layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor3 {
    rows: usize,
    cols: usize,
    depth: usize,
    data: Vec<Complex<f64>>,
}

impl Tensor3 {
    pub fn zeros(rows: usize, cols: usize, depth: usize) -> Self {
        assert!(rows >= 1 && cols >= 1 && depth >= 1, "tensor dims must be >= 1");
        Tensor3 { rows, cols, depth, data: vec![0.0; rows * cols * depth] }
    }

    pub fn ones(rows: usize, cols: usize, depth: usize) -> Self {
        let mut t = Self::zeros(rows, cols, depth);
        t.data.fill(1.0);
        t
    }

    /// Identity tensor: first frontal slice is the identity matrix, the rest
    /// are zero. Two-sided identity for the t-product.
    pub fn identity(size: usize, depth: usize) -> Self {
        let mut t = Self::zeros(size, size, depth);
        for i in 0..size {
            *t.at_mut(i, i, 0) = 1.0;
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, depth: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(rows, cols, depth);
        for k in 0..depth {
            for j in 0..cols {
                for i in 0..rows {
                    *t.at_mut(i, j, k) = f(i, j, k);
                }
            }
        }
        t
    }

    /// Wraps an existing buffer laid out slice-major, column-major per slice.
    pub fn from_data(rows: usize, cols: usize, depth: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || depth == 0 {
            return Err(Error::shape("tensor dims must be >= 1"));
        }
        if data.len() != rows * cols * depth {
            return Err(Error::shape(format!(
                "data length {} does not match dims {}x{}x{}",
                data.len(),
                rows,
                cols,
                depth
            )));
        }
        Ok(Tensor3 { rows, cols, depth, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.depth)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols && k < self.depth);
        self.data[k * self.rows * self.cols + j * self.rows + i]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols && k < self.depth);
        &mut self.data[k * self.rows * self.cols + j * self.rows + i]
    }

    /// Frontal slice `k` as a contiguous column-major `l x m` block.
    pub fn face(&self, k: usize) -> &[f64] {
        let fl = self.rows * self.cols;
        &self.data[k * fl..(k + 1) * fl]
    }

    fn same_dims(&self, other: &Tensor3, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Copies lateral slice `src_j` of `src` into lateral slice `dst_j` of `self`.
    pub fn copy_lateral_from(&mut self, dst_j: usize, src: &Tensor3, src_j: usize) -> Result<()> {
        if self.rows != src.rows || self.depth != src.depth {
            return Err(Error::shape("lateral copy: row/depth mismatch"));
        }
        for k in 0..self.depth {
            for i in 0..self.rows {
                *self.at_mut(i, dst_j, k) = src.at(i, src_j, k);
            }
        }
        Ok(())
    }

    pub fn lateral_fro_norm(&self, j: usize) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.depth {
            for i in 0..self.rows {
                let v = self.at(i, j, k);
                acc += v * v;
            }
        }
        acc.sqrt()
    }
}

impl std::ops::Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;

    fn index(&self, (i, j, k): (usize, usize, usize)) -> &f64 {
        &self.data[k * self.rows * self.cols + j * self.rows + i]
    }
}

impl std::ops::IndexMut<(usize, usize, usize)> for Tensor3 {
    fn index_mut(&mut self, (i, j, k): (usize, usize, usize)) -> &mut f64 {
        &mut self.data[k * self.rows * self.cols + j * self.rows + i]
    }
}

impl ComplexTensor3 {
    pub fn zeros(rows: usize, cols: usize, depth: usize) -> Self {
        ComplexTensor3 { rows, cols, depth, data: vec![Complex::default(); rows * cols * depth] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.depth)
    }

    pub fn data(&self) -> &[Complex<f64>] {
        &self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> Complex<f64> {
        self.data[k * self.rows * self.cols + j * self.rows + i]
    }

    pub fn face(&self, k: usize) -> &[Complex<f64>] {
        let fl = self.rows * self.cols;
        &self.data[k * fl..(k + 1) * fl]
    }

    pub fn face_mut(&mut self, k: usize) -> &mut [Complex<f64>] {
        let fl = self.rows * self.cols;
        &mut self.data[k * fl..(k + 1) * fl]
    }

    /// Conjugate-transposes every face in place metadata-wise: returns the
    /// tensor whose face `k` is `self.face(k)^H`. This is the transform-domain
    /// image of the t-transpose.
    pub fn conj_transpose_faces(&self) -> ComplexTensor3 {
        let mut out = ComplexTensor3::zeros(self.cols, self.rows, self.depth);
        for k in 0..self.depth {
            for j in 0..self.cols {
                for i in 0..self.rows {
                    let v = self.at(i, j, k).conj();
                    out.data[k * out.rows * out.cols + i * out.rows + j] = v;
                }
            }
        }
        out
    }
}

/// Forward transform along the third dimension, tube by tube.
pub fn fft3(t: &Tensor3) -> ComplexTensor3 {
    let (l, m, n) = t.dims();
    let plan = fft::plan(n);
    let mut out = ComplexTensor3::zeros(l, m, n);
    let stride = l * m;
    let mut buf = vec![Complex::default(); n];
    let mut scratch = Vec::new();
    for j in 0..m {
        for i in 0..l {
            let base = j * l + i;
            for k in 0..n {
                buf[k] = Complex::new(t.data[k * stride + base], 0.0);
            }
            fft::forward(&plan, &mut buf, &mut scratch);
            for k in 0..n {
                out.data[k * stride + base] = buf[k];
            }
        }
    }
    out
}

/// Inverse transform along the third dimension without discarding the
/// imaginary part.
pub fn ifft3_complex(t: &ComplexTensor3) -> ComplexTensor3 {
    let (l, m, n) = t.dims();
    let plan = fft::plan(n);
    let mut out = ComplexTensor3::zeros(l, m, n);
    let stride = l * m;
    let mut buf = vec![Complex::default(); n];
    let mut scratch = Vec::new();
    for j in 0..m {
        for i in 0..l {
            let base = j * l + i;
            for k in 0..n {
                buf[k] = t.data[k * stride + base];
            }
            fft::inverse(&plan, &mut buf, &mut scratch);
            for k in 0..n {
                out.data[k * stride + base] = buf[k];
            }
        }
    }
    out
}

/// Relative imaginary-residue tolerance accepted when a transform-domain
/// result is mapped back to a real tensor.
pub const IMAG_RESIDUE_TOL: f64 = 1e-9;

/// Inverse transform that discards the imaginary part after asserting it is
/// negligible relative to the result scale.
pub fn ifft3(t: &ComplexTensor3) -> Result<Tensor3> {
    let c = ifft3_complex(t);
    let mut max_im = 0.0f64;
    let mut max_re = 0.0f64;
    for v in &c.data {
        max_im = max_im.max(v.im.abs());
        max_re = max_re.max(v.re.abs());
    }
    let tol = IMAG_RESIDUE_TOL * (1.0 + max_re);
    if max_im > tol {
        return Err(Error::Numeric(format!(
            "imaginary residue {max_im:.3e} exceeds {tol:.3e}; transform-domain data is corrupt"
        )));
    }
    let data = c.data.iter().map(|v| v.re).collect();
    Ok(Tensor3 { rows: c.rows, cols: c.cols, depth: c.depth, data })
}

/// Stacks the frontal slices into an `ln x m` block column.
pub fn unfold(t: &Tensor3) -> DMatrix<f64> {
    let (l, m, n) = t.dims();
    DMatrix::from_fn(l * n, m, |r, c| t.at(r % l, c, r / l))
}

/// Inverse of [`unfold`]: reshapes an `ln x m` block column back into a tensor
/// with `n` frontal slices of `l` rows each.
pub fn fold(m: &DMatrix<f64>, l: usize, n: usize) -> Result<Tensor3> {
    if l == 0 || n == 0 || m.nrows() != l * n {
        return Err(Error::shape(format!(
            "fold: {} rows not divisible as {}x{}",
            m.nrows(),
            l,
            n
        )));
    }
    let cols = m.ncols();
    Ok(Tensor3::from_fn(l, cols, n, |i, j, k| m[(k * l + i, j)]))
}

/// Guard for oracle paths that materialize the block-circulant.
const CIRC_MAX_SCALARS: usize = 100_000_000;

/// Block-circulant matrix of the frontal slices: block `(r, c)` is frontal
/// slice `(r - c) mod n`. Its first block column is `unfold(t)`.
pub fn circ(t: &Tensor3) -> DMatrix<f64> {
    let (l, m, n) = t.dims();
    assert!(
        l * n * m * n <= CIRC_MAX_SCALARS,
        "circ: refusing to materialize {} scalars",
        l * n * m * n
    );
    DMatrix::from_fn(l * n, m * n, |r, c| {
        let (br, bc) = (r / l, c / m);
        let k = (br + n - bc) % n;
        t.at(r % l, c % m, k)
    })
}

fn check_tprod_dims(a: &Tensor3, b: &Tensor3) -> Result<()> {
    if a.cols != b.rows || a.depth != b.depth {
        return Err(Error::shape(format!(
            "t-product: {:?} * {:?} do not conform",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Reference t-product through the explicit block-circulant. Quadratic in the
/// tubal depth; test oracle only.
pub fn tprod_naive(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    check_tprod_dims(a, b)?;
    let c = circ(a) * unfold(b);
    fold(&c, a.rows, a.depth)
}

/// Multiplies two column-major faces: `out (l x m) = a (l x p) * b (p x m)`.
/// Accumulation over the inner index runs in ascending order so results do not
/// depend on how faces are scheduled.
pub(crate) fn face_matmul(
    a: &[Complex<f64>],
    l: usize,
    p: usize,
    b: &[Complex<f64>],
    m: usize,
    out: &mut [Complex<f64>],
) {
    debug_assert_eq!(a.len(), l * p);
    debug_assert_eq!(b.len(), p * m);
    debug_assert_eq!(out.len(), l * m);
    out.fill(Complex::default());
    for j in 0..m {
        let ocol = &mut out[j * l..(j + 1) * l];
        for t in 0..p {
            let coef = b[j * p + t];
            let acol = &a[t * l..(t + 1) * l];
            for i in 0..l {
                ocol[i] += coef * acol[i];
            }
        }
    }
}

/// Facewise product of two transform-domain tensors. Faces are independent and
/// run in parallel.
pub fn facewise_mul(a: &ComplexTensor3, b: &ComplexTensor3) -> Result<ComplexTensor3> {
    if a.cols != b.rows || a.depth != b.depth {
        return Err(Error::shape(format!(
            "facewise product: {:?} * {:?} do not conform",
            a.dims(),
            b.dims()
        )));
    }
    let (l, p, n) = a.dims();
    let m = b.cols;
    let mut out = ComplexTensor3::zeros(l, m, n);
    out.data
        .par_chunks_mut(l * m)
        .enumerate()
        .for_each(|(k, face)| face_matmul(a.face(k), l, p, b.face(k), m, face));
    Ok(out)
}

/// The t-product, computed facewise in the transform domain.
pub fn tprod(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    check_tprod_dims(a, b)?;
    let ahat = fft3(a);
    let bhat = fft3(b);
    let chat = facewise_mul(&ahat, &bhat)?;
    ifft3(&chat)
}

/// Tensor transpose: every frontal slice is transposed, slice 1 stays put and
/// slices `2..n` reverse order, so that `circ(ttranspose(a)) = circ(a)^T`.
pub fn ttranspose(a: &Tensor3) -> Tensor3 {
    let (l, m, n) = a.dims();
    Tensor3::from_fn(m, l, n, |i, j, k| {
        let src_k = if k == 0 { 0 } else { n - k };
        a.at(j, i, src_k)
    })
}

pub fn fro_norm(a: &Tensor3) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn sum_norm(a: &Tensor3) -> f64 {
    a.data.iter().map(|v| v.abs()).sum()
}

/// Frobenius inner product; equals `trace((a^T * b)^(1))`.
pub fn inner(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    a.same_dims(b, "inner product")?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// Rotates an `l x 1 x n` lateral slice into an `l x n` matrix.
pub fn squeeze(t: &Tensor3) -> Result<DMatrix<f64>> {
    if t.cols != 1 {
        return Err(Error::shape(format!("squeeze: middle dim is {}, not 1", t.cols)));
    }
    Ok(DMatrix::from_fn(t.rows, t.depth, |i, k| t.at(i, 0, k)))
}

/// Inverse of [`squeeze`]: stands an `l x n` matrix up as an `l x 1 x n` slab.
pub fn twist(m: &DMatrix<f64>) -> Tensor3 {
    Tensor3::from_fn(m.nrows(), 1, m.ncols(), |i, _, k| m[(i, k)])
}

/// Tensor pseudoinverse: facewise Moore-Penrose pseudoinverse in the transform
/// domain, then the inverse transform.
pub fn tpinv(d: &Tensor3) -> Result<Tensor3> {
    let (p, s, q) = d.dims();
    let dhat = fft3(d);
    let mut out = ComplexTensor3::zeros(s, p, q);
    for k in 0..q {
        let face = DMatrix::from_column_slice(p, s, dhat.face(k));
        let svd = face.svd(true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let tol = f64::EPSILON * p.max(s) as f64 * smax;
        let pinv = svd
            .pseudo_inverse(tol)
            .map_err(|e| Error::Numeric(format!("facewise pseudoinverse failed: {e}")))?;
        out.face_mut(k).copy_from_slice(pinv.as_slice());
    }
    ifft3(&out)
}

pub fn hadamard(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    a.same_dims(b, "hadamard")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Tensor3::from_data(a.rows, a.cols, a.depth, data)
}

/// `alpha * a + b`.
pub fn axpy(alpha: f64, a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    a.same_dims(b, "axpy")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| alpha * x + y).collect();
    Tensor3::from_data(a.rows, a.cols, a.depth, data)
}

pub fn scale(alpha: f64, a: &Tensor3) -> Tensor3 {
    let data = a.data.iter().map(|x| alpha * x).collect();
    Tensor3 { rows: a.rows, cols: a.cols, depth: a.depth, data }
}

/// Entrywise `max(entry, floor)`.
pub fn nonneg_clamp(a: &Tensor3, floor: f64) -> Tensor3 {
    let data = a.data.iter().map(|x| x.max(floor)).collect();
    Tensor3 { rows: a.rows, cols: a.cols, depth: a.depth, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_tensor(rng: &mut impl Rng, l: usize, m: usize, n: usize) -> Tensor3 {
        Tensor3::from_fn(l, m, n, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    fn rel_close(a: &Tensor3, b: &Tensor3, tol: f64) -> bool {
        let diff: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        diff <= tol * (1.0 + fro_norm(b))
    }

    #[test]
    fn unfold_smallest_case() {
        // faces [[1,2]] and [[3,4]] stack into [[1,2],[3,4]]
        let t = Tensor3::from_fn(1, 2, 2, |_, j, k| (k * 2 + j) as f64 + 1.0);
        let u = unfold(&t);
        assert_eq!(u, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn fold_unfold_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_tensor(&mut rng, 3, 4, 5);
        let back = fold(&unfold(&t), 3, 5).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn fold_rejects_bad_row_count() {
        let m = DMatrix::<f64>::zeros(7, 2);
        assert!(matches!(fold(&m, 2, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn unfold_of_two_face_dictionary() {
        // 2x5x2 dictionary whose unfold is a hand-checkable 4x5 matrix
        let d = golden_dictionary();
        let expected = DMatrix::from_row_slice(
            4,
            5,
            &[
                1.0, 0.0, 0.0, 0.0, 0.25, //
                0.0, 1.0, 0.0, 0.0, 0.5, //
                0.0, 0.0, 1.0, 0.0, 0.75, //
                0.0, 0.0, 0.0, 1.0, 1.0,
            ],
        );
        assert_eq!(unfold(&d), expected);
    }

    pub(crate) fn golden_dictionary() -> Tensor3 {
        let mat = DMatrix::from_row_slice(
            4,
            5,
            &[
                1.0, 0.0, 0.0, 0.0, 0.25, //
                0.0, 1.0, 0.0, 0.0, 0.5, //
                0.0, 0.0, 1.0, 0.0, 0.75, //
                0.0, 0.0, 0.0, 1.0, 1.0,
            ],
        );
        fold(&mat, 2, 2).unwrap()
    }

    #[test]
    fn circ_single_face_is_the_face() {
        let t = Tensor3::from_fn(2, 3, 1, |i, j, _| (i * 3 + j) as f64);
        let c = circ(&t);
        assert_eq!(c, DMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64));
    }

    #[test]
    fn circ_two_faces_layout() {
        let t = Tensor3::from_fn(1, 1, 2, |_, _, k| (k + 1) as f64);
        let c = circ(&t);
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
    }

    #[test]
    fn circ_times_unfolded_identity_reproduces_unfold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_tensor(&mut rng, 2, 2, 3);
        let eye = Tensor3::identity(2, 3);
        let prod = circ(&t) * unfold(&eye);
        assert_eq!(prod, unfold(&t));
    }

    #[test]
    fn tprod_naive_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_tensor(&mut rng, 3, 2, 4);
        let eye = Tensor3::identity(3, 4);
        let c = tprod_naive(&eye, &b).unwrap();
        assert!(rel_close(&c, &b, 1e-15));
    }

    #[test]
    fn golden_dictionary_times_tube_coefficients() {
        // both faces of the 5x1x2 coefficient are [1/3,0,0,0,2/3]^T; the
        // product is the all-ones 2x2 patch stood up as a lateral slice
        let d = golden_dictionary();
        let mut c = Tensor3::zeros(5, 1, 2);
        for k in 0..2 {
            *c.at_mut(0, 0, k) = 1.0 / 3.0;
            *c.at_mut(4, 0, k) = 2.0 / 3.0;
        }
        let prod = tprod_naive(&d, &c).unwrap();
        let expected = twist(&DMatrix::from_element(2, 2, 1.0));
        for (x, y) in prod.data().iter().zip(expected.data()) {
            assert!((x - y).abs() <= 1e-14);
        }
        assert!((sum_norm(&c) - 2.0).abs() <= 1e-14);
    }

    #[test]
    fn tprod_matches_naive_on_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..25 {
            let l = rng.gen_range(1..5);
            let p = rng.gen_range(1..5);
            let m = rng.gen_range(1..5);
            let n = rng.gen_range(1..6);
            let a = random_tensor(&mut rng, l, p, n);
            let b = random_tensor(&mut rng, p, m, n);
            let fast = tprod(&a, &b).unwrap();
            let slow = tprod_naive(&a, &b).unwrap();
            let num = fro_norm(&axpy(-1.0, &slow, &fast).unwrap());
            assert!(num <= 1e-10 * (1.0 + fro_norm(&slow)));
        }
    }

    #[test]
    fn tprod_identity_left() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_tensor(&mut rng, 4, 3, 5);
        let eye = Tensor3::identity(4, 5);
        let c = tprod(&eye, &b).unwrap();
        assert!(rel_close(&c, &b, 1e-12));
    }

    #[test]
    fn tprod_rejects_mismatched_shapes() {
        let a = Tensor3::zeros(2, 3, 2);
        let b = Tensor3::zeros(4, 2, 2);
        assert!(matches!(tprod(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn tubes_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for n in 1..8 {
            let a = random_tensor(&mut rng, 1, 1, n);
            let b = random_tensor(&mut rng, 1, 1, n);
            let ab = tprod(&a, &b).unwrap();
            let ba = tprod(&b, &a).unwrap();
            assert!(rel_close(&ab, &ba, 1e-12));
        }
    }

    #[test]
    fn tprod_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..10 {
            let a = random_tensor(&mut rng, 3, 2, 4);
            let b = random_tensor(&mut rng, 2, 4, 4);
            let c = random_tensor(&mut rng, 4, 2, 4);
            let left = tprod(&tprod(&a, &b).unwrap(), &c).unwrap();
            let right = tprod(&a, &tprod(&b, &c).unwrap()).unwrap();
            assert!(rel_close(&left, &right, 1e-9));
        }
    }

    #[test]
    fn ttranspose_single_face_is_matrix_transpose() {
        let t = Tensor3::from_fn(2, 3, 1, |i, j, _| (i * 3 + j) as f64);
        let tt = ttranspose(&t);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(tt.at(j, i, 0), t.at(i, j, 0));
            }
        }
    }

    #[test]
    fn ttranspose_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let t = random_tensor(&mut rng, 3, 4, 5);
        assert_eq!(ttranspose(&ttranspose(&t)), t);
    }

    #[test]
    fn ttranspose_matches_circ_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let t = random_tensor(&mut rng, 2, 3, 4);
        let lhs = circ(&ttranspose(&t));
        let rhs = circ(&t).transpose();
        assert!((lhs - rhs).abs().max() <= 1e-14);
    }

    #[test]
    fn norms_of_zero_tensor() {
        let t = Tensor3::zeros(2, 3, 4);
        assert_eq!(fro_norm(&t), 0.0);
        assert_eq!(sum_norm(&t), 0.0);
    }

    #[test]
    fn inner_is_elementwise_sum_and_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let a = random_tensor(&mut rng, 3, 2, 4);
        let b = random_tensor(&mut rng, 3, 2, 4);
        let got = inner(&a, &b).unwrap();
        let oracle: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        assert!((got - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
        // trace of the first frontal slice of a^T * b gives the same number
        let atb = tprod_naive(&ttranspose(&a), &b).unwrap();
        let trace: f64 = (0..2).map(|i| atb.at(i, i, 0)).sum();
        assert!((got - trace).abs() <= 1e-12 * (1.0 + got.abs()));
        // self inner product is the squared Frobenius norm
        let self_inner = inner(&a, &a).unwrap();
        assert!((self_inner - fro_norm(&a).powi(2)).abs() <= 1e-12 * (1.0 + self_inner));
    }

    #[test]
    fn inner_rejects_mismatched_dims() {
        let a = Tensor3::zeros(2, 2, 2);
        let b = Tensor3::zeros(2, 2, 3);
        assert!(matches!(inner(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn squeeze_twist_round_trip() {
        let t = Tensor3::from_fn(2, 1, 2, |i, _, k| (k * 2 + i) as f64 + 1.0);
        let m = squeeze(&t).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
        assert_eq!(twist(&m), t);

        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let t = random_tensor(&mut rng, 5, 1, 7);
        assert_eq!(twist(&squeeze(&t).unwrap()), t);
    }

    #[test]
    fn squeeze_rejects_wide_tensors() {
        let t = Tensor3::zeros(2, 2, 2);
        assert!(matches!(squeeze(&t), Err(Error::Shape(_))));
    }

    #[test]
    fn lateral_slices_expand_through_tube_circulants() {
        // column j of A*B decomposes as sum_i squeeze(A_i) . circ(b_ij^T)
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let a = random_tensor(&mut rng, 3, 2, 4);
        let b = random_tensor(&mut rng, 2, 2, 4);
        let c = tprod(&a, &b).unwrap();
        for j in 0..2 {
            let mut acc = DMatrix::<f64>::zeros(3, 4);
            for i in 0..2 {
                let ai = Tensor3::from_fn(3, 1, 4, |r, _, k| a.at(r, i, k));
                let tube = Tensor3::from_fn(1, 1, 4, |_, _, k| b.at(i, j, k));
                acc += squeeze(&ai).unwrap() * circ(&ttranspose(&tube));
            }
            let cj = Tensor3::from_fn(3, 1, 4, |r, _, k| c.at(r, j, k));
            let got = squeeze(&cj).unwrap();
            assert!((got - acc).abs().max() <= 1e-10);
        }
    }

    #[test]
    fn tpinv_of_identity() {
        let eye = Tensor3::identity(3, 4);
        let p = tpinv(&eye).unwrap();
        let diff = fro_norm(&axpy(-1.0, &eye, &p).unwrap());
        assert!(diff <= 1e-12);
    }

    #[test]
    fn tpinv_square_single_face_is_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let t = fold(&m, 2, 1).unwrap();
        let p = tpinv(&t).unwrap();
        let prod = tprod(&t, &p).unwrap();
        let eye = Tensor3::identity(2, 1);
        assert!(fro_norm(&axpy(-1.0, &eye, &prod).unwrap()) <= 1e-12);
    }

    #[test]
    fn tpinv_penrose_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let d = random_tensor(&mut rng, 4, 6, 3);
        let p = tpinv(&d).unwrap();
        let dpd = tprod(&tprod(&d, &p).unwrap(), &d).unwrap();
        let diff = fro_norm(&axpy(-1.0, &d, &dpd).unwrap());
        assert!(diff <= 1e-8 * (1.0 + fro_norm(&d)));
    }

    #[test]
    fn elementwise_kernels() {
        let a = Tensor3::from_fn(1, 2, 1, |_, j, _| if j == 0 { -1.0 } else { 2.0 });
        let ones = Tensor3::ones(1, 2, 1);
        assert_eq!(hadamard(&a, &ones).unwrap(), a);
        let b = Tensor3::from_fn(1, 2, 1, |_, j, _| j as f64);
        assert_eq!(axpy(0.0, &a, &b).unwrap(), b);
        let clamped = nonneg_clamp(&a, 0.0);
        assert_eq!(clamped.data(), &[0.0, 2.0]);
        assert_eq!(scale(2.0, &b).data(), &[0.0, 2.0]);
    }

    #[test]
    fn fft_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        for n in [1usize, 2, 3, 5, 8, 12] {
            let t = random_tensor(&mut rng, 3, 2, n);
            let back = ifft3(&fft3(&t)).unwrap();
            assert!(rel_close(&back, &t, 1e-12));
        }
    }
}
