//! On-disk formats.
//!
//! Tensors: `T3D1` (magic, three u64 LE dims, f64 LE payload in frontal-slice
//! major, column-major order). Dictionaries: `TDCT1`, same payload with dims
//! `p, s, q`. Sparse coefficients: `TCOF1` (dims `s, M, q`, entry count, then
//! `(i, j, k, value)` records). Images: PGM (P5/P2) and PPM (P6/P3), maxval
//! 255 or 65535, normalized to [0,1] on load and re-quantized round-half-up
//! on save. All parsers fail with the byte offset of the offending data.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::patch::{ImageGray, ImageRgb};
use crate::tensor::Tensor3;

const TENSOR_MAGIC: &[u8] = b"T3D1";
const DICT_MAGIC: &[u8] = b"TDCT1";
const COEFF_MAGIC: &[u8] = b"TCOF1";

/// Entries at or below this magnitude are dropped by the sparse coefficient
/// writer; the same cutoff defines "nonzero" for compression accounting.
pub const SPARSE_EPS: f64 = crate::NNZ_EPS;

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                format!("unexpected end of file while reading {what}"),
                self.buf.len() as u64,
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64_le(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64_le(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let got = self.take(magic.len(), "magic bytes")?;
        if got != magic {
            return Err(Error::format(
                format!(
                    "bad magic: expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(got)
                ),
                0,
            ));
        }
        Ok(())
    }

    fn expect_eof(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                format!("{} trailing bytes after payload", self.buf.len() - self.pos),
                self.offset(),
            ));
        }
        Ok(())
    }
}

fn checked_dims(l: u64, m: u64, n: u64, offset: u64) -> Result<(usize, usize, usize)> {
    let too_big = |v: u64| v == 0 || v > u32::MAX as u64;
    if too_big(l) || too_big(m) || too_big(n) {
        return Err(Error::format(format!("implausible dims {l}x{m}x{n}"), offset));
    }
    let (l, m, n) = (l as usize, m as usize, n as usize);
    l.checked_mul(m)
        .and_then(|lm| lm.checked_mul(n))
        .ok_or_else(|| Error::format(format!("dims {l}x{m}x{n} overflow"), offset))?;
    Ok((l, m, n))
}

fn write_tensor_with_magic(path: &Path, t: &Tensor3, magic: &[u8]) -> Result<()> {
    let (l, m, n) = t.dims();
    let mut out = Vec::with_capacity(magic.len() + 24 + t.len() * 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(l as u64).to_le_bytes());
    out.extend_from_slice(&(m as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_tensor_with_magic(path: &Path, magic: &[u8]) -> Result<Tensor3> {
    let buf = fs::read(path)?;
    let mut cur = Cursor::new(&buf);
    cur.expect_magic(magic)?;
    let dims_at = cur.offset();
    let l = cur.u64_le("dims")?;
    let m = cur.u64_le("dims")?;
    let n = cur.u64_le("dims")?;
    let (l, m, n) = checked_dims(l, m, n, dims_at)?;
    let total = l * m * n;
    let payload = cur.take(total * 8, "tensor payload")?;
    let mut data = Vec::with_capacity(total);
    for chunk in payload.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    cur.expect_eof()?;
    Tensor3::from_data(l, m, n, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor3) -> Result<()> {
    write_tensor_with_magic(path.as_ref(), t, TENSOR_MAGIC)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    read_tensor_with_magic(path.as_ref(), TENSOR_MAGIC)
}

pub fn write_dict(path: impl AsRef<Path>, d: &Tensor3) -> Result<()> {
    write_tensor_with_magic(path.as_ref(), d, DICT_MAGIC)
}

pub fn read_dict(path: impl AsRef<Path>) -> Result<Tensor3> {
    read_tensor_with_magic(path.as_ref(), DICT_MAGIC)
}

/// Writes coefficients sparsely: entries with `|value| > SPARSE_EPS`, in
/// ascending `(k, j, i)` order (the tensor's memory order).
pub fn write_coeffs(path: impl AsRef<Path>, c: &Tensor3) -> Result<()> {
    let (s, m, q) = c.dims();
    if s > u32::MAX as usize || m > u32::MAX as usize || q > u32::MAX as usize {
        return Err(Error::shape("coefficient dims exceed u32 index range"));
    }
    let mut records = Vec::new();
    for k in 0..q {
        for j in 0..m {
            for i in 0..s {
                let v = c.at(i, j, k);
                if v.abs() > SPARSE_EPS {
                    records.push((i as u32, j as u32, k as u32, v));
                }
            }
        }
    }
    let mut out = Vec::with_capacity(COEFF_MAGIC.len() + 32 + records.len() * 20);
    out.extend_from_slice(COEFF_MAGIC);
    for d in [s, m, q] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for (i, j, k, v) in records {
        out.extend_from_slice(&i.to_le_bytes());
        out.extend_from_slice(&j.to_le_bytes());
        out.extend_from_slice(&k.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_coeffs(path: impl AsRef<Path>) -> Result<Tensor3> {
    let buf = fs::read(path.as_ref())?;
    let mut cur = Cursor::new(&buf);
    cur.expect_magic(COEFF_MAGIC)?;
    let dims_at = cur.offset();
    let s = cur.u64_le("dims")?;
    let m = cur.u64_le("dims")?;
    let q = cur.u64_le("dims")?;
    let (s, m, q) = checked_dims(s, m, q, dims_at)?;
    let count_at = cur.offset();
    let count = cur.u64_le("entry count")?;
    if count > (s * m * q) as u64 {
        return Err(Error::format(
            format!("entry count {count} exceeds tensor capacity {}", s * m * q),
            count_at,
        ));
    }
    let mut t = Tensor3::zeros(s, m, q);
    for _ in 0..count {
        let rec_at = cur.offset();
        let i = cur.u32_le("entry index")? as usize;
        let j = cur.u32_le("entry index")? as usize;
        let k = cur.u32_le("entry index")? as usize;
        let v = cur.f64_le("entry value")?;
        if i >= s || j >= m || k >= q {
            return Err(Error::format(
                format!("entry index ({i},{j},{k}) outside {s}x{m}x{q}"),
                rec_at,
            ));
        }
        *t.at_mut(i, j, k) = v;
    }
    cur.expect_eof()?;
    Ok(t)
}

fn is_pnm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Reads one whitespace/comment-delimited ASCII token from a PNM header.
fn pnm_token<'a>(cur: &mut Cursor<'a>, what: &str) -> Result<&'a [u8]> {
    loop {
        match cur.buf.get(cur.pos) {
            None => {
                return Err(Error::format(
                    format!("unexpected end of file while reading {what}"),
                    cur.offset(),
                ))
            }
            Some(b'#') => {
                while cur.pos < cur.buf.len() && cur.buf[cur.pos] != b'\n' {
                    cur.pos += 1;
                }
            }
            Some(&b) if is_pnm_space(b) => cur.pos += 1,
            Some(_) => break,
        }
    }
    let start = cur.pos;
    while cur.pos < cur.buf.len() && !is_pnm_space(cur.buf[cur.pos]) && cur.buf[cur.pos] != b'#' {
        cur.pos += 1;
    }
    Ok(&cur.buf[start..cur.pos])
}

fn pnm_number(cur: &mut Cursor<'_>, what: &str) -> Result<usize> {
    let at = cur.offset();
    let tok = pnm_token(cur, what)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::format(format!("invalid {what}: {:?}", String::from_utf8_lossy(tok)), at))
}

struct PnmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
}

fn read_pnm_header(cur: &mut Cursor<'_>) -> Result<PnmHeader> {
    let magic = cur.take(2, "magic bytes")?;
    let magic = [magic[0], magic[1]];
    if magic[0] != b'P' || !matches!(magic[1], b'2' | b'3' | b'5' | b'6') {
        return Err(Error::format(
            format!("not a supported PNM type: {:?}", String::from_utf8_lossy(&magic)),
            0,
        ));
    }
    let width = pnm_number(cur, "width")?;
    let height = pnm_number(cur, "height")?;
    let maxval_at = cur.offset();
    let maxval = pnm_number(cur, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format("zero image dimension".to_string(), 2));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(format!("unsupported maxval {maxval}"), maxval_at));
    }
    if matches!(magic[1], b'5' | b'6') {
        // single whitespace byte separates maxval from the raster
        let b = cur.take(1, "raster separator")?;
        if !is_pnm_space(b[0]) {
            return Err(Error::format("missing whitespace before raster".to_string(), cur.offset() - 1));
        }
    }
    Ok(PnmHeader { magic, width, height, maxval })
}

/// Reads `n` raster samples, binary or plain depending on the magic.
fn read_samples(cur: &mut Cursor<'_>, hdr: &PnmHeader, n: usize) -> Result<Vec<f64>> {
    let maxval = hdr.maxval as f64;
    let mut out = Vec::with_capacity(n);
    match hdr.magic[1] {
        b'5' | b'6' => {
            if hdr.maxval < 256 {
                let raw = cur.take(n, "raster")?;
                out.extend(raw.iter().map(|&b| b as f64 / maxval));
            } else {
                let raw = cur.take(2 * n, "raster")?;
                for pair in raw.chunks_exact(2) {
                    // two-byte samples are big-endian
                    let v = u16::from_be_bytes([pair[0], pair[1]]);
                    out.push(v as f64 / maxval);
                }
            }
        }
        _ => {
            for _ in 0..n {
                let at = cur.offset();
                let v = pnm_number(cur, "raster sample")?;
                if v > hdr.maxval {
                    return Err(Error::format(format!("sample {v} exceeds maxval {}", hdr.maxval), at));
                }
                out.push(v as f64 / maxval);
            }
        }
    }
    Ok(out)
}

/// A decoded image file: grayscale (PGM) or color (PPM).
pub enum ImageFile {
    Gray(ImageGray),
    Rgb(ImageRgb),
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageFile> {
    let buf = fs::read(path.as_ref())?;
    let mut cur = Cursor::new(&buf);
    let hdr = read_pnm_header(&mut cur)?;
    let (w, h) = (hdr.width, hdr.height);
    match hdr.magic[1] {
        b'2' | b'5' => {
            let samples = read_samples(&mut cur, &hdr, w * h)?;
            // raster is row-major
            let img = ImageGray::from_fn(h, w, |i, j| samples[i * w + j]);
            Ok(ImageFile::Gray(img))
        }
        _ => {
            let samples = read_samples(&mut cur, &hdr, 3 * w * h)?;
            let plane = |c: usize| ImageGray::from_fn(h, w, |i, j| samples[3 * (i * w + j) + c]);
            Ok(ImageFile::Rgb(ImageRgb::new([plane(0), plane(1), plane(2)])?))
        }
    }
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<ImageGray> {
    match read_image(path)? {
        ImageFile::Gray(g) => Ok(g),
        ImageFile::Rgb(_) => Err(Error::format("expected grayscale PGM, found color PPM".to_string(), 0)),
    }
}

fn quantize(v: f64, maxval: usize) -> usize {
    // round half up; values clamp into [0, 1] first
    (v.clamp(0.0, 1.0) * maxval as f64).round() as usize
}

/// Writes a binary PGM (P5). `maxval` must be 255 or 65535.
pub fn write_pgm(path: impl AsRef<Path>, img: &ImageGray, maxval: usize) -> Result<()> {
    if maxval != 255 && maxval != 65535 {
        return Err(Error::Config(format!("maxval must be 255 or 65535, got {maxval}")));
    }
    let (h, w) = (img.rows(), img.cols());
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    for i in 0..h {
        for j in 0..w {
            let v = quantize(img.at(i, j), maxval);
            if maxval < 256 {
                out.push(v as u8);
            } else {
                out.extend_from_slice(&(v as u16).to_be_bytes());
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a plain-text PGM (P2).
pub fn write_pgm_plain(path: impl AsRef<Path>, img: &ImageGray, maxval: usize) -> Result<()> {
    if maxval != 255 && maxval != 65535 {
        return Err(Error::Config(format!("maxval must be 255 or 65535, got {maxval}")));
    }
    let (h, w) = (img.rows(), img.cols());
    let mut out = format!("P2\n{w} {h}\n{maxval}\n");
    for i in 0..h {
        let row: Vec<String> = (0..w).map(|j| quantize(img.at(i, j), maxval).to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out.into_bytes())?;
    Ok(())
}

/// Writes a binary PPM (P6).
pub fn write_ppm(path: impl AsRef<Path>, img: &ImageRgb, maxval: usize) -> Result<()> {
    if maxval != 255 && maxval != 65535 {
        return Err(Error::Config(format!("maxval must be 255 or 65535, got {maxval}")));
    }
    let (h, w) = (img.rows(), img.cols());
    let mut out = format!("P6\n{w} {h}\n{maxval}\n").into_bytes();
    for i in 0..h {
        for j in 0..w {
            for ch in &img.channels {
                let v = quantize(ch.at(i, j), maxval);
                if maxval < 256 {
                    out.push(v as u8);
                } else {
                    out.extend_from_slice(&(v as u16).to_be_bytes());
                }
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}
