//! Shared fixtures for the acceptance suite: a resolution-independent
//! synthetic scene family, trained reference dictionaries, patch-vector
//! helpers for the depth-1 baseline, and an independent descent oracle.

use std::sync::OnceLock;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use tenpatch::dict::{admm_learn, build_training_tensor, AdmmConfig};
use tenpatch::metrics::rel_err;
use tenpatch::mrnsd::{initial_guess, mrnsd_sparse, LinearOp, MrnsdConfig};
use tenpatch::patch::{depatchify, patchify, ImageGray, PatchGrid};
use tenpatch::tensor::{tprod, Tensor3};

pub const PATCH: usize = 8;
pub const ATOMS: usize = 16;
pub const RES: usize = 64;

/// A scene is a continuous field on the unit square, so the same content can
/// be rendered at any resolution.
#[derive(Clone)]
pub struct Scene {
    base: f64,
    blobs: Vec<(f64, f64, f64, f64)>,
    waves: Vec<(f64, f64, f64, f64)>,
    steps: Vec<(f64, f64, bool)>,
    gratings: Vec<Grating>,
}

/// Localized oriented texture; frequencies land at 4-10 pixel periods at the
/// 64 rendering so blur destroys them while an 8x8 patch basis can carry them.
#[derive(Clone)]
struct Grating {
    cx: f64,
    cy: f64,
    radius: f64,
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

impl Scene {
    pub fn sample(rng: &mut ChaCha8Rng) -> Scene {
        let base = rng.gen_range(0.35..0.55);
        let blobs = (0..rng.gen_range(2..5))
            .map(|_| {
                (
                    rng.gen_range(0.15..0.85),
                    rng.gen_range(0.15..0.85),
                    rng.gen_range(0.06..0.2),
                    rng.gen_range(-0.3..0.35),
                )
            })
            .collect();
        let waves = (0..rng.gen_range(1..3))
            .map(|_| {
                let k = rng.gen_range(2.0..7.0) * std::f64::consts::TAU;
                let ang: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                (
                    k * ang.cos(),
                    k * ang.sin(),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.04..0.12),
                )
            })
            .collect();
        let steps = (0..rng.gen_range(1..3))
            .map(|_| (rng.gen_range(0.2..0.8), rng.gen_range(-0.25..0.25), rng.gen()))
            .collect();
        let gratings = (0..rng.gen_range(2..5))
            .map(|_| {
                let freq = rng.gen_range(7.0..15.0) * std::f64::consts::TAU;
                let ang: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                Grating {
                    cx: rng.gen_range(0.15..0.85),
                    cy: rng.gen_range(0.15..0.85),
                    radius: rng.gen_range(0.1..0.3),
                    kx: freq * ang.cos(),
                    ky: freq * ang.sin(),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    amp: rng.gen_range(0.1..0.22),
                }
            })
            .collect();
        Scene { base, blobs, waves, steps, gratings }
    }

    pub fn render(&self, rows: usize, cols: usize) -> ImageGray {
        ImageGray::from_fn(rows, cols, |i, j| {
            let y = (i as f64 + 0.5) / rows as f64;
            let x = (j as f64 + 0.5) / cols as f64;
            let mut v = self.base;
            for &(cx, cy, r, a) in &self.blobs {
                let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                v += a * (-d2 / (2.0 * r * r)).exp();
            }
            for &(kx, ky, ph, a) in &self.waves {
                v += a * (kx * x + ky * y + ph).sin();
            }
            for &(at, a, vertical) in &self.steps {
                let t = if vertical { x } else { y };
                v += a * 0.5 * (1.0 + ((t - at) / 0.03).tanh());
            }
            for g in &self.gratings {
                let d2 = (x - g.cx) * (x - g.cx) + (y - g.cy) * (y - g.cy);
                let window = (-d2 / (2.0 * g.radius * g.radius)).exp();
                v += g.amp * window * (g.kx * x + g.ky * y + g.phase).sin();
            }
            v.clamp(0.0, 1.0)
        })
    }
}

fn scenes_from_seed(seed: u64, count: usize) -> Vec<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| Scene::sample(&mut rng)).collect()
}

pub fn train_scenes() -> Vec<Scene> {
    scenes_from_seed(0xC0FFEE, 10)
}

pub fn test_scenes() -> Vec<Scene> {
    scenes_from_seed(0xDECADE, 5)
}

pub fn train_tensor_dictionary(images: &[ImageGray], iters: usize, seed: u64) -> Tensor3 {
    let y = build_training_tensor(images, PATCH, PATCH).unwrap();
    let cfg = AdmmConfig { s: ATOMS, max_iters: iters, seed, ..Default::default() };
    let (d, _, _) = admm_learn(&y, &cfg).unwrap();
    d
}

static DICT: OnceLock<Tensor3> = OnceLock::new();

/// Dictionary learned once on the training corpus and shared across criteria.
pub fn reference_dictionary() -> &'static Tensor3 {
    DICT.get_or_init(|| {
        let images: Vec<ImageGray> =
            train_scenes().iter().map(|s| s.render(RES, RES)).collect();
        train_tensor_dictionary(&images, 150, 11)
    })
}

/// Encodes an image against a patch dictionary and reports the reconstruction
/// relative error.
pub fn encode_rel_err(d: &Tensor3, img: &ImageGray, iters: usize, lambda: f64) -> f64 {
    let (p, _, q) = d.dims();
    let grid = PatchGrid::new(img.rows(), img.cols(), p, q).unwrap();
    let y = patchify(img, p, q).unwrap();
    let c0 = initial_guess(d, grid.m(), 1e-8).unwrap();
    let cfg = MrnsdConfig { max_iters: iters, lambda, record_every: iters, ..Default::default() };
    let (c, _) = mrnsd_sparse(d, &y, &c0, &cfg).unwrap();
    let recon = depatchify(&tprod(d, &c).unwrap(), &grid).unwrap();
    rel_err(recon.data(), img.data()).unwrap()
}

/// Patches as vectorized columns (pq x M x 1), the classical matrix layout.
pub fn vec_patches(img: &ImageGray, p: usize, q: usize) -> Tensor3 {
    let grid = PatchGrid::new(img.rows(), img.cols(), p, q).unwrap();
    let t = patchify(img, p, q).unwrap();
    Tensor3::from_fn(p * q, grid.m(), 1, |i, j, _| t.at(i % p, j, i / p))
}

pub fn unvec_patches(t: &Tensor3, grid: &PatchGrid) -> ImageGray {
    let (p, q) = (grid.p, grid.q);
    let pt = Tensor3::from_fn(p, grid.m(), q, |i, j, k| t.at(k * p + i, j, 0));
    depatchify(&pt, grid).unwrap()
}

pub fn vec_patch_training(images: &[ImageGray], p: usize, q: usize) -> Tensor3 {
    let parts: Vec<Tensor3> = images.iter().map(|im| vec_patches(im, p, q)).collect();
    let total: usize = parts.iter().map(|t| t.cols()).sum();
    let mut y = Tensor3::zeros(p * q, total, 1);
    let mut at = 0;
    for part in &parts {
        for j in 0..part.cols() {
            y.copy_lateral_from(at + j, part, j).unwrap();
        }
        at += part.cols();
    }
    y
}

pub fn encode_rel_err_matrix(
    d: &Tensor3,
    img: &ImageGray,
    p: usize,
    q: usize,
    iters: usize,
    lambda: f64,
) -> f64 {
    let grid = PatchGrid::new(img.rows(), img.cols(), p, q).unwrap();
    let y = vec_patches(img, p, q);
    let c0 = initial_guess(d, grid.m(), 1e-8).unwrap();
    let cfg = MrnsdConfig { max_iters: iters, lambda, record_every: iters, ..Default::default() };
    let (c, _) = mrnsd_sparse(d, &y, &c0, &cfg).unwrap();
    let recon = unvec_patches(&tprod(d, &c).unwrap(), &grid);
    rel_err(recon.data(), img.data()).unwrap()
}

/// Plain matrix MRNSD written directly from the update formulas; the
/// reference for depth-1 equivalence. Column-major `a`, ascending-index dots.
pub fn matrix_mrnsd(
    rows: usize,
    cols: usize,
    a: &[f64],
    b: &[f64],
    x0: &[f64],
    iters: usize,
    floor: f64,
) -> Vec<f64> {
    let at = |i: usize, j: usize| a[j * rows + i];
    let matvec = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; rows];
        for (i, oi) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..cols {
                acc += at(i, j) * v[j];
            }
            *oi = acc;
        }
        out
    };
    let matvec_t = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; cols];
        for (j, oj) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..rows {
                acc += at(i, j) * v[i];
            }
            *oj = acc;
        }
        out
    };

    let mut x: Vec<f64> = x0.iter().map(|v| v.max(floor)).collect();
    // r and g are maintained by the standard step recurrences, recomputed
    // never: the descent is defined by them, not by fresh residuals.
    let mut r: Vec<f64> = matvec(&x).iter().zip(b).map(|(axi, bi)| bi - axi).collect();
    let mut g: Vec<f64> = matvec_t(&r).iter().map(|v| -v).collect();
    for _ in 0..iters {
        let s: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi * gi).collect();
        let sg: f64 = s.iter().zip(&g).map(|(u, v)| u * v).sum();
        if sg <= 0.0 {
            continue;
        }
        let w = matvec(&s);
        let wn: f64 = w.iter().zip(&w).map(|(u, v)| u * v).sum();
        if wn == 0.0 {
            break;
        }
        let theta = sg / wn;
        let mut feas = f64::INFINITY;
        for j in 0..cols {
            if s[j] > 0.0 {
                feas = feas.min(x[j] / s[j]);
            }
        }
        let alpha = theta.min(feas);
        for j in 0..cols {
            x[j] -= alpha * s[j];
        }
        for i in 0..rows {
            r[i] += alpha * w[i];
        }
        let atw = matvec_t(&w);
        for j in 0..cols {
            g[j] -= alpha * atw[j];
        }
    }
    x
}

/// Randomized adjoint-consistency probe at the stated relative tolerance.
pub fn probe20(op: &dyn LinearOp, seed: u64, tol: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let u: Vec<f64> = (0..op.domain_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..op.range_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut au = vec![0.0; op.range_len()];
        let mut atv = vec![0.0; op.domain_len()];
        op.apply(&u, &mut au).unwrap();
        op.adjoint(&v, &mut atv).unwrap();
        let lhs: f64 = au.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = atv.iter().zip(&u).map(|(a, b)| a * b).sum();
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        assert!((lhs - rhs).abs() <= tol * scale, "adjoint probe gap {}", (lhs - rhs).abs() / scale);
    }
}

/// Statistical variance of the pixels selected by `pick`.
pub fn region_variance(img: &ImageGray, pick: impl Fn(usize, usize) -> bool) -> f64 {
    let mut vals = Vec::new();
    for i in 0..img.rows() {
        for j in 0..img.cols() {
            if pick(i, j) {
                vals.push(img.at(i, j));
            }
        }
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64
}
