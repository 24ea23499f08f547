//! Dictionary learning by ADMM on the non-negative patch factorization.
//!
//! The objective `1/2 ||Y - U*V||^2 + lambda ||H||_sum` is split with the
//! constraints `U = D` (dictionary iterate, entries clamped to [0,1]) and
//! `V = H` (coefficients, non-negative and soft-thresholded). U and V are
//! ridge-regularized least-squares solves, facewise in the transform domain;
//! D and H are cheap projections; scaled dual ascent ties the pairs together.
//! Every face solve is independent, so faces run in parallel.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::patch::{patchify, ImageGray};
use crate::tensor::{axpy, fft3, fro_norm, ifft3, sum_norm, tprod, ComplexTensor3, Tensor3};

#[derive(Debug, Clone)]
pub struct AdmmConfig {
    /// Number of dictionary atoms (lateral slices).
    pub s: usize,
    /// Sparsity weight on the coefficient sum norm.
    pub lambda: f64,
    /// Augmented-Lagrangian penalty.
    pub rho: f64,
    pub max_iters: usize,
    /// Both primal residuals must fall below `tol * (1 + ||Y||_F)` to stop.
    pub tol: f64,
    /// Seeds the dictionary initialization (sampled training slices).
    pub seed: u64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig { s: 1, lambda: 1e-2, rho: 1.0, max_iters: 300, tol: 1e-4, seed: 0 }
    }
}

impl AdmmConfig {
    fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::Config("dictionary needs at least one atom".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be finite and > 0, got {}", self.rho)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmIterRecord {
    pub iter: usize,
    /// `1/2 ||Y - U*V||^2 + lambda ||H||_sum`.
    pub objective: f64,
    /// `||U - D||_F`.
    pub primal_d: f64,
    /// `||V - H||_F`.
    pub primal_h: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmReport {
    pub iterations: usize,
    pub converged: bool,
    pub wall_secs: f64,
    pub history: Vec<AdmmIterRecord>,
}

impl AdmmReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,objective,primal_d,primal_h\n");
        for r in &self.history {
            out.push_str(&format!("{},{},{},{}\n", r.iter, r.objective, r.primal_d, r.primal_h));
        }
        out
    }
}

/// Stacks the patches of each image, in image order, as lateral slices of one
/// training tensor. Images may differ in size as long as each tiles evenly.
pub fn build_training_tensor(images: &[ImageGray], p: usize, q: usize) -> Result<Tensor3> {
    if images.is_empty() {
        return Err(Error::shape("training set is empty"));
    }
    let parts: Vec<Tensor3> = images.iter().map(|img| patchify(img, p, q)).collect::<Result<_>>()?;
    let t: usize = parts.iter().map(|t| t.cols()).sum();
    let mut y = Tensor3::zeros(p, t, q);
    let mut at = 0;
    for part in &parts {
        for j in 0..part.cols() {
            y.copy_lateral_from(at + j, part, j)?;
        }
        at += part.cols();
    }
    Ok(y)
}

/// Entrywise clamp to [0,1]; the feasible dictionary set. Bounds every lateral
/// slice's Frobenius norm by sqrt(pq), removing the scaling ambiguity of the
/// factorization.
pub fn project_dict(d: &Tensor3) -> Tensor3 {
    let (p, s, q) = d.dims();
    let data = d.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor3::from_data(p, s, q, data).expect("dims unchanged")
}

/// Non-negative soft-threshold: entrywise `max(t - mu, 0)`.
pub fn shrink(t: &Tensor3, mu: f64) -> Result<Tensor3> {
    if !(mu >= 0.0) {
        return Err(Error::Config(format!("shrink threshold must be >= 0, got {mu}")));
    }
    let (l, m, n) = t.dims();
    let data = t.data().iter().map(|v| (v - mu).max(0.0)).collect();
    Tensor3::from_data(l, m, n, data)
}

fn face_matrix(t: &ComplexTensor3, k: usize) -> DMatrix<Complex<f64>> {
    DMatrix::from_column_slice(t.rows(), t.cols(), t.face(k))
}

fn assemble_faces(rows: usize, cols: usize, faces: Vec<DMatrix<Complex<f64>>>) -> ComplexTensor3 {
    let mut out = ComplexTensor3::zeros(rows, cols, faces.len());
    for (k, f) in faces.iter().enumerate() {
        out.face_mut(k).copy_from_slice(f.as_slice());
    }
    out
}

fn hermitian_solve(
    gram: DMatrix<Complex<f64>>,
    rhs: DMatrix<Complex<f64>>,
) -> Result<DMatrix<Complex<f64>>> {
    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::Divergence(
            "facewise system lost positive definiteness; reduce rho or rescale the training data"
                .into(),
        )
    })?;
    Ok(chol.solve(&rhs))
}

/// Learns a dictionary `D` (p x s x q, entries in [0,1]) and non-negative
/// coefficients `H` (s x t x q) from the training tensor `Y`.
pub fn admm_learn(y: &Tensor3, cfg: &AdmmConfig) -> Result<(Tensor3, Tensor3, AdmmReport)> {
    cfg.validate()?;
    let t0 = Instant::now();
    let (p, t, q) = y.dims();
    let s = cfg.s;
    if s > t {
        return Err(Error::shape(format!(
            "cannot learn {s} atoms from {t} training patches; need s <= t"
        )));
    }
    if y.data().iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Config("training tensor must be non-negative and finite".into()));
    }

    // dictionary starts from sampled training slices, coefficients flat
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks = rand::seq::index::sample(&mut rng, t, s).into_vec();
    let mut d = Tensor3::zeros(p, s, q);
    for (j, &src) in picks.iter().enumerate() {
        d.copy_lateral_from(j, y, src)?;
    }
    d = project_dict(&d);
    let mut h = Tensor3::from_fn(s, t, q, |_, _, _| 0.1);
    let mut v = h.clone();
    let mut dual_u = Tensor3::zeros(p, s, q);
    let mut dual_v = Tensor3::zeros(s, t, q);
    let mut u;

    let yhat = fft3(y);
    let rho = Complex::new(cfg.rho, 0.0);
    let stop_at = cfg.tol * (1.0 + fro_norm(y));

    let mut history = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=cfg.max_iters {
        iterations = k;

        // U-solve: U (V V^T + rho I) = Y V^T + rho (D - dual_u), facewise
        let vhat = fft3(&v);
        let dmu_hat = fft3(&axpy(-1.0, &dual_u, &d)?);
        let u_faces: Vec<DMatrix<Complex<f64>>> = (0..q)
            .into_par_iter()
            .map(|face| {
                let vf = face_matrix(&vhat, face);
                let yf = face_matrix(&yhat, face);
                let df = face_matrix(&dmu_hat, face);
                let mut gram = &vf * vf.adjoint();
                for i in 0..s {
                    gram[(i, i)] += rho;
                }
                let rhs = &yf * vf.adjoint() + df * rho;
                Ok(hermitian_solve(gram, rhs.adjoint())?.adjoint())
            })
            .collect::<Result<_>>()?;
        let uhat = assemble_faces(p, s, u_faces);
        u = ifft3(&uhat)?;

        // V-solve: (U^T U + rho I) V = U^T Y + rho (H - dual_v), facewise
        let hmv_hat = fft3(&axpy(-1.0, &dual_v, &h)?);
        let v_faces: Vec<DMatrix<Complex<f64>>> = (0..q)
            .into_par_iter()
            .map(|face| {
                let uf = face_matrix(&uhat, face);
                let yf = face_matrix(&yhat, face);
                let hf = face_matrix(&hmv_hat, face);
                let mut gram = uf.adjoint() * &uf;
                for i in 0..s {
                    gram[(i, i)] += rho;
                }
                let rhs = uf.adjoint() * yf + hf * rho;
                hermitian_solve(gram, rhs)
            })
            .collect::<Result<_>>()?;
        v = ifft3(&assemble_faces(s, t, v_faces))?;

        // projections and scaled dual ascent
        d = project_dict(&axpy(1.0, &dual_u, &u)?);
        h = shrink(&axpy(1.0, &dual_v, &v)?, cfg.lambda / cfg.rho)?;
        dual_u = axpy(-1.0, &d, &axpy(1.0, &u, &dual_u)?)?;
        dual_v = axpy(-1.0, &h, &axpy(1.0, &v, &dual_v)?)?;

        let fit = fro_norm(&axpy(-1.0, &tprod(&u, &v)?, y)?);
        let objective = 0.5 * fit * fit + cfg.lambda * sum_norm(&h);
        if !objective.is_finite() {
            return Err(Error::Divergence(format!(
                "objective became non-finite at iteration {k}; reduce rho or rescale the training data"
            )));
        }
        let primal_d = fro_norm(&axpy(-1.0, &d, &u)?);
        let primal_h = fro_norm(&axpy(-1.0, &h, &v)?);
        history.push(AdmmIterRecord { iter: k, objective, primal_d, primal_h });

        if primal_d < stop_at && primal_h < stop_at {
            converged = true;
            break;
        }
    }

    let report = AdmmReport { iterations, converged, wall_secs: t0.elapsed().as_secs_f64(), history };
    Ok((d, h, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::scale;
    use crate::NNZ_EPS;

    fn random_image(rng: &mut impl Rng, rows: usize, cols: usize) -> ImageGray {
        ImageGray::from_fn(rows, cols, |_, _| rng.gen_range(0.0..1.0))
    }

    fn random_nonneg(rng: &mut impl Rng, l: usize, m: usize, n: usize) -> Tensor3 {
        Tensor3::from_fn(l, m, n, |_, _, _| rng.gen_range(0.0..1.0))
    }

    fn rel_fit(y: &Tensor3, d: &Tensor3, h: &Tensor3) -> f64 {
        fro_norm(&axpy(-1.0, &tprod(d, h).unwrap(), y).unwrap()) / fro_norm(y)
    }

    #[test]
    fn training_tensor_single_image_is_patchify() {
        let mut rng = ChaCha8Rng::seed_from_u64(201);
        let img = random_image(&mut rng, 8, 8);
        let y = build_training_tensor(&[img.clone()], 4, 4).unwrap();
        assert_eq!(y, patchify(&img, 4, 4).unwrap());
    }

    #[test]
    fn training_tensor_blocks_preserve_image_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(203);
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        let y = build_training_tensor(&[a.clone(), b.clone(), a.clone()], 4, 4).unwrap();
        assert_eq!(y.dims(), (4, 12, 4));
        let ta = patchify(&a, 4, 4).unwrap();
        let tb = patchify(&b, 4, 4).unwrap();
        for j in 0..4 {
            for k in 0..4 {
                for i in 0..4 {
                    assert_eq!(y.at(i, j, k), ta.at(i, j, k));
                    assert_eq!(y.at(i, 4 + j, k), tb.at(i, j, k));
                    assert_eq!(y.at(i, 8 + j, k), ta.at(i, j, k));
                }
            }
        }
    }

    #[test]
    fn training_tensor_mixed_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(205);
        let a = random_image(&mut rng, 8, 8); // 4 patches
        let b = random_image(&mut rng, 4, 12); // 3 patches
        let y = build_training_tensor(&[a, b], 4, 4).unwrap();
        assert_eq!(y.dims(), (4, 7, 4));
    }

    #[test]
    fn training_tensor_rejects_bad_tiling() {
        let img = ImageGray::zeros(9, 8);
        assert!(build_training_tensor(&[img], 4, 4).is_err());
        assert!(build_training_tensor(&[], 4, 4).is_err());
    }

    #[test]
    fn projection_clamps_and_is_idempotent() {
        let d = Tensor3::from_data(1, 3, 1, vec![-0.5, 0.5, 1.5]).unwrap();
        let pd = project_dict(&d);
        assert_eq!(pd.data(), &[0.0, 0.5, 1.0]);
        assert_eq!(project_dict(&pd), pd);
    }

    #[test]
    fn projected_atoms_have_bounded_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(207);
        let (p, q) = (3, 4);
        let d = Tensor3::from_fn(p, 5, q, |_, _, _| rng.gen_range(-2.0..3.0));
        let pd = project_dict(&d);
        let bound = ((p * q) as f64).sqrt();
        for j in 0..5 {
            assert!(pd.lateral_fro_norm(j) <= bound + 1e-12);
        }
    }

    #[test]
    fn shrink_matches_definition() {
        let t = Tensor3::from_data(1, 2, 1, vec![0.3, 1.2]).unwrap();
        let s = shrink(&t, 0.5).unwrap();
        assert_eq!(s.data()[0], 0.0);
        assert!((s.data()[1] - 0.7).abs() < 1e-15);
        let neg = Tensor3::from_data(1, 2, 1, vec![-0.4, 0.4]).unwrap();
        assert_eq!(shrink(&neg, 0.0).unwrap().data(), &[0.0, 0.4]);
        assert!(shrink(&t, -0.1).is_err());
    }

    #[test]
    fn shrink_nnz_non_increasing_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(209);
        let t = Tensor3::from_fn(4, 5, 3, |_, _, _| rng.gen_range(-1.0..1.0));
        let mut prev = usize::MAX;
        for mu in [0.0, 0.1, 0.3, 0.6, 1.0] {
            let nnz = shrink(&t, mu).unwrap().data().iter().filter(|v| **v > NNZ_EPS).count();
            assert!(nnz <= prev);
            prev = nnz;
        }
    }

    #[test]
    fn rank_one_training_data_is_fit() {
        // every slice is the same patch, one atom suffices
        let mut rng = ChaCha8Rng::seed_from_u64(211);
        let patch = random_nonneg(&mut rng, 4, 1, 4);
        let mut y = Tensor3::zeros(4, 6, 4);
        for j in 0..6 {
            y.copy_lateral_from(j, &patch, 0).unwrap();
        }
        let cfg = AdmmConfig { s: 1, lambda: 0.0, seed: 1, ..Default::default() };
        let (d, h, _) = admm_learn(&y, &cfg).unwrap();
        let fit = rel_fit(&y, &d, &h);
        assert!(fit <= 0.05, "relative fit {fit}");
    }

    #[test]
    fn overcomplete_regime_fits_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(213);
        let y = random_nonneg(&mut rng, 3, 5, 2);
        let cfg = AdmmConfig { s: 5, lambda: 0.0, max_iters: 400, seed: 2, ..Default::default() };
        let (d, h, _) = admm_learn(&y, &cfg).unwrap();
        let fit = rel_fit(&y, &d, &h);
        assert!(fit <= 0.05, "relative fit {fit}");
    }

    #[test]
    fn outputs_satisfy_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(215);
        let y = random_nonneg(&mut rng, 4, 8, 3);
        let cfg = AdmmConfig { s: 5, lambda: 1e-2, max_iters: 80, seed: 3, ..Default::default() };
        let (d, h, report) = admm_learn(&y, &cfg).unwrap();
        assert!(d.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(h.data().iter().all(|&v| v >= 0.0));
        assert!(report.history.iter().all(|r| r.objective.is_finite()));
        // constraint projections hold at every prefix of the run too
        for iters in [1usize, 2, 5] {
            let cfg = AdmmConfig { max_iters: iters, ..cfg.clone() };
            let (d, h, _) = admm_learn(&y, &cfg).unwrap();
            assert!(d.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(h.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn same_seed_reproduces_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(217);
        let y = random_nonneg(&mut rng, 3, 6, 2);
        let cfg = AdmmConfig { s: 4, max_iters: 30, seed: 7, ..Default::default() };
        let (d1, h1, _) = admm_learn(&y, &cfg).unwrap();
        let (d2, h2, _) = admm_learn(&y, &cfg).unwrap();
        assert_eq!(d1.data(), d2.data());
        assert_eq!(h1.data(), h2.data());
    }

    #[test]
    fn sparsity_weight_thins_coefficients() {
        let lambdas = [0.0, 1e-2, 1e-1];
        let mut passes = 0;
        for trial in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + trial);
            let y = random_nonneg(&mut rng, 4, 8, 2);
            let counts: Vec<usize> = lambdas
                .iter()
                .map(|&lambda| {
                    let cfg = AdmmConfig {
                        s: 6,
                        lambda,
                        max_iters: 120,
                        seed: trial,
                        ..Default::default()
                    };
                    let (_, h, _) = admm_learn(&y, &cfg).unwrap();
                    h.data().iter().filter(|v| **v > NNZ_EPS).count()
                })
                .collect();
            if counts.windows(2).all(|w| w[1] <= w[0]) {
                passes += 1;
            }
        }
        assert!(passes >= 19, "only {passes}/20 sweeps were monotone");
    }

    #[test]
    fn factorization_scaling_identity() {
        // the [0,1] dictionary constraint exists to pin this ambiguity down
        let mut rng = ChaCha8Rng::seed_from_u64(219);
        let y = random_nonneg(&mut rng, 3, 4, 2);
        let d = random_nonneg(&mut rng, 3, 5, 2);
        let h = random_nonneg(&mut rng, 5, 4, 2);
        let base = fro_norm(&axpy(-1.0, &tprod(&d, &h).unwrap(), &y).unwrap());
        for beta in [0.5, 2.0, 7.0] {
            let scaled =
                fro_norm(&axpy(-1.0, &tprod(&scale(beta, &d), &scale(1.0 / beta, &h)).unwrap(), &y).unwrap());
            assert!((scaled - base).abs() <= 1e-12 * (1.0 + base));
        }
    }

    #[test]
    fn late_primal_residual_medians_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(221);
        let y = random_nonneg(&mut rng, 3, 8, 2);
        let iters = 100;
        let mut runs = Vec::new();
        for seed in 0..5 {
            let cfg = AdmmConfig { s: 4, max_iters: iters, tol: 0.0, seed, ..Default::default() };
            let (_, _, report) = admm_learn(&y, &cfg).unwrap();
            assert_eq!(report.history.len(), iters);
            runs.push(report.history);
        }
        let median_at = |i: usize| -> f64 {
            let mut vals: Vec<f64> = runs.iter().map(|h| h[i].primal_d + h[i].primal_h).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals[vals.len() / 2]
        };
        let window = iters / 10;
        for i in (iters - window)..(iters - 1) {
            assert!(
                median_at(i + 1) <= median_at(i),
                "median residual rose at iteration {}: {} -> {}",
                i + 1,
                median_at(i),
                median_at(i + 1)
            );
        }
    }

    #[test]
    fn rejects_invalid_configs_and_data() {
        let y = Tensor3::ones(2, 3, 2);
        let bad_atoms = AdmmConfig { s: 4, ..Default::default() };
        assert!(matches!(admm_learn(&y, &bad_atoms), Err(Error::Shape(_))));
        for cfg in [
            AdmmConfig { s: 0, ..Default::default() },
            AdmmConfig { s: 2, lambda: -1.0, ..Default::default() },
            AdmmConfig { s: 2, rho: 0.0, ..Default::default() },
            AdmmConfig { s: 2, max_iters: 0, ..Default::default() },
        ] {
            assert!(matches!(admm_learn(&y, &cfg), Err(Error::Config(_))));
        }
        let negative = Tensor3::from_data(1, 2, 1, vec![0.5, -0.5]).unwrap();
        let cfg = AdmmConfig { s: 1, ..Default::default() };
        assert!(matches!(admm_learn(&negative, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn diverging_scale_reports_divergence() {
        let y = scale(1e200, &Tensor3::ones(2, 3, 2));
        let cfg = AdmmConfig { s: 2, seed: 1, ..Default::default() };
        match admm_learn(&y, &cfg) {
            Err(Error::Divergence(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn report_csv_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(223);
        let y = random_nonneg(&mut rng, 2, 4, 2);
        let cfg = AdmmConfig { s: 2, max_iters: 5, tol: 0.0, seed: 0, ..Default::default() };
        let (_, _, report) = admm_learn(&y, &cfg).unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("iter,objective,primal_d,primal_h\n"));
        assert_eq!(csv.lines().count(), 6);
    }
}
