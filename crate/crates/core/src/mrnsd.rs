//! Modified residual norm steepest descent over non-negative unknowns.
//!
//! The iteration minimizes `1/2 ||b - A x||^2` subject to `x >= 0` by scaling
//! the gradient with the current iterate (`s = x .* g`) and capping the line
//! step so no entry crosses zero. With a sparsity weight the update passes
//! through a soft-threshold, which also keeps iterates non-negative. The
//! engine runs over flat vectors behind [`LinearOp`]; the dictionary instance
//! ([`DictOp`]) caches the transform-domain dictionary once per solve.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{facewise_mul, fft3, ifft3, ComplexTensor3, Tensor3};
use crate::NNZ_EPS;

/// Abstract linear operator over flat vectors.
pub trait LinearOp: Sync {
    fn domain_len(&self) -> usize;
    fn range_len(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    fn adjoint(&self, w: &[f64], out: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone)]
pub struct MrnsdConfig {
    pub max_iters: usize,
    /// Sparsity weight; 0 disables thresholding.
    pub lambda: f64,
    /// Strict-positivity floor applied to the initial iterate.
    pub floor: f64,
    /// Relative objective-change stopping tolerance; 0 runs all iterations.
    pub stop_tol: f64,
    /// History stride; iterations 0, 1 and the last are always recorded.
    pub record_every: usize,
}

impl Default for MrnsdConfig {
    fn default() -> Self {
        MrnsdConfig { max_iters: 200, lambda: 0.0, floor: 1e-8, stop_tol: 0.0, record_every: 1 }
    }
}

impl MrnsdConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.floor > 0.0) {
            return Err(Error::Config(format!("floor must be > 0, got {}", self.floor)));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::Config(format!("stop_tol must be >= 0, got {}", self.stop_tol)));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    /// Data-fit objective `1/2 ||b - A x||^2`.
    pub objective: f64,
    pub residual: f64,
    /// Entries greater than the reporting cutoff.
    pub nnz: usize,
    pub alpha: f64,
    pub theta: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    /// Five consecutive zero steps ended the run early.
    pub stagnated: bool,
    pub wall_secs: f64,
    pub history: Vec<IterRecord>,
}

impl SolveReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,objective,residual,nnz,alpha,theta\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iter, r.objective, r.residual, r.nnz, r.alpha, r.theta
            ));
        }
        out
    }

    pub fn final_residual(&self) -> f64 {
        self.history.last().map(|r| r.residual).unwrap_or(f64::NAN)
    }
}

/// Scalar soft-threshold: shrinks toward zero by `mu`, exact zero inside the
/// dead zone.
pub fn soft_threshold(v: f64, mu: f64) -> f64 {
    if v > mu {
        v - mu
    } else if v < -mu {
        v + mu
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn nnz(a: &[f64]) -> usize {
    a.iter().filter(|v| v.abs() > NNZ_EPS).count()
}

/// Checks `<apply(u), v> = <u, adjoint(v)>` on seeded random probes.
pub fn adjoint_probe(op: &dyn LinearOp, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (op.domain_len(), op.range_len());
    for trial in 0..3 {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut au = vec![0.0; m];
        let mut atv = vec![0.0; n];
        op.apply(&u, &mut au)?;
        op.adjoint(&v, &mut atv)?;
        let lhs = dot(&au, &v);
        let rhs = dot(&u, &atv);
        if (lhs - rhs).abs() > 1e-8 * (1.0 + lhs.abs() + rhs.abs()) {
            return Err(Error::Config(format!(
                "operator fails the adjoint test on probe {trial}: {lhs:.6e} vs {rhs:.6e}"
            )));
        }
    }
    Ok(())
}

const STAGNATION_LIMIT: usize = 5;
const GRADIENT_CHECK_STRIDE: usize = 50;
const GRADIENT_DRIFT_TOL: f64 = 1e-8;

struct Engine<'a> {
    op: &'a dyn LinearOp,
    b: &'a [f64],
    cfg: &'a MrnsdConfig,
}

impl<'a> Engine<'a> {
    fn residual_and_gradient(&self, x: &[f64], r: &mut [f64], g: &mut [f64]) -> Result<()> {
        self.op.apply(x, r)?;
        for (ri, bi) in r.iter_mut().zip(self.b) {
            *ri = bi - *ri;
        }
        self.op.adjoint(r, g)?;
        for gi in g.iter_mut() {
            *gi = -*gi;
        }
        Ok(())
    }

    fn run(&self, x0: &[f64]) -> Result<(Vec<f64>, SolveReport)> {
        let t0 = Instant::now();
        let cfg = self.cfg;
        let n = self.op.domain_len();
        let m = self.op.range_len();
        if x0.len() != n || self.b.len() != m {
            return Err(Error::shape(format!(
                "solver: operator is {m}x{n} but |b|={}, |x0|={}",
                self.b.len(),
                x0.len()
            )));
        }

        let mut x: Vec<f64> = x0.iter().map(|v| v.max(cfg.floor)).collect();
        let mut r = vec![0.0; m];
        let mut g = vec![0.0; n];
        self.residual_and_gradient(&x, &mut r, &mut g)?;

        let mut s = vec![0.0; n];
        let mut w = vec![0.0; m];
        let mut scratch_r = vec![0.0; m];
        let mut scratch_g = vec![0.0; n];

        let mut history = Vec::new();
        let mut record = |iter: usize, r: &[f64], x: &[f64], alpha: f64, theta: f64| {
            let res = norm(r);
            history.push(IterRecord {
                iter,
                objective: 0.5 * res * res,
                residual: res,
                nnz: nnz(x),
                alpha,
                theta,
            });
        };
        record(0, &r, &x, 0.0, 0.0);

        let mut prev_obj = 0.5 * dot(&r, &r);
        let mut zero_steps = 0usize;
        let mut stagnated = false;
        let mut iterations = 0usize;

        for k in 1..=cfg.max_iters {
            iterations = k;
            let last = k == cfg.max_iters;

            for i in 0..n {
                s[i] = x[i] * g[i];
            }
            let sg = dot(&s, &g); // sum of x*g^2, non-negative
            let mut theta = 0.0;
            let mut alpha = 0.0;
            if sg > 0.0 {
                self.op.apply(&s, &mut w)?;
                let wnorm2 = dot(&w, &w);
                if wnorm2 == 0.0 {
                    return Err(Error::Divergence(
                        "operator annihilates the search direction; cannot take a step".into(),
                    ));
                }
                theta = sg / wnorm2;
                let mut feas = f64::INFINITY;
                for i in 0..n {
                    if s[i] > 0.0 {
                        feas = feas.min(x[i] / s[i]);
                    }
                }
                alpha = theta.min(feas);

                if cfg.lambda > 0.0 {
                    let mu = alpha * cfg.lambda;
                    for i in 0..n {
                        x[i] = soft_threshold(x[i] - alpha * s[i], mu);
                    }
                    // thresholding invalidates the residual recurrence
                    self.residual_and_gradient(&x, &mut r, &mut g)?;
                } else {
                    for i in 0..n {
                        x[i] -= alpha * s[i];
                    }
                    for i in 0..m {
                        r[i] += alpha * w[i];
                    }
                    self.op.adjoint(&w, &mut scratch_g)?;
                    for i in 0..n {
                        g[i] -= alpha * scratch_g[i];
                    }
                }
            }

            if alpha == 0.0 {
                zero_steps += 1;
            } else {
                zero_steps = 0;
            }

            if cfg.lambda == 0.0 && k % GRADIENT_CHECK_STRIDE == 0 {
                self.residual_and_gradient(&x, &mut scratch_r, &mut scratch_g)?;
                let drift: f64 = g
                    .iter()
                    .zip(&scratch_g)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if drift > GRADIENT_DRIFT_TOL * (1.0 + norm(&g)) {
                    return Err(Error::Numeric(format!(
                        "gradient recurrence drifted by {drift:.3e} at iteration {k}"
                    )));
                }
            }

            let obj = 0.5 * dot(&r, &r);
            let stop_small_change = k > 1 && (prev_obj - obj).abs() < cfg.stop_tol * prev_obj;
            prev_obj = obj;
            if zero_steps >= STAGNATION_LIMIT {
                stagnated = true;
            }
            let done = last || stagnated || stop_small_change;
            if k % cfg.record_every == 0 || k == 1 || done {
                record(k, &r, &x, alpha, theta);
            }
            if done {
                break;
            }
        }

        let report = SolveReport {
            iterations,
            stagnated,
            wall_secs: t0.elapsed().as_secs_f64(),
            history,
        };
        Ok((x, report))
    }
}

/// Runs the descent on an arbitrary operator after probing its adjoint.
pub fn mrnsd_op(
    op: &dyn LinearOp,
    b: &[f64],
    x0: &[f64],
    cfg: &MrnsdConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    adjoint_probe(op, 0x5eed)?;
    Engine { op, b, cfg }.run(x0)
}

/// Dictionary synthesis operator `C -> D * C` over flat tensors, with the
/// transform-domain dictionary computed once and shared by apply/adjoint.
pub struct DictOp {
    dhat: ComplexTensor3,
    dhat_adj: ComplexTensor3,
    p: usize,
    s: usize,
    q: usize,
    m: usize,
}

impl DictOp {
    /// `m` is the lateral-slice count of the data tensor the operator acts on.
    pub fn new(d: &Tensor3, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::shape("data tensor must have at least one lateral slice"));
        }
        let (p, s, q) = d.dims();
        let dhat = fft3(d);
        let dhat_adj = dhat.conj_transpose_faces();
        Ok(DictOp { dhat, dhat_adj, p, s, q, m })
    }

    pub fn coeff_dims(&self) -> (usize, usize, usize) {
        (self.s, self.m, self.q)
    }

    pub fn data_dims(&self) -> (usize, usize, usize) {
        (self.p, self.m, self.q)
    }

    fn mul(&self, hat: &ComplexTensor3, x: &[f64], rows: usize, out: &mut [f64]) -> Result<()> {
        let t = Tensor3::from_data(rows, self.m, self.q, x.to_vec())?;
        let prod = facewise_mul(hat, &fft3(&t))?;
        out.copy_from_slice(ifft3(&prod)?.data());
        Ok(())
    }
}

impl LinearOp for DictOp {
    fn domain_len(&self) -> usize {
        self.s * self.m * self.q
    }

    fn range_len(&self) -> usize {
        self.p * self.m * self.q
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.mul(&self.dhat, x, self.s, out)
    }

    fn adjoint(&self, w: &[f64], out: &mut [f64]) -> Result<()> {
        self.mul(&self.dhat_adj, w, self.p, out)
    }
}

fn check_solve_dims(d: &Tensor3, b: &Tensor3, c0: &Tensor3) -> Result<()> {
    let (p, s, q) = d.dims();
    if b.rows() != p || b.depth() != q {
        return Err(Error::shape(format!(
            "data tensor {:?} does not conform to dictionary {:?}",
            b.dims(),
            d.dims()
        )));
    }
    if c0.dims() != (s, b.cols(), q) {
        return Err(Error::shape(format!(
            "initial coefficients {:?}, expected {:?}",
            c0.dims(),
            (s, b.cols(), q)
        )));
    }
    Ok(())
}

/// Plain non-negative descent on `1/2 ||B - D*C||^2`. Any sparsity weight in
/// `cfg` is ignored; use [`mrnsd_sparse`] to engage thresholding.
pub fn mrnsd(
    d: &Tensor3,
    b: &Tensor3,
    c0: &Tensor3,
    cfg: &MrnsdConfig,
) -> Result<(Tensor3, SolveReport)> {
    let plain = MrnsdConfig { lambda: 0.0, ..cfg.clone() };
    mrnsd_sparse(d, b, c0, &plain)
}

/// Descent with soft-thresholded updates; `cfg.lambda == 0` reduces to the
/// plain iteration bit for bit.
pub fn mrnsd_sparse(
    d: &Tensor3,
    b: &Tensor3,
    c0: &Tensor3,
    cfg: &MrnsdConfig,
) -> Result<(Tensor3, SolveReport)> {
    cfg.validate()?;
    check_solve_dims(d, b, c0)?;
    let op = DictOp::new(d, b.cols())?;
    let (x, report) = Engine { op: &op, b: b.data(), cfg }.run(c0.data())?;
    let (s, m, q) = op.coeff_dims();
    Ok((Tensor3::from_data(s, m, q, x)?, report))
}

/// Strictly positive starting coefficients: the dictionary pseudoinverse
/// applied to an all-ones data tensor, floored at `delta`.
pub fn initial_guess(d: &Tensor3, m: usize, delta: f64) -> Result<Tensor3> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("floor must be > 0, got {delta}")));
    }
    let (p, _, q) = d.dims();
    let pinv = crate::tensor::tpinv(d)?;
    let ones = Tensor3::ones(p, m, q);
    let c0 = crate::tensor::tprod(&pinv, &ones)?;
    Ok(crate::tensor::nonneg_clamp(&c0, delta))
}
