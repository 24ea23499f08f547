use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use tenpatch::deblur::{
    add_noise, combine, deblur_matrix, deblur_tensor, gaussian_psf, gaussian_psf_standard,
    BlurOperator, PatchRegularizer, QMode,
};
use tenpatch::dict::{admm_learn, build_training_tensor, AdmmConfig};
use tenpatch::io::{self, ImageFile};
use tenpatch::metrics::{compression_report, rel_err, rel_err_image, ssim};
use tenpatch::mrnsd::{initial_guess, mrnsd_sparse, LinearOp, MrnsdConfig, SolveReport};
use tenpatch::patch::{
    depatchify, depatchify_color, patchify, patchify_color, ImageGray, ImageRgb, PatchGrid,
};
use tenpatch::tensor::{tprod, Tensor3};
use tenpatch::{Error, Result};

#[derive(Parser)]
#[command(name = "tenpatch", version, about = "Patch-dictionary image compression and deblurring")]
struct Cli {
    /// Cap the worker thread pool (defaults to all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Train(TrainArgs),
    Encode(EncodeArgs),
    Decode(DecodeArgs),
    Degrade(DegradeArgs),
    Deblur(DeblurArgs),
    Metrics(MetricsArgs),
}

/// Learn a patch dictionary from grayscale training images.
#[derive(Args)]
struct TrainArgs {
    /// Training images (PGM); may be combined with --manifest.
    #[arg(value_name = "IMAGE")]
    images: Vec<PathBuf>,
    /// File listing one training image path per line ('#' comments allowed).
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Patch rows.
    #[arg(long, default_value_t = 8)]
    p: usize,
    /// Patch columns.
    #[arg(long, default_value_t = 8)]
    q: usize,
    /// Number of dictionary atoms; defaults to 2p.
    #[arg(long)]
    s: Option<usize>,
    /// Sparsity weight on the training coefficients.
    #[arg(long, default_value_t = 1e-2)]
    lambda: f64,
    /// Augmented-Lagrangian penalty.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Maximum training iterations.
    #[arg(long, default_value_t = 300)]
    iters: usize,
    /// Relative stopping tolerance on the primal residuals.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Seed for the dictionary initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dictionary (TDCT1); a JSON report lands next to it.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Optional CSV of per-iteration training diagnostics.
    #[arg(long, value_name = "FILE")]
    curve: Option<PathBuf>,
}

/// Compress an image against a dictionary.
#[derive(Args)]
struct EncodeArgs {
    /// Input image (PGM grayscale or PPM color).
    image: PathBuf,
    /// Dictionary file (TDCT1).
    #[arg(long, value_name = "FILE")]
    dict: PathBuf,
    /// Sparsity weight applied during the solve.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Solver iterations.
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Replicate-pad the image so the patch grid divides it.
    #[arg(long)]
    pad: bool,
    /// Store the full coefficient tensor (T3D1) instead of sparse TCOF1.
    #[arg(long)]
    dense: bool,
    /// Output coefficient file; a JSON report lands next to it.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Optional CSV of solver history.
    #[arg(long, value_name = "FILE")]
    curve: Option<PathBuf>,
}

/// Reconstruct an image from coefficients and a dictionary.
#[derive(Args)]
struct DecodeArgs {
    /// Coefficient file (TCOF1 sparse or T3D1 dense).
    coeffs: PathBuf,
    /// Dictionary file (TDCT1).
    #[arg(long, value_name = "FILE")]
    dict: PathBuf,
    /// Output image (PGM, or PPM when the coefficients encode color).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

/// Blur an image and add noise, writing a data bundle for deblur.
#[derive(Args)]
struct DegradeArgs {
    /// Input image (PGM grayscale).
    image: PathBuf,
    /// Blur taps per side: the kernel covers offsets -(bw-1)..=(bw-1).
    #[arg(long, default_value_t = 4)]
    bw: usize,
    /// Blur width parameter.
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
    /// Use the unit-sum Gaussian kernel instead of the unnormalized one.
    #[arg(long)]
    standard: bool,
    /// Boundary handling.
    #[arg(long, value_enum, default_value_t = Boundary::Reflexive)]
    boundary: Boundary,
    /// Trimmed-mode margin in pixels; defaults to bw.
    #[arg(long)]
    margin: Option<usize>,
    /// Noise-to-signal ratio of the added Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    level: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output data bundle (T3D1); a JSON sidecar lands next to it.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Boundary {
    Reflexive,
    Trimmed,
}

/// Reconstruct a deblurred image from a degrade bundle.
#[derive(Args)]
struct DeblurArgs {
    /// Data bundle written by degrade (T3D1 with its JSON sidecar).
    bundle: PathBuf,
    /// Reconstruction basis.
    #[arg(long, value_enum)]
    mode: Mode,
    /// Dictionary file; repeat to average several runs (tensor mode only).
    #[arg(long = "dict", value_name = "FILE")]
    dicts: Vec<PathBuf>,
    /// Comma-separated convex weights for multiple dictionaries.
    #[arg(long, value_name = "W1,W2,...")]
    combine: Option<String>,
    /// Smoothing weight on patch-boundary jumps (tensor) or pixel jumps (matrix).
    #[arg(long = "lambda-reg", default_value_t = 0.0)]
    lambda_reg: f64,
    /// Solver iterations.
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    /// History stride for the CSV curve.
    #[arg(long = "record-every", default_value_t = 50)]
    record_every: usize,
    /// Strict-positivity floor for the starting iterate.
    #[arg(long, default_value_t = 1e-8)]
    floor: f64,
    /// Output reconstruction (PGM); a JSON report lands next to it.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Optional CSV of solver history (suffix -K per run with several dictionaries).
    #[arg(long, value_name = "FILE")]
    curve: Option<PathBuf>,
    /// Ground-truth image; records a relative-error curve and final metrics.
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,
    /// Relative-error curve destination (default: OUT + ".relerr.csv").
    #[arg(long = "err-curve", value_name = "FILE")]
    err_curve: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Tensor,
    Matrix,
}

/// Relative error and SSIM between two images of equal dimensions.
#[derive(Args)]
struct MetricsArgs {
    #[arg(value_name = "IMAGE_A")]
    a: PathBuf,
    #[arg(value_name = "IMAGE_B")]
    b: PathBuf,
    /// Also write the JSON to a file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: could not size the thread pool to {n}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Shape(_) | Error::Format { .. } | Error::Io(_) => 3,
        Error::Numeric(_) | Error::Divergence(_) => 4,
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Degrade(a) => cmd_degrade(a),
        Command::Deblur(a) => cmd_deblur(a),
        Command::Metrics(a) => cmd_metrics(a),
    }
}

// ---------------------------------------------------------------- helpers

/// Prefixes file-level errors with the path they came from.
fn with_path(err: Error, path: &Path) -> Error {
    let ctx = path.display();
    match err {
        Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), format!("{ctx}: {e}"))),
        Error::Format { msg, offset } => Error::Format { msg: format!("{ctx}: {msg}"), offset },
        Error::Shape(m) => Error::Shape(format!("{ctx}: {m}")),
        other => other,
    }
}

/// The JSON companion of an artifact: same name with ".json" appended.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display()), 0))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: invalid JSON: {e}", path.display()), 0))
}

fn jfield<'a>(v: &'a Value, key: &str, path: &Path) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::format(format!("{}: missing field '{key}'", path.display()), 0))
}

fn jusize(v: &Value, key: &str, path: &Path) -> Result<usize> {
    jfield(v, key, path)?
        .as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| Error::format(format!("{}: field '{key}' is not an integer", path.display()), 0))
}

fn jf64(v: &Value, key: &str, path: &Path) -> Result<f64> {
    jfield(v, key, path)?
        .as_f64()
        .ok_or_else(|| Error::format(format!("{}: field '{key}' is not a number", path.display()), 0))
}

fn jbool(v: &Value, key: &str, path: &Path) -> Result<bool> {
    jfield(v, key, path)?
        .as_bool()
        .ok_or_else(|| Error::format(format!("{}: field '{key}' is not a boolean", path.display()), 0))
}

fn jstr<'a>(v: &'a Value, key: &str, path: &Path) -> Result<&'a str> {
    jfield(v, key, path)?
        .as_str()
        .ok_or_else(|| Error::format(format!("{}: field '{key}' is not a string", path.display()), 0))
}

/// Mirrors the PGM/PPM writer's value mapping so reported errors match what a
/// reader of the written file will compute.
fn quantize_unit(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn quantized(img: &ImageGray) -> ImageGray {
    ImageGray::from_fn(img.rows(), img.cols(), |i, j| quantize_unit(img.at(i, j)))
}

fn cropped(img: &ImageGray, rows: usize, cols: usize) -> ImageGray {
    ImageGray::from_fn(rows, cols, |i, j| img.at(i, j))
}

fn concat_rgb(img: &ImageRgb) -> Vec<f64> {
    img.channels.iter().flat_map(|c| c.data().iter().copied()).collect()
}

/// Geometric iteration checkpoints from 1 to `iters` inclusive, ratio ~1.5.
fn checkpoints(iters: usize) -> Vec<usize> {
    let mut pts = Vec::new();
    let mut k = 1usize;
    while k < iters {
        pts.push(k);
        k = ((k as f64) * 1.5).ceil() as usize;
    }
    pts.push(iters);
    pts.dedup();
    pts
}

fn indexed_path(path: &Path, idx: usize, total: usize) -> PathBuf {
    if total == 1 {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    let mut name = stem;
    name.push(format!("-{idx}"));
    if let Some(ext) = path.extension() {
        name.push(".");
        name.push(ext);
    }
    path.with_file_name(name)
}

// ------------------------------------------------------------------ train

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut paths = a.images.clone();
    if let Some(manifest) = &a.manifest {
        let text = fs::read_to_string(manifest).map_err(|e| {
            Error::format(format!("{}: {e}", manifest.display()), 0)
        })?;
        paths.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(PathBuf::from),
        );
    }
    if paths.is_empty() {
        return Err(Error::Config(
            "train needs at least one image (positional or --manifest)".into(),
        ));
    }
    let mut images = Vec::with_capacity(paths.len());
    for p in &paths {
        images.push(io::read_gray(p).map_err(|e| with_path(e, p))?);
    }
    let s = a.s.unwrap_or(2 * a.p);
    let cfg = AdmmConfig {
        s,
        lambda: a.lambda,
        rho: a.rho,
        max_iters: a.iters,
        tol: a.tol,
        seed: a.seed,
    };
    let y = build_training_tensor(&images, a.p, a.q)?;
    let (d, _coeffs, report) = admm_learn(&y, &cfg)?;
    io::write_dict(&a.out, &d)?;
    if let Some(curve) = &a.curve {
        fs::write(curve, report.to_csv())?;
    }
    let meta = json!({
        "command": "train",
        "images": paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "p": a.p,
        "q": a.q,
        "s": s,
        "lambda": a.lambda,
        "rho": a.rho,
        "max_iters": a.iters,
        "tol": a.tol,
        "seed": a.seed,
        "training_patches": y.cols(),
        "iterations": report.iterations,
        "converged": report.converged,
        "wall_secs": report.wall_secs,
    });
    write_json(&sidecar(&a.out), &meta)?;
    println!(
        "trained {}x{}x{} dictionary on {} patches in {} iterations{} -> {}",
        d.rows(),
        d.cols(),
        d.depth(),
        y.cols(),
        report.iterations,
        if report.converged { "" } else { " (tolerance not reached)" },
        a.out.display()
    );
    Ok(())
}

// ----------------------------------------------------------------- encode

fn cmd_encode(a: EncodeArgs) -> Result<()> {
    let d = io::read_dict(&a.dict).map_err(|e| with_path(e, &a.dict))?;
    let (p, s, q) = d.dims();
    let input = io::read_image(&a.image).map_err(|e| with_path(e, &a.image))?;
    let (orig_rows, orig_cols, color) = match &input {
        ImageFile::Gray(g) => (g.rows(), g.cols(), false),
        ImageFile::Rgb(c) => (c.rows(), c.cols(), true),
    };
    if !a.pad && (orig_rows % p != 0 || orig_cols % q != 0) {
        return Err(Error::shape(format!(
            "image {orig_rows}x{orig_cols} is not divisible by the dictionary's {p}x{q} patches; rerun with --pad"
        )));
    }
    let (b, grid) = match &input {
        ImageFile::Gray(g) => {
            let img = if a.pad { g.pad_to_multiple(p, q)? } else { g.clone() };
            let grid = PatchGrid::new(img.rows(), img.cols(), p, q)?;
            (patchify(&img, p, q)?, grid)
        }
        ImageFile::Rgb(c) => {
            let img = if a.pad {
                ImageRgb::new([
                    c.channels[0].pad_to_multiple(p, q)?,
                    c.channels[1].pad_to_multiple(p, q)?,
                    c.channels[2].pad_to_multiple(p, q)?,
                ])?
            } else {
                c.clone()
            };
            let grid = PatchGrid::new(img.rows(), img.cols(), p, q)?;
            (patchify_color(&img, p, q)?, grid)
        }
    };
    let cfg = MrnsdConfig {
        max_iters: a.iters,
        lambda: a.lambda,
        floor: 1e-8,
        stop_tol: 0.0,
        record_every: 1,
    };
    let c0 = initial_guess(&d, b.cols(), cfg.floor)?;
    let (c, report) = mrnsd_sparse(&d, &b, &c0, &cfg)?;

    // The reported error compares the quantized reconstruction (what decode
    // writes) against the input as read, cropped back to its original frame.
    let recon = tprod(&d, &c)?;
    let err = match &input {
        ImageFile::Gray(g) => {
            let full = depatchify(&recon, &grid)?;
            let out = quantized(&cropped(&full, orig_rows, orig_cols));
            rel_err_image(&out, g)?
        }
        ImageFile::Rgb(cimg) => {
            let full = depatchify_color(&recon, &grid)?;
            let out = ImageRgb::new([
                quantized(&cropped(&full.channels[0], orig_rows, orig_cols)),
                quantized(&cropped(&full.channels[1], orig_rows, orig_cols)),
                quantized(&cropped(&full.channels[2], orig_rows, orig_cols)),
            ])?;
            rel_err(&concat_rgb(&out), &concat_rgb(cimg))?
        }
    };
    let pixels = orig_rows * orig_cols * if color { 3 } else { 1 };
    let comp = compression_report(&c, &d, pixels, err);

    if a.dense {
        io::write_tensor(&a.out, &c)?;
    } else {
        io::write_coeffs(&a.out, &c)?;
    }
    if let Some(curve) = &a.curve {
        fs::write(curve, report.to_csv())?;
    }
    let meta = json!({
        "command": "encode",
        "input": a.image.display().to_string(),
        "dict": a.dict.display().to_string(),
        "p": p,
        "q": q,
        "s": s,
        "color": color,
        "rows": grid.image_rows(),
        "cols": grid.image_cols(),
        "orig_rows": orig_rows,
        "orig_cols": orig_cols,
        "lambda": a.lambda,
        "iters": a.iters,
        "dense": a.dense,
        "solver": {
            "iterations": report.iterations,
            "stagnated": report.stagnated,
            "wall_secs": report.wall_secs,
            "final_residual": report.final_residual(),
        },
        "compression": {
            "nnz_c": comp.nnz_c,
            "nnz_d": comp.nnz_d,
            "pixels": comp.pixels,
            "ratio_with_dict": comp.ratio_with_dict,
            "ratio_amortized": comp.ratio_amortized,
            "rel_err": comp.rel_err,
        },
    });
    write_json(&sidecar(&a.out), &meta)?;
    println!(
        "encoded {orig_rows}x{orig_cols}{}: nnz {} ({:.4} per pixel amortized), rel err {:.6} -> {}",
        if color { " rgb" } else { "" },
        comp.nnz_c,
        comp.ratio_amortized,
        comp.rel_err,
        a.out.display()
    );
    Ok(())
}

// ----------------------------------------------------------------- decode

/// Coefficients may be sparse (TCOF1) or dense (T3D1); sniffed by magic.
fn read_coeffs_any(path: &Path) -> Result<Tensor3> {
    match io::read_coeffs(path) {
        Ok(c) => Ok(c),
        Err(first) => match io::read_tensor(path) {
            Ok(c) => Ok(c),
            Err(_) => Err(first),
        },
    }
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    let d = io::read_dict(&a.dict).map_err(|e| with_path(e, &a.dict))?;
    let (p, s, q) = d.dims();
    let c = read_coeffs_any(&a.coeffs).map_err(|e| with_path(e, &a.coeffs))?;
    if c.rows() != s || c.depth() != q {
        return Err(Error::shape(format!(
            "coefficients {}x{}x{} do not conform to dictionary {p}x{s}x{q}",
            c.rows(),
            c.cols(),
            c.depth()
        )));
    }
    let sc_path = sidecar(&a.coeffs);
    let (rows, cols, orig_rows, orig_cols, color) = if sc_path.exists() {
        let sc = read_json(&sc_path)?;
        (
            jusize(&sc, "rows", &sc_path)?,
            jusize(&sc, "cols", &sc_path)?,
            jusize(&sc, "orig_rows", &sc_path)?,
            jusize(&sc, "orig_cols", &sc_path)?,
            jbool(&sc, "color", &sc_path)?,
        )
    } else {
        // No sidecar: assume a square grayscale patch grid.
        let m = c.cols();
        let n = (m as f64).sqrt().round() as usize;
        if n * n != m {
            return Err(Error::shape(format!(
                "cannot infer a square patch grid from {m} patches; keep the encode sidecar next to the coefficients"
            )));
        }
        (n * p, n * q, n * p, n * q, false)
    };
    let grid = PatchGrid::new(rows, cols, p, q)?;
    let expected = grid.m() * if color { 3 } else { 1 };
    if c.cols() != expected {
        return Err(Error::shape(format!(
            "coefficient patch count {} does not match the {rows}x{cols} grid ({expected} expected)",
            c.cols()
        )));
    }
    let recon = tprod(&d, &c)?;
    if color {
        let full = depatchify_color(&recon, &grid)?;
        let out = ImageRgb::new([
            cropped(&full.channels[0], orig_rows, orig_cols),
            cropped(&full.channels[1], orig_rows, orig_cols),
            cropped(&full.channels[2], orig_rows, orig_cols),
        ])?;
        io::write_ppm(&a.out, &out, 255)?;
    } else {
        let full = depatchify(&recon, &grid)?;
        io::write_pgm(&a.out, &cropped(&full, orig_rows, orig_cols), 255)?;
    }
    println!(
        "decoded {orig_rows}x{orig_cols}{} -> {}",
        if color { " rgb" } else { "" },
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- degrade

fn cmd_degrade(a: DegradeArgs) -> Result<()> {
    let img = io::read_gray(&a.image).map_err(|e| with_path(e, &a.image))?;
    let (rows, cols) = (img.rows(), img.cols());
    let psf = if a.standard {
        gaussian_psf_standard(a.bw, a.sigma)?
    } else {
        gaussian_psf(a.bw, a.sigma)?
    };
    let margin = a.margin.unwrap_or(a.bw);
    let blur = match a.boundary {
        Boundary::Reflexive => BlurOperator::reflexive(psf, rows, cols)?,
        Boundary::Trimmed => BlurOperator::trimmed(psf, rows, cols, margin)?,
    };
    let mut b = vec![0.0; blur.range_len()];
    blur.apply(img.data(), &mut b)?;
    let b = add_noise(&b, a.level, a.seed)?;
    let (out_rows, out_cols) = blur.out_dims();
    let t = Tensor3::from_data(out_rows, out_cols, 1, b)?;
    io::write_tensor(&a.out, &t)?;
    let boundary = match a.boundary {
        Boundary::Reflexive => "reflexive",
        Boundary::Trimmed => "trimmed",
    };
    let meta = json!({
        "command": "degrade",
        "input": a.image.display().to_string(),
        "bw": a.bw,
        "sigma": a.sigma,
        "standard": a.standard,
        "boundary": boundary,
        "margin": if a.boundary == Boundary::Trimmed { margin } else { 0 },
        "level": a.level,
        "seed": a.seed,
        "rows": rows,
        "cols": cols,
        "out_rows": out_rows,
        "out_cols": out_cols,
    });
    write_json(&sidecar(&a.out), &meta)?;
    println!(
        "degraded {rows}x{cols} -> {out_rows}x{out_cols} data ({boundary}, noise level {}) -> {}",
        a.level,
        a.out.display()
    );
    Ok(())
}

// ----------------------------------------------------------------- deblur

enum Basis {
    Matrix {
        reg: PatchRegularizer,
    },
    Tensor {
        dicts: Vec<Tensor3>,
        grids: Vec<PatchGrid>,
        regs: Vec<PatchRegularizer>,
        weights: Vec<f64>,
    },
}

impl Basis {
    fn runs(&self) -> usize {
        match self {
            Basis::Matrix { .. } => 1,
            Basis::Tensor { dicts, .. } => dicts.len(),
        }
    }
}

fn reconstruct(
    basis: &Basis,
    b: &[f64],
    blur: &BlurOperator,
    cfg: &MrnsdConfig,
) -> Result<(ImageGray, Vec<SolveReport>)> {
    match basis {
        Basis::Matrix { reg } => {
            let (img, rep) = deblur_matrix(b, blur, reg, cfg)?;
            Ok((img, vec![rep]))
        }
        Basis::Tensor { dicts, grids, regs, weights } => {
            let mut imgs = Vec::with_capacity(dicts.len());
            let mut reps = Vec::with_capacity(dicts.len());
            for ((d, grid), reg) in dicts.iter().zip(grids).zip(regs) {
                let (img, rep) = deblur_tensor(b, blur, d, grid, reg, cfg)?;
                imgs.push(img);
                reps.push(rep);
            }
            Ok((combine(&imgs, weights)?, reps))
        }
    }
}

fn parse_weights(spec: &str, n: usize) -> Result<Vec<f64>> {
    let weights: std::result::Result<Vec<f64>, _> =
        spec.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let weights =
        weights.map_err(|e| Error::Config(format!("bad --combine weights '{spec}': {e}")))?;
    if weights.len() != n {
        return Err(Error::Config(format!(
            "--combine lists {} weights for {n} dictionaries",
            weights.len()
        )));
    }
    Ok(weights)
}

fn cmd_deblur(a: DeblurArgs) -> Result<()> {
    let t = io::read_tensor(&a.bundle).map_err(|e| with_path(e, &a.bundle))?;
    let sc_path = sidecar(&a.bundle);
    let sc = read_json(&sc_path)?;
    let rows = jusize(&sc, "rows", &sc_path)?;
    let cols = jusize(&sc, "cols", &sc_path)?;
    let bw = jusize(&sc, "bw", &sc_path)?;
    let sigma = jf64(&sc, "sigma", &sc_path)?;
    let standard = jbool(&sc, "standard", &sc_path)?;
    let margin = jusize(&sc, "margin", &sc_path)?;
    let boundary = jstr(&sc, "boundary", &sc_path)?;
    let psf = if standard { gaussian_psf_standard(bw, sigma)? } else { gaussian_psf(bw, sigma)? };
    let blur = match boundary {
        "reflexive" => BlurOperator::reflexive(psf, rows, cols)?,
        "trimmed" => BlurOperator::trimmed(psf, rows, cols, margin)?,
        other => {
            return Err(Error::format(
                format!("{}: unknown boundary '{other}'", sc_path.display()),
                0,
            ))
        }
    };
    let (out_rows, out_cols) = blur.out_dims();
    if t.dims() != (out_rows, out_cols, 1) {
        return Err(Error::shape(format!(
            "bundle tensor {}x{}x{} does not match the sidecar's {out_rows}x{out_cols} blurred grid",
            t.rows(),
            t.cols(),
            t.depth()
        )));
    }
    let b = t.data().to_vec();

    let basis = match a.mode {
        Mode::Matrix => {
            if !a.dicts.is_empty() {
                return Err(Error::Config("matrix mode takes no --dict".into()));
            }
            if a.combine.is_some() {
                return Err(Error::Config("--combine needs tensor mode".into()));
            }
            let reg = if a.lambda_reg > 0.0 {
                PatchRegularizer::new(a.lambda_reg, QMode::Full)?
            } else {
                PatchRegularizer::none()
            };
            Basis::Matrix { reg }
        }
        Mode::Tensor => {
            if a.dicts.is_empty() {
                return Err(Error::Config("tensor mode needs at least one --dict".into()));
            }
            let mut dicts = Vec::with_capacity(a.dicts.len());
            let mut grids = Vec::with_capacity(a.dicts.len());
            let mut regs = Vec::with_capacity(a.dicts.len());
            for path in &a.dicts {
                let d = io::read_dict(path).map_err(|e| with_path(e, path))?;
                let (p, _s, q) = d.dims();
                if rows % p != 0 || cols % q != 0 {
                    return Err(Error::shape(format!(
                        "{}: image {rows}x{cols} is not divisible by its {p}x{q} patches",
                        path.display()
                    )));
                }
                grids.push(PatchGrid::new(rows, cols, p, q)?);
                regs.push(if a.lambda_reg > 0.0 {
                    PatchRegularizer::new(a.lambda_reg, QMode::PatchJump { p, q })?
                } else {
                    PatchRegularizer::none()
                });
                dicts.push(d);
            }
            let weights = match &a.combine {
                Some(spec) => parse_weights(spec, dicts.len())?,
                None => vec![1.0 / dicts.len() as f64; dicts.len()],
            };
            Basis::Tensor { dicts, grids, regs, weights }
        }
    };

    let cfg = MrnsdConfig {
        max_iters: a.iters,
        lambda: 0.0,
        floor: a.floor,
        stop_tol: 0.0,
        record_every: a.record_every,
    };
    let (img, reports) = reconstruct(&basis, &b, &blur, &cfg)?;
    io::write_pgm(&a.out, &img, 255)?;
    if let Some(curve) = &a.curve {
        for (i, rep) in reports.iter().enumerate() {
            fs::write(indexed_path(curve, i, basis.runs()), rep.to_csv())?;
        }
    }

    let mut truth_metrics = None;
    if let Some(truth_path) = &a.truth {
        let truth = io::read_gray(truth_path).map_err(|e| with_path(e, truth_path))?;
        // The written image is already quantized by the PGM writer; measure
        // the same values a reader of the output file will see.
        let final_img = quantized(&img);
        let final_rel = rel_err_image(&final_img, &truth)?;
        let final_ssim = ssim(&final_img, &truth)?;
        let pts = checkpoints(a.iters);
        let mut lines = vec!["iter,rel_err".to_string()];
        for &k in &pts {
            let rel = if k == a.iters {
                rel_err_image(&img, &truth)?
            } else {
                let cfg_k = MrnsdConfig { max_iters: k, record_every: k, ..cfg.clone() };
                let (img_k, _) = reconstruct(&basis, &b, &blur, &cfg_k)?;
                rel_err_image(&img_k, &truth)?
            };
            lines.push(format!("{k},{rel}"));
        }
        let err_path = a
            .err_curve
            .clone()
            .unwrap_or_else(|| a.out.with_file_name(format!(
                "{}.relerr.csv",
                a.out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            )));
        fs::write(&err_path, lines.join("\n") + "\n")?;
        truth_metrics = Some((final_rel, final_ssim));
    }

    let runs: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "iterations": r.iterations,
                "stagnated": r.stagnated,
                "wall_secs": r.wall_secs,
                "final_residual": r.final_residual(),
                "final_objective": r.history.last().map(|h| h.objective),
            })
        })
        .collect();
    let mut meta = json!({
        "command": "deblur",
        "bundle": a.bundle.display().to_string(),
        "mode": match a.mode { Mode::Tensor => "tensor", Mode::Matrix => "matrix" },
        "dicts": a.dicts.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "weights": match &basis { Basis::Tensor { weights, .. } => weights.clone(), _ => vec![] },
        "lambda_reg": a.lambda_reg,
        "iters": a.iters,
        "record_every": a.record_every,
        "floor": a.floor,
        "rows": rows,
        "cols": cols,
        "runs": runs,
    });
    if let Some((rel, ss)) = truth_metrics {
        meta["rel_err"] = json!(rel);
        meta["ssim"] = json!(ss);
    }
    write_json(&sidecar(&a.out), &meta)?;
    match truth_metrics {
        Some((rel, ss)) => println!(
            "deblurred {rows}x{cols} in {} iterations, rel err {rel:.6}, ssim {ss:.4} -> {}",
            a.iters,
            a.out.display()
        ),
        None => println!(
            "deblurred {rows}x{cols} in {} iterations -> {}",
            a.iters,
            a.out.display()
        ),
    }
    Ok(())
}

// ---------------------------------------------------------------- metrics

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let x = io::read_image(&a.a).map_err(|e| with_path(e, &a.a))?;
    let y = io::read_image(&a.b).map_err(|e| with_path(e, &a.b))?;
    let (rel, ss) = match (&x, &y) {
        (ImageFile::Gray(x), ImageFile::Gray(y)) => {
            check_dims(x.rows(), x.cols(), y.rows(), y.cols())?;
            (rel_err_image(x, y)?, ssim(x, y)?)
        }
        (ImageFile::Rgb(x), ImageFile::Rgb(y)) => {
            check_dims(x.rows(), x.cols(), y.rows(), y.cols())?;
            let rel = rel_err(&concat_rgb(x), &concat_rgb(y))?;
            let mut ss = 0.0;
            for (cx, cy) in x.channels.iter().zip(&y.channels) {
                ss += ssim(cx, cy)?;
            }
            (rel, ss / 3.0)
        }
        _ => return Err(Error::shape("cannot compare a grayscale image with a color image")),
    };
    let value = json!({ "rel_err": rel, "ssim": ss });
    println!("{value}");
    if let Some(out) = &a.out {
        write_json(out, &value)?;
    }
    Ok(())
}

fn check_dims(xr: usize, xc: usize, yr: usize, yc: usize) -> Result<()> {
    if xr != yr || xc != yc {
        return Err(Error::shape(format!("dimension mismatch: {xr}x{xc} vs {yr}x{yc}")));
    }
    Ok(())
}
