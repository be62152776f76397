//! Subcommand implementations. Every command that takes `--report` emits the
//! same JSON document to that path (or stdout when the flag is absent).

use std::fs;
use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bpdq_core::bpd::ByteMatrix;
use bpdq_core::linalg::hessian_from_activations;
use bpdq_core::solver::{bpdq_quantize_layer, gptq_quantize_layer, objective, rtn_quantize_layer};
use bpdq_core::tensor::{load_tensor, save_tensor, synth_layer, RunConfig, Tensor2D};
use bpdq_core::{bits_per_weight, Error, QuantizedLayer, Result};

use clap::Args;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::report::{
    BaselineObjectives, BenchReport, OutlierReport, PerLayerObjectives, Report,
};
use crate::stats::{outlier_stats, p95};
use crate::theory::{run_suites, TheoryOptions};

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// TNSR weight matrix (d_out x d_in)
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
    /// TNSR calibration activations (d_in x N)
    #[arg(long, value_name = "PATH")]
    pub calib: Option<PathBuf>,
    /// Generate a synthetic layer instead of reading files
    #[arg(long, value_name = "SEED,DOUT,DIN,N", conflicts_with_all = ["weights", "calib"])]
    pub synth: Option<String>,
    /// Number of bit planes (1..=8)
    #[arg(short)]
    pub k: usize,
    /// Group size along the input dimension
    #[arg(short)]
    pub g: usize,
    /// Refinement rounds
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// Ridge term of the coefficient fit
    #[arg(long, default_value_t = 1e-4)]
    pub alpha: f64,
    /// Relative Hessian damping
    #[arg(long, default_value_t = 0.01)]
    pub percdamp: f64,
    /// Coefficient storage width (16, 32, or 64)
    #[arg(long, default_value_t = 16)]
    pub coeff_bits: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Heavy-tail index of synthetic channel scales
    #[arg(long, default_value_t = 0.0)]
    pub tail_index: f64,
    /// Output BPQZ path
    #[arg(short = 'o', long, value_name = "PATH")]
    pub output: PathBuf,
    /// Report JSON path (stdout when omitted)
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

fn parse_synth(spec: &str) -> Result<(u64, usize, usize, usize)> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 4 {
        return Err(Error::InvalidConfig {
            detail: format!("--synth expects SEED,DOUT,DIN,N, got '{spec}'"),
        });
    }
    let parse = |s: &str, what: &str| -> Result<u64> {
        s.trim().parse::<u64>().map_err(|_| Error::InvalidConfig {
            detail: format!("--synth {what} '{s}' is not an unsigned integer"),
        })
    };
    let seed = parse(parts[0], "seed")?;
    let d_out = parse(parts[1], "d_out")? as usize;
    let d_in = parse(parts[2], "d_in")? as usize;
    let n = parse(parts[3], "n_samples")? as usize;
    if d_out == 0 || d_in == 0 || n == 0 {
        return Err(Error::InvalidConfig {
            detail: "--synth dimensions must be positive".into(),
        });
    }
    Ok((seed, d_out, d_in, n))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn emit_report(report: &Report, path: Option<&Path>) -> Result<()> {
    let json = report.to_json();
    match path {
        Some(p) => write_file(p, json.as_bytes()),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

pub fn cmd_quantize(args: &QuantizeArgs) -> Result<i32> {
    let t0 = Instant::now();
    let (w, x, seed) = match &args.synth {
        Some(spec) => {
            let (seed, d_out, d_in, n) = parse_synth(spec)?;
            let (w, x) = synth_layer(seed, d_out, d_in, n, args.tail_index);
            (w, x, seed)
        }
        None => {
            let (wp, xp) = match (&args.weights, &args.calib) {
                (Some(w), Some(x)) => (w, x),
                _ => {
                    return Err(Error::InvalidConfig {
                        detail: "provide either --synth or both --weights and --calib".into(),
                    })
                }
            };
            (load_tensor(wp)?, load_tensor(xp)?, args.seed)
        }
    };
    if x.rows() != w.cols() {
        return Err(Error::DimensionMismatch {
            detail: format!(
                "calibration has {} channels but weights have d_in {}",
                x.rows(),
                w.cols()
            ),
        });
    }

    let mut cfg = RunConfig::new(args.k, args.g);
    cfg.iters = args.iters;
    cfg.alpha = args.alpha;
    cfg.percdamp = args.percdamp;
    cfg.coeff_bits = args.coeff_bits;
    cfg.seed = seed;
    cfg.validate(w.cols())?;

    let hstate = hessian_from_activations(&x, cfg.percdamp)?;
    let out = bpdq_quantize_layer(&w, &hstate, &cfg)?;
    write_file(&args.output, &out.layer.pack())?;

    // Report the objective of the artifact as written, at its storage width.
    let (frob, trace) = objective(&w, &out.layer.dequantize(), &x);
    let mut report = Report::new("quantize", seed);
    report.bpw = Some(bits_per_weight(cfg.k, cfg.g, cfg.coeff_bits));
    report.objective_frob = Some(frob);
    report.objective_trace = Some(trace);
    report.per_group_scores = Some(out.report.per_group_scores.clone());
    report.config = Some(cfg);
    report.wall_time_s = t0.elapsed().as_secs_f64();
    emit_report(&report, args.report.as_deref())?;
    Ok(0)
}

#[derive(Debug, Args)]
pub struct DequantizeArgs {
    /// Input BPQZ path
    #[arg(short = 'i', long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output TNSR path
    #[arg(short = 'o', long, value_name = "PATH")]
    pub output: PathBuf,
}

pub fn cmd_dequantize(args: &DequantizeArgs) -> Result<i32> {
    let bytes = fs::read(&args.input).map_err(|source| Error::Io {
        path: args.input.display().to_string(),
        source,
    })?;
    let layer = QuantizedLayer::unpack(&bytes)?;
    save_tensor(&layer.dequantize(), &args.output)?;
    Ok(0)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// One or more TNSR activation matrices (d_in x N)
    #[arg(long, value_name = "PATH", required = true, num_args = 1..)]
    pub calib: Vec<PathBuf>,
    /// Reference TNSR weights for paired output-side statistics
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
    /// Packed BPQZ layer to evaluate
    #[arg(short = 'i', long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let t0 = Instant::now();
    let mats: Vec<Tensor2D> = args
        .calib
        .iter()
        .map(load_tensor)
        .collect::<Result<_>>()?;
    let mut diagrs = Vec::with_capacity(mats.len());
    let mut cnt10_total = 0u64;
    for m in &mats {
        let (diagr, cnt10) = outlier_stats(m)?;
        diagrs.push(diagr);
        cnt10_total += cnt10;
    }
    let mut outliers = OutlierReport {
        diagr_p95: p95(&diagrs),
        cnt10: cnt10_total,
        output_diagr_reference: None,
        output_diagr_quantized: None,
        delta_diagr_pct: None,
        output_cnt10_reference: None,
        output_cnt10_quantized: None,
        delta_cnt10_pct: None,
    };

    let mut report = Report::new("eval", args.seed);

    if let Some(layer_path) = &args.input {
        let bytes = fs::read(layer_path).map_err(|source| Error::Io {
            path: layer_path.display().to_string(),
            source,
        })?;
        let layer = QuantizedLayer::unpack(&bytes)?;
        let coeff_bits = match layer.coeff_dtype() {
            bpdq_core::CoeffDtype::F16 => 16,
            bpdq_core::CoeffDtype::F32 => 32,
            bpdq_core::CoeffDtype::F64 => 64,
        };
        report.bpw = Some(bits_per_weight(
            layer.plane_count(),
            layer.group_size(),
            coeff_bits,
        ));
        if let Some(wpath) = &args.weights {
            let w = load_tensor(wpath)?;
            let x = &mats[0];
            if w.cols() != layer.d_in() || w.rows() != layer.d_out() {
                return Err(Error::DimensionMismatch {
                    detail: format!(
                        "weights are {}x{} but the layer is {}x{}",
                        w.rows(),
                        w.cols(),
                        layer.d_out(),
                        layer.d_in()
                    ),
                });
            }
            if x.rows() != w.cols() {
                return Err(Error::DimensionMismatch {
                    detail: format!(
                        "calibration has {} channels but weights have d_in {}",
                        x.rows(),
                        w.cols()
                    ),
                });
            }
            let qhat = layer.dequantize();
            let (frob, trace) = objective(&w, &qhat, x);
            report.objective_frob = Some(frob);
            report.objective_trace = Some(trace);

            // Paired output-side outlier statistics.
            let (ref_diagr, ref_cnt) = outlier_stats(&w.matmul(x))?;
            let (q_diagr, q_cnt) = outlier_stats(&qhat.matmul(x))?;
            outliers.output_diagr_reference = Some(ref_diagr);
            outliers.output_diagr_quantized = Some(q_diagr);
            outliers.delta_diagr_pct = Some(100.0 * (q_diagr - ref_diagr) / ref_diagr);
            outliers.output_cnt10_reference = Some(ref_cnt);
            outliers.output_cnt10_quantized = Some(q_cnt);
            outliers.delta_cnt10_pct = Some(if ref_cnt == 0 {
                0.0
            } else {
                100.0 * (q_cnt as f64 - ref_cnt as f64) / ref_cnt as f64
            });
        }
    }

    report.outlier_stats = Some(outliers);
    report.wall_time_s = t0.elapsed().as_secs_f64();
    emit_report(&report, args.report.as_deref())?;
    Ok(0)
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Number of seeded layers
    #[arg(long, default_value_t = 50)]
    pub layers: usize,
    #[arg(short, default_value_t = 2)]
    pub k: usize,
    #[arg(short, default_value_t = 64)]
    pub g: usize,
    #[arg(long, default_value_t = 32)]
    pub d_out: usize,
    #[arg(long, default_value_t = 256)]
    pub d_in: usize,
    /// Calibration samples per layer (default 8 * d_in)
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub tail_index: f64,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    pub percdamp: f64,
    #[arg(long, default_value_t = 16)]
    pub coeff_bits: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    let t0 = Instant::now();
    if args.layers == 0 {
        return Err(Error::InvalidConfig {
            detail: "--layers must be positive".into(),
        });
    }
    let n_samples = args.samples.unwrap_or(8 * args.d_in);
    let mut cfg = RunConfig::new(args.k, args.g);
    cfg.iters = args.iters;
    cfg.alpha = args.alpha;
    cfg.percdamp = args.percdamp;
    cfg.coeff_bits = args.coeff_bits;
    cfg.seed = args.seed;
    cfg.validate(args.d_in)?;
    let bits = args.k as u32;
    if !(2..=8).contains(&bits) {
        return Err(Error::InvalidConfig {
            detail: format!("baselines need k in 2..=8, got {bits}"),
        });
    }

    // Layer solves are independent; each is a pure function of its seed.
    let results: Vec<(f64, f64, f64)> = (0..args.layers)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64, f64)> {
            let seed = args.seed.wrapping_add(i as u64);
            let (w, x) = synth_layer(seed, args.d_out, args.d_in, n_samples, args.tail_index);
            let hstate = hessian_from_activations(&x, args.percdamp)?;
            let out = bpdq_quantize_layer(&w, &hstate, &cfg)?;
            let (f_bpdq, _) = objective(&w, &out.dense_weights, &x);
            let (qhat, _) = gptq_quantize_layer(&w, &hstate, bits, args.g)?;
            let (f_gptq, _) = objective(&w, &qhat, &x);
            let rtn = rtn_quantize_layer(&w, bits, args.g)?;
            let (f_rtn, _) = objective(&w, &rtn, &x);
            Ok((f_bpdq, f_gptq, f_rtn))
        })
        .collect::<Result<_>>()?;

    let n = results.len() as f64;
    let (bpdq, gptq, rtn): (Vec<f64>, Vec<f64>, Vec<f64>) = (
        results.iter().map(|r| r.0).collect(),
        results.iter().map(|r| r.1).collect(),
        results.iter().map(|r| r.2).collect(),
    );
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let wins_gptq = bpdq.iter().zip(&gptq).filter(|(a, b)| a < b).count();
    let wins_rtn = bpdq.iter().zip(&rtn).filter(|(a, b)| a < b).count();

    let mut report = Report::new("compare", args.seed);
    report.bpw = Some(bits_per_weight(cfg.k, cfg.g, cfg.coeff_bits));
    report.objective_frob = Some(mean(&bpdq));
    report.baseline_objectives = Some(BaselineObjectives {
        rtn: mean(&rtn),
        gptq: mean(&gptq),
    });
    report.win_rate_vs_gptq = Some(wins_gptq as f64 / n);
    report.win_rate_vs_rtn = Some(wins_rtn as f64 / n);
    report.per_layer_objectives = Some(PerLayerObjectives { bpdq, gptq, rtn });
    report.config = Some(cfg);
    report.wall_time_s = t0.elapsed().as_secs_f64();
    emit_report(&report, args.report.as_deref())?;
    Ok(0)
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Timed repetitions per path
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 128)]
    pub d_out: usize,
    #[arg(long, default_value_t = 1024)]
    pub d_in: usize,
    #[arg(short, default_value_t = 2)]
    pub k: usize,
    #[arg(short, default_value_t = 64)]
    pub g: usize,
    #[arg(long, default_value_t = 16)]
    pub coeff_bits: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

fn median_ns(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[(samples.len() - 1) / 2]
}

pub fn cmd_bench(args: &BenchArgs) -> Result<i32> {
    let t0 = Instant::now();
    if args.reps == 0 {
        return Err(Error::InvalidConfig {
            detail: "--reps must be positive".into(),
        });
    }
    if args.d_in == 0 || !args.d_in.is_multiple_of(args.g) {
        return Err(Error::InvalidConfig {
            detail: format!("group size {} does not divide d_in {}", args.g, args.d_in),
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(args.seed);
    let planes: Vec<ByteMatrix> = (0..args.k)
        .map(|_| {
            let mut m = ByteMatrix::zeros(args.d_out, args.d_in);
            for r in 0..args.d_out {
                for c in 0..args.d_in {
                    m.set(r, c, u8::from(rng.random::<bool>()));
                }
            }
            m
        })
        .collect();
    let n_coeffs = (args.d_in / args.g) * args.d_out * (args.k + 1);
    let coeffs: Vec<f64> = (0..n_coeffs).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let layer = QuantizedLayer::from_planes(
        args.d_out,
        args.d_in,
        args.g,
        args.k,
        args.coeff_bits,
        &planes,
        &coeffs,
    )?;
    let x: Vec<f64> = (0..args.d_in).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();

    // Embedded correctness cross-check.
    let dense = layer.dequantize();
    let y_lut = layer.lut_matvec(&x)?;
    let mut max_rel = 0.0f64;
    for r in 0..args.d_out {
        let want: f64 = (0..args.d_in).map(|c| dense[(r, c)] * x[c]).sum();
        max_rel = max_rel.max((y_lut[r] - want).abs() / (1.0 + want.abs()));
    }

    let mut lut_ns = Vec::with_capacity(args.reps);
    for _ in 0..args.reps {
        let t = Instant::now();
        black_box(layer.lut_matvec(black_box(&x))?);
        lut_ns.push(t.elapsed().as_nanos() as f64);
    }
    let mut dense_ns = Vec::with_capacity(args.reps);
    for _ in 0..args.reps {
        let t = Instant::now();
        let d = layer.dequantize();
        let mut y = vec![0.0f64; args.d_out];
        for (r, out) in y.iter_mut().enumerate() {
            let row = d.row(r);
            let mut acc = 0.0;
            for c in 0..args.d_in {
                acc += row[c] * x[c];
            }
            *out = acc;
        }
        black_box(y);
        dense_ns.push(t.elapsed().as_nanos() as f64);
    }

    let chunks_per_group: usize = (0..args.d_in / args.g)
        .map(|grp| {
            let start = grp * args.g;
            let end = start + args.g - 1;
            end / 8 - start / 8 + 1
        })
        .sum();
    let lut_med = median_ns(lut_ns);
    let dense_med = median_ns(dense_ns);

    let mut report = Report::new("bench", args.seed);
    report.bench = Some(BenchReport {
        reps: args.reps,
        d_out: args.d_out,
        d_in: args.d_in,
        k: args.k,
        g: args.g,
        lut_table_entries: args.d_in.div_ceil(8) * 256,
        lut_lookups: args.d_out * args.k * chunks_per_group,
        dense_flops: 2 * args.d_out * args.d_in + args.d_out * args.d_in * (args.k + 1),
        lut_ns_per_op_median: lut_med,
        dense_ns_per_op_median: dense_med,
        speedup: dense_med / lut_med,
        max_rel_deviation: max_rel,
    });
    report.wall_time_s = t0.elapsed().as_secs_f64();
    emit_report(&report, args.report.as_deref())?;
    Ok(0)
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    /// Run a single suite (prop1, prop2, b1_wls, b2_column, b3_delta)
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Group size override for the prop2 suite
    #[arg(short)]
    pub g: Option<usize>,
    #[arg(long, hide = true, default_value_t = false)]
    pub inject_fault: bool,
}

pub fn cmd_theory(args: &TheoryArgs) -> Result<i32> {
    let results = run_suites(&TheoryOptions {
        suite: args.suite.clone(),
        seed: args.seed,
        group_size: args.g,
        inject_fault: args.inject_fault,
    })?;
    let mut all_ok = true;
    for r in &results {
        println!(
            "{}: {}/{} {}",
            r.name,
            r.passed,
            r.total,
            if r.ok() { "pass" } else { "FAIL" }
        );
        all_ok &= r.ok();
    }
    println!("overall: {}", if all_ok { "pass" } else { "FAIL" });
    Ok(if all_ok { 0 } else { 1 })
}
