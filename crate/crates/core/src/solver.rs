//! Layer solver on the variable grid: per-group alternation of column-wise
//! plane updates and coefficient refits with delta correction, plus
//! fixed-grid baselines and the output-reconstruction objective.

use std::time::Instant;

use crate::bpd::{design_for_row, init_group, reconstruct_row, GroupPlanes};
use crate::error::{Error, Result};
use crate::kernel::QuantizedLayer;
use crate::linalg::{solve_right_upper, wls_fit, HessianState};
use crate::tensor::{RunConfig, Tensor2D};

/// State of one group during the solve.
///
/// Invariant: `snapshot - q = e * u_loc` up to roundoff, where `u_loc` is the
/// local triangular block the state was built against.
#[derive(Debug, Clone)]
pub struct GroupState {
    /// Working weights at group entry (after cross-group propagation).
    pub snapshot: Tensor2D,
    pub planes: GroupPlanes,
    /// `d_out x (k+1)`, bias first.
    pub coeffs: Tensor2D,
    /// Current dequantized block.
    pub q: Tensor2D,
    /// Propagation coordinates for this group.
    pub e: Tensor2D,
    /// `|e|_F^2`.
    pub score: f64,
}

/// Result of solving one group: the retained candidate plus the score trace.
#[derive(Debug, Clone)]
pub struct GroupSolve {
    pub best: GroupState,
    pub init_score: f64,
    /// Candidate score after each refinement round.
    pub iteration_scores: Vec<f64>,
}

/// Summary of a layer solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// `|(w - q) x|_F^2` form of the objective (undamped metric).
    pub objective_frob: f64,
    /// Trace form against the damped Hessian.
    pub objective_trace: f64,
    pub per_group_scores: Vec<f64>,
    pub per_group_init_scores: Vec<f64>,
    pub iterations_used: usize,
    pub wall_time: f64,
}

/// Full output of the variable-grid layer solve.
#[derive(Debug)]
pub struct BpdqLayerOutput {
    pub layer: QuantizedLayer,
    pub report: SolveReport,
    /// Dequantized weights at solver precision (f64 coefficients).
    pub dense_weights: Tensor2D,
    /// Assembled propagation coordinates, one block per group.
    pub error_coords: Tensor2D,
    pub groups: Vec<GroupSolve>,
}

/// Both forms of the output reconstruction error:
/// `|(w - q) x|_F^2` and `tr((w - q) xx^T (w - q)^T)`.
pub fn objective(w: &Tensor2D, q: &Tensor2D, x: &Tensor2D) -> (f64, f64) {
    assert_eq!((w.rows(), w.cols()), (q.rows(), q.cols()));
    assert_eq!(w.cols(), x.rows());
    let r = w.sub(q);
    let frob = r.matmul(x).frob_norm_sq();
    let h = x.gram();
    let mut trace = 0.0;
    for row in 0..r.rows() {
        let rr = r.row(row);
        for i in 0..r.cols() {
            if rr[i] == 0.0 {
                continue;
            }
            let hrow = h.row(i);
            let mut acc = 0.0;
            for j in 0..r.cols() {
                acc += hrow[j] * rr[j];
            }
            trace += rr[i] * acc;
        }
    }
    (frob, trace)
}

/// Chosen bit patterns and reconstructions for one column.
#[derive(Debug, Clone)]
pub struct ColumnChoice {
    /// Per-row candidate index `n = sum b_i 2^{i-1}`.
    pub index: Vec<u8>,
    /// Per-row reconstructed value.
    pub q: Vec<f64>,
}

/// Nearest grid value per row, enumerating all `2^k` candidates in index
/// order; ties keep the lowest index.
pub fn quantize_column(values: &[f64], coeffs: &Tensor2D) -> ColumnChoice {
    let k = coeffs.cols() - 1;
    debug_assert!(k <= 8);
    debug_assert_eq!(values.len(), coeffs.rows());
    let n_cand = 1usize << k;
    let mut index = Vec::with_capacity(values.len());
    let mut q = Vec::with_capacity(values.len());
    for (r, &w) in values.iter().enumerate() {
        let c = coeffs.row(r);
        let mut best_n = 0u8;
        let mut best_v = c[0];
        let mut best_d = (w - c[0]) * (w - c[0]);
        for n in 1..n_cand {
            let mut v = c[0];
            for i in 0..k {
                if (n >> i) & 1 == 1 {
                    v += c[i + 1];
                }
            }
            let d = (w - v) * (w - v);
            if d < best_d {
                best_d = d;
                best_n = n as u8;
                best_v = v;
            }
        }
        index.push(best_n);
        q.push(best_v);
    }
    ColumnChoice { index, q }
}

/// Rank-one compensation: `working[:, from_col..] -= e_col (x) u_row_segment`.
pub fn propagate_column(
    working: &mut Tensor2D,
    from_col: usize,
    e_col: &[f64],
    u_row_segment: &[f64],
) {
    debug_assert_eq!(e_col.len(), working.rows());
    debug_assert_eq!(u_row_segment.len(), working.cols() - from_col);
    for (r, &e) in e_col.iter().enumerate() {
        if e == 0.0 {
            continue;
        }
        let row = working.row_mut(r);
        for (j, &u) in u_row_segment.iter().enumerate() {
            row[from_col + j] -= e * u;
        }
    }
}

/// Refits the coefficients against the snapshot with the planes held fixed,
/// then restores the propagation state with a triangular correction.
pub fn refit_and_correct(state: &GroupState, u_loc: &Tensor2D, alpha: f64) -> Result<GroupState> {
    let rows = state.snapshot.rows();
    let g = state.snapshot.cols();
    let k = state.planes.k();
    let mut coeffs = Tensor2D::zeros(rows, k + 1);
    let mut q_new = Tensor2D::zeros(rows, g);
    for r in 0..rows {
        let design = design_for_row(&state.planes, r);
        let c = wls_fit(&design, state.snapshot.row(r), u_loc, alpha)?;
        for (i, ci) in c.iter().enumerate() {
            coeffs[(r, i)] = *ci;
        }
        q_new.row_mut(r).copy_from_slice(&reconstruct_row(&state.planes, &c, r));
    }
    let delta = solve_right_upper(&state.q.sub(&q_new), u_loc)?;
    let mut e = state.e.clone();
    for r in 0..rows {
        for j in 0..g {
            e[(r, j)] += delta[(r, j)];
        }
    }
    let score = e.frob_norm_sq();
    Ok(GroupState {
        snapshot: state.snapshot.clone(),
        planes: state.planes.clone(),
        coeffs,
        q: q_new,
        e,
        score,
    })
}

/// Solves one group: initialization followed by `cfg.iters` rounds of
/// column-wise plane update (with in-group compensation) and coefficient
/// refit. Returns the lowest-score candidate seen.
pub fn solve_group(snapshot: &Tensor2D, u_loc: &Tensor2D, cfg: &RunConfig) -> Result<GroupSolve> {
    let rows = snapshot.rows();
    let g = snapshot.cols();
    assert_eq!(g, u_loc.rows());

    let init = init_group(snapshot, u_loc, cfg.k, cfg.alpha)?;
    let init_state = {
        let score = init.e.frob_norm_sq();
        GroupState {
            snapshot: snapshot.clone(),
            planes: init.planes,
            coeffs: init.coeffs,
            q: init.q,
            e: init.e,
            score,
        }
    };
    let init_score = init_state.score;
    let mut best = init_state.clone();
    let mut current = init_state;
    let mut iteration_scores = Vec::with_capacity(cfg.iters);

    for _ in 0..cfg.iters {
        // Plane update from a fresh copy of the snapshot so every round is a
        // comparable candidate.
        let mut working = snapshot.clone();
        let mut planes = GroupPlanes {
            planes: (0..cfg.k)
                .map(|_| crate::bpd::ByteMatrix::zeros(rows, g))
                .collect(),
        };
        let mut q = Tensor2D::zeros(rows, g);
        let mut e = Tensor2D::zeros(rows, g);
        for l in 0..g {
            let col: Vec<f64> = (0..rows).map(|r| working[(r, l)]).collect();
            let choice = quantize_column(&col, &current.coeffs);
            let diag = u_loc[(l, l)];
            let mut e_col = Vec::with_capacity(rows);
            for r in 0..rows {
                for (i, plane) in planes.planes.iter_mut().enumerate() {
                    plane.set(r, l, (choice.index[r] >> i) & 1);
                }
                q[(r, l)] = choice.q[r];
                let ec = (col[r] - choice.q[r]) / diag;
                e[(r, l)] = ec;
                e_col.push(ec);
            }
            if l + 1 < g {
                propagate_column(&mut working, l + 1, &e_col, &u_loc.row(l)[l + 1..]);
            }
        }
        let mid = GroupState {
            snapshot: snapshot.clone(),
            planes,
            coeffs: current.coeffs.clone(),
            q,
            score: e.frob_norm_sq(),
            e,
        };
        current = refit_and_correct(&mid, u_loc, cfg.alpha)?;
        iteration_scores.push(current.score);
        if current.score < best.score {
            best = current.clone();
        }
    }

    Ok(GroupSolve {
        best,
        init_score,
        iteration_scores,
    })
}

fn trace_objectives(w: &Tensor2D, q: &Tensor2D, hstate: &HessianState) -> (f64, f64) {
    let r = w.sub(q);
    let mut trace = 0.0;
    for row in 0..r.rows() {
        let rr = r.row(row);
        for i in 0..r.cols() {
            if rr[i] == 0.0 {
                continue;
            }
            let hrow = hstate.h.row(i);
            let mut acc = 0.0;
            for j in 0..r.cols() {
                acc += hrow[j] * rr[j];
            }
            trace += rr[i] * acc;
        }
    }
    // Removing the damping ridge recovers the plain data-term objective.
    let frob = trace - hstate.damp_lambda * r.frob_norm_sq();
    (frob.max(0.0), trace)
}

/// Variable-grid quantization of a whole layer: groups are processed left to
/// right, each solved in its local metric, and the retained error coordinates
/// are propagated once to the remaining columns.
pub fn bpdq_quantize_layer(
    w: &Tensor2D,
    hstate: &HessianState,
    cfg: &RunConfig,
) -> Result<BpdqLayerOutput> {
    let start = Instant::now();
    let (d_out, d_in) = (w.rows(), w.cols());
    cfg.validate(d_in)?;
    if hstate.u.rows() != d_in {
        return Err(Error::DimensionMismatch {
            detail: format!(
                "Hessian factor order {} does not match d_in {d_in}",
                hstate.u.rows()
            ),
        });
    }

    let g = cfg.g;
    let n_groups = d_in / g;
    let mut working = w.clone();
    let mut dense_weights = Tensor2D::zeros(d_out, d_in);
    let mut error_coords = Tensor2D::zeros(d_out, d_in);
    let mut coeffs = Vec::with_capacity(n_groups * d_out * (cfg.k + 1));
    let mut plane_bits: Vec<crate::bpd::ByteMatrix> = (0..cfg.k)
        .map(|_| crate::bpd::ByteMatrix::zeros(d_out, d_in))
        .collect();
    let mut per_group_scores = Vec::with_capacity(n_groups);
    let mut per_group_init_scores = Vec::with_capacity(n_groups);
    let mut groups = Vec::with_capacity(n_groups);

    for gi in 0..n_groups {
        let s = gi * g;
        let u_loc = hstate.u.block(s, s + g, s, s + g);
        let snapshot = working.block(0, d_out, s, s + g);
        let solve = solve_group(&snapshot, &u_loc, cfg)?;
        let best = &solve.best;

        dense_weights.set_block(0, s, &best.q);
        error_coords.set_block(0, s, &best.e);
        for r in 0..d_out {
            for ci in 0..=cfg.k {
                coeffs.push(best.coeffs[(r, ci)]);
            }
        }
        for (i, plane) in best.planes.planes.iter().enumerate() {
            for r in 0..d_out {
                for j in 0..g {
                    plane_bits[i].set(r, s + j, plane.get(r, j));
                }
            }
        }

        // One tail update with the retained coordinates.
        if s + g < d_in {
            let u_tail = hstate.u.block(s, s + g, s + g, d_in);
            let update = best.e.matmul(&u_tail);
            for r in 0..d_out {
                let row = working.row_mut(r);
                let urow = update.row(r);
                for (j, u) in urow.iter().enumerate() {
                    row[s + g + j] -= u;
                }
            }
        }

        per_group_scores.push(best.score);
        per_group_init_scores.push(solve.init_score);
        groups.push(solve);
    }

    let layer = QuantizedLayer::from_planes(d_out, d_in, g, cfg.k, cfg.coeff_bits, &plane_bits, &coeffs)?;
    let (objective_frob, objective_trace) = trace_objectives(w, &dense_weights, hstate);
    let report = SolveReport {
        objective_frob,
        objective_trace,
        per_group_scores,
        per_group_init_scores,
        iterations_used: cfg.iters,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(BpdqLayerOutput {
        layer,
        report,
        dense_weights,
        error_coords,
        groups,
    })
}

/// Per-row affine parameters of a group at `2^bits` levels.
fn rtn_params(group_row: &[f64], bits: u32) -> (f64, f64) {
    let lo = group_row.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = group_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let levels = ((1u32 << bits) - 1) as f64;
    let s = if hi > lo { (hi - lo) / levels } else { 1.0 };
    (lo, s)
}

fn rtn_apply(value: f64, lo: f64, s: f64, bits: u32) -> f64 {
    let max_code = ((1u32 << bits) - 1) as f64;
    let code = ((value - lo) / s).round().clamp(0.0, max_code);
    lo + s * code
}

/// Round-to-nearest reconstruction of one group block, per-row affine grid.
pub fn rtn_reconstruct_group(group: &Tensor2D, bits: u32) -> Tensor2D {
    Tensor2D::from_fn(group.rows(), group.cols(), |r, c| {
        let (lo, s) = rtn_params(group.row(r), bits);
        rtn_apply(group[(r, c)], lo, s, bits)
    })
}

/// Fixed-grid baseline with error compensation: per-column rounding on a
/// per-(row, group) affine grid frozen at group entry, full-tail propagation
/// after every column.
pub fn gptq_quantize_layer(
    w: &Tensor2D,
    hstate: &HessianState,
    bits: u32,
    g: usize,
) -> Result<(Tensor2D, SolveReport)> {
    let start = Instant::now();
    let (d_out, d_in) = (w.rows(), w.cols());
    if !(2..=8).contains(&bits) {
        return Err(Error::InvalidConfig {
            detail: format!("baseline bit width must be in 2..=8, got {bits}"),
        });
    }
    if d_in == 0 || d_in % g != 0 {
        return Err(Error::InvalidConfig {
            detail: format!("group size {g} does not divide d_in {d_in}"),
        });
    }
    if hstate.u.rows() != d_in {
        return Err(Error::DimensionMismatch {
            detail: format!(
                "Hessian factor order {} does not match d_in {d_in}",
                hstate.u.rows()
            ),
        });
    }

    let mut working = w.clone();
    let mut qhat = Tensor2D::zeros(d_out, d_in);
    let n_groups = d_in / g;
    let mut per_group_scores = vec![0.0; n_groups];

    for (gi, group_score) in per_group_scores.iter_mut().enumerate() {
        let s = gi * g;
        // Grid parameters frozen from the working weights at group entry.
        let params: Vec<(f64, f64)> = (0..d_out)
            .map(|r| rtn_params(&working.row(r)[s..s + g], bits))
            .collect();
        for l in s..s + g {
            let diag = hstate.u[(l, l)];
            let mut e_col = Vec::with_capacity(d_out);
            for r in 0..d_out {
                let (lo, sc) = params[r];
                let wv = working[(r, l)];
                let qv = rtn_apply(wv, lo, sc, bits);
                qhat[(r, l)] = qv;
                let ec = (wv - qv) / diag;
                e_col.push(ec);
                *group_score += ec * ec;
            }
            if l + 1 < d_in {
                let useg: Vec<f64> = hstate.u.row(l)[l + 1..].to_vec();
                propagate_column(&mut working, l + 1, &e_col, &useg);
            }
        }
    }

    let (objective_frob, objective_trace) = trace_objectives(w, &qhat, hstate);
    let report = SolveReport {
        objective_frob,
        objective_trace,
        per_group_init_scores: per_group_scores.clone(),
        per_group_scores,
        iterations_used: 0,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((qhat, report))
}

/// Plain round-to-nearest baseline: per-(row, group) affine grid, no
/// compensation.
pub fn rtn_quantize_layer(w: &Tensor2D, bits: u32, g: usize) -> Result<Tensor2D> {
    let (d_out, d_in) = (w.rows(), w.cols());
    if !(2..=8).contains(&bits) {
        return Err(Error::InvalidConfig {
            detail: format!("baseline bit width must be in 2..=8, got {bits}"),
        });
    }
    if d_in == 0 || d_in % g != 0 {
        return Err(Error::InvalidConfig {
            detail: format!("group size {g} does not divide d_in {d_in}"),
        });
    }
    let mut out = Tensor2D::zeros(d_out, d_in);
    for gi in 0..d_in / g {
        let s = gi * g;
        let block = rtn_reconstruct_group(&w.block(0, d_out, s, s + g), bits);
        out.set_block(0, s, &block);
    }
    Ok(out)
}
