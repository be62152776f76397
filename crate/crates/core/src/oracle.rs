//! Independent brute-force references for tests and acceptance checks. These
//! deliberately avoid the production code paths: inversion is Gauss-Jordan
//! elimination, fits go through explicit dense inverses, and projections are
//! exhaustive scans. Nothing here is called by the solver.

use crate::error::{Error, Result};
use crate::grid::{variable_levels, VariableGridSpec};
use crate::tensor::Tensor2D;

/// Dense inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert_dense(a: &Tensor2D) -> Result<Tensor2D> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut m = a.clone();
    let mut inv = Tensor2D::identity(n);
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if m[(r, col)].abs() > m[(pivot, col)].abs() {
                pivot = r;
            }
        }
        if m[(pivot, col)] == 0.0 {
            return Err(Error::Singular {
                detail: format!("zero pivot in column {col}"),
            });
        }
        if pivot != col {
            for c in 0..n {
                let tmp = m[(col, c)];
                m[(col, c)] = m[(pivot, c)];
                m[(pivot, c)] = tmp;
                let tmp = inv[(col, c)];
                inv[(col, c)] = inv[(pivot, c)];
                inv[(pivot, c)] = tmp;
            }
        }
        let d = m[(col, col)];
        for c in 0..n {
            m[(col, c)] /= d;
            inv[(col, c)] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[(r, col)];
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                m[(r, c)] -= f * m[(col, c)];
                inv[(r, c)] -= f * inv[(col, c)];
            }
        }
    }
    Ok(inv)
}

/// Exhaustive nearest-level scan for one scalar, candidates in index order,
/// strict-less-than comparison so the first minimum wins.
pub fn reference_column_argmin(value: f64, coeffs: &[f64]) -> (u8, f64) {
    let levels = variable_levels(&VariableGridSpec::new(coeffs.to_vec()));
    let mut best = 0usize;
    let mut best_d = (value - levels[0]) * (value - levels[0]);
    for (n, &v) in levels.iter().enumerate().skip(1) {
        let d = (value - v) * (value - v);
        if d < best_d {
            best_d = d;
            best = n;
        }
    }
    (best as u8, levels[best])
}

/// Global minimizer of the metric-weighted error over every plane assignment
/// of one row's group. Assignment digits are candidate indices, coordinate 0
/// least significant.
pub fn brute_force_group_optimum(
    w_row: &[f64],
    coeffs: &[f64],
    u_loc: &Tensor2D,
) -> Result<(Vec<u8>, f64)> {
    let g = w_row.len();
    let k = coeffs.len() - 1;
    assert_eq!(g, u_loc.rows());
    let n_cand = 1usize << k;
    let total = (n_cand as u128).pow(g as u32);
    if total > 1 << 20 {
        return Err(Error::OracleSize {
            detail: format!("{n_cand}^{g} assignments exceed the 2^20 enumeration cap"),
        });
    }
    let total = total as usize;
    let levels = variable_levels(&VariableGridSpec::new(coeffs.to_vec()));
    let uinv = invert_dense(u_loc)?;

    let mut best_assignment = vec![0u8; g];
    let mut best_err = f64::INFINITY;
    let mut digits = vec![0usize; g];
    for idx in 0..total {
        let mut rem = idx;
        for d in digits.iter_mut() {
            *d = rem % n_cand;
            rem /= n_cand;
        }
        // e = (v - w) u_loc^{-1}; error = |e|^2.
        let mut err = 0.0;
        for j in 0..g {
            let mut ej = 0.0;
            for (col, &d) in digits.iter().enumerate() {
                let r = levels[d] - w_row[col];
                if r != 0.0 {
                    ej += r * uinv[(col, j)];
                }
            }
            err += ej * ej;
        }
        if err < best_err {
            best_err = err;
            for (slot, &d) in best_assignment.iter_mut().zip(&digits) {
                *slot = d as u8;
            }
        }
    }
    Ok((best_assignment, best_err))
}

/// Damped weighted least squares through explicit dense inverses.
pub fn dense_wls(
    design: &Tensor2D,
    target: &[f64],
    u_loc: &Tensor2D,
    alpha: f64,
) -> Result<Vec<f64>> {
    let g = design.rows();
    let p = design.cols();
    assert_eq!(g, target.len());
    let m = invert_dense(&u_loc.transpose())?;
    let dt = m.matmul(design);
    let tt = m.matmul(&Tensor2D::new(g, 1, target.to_vec()).expect("column shape"));
    let mut gram = dt.transpose().matmul(&dt);
    for i in 0..p {
        gram[(i, i)] += alpha;
    }
    let ginv = invert_dense(&gram).map_err(|_| Error::Singular {
        detail: "rank-deficient design with alpha = 0".into(),
    })?;
    let rhs = dt.transpose().matmul(&tt);
    let c = ginv.matmul(&rhs);
    Ok((0..p).map(|i| c[(i, 0)]).collect())
}
