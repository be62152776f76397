//! Dense linear algebra for the solver: damped Hessian construction, the
//! upper-triangular factor of the inverse Hessian, triangular solves, and the
//! metric-weighted least-squares coefficient fit.

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// Damped activation Hessian together with the factor used for error
/// coordinates.
///
/// `u` is upper triangular with positive diagonal and satisfies
/// `h^{-1} = u^T u`.
#[derive(Debug, Clone)]
pub struct HessianState {
    pub h: Tensor2D,
    pub u: Tensor2D,
    pub damp_lambda: f64,
}

/// Builds `h = x x^T + lambda I` with `lambda = percdamp * mean(diag(x x^T))`
/// and factors its inverse.
pub fn hessian_from_activations(x: &Tensor2D, percdamp: f64) -> Result<HessianState> {
    if x.cols() == 0 {
        return Err(Error::DimensionMismatch {
            detail: "activations need at least one sample column".into(),
        });
    }
    let d = x.rows();
    let mut h = x.gram();
    let mean_diag = (0..d).map(|i| h[(i, i)]).sum::<f64>() / d as f64;
    let damp_lambda = percdamp * mean_diag;
    for i in 0..d {
        h[(i, i)] += damp_lambda;
    }
    let u = inverse_cholesky_factor(&h).map_err(|_| Error::SingularHessian {
        detail: format!(
            "damped Hessian ({d}x{d}, lambda = {damp_lambda:.3e}) is not positive definite"
        ),
    })?;
    Ok(HessianState { h, u, damp_lambda })
}

/// Lower Cholesky factor `l` with `a = l l^T`. Fails on a non-positive pivot.
pub fn cholesky_lower(a: &Tensor2D) -> Result<Tensor2D> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "cholesky needs a square matrix");
    let mut l = Tensor2D::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a[(i, j)];
            for m in 0..j {
                acc -= l[(i, m)] * l[(j, m)];
            }
            if i == j {
                if acc <= 0.0 {
                    return Err(Error::Singular {
                        detail: format!("non-positive pivot {acc:.3e} at index {i}"),
                    });
                }
                l[(i, j)] = acc.sqrt();
            } else {
                l[(i, j)] = acc / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Upper-triangular `u` with `h^{-1} = u^T u` and positive diagonal.
pub fn inverse_cholesky_factor(h: &Tensor2D) -> Result<Tensor2D> {
    let n = h.rows();
    let l = cholesky_lower(h)?;

    // h^{-1} = l^{-T} l^{-1}; invert l by forward substitution on I.
    let mut linv = Tensor2D::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for m in col..i {
                acc -= l[(i, m)] * linv[(m, col)];
            }
            linv[(i, col)] = acc / l[(i, i)];
        }
    }
    let mut hinv = Tensor2D::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            // (l^{-T} l^{-1})[i,j] = sum_m linv[m,i] * linv[m,j]
            for m in j..n {
                acc += linv[(m, i)] * linv[(m, j)];
            }
            hinv[(i, j)] = acc;
            hinv[(j, i)] = acc;
        }
    }

    // The upper factor of a^T a form: a = l' l'^T gives u = l'^T.
    let l2 = cholesky_lower(&hinv)?;
    Ok(l2.transpose())
}

/// Solves `u^T y = rhs` by forward substitution; `u` is `g x g` upper
/// triangular, `rhs` is `g x m`.
pub fn solve_upper_transpose(u: &Tensor2D, rhs: &Tensor2D) -> Result<Tensor2D> {
    let g = u.rows();
    assert_eq!(g, u.cols());
    assert_eq!(g, rhs.rows(), "rhs rows must match factor order");
    let m = rhs.cols();
    let mut y = Tensor2D::zeros(g, m);
    for i in 0..g {
        let diag = u[(i, i)];
        if diag == 0.0 {
            return Err(Error::Singular {
                detail: format!("zero diagonal at index {i}"),
            });
        }
        for c in 0..m {
            let mut acc = rhs[(i, c)];
            for j in 0..i {
                acc -= u[(j, i)] * y[(j, c)];
            }
            y[(i, c)] = acc / diag;
        }
    }
    Ok(y)
}

/// Solves `y u = m` column by column; `u` is `g x g` upper triangular, `m` is
/// `r x g`.
pub fn solve_right_upper(m: &Tensor2D, u: &Tensor2D) -> Result<Tensor2D> {
    let g = u.rows();
    assert_eq!(g, u.cols());
    assert_eq!(g, m.cols(), "matrix cols must match factor order");
    let rows = m.rows();
    let mut y = Tensor2D::zeros(rows, g);
    for j in 0..g {
        let diag = u[(j, j)];
        if diag == 0.0 {
            return Err(Error::Singular {
                detail: format!("zero diagonal at index {j}"),
            });
        }
        for r in 0..rows {
            let mut acc = m[(r, j)];
            for i in 0..j {
                acc -= y[(r, i)] * u[(i, j)];
            }
            y[(r, j)] = acc / diag;
        }
    }
    Ok(y)
}

/// Minimizes `|u^{-T}(design c - target)|^2 + alpha |c|^2` over `c`.
///
/// The design matrix is `g x (k+1)` with an all-ones first column; the fit is
/// carried out by transforming both sides with the triangular factor and
/// solving the small damped normal equations.
pub fn wls_fit(
    design: &Tensor2D,
    target: &[f64],
    u_loc: &Tensor2D,
    alpha: f64,
) -> Result<Vec<f64>> {
    let g = design.rows();
    let p = design.cols();
    assert_eq!(g, target.len());
    assert_eq!(g, u_loc.rows());

    let d = solve_upper_transpose(u_loc, design)?;
    let t = {
        let target_col = Tensor2D::new(g, 1, target.to_vec()).expect("column shape");
        solve_upper_transpose(u_loc, &target_col)?
    };

    // p x p normal equations: (d^T d + alpha I) c = d^T t.
    let mut gram = Tensor2D::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let mut acc = 0.0;
            for r in 0..g {
                acc += d[(r, a)] * d[(r, b)];
            }
            gram[(a, b)] = acc;
            gram[(b, a)] = acc;
        }
    }
    for a in 0..p {
        gram[(a, a)] += alpha;
    }
    let mut rhs = vec![0.0; p];
    for a in 0..p {
        let mut acc = 0.0;
        for r in 0..g {
            acc += d[(r, a)] * t[(r, 0)];
        }
        rhs[a] = acc;
    }

    let l = cholesky_lower(&gram).map_err(|_| Error::Singular {
        detail: "rank-deficient design with alpha = 0".into(),
    })?;
    // Forward then back substitution.
    let mut z = vec![0.0; p];
    for i in 0..p {
        let mut acc = rhs[i];
        for j in 0..i {
            acc -= l[(i, j)] * z[j];
        }
        z[i] = acc / l[(i, i)];
    }
    let mut c = vec![0.0; p];
    for i in (0..p).rev() {
        let mut acc = z[i];
        for j in i + 1..p {
            acc -= l[(j, i)] * c[j];
        }
        c[i] = acc / l[(i, i)];
    }
    Ok(c)
}

/// Frobenius-relative check `|u^T u - h^{-1}| / |h^{-1}|`, with the inverse
/// taken by an independent elimination route.
pub fn factor_identity_residual(state: &HessianState) -> f64 {
    let hinv = crate::oracle::invert_dense(&state.h).expect("h must be invertible");
    let utu = state.u.transpose().matmul(&state.u);
    utu.sub(&hinv).frob_norm() / hinv.frob_norm()
}
