//! Quantization-grid constructions: fixed level templates, per-group variable
//! grids, difference-ratio analysis, and an exhaustive membership oracle for
//! small groups.

use crate::error::{Error, Result};

/// Tolerance for comparing difference ratios and residuals on real-valued
/// templates.
pub const RATIO_TOL: f64 = 1e-9;

/// Fixed quantization template: a strictly increasing level vector shared
/// across groups up to bias and scale.
#[derive(Debug, Clone)]
pub struct GridTemplate {
    levels: Vec<f64>,
}

impl GridTemplate {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::InvalidConfig {
                detail: "template needs at least two levels".into(),
            });
        }
        if levels.iter().any(|v| !v.is_finite()) || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig {
                detail: "template levels must be strictly increasing".into(),
            });
        }
        Ok(Self { levels })
    }

    /// Uniform unsigned template `{0, 1, ..., 2^bits - 1}`.
    pub fn uniform(bits: u32) -> Self {
        let n = 1usize << bits;
        Self {
            levels: (0..n).map(|i| i as f64).collect(),
        }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
}

/// Coefficients of one group's variable grid: bias first, then one
/// coefficient per plane.
#[derive(Debug, Clone)]
pub struct VariableGridSpec {
    pub c: Vec<f64>,
}

impl VariableGridSpec {
    pub fn new(c: Vec<f64>) -> Self {
        assert!(c.len() >= 2, "need a bias and at least one coefficient");
        Self { c }
    }

    pub fn plane_count(&self) -> usize {
        self.c.len() - 1
    }
}

/// All `2^k` reconstruction values of a variable grid, indexed by the bit
/// pattern `n = sum b_i 2^{i-1}`. Not sorted, not deduplicated.
pub fn variable_levels(spec: &VariableGridSpec) -> Vec<f64> {
    let k = spec.plane_count();
    let mut out = Vec::with_capacity(1 << k);
    for n in 0..(1usize << k) {
        let mut v = spec.c[0];
        for i in 1..=k {
            if (n >> (i - 1)) & 1 == 1 {
                v += spec.c[i];
            }
        }
        out.push(v);
    }
    out
}

/// The finite set of ratios `(t_i - t_j) / (t_i - t_k)` over ordered triples
/// of distinct levels, deduplicated within [`RATIO_TOL`]. Sorted ascending.
pub fn difference_ratio_set(t: &GridTemplate) -> Vec<f64> {
    let lv = t.levels();
    let n = lv.len();
    let mut ratios = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if i == j || i == k || j == k {
                    continue;
                }
                ratios.push((lv[i] - lv[j]) / (lv[i] - lv[k]));
            }
        }
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ratios.dedup_by(|a, b| (*a - *b).abs() <= RATIO_TOL);
    ratios
}

fn ratio_in_set(set: &[f64], r: f64) -> bool {
    set.iter().any(|&s| (s - r).abs() <= RATIO_TOL)
}

/// Witness returned by the membership oracle: `v[i] = c0 + s * t[assignment[i]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedGridWitness {
    pub c0: f64,
    pub s: f64,
    pub assignment: Vec<usize>,
}

/// Exhaustive test of whether `v` lies on some bias-and-scale instance of the
/// template. Enumerates every assignment (coordinate 0 is the most
/// significant digit, so low-index level choices are tried first), fits the
/// two affine parameters per assignment, and accepts only a zero residual
/// within `1e-9 * (1 + max|v|)`.
pub fn fixed_grid_membership(
    v: &[f64],
    t: &GridTemplate,
) -> Result<Option<FixedGridWitness>> {
    let g = v.len();
    let nlev = t.levels().len();
    if g > 8 {
        return Err(Error::OracleSize {
            detail: format!("membership oracle is capped at g <= 8, got {g}"),
        });
    }
    let total = nlev.checked_pow(g as u32).ok_or_else(|| Error::OracleSize {
        detail: format!("{nlev}^{g} assignments overflow"),
    })?;
    if total > 1 << 24 {
        return Err(Error::OracleSize {
            detail: format!("{nlev}^{g} assignments exceed the enumeration cap"),
        });
    }

    let max_abs = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-9 * (1.0 + max_abs);
    let mean_v = v.iter().sum::<f64>() / g as f64;

    let mut assignment = vec![0usize; g];
    for idx in 0..total {
        let mut rem = idx;
        for slot in assignment.iter_mut().rev() {
            *slot = rem % nlev;
            rem /= nlev;
        }
        let a: Vec<f64> = assignment.iter().map(|&z| t.levels()[z]).collect();
        let mean_a = a.iter().sum::<f64>() / g as f64;
        let var_a: f64 = a.iter().map(|x| (x - mean_a) * (x - mean_a)).sum();
        let (c0, s) = if var_a <= f64::EPSILON * (1.0 + mean_a * mean_a) * g as f64 {
            (mean_v, 0.0)
        } else {
            let cov: f64 = a
                .iter()
                .zip(v)
                .map(|(ai, vi)| (ai - mean_a) * (vi - mean_v))
                .sum();
            let s = cov / var_a;
            (mean_v - s * mean_a, s)
        };
        let exact = a
            .iter()
            .zip(v)
            .all(|(ai, vi)| (vi - (c0 + s * ai)).abs() <= tol);
        if exact {
            return Ok(Some(FixedGridWitness {
                c0,
                s,
                assignment: assignment.clone(),
            }));
        }
    }
    Ok(None)
}

/// Builds a vector the template provably cannot represent: coordinates
/// `[0, c1, c2, 0, ..., 0]`, valid only when `c1/c2` avoids the template's
/// difference-ratio set.
pub fn construct_counterexample(
    t: &GridTemplate,
    g: usize,
    c1: f64,
    c2: f64,
) -> Result<Vec<f64>> {
    if g < 3 {
        return Err(Error::Precondition {
            detail: format!("counterexample needs g >= 3, got {g}"),
        });
    }
    if c1 == 0.0 || c2 == 0.0 || c1 == c2 {
        return Err(Error::Precondition {
            detail: "coefficients must be nonzero and distinct".into(),
        });
    }
    let ratios = difference_ratio_set(t);
    let r = c1 / c2;
    if ratio_in_set(&ratios, r) {
        return Err(Error::Precondition {
            detail: format!("ratio {r} lies in the template's difference-ratio set"),
        });
    }
    let mut v = vec![0.0; g];
    v[1] = c1;
    v[2] = c2;
    Ok(v)
}
