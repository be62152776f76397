//! Bit-plane initialization for one column group: 8-bit per-row affine codes,
//! plane extraction, MSB selection, and the first coefficient fit.

use crate::error::Result;
use crate::linalg::{solve_right_upper, wls_fit};
use crate::tensor::Tensor2D;

/// Small dense byte matrix, row-major. Holds 8-bit codes or 0/1 plane bits.
#[derive(Debug, Clone, PartialEq)]
pub struct ByteMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl ByteMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Per-row affine 8-bit codes of a group: `w ~ wmin + scale * z`.
#[derive(Debug, Clone)]
pub struct IntCodes {
    pub z: ByteMatrix,
    pub wmin: Vec<f64>,
    pub scale: Vec<f64>,
}

/// The `k` binary planes kept for a group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPlanes {
    pub planes: Vec<ByteMatrix>,
}

impl GroupPlanes {
    pub fn k(&self) -> usize {
        self.planes.len()
    }
}

/// Per-row affine round-to-nearest at 256 levels. The range is taken per row
/// of the group; a degenerate range falls back to unit scale (all codes 0).
/// Half-way values round away from zero.
pub fn rtn_int8(group: &Tensor2D) -> IntCodes {
    let (rows, cols) = (group.rows(), group.cols());
    let mut z = ByteMatrix::zeros(rows, cols);
    let mut wmin = Vec::with_capacity(rows);
    let mut scale = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = group.row(r);
        let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s = if hi > lo { (hi - lo) / 255.0 } else { 1.0 };
        for (c, &w) in row.iter().enumerate() {
            let code = ((w - lo) / s).round().clamp(0.0, 255.0);
            z.set(r, c, code as u8);
        }
        wmin.push(lo);
        scale.push(s);
    }
    IntCodes { z, wmin, scale }
}

/// Splits the 8-bit codes into their eight binary planes,
/// least significant first.
pub fn bit_plane_decompose(codes: &IntCodes) -> [ByteMatrix; 8] {
    let (rows, cols) = (codes.z.rows(), codes.z.cols());
    let mut planes: [ByteMatrix; 8] = std::array::from_fn(|_| ByteMatrix::zeros(rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let z = codes.z.get(r, c);
            for (i, plane) in planes.iter_mut().enumerate() {
                plane.set(r, c, (z >> i) & 1);
            }
        }
    }
    planes
}

/// Keeps the `k` most significant planes; plane `i` of the result is bit
/// `7 - k + i` of the code (1-based `i`, so the last kept plane is the MSB).
pub fn select_msb_planes(planes: &[ByteMatrix; 8], k: usize) -> GroupPlanes {
    assert!((1..=8).contains(&k));
    GroupPlanes {
        planes: (0..k).map(|j| planes[8 - k + j].clone()).collect(),
    }
}

/// Binary design matrix for one row: all-ones bias column followed by the
/// row's plane bits.
pub fn design_for_row(planes: &GroupPlanes, r: usize) -> Tensor2D {
    let g = planes.planes[0].cols();
    let k = planes.k();
    Tensor2D::from_fn(g, k + 1, |j, c| {
        if c == 0 {
            1.0
        } else {
            f64::from(planes.planes[c - 1].get(r, j))
        }
    })
}

/// Reconstruction of one row from its planes and coefficient vector.
pub fn reconstruct_row(planes: &GroupPlanes, coeffs_row: &[f64], r: usize) -> Vec<f64> {
    let g = planes.planes[0].cols();
    (0..g)
        .map(|j| {
            let mut v = coeffs_row[0];
            for (i, plane) in planes.planes.iter().enumerate() {
                if plane.get(r, j) == 1 {
                    v += coeffs_row[i + 1];
                }
            }
            v
        })
        .collect()
}

/// Initialization output for a group.
#[derive(Debug, Clone)]
pub struct InitGroup {
    pub planes: GroupPlanes,
    /// `d_out x (k+1)`, bias first.
    pub coeffs: Tensor2D,
    /// Dequantized block.
    pub q: Tensor2D,
    /// Error coordinates: `e * u_loc = snapshot - q`.
    pub e: Tensor2D,
}

/// Full group initialization: 8-bit codes, MSB planes, per-row coefficient
/// fit, and the resulting error coordinates.
pub fn init_group(
    snapshot: &Tensor2D,
    u_loc: &Tensor2D,
    k: usize,
    alpha: f64,
) -> Result<InitGroup> {
    let (rows, g) = (snapshot.rows(), snapshot.cols());
    let codes = rtn_int8(snapshot);
    let all = bit_plane_decompose(&codes);
    let planes = select_msb_planes(&all, k);

    let mut coeffs = Tensor2D::zeros(rows, k + 1);
    let mut q = Tensor2D::zeros(rows, g);
    for r in 0..rows {
        let design = design_for_row(&planes, r);
        let c = wls_fit(&design, snapshot.row(r), u_loc, alpha)?;
        for (i, ci) in c.iter().enumerate() {
            coeffs[(r, i)] = *ci;
        }
        let rec = reconstruct_row(&planes, &c, r);
        q.row_mut(r).copy_from_slice(&rec);
    }
    let e = solve_right_upper(&snapshot.sub(&q), u_loc)?;
    Ok(InitGroup {
        planes,
        coeffs,
        q,
        e,
    })
}
