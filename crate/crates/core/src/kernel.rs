//! Packed layer artifact: bit-packed planes plus group coefficients, the
//! BPQZ container, dequantization, a byte-wise lookup-table matvec, and
//! storage accounting.

use half::f16;

use crate::bpd::ByteMatrix;
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

const BPQZ_MAGIC: &[u8; 4] = b"BPQZ";
const BPQZ_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

/// Storage width of the coefficient payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoeffDtype {
    F16,
    F32,
    F64,
}

impl CoeffDtype {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            16 => Ok(Self::F16),
            32 => Ok(Self::F32),
            64 => Ok(Self::F64),
            other => Err(Error::InvalidConfig {
                detail: format!("coefficient width must be 16, 32, or 64 bits, got {other}"),
            }),
        }
    }

    fn code(self) -> u8 {
        match self {
            Self::F16 => 0,
            Self::F32 => 1,
            Self::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::F16),
            1 => Some(Self::F32),
            2 => Some(Self::F64),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Self::F16 => 2,
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    /// Rounds a value to this storage width (round to nearest even).
    pub fn snap(self, v: f64) -> f64 {
        match self {
            Self::F16 => f64::from(f16::from_f64(v)),
            Self::F32 => v as f32 as f64,
            Self::F64 => v,
        }
    }
}

/// Packed quantized layer: `k` bit planes over the full layer plus one
/// `(k+1)`-coefficient vector per (row, group).
///
/// Planes are row-major with eight columns per byte, least significant bit
/// first; each row is padded to a whole byte. Coefficients are stored snapped
/// to the declared width and ordered by (group, row, coefficient index).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    d_out: usize,
    d_in: usize,
    g: usize,
    k: usize,
    coeff_dtype: CoeffDtype,
    coeffs: Vec<f64>,
    planes: Vec<Vec<u8>>,
}

impl QuantizedLayer {
    /// Assembles a layer from unpacked 0/1 plane matrices and raw
    /// coefficients; coefficients are snapped to the storage width here.
    pub fn from_planes(
        d_out: usize,
        d_in: usize,
        g: usize,
        k: usize,
        coeff_bits: u32,
        plane_bits: &[ByteMatrix],
        coeffs: &[f64],
    ) -> Result<Self> {
        let dtype = CoeffDtype::from_bits(coeff_bits)?;
        if g == 0 || !d_in.is_multiple_of(g) {
            return Err(Error::InvalidConfig {
                detail: format!("group size {g} does not divide d_in {d_in}"),
            });
        }
        if plane_bits.len() != k {
            return Err(Error::DimensionMismatch {
                detail: format!("expected {k} planes, got {}", plane_bits.len()),
            });
        }
        let n_groups = d_in / g;
        if coeffs.len() != n_groups * d_out * (k + 1) {
            return Err(Error::DimensionMismatch {
                detail: format!(
                    "expected {} coefficients, got {}",
                    n_groups * d_out * (k + 1),
                    coeffs.len()
                ),
            });
        }
        let bytes_per_row = d_in.div_ceil(8);
        let mut planes = Vec::with_capacity(k);
        for pm in plane_bits {
            assert_eq!((pm.rows(), pm.cols()), (d_out, d_in));
            let mut packed = vec![0u8; d_out * bytes_per_row];
            for r in 0..d_out {
                for c in 0..d_in {
                    if pm.get(r, c) != 0 {
                        packed[r * bytes_per_row + c / 8] |= 1 << (c % 8);
                    }
                }
            }
            planes.push(packed);
        }
        Ok(Self {
            d_out,
            d_in,
            g,
            k,
            coeff_dtype: dtype,
            coeffs: coeffs.iter().map(|&c| dtype.snap(c)).collect(),
            planes,
        })
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn group_size(&self) -> usize {
        self.g
    }

    pub fn plane_count(&self) -> usize {
        self.k
    }

    pub fn coeff_dtype(&self) -> CoeffDtype {
        self.coeff_dtype
    }

    /// Coefficient `ci` of (row, group); index 0 is the bias.
    pub fn coeff(&self, group: usize, row: usize, ci: usize) -> f64 {
        self.coeffs[(group * self.d_out + row) * (self.k + 1) + ci]
    }

    pub fn plane_bit(&self, plane: usize, row: usize, col: usize) -> u8 {
        let bytes_per_row = self.d_in.div_ceil(8);
        (self.planes[plane][row * bytes_per_row + col / 8] >> (col % 8)) & 1
    }

    fn plane_row(&self, plane: usize, row: usize) -> &[u8] {
        let bytes_per_row = self.d_in.div_ceil(8);
        &self.planes[plane][row * bytes_per_row..(row + 1) * bytes_per_row]
    }

    /// Dense reconstruction: bias plus the coefficient-weighted planes.
    pub fn dequantize(&self) -> Tensor2D {
        Tensor2D::from_fn(self.d_out, self.d_in, |r, c| {
            let grp = c / self.g;
            let mut v = self.coeff(grp, r, 0);
            for i in 0..self.k {
                if self.plane_bit(i, r, c) == 1 {
                    v += self.coeff(grp, r, i + 1);
                }
            }
            v
        })
    }

    /// Matrix-vector product straight from the packed planes.
    ///
    /// One 256-entry table of activation partial sums is built per 8-column
    /// chunk of `x`; every (plane, row, group) contribution is then a handful
    /// of masked table lookups, and the bias rides on per-group sums.
    pub fn lut_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                detail: format!("input length {} does not match d_in {}", x.len(), self.d_in),
            });
        }
        let bytes_per_row = self.d_in.div_ceil(8);
        let n_groups = self.d_in / self.g;

        // tables[ch][pattern] = sum of x over the set bits of the pattern.
        let mut tables = vec![[0.0f64; 256]; bytes_per_row];
        for (ch, table) in tables.iter_mut().enumerate() {
            let base = ch * 8;
            let mut xv = [0.0f64; 8];
            for (b, slot) in xv.iter_mut().enumerate() {
                if base + b < self.d_in {
                    *slot = x[base + b];
                }
            }
            for p in 1..256usize {
                let low = p.trailing_zeros() as usize;
                table[p] = table[p & (p - 1)] + xv[low];
            }
        }

        // Chunk coverage per group: (chunk index, mask of in-group bits).
        let group_chunks: Vec<Vec<(usize, u8)>> = (0..n_groups)
            .map(|grp| {
                let start = grp * self.g;
                let end = start + self.g;
                let mut parts = Vec::new();
                let mut ch = start / 8;
                while ch * 8 < end {
                    let mut mask = 0u8;
                    for b in 0..8 {
                        let col = ch * 8 + b;
                        if col >= start && col < end {
                            mask |= 1 << b;
                        }
                    }
                    parts.push((ch, mask));
                    ch += 1;
                }
                parts
            })
            .collect();

        let group_sums: Vec<f64> = (0..n_groups)
            .map(|grp| x[grp * self.g..(grp + 1) * self.g].iter().sum())
            .collect();

        let mut y = vec![0.0f64; self.d_out];
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (grp, sum) in group_sums.iter().enumerate() {
                acc += self.coeff(grp, r, 0) * sum;
            }
            for i in 0..self.k {
                let row_bytes = self.plane_row(i, r);
                for (grp, chunks) in group_chunks.iter().enumerate() {
                    let mut part = 0.0;
                    for &(ch, mask) in chunks {
                        part += tables[ch][(row_bytes[ch] & mask) as usize];
                    }
                    acc += self.coeff(grp, r, i + 1) * part;
                }
            }
            *out = acc;
        }
        Ok(y)
    }

    /// Serializes into the BPQZ container.
    pub fn pack(&self) -> Vec<u8> {
        let bytes_per_row = self.d_in.div_ceil(8);
        let coeff_bytes = self.coeffs.len() * self.coeff_dtype.width();
        let plane_bytes = self.k * self.d_out * bytes_per_row;
        let mut buf = Vec::with_capacity(HEADER_LEN + coeff_bytes + plane_bytes);
        buf.extend_from_slice(BPQZ_MAGIC);
        buf.extend_from_slice(&BPQZ_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.d_out as u64).to_le_bytes());
        buf.extend_from_slice(&(self.d_in as u64).to_le_bytes());
        buf.extend_from_slice(&(self.g as u32).to_le_bytes());
        buf.push(self.k as u8);
        buf.push(self.coeff_dtype.code());
        buf.extend_from_slice(&0u16.to_le_bytes());
        for &c in &self.coeffs {
            match self.coeff_dtype {
                CoeffDtype::F16 => buf.extend_from_slice(&f16::from_f64(c).to_le_bytes()),
                CoeffDtype::F32 => buf.extend_from_slice(&(c as f32).to_le_bytes()),
                CoeffDtype::F64 => buf.extend_from_slice(&c.to_le_bytes()),
            }
        }
        for plane in &self.planes {
            buf.extend_from_slice(plane);
        }
        buf
    }

    /// Parses a BPQZ container.
    pub fn unpack(bytes: &[u8]) -> Result<Self> {
        let ctx = "BPQZ stream";
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                path: ctx.into(),
                expected: HEADER_LEN,
                got: bytes.len(),
            });
        }
        if &bytes[0..4] != BPQZ_MAGIC {
            return Err(Error::Format {
                path: ctx.into(),
                detail: format!("bad magic {:?}", &bytes[0..4]),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != BPQZ_VERSION {
            return Err(Error::Format {
                path: ctx.into(),
                detail: format!("unsupported version {version}"),
            });
        }
        let d_out = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let d_in = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let g = u32::from_le_bytes(bytes[24..28].try_into().unwrap()) as usize;
        let k = bytes[28] as usize;
        let dtype = CoeffDtype::from_code(bytes[29]).ok_or_else(|| Error::Format {
            path: ctx.into(),
            detail: format!("unknown coefficient dtype {}", bytes[29]),
        })?;
        let reserved = u16::from_le_bytes(bytes[30..32].try_into().unwrap());
        if reserved != 0 {
            return Err(Error::Format {
                path: ctx.into(),
                detail: format!("reserved field must be zero, got {reserved}"),
            });
        }
        if g == 0 || d_in == 0 || !d_in.is_multiple_of(g) || k == 0 || k > 8 {
            return Err(Error::Format {
                path: ctx.into(),
                detail: format!("inconsistent geometry: d_in {d_in}, g {g}, k {k}"),
            });
        }
        let n_groups = d_in / g;
        let n_coeffs = n_groups * d_out * (k + 1);
        let bytes_per_row = d_in.div_ceil(8);
        let expected = HEADER_LEN + n_coeffs * dtype.width() + k * d_out * bytes_per_row;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                path: ctx.into(),
                expected,
                got: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::Format {
                path: ctx.into(),
                detail: format!("size mismatch: expected {expected} bytes, got {}", bytes.len()),
            });
        }
        let mut off = HEADER_LEN;
        let mut coeffs = Vec::with_capacity(n_coeffs);
        for _ in 0..n_coeffs {
            let v = match dtype {
                CoeffDtype::F16 => f64::from(f16::from_le_bytes(
                    bytes[off..off + 2].try_into().unwrap(),
                )),
                CoeffDtype::F32 => f64::from(f32::from_le_bytes(
                    bytes[off..off + 4].try_into().unwrap(),
                )),
                CoeffDtype::F64 => f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()),
            };
            coeffs.push(v);
            off += dtype.width();
        }
        let mut planes = Vec::with_capacity(k);
        for _ in 0..k {
            planes.push(bytes[off..off + d_out * bytes_per_row].to_vec());
            off += d_out * bytes_per_row;
        }
        Ok(Self {
            d_out,
            d_in,
            g,
            k,
            coeff_dtype: dtype,
            coeffs,
            planes,
        })
    }
}

/// Average storage bits per weight of the variable-grid format:
/// `k` plane bits plus `(k+1)` coefficients per group.
pub fn bits_per_weight(k: usize, g: usize, coeff_bits: u32) -> f64 {
    k as f64 + ((k + 1) as f64 * coeff_bits as f64) / g as f64
}

/// Average storage bits per weight of a fixed affine grid with a stored
/// scale and a `b`-bit zero point per group.
pub fn bits_per_weight_fixed(b: u32, g: usize, scale_bits: u32) -> f64 {
    b as f64 + (scale_bits as f64 + b as f64) / g as f64
}
