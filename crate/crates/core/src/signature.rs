//! Truncated path signatures of piecewise-linear paths.
//!
//! Coefficients are laid out level-major, and within a level in
//! lexicographic multi-index order with the first index most significant:
//! `(1), .., (P), (1,1), (1,2), .., (P,..,P)`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::path::{AugmentedPath, Path};

/// Largest coefficient count accepted unless a caller raises the cap.
pub const DEFAULT_DIM_CAP: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignatureError {
    #[error("signature dimension for P = {channels}, m = {order} overflows usize")]
    Overflow { channels: usize, order: usize },
    #[error("channel count and truncation order must both be >= 1 (got P = {channels}, m = {order})")]
    InvalidOrder { channels: usize, order: usize },
    #[error("signature dimension {dim} exceeds the cap {cap}")]
    CapExceeded { dim: usize, cap: usize },
    #[error("signature vector already includes the unit coordinate")]
    AlreadyUnit,
    #[error("paths have inconsistent channel counts ({0} vs {1})")]
    ChannelMismatch(usize, usize),
    #[error("truncated product needs unit-extended operands of equal shape")]
    ShapeMismatch,
    #[error("malformed signature matrix dump: {0}")]
    Dump(String),
}

/// `s_P(m) = P + P^2 + ... + P^m`, checked against overflow.
pub fn sig_dim(channels: usize, order: usize) -> Result<usize, SignatureError> {
    if channels == 0 || order == 0 {
        return Err(SignatureError::InvalidOrder { channels, order });
    }
    let overflow = SignatureError::Overflow { channels, order };
    let mut total = 0usize;
    let mut power = 1usize;
    for _ in 0..order {
        power = power.checked_mul(channels).ok_or_else(|| overflow.clone())?;
        total = total.checked_add(power).ok_or_else(|| overflow.clone())?;
    }
    Ok(total)
}

/// Largest order whose dimension stays within `cap` (at least 1).
pub fn max_order_within(channels: usize, cap: usize) -> usize {
    let mut m = 1;
    while matches!(sig_dim(channels, m + 1), Ok(d) if d <= cap) {
        m += 1;
    }
    m
}

fn level_offset(channels: usize, level: usize) -> usize {
    // start of level `level` (1-based) inside the shifted vector
    if level <= 1 {
        0
    } else {
        sig_dim(channels, level - 1).expect("offset below a valid dimension")
    }
}

/// Truncated signature coefficients, with or without the leading unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SigVector {
    channels: usize,
    order: usize,
    coeffs: Vec<f64>,
    includes_unit: bool,
}

impl SigVector {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn includes_unit(&self) -> bool {
        self.includes_unit
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Coefficients of level `k` (1-based), `P^k` of them.
    pub fn level(&self, k: usize) -> &[f64] {
        assert!(k >= 1 && k <= self.order, "level out of range");
        let start = level_offset(self.channels, k) + usize::from(self.includes_unit);
        &self.coeffs[start..start + self.channels.pow(k as u32)]
    }

    /// Coefficient along a 1-based multi-index such as `[1, 2]`.
    pub fn get(&self, multi_index: &[usize]) -> f64 {
        let k = multi_index.len();
        assert!(k >= 1 && k <= self.order, "multi-index length out of range");
        let pos = multi_index.iter().fold(0, |acc, &i| {
            assert!(i >= 1 && i <= self.channels, "index out of range");
            acc * self.channels + (i - 1)
        });
        self.level(k)[pos]
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Keeps levels `1..=order`.
    pub fn truncate(&self, order: usize) -> SigVector {
        assert!(order >= 1 && order <= self.order);
        let len = sig_dim(self.channels, order).unwrap() + usize::from(self.includes_unit);
        SigVector {
            channels: self.channels,
            order,
            coeffs: self.coeffs[..len].to_vec(),
            includes_unit: self.includes_unit,
        }
    }

    /// Drops the unit coordinate of a unit-extended vector.
    pub fn without_unit(&self) -> SigVector {
        if !self.includes_unit {
            return self.clone();
        }
        SigVector {
            channels: self.channels,
            order: self.order,
            coeffs: self.coeffs[1..].to_vec(),
            includes_unit: false,
        }
    }
}

/// Prepends the constant 1.
pub fn with_unit(s: &SigVector) -> Result<SigVector, SignatureError> {
    if s.includes_unit {
        return Err(SignatureError::AlreadyUnit);
    }
    let mut coeffs = Vec::with_capacity(s.coeffs.len() + 1);
    coeffs.push(1.0);
    coeffs.extend_from_slice(&s.coeffs);
    Ok(SigVector {
        channels: s.channels,
        order: s.order,
        coeffs,
        includes_unit: true,
    })
}

/// Product in the truncated tensor algebra of two unit-extended signatures
/// (Chen's identity: the signature of a concatenation).
pub fn truncated_product(a: &SigVector, b: &SigVector) -> Result<SigVector, SignatureError> {
    if !a.includes_unit
        || !b.includes_unit
        || a.channels != b.channels
        || a.order != b.order
    {
        return Err(SignatureError::ShapeMismatch);
    }
    let (p, m) = (a.channels, a.order);
    let mut coeffs = vec![0.0; a.coeffs.len()];
    coeffs[0] = a.coeffs[0] * b.coeffs[0];
    let scalar_a = a.coeffs[0];
    let scalar_b = b.coeffs[0];
    for k in 1..=m {
        let out_start = 1 + level_offset(p, k);
        let out = &mut coeffs[out_start..out_start + p.pow(k as u32)];
        for (o, (x, y)) in out.iter_mut().zip(a.level(k).iter().zip(b.level(k))) {
            *o = x * scalar_b + scalar_a * y;
        }
        for i in 1..k {
            let left = a.level(i);
            let right = b.level(k - i);
            let width = right.len();
            for (ai, av) in left.iter().enumerate() {
                let row = &mut out[ai * width..(ai + 1) * width];
                for (o, bv) in row.iter_mut().zip(right) {
                    *o += av * bv;
                }
            }
        }
    }
    Ok(SigVector {
        channels: p,
        order: m,
        coeffs,
        includes_unit: true,
    })
}

/// Multiplies the running signature (levels `1..=m`, unit implicit) in place
/// by the tensor exponential of one increment, Horner style:
/// `S_k += ((..((Δ/k + S_1) ⊗ Δ/(k-1) + S_2) ..) + S_{k-1}) ⊗ Δ`.
fn push_segment(levels: &mut [Vec<f64>], delta: &[f64], scratch: &mut [Vec<f64>; 2]) {
    let p = delta.len();
    let m = levels.len();
    for k in (1..=m).rev() {
        let [acc, next] = scratch;
        acc.clear();
        acc.extend(delta.iter().map(|d| d / k as f64));
        for i in 1..k {
            // acc has length p^i; add S_i, then tensor with Δ/(k-i)
            for (a, s) in acc.iter_mut().zip(&levels[i - 1]) {
                *a += s;
            }
            let scale = 1.0 / (k - i) as f64;
            next.clear();
            next.reserve(acc.len() * p);
            for a in acc.iter() {
                let a = a * scale;
                next.extend(delta.iter().map(|d| a * d));
            }
            std::mem::swap(acc, next);
        }
        for (s, a) in levels[k - 1].iter_mut().zip(acc.iter()) {
            *s += a;
        }
    }
}

/// Shifted signature of the piecewise-linear interpolation of `path`,
/// without any augmentation.
pub fn path_signature(path: &Path, order: usize, cap: usize) -> Result<SigVector, SignatureError> {
    let p = path.channels();
    let dim = sig_dim(p, order)?;
    if dim > cap {
        return Err(SignatureError::CapExceeded { dim, cap });
    }
    let mut levels: Vec<Vec<f64>> = (1..=order).map(|k| vec![0.0; p.pow(k as u32)]).collect();
    let mut scratch = [Vec::new(), Vec::new()];
    let mut delta = vec![0.0; p];
    let rows: Vec<&[f64]> = path.rows().collect();
    for w in rows.windows(2) {
        for (d, (a, b)) in delta.iter_mut().zip(w[0].iter().zip(w[1])) {
            *d = b - a;
        }
        if delta.iter().all(|d| *d == 0.0) {
            continue;
        }
        push_segment(&mut levels, &delta, &mut scratch);
    }
    Ok(SigVector {
        channels: p,
        order,
        coeffs: levels.concat(),
        includes_unit: false,
    })
}

/// Shifted signature of an augmented path at the default dimension cap.
pub fn signature(ap: &AugmentedPath, order: usize) -> Result<SigVector, SignatureError> {
    path_signature(&ap.inner, order, DEFAULT_DIM_CAP)
}

pub fn signature_with_cap(
    ap: &AugmentedPath,
    order: usize,
    cap: usize,
) -> Result<SigVector, SignatureError> {
    path_signature(&ap.inner, order, cap)
}

/// Stacks shifted signatures row-wise (`n × s_P(m)`); rows are computed in
/// parallel and are independent of the thread count.
pub fn sig_matrix(paths: &[AugmentedPath], order: usize) -> Result<DMatrix<f64>, SignatureError> {
    sig_matrix_with_cap(paths, order, DEFAULT_DIM_CAP)
}

pub fn sig_matrix_with_cap(
    paths: &[AugmentedPath],
    order: usize,
    cap: usize,
) -> Result<DMatrix<f64>, SignatureError> {
    let channels = paths.first().map(|p| p.channels()).unwrap_or(1);
    if let Some(bad) = paths.iter().find(|p| p.channels() != channels) {
        return Err(SignatureError::ChannelMismatch(channels, bad.channels()));
    }
    let dim = sig_dim(channels, order)?;
    if dim > cap {
        return Err(SignatureError::CapExceeded { dim, cap });
    }
    let rows = paths
        .par_iter()
        .map(|p| path_signature(&p.inner, order, cap).map(SigVector::into_coeffs))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DMatrix::from_fn(paths.len(), dim, |i, j| rows[i][j]))
}

/// Prepends a column of ones.
pub fn with_unit_column(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(s.nrows(), s.ncols() + 1, 1.0);
    out.columns_mut(1, s.ncols()).copy_from(s);
    out
}

/// Binary dump: `n` and `s` as little-endian `u32`, then row-major
/// little-endian `f64`.
pub fn write_sig_matrix<W: Write>(mut w: W, s: &DMatrix<f64>) -> std::io::Result<()> {
    let to_u32 = |v: usize| {
        u32::try_from(v).map_err(|_| std::io::Error::other("dimension exceeds u32"))
    };
    w.write_all(&to_u32(s.nrows())?.to_le_bytes())?;
    w.write_all(&to_u32(s.ncols())?.to_le_bytes())?;
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            w.write_all(&s[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_sig_matrix<R: Read>(mut r: R) -> Result<DMatrix<f64>, SignatureError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| SignatureError::Dump(e.to_string()))?;
    if buf.len() < 8 {
        return Err(SignatureError::Dump("missing header".into()));
    }
    let n = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
    let s = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let body = &buf[8..];
    if body.len() != n * s * 8 {
        return Err(SignatureError::Dump(format!(
            "expected {} payload bytes, found {}",
            n * s * 8,
            body.len()
        )));
    }
    let vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(n, s, &vals))
}
