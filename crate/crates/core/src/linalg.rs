//! Dense row-major matrices and the handful of operations everything else is
//! built on: products, elementwise maps, spectral/Frobenius norms, and a
//! numerically stable row softmax.
//!
//! Matrices are immutable after construction from the caller's point of view
//! and hold finite 64-bit reals; every operation re-checks finiteness of its
//! output so downstream code never sees NaN/Inf. Internal parallelism (rayon
//! over rows) is arranged so that accumulation order per output entry is
//! fixed, keeping results bit-identical regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Which matrix norm to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Largest singular value, computed by power iteration on `AᵀA`.
    Spectral,
    /// Square root of the sum of squared entries.
    Frobenius,
}

impl NormKind {
    pub fn name(&self) -> &'static str {
        match self {
            NormKind::Spectral => "spectral",
            NormKind::Frobenius => "frobenius",
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spectral" | "2" => Ok(NormKind::Spectral),
            "frobenius" | "f" | "fro" => Ok(NormKind::Frobenius),
            other => Err(Error::config(format!("unknown norm kind `{other}`"))),
        }
    }
}

/// Allocation probe: tracks the largest single matrix allocation (in
/// elements) since the last reset. Used to assert that the linear attention
/// paths never materialize an `m x m` intermediate.
///
/// The counters are process-global; callers that assert on the probe must
/// not run concurrently with other matrix-allocating work.
pub mod probe {
    use std::sync::atomic::{AtomicUsize, Ordering};

    static PEAK_ELEMS: AtomicUsize = AtomicUsize::new(0);

    /// Reset the peak-allocation counter.
    pub fn reset() {
        PEAK_ELEMS.store(0, Ordering::SeqCst);
    }

    /// Largest single matrix allocation (elements) since the last reset.
    pub fn peak_elems() -> usize {
        PEAK_ELEMS.load(Ordering::SeqCst)
    }

    pub(crate) fn record(len: usize) {
        PEAK_ELEMS.fetch_max(len, Ordering::Relaxed);
    }
}

/// Dense row-major matrix of finite 64-bit reals.
#[derive(Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Clone for DenseMatrix {
    fn clone(&self) -> Self {
        probe::record(self.data.len());
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.clone(),
        }
    }
}

impl DenseMatrix {
    /// Build a matrix from row-major data, validating shape and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::config(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite {
                context: "matrix construction".into(),
            });
        }
        probe::record(data.len());
        Ok(DenseMatrix { rows, cols, data })
    }

    /// All-zeros matrix. Panics on zero dimensions; use `from_vec` for
    /// fallible construction.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        probe::record(rows * cols);
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Matrix with every entry equal to `value`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        assert!(value.is_finite());
        probe::record(rows * cols);
        DenseMatrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Transposed copy.
    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Column slice `[start, end)` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Result<DenseMatrix> {
        if start >= end || end > self.cols {
            return Err(Error::config(format!(
                "column range {start}..{end} out of bounds for width {}",
                self.cols
            )));
        }
        let width = end - start;
        let mut out = DenseMatrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..end]);
        }
        Ok(out)
    }

    /// Horizontal concatenation `[self, other]`.
    pub fn concat_columns(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::shape("concat_columns", self.shape(), other.shape()));
        }
        let mut out = DenseMatrix::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            out.row_mut(r)[..self.cols].copy_from_slice(self.row(r));
            out.row_mut(r)[self.cols..].copy_from_slice(other.row(r));
        }
        Ok(out)
    }

    /// Entrywise sum; shapes must match.
    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add", self.shape(), other.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect::<Vec<_>>();
        let out = DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        };
        probe::record(out.data.len());
        out.check_finite("add")
    }

    /// Entrywise difference; shapes must match.
    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape("sub", self.shape(), other.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>();
        let out = DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        };
        probe::record(out.data.len());
        out.check_finite("sub")
    }

    /// Copy scaled by `factor`.
    pub fn scale(&self, factor: f64) -> Result<DenseMatrix> {
        let data = self.data.iter().map(|x| x * factor).collect::<Vec<_>>();
        let out = DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        };
        probe::record(out.data.len());
        out.check_finite("scale")
    }

    pub(crate) fn check_finite(self, context: &str) -> Result<Self> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite {
                context: context.into(),
            })
        }
    }
}

/// Standard matrix product `AB`.
///
/// Accumulates along `k` in ascending order for every output entry, so the
/// result does not depend on how rows are scheduled across threads.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    let bc = b.cols;
    out.data
        .par_chunks_mut(bc)
        .zip(a.data.par_chunks(a.cols))
        .for_each(|(crow, arow)| {
            for (k, &aik) in arow.iter().enumerate() {
                let brow = &b.data[k * bc..(k + 1) * bc];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += aik * bv;
                }
            }
        });
    out.check_finite("matmul")
}

/// Product `ABᵀ` without materializing the transpose.
pub fn matmul_transpose_b(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(Error::shape("matmul_transpose_b", a.shape(), b.shape()));
    }
    let mut out = DenseMatrix::zeros(a.rows, b.rows);
    let br = b.rows;
    out.data
        .par_chunks_mut(br)
        .zip(a.data.par_chunks(a.cols))
        .for_each(|(crow, arow)| {
            for (j, cv) in crow.iter_mut().enumerate() {
                let brow = &b.data[j * b.cols..(j + 1) * b.cols];
                *cv = dot(arow, brow);
            }
        });
    out.check_finite("matmul_transpose_b")
}

/// Product `AᵀB` without materializing the transpose.
pub fn matmul_transpose_a(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(Error::shape("matmul_transpose_a", a.shape(), b.shape()));
    }
    let mut out = DenseMatrix::zeros(a.cols, b.cols);
    // Accumulate row blocks in ascending k; sequential on purpose, the
    // output is small (aᵀ has few rows in all call sites).
    for k in 0..a.rows {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &av) in arow.iter().enumerate() {
            let orow = out.row_mut(i);
            for (ov, &bv) in orow.iter_mut().zip(brow) {
                *ov += av * bv;
            }
        }
    }
    out.check_finite("matmul_transpose_a")
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y) {
        acc += a * b;
    }
    acc
}

/// Entrywise exponential. Overflow to Inf is reported as an error carrying
/// the largest input entry.
pub fn elementwise_exp(a: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = DenseMatrix::zeros(a.rows, a.cols);
    out.data
        .par_chunks_mut(a.cols)
        .zip(a.data.par_chunks(a.cols))
        .for_each(|(orow, arow)| {
            for (o, &x) in orow.iter_mut().zip(arow) {
                *o = x.exp();
            }
        });
    if out.data.iter().all(|x| x.is_finite()) {
        Ok(out)
    } else {
        let max_input = a.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Err(Error::Overflow {
            context: "elementwise_exp".into(),
            max_input,
        })
    }
}

/// Entrywise (Hadamard) product.
pub fn hadamard(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.shape() != b.shape() {
        return Err(Error::shape("hadamard", a.shape(), b.shape()));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| x * y)
        .collect::<Vec<_>>();
    let out = DenseMatrix {
        rows: a.rows,
        cols: a.cols,
        data,
    };
    probe::record(out.data.len());
    out.check_finite("hadamard")
}

/// Relative-change tolerance for power iteration.
const POWER_TOL: f64 = 1e-10;
/// Iteration cap for power iteration.
const POWER_CAP: usize = 10_000;
/// Fixed seed for the power-iteration start vector.
const POWER_SEED: u64 = 0x5EED_0001;
/// Secondary acceptance at the iteration cap: when the top two singular
/// values nearly tie, the per-step change decays geometrically but too
/// slowly to hit `POWER_TOL` within the cap. If the extrapolated remaining
/// climb is below this relative tolerance the estimate is accepted, with the
/// remaining climb folded into the reported gap.
const POWER_SECONDARY_TOL: f64 = 1e-4;

/// Matrix norm of the requested kind.
pub fn norm(a: &DenseMatrix, kind: NormKind) -> Result<f64> {
    match kind {
        NormKind::Frobenius => Ok(frobenius_norm(a)),
        NormKind::Spectral => spectral_norm_with_gap(a).map(|(v, _)| v),
    }
}

/// Frobenius norm (always exact up to rounding).
pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spectral norm by power iteration on `AᵀA`, together with the absolute
/// gap between the last two singular-value iterates. The gap serves as a
/// safety margin when bound checks compare spectral quantities.
pub fn spectral_norm_with_gap(a: &DenseMatrix) -> Result<(f64, f64)> {
    if a.data.iter().all(|&x| x == 0.0) {
        return Ok((0.0, 0.0));
    }
    let n = a.cols;
    // Seeded start vector; reseed a handful of times in the unlucky case
    // that the start lands in the null space.
    'restart: for attempt in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED + attempt);
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        normalize(&mut v);
        let mut sigma = 0.0f64;
        let mut sigma_prev = 0.0f64;
        let mut gap = f64::INFINITY;
        let mut gap_prev = f64::INFINITY;
        let mut w = vec![0.0f64; a.rows];
        let mut u = vec![0.0f64; n];
        for iter in 0..POWER_CAP {
            // w = A v
            for (i, wi) in w.iter_mut().enumerate() {
                *wi = dot(a.row(i), &v);
            }
            sigma = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if sigma == 0.0 {
                continue 'restart;
            }
            gap_prev = gap;
            gap = (sigma - sigma_prev).abs();
            if iter > 0 && gap <= POWER_TOL * sigma {
                return Ok((sigma, gap));
            }
            sigma_prev = sigma;
            // v = normalize(Aᵀ w)
            u.iter_mut().for_each(|x| *x = 0.0);
            for (i, &wi) in w.iter().enumerate() {
                let arow = a.row(i);
                for (uj, &aij) in u.iter_mut().zip(arow) {
                    *uj += aij * wi;
                }
            }
            let unorm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if unorm == 0.0 {
                continue 'restart;
            }
            for (vj, &uj) in v.iter_mut().zip(&u) {
                *vj = uj / unorm;
            }
        }
        // Cap reached. The estimate climbs monotonically with a geometric
        // per-step gap; extrapolate what is left and accept if small,
        // reporting it as part of the gap.
        if gap_prev.is_finite() && gap_prev > 0.0 {
            let rho = (gap / gap_prev).clamp(0.0, 1.0 - 1e-9);
            let remaining = gap * rho / (1.0 - rho);
            if remaining <= POWER_SECONDARY_TOL * sigma {
                return Ok((sigma, gap + remaining));
            }
        }
        return Err(Error::Convergence {
            iterations: POWER_CAP,
            gap,
        });
    }
    Err(Error::Convergence {
        iterations: POWER_CAP,
        gap: f64::NAN,
    })
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Row softmax of `scale * a`, with the row max subtracted before
/// exponentiating so the map is total. Every output row sums to 1.
pub fn row_softmax(a: &DenseMatrix, scale: f64) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows, a.cols);
    out.data
        .par_chunks_mut(a.cols)
        .zip(a.data.par_chunks(a.cols))
        .for_each(|(orow, arow)| {
            softmax_into(arow, scale, orow);
        });
    out
}

/// Softmax of `scale * x` into `out` (lengths must match).
pub(crate) fn softmax_into(x: &[f64], scale: f64, out: &mut [f64]) {
    let max = x
        .iter()
        .map(|v| scale * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        let e = (scale * v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
