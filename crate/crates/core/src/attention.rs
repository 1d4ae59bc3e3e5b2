//! Ground-truth attention: the vanilla pairwise mechanism in raw-exponential
//! and softmax-normalized forms, plus a block-masked variant.
//!
//! The raw form computes `exp(QKᵀ)V` literally, with no scaling or
//! normalization; it is the reference the approximation error bounds are
//! stated against. The normalized form is ordinary softmax attention with a
//! configurable scale. Both materialize the `m x m` score matrix and are
//! meant as desk-scale oracles, not fast paths.

use crate::error::{Error, Result};
use crate::linalg::{elementwise_exp, matmul, matmul_transpose_b, softmax_into, DenseMatrix};

/// A `(Q, K, V)` triple of equal `m x c` shape, with an optional 2D token
/// layout used by positional encodings.
#[derive(Debug, Clone)]
pub struct AttentionProblem {
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
    grid: Option<(usize, usize)>,
}

impl AttentionProblem {
    pub fn new(q: DenseMatrix, k: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        if q.shape() != k.shape() {
            return Err(Error::shape("attention problem q/k", q.shape(), k.shape()));
        }
        if q.shape() != v.shape() {
            return Err(Error::shape("attention problem q/v", q.shape(), v.shape()));
        }
        Ok(AttentionProblem {
            q,
            k,
            v,
            grid: None,
        })
    }

    /// Attach an `(height, width)` token layout; `height * width` must equal
    /// the sequence length.
    pub fn with_grid(mut self, height: usize, width: usize) -> Result<Self> {
        if height * width != self.m() {
            return Err(Error::config(format!(
                "grid {height}x{width} does not cover sequence length {}",
                self.m()
            )));
        }
        self.grid = Some((height, width));
        Ok(self)
    }

    pub fn q(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn k(&self) -> &DenseMatrix {
        &self.k
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    /// Sequence length.
    pub fn m(&self) -> usize {
        self.q.rows()
    }

    /// Channel width.
    pub fn c(&self) -> usize {
        self.q.cols()
    }

    /// Column slice `[start, end)` of all three matrices; grid is preserved.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<AttentionProblem> {
        Ok(AttentionProblem {
            q: self.q.columns(start, end)?,
            k: self.k.columns(start, end)?,
            v: self.v.columns(start, end)?,
            grid: self.grid,
        })
    }

    /// Row slice `[start, end)` of all three matrices; any grid is dropped.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<AttentionProblem> {
        if start >= end || end > self.m() {
            return Err(Error::config(format!(
                "row range {start}..{end} out of bounds for length {}",
                self.m()
            )));
        }
        let take = |m: &DenseMatrix| {
            DenseMatrix::from_vec(
                end - start,
                m.cols(),
                m.data()[start * m.cols()..end * m.cols()].to_vec(),
            )
        };
        Ok(AttentionProblem {
            q: take(&self.q)?,
            k: take(&self.k)?,
            v: take(&self.v)?,
            grid: None,
        })
    }
}

/// Attention evaluation mode.
///
/// `RawExp` is the literal `exp(QKᵀ)V` form the error bounds are stated
/// against; `Normalized` is practical softmax attention. Every approximation
/// in this crate supports both so that bounds are checked in raw form and
/// behavior in normalized form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttentionMode {
    RawExp,
    Normalized { scale: f64 },
}

impl AttentionMode {
    /// Normalized mode with an explicit scale; the scale must be finite and
    /// positive.
    pub fn normalized(scale: f64) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::config(format!(
                "normalized scale must be positive, got {scale}"
            )));
        }
        Ok(AttentionMode::Normalized { scale })
    }

    /// Standard `1/sqrt(c)` scale for a problem of channel width `c`.
    pub fn normalized_for_width(c: usize) -> Self {
        AttentionMode::Normalized {
            scale: 1.0 / (c as f64).sqrt(),
        }
    }
}

/// Block-diagonal all-ones mask: `b` blocks of `m/b` consecutive tokens.
/// Kept symbolic; `materialize` produces the dense `m x m` matrix on demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMask {
    m: usize,
    b: usize,
}

impl BlockMask {
    pub fn new(m: usize, b: usize) -> Result<Self> {
        if b == 0 || m % b != 0 {
            return Err(Error::Divisibility { m, blocks: b });
        }
        Ok(BlockMask { m, b })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn blocks(&self) -> usize {
        self.b
    }

    /// Tokens per block.
    pub fn block_len(&self) -> usize {
        self.m / self.b
    }

    /// Block index of token `i`.
    pub fn block_of(&self, i: usize) -> usize {
        i / self.block_len()
    }

    /// Dense `m x m` 0/1 mask matrix.
    pub fn materialize(&self) -> DenseMatrix {
        let mut z = DenseMatrix::zeros(self.m, self.m);
        let len = self.block_len();
        for blk in 0..self.b {
            let start = blk * len;
            for i in start..start + len {
                let row = z.row_mut(i);
                for cell in row[start..start + len].iter_mut() {
                    *cell = 1.0;
                }
            }
        }
        z
    }
}

/// Vanilla pairwise attention.
///
/// RawExp returns `exp(QKᵀ)V` exactly as written; Normalized applies a
/// stable row softmax to `scale * QKᵀ` before the product with `V`.
pub fn vanilla_attention(p: &AttentionProblem, mode: AttentionMode) -> Result<DenseMatrix> {
    let scores = matmul_transpose_b(p.q(), p.k())?;
    match mode {
        AttentionMode::RawExp => {
            let weights = elementwise_exp(&scores)?;
            matmul(&weights, p.v())
        }
        AttentionMode::Normalized { scale } => {
            let weights = crate::linalg::row_softmax(&scores, scale);
            matmul(&weights, p.v())
        }
    }
}

/// Block-masked vanilla attention.
///
/// RawExp returns `(exp(QKᵀ) ⊙ Z)V` with `Z` the mask's dense form;
/// Normalized applies the row softmax over each row's own block only, which
/// is exactly what per-block softmax attention computes.
pub fn masked_vanilla_attention(
    p: &AttentionProblem,
    mask: &BlockMask,
    mode: AttentionMode,
) -> Result<DenseMatrix> {
    if mask.m() != p.m() {
        return Err(Error::shape(
            "masked attention",
            (p.m(), p.m()),
            (mask.m(), mask.m()),
        ));
    }
    let scores = matmul_transpose_b(p.q(), p.k())?;
    let len = mask.block_len();
    match mode {
        AttentionMode::RawExp => {
            let weights = elementwise_exp(&scores)?;
            let masked = crate::linalg::hadamard(&weights, &mask.materialize())?;
            matmul(&masked, p.v())
        }
        AttentionMode::Normalized { scale } => {
            let mut weights = DenseMatrix::zeros(p.m(), p.m());
            for i in 0..p.m() {
                let start = mask.block_of(i) * len;
                let row_scores = &scores.row(i)[start..start + len];
                let mut probs = vec![0.0; len];
                softmax_into(row_scores, scale, &mut probs);
                weights.row_mut(i)[start..start + len].copy_from_slice(&probs);
            }
            matmul(&weights, p.v())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::NormKind;

    fn seeded_problem(m: usize, c: usize, seed: u64) -> AttentionProblem {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |_| {
            let data = (0..m * c).map(|_| rng.gen_range(-0.5..0.5)).collect();
            DenseMatrix::from_vec(m, c, data).unwrap()
        };
        AttentionProblem::new(draw(0), draw(1), draw(2)).unwrap()
    }

    #[test]
    fn zero_queries_give_column_means() {
        let v = DenseMatrix::from_vec(3, 2, vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
        let p =
            AttentionProblem::new(DenseMatrix::zeros(3, 2), DenseMatrix::zeros(3, 2), v).unwrap();
        let out = vanilla_attention(&p, AttentionMode::Normalized { scale: 1.0 }).unwrap();
        for i in 0..3 {
            assert!((out.get(i, 0) - 2.0).abs() < 1e-12);
            assert!((out.get(i, 1) - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_normalized_returns_v() {
        let p = seeded_problem(1, 4, 7);
        let out = vanilla_attention(&p, AttentionMode::normalized_for_width(4)).unwrap();
        for (a, b) in out.data().iter().zip(p.v().data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn raw_exp_matches_pairwise_scalar_oracle() {
        // Entry-by-entry oracle: out[i][d] = sum_j exp(q_i . k_j) * v[j][d].
        let p = seeded_problem(6, 4, 42);
        let out = vanilla_attention(&p, AttentionMode::RawExp).unwrap();
        for i in 0..6 {
            for d in 0..4 {
                let mut acc = 0.0;
                for j in 0..6 {
                    let score: f64 = (0..4).map(|t| p.q().get(i, t) * p.k().get(j, t)).sum();
                    acc += score.exp() * p.v().get(j, d);
                }
                let got = out.get(i, d);
                assert!(
                    (got - acc).abs() <= 1e-12 * acc.abs().max(1.0),
                    "mismatch at ({i},{d}): {got} vs {acc}"
                );
            }
        }
    }

    #[test]
    fn mask_with_one_block_equals_vanilla_bit_for_bit() {
        let p = seeded_problem(8, 3, 5);
        let mask = BlockMask::new(8, 1).unwrap();
        for mode in [
            AttentionMode::RawExp,
            AttentionMode::normalized_for_width(3),
        ] {
            let full = vanilla_attention(&p, mode).unwrap();
            let masked = masked_vanilla_attention(&p, &mask, mode).unwrap();
            assert_eq!(full, masked);
        }
    }

    #[test]
    fn self_only_blocks_return_v() {
        let p = seeded_problem(5, 3, 11);
        let mask = BlockMask::new(5, 5).unwrap();
        let out =
            masked_vanilla_attention(&p, &mask, AttentionMode::normalized_for_width(3)).unwrap();
        for (a, b) in out.data().iter().zip(p.v().data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn masked_equals_per_block_assembly() {
        let p = seeded_problem(8, 3, 13);
        let mask = BlockMask::new(8, 2).unwrap();
        for mode in [
            AttentionMode::RawExp,
            AttentionMode::normalized_for_width(3),
        ] {
            let whole = masked_vanilla_attention(&p, &mask, mode).unwrap();
            for blk in 0..2 {
                let sub = p.slice_rows(blk * 4, (blk + 1) * 4).unwrap();
                let part = vanilla_attention(&sub, mode).unwrap();
                for i in 0..4 {
                    for d in 0..3 {
                        let a = whole.get(blk * 4 + i, d);
                        let b = part.get(i, d);
                        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn mask_size_mismatch_is_rejected() {
        let p = seeded_problem(6, 2, 1);
        let mask = BlockMask::new(8, 2).unwrap();
        assert!(masked_vanilla_attention(&p, &mask, AttentionMode::RawExp).is_err());
    }

    #[test]
    fn normalized_rows_stay_within_v_range() {
        let p = seeded_problem(10, 3, 21);
        let out = vanilla_attention(&p, AttentionMode::normalized_for_width(3)).unwrap();
        for d in 0..3 {
            let col: Vec<f64> = (0..10).map(|j| p.v().get(j, d)).collect();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-12;
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-12;
            for i in 0..10 {
                let x = out.get(i, d);
                assert!(x >= lo && x <= hi);
            }
        }
    }

    #[test]
    fn grid_must_cover_sequence() {
        let p = seeded_problem(6, 2, 3);
        assert!(p.clone().with_grid(2, 3).is_ok());
        assert!(p.with_grid(2, 2).is_err());
    }

    #[test]
    fn raw_exp_overflow_is_reported() {
        let big = DenseMatrix::filled(2, 2, 20.0);
        let p = AttentionProblem::new(big.clone(), big.clone(), big).unwrap();
        // q.k = 2*400 = 800 > 709, exp overflows.
        assert!(matches!(
            vanilla_attention(&p, AttentionMode::RawExp),
            Err(Error::Overflow { .. })
        ));
        // Normalized never overflows thanks to max subtraction.
        assert!(vanilla_attention(&p, AttentionMode::normalized_for_width(2)).is_ok());
    }

    #[test]
    fn block_mask_materializes_kronecker_structure() {
        let mask = BlockMask::new(6, 3).unwrap();
        let z = mask.materialize();
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i / 2 == j / 2 { 1.0 } else { 0.0 };
                assert_eq!(z.get(i, j), expect);
            }
        }
        // 3 blocks of 2x2 ones each: 12 nonzero entries.
        assert_eq!(norm(&z), 12.0f64.sqrt());
    }

    fn norm(m: &DenseMatrix) -> f64 {
        crate::linalg::norm(m, NormKind::Frobenius).unwrap()
    }
}
