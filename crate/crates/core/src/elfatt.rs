//! The hybrid attention mechanism: a channel split feeding two parallel
//! heads, one global linear head over the first `c1` channels and one
//! block-sparse head over the remaining `c2`, with optional locally-enhanced
//! positional encoding (a per-channel 3x3 depthwise convolution added to the
//! value path).
//!
//! In raw-exponential mode the concatenated output
//! `[exp(Q̄)exp(K̄)ᵀV̄, g(exp(f(Q̃)f(K̃)ᵀ)f(Ṽ))]` approximates `exp(QKᵀ)V`;
//! the block-sparse component is exactly `(exp(Q̃K̃ᵀ) ⊙ Z)Ṽ` for the
//! block-diagonal mask `Z`, which is what the `bounds` module leans on.
//! Blockify is strictly contiguous along rows: block `i` of a matrix holds
//! rows `[i·m/b, (i+1)·m/b)`. Block counts that do not divide the sequence
//! length are a hard error; no padding is ever introduced.

use rayon::prelude::*;

use crate::attention::{vanilla_attention, AttentionMode, AttentionProblem};
use crate::error::{Error, Result};
use crate::kernel::effatt_attention;
use crate::linalg::{dot, elementwise_exp, matmul, matmul_transpose_a, DenseMatrix};

/// Channel split and block count for one hybrid attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSplitConfig {
    pub c1: usize,
    pub c2: usize,
    pub b: usize,
}

impl HeadSplitConfig {
    pub fn new(c1: usize, c2: usize, b: usize) -> Result<Self> {
        if c1 == 0 && c2 == 0 {
            return Err(Error::config("channel split needs c1 > 0 or c2 > 0"));
        }
        if b == 0 {
            return Err(Error::config("block count must be at least 1"));
        }
        Ok(HeadSplitConfig { c1, c2, b })
    }

    /// Default split: half the channels to each head, block length 64 (so
    /// `m` must be divisible by 64), falling back to a single block for
    /// shorter sequences.
    pub fn default_for(m: usize, c: usize) -> Result<Self> {
        let c1 = c / 2;
        let b = if m >= 64 { m / 64 } else { 1 };
        let cfg = HeadSplitConfig::new(c1, c - c1, b)?;
        cfg.validate(m, c)?;
        Ok(cfg)
    }

    /// Check the split against a concrete problem shape.
    pub fn validate(&self, m: usize, c: usize) -> Result<()> {
        if self.c1 + self.c2 != c {
            return Err(Error::config(format!(
                "channel split {} + {} does not cover width {c}",
                self.c1, self.c2
            )));
        }
        if self.c2 > 0 && m % self.b != 0 {
            return Err(Error::Divisibility { m, blocks: self.b });
        }
        Ok(())
    }

    pub fn block_len(&self, m: usize) -> usize {
        m / self.b
    }
}

/// Per-channel 3x3 stencils for the depthwise positional convolution.
#[derive(Debug, Clone)]
pub struct DepthwiseKernel {
    stencils: Vec<[[f64; 3]; 3]>,
}

impl DepthwiseKernel {
    pub fn new(stencils: Vec<[[f64; 3]; 3]>) -> Result<Self> {
        if stencils.is_empty() {
            return Err(Error::config("depthwise kernel needs at least one channel"));
        }
        for s in &stencils {
            if s.iter().flatten().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite {
                    context: "depthwise kernel".into(),
                });
            }
        }
        Ok(DepthwiseKernel { stencils })
    }

    /// Identity stencils: center tap 1, everything else 0.
    pub fn delta(channels: usize) -> Self {
        let mut s = [[0.0; 3]; 3];
        s[1][1] = 1.0;
        DepthwiseKernel {
            stencils: vec![s; channels.max(1)],
        }
    }

    /// All-zero stencils.
    pub fn zeros(channels: usize) -> Self {
        DepthwiseKernel {
            stencils: vec![[[0.0; 3]; 3]; channels.max(1)],
        }
    }

    /// Seeded Gaussian stencils, for reproducible experiments.
    pub fn seeded(channels: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let stencils = (0..channels.max(1))
            .map(|_| {
                let mut s = [[0.0; 3]; 3];
                for row in &mut s {
                    for w in row.iter_mut() {
                        *w = <StandardNormal as Distribution<f64>>::sample(
                            &StandardNormal,
                            &mut rng,
                        ) * 0.3;
                    }
                }
                s
            })
            .collect();
        DepthwiseKernel { stencils }
    }

    pub fn channels(&self) -> usize {
        self.stencils.len()
    }

    pub fn stencil(&self, channel: usize) -> &[[f64; 3]; 3] {
        &self.stencils[channel]
    }

    /// Kernel restricted to channels `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<DepthwiseKernel> {
        if start >= end || end > self.stencils.len() {
            return Err(Error::config(format!(
                "kernel channel range {start}..{end} out of bounds for {}",
                self.stencils.len()
            )));
        }
        Ok(DepthwiseKernel {
            stencils: self.stencils[start..end].to_vec(),
        })
    }
}

/// Where the positional convolution acts inside the block-sparse head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LepePlacement {
    /// Convolve each block's values over a zero-padded `1 x (m/b)` grid
    /// before reassembly (the literal reading of the blockified form).
    #[default]
    PerBlock,
    /// Convolve the whole value matrix over the problem grid instead.
    FullGrid,
}

/// Input projections applied to an embedding matrix to obtain `(Q, K, V)`.
#[derive(Debug, Clone)]
pub struct QkvProjection {
    w_q: DenseMatrix,
    w_k: DenseMatrix,
    w_v: DenseMatrix,
}

impl QkvProjection {
    pub fn new(w_q: DenseMatrix, w_k: DenseMatrix, w_v: DenseMatrix) -> Result<Self> {
        if w_q.shape() != w_k.shape() {
            return Err(Error::shape("projection q/k", w_q.shape(), w_k.shape()));
        }
        if w_q.shape() != w_v.shape() {
            return Err(Error::shape("projection q/v", w_q.shape(), w_v.shape()));
        }
        Ok(QkvProjection { w_q, w_k, w_v })
    }

    pub fn identity(n: usize) -> Self {
        QkvProjection {
            w_q: DenseMatrix::identity(n),
            w_k: DenseMatrix::identity(n),
            w_v: DenseMatrix::identity(n),
        }
    }

    pub fn w_q(&self) -> &DenseMatrix {
        &self.w_q
    }

    pub fn w_k(&self) -> &DenseMatrix {
        &self.w_k
    }

    pub fn w_v(&self) -> &DenseMatrix {
        &self.w_v
    }
}

/// Project an embedding matrix through the three weight matrices.
pub fn project_qkv(h: &DenseMatrix, proj: &QkvProjection) -> Result<AttentionProblem> {
    AttentionProblem::new(
        matmul(h, &proj.w_q)?,
        matmul(h, &proj.w_k)?,
        matmul(h, &proj.w_v)?,
    )
}

/// Column-slice a problem into its first-`c1` and last-`c2` channel halves.
/// An empty half comes back as `None`; concatenating the halves reproduces
/// the input exactly.
pub fn split_channels(
    p: &AttentionProblem,
    cfg: &HeadSplitConfig,
) -> Result<(Option<AttentionProblem>, Option<AttentionProblem>)> {
    cfg.validate(p.m(), p.c())?;
    let barred = if cfg.c1 > 0 {
        Some(p.slice_channels(0, cfg.c1)?)
    } else {
        None
    };
    let tilded = if cfg.c2 > 0 {
        Some(p.slice_channels(cfg.c1, p.c())?)
    } else {
        None
    };
    Ok((barred, tilded))
}

/// Partition into `b` contiguous row blocks of equal length.
pub fn blockify(a: &DenseMatrix, b: usize) -> Result<Vec<DenseMatrix>> {
    if b == 0 || a.rows() % b != 0 {
        return Err(Error::Divisibility {
            m: a.rows(),
            blocks: b,
        });
    }
    let len = a.rows() / b;
    (0..b)
        .map(|i| {
            DenseMatrix::from_vec(
                len,
                a.cols(),
                a.data()[i * len * a.cols()..(i + 1) * len * a.cols()].to_vec(),
            )
        })
        .collect()
}

/// Stack row blocks back into a single matrix (inverse of `blockify`).
pub fn unblockify(blocks: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::config("unblockify needs at least one block"))?;
    let (len, cols) = first.shape();
    let mut data = Vec::with_capacity(blocks.len() * len * cols);
    for blk in blocks {
        if blk.shape() != (len, cols) {
            return Err(Error::shape("unblockify", (len, cols), blk.shape()));
        }
        data.extend_from_slice(blk.data());
    }
    DenseMatrix::from_vec(blocks.len() * len, cols, data)
}

/// Block-sparse attention head: independent vanilla attention inside each of
/// `b` contiguous blocks, reassembled in order. In raw-exponential mode the
/// result equals `(exp(Q̃K̃ᵀ) ⊙ Z)Ṽ` for the block-diagonal mask `Z`.
pub fn block_sparse_head(
    tilded: &AttentionProblem,
    b: usize,
    mode: AttentionMode,
) -> Result<DenseMatrix> {
    block_sparse_head_with(tilded, b, mode, None, LepePlacement::PerBlock)
}

fn block_sparse_head_with(
    tilded: &AttentionProblem,
    b: usize,
    mode: AttentionMode,
    kernel: Option<&DepthwiseKernel>,
    placement: LepePlacement,
) -> Result<DenseMatrix> {
    let m = tilded.m();
    if b == 0 || m % b != 0 {
        return Err(Error::Divisibility { m, blocks: b });
    }
    let len = m / b;
    let mut blocks = Vec::with_capacity(b);
    for i in 0..b {
        let sub = tilded.slice_rows(i * len, (i + 1) * len)?;
        let mut out = vanilla_attention(&sub, mode)?;
        if let (Some(k), LepePlacement::PerBlock) = (kernel, placement) {
            let pe = lepe(sub.v(), (1, len), k)?;
            out = out.add(&pe)?;
        }
        blocks.push(out);
    }
    let mut assembled = unblockify(&blocks)?;
    if let (Some(k), LepePlacement::FullGrid) = (kernel, placement) {
        let grid = tilded
            .grid()
            .ok_or_else(|| Error::config("full-grid positional encoding needs a token grid"))?;
        assembled = assembled.add(&lepe(tilded.v(), grid, k)?)?;
    }
    Ok(assembled)
}

/// Global linear attention head: `exp(Q̄)(exp(K̄)ᵀ V̄)` right-associated,
/// with no prefactor in raw mode. Normalized mode matches the one-hot
/// kernelized attention (the prefactor cancels).
pub fn global_linear_head(barred: &AttentionProblem, mode: AttentionMode) -> Result<DenseMatrix> {
    match mode {
        AttentionMode::RawExp => {
            let expq = elementwise_exp(barred.q())?;
            let expk = elementwise_exp(barred.k())?;
            let ktv = matmul_transpose_a(&expk, barred.v())?;
            matmul(&expq, &ktv)
        }
        AttentionMode::Normalized { .. } => effatt_attention(barred, mode),
    }
}

/// Depthwise 3x3 convolution of each value channel over a 2D token grid
/// with zero padding; `h * w` must equal the row count and the kernel must
/// provide one stencil per column.
pub fn lepe(
    v: &DenseMatrix,
    grid: (usize, usize),
    kernel: &DepthwiseKernel,
) -> Result<DenseMatrix> {
    let (h, w) = grid;
    if h * w != v.rows() {
        return Err(Error::shape("lepe grid", (v.rows(), v.cols()), (h, w)));
    }
    if kernel.channels() != v.cols() {
        return Err(Error::shape(
            "lepe kernel channels",
            (v.rows(), v.cols()),
            (kernel.channels(), 1),
        ));
    }
    let mut out = DenseMatrix::zeros(v.rows(), v.cols());
    for ch in 0..v.cols() {
        let st = kernel.stencil(ch);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..3usize {
                    for dx in 0..3usize {
                        let yy = y as isize + dy as isize - 1;
                        let xx = x as isize + dx as isize - 1;
                        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                            continue;
                        }
                        acc += st[dy][dx] * v.get(yy as usize * w + xx as usize, ch);
                    }
                }
                out.row_mut(y * w + x)[ch] = acc;
            }
        }
    }
    out.check_finite("lepe")
}

/// One hybrid attention block with the default per-block positional
/// placement. See [`elfatt_forward_with`].
pub fn elfatt_forward(
    p: &AttentionProblem,
    cfg: &HeadSplitConfig,
    mode: AttentionMode,
    kernel: Option<&DepthwiseKernel>,
) -> Result<DenseMatrix> {
    elfatt_forward_with(p, cfg, mode, kernel, LepePlacement::PerBlock)
}

/// One hybrid attention block: global linear head over the first `c1`
/// channels, block-sparse head over the last `c2`, outputs concatenated.
///
/// With a kernel present, the global head adds the convolution of its value
/// slice over the problem grid, and the sparse head adds it per block (or
/// over the full grid, by placement). A kernel requires the problem to carry
/// a grid and exactly `c` stencils.
pub fn elfatt_forward_with(
    p: &AttentionProblem,
    cfg: &HeadSplitConfig,
    mode: AttentionMode,
    kernel: Option<&DepthwiseKernel>,
    placement: LepePlacement,
) -> Result<DenseMatrix> {
    cfg.validate(p.m(), p.c())?;
    if let Some(k) = kernel {
        if p.grid().is_none() {
            return Err(Error::config(
                "positional encoding needs a token grid on the problem",
            ));
        }
        if k.channels() != p.c() {
            return Err(Error::shape(
                "elfatt kernel channels",
                (p.m(), p.c()),
                (k.channels(), 1),
            ));
        }
    }
    let (barred, tilded) = split_channels(p, cfg)?;

    let global = match &barred {
        Some(sub) => {
            let mut out = global_linear_head(sub, mode)?;
            if let Some(k) = kernel {
                let grid = p.grid().expect("checked above");
                out = out.add(&lepe(sub.v(), grid, &k.slice(0, cfg.c1)?)?)?;
            }
            Some(out)
        }
        None => None,
    };
    let sparse = match &tilded {
        Some(sub) => {
            let kslice = match kernel {
                Some(k) => Some(k.slice(cfg.c1, p.c())?),
                None => None,
            };
            Some(block_sparse_head_with(
                sub,
                cfg.b,
                mode,
                kslice.as_ref(),
                placement,
            )?)
        }
        None => None,
    };
    match (global, sparse) {
        (Some(g), Some(s)) => g.concat_columns(&s),
        (Some(g), None) => Ok(g),
        (None, Some(s)) => Ok(s),
        (None, None) => unreachable!("validate guarantees a nonempty split"),
    }
}

/// The double-head target the hybrid block approximates: vanilla attention
/// run separately on each channel half, concatenated. Used as the reference
/// for the tighter error bounds.
pub fn double_head_reference(
    p: &AttentionProblem,
    cfg: &HeadSplitConfig,
    mode: AttentionMode,
) -> Result<DenseMatrix> {
    let (barred, tilded) = split_channels(p, cfg)?;
    let left = barred
        .as_ref()
        .map(|s| vanilla_attention(s, mode))
        .transpose()?;
    let right = tilded
        .as_ref()
        .map(|s| vanilla_attention(s, mode))
        .transpose()?;
    match (left, right) {
        (Some(l), Some(r)) => l.concat_columns(&r),
        (Some(l), None) => Ok(l),
        (None, Some(r)) => Ok(r),
        (None, None) => unreachable!(),
    }
}

/// Several hybrid blocks side by side: the channels are partitioned into
/// `cfgs.len()` equal groups, each processed by its own block, and the
/// outputs concatenated in group order.
pub fn multi_head_elfatt(
    p: &AttentionProblem,
    cfgs: &[HeadSplitConfig],
    mode: AttentionMode,
    kernel: Option<&DepthwiseKernel>,
) -> Result<DenseMatrix> {
    let s = cfgs.len();
    if s == 0 {
        return Err(Error::config("multi-head needs at least one block config"));
    }
    if p.c() % s != 0 {
        return Err(Error::shape("multi_head_elfatt", (p.m(), p.c()), (s, 1)));
    }
    let width = p.c() / s;
    if let Some(k) = kernel {
        if k.channels() != p.c() {
            return Err(Error::shape(
                "multi_head kernel channels",
                (p.m(), p.c()),
                (k.channels(), 1),
            ));
        }
    }
    let parts: Result<Vec<DenseMatrix>> = cfgs
        .par_iter()
        .enumerate()
        .map(|(g, cfg)| {
            if cfg.c1 + cfg.c2 != width {
                return Err(Error::config(format!(
                    "group {g} split {}+{} does not cover group width {width}",
                    cfg.c1, cfg.c2
                )));
            }
            let sub = p.slice_channels(g * width, (g + 1) * width)?;
            let kslice = match kernel {
                Some(k) => Some(k.slice(g * width, (g + 1) * width)?),
                None => None,
            };
            elfatt_forward(&sub, cfg, mode, kslice.as_ref())
        })
        .collect();
    let parts = parts?;
    let mut out = parts[0].clone();
    for part in &parts[1..] {
        out = out.concat_columns(part)?;
    }
    Ok(out)
}

/// Helper used in tests and the normalization paths: column sums of `exp(K)`
/// dotted with `exp(q_i)`, i.e. the global head's normalizer.
#[allow(dead_code)]
pub(crate) fn global_head_denominator(barred: &AttentionProblem, row: usize) -> Result<f64> {
    let expq = elementwise_exp(barred.q())?;
    let expk = elementwise_exp(barred.k())?;
    let mut ksum = vec![0.0f64; barred.c()];
    for j in 0..barred.m() {
        for (s, &v) in ksum.iter_mut().zip(expk.row(j)) {
            *s += v;
        }
    }
    Ok(dot(expq.row(row), &ksum))
}
