//! Kernelized attention approximations: random-feature (Performer-style)
//! estimation of `exp(xyᵀ)` and its one-hot simplification.
//!
//! The random-feature estimator draws `r` Gaussian vectors `w ~ N(0, I_c)`
//! and averages `exp(w xᵀ) exp(w yᵀ) e(x) e(y)` with `e(x) = exp(-|x|²/2)`.
//! Both correction factors are individually optional: `e(x)` cancels exactly
//! under row normalization, and dropping `e(y)` is the cheaper still-rougher
//! variant. The one-hot simplification replaces the Gaussian vectors with the
//! `c` standard basis vectors, which collapses the estimator to
//! `(1/c) exp(Q) exp(K)ᵀ V` and makes the whole attention computable
//! right-associated in linear time without ever forming an `m x m` matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::attention::{AttentionMode, AttentionProblem};
use crate::error::{Error, Result};
use crate::linalg::{dot, elementwise_exp, matmul, matmul_transpose_a, DenseMatrix};

/// Denominators below this are treated as degenerate in normalized mode.
const DEGENERACY_FLOOR: f64 = 1e-300;

/// A sampled random-feature map: `r` projection vectors plus the two
/// correction-factor switches.
#[derive(Debug, Clone)]
pub struct RandomFeatureMap {
    omegas: DenseMatrix,
    seed: u64,
    include_ex: bool,
    include_ey: bool,
}

impl RandomFeatureMap {
    /// Draw `r` rows i.i.d. from `N(0, I_c)` using a seeded generator; the
    /// same seed reproduces the map bit-for-bit. Both correction factors
    /// start enabled.
    pub fn sample(c: usize, r: usize, seed: u64) -> Result<Self> {
        if c == 0 || r == 0 {
            return Err(Error::config(format!(
                "feature map needs positive dimensions, got r={r}, c={c}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..r * c)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Ok(RandomFeatureMap {
            omegas: DenseMatrix::from_vec(r, c, data)?,
            seed,
            include_ex: true,
            include_ey: true,
        })
    }

    /// Sample with the default feature count `max(1, ceil(c ln c))`.
    pub fn sample_default(c: usize, seed: u64) -> Result<Self> {
        Self::sample(c, Self::default_feature_count(c), seed)
    }

    /// `max(1, ceil(c ln c))` features.
    pub fn default_feature_count(c: usize) -> usize {
        let n = (c as f64) * (c as f64).ln();
        (n.ceil() as usize).max(1)
    }

    /// Build from explicit projection vectors (rows of `omegas`), mainly for
    /// the one-hot correspondence; the seed is recorded as 0.
    pub fn from_omegas(omegas: DenseMatrix, include_ex: bool, include_ey: bool) -> Self {
        RandomFeatureMap {
            omegas,
            seed: 0,
            include_ex,
            include_ey,
        }
    }

    pub fn with_flags(mut self, include_ex: bool, include_ey: bool) -> Self {
        self.include_ex = include_ex;
        self.include_ey = include_ey;
        self
    }

    pub fn omegas(&self) -> &DenseMatrix {
        &self.omegas
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn include_ex(&self) -> bool {
        self.include_ex
    }

    pub fn include_ey(&self) -> bool {
        self.include_ey
    }

    /// Number of features `r`.
    pub fn feature_count(&self) -> usize {
        self.omegas.rows()
    }

    /// Input dimension `c`.
    pub fn input_dim(&self) -> usize {
        self.omegas.cols()
    }

    /// Fill `out` (length `r`) with `exp(w (g·x)ᵀ)/sqrt(r)`, optionally times
    /// `e(g·x)`, where `g` is a pre-scaling gain; reports overflow instead of
    /// producing Inf.
    fn features_into(&self, x: &[f64], gain: f64, apply_e: bool, out: &mut [f64]) -> Result<()> {
        let r = self.feature_count();
        let inv_sqrt_r = 1.0 / (r as f64).sqrt();
        let e = if apply_e {
            (-0.5 * gain * gain * dot(x, x)).exp()
        } else {
            1.0
        };
        let mut max_arg = f64::NEG_INFINITY;
        for (w, o) in out.iter_mut().enumerate() {
            let arg = gain * dot(self.omegas.row(w), x);
            max_arg = max_arg.max(arg);
            *o = arg.exp() * inv_sqrt_r * e;
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Overflow {
                context: "random feature map".into(),
                max_input: max_arg,
            })
        }
    }
}

/// `e(x) = exp(-|x|²/2)`.
pub fn e_factor(x: &[f64]) -> f64 {
    (-0.5 * dot(x, x)).exp()
}

/// Monte-Carlo estimate of `exp(xyᵀ)`:
/// `(1/r) sum_w exp(w xᵀ) exp(w yᵀ) [e(x)] [e(y)]`, the bracketed factors
/// controlled by the map's flags. Unbiased when both are enabled.
pub fn performer_score(x: &[f64], y: &[f64], fm: &RandomFeatureMap) -> Result<f64> {
    let c = fm.input_dim();
    if x.len() != c || y.len() != c {
        return Err(Error::shape("performer_score", (1, x.len()), (1, y.len())));
    }
    let r = fm.feature_count();
    let ex = if fm.include_ex { e_factor(x) } else { 1.0 };
    let ey = if fm.include_ey { e_factor(y) } else { 1.0 };
    let mut acc = 0.0;
    let mut max_arg = f64::NEG_INFINITY;
    for w in 0..r {
        let row = fm.omegas.row(w);
        let a = dot(row, x);
        let b = dot(row, y);
        max_arg = max_arg.max(a).max(b);
        acc += a.exp() * b.exp();
    }
    let score = acc / (r as f64) * ex * ey;
    if score.is_finite() {
        Ok(score)
    } else {
        Err(Error::Overflow {
            context: "performer_score".into(),
            max_input: max_arg,
        })
    }
}

/// Random-feature attention `φ(Q)(φ(K)ᵀV)` computed right-associated.
///
/// Key features are streamed row by row into the `r x c` accumulator
/// `φ(K)ᵀV` (and the length-`r` sum `φ(K)ᵀ1`), then each query row is
/// featurized and multiplied through, so no `m x m` or `m x r` matrix is
/// ever materialized. Normalized mode divides row `i` by
/// `φ(q_i)·(φ(K)ᵀ1)` and reports denominators below 1e-300 as degenerate;
/// its scale is honored by featurizing `sqrt(scale)·q` and `sqrt(scale)·k`,
/// which estimates `exp(scale·qkᵀ)`.
pub fn performer_attention(
    p: &AttentionProblem,
    fm: &RandomFeatureMap,
    mode: AttentionMode,
) -> Result<DenseMatrix> {
    let (m, c) = (p.m(), p.c());
    if fm.input_dim() != c {
        return Err(Error::shape(
            "performer_attention",
            (p.m(), c),
            fm.omegas.shape(),
        ));
    }
    let r = fm.feature_count();
    let gain = match mode {
        AttentionMode::RawExp => 1.0,
        AttentionMode::Normalized { scale } => scale.sqrt(),
    };

    let mut ktv = DenseMatrix::zeros(r, c);
    let mut ksum = vec![0.0f64; r];
    let mut feat = vec![0.0f64; r];
    for j in 0..m {
        fm.features_into(p.k().row(j), gain, fm.include_ey, &mut feat)?;
        let vrow = p.v().row(j);
        for (w, &f) in feat.iter().enumerate() {
            ksum[w] += f;
            let krow = ktv.row_mut(w);
            for (kv, &vv) in krow.iter_mut().zip(vrow) {
                *kv += f * vv;
            }
        }
    }

    let mut out = DenseMatrix::zeros(m, c);
    let rows: Result<Vec<()>> = out
        .data_mut()
        .par_chunks_mut(c)
        .enumerate()
        .map(|(i, orow)| {
            let mut qfeat = vec![0.0f64; r];
            fm.features_into(p.q().row(i), gain, fm.include_ex, &mut qfeat)?;
            for (w, &f) in qfeat.iter().enumerate() {
                let krow = ktv.row(w);
                for (ov, &kv) in orow.iter_mut().zip(krow) {
                    *ov += f * kv;
                }
            }
            if let AttentionMode::Normalized { .. } = mode {
                let den = dot(&qfeat, &ksum);
                if den < DEGENERACY_FLOOR {
                    return Err(Error::Degenerate {
                        context: format!("performer normalization, row {i}"),
                        value: den,
                    });
                }
                for ov in orow.iter_mut() {
                    *ov /= den;
                }
            }
            Ok(())
        })
        .collect();
    rows?;
    out.check_finite("performer_attention")
}

/// One-hot linearized attention.
///
/// RawExp computes `(1/c) exp(Q)(exp(K)ᵀV)` right-associated, so the peak
/// intermediate is `max(m, c) x c`. Normalized divides row `i` by
/// `(1/c) exp(q_i)·(exp(K)ᵀ1)`, which cancels the prefactor; its scale is
/// honored by exponentiating `sqrt(scale)·Q` and `sqrt(scale)·K` so the
/// target is `exp(scale·QKᵀ)` like the softmax reference.
pub fn effatt_attention(p: &AttentionProblem, mode: AttentionMode) -> Result<DenseMatrix> {
    let c = p.c();
    let gain = match mode {
        AttentionMode::RawExp => 1.0,
        AttentionMode::Normalized { scale } => scale.sqrt(),
    };
    let expq = elementwise_exp(&p.q().scale(gain)?)?;
    let expk = elementwise_exp(&p.k().scale(gain)?)?;
    let ktv = matmul_transpose_a(&expk, p.v())?; // c x c
    let num = matmul(&expq, &ktv)?;
    match mode {
        AttentionMode::RawExp => num.scale(1.0 / c as f64),
        AttentionMode::Normalized { .. } => {
            // Column sums of exp(K), i.e. exp(K)ᵀ 1.
            let mut ksum = vec![0.0f64; c];
            for j in 0..p.m() {
                for (s, &v) in ksum.iter_mut().zip(expk.row(j)) {
                    *s += v;
                }
            }
            let mut out = num;
            for i in 0..p.m() {
                let den = dot(expq.row(i), &ksum);
                if den / (c as f64) < DEGENERACY_FLOOR {
                    return Err(Error::Degenerate {
                        context: format!("effatt normalization, row {i}"),
                        value: den / c as f64,
                    });
                }
                for ov in out.row_mut(i) {
                    *ov /= den;
                }
            }
            out.check_finite("effatt_attention")
        }
    }
}
