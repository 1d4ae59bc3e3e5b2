//! Norm-based approximation error bounds for the hybrid attention mechanism,
//! evaluated numerically on concrete problem instances.
//!
//! Everything here works in the raw-exponential regime. For a channel split
//! `Q = [Q̄, Q̃]` the key identity is `exp(QKᵀ) = exp(Q̄K̄ᵀ) ⊙ exp(Q̃K̃ᵀ)`,
//! which decomposes the approximation error of the two heads into
//! linearization error (global head) and off-block mass (sparse head).
//!
//! The per-pair sandwich controls the linearization factor: for row vectors
//! `q̄, k̄` of width `c1`,
//!
//! ```text
//! c1 / (D exp(-0.5))  <=  exp(q̄)exp(k̄)ᵀ / exp(q̄k̄ᵀ)  <=  c1 / (d exp(-0.5))
//! ```
//!
//! with `D`/`d` the max/min over channels of
//! `exp(q̄k̄ᵀ + 0.5 - (q̄_i + k̄_i))`. Taking the extrema over all query/key
//! pairs gives the global statistics `big_m`/`small_m`, a matching sandwich
//! on norm ratios, and the two-branch bound on
//! `‖exp(Q̄)exp(K̄)ᵀ - exp(Q̄K̄ᵀ) ⊙ exp(Q̃K̃ᵀ)‖`. Stacking those with the
//! submultiplicative `‖AB‖ <= ‖A‖‖B‖` yields total bounds against the
//! single-head target `exp(QKᵀ)V` and tighter ones against the double-head
//! target `[exp(Q̄K̄ᵀ)V̄, exp(Q̃K̃ᵀ)Ṽ]`, plus comparator bounds for the pure
//! linearized and pure block-local mechanisms.
//!
//! Spectral norms come from power iteration; every report carries a slack
//! equal to the propagated convergence gaps, and a bound is only flagged as
//! violated if the measured error exceeds bound + slack by more than a 1e-9
//! relative margin.

use crate::attention::AttentionProblem;
use crate::elfatt::{split_channels, HeadSplitConfig};
use crate::error::{Error, Result};
use crate::linalg::{
    dot, elementwise_exp, frobenius_norm, hadamard, matmul, matmul_transpose_b,
    spectral_norm_with_gap, DenseMatrix, NormKind,
};

/// Brute-force pair statistics are quadratic in the sequence length; keep
/// them to desk scale.
const STATS_MAX_M: usize = 512;

/// Relative headroom granted to a bound before it counts as violated.
pub const BOUND_REL_TOL: f64 = 1e-9;

/// Global extrema of `exp(q̄k̄ᵀ + 0.5 - (q̄_i + k̄_i))` over all query/key
/// pairs and channels.
#[derive(Debug, Clone, Copy)]
pub struct BoundStatistics {
    big_m: f64,
    small_m: f64,
}

impl BoundStatistics {
    /// Global maximum (written `𝔐` in the derivation).
    pub fn big_m(&self) -> f64 {
        self.big_m
    }

    /// Global minimum (written `𝓜` in the derivation).
    pub fn small_m(&self) -> f64 {
        self.small_m
    }

    /// Upper end of the norm-ratio sandwich, `c1 / (small_m exp(-0.5))`.
    pub fn ratio_upper(&self, c1: usize) -> f64 {
        c1 as f64 / (self.small_m * (-0.5f64).exp())
    }

    /// Lower end of the norm-ratio sandwich, `c1 / (big_m exp(-0.5))`.
    pub fn ratio_lower(&self, c1: usize) -> f64 {
        c1 as f64 / (self.big_m * (-0.5f64).exp())
    }

    /// Pick the branch whose ratio endpoint lies further from 1; that
    /// endpoint's `|ratio - 1|` is the linearization factor of the bound.
    pub fn branch(&self, c1: usize) -> (BoundBranch, f64) {
        let hi = (self.ratio_upper(c1) - 1.0).abs();
        let lo = (self.ratio_lower(c1) - 1.0).abs();
        if hi >= lo {
            (BoundBranch::SmallM, hi)
        } else {
            (BoundBranch::BigM, lo)
        }
    }
}

/// Which of the two bound branches fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundBranch {
    /// Factor taken from the `small_m` (minimum-statistic) endpoint.
    SmallM,
    /// Factor taken from the `big_m` (maximum-statistic) endpoint.
    BigM,
}

impl BoundBranch {
    pub fn name(&self) -> &'static str {
        match self {
            BoundBranch::SmallM => "small_m",
            BoundBranch::BigM => "big_m",
        }
    }
}

/// One evaluated bound: the measured error, the bound value, the branch and
/// norm used, a spectral slack, and the named intermediate terms.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub op: &'static str,
    pub norm_kind: NormKind,
    pub branch: Option<BoundBranch>,
    pub measured_error: f64,
    pub bound_value: f64,
    /// Propagated power-iteration convergence gaps (0 for Frobenius).
    pub slack: f64,
    pub note: Option<String>,
    pub component_terms: Vec<(String, f64)>,
}

impl BoundReport {
    /// Whether the measured error respects the bound, up to the relative
    /// tolerance plus the spectral slack.
    pub fn holds(&self) -> bool {
        self.measured_error <= self.bound_value * (1.0 + BOUND_REL_TOL) + self.slack
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.component_terms
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    /// Sum of the `term_`-prefixed components; equals `bound_value` up to
    /// rounding by construction.
    pub fn term_sum(&self) -> f64 {
        self.component_terms
            .iter()
            .filter(|(n, _)| n.starts_with("term_"))
            .map(|(_, v)| *v)
            .sum()
    }

    /// Flat `name=value` text record, one line per field.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("op={}\n", self.op));
        out.push_str(&format!("norm={}\n", self.norm_kind.name()));
        if let Some(b) = self.branch {
            out.push_str(&format!("branch={}\n", b.name()));
        }
        out.push_str(&format!("measured_error={}\n", self.measured_error));
        out.push_str(&format!("bound_value={}\n", self.bound_value));
        out.push_str(&format!("slack={}\n", self.slack));
        out.push_str(&format!("holds={}\n", self.holds()));
        if let Some(note) = &self.note {
            out.push_str(&format!("note={note}\n"));
        }
        for (name, value) in &self.component_terms {
            out.push_str(&format!("{name}={value}\n"));
        }
        out
    }
}

/// Norm value together with its power-iteration gap (0 for Frobenius).
#[derive(Debug, Clone, Copy)]
struct NormEval {
    value: f64,
    gap: f64,
}

fn eval_norm(m: &DenseMatrix, kind: NormKind) -> Result<NormEval> {
    match kind {
        NormKind::Frobenius => Ok(NormEval {
            value: frobenius_norm(m),
            gap: 0.0,
        }),
        NormKind::Spectral => {
            let (value, gap) = spectral_norm_with_gap(m)?;
            Ok(NormEval { value, gap })
        }
    }
}

/// `coeff * prod(factors)` with first-order gap propagation.
fn product_term(coeff: f64, factors: &[NormEval]) -> (f64, f64) {
    let value = coeff * factors.iter().map(|f| f.value).product::<f64>();
    let mut slack = 0.0;
    for i in 0..factors.len() {
        let mut part = coeff * factors[i].gap;
        for (j, f) in factors.iter().enumerate() {
            if j != i {
                part *= f.value;
            }
        }
        slack += part;
    }
    (value, slack)
}

/// Per-pair extrema `(D, d)` of `exp(q̄k̄ᵀ + 0.5 - (q̄_i + k̄_i))`.
pub fn pair_ratio_stats(qbar: &[f64], kbar: &[f64]) -> Result<(f64, f64)> {
    if qbar.is_empty() || qbar.len() != kbar.len() {
        return Err(Error::shape(
            "pair_ratio_stats",
            (1, qbar.len()),
            (1, kbar.len()),
        ));
    }
    let s = dot(qbar, kbar);
    let mut d_max = f64::NEG_INFINITY;
    let mut d_min = f64::INFINITY;
    for i in 0..qbar.len() {
        let t = (s + 0.5 - (qbar[i] + kbar[i])).exp();
        if !t.is_finite() {
            return Err(Error::Overflow {
                context: "pair_ratio_stats".into(),
                max_input: s + 0.5 - (qbar[i] + kbar[i]),
            });
        }
        d_max = d_max.max(t);
        d_min = d_min.min(t);
    }
    Ok((d_max, d_min))
}

/// Per-pair sandwich `(lower, upper, ratio)` where
/// `ratio = exp(q̄)exp(k̄)ᵀ / exp(q̄k̄ᵀ)`, `lower = c1/(D exp(-0.5))`, and
/// `upper = c1/(d exp(-0.5))`. Guarantees `lower <= ratio <= upper`.
pub fn pair_ratio_bounds(qbar: &[f64], kbar: &[f64]) -> Result<(f64, f64, f64)> {
    let c1 = qbar.len();
    let (d_max, d_min) = pair_ratio_stats(qbar, kbar)?;
    let num: f64 = qbar.iter().zip(kbar).map(|(q, k)| q.exp() * k.exp()).sum();
    let den = dot(qbar, kbar).exp();
    if !num.is_finite() || !den.is_finite() {
        return Err(Error::Overflow {
            context: "pair_ratio_bounds".into(),
            max_input: num.max(den),
        });
    }
    let ratio = num / den;
    let e_neg_half = (-0.5f64).exp();
    let lower = c1 as f64 / (d_max * e_neg_half);
    let upper = c1 as f64 / (d_min * e_neg_half);
    Ok((lower, upper, ratio))
}

/// Global extrema over all query/key pairs and channels. Brute force,
/// `O(m² c1)`; rejects sequence lengths above 512 to stay at desk scale.
pub fn global_ratio_stats(qbar: &DenseMatrix, kbar: &DenseMatrix) -> Result<BoundStatistics> {
    if qbar.shape() != kbar.shape() {
        return Err(Error::shape(
            "global_ratio_stats",
            qbar.shape(),
            kbar.shape(),
        ));
    }
    let m = qbar.rows();
    if m > STATS_MAX_M {
        return Err(Error::config(format!(
            "pair statistics are O(m^2 c1) brute force and capped at m <= {STATS_MAX_M}, got {m}"
        )));
    }
    let mut big_m = f64::NEG_INFINITY;
    let mut small_m = f64::INFINITY;
    for i1 in 0..m {
        for i2 in 0..m {
            let (d_max, d_min) = pair_ratio_stats(qbar.row(i1), kbar.row(i2))?;
            big_m = big_m.max(d_max);
            small_m = small_m.min(d_min);
        }
    }
    Ok(BoundStatistics { big_m, small_m })
}

/// `exp(A Bᵀ)`.
fn exp_gram(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    elementwise_exp(&matmul_transpose_b(a, b)?)
}

/// Pieces shared by the split-based bounds.
struct SplitPieces {
    qbar: DenseMatrix,
    kbar: DenseMatrix,
    vbar: DenseMatrix,
    qtilde: DenseMatrix,
    ktilde: DenseMatrix,
    vtilde: DenseMatrix,
    gram_bar: DenseMatrix,
    gram_tilde: DenseMatrix,
    mask: DenseMatrix,
}

fn split_pieces(p: &AttentionProblem, cfg: &HeadSplitConfig) -> Result<SplitPieces> {
    if cfg.c1 == 0 || cfg.c2 == 0 {
        return Err(Error::config(
            "bound evaluation needs both channel halves non-empty (c1 >= 1 and c2 >= 1)",
        ));
    }
    let (barred, tilded) = split_channels(p, cfg)?;
    let barred = barred.expect("c1 >= 1");
    let tilded = tilded.expect("c2 >= 1");
    let gram_bar = exp_gram(barred.q(), barred.k())?;
    let gram_tilde = exp_gram(tilded.q(), tilded.k())?;
    let mask = crate::attention::BlockMask::new(p.m(), cfg.b)?.materialize();
    Ok(SplitPieces {
        qbar: barred.q().clone(),
        kbar: barred.k().clone(),
        vbar: barred.v().clone(),
        qtilde: tilded.q().clone(),
        ktilde: tilded.k().clone(),
        vtilde: tilded.v().clone(),
        gram_bar,
        gram_tilde,
        mask,
    })
}

/// Two-branch bound on the linearization-times-masking discrepancy
/// `‖exp(Q̄)exp(K̄)ᵀ - exp(Q̄K̄ᵀ) ⊙ exp(Q̃K̃ᵀ)‖`.
pub fn linearization_bound(
    qbar: &DenseMatrix,
    kbar: &DenseMatrix,
    qtilde: &DenseMatrix,
    ktilde: &DenseMatrix,
    kind: NormKind,
) -> Result<BoundReport> {
    if qbar.rows() != qtilde.rows() || kbar.rows() != ktilde.rows() {
        return Err(Error::shape(
            "linearization_bound",
            qbar.shape(),
            qtilde.shape(),
        ));
    }
    let m = qbar.rows();
    let stats = global_ratio_stats(qbar, kbar)?;
    let c1 = qbar.cols();

    let eqq = matmul_transpose_b(&elementwise_exp(qbar)?, &elementwise_exp(kbar)?)?;
    let gram_bar = exp_gram(qbar, kbar)?;
    let gram_tilde = exp_gram(qtilde, ktilde)?;

    let measured_mat = eqq.sub(&hadamard(&gram_bar, &gram_tilde)?)?;
    let measured = eval_norm(&measured_mat, kind)?;

    let ones = DenseMatrix::filled(m, m, 1.0);
    let n_gram_bar = eval_norm(&gram_bar, kind)?;
    let n_gram_tilde = eval_norm(&gram_tilde, kind)?;
    let n_ones_dev = eval_norm(&ones.sub(&gram_tilde)?, kind)?;

    let ratio_upper = stats.ratio_upper(c1);
    let ratio_lower = stats.ratio_lower(c1);
    let (branch, factor) = stats.branch(c1);

    let (term_ones, slack_ones) = product_term(ratio_upper, &[n_gram_bar, n_ones_dev]);
    let (term_lin, slack_lin) = product_term(factor, &[n_gram_bar, n_gram_tilde]);

    Ok(BoundReport {
        op: "linearization_bound",
        norm_kind: kind,
        branch: Some(branch),
        measured_error: measured.value,
        bound_value: term_ones + term_lin,
        slack: measured.gap + slack_ones + slack_lin,
        note: None,
        component_terms: vec![
            ("big_m".into(), stats.big_m()),
            ("small_m".into(), stats.small_m()),
            ("ratio_upper".into(), ratio_upper),
            ("ratio_lower".into(), ratio_lower),
            ("branch_factor".into(), factor),
            ("norm_gram_barred".into(), n_gram_bar.value),
            ("norm_gram_tilded".into(), n_gram_tilde.value),
            ("norm_ones_minus_gram_tilded".into(), n_ones_dev.value),
            ("term_ones_deviation".into(), term_ones),
            ("term_linearization".into(), term_lin),
        ],
    })
}

/// Total bound against the single-head target `exp(QKᵀ)V`: the branch bound
/// on the global half stacked with the mask-deviation term on the sparse
/// half, each multiplied by its value-slice norm. The looser plain triangle
/// split is recorded alongside for comparison.
pub fn total_bound_single_head(
    p: &AttentionProblem,
    cfg: &HeadSplitConfig,
    kind: NormKind,
) -> Result<BoundReport> {
    let pieces = split_pieces(p, cfg)?;
    let m = p.m();
    let stats = global_ratio_stats(&pieces.qbar, &pieces.kbar)?;
    let c1 = cfg.c1;

    let eqq = matmul_transpose_b(
        &elementwise_exp(&pieces.qbar)?,
        &elementwise_exp(&pieces.kbar)?,
    )?;
    let masked_tilde = hadamard(&pieces.gram_tilde, &pieces.mask)?;
    let approx =
        matmul(&eqq, &pieces.vbar)?.concat_columns(&matmul(&masked_tilde, &pieces.vtilde)?)?;
    let exact = crate::attention::vanilla_attention(p, crate::attention::AttentionMode::RawExp)?;
    let measured = eval_norm(&approx.sub(&exact)?, kind)?;

    // Plain triangle split (the looser comparison value).
    let full_gram = hadamard(&pieces.gram_bar, &pieces.gram_tilde)?;
    let n_vbar = eval_norm(&pieces.vbar, kind)?;
    let n_vtilde = eval_norm(&pieces.vtilde, kind)?;
    let e1 = eval_norm(&eqq.sub(&full_gram)?, kind)?;
    let e2 = eval_norm(&masked_tilde.sub(&full_gram)?, kind)?;
    let triangle_value = e1.value * n_vbar.value + e2.value * n_vtilde.value;

    // Branch-selected bound.
    let ones = DenseMatrix::filled(m, m, 1.0);
    let n_gram_bar = eval_norm(&pieces.gram_bar, kind)?;
    let n_gram_tilde = eval_norm(&pieces.gram_tilde, kind)?;
    let n_ones_dev = eval_norm(&ones.sub(&pieces.gram_tilde)?, kind)?;
    let n_mask_dev = eval_norm(&pieces.mask.sub(&pieces.gram_bar)?, kind)?;

    let ratio_upper = stats.ratio_upper(c1);
    let (branch, factor) = stats.branch(c1);

    let (t_ones, s_ones) = product_term(ratio_upper, &[n_gram_bar, n_ones_dev, n_vbar]);
    let (t_lin, s_lin) = product_term(factor, &[n_gram_bar, n_gram_tilde, n_vbar]);
    let (t_sparse, s_sparse) = product_term(1.0, &[n_mask_dev, n_gram_tilde, n_vtilde]);
    let term_global = t_ones + t_lin;

    Ok(BoundReport {
        op: "total_bound_single_head",
        norm_kind: kind,
        branch: Some(branch),
        measured_error: measured.value,
        bound_value: term_global + t_sparse,
        slack: measured.gap + s_ones + s_lin + s_sparse,
        note: None,
        component_terms: vec![
            ("big_m".into(), stats.big_m()),
            ("small_m".into(), stats.small_m()),
            ("ratio_upper".into(), ratio_upper),
            ("ratio_lower".into(), stats.ratio_lower(c1)),
            ("branch_factor".into(), factor),
            ("triangle_split_value".into(), triangle_value),
            ("norm_gram_barred".into(), n_gram_bar.value),
            ("norm_gram_tilded".into(), n_gram_tilde.value),
            ("norm_ones_minus_gram_tilded".into(), n_ones_dev.value),
            ("norm_mask_minus_gram_barred".into(), n_mask_dev.value),
            ("norm_v_barred".into(), n_vbar.value),
            ("norm_v_tilded".into(), n_vtilde.value),
            ("term_global".into(), term_global),
            ("term_sparse".into(), t_sparse),
        ],
    })
}

/// Tighter bound against the double-head target
/// `[exp(Q̄K̄ᵀ)V̄, exp(Q̃K̃ᵀ)Ṽ]`. The single-head-style bound on the same
/// instance is recorded so tightness can be compared.
pub fn total_bound_double_head(
    p: &AttentionProblem,
    cfg: &HeadSplitConfig,
    kind: NormKind,
) -> Result<BoundReport> {
    let pieces = split_pieces(p, cfg)?;
    let m = p.m();
    let stats = global_ratio_stats(&pieces.qbar, &pieces.kbar)?;
    let c1 = cfg.c1;

    let eqq = matmul_transpose_b(
        &elementwise_exp(&pieces.qbar)?,
        &elementwise_exp(&pieces.kbar)?,
    )?;
    let masked_tilde = hadamard(&pieces.gram_tilde, &pieces.mask)?;
    let approx =
        matmul(&eqq, &pieces.vbar)?.concat_columns(&matmul(&masked_tilde, &pieces.vtilde)?)?;
    let reference = matmul(&pieces.gram_bar, &pieces.vbar)?
        .concat_columns(&matmul(&pieces.gram_tilde, &pieces.vtilde)?)?;
    let measured = eval_norm(&approx.sub(&reference)?, kind)?;

    // Plain triangle split against the double-head target.
    let n_vbar = eval_norm(&pieces.vbar, kind)?;
    let n_vtilde = eval_norm(&pieces.vtilde, kind)?;
    let e1 = eval_norm(&eqq.sub(&pieces.gram_bar)?, kind)?;
    let e2 = eval_norm(&masked_tilde.sub(&pieces.gram_tilde)?, kind)?;
    let triangle_value = e1.value * n_vbar.value + e2.value * n_vtilde.value;

    let ones = DenseMatrix::filled(m, m, 1.0);
    let n_gram_bar = eval_norm(&pieces.gram_bar, kind)?;
    let n_gram_tilde = eval_norm(&pieces.gram_tilde, kind)?;
    let n_mask_minus_ones = eval_norm(&pieces.mask.sub(&ones)?, kind)?;

    let (branch, factor) = stats.branch(c1);
    let (t_global, s_global) = product_term(factor, &[n_gram_bar, n_vbar]);
    let (t_sparse, s_sparse) = product_term(1.0, &[n_mask_minus_ones, n_gram_tilde, n_vtilde]);

    // Single-head-style value on the same inputs, for the tightness check.
    let single = total_bound_single_head(p, cfg, kind)?;

    Ok(BoundReport {
        op: "total_bound_double_head",
        norm_kind: kind,
        branch: Some(branch),
        measured_error: measured.value,
        bound_value: t_global + t_sparse,
        slack: measured.gap + s_global + s_sparse,
        note: None,
        component_terms: vec![
            ("big_m".into(), stats.big_m()),
            ("small_m".into(), stats.small_m()),
            ("branch_factor".into(), factor),
            ("triangle_split_value".into(), triangle_value),
            ("single_target_bound".into(), single.bound_value),
            ("norm_gram_barred".into(), n_gram_bar.value),
            ("norm_gram_tilded".into(), n_gram_tilde.value),
            ("norm_mask_minus_ones".into(), n_mask_minus_ones.value),
            ("norm_v_barred".into(), n_vbar.value),
            ("norm_v_tilded".into(), n_vtilde.value),
            ("term_global".into(), t_global),
            ("term_sparse".into(), t_sparse),
        ],
    })
}

/// Comparator: decomposition bound for the fully linearized mechanism,
/// `‖[exp(Q̄)exp(K̄)ᵀ, exp(Q̃)exp(K̃)ᵀ] - [exp(Q̄K̄ᵀ), exp(Q̃K̃ᵀ)]‖` bounded
/// by the two per-half linearization errors. The hybrid mechanism's
/// attention-matrix bound on the same instance is recorded for the
/// qualitative ordering comparison.
pub fn effatt_decomposition_bound(
    p: &AttentionProblem,
    cfg: &HeadSplitConfig,
    kind: NormKind,
) -> Result<BoundReport> {
    let pieces = split_pieces(p, cfg)?;
    let eqq_bar = matmul_transpose_b(
        &elementwise_exp(&pieces.qbar)?,
        &elementwise_exp(&pieces.kbar)?,
    )?;
    let eqq_tilde = matmul_transpose_b(
        &elementwise_exp(&pieces.qtilde)?,
        &elementwise_exp(&pieces.ktilde)?,
    )?;

    let diff_bar = eqq_bar.sub(&pieces.gram_bar)?;
    let diff_tilde = eqq_tilde.sub(&pieces.gram_tilde)?;
    let measured = eval_norm(&diff_bar.concat_columns(&diff_tilde)?, kind)?;

    let n_bar = eval_norm(&diff_bar, kind)?;
    let n_tilde = eval_norm(&diff_tilde, kind)?;

    // Hybrid comparator: linearization error on the barred half plus
    // off-block mass on the tilded half.
    let masked_tilde = hadamard(&pieces.gram_tilde, &pieces.mask)?;
    let n_offblock = eval_norm(&masked_tilde.sub(&pieces.gram_tilde)?, kind)?;
    let elfatt_bound = n_bar.value + n_offblock.value;

    Ok(BoundReport {
        op: "effatt_decomposition_bound",
        norm_kind: kind,
        branch: None,
        measured_error: measured.value,
        bound_value: n_bar.value + n_tilde.value,
        slack: measured.gap + n_bar.gap + n_tilde.gap,
        note: None,
        component_terms: vec![
            ("term_linearization_barred".into(), n_bar.value),
            ("term_linearization_tilded".into(), n_tilde.value),
            ("elfatt_matrix_bound".into(), elfatt_bound),
        ],
    })
}

/// Comparator: decomposition bound for the pure block-local mechanism,
/// `‖[exp(Q̄K̄ᵀ) ⊙ Z₁, exp(Q̃K̃ᵀ) ⊙ Z₂] - [exp(Q̄K̄ᵀ), exp(Q̃K̃ᵀ)]‖` with
/// both masks taken as the block-diagonal surrogate `Z` (the mechanism's
/// true cross-shaped masks are out of scope).
pub fn local_decomposition_bound(
    p: &AttentionProblem,
    cfg: &HeadSplitConfig,
    kind: NormKind,
) -> Result<BoundReport> {
    let pieces = split_pieces(p, cfg)?;
    let masked_bar = hadamard(&pieces.gram_bar, &pieces.mask)?;
    let masked_tilde = hadamard(&pieces.gram_tilde, &pieces.mask)?;

    let diff_bar = masked_bar.sub(&pieces.gram_bar)?;
    let diff_tilde = masked_tilde.sub(&pieces.gram_tilde)?;
    let measured = eval_norm(&diff_bar.concat_columns(&diff_tilde)?, kind)?;

    let n_bar = eval_norm(&diff_bar, kind)?;
    let n_tilde = eval_norm(&diff_tilde, kind)?;

    Ok(BoundReport {
        op: "local_decomposition_bound",
        norm_kind: kind,
        branch: None,
        measured_error: measured.value,
        bound_value: n_bar.value + n_tilde.value,
        slack: measured.gap + n_bar.gap + n_tilde.gap,
        note: Some("z1=z2=block_diagonal_surrogate".into()),
        component_terms: vec![
            ("term_offblock_barred".into(), n_bar.value),
            ("term_offblock_tilded".into(), n_tilde.value),
        ],
    })
}

/// Relative approximation error `‖A - A'‖ / ‖A‖`.
pub fn relative_error(
    a_exact: &DenseMatrix,
    a_approx: &DenseMatrix,
    kind: NormKind,
) -> Result<f64> {
    if a_exact.shape() != a_approx.shape() {
        return Err(Error::shape(
            "relative_error",
            a_exact.shape(),
            a_approx.shape(),
        ));
    }
    let den = eval_norm(a_exact, kind)?.value;
    if den <= 0.0 {
        return Err(Error::Degenerate {
            context: "relative_error denominator".into(),
            value: den,
        });
    }
    let num = eval_norm(&a_exact.sub(a_approx)?, kind)?.value;
    Ok(num / den)
}

/// Multiply-accumulate counts for the complexity model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopsEstimate {
    pub global_head: u64,
    pub sparse_head: u64,
    pub vanilla: u64,
}

/// Complexity model: `m c1²` for the global head when `m > c1` (and `m² c1`
/// otherwise), `(m²/b) c2` for the sparse head, `m² c` for the vanilla
/// mechanism.
pub fn flops_estimate(m: usize, cfg: &HeadSplitConfig) -> FlopsEstimate {
    let (m64, c1, c2, b) = (m as u64, cfg.c1 as u64, cfg.c2 as u64, cfg.b as u64);
    let global_head = if m64 > c1 {
        m64 * c1 * c1
    } else {
        m64 * m64 * c1
    };
    let sparse_head = m64 * m64 / b * c2;
    let vanilla = m64 * m64 * (c1 + c2);
    FlopsEstimate {
        global_head,
        sparse_head,
        vanilla,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionProblem;

    fn seeded_problem(m: usize, c: usize, seed: u64) -> AttentionProblem {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            let data = (0..m * c).map(|_| rng.gen_range(-0.5..0.5)).collect();
            DenseMatrix::from_vec(m, c, data).unwrap()
        };
        AttentionProblem::new(draw(), draw(), draw()).unwrap()
    }

    #[test]
    fn pair_ratio_single_channel_is_tight() {
        for (q, k) in [(0.3, -0.2), (-0.5, -0.5), (0.45, 0.1)] {
            let (lower, upper, ratio) = pair_ratio_bounds(&[q], &[k]).unwrap();
            assert!((lower - ratio).abs() < 1e-12 * ratio);
            assert!((upper - ratio).abs() < 1e-12 * ratio);
            let direct = (q + k - q * k).exp();
            assert!((ratio - direct).abs() < 1e-12 * direct);
        }
    }

    #[test]
    fn pair_ratio_zero_vectors_hit_equality_at_c1() {
        for c1 in [1, 2, 4, 8] {
            let z = vec![0.0; c1];
            let (lower, upper, ratio) = pair_ratio_bounds(&z, &z).unwrap();
            assert!((ratio - c1 as f64).abs() < 1e-12);
            assert!((lower - c1 as f64).abs() < 1e-12);
            assert!((upper - c1 as f64).abs() < 1e-12);
            let (d_max, d_min) = pair_ratio_stats(&z, &z).unwrap();
            assert!((d_max - 0.5f64.exp()).abs() < 1e-15);
            assert_eq!(d_max, d_min);
        }
    }

    #[test]
    fn pair_ratio_sandwich_holds_on_seeded_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4242);
        for _ in 0..1000 {
            let c1 = *[2usize, 4, 8].get(rng.gen_range(0..3)).unwrap();
            let q: Vec<f64> = (0..c1).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..c1).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (lower, upper, ratio) = pair_ratio_bounds(&q, &k).unwrap();
            assert!(
                lower <= ratio * (1.0 + 1e-12) && ratio <= upper * (1.0 + 1e-12),
                "sandwich violated: {lower} <= {ratio} <= {upper}"
            );
        }
    }

    #[test]
    fn global_ratio_stats_zero_inputs() {
        let z = DenseMatrix::zeros(3, 2);
        let stats = global_ratio_stats(&z, &z).unwrap();
        assert!((stats.big_m() - 0.5f64.exp()).abs() < 1e-15);
        assert_eq!(stats.big_m(), stats.small_m());
    }

    #[test]
    fn global_ratio_stats_single_row_reduce_to_pair_stats() {
        let q = DenseMatrix::from_vec(1, 3, vec![0.2, -0.4, 0.1]).unwrap();
        let k = DenseMatrix::from_vec(1, 3, vec![-0.3, 0.5, 0.0]).unwrap();
        let stats = global_ratio_stats(&q, &k).unwrap();
        let (d_max, d_min) = pair_ratio_stats(q.row(0), k.row(0)).unwrap();
        assert_eq!(stats.big_m(), d_max);
        assert_eq!(stats.small_m(), d_min);
    }

    #[test]
    fn global_ratio_stats_guard_rejects_large_m() {
        let q = DenseMatrix::zeros(513, 2);
        assert!(matches!(
            global_ratio_stats(&q, &q),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn norm_ratio_sandwich_holds_both_norms() {
        for seed in 0..100u64 {
            let p = seeded_problem(6, 4, 900 + seed);
            let stats = global_ratio_stats(p.q(), p.k()).unwrap();
            let eqq = matmul_transpose_b(
                &elementwise_exp(p.q()).unwrap(),
                &elementwise_exp(p.k()).unwrap(),
            )
            .unwrap();
            let gram = exp_gram(p.q(), p.k()).unwrap();
            for kind in [NormKind::Frobenius, NormKind::Spectral] {
                let r =
                    eval_norm(&eqq, kind).unwrap().value / eval_norm(&gram, kind).unwrap().value;
                let lo = stats.ratio_lower(4);
                let hi = stats.ratio_upper(4);
                assert!(
                    lo <= r * (1.0 + 1e-9) && r <= hi * (1.0 + 1e-9),
                    "sandwich violated at seed {seed} ({kind:?}): {lo} <= {r} <= {hi}"
                );
            }
        }
    }

    #[test]
    fn linearization_bound_zero_tilde_reduces_to_one_term() {
        let p = seeded_problem(5, 4, 17);
        let ztilde = DenseMatrix::zeros(5, 2);
        let r = linearization_bound(p.q(), p.k(), &ztilde, &ztilde, NormKind::Frobenius).unwrap();
        // exp(0) gram is the all-ones matrix, so the ones-deviation term is 0.
        assert_eq!(r.term("term_ones_deviation").unwrap(), 0.0);
        assert!((r.bound_value - r.term("term_linearization").unwrap()).abs() < 1e-12);
        assert!(r.holds());
    }

    #[test]
    fn linearization_bound_degenerate_equality_case() {
        let zq = DenseMatrix::zeros(3, 1);
        let zt = DenseMatrix::zeros(3, 2);
        let r = linearization_bound(&zq, &zq, &zt, &zt, NormKind::Frobenius).unwrap();
        assert!(r.measured_error < 1e-12);
        assert!(r.bound_value < 1e-12);
    }

    #[test]
    fn linearization_bound_holds_across_seeds_and_norms() {
        for seed in 0..50u64 {
            let p = seeded_problem(8, 8, 1700 + seed);
            let q1 = p.q().columns(0, 4).unwrap();
            let k1 = p.k().columns(0, 4).unwrap();
            let q2 = p.q().columns(4, 8).unwrap();
            let k2 = p.k().columns(4, 8).unwrap();
            for kind in [NormKind::Frobenius, NormKind::Spectral] {
                let r = linearization_bound(&q1, &k1, &q2, &k2, kind).unwrap();
                assert!(r.holds(), "violated at seed {seed} ({kind:?}): {r:?}");
            }
        }
    }

    #[test]
    fn total_single_head_components_sum_to_bound() {
        let p = seeded_problem(16, 8, 3);
        let cfg = HeadSplitConfig::new(4, 4, 4).unwrap();
        let r = total_bound_single_head(&p, &cfg, NormKind::Frobenius).unwrap();
        assert!(r.holds());
        let sum = r.term_sum();
        assert!((sum - r.bound_value).abs() <= 1e-9 * r.bound_value.abs());
        // The plain triangle split sits between measured and the bound.
        let tri = r.term("triangle_split_value").unwrap();
        assert!(r.measured_error <= tri * (1.0 + 1e-9));
        assert!(tri <= r.bound_value * (1.0 + 1e-9));
    }

    #[test]
    fn total_single_head_zero_values_zero_bound() {
        let q = seeded_problem(8, 6, 5).q().clone();
        let k = seeded_problem(8, 6, 6).k().clone();
        let p = AttentionProblem::new(q, k, DenseMatrix::zeros(8, 6)).unwrap();
        let cfg = HeadSplitConfig::new(3, 3, 2).unwrap();
        let r = total_bound_single_head(&p, &cfg, NormKind::Frobenius).unwrap();
        assert_eq!(r.measured_error, 0.0);
        assert_eq!(r.bound_value, 0.0);
        assert!(r.holds());
    }

    #[test]
    fn double_head_mask_term_vanishes_at_single_block() {
        let p = seeded_problem(8, 4, 7);
        let cfg = HeadSplitConfig::new(2, 2, 1).unwrap();
        let r = total_bound_double_head(&p, &cfg, NormKind::Frobenius).unwrap();
        assert_eq!(r.term("norm_mask_minus_ones").unwrap(), 0.0);
        assert_eq!(r.term("term_sparse").unwrap(), 0.0);
        assert!(r.holds());
    }

    #[test]
    fn double_head_holds_and_is_tighter_than_single_target() {
        for seed in 0..50u64 {
            let p = seeded_problem(16, 8, 2500 + seed);
            let cfg = HeadSplitConfig::new(4, 4, 4).unwrap();
            for kind in [NormKind::Frobenius, NormKind::Spectral] {
                let r = total_bound_double_head(&p, &cfg, kind).unwrap();
                assert!(r.holds(), "violated at seed {seed} ({kind:?})");
                let single = r.term("single_target_bound").unwrap();
                assert!(
                    r.bound_value <= single * (1.0 + 1e-9),
                    "double-head bound {} not tighter than single-target {} at seed {seed}",
                    r.bound_value,
                    single
                );
            }
        }
    }

    #[test]
    fn effatt_bound_zero_inputs_exact() {
        let z = DenseMatrix::zeros(4, 2);
        let p = AttentionProblem::new(z.clone(), z.clone(), z).unwrap();
        let cfg = HeadSplitConfig::new(1, 1, 2).unwrap();
        let r = effatt_decomposition_bound(&p, &cfg, NormKind::Frobenius).unwrap();
        assert!(r.measured_error < 1e-12);
        assert!(r.bound_value < 1e-12);
    }

    #[test]
    fn local_bound_edges() {
        let p = seeded_problem(8, 4, 9);
        let cfg_one = HeadSplitConfig::new(2, 2, 1).unwrap();
        let r = local_decomposition_bound(&p, &cfg_one, NormKind::Frobenius).unwrap();
        assert_eq!(r.measured_error, 0.0);
        assert_eq!(r.bound_value, 0.0);
        assert!(r.note.as_deref().unwrap().contains("surrogate"));

        // b = m: measured equals the off-diagonal mass of the two grams.
        let cfg_m = HeadSplitConfig::new(2, 2, 8).unwrap();
        let r = local_decomposition_bound(&p, &cfg_m, NormKind::Frobenius).unwrap();
        let pieces = split_pieces(&p, &cfg_m).unwrap();
        let mut acc = 0.0;
        for (gram, _) in [(&pieces.gram_bar, 0), (&pieces.gram_tilde, 1)] {
            for i in 0..8 {
                for j in 0..8 {
                    if i != j {
                        acc += gram.get(i, j) * gram.get(i, j);
                    }
                }
            }
        }
        assert!((r.measured_error - acc.sqrt()).abs() < 1e-12 * acc.sqrt());
        assert!(r.holds());
    }

    #[test]
    fn relative_error_basics() {
        let a = seeded_problem(5, 3, 10).q().clone();
        assert_eq!(relative_error(&a, &a, NormKind::Frobenius).unwrap(), 0.0);
        let doubled = a.scale(2.0).unwrap();
        let r = relative_error(&a, &doubled, NormKind::Frobenius).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let z = DenseMatrix::zeros(5, 3);
        assert!(matches!(
            relative_error(&z, &a, NormKind::Frobenius),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn relative_error_matches_hand_composed_ratio() {
        let a = seeded_problem(6, 4, 11).q().clone();
        let b = seeded_problem(6, 4, 12).q().clone();
        for kind in [NormKind::Frobenius, NormKind::Spectral] {
            let r = relative_error(&a, &b, kind).unwrap();
            let num = eval_norm(&a.sub(&b).unwrap(), kind).unwrap().value;
            let den = eval_norm(&a, kind).unwrap().value;
            assert!((r - num / den).abs() < 1e-12 * (num / den));
        }
    }

    #[test]
    fn flops_model_hand_checked() {
        let cfg = HeadSplitConfig::new(32, 32, 16).unwrap();
        let f = flops_estimate(1024, &cfg);
        assert_eq!(f.global_head, 1_048_576);
        assert_eq!(f.sparse_head, 2_097_152);
        assert_eq!(f.vanilla, 67_108_864);

        // Branch switch at m <= c1.
        let cfg = HeadSplitConfig::new(64, 8, 1).unwrap();
        let f = flops_estimate(32, &cfg);
        assert_eq!(f.global_head, 32 * 32 * 64);
        // At m == c1 the two formulas coincide.
        let f = flops_estimate(64, &cfg);
        assert_eq!(f.global_head, 64 * 64 * 64);

        let cfg = HeadSplitConfig::new(4, 12, 1).unwrap();
        let f = flops_estimate(128, &cfg);
        assert_eq!(f.sparse_head, 128 * 128 * 12);
        assert_eq!(f.vanilla, 128 * 128 * 16);
    }

    #[test]
    fn kv_text_is_flat_and_ordered() {
        let p = seeded_problem(8, 4, 13);
        let cfg = HeadSplitConfig::new(2, 2, 2).unwrap();
        let r = total_bound_single_head(&p, &cfg, NormKind::Spectral).unwrap();
        let text = r.to_kv_text();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "op=total_bound_single_head");
        assert_eq!(lines.next().unwrap(), "norm=spectral");
        assert!(text.lines().all(|l| l.contains('=')));
        assert!(text.contains("holds=true"));
    }
}
