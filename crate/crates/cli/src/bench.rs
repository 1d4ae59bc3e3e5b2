//! Seeded problem generation, the sequence-length scaling sweep, and the
//! log-log slope fit used to verify linear-vs-quadratic runtime growth.
//!
//! Timing is median-of-N wall clock (N >= 5) after two warmups, one record
//! per (mode, length). Timing defaults to a single thread so the asymptotic
//! slope is not polluted by scheduling; multi-thread runs are opt-in and the
//! thread count is not recorded per record, so label such CSVs yourself.
//! The deterministic mode replaces measured nanoseconds with the flop
//! estimate so that end-to-end output bytes are reproducible.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use elfatt_core::attention::vanilla_attention;
use elfatt_core::bounds::{flops_estimate, relative_error};
use elfatt_core::elfatt::{block_sparse_head, elfatt_forward};
use elfatt_core::kernel::{effatt_attention, performer_attention};
use elfatt_core::linalg::probe;
use elfatt_core::{
    AttentionMode, AttentionProblem, DenseMatrix, Error, HeadSplitConfig, NormKind,
    RandomFeatureMap, Result,
};

/// Attention variant selectable in sweeps and the `attn` subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Vanilla,
    Elfatt,
    Effatt,
    Performer,
    Local,
}

impl BenchMode {
    pub fn name(&self) -> &'static str {
        match self {
            BenchMode::Vanilla => "vanilla",
            BenchMode::Elfatt => "elfatt",
            BenchMode::Effatt => "effatt",
            BenchMode::Performer => "performer",
            BenchMode::Local => "local",
        }
    }

    /// True for the variants that must never materialize an `m x m`
    /// intermediate.
    pub fn is_linear(&self) -> bool {
        !matches!(self, BenchMode::Vanilla)
    }

    pub const ALL: [BenchMode; 5] = [
        BenchMode::Vanilla,
        BenchMode::Elfatt,
        BenchMode::Effatt,
        BenchMode::Performer,
        BenchMode::Local,
    ];
}

impl std::str::FromStr for BenchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BenchMode::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config {
                reason: format!("unknown mode `{s}`"),
            })
    }
}

/// How block counts follow the sequence length across a sweep.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSpec {
    /// Fixed tokens per block; the block count grows with `m`.
    FixedLen(usize),
    /// Fixed number of blocks; the block length grows with `m`.
    FixedCount(usize),
}

impl BlockSpec {
    pub fn blocks_for(&self, m: usize) -> Result<usize> {
        let b = match *self {
            BlockSpec::FixedLen(len) => {
                if len == 0 || m % len != 0 {
                    return Err(Error::Config {
                        reason: format!("block length {len} does not divide sequence length {m}"),
                    });
                }
                m / len
            }
            BlockSpec::FixedCount(b) => b,
        };
        if b == 0 || m % b != 0 {
            return Err(Error::Divisibility { m, blocks: b });
        }
        Ok(b)
    }
}

fn default_threads() -> usize {
    1
}
fn default_repeats() -> usize {
    5
}
fn default_warmups() -> usize {
    2
}
fn default_vanilla_cap() -> usize {
    4096
}
fn default_seed() -> u64 {
    42
}
fn default_magnitude() -> f64 {
    0.5
}
fn default_normalized() -> bool {
    true
}

/// One scaling sweep: which lengths, which modes, and how to time them.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub lengths: Vec<usize>,
    pub block: BlockSpec,
    pub c: usize,
    pub modes: Vec<BenchMode>,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_warmups")]
    pub warmups: usize,
    #[serde(default = "default_vanilla_cap")]
    pub vanilla_cap: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    #[serde(default = "default_normalized")]
    pub normalized: bool,
    #[serde(default)]
    pub deterministic: bool,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.len() < 4 {
            return Err(Error::Insufficient {
                needed: 4,
                got: self.lengths.len(),
            });
        }
        if !self.lengths.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config {
                reason: "lengths must be strictly ascending".into(),
            });
        }
        if self.modes.is_empty() {
            return Err(Error::Config {
                reason: "at least one mode required".into(),
            });
        }
        if self.c == 0 {
            return Err(Error::Config {
                reason: "channel width must be positive".into(),
            });
        }
        if self.repeats < 5 {
            return Err(Error::Config {
                reason: "timing needs at least 5 repeats".into(),
            });
        }
        if self.threads == 0 {
            return Err(Error::Config {
                reason: "threads must be at least 1".into(),
            });
        }
        if !(self.magnitude > 0.0) {
            return Err(Error::Config {
                reason: "magnitude must be positive".into(),
            });
        }
        // Surface divisibility problems before any timing happens.
        for &m in &self.lengths {
            self.block.blocks_for(m)?;
        }
        Ok(())
    }

    fn mode_for_width(&self) -> AttentionMode {
        if self.normalized {
            AttentionMode::normalized_for_width(self.c)
        } else {
            AttentionMode::RawExp
        }
    }
}

/// One timed point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub mode: BenchMode,
    pub m: usize,
    pub c: usize,
    pub c1: usize,
    pub c2: usize,
    pub b: usize,
    pub repeats: usize,
    pub runtime_ns: u64,
    pub flops_est: u64,
    pub rel_err_vs_vanilla: Option<f64>,
    pub seed: u64,
}

/// Seeded uniform problem: entries i.i.d. in `[-magnitude, magnitude)`;
/// identical seeds reproduce the problem bit-for-bit.
pub fn generate_problem(m: usize, c: usize, seed: u64, magnitude: f64) -> Result<AttentionProblem> {
    if !(magnitude > 0.0) {
        return Err(Error::Config {
            reason: format!("magnitude must be positive, got {magnitude}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || {
        let data = (0..m * c)
            .map(|_| rng.gen_range(-magnitude..magnitude))
            .collect();
        DenseMatrix::from_vec(m, c, data)
    };
    AttentionProblem::new(draw()?, draw()?, draw()?)
}

fn record_seed(plan_seed: u64, mode: BenchMode, m: usize) -> u64 {
    let mode_ix = BenchMode::ALL.iter().position(|x| *x == mode).unwrap() as u64;
    plan_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(mode_ix << 48)
        .wrapping_add(m as u64)
}

/// Per-mode multiply-accumulate estimate used for the CSV `flops_est`
/// column and as the synthetic runtime in deterministic mode.
fn mode_flops(mode: BenchMode, m: usize, c: usize, c1: usize, c2: usize, b: usize) -> u64 {
    match mode {
        BenchMode::Vanilla => flops_estimate(m, &HeadSplitConfig { c1: c, c2: 0, b: 1 }).vanilla,
        BenchMode::Elfatt => {
            let f = flops_estimate(m, &HeadSplitConfig { c1, c2, b });
            f.global_head + f.sparse_head
        }
        BenchMode::Effatt => flops_estimate(m, &HeadSplitConfig { c1: c, c2: 0, b: 1 }).global_head,
        BenchMode::Performer => {
            let r = RandomFeatureMap::default_feature_count(c) as u64;
            2 * (m as u64) * r * (c as u64)
        }
        BenchMode::Local => flops_estimate(m, &HeadSplitConfig { c1: 0, c2: c, b }).sparse_head,
    }
}

/// Largest single intermediate (in elements) each linear variant may
/// allocate: the value-projected accumulators and per-block score matrices.
/// Strictly below `m x m` whenever the block structure is genuinely sparse
/// (`b > 1`) and the feature/channel widths are below `m`.
fn linear_mode_alloc_cap(mode: BenchMode, m: usize, c: usize, b: usize) -> usize {
    let block = (m / b) * (m / b);
    let r = RandomFeatureMap::default_feature_count(c);
    match mode {
        BenchMode::Vanilla => usize::MAX,
        BenchMode::Effatt => (m * c).max(c * c),
        BenchMode::Performer => (m * c).max(r * c).max(c * c),
        BenchMode::Elfatt => (m * c).max(block).max(c * c),
        BenchMode::Local => (m * c).max(block),
    }
}

struct PreparedRun {
    mode: BenchMode,
    b: usize,
    problem: AttentionProblem,
    cfg: HeadSplitConfig,
    feature_map: Option<RandomFeatureMap>,
}

impl PreparedRun {
    fn forward(&self, mode: AttentionMode) -> Result<DenseMatrix> {
        match self.mode {
            BenchMode::Vanilla => vanilla_attention(&self.problem, mode),
            BenchMode::Elfatt => elfatt_forward(&self.problem, &self.cfg, mode, None),
            BenchMode::Effatt => effatt_attention(&self.problem, mode),
            BenchMode::Performer => {
                performer_attention(&self.problem, self.feature_map.as_ref().unwrap(), mode)
            }
            BenchMode::Local => block_sparse_head(&self.problem, self.b, mode),
        }
    }
}

/// Run a sweep plan: per (mode, length), two warmups then `repeats` timed
/// forwards, reporting the median. Vanilla is skipped above `vanilla_cap`.
/// The linear modes are checked against the allocation probe: materializing
/// an `m x m` intermediate fails the sweep.
pub fn run_sweep(plan: &SweepPlan) -> Result<Vec<BenchRecord>> {
    plan.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.threads)
        .build()
        .map_err(|e| Error::Config {
            reason: format!("thread pool: {e}"),
        })?;
    pool.install(|| run_sweep_in_pool(plan))
}

fn run_sweep_in_pool(plan: &SweepPlan) -> Result<Vec<BenchRecord>> {
    let attn_mode = plan.mode_for_width();
    let mut records = Vec::new();
    for &mode in &plan.modes {
        for &m in &plan.lengths {
            if mode == BenchMode::Vanilla && m > plan.vanilla_cap {
                continue;
            }
            let b = plan.block.blocks_for(m)?;
            let (c1, c2, b) = match mode {
                BenchMode::Vanilla | BenchMode::Effatt | BenchMode::Performer => (plan.c, 0, 1),
                BenchMode::Elfatt => (plan.c / 2, plan.c - plan.c / 2, b),
                BenchMode::Local => (0, plan.c, b),
            };
            let seed = record_seed(plan.seed, mode, m);
            let run = PreparedRun {
                mode,
                b,
                problem: generate_problem(m, plan.c, seed, plan.magnitude)?,
                cfg: HeadSplitConfig {
                    c1: plan.c / 2,
                    c2: plan.c - plan.c / 2,
                    b,
                },
                feature_map: match mode {
                    BenchMode::Performer => Some(RandomFeatureMap::sample_default(plan.c, seed)?),
                    _ => None,
                },
            };
            let flops = mode_flops(mode, m, plan.c, run.cfg.c1, run.cfg.c2, b);

            probe::reset();
            let (runtime_ns, output) = if plan.deterministic {
                (flops.max(1), run.forward(attn_mode)?)
            } else {
                for _ in 0..plan.warmups {
                    run.forward(attn_mode)?;
                }
                let mut samples = Vec::with_capacity(plan.repeats);
                let mut last = None;
                for _ in 0..plan.repeats {
                    let t0 = Instant::now();
                    let out = run.forward(attn_mode)?;
                    samples.push(t0.elapsed().as_nanos() as u64);
                    last = Some(out);
                }
                samples.sort_unstable();
                (samples[samples.len() / 2].max(1), last.unwrap())
            };
            if mode.is_linear() {
                let peak = probe::peak_elems();
                let cap = linear_mode_alloc_cap(mode, m, plan.c, b);
                if peak > cap {
                    return Err(Error::Config {
                        reason: format!(
                            "allocation probe: {} materialized {} elements at m={m}, \
                             expected at most {cap}",
                            mode.name(),
                            peak
                        ),
                    });
                }
            }
            let rel_err = if mode != BenchMode::Vanilla && m <= plan.vanilla_cap {
                let reference = vanilla_attention(&run.problem, attn_mode)?;
                Some(relative_error(&reference, &output, NormKind::Frobenius)?)
            } else {
                None
            };
            records.push(BenchRecord {
                mode,
                m,
                c: plan.c,
                c1,
                c2,
                b,
                repeats: plan.repeats,
                runtime_ns,
                flops_est: flops,
                rel_err_vs_vanilla: rel_err,
                seed,
            });
        }
    }
    Ok(records)
}

/// Ordinary least-squares slope of `ln(runtime)` against `ln(m)` for one
/// mode's records. Needs at least 4 distinct lengths.
pub fn fit_loglog_slope(records: &[BenchRecord]) -> Result<f64> {
    if let Some(first) = records.first() {
        if records.iter().any(|r| r.mode != first.mode) {
            return Err(Error::Config {
                reason: "slope fit needs records of a single mode".into(),
            });
        }
    }
    let mut lengths: Vec<usize> = records.iter().map(|r| r.m).collect();
    lengths.sort_unstable();
    lengths.dedup();
    if lengths.len() < 4 {
        return Err(Error::Insufficient {
            needed: 4,
            got: lengths.len(),
        });
    }
    let points: Vec<(f64, f64)> = records
        .iter()
        .map(|r| ((r.m as f64).ln(), (r.runtime_ns as f64).ln()))
        .collect();
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|(x, _)| x).sum();
    let sy: f64 = points.iter().map(|(_, y)| y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(mode: BenchMode, ms: &[usize], runtime: impl Fn(f64) -> f64) -> Vec<BenchRecord> {
        ms.iter()
            .map(|&m| BenchRecord {
                mode,
                m,
                c: 8,
                c1: 4,
                c2: 4,
                b: 1,
                repeats: 5,
                runtime_ns: runtime(m as f64).round() as u64,
                flops_est: 1,
                rel_err_vs_vanilla: None,
                seed: 0,
            })
            .collect()
    }

    #[test]
    fn slope_of_linear_and_quadratic_runtimes() {
        let ms = [1usize << 10, 1 << 12, 1 << 14, 1 << 16, 1 << 18];
        let lin = synthetic(BenchMode::Elfatt, &ms, |m| m);
        assert!((fit_loglog_slope(&lin).unwrap() - 1.0).abs() < 1e-9);
        let quad = synthetic(BenchMode::Vanilla, &ms, |m| m * m);
        assert!((fit_loglog_slope(&quad).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn slope_of_power_law() {
        // Use lengths large enough that integer rounding of the synthetic
        // runtimes is negligible.
        let ms = [1usize << 16, 1 << 17, 1 << 18, 1 << 19, 1 << 20];
        let pow = synthetic(BenchMode::Effatt, &ms, |m| 7.0 * m.powf(1.3));
        assert!((fit_loglog_slope(&pow).unwrap() - 1.3).abs() < 1e-6);
    }

    #[test]
    fn slope_needs_four_distinct_lengths() {
        let few = synthetic(BenchMode::Elfatt, &[8, 16, 32], |m| m);
        assert!(matches!(
            fit_loglog_slope(&few),
            Err(Error::Insufficient { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn slope_rejects_mixed_modes() {
        let mut mixed = synthetic(BenchMode::Elfatt, &[8, 16, 32, 64], |m| m);
        mixed.extend(synthetic(BenchMode::Vanilla, &[128], |m| m));
        assert!(matches!(
            fit_loglog_slope(&mixed),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn generated_problems_are_seed_deterministic() {
        let a = generate_problem(8, 4, 123, 0.5).unwrap();
        let b = generate_problem(8, 4, 123, 0.5).unwrap();
        assert_eq!(a.q(), b.q());
        assert_eq!(a.k(), b.k());
        assert_eq!(a.v(), b.v());
        let c = generate_problem(8, 4, 124, 0.5).unwrap();
        assert_ne!(a.q(), c.q());
        assert!(a.q().data().iter().all(|x| x.abs() <= 0.5));
    }

    #[test]
    fn plan_validation_catches_problems() {
        let mut plan = SweepPlan {
            lengths: vec![64, 128, 192, 256],
            block: BlockSpec::FixedLen(64),
            c: 8,
            modes: vec![BenchMode::Elfatt],
            threads: 1,
            repeats: 5,
            warmups: 2,
            vanilla_cap: 4096,
            seed: 1,
            magnitude: 0.5,
            normalized: true,
            deterministic: true,
        };
        plan.validate().unwrap();
        plan.lengths = vec![64, 128, 200, 256];
        assert!(plan.validate().is_err(), "200 not divisible by 64");
        plan.lengths = vec![64, 128, 192];
        assert!(plan.validate().is_err(), "too few lengths");
        plan.lengths = vec![64, 128, 192, 256];
        plan.repeats = 3;
        assert!(plan.validate().is_err(), "too few repeats");
    }

    #[test]
    fn deterministic_sweep_is_reproducible_and_linear_modes_avoid_m_squared() {
        let plan = SweepPlan {
            lengths: vec![16, 32, 48, 64],
            block: BlockSpec::FixedLen(16),
            c: 8,
            modes: vec![BenchMode::Elfatt, BenchMode::Effatt, BenchMode::Vanilla],
            threads: 1,
            repeats: 5,
            warmups: 0,
            vanilla_cap: 4096,
            seed: 7,
            magnitude: 0.5,
            normalized: true,
            deterministic: true,
        };
        let a = run_sweep(&plan).unwrap();
        let b = run_sweep(&plan).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        for r in &a {
            if r.mode != BenchMode::Vanilla {
                let err = r.rel_err_vs_vanilla.unwrap();
                assert!(err.is_finite() && err >= 0.0);
            }
        }
    }
}
