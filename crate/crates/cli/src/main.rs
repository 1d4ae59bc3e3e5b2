//! Command-line driver for the attention kernels: run a variant on matrix
//! files, sweep sequence lengths and fit scaling slopes, emit bound reports,
//! run the invariant suites, and generate seeded problem files.

use elfatt_cli::{bench, check, emit, report};

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use elfatt_core::attention::vanilla_attention;
use elfatt_core::bounds::{
    effatt_decomposition_bound, flops_estimate, linearization_bound, local_decomposition_bound,
    relative_error, total_bound_double_head, total_bound_single_head,
};
use elfatt_core::elfatt::{block_sparse_head, elfatt_forward_with};
use elfatt_core::kernel::{effatt_attention, performer_attention};
use elfatt_core::linalg::{elementwise_exp, frobenius_norm, hadamard, matmul_transpose_b};
use elfatt_core::matio::{load_matrix, save_matrix};
use elfatt_core::{
    AttentionMode, AttentionProblem, BlockMask, DepthwiseKernel, Error, HeadSplitConfig,
    LepePlacement, NormKind, RandomFeatureMap, Result,
};

use bench::{BenchMode, BlockSpec, SweepPlan};

/// Default seed when neither `--seed` nor `ELFATT_SEED` is given.
const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "elfatt",
    version,
    about = "Hybrid linear/block-sparse attention: runs, scaling benchmarks, bound reports"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one attention variant on matrix files (ELF1 or CSV by extension).
    Attn(AttnArgs),
    /// Time attention variants across sequence lengths and fit slopes.
    Bench(BenchArgs),
    /// Evaluate the approximation error bounds on one problem instance.
    Bounds(BoundsArgs),
    /// Run the full invariant suites; exits nonzero on any violation.
    Check,
    /// Write a seeded random problem to matrix files.
    Gen(GenArgs),
}

#[derive(Args)]
struct AttnArgs {
    /// Query matrix file.
    #[arg(long)]
    q: PathBuf,
    /// Key matrix file.
    #[arg(long)]
    k: PathBuf,
    /// Value matrix file.
    #[arg(long)]
    v: PathBuf,
    /// Variant: vanilla, elfatt, effatt, performer, or local.
    #[arg(long, default_value = "vanilla")]
    mode: String,
    /// Channels for the global linear head (default: half).
    #[arg(long)]
    c1: Option<usize>,
    /// Channels for the block-sparse head (default: the rest).
    #[arg(long)]
    c2: Option<usize>,
    /// Block count for the sparse head.
    #[arg(long)]
    blocks: Option<usize>,
    /// Tokens per block (alternative to --blocks; default 64).
    #[arg(long)]
    block_len: Option<usize>,
    /// Softmax-normalize instead of the raw exponential form.
    #[arg(long)]
    normalized: bool,
    /// Score scale in normalized mode (default 1/sqrt(c)).
    #[arg(long)]
    scale: Option<f64>,
    /// Add the depthwise positional convolution (seeded 3x3 stencils).
    #[arg(long)]
    lepe: bool,
    /// Apply the sparse-head convolution over the full grid instead of
    /// per block.
    #[arg(long)]
    lepe_full_grid: bool,
    /// Token grid as HxW (required with --lepe).
    #[arg(long)]
    grid: Option<String>,
    /// Random feature count for performer (default ceil(c ln c)).
    #[arg(long)]
    features: Option<usize>,
    /// Seed for feature maps and stencils.
    #[arg(long)]
    seed: Option<u64>,
    /// Output matrix file; prints a summary when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated ascending sequence lengths.
    #[arg(long, value_delimiter = ',', default_values_t = vec![256usize, 512, 1024, 2048, 4096])]
    lengths: Vec<usize>,
    /// Tokens per block (block count then scales with m).
    #[arg(long, default_value_t = 64)]
    block_len: usize,
    /// Fixed block count instead of a fixed block length.
    #[arg(long, conflicts_with = "block_len")]
    blocks: Option<usize>,
    /// Channel width.
    #[arg(long, default_value_t = 64)]
    c: usize,
    /// Comma-separated variants to time.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["elfatt".to_string(), "vanilla".to_string()])]
    modes: Vec<String>,
    /// Threads for the forward passes (1 for fair slope measurement).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Timed repeats per point (median reported).
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Warmup runs per point.
    #[arg(long, default_value_t = 2)]
    warmups: usize,
    /// Skip the vanilla variant above this length.
    #[arg(long, default_value_t = 4096)]
    vanilla_cap: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Entry magnitude for generated problems.
    #[arg(long, default_value_t = 0.5)]
    magnitude: f64,
    /// Use the raw exponential form instead of softmax normalization.
    #[arg(long)]
    raw: bool,
    /// Write the sweep records as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write a log-log scaling plot as SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Replace wall-clock timing with the flop model so output bytes are
    /// reproducible.
    #[arg(long)]
    deterministic: bool,
    /// Load the sweep plan from a JSON file instead of flags.
    #[arg(long, conflicts_with_all = ["lengths", "blocks", "c", "modes"])]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    /// Sequence length of the seeded instance.
    #[arg(long, default_value_t = 16)]
    m: usize,
    /// Global-head channels.
    #[arg(long, default_value_t = 2)]
    c1: usize,
    /// Sparse-head channels.
    #[arg(long, default_value_t = 2)]
    c2: usize,
    /// Block count.
    #[arg(long, default_value_t = 4)]
    blocks: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Entry magnitude for the seeded instance.
    #[arg(long, default_value_t = 0.5)]
    magnitude: f64,
    /// Norm: frobenius or spectral.
    #[arg(long, default_value = "frobenius")]
    norm: String,
    /// Read the instance from matrix files instead of seeding (all three).
    #[arg(long, requires_all = ["k", "v"])]
    q: Option<PathBuf>,
    #[arg(long, requires_all = ["q", "v"])]
    k: Option<PathBuf>,
    #[arg(long, requires_all = ["q", "k"])]
    v: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit flat key=value text instead of JSON.
    #[arg(long)]
    kv: bool,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    c: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.5)]
    magnitude: f64,
    /// Files are written as <prefix>_q.<ext>, _k, _v.
    #[arg(long)]
    out_prefix: String,
    /// elf1 or csv.
    #[arg(long, default_value = "elf1")]
    format: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::Shape { .. }
        | Error::Divisibility { .. }
        | Error::Insufficient { .. }
        | Error::Format { .. } => 2,
        _ => 1,
    }
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var("ELFATT_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(DEFAULT_SEED)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Attn(args) => run_attn(args).map(|()| ExitCode::SUCCESS),
        Cmd::Bench(args) => run_bench(args).map(|()| ExitCode::SUCCESS),
        Cmd::Bounds(args) => run_bounds(args).map(|()| ExitCode::SUCCESS),
        Cmd::Check => {
            let failures = check::run_all();
            if failures.is_empty() {
                println!("all checks passed");
                Ok(ExitCode::SUCCESS)
            } else {
                println!(
                    "{} check(s) failed: {}",
                    failures.len(),
                    failures.join(", ")
                );
                Ok(ExitCode::from(1))
            }
        }
        Cmd::Gen(args) => run_gen(args).map(|()| ExitCode::SUCCESS),
    }
}

fn parse_grid(raw: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = raw.split(['x', 'X']).collect();
    if parts.len() == 2 {
        if let (Ok(h), Ok(w)) = (parts[0].parse(), parts[1].parse()) {
            return Ok((h, w));
        }
    }
    Err(Error::Config {
        reason: format!("grid must look like HxW, got `{raw}`"),
    })
}

fn blocks_from_flags(m: usize, blocks: Option<usize>, block_len: Option<usize>) -> Result<usize> {
    let b = match (blocks, block_len) {
        (Some(b), _) => b,
        (None, Some(len)) => {
            if len == 0 || m % len != 0 {
                return Err(Error::Config {
                    reason: format!("block length {len} does not divide sequence length {m}"),
                });
            }
            m / len
        }
        (None, None) => {
            if m % 64 == 0 {
                m / 64
            } else {
                return Err(Error::Config {
                    reason: format!(
                        "sequence length {m} is not divisible by the default block length 64; \
                         pass --blocks or --block-len"
                    ),
                });
            }
        }
    };
    if b == 0 || m % b != 0 {
        return Err(Error::Divisibility { m, blocks: b });
    }
    Ok(b)
}

fn run_attn(args: AttnArgs) -> Result<()> {
    let q = load_matrix(&args.q)?;
    let k = load_matrix(&args.k)?;
    let v = load_matrix(&args.v)?;
    let mut problem = AttentionProblem::new(q, k, v)?;
    if let Some(raw) = &args.grid {
        let (h, w) = parse_grid(raw)?;
        problem = problem.with_grid(h, w)?;
    }
    let (m, c) = (problem.m(), problem.c());
    let mode: BenchMode = args.mode.parse()?;
    let seed = resolve_seed(args.seed);
    let attn_mode = if args.normalized {
        match args.scale {
            Some(s) => AttentionMode::normalized(s)?,
            None => AttentionMode::normalized_for_width(c),
        }
    } else {
        AttentionMode::RawExp
    };

    let out = match mode {
        BenchMode::Vanilla => vanilla_attention(&problem, attn_mode)?,
        BenchMode::Effatt => effatt_attention(&problem, attn_mode)?,
        BenchMode::Performer => {
            let r = args
                .features
                .unwrap_or_else(|| RandomFeatureMap::default_feature_count(c));
            let fm = RandomFeatureMap::sample(c, r, seed)?;
            performer_attention(&problem, &fm, attn_mode)?
        }
        BenchMode::Local => {
            let b = blocks_from_flags(m, args.blocks, args.block_len)?;
            block_sparse_head(&problem, b, attn_mode)?
        }
        BenchMode::Elfatt => {
            let c1 = args.c1.unwrap_or(c / 2);
            let c2 = args.c2.unwrap_or(c.saturating_sub(c1));
            let b = blocks_from_flags(m, args.blocks, args.block_len)?;
            let cfg = HeadSplitConfig::new(c1, c2, b)?;
            cfg.validate(m, c)?;
            let kernel = if args.lepe {
                Some(DepthwiseKernel::seeded(c, seed))
            } else {
                None
            };
            let placement = if args.lepe_full_grid {
                LepePlacement::FullGrid
            } else {
                LepePlacement::PerBlock
            };
            elfatt_forward_with(&problem, &cfg, attn_mode, kernel.as_ref(), placement)?
        }
    };

    match &args.out {
        Some(path) => {
            save_matrix(&out, path)?;
            println!(
                "{} wrote {}x{} matrix to {}",
                mode.name(),
                out.rows(),
                out.cols(),
                path.display()
            );
        }
        None => {
            println!(
                "{} output {}x{} frobenius_norm={}",
                mode.name(),
                out.rows(),
                out.cols(),
                frobenius_norm(&out)
            );
        }
    }
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let plan = match &args.plan {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<SweepPlan>(&text).map_err(|e| Error::Config {
                reason: format!("bad plan file: {e}"),
            })?
        }
        None => {
            let modes: Result<Vec<BenchMode>> = args.modes.iter().map(|s| s.parse()).collect();
            SweepPlan {
                lengths: args.lengths.clone(),
                block: match args.blocks {
                    Some(b) => BlockSpec::FixedCount(b),
                    None => BlockSpec::FixedLen(args.block_len),
                },
                c: args.c,
                modes: modes?,
                threads: args.threads,
                repeats: args.repeats,
                warmups: args.warmups,
                vanilla_cap: args.vanilla_cap,
                seed: resolve_seed(args.seed),
                magnitude: args.magnitude,
                normalized: !args.raw,
                deterministic: args.deterministic,
            }
        }
    };
    let records = bench::run_sweep(&plan)?;
    for &mode in &plan.modes {
        let series: Vec<_> = records.iter().filter(|r| r.mode == mode).cloned().collect();
        match bench::fit_loglog_slope(&series) {
            Ok(slope) => println!(
                "{}: {} points, log-log slope {:.4}",
                mode.name(),
                series.len(),
                slope
            ),
            Err(_) => println!(
                "{}: {} points (too few for a slope)",
                mode.name(),
                series.len()
            ),
        }
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, emit::emit_csv(&records))?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.svg {
        std::fs::write(path, emit::emit_scaling_plot(&records)?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run_bounds(args: BoundsArgs) -> Result<()> {
    let kind: NormKind = args.norm.parse()?;
    let seed = resolve_seed(args.seed);
    let (problem, source) = match (&args.q, &args.k, &args.v) {
        (Some(q), Some(k), Some(v)) => (
            AttentionProblem::new(load_matrix(q)?, load_matrix(k)?, load_matrix(v)?)?,
            "files",
        ),
        (None, None, None) => (
            bench::generate_problem(args.m, args.c1 + args.c2, seed, args.magnitude)?,
            "seeded",
        ),
        _ => {
            return Err(Error::Config {
                reason: "pass all of --q/--k/--v or none".into(),
            })
        }
    };
    let (m, c) = (problem.m(), problem.c());
    if args.c1 + args.c2 != c {
        return Err(Error::Config {
            reason: format!(
                "--c1 {} + --c2 {} must equal the channel width {c}",
                args.c1, args.c2
            ),
        });
    }
    let cfg = HeadSplitConfig::new(args.c1, args.c2, args.blocks)?;
    cfg.validate(m, c)?;

    let mut root = report::JsonObject::new();
    root.push_u64("m", m as u64)
        .push_u64("c", c as u64)
        .push_u64("c1", args.c1 as u64)
        .push_u64("c2", args.c2 as u64)
        .push_u64("b", args.blocks as u64)
        .push_u64("seed", seed)
        .push_f64("magnitude", args.magnitude)
        .push_str("norm", kind.name())
        .push_str("source", source);
    let flops = flops_estimate(m, &cfg);
    root.push_u64("flops_global_head", flops.global_head)
        .push_u64("flops_sparse_head", flops.sparse_head)
        .push_u64("flops_vanilla", flops.vanilla);

    let qbar = problem.q().columns(0, args.c1)?;
    let kbar = problem.k().columns(0, args.c1)?;
    let qtilde = problem.q().columns(args.c1, c)?;
    let ktilde = problem.k().columns(args.c1, c)?;

    let reports = [
        linearization_bound(&qbar, &kbar, &qtilde, &ktilde, kind)?,
        total_bound_single_head(&problem, &cfg, kind)?,
        total_bound_double_head(&problem, &cfg, kind)?,
        effatt_decomposition_bound(&problem, &cfg, kind)?,
        local_decomposition_bound(&problem, &cfg, kind)?,
    ];

    // Head-level relative approximation errors in the requested norm.
    let gram_bar = elementwise_exp(&matmul_transpose_b(&qbar, &kbar)?)?;
    let gram_tilde = elementwise_exp(&matmul_transpose_b(&qtilde, &ktilde)?)?;
    let eqq = matmul_transpose_b(&elementwise_exp(&qbar)?, &elementwise_exp(&kbar)?)?;
    let masked = hadamard(&gram_tilde, &BlockMask::new(m, args.blocks)?.materialize())?;
    let mut rel = report::JsonObject::new();
    rel.push_f64("global_head", relative_error(&gram_bar, &eqq, kind)?)
        .push_f64("sparse_head", relative_error(&gram_tilde, &masked, kind)?);

    if args.kv {
        let mut text = String::new();
        for r in &reports {
            text.push_str(&r.to_kv_text());
            text.push('\n');
        }
        emit_text(&args.out, &text)?;
    } else {
        for r in &reports {
            root.push(r.op, report::JsonValue::Obj(report::report_to_json(r)));
        }
        root.push("relative_error", report::JsonValue::Obj(rel));
        emit_text(&args.out, &root.to_pretty())?;
    }
    Ok(())
}

fn emit_text(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_gen(args: GenArgs) -> Result<()> {
    let ext = match args.format.as_str() {
        "elf1" => "elf1",
        "csv" => "csv",
        other => {
            return Err(Error::Config {
                reason: format!("unknown format `{other}`"),
            });
        }
    };
    let seed = resolve_seed(args.seed);
    let problem = bench::generate_problem(args.m, args.c, seed, args.magnitude)?;
    for (name, matrix) in [("q", problem.q()), ("k", problem.k()), ("v", problem.v())] {
        let path = PathBuf::from(format!("{}_{name}.{ext}", args.out_prefix));
        save_matrix(matrix, Path::new(&path))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
