use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use starm::bench::{bench_svd, bench_ttm, bench_tsvdm1, bench_tsvdm2, summarize};
use starm::codec::{
    detect_kind, read_compressed_file, read_matrix_file, read_tensor_file, write_bench_csv, write_compressed_file,
    write_tensor_file, FileKind,
};
use starm::synth::{gaussian_tensor, generate, SynthSpec};
use starm::tsvdm::{tsvdm_fixed_rank_detailed, tsvdm_tolerance_detailed};
use starm::{
    reconstruct, relative_error, BenchRow, Context, DenseTensor, Error, SvdStrategy, Transform, TransformKind,
    TransformSet, Tsvdm2Strategy, TtmVariant,
};

#[derive(Parser)]
#[command(name = "starm", version, about = "Tensor compression with the star-M t-SVD family")]
struct Cli {
    /// Worker threads used by the library.
    #[arg(long, global = true, env = "STARM_THREADS", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,

    /// TTM variant used for transforms.
    #[arg(long, global = true, default_value = "batched")]
    ttm_variant: TtmVariant,

    /// Slicewise SVD strategy.
    #[arg(long, global = true, default_value = "slices")]
    svd_strategy: SvdStrategy,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the header summary of a raw or compressed file.
    Info { path: PathBuf },
    /// Compress a raw tensor file.
    Compress(CompressArgs),
    /// Reconstruct a compressed file into a raw tensor file.
    Decompress { input: PathBuf, output: PathBuf },
    /// Relative Frobenius error of B against reference A.
    Error { a: PathBuf, b: PathBuf },
    /// Time a kernel and emit CSV rows.
    Bench(BenchArgs),
    /// Write a seeded synthetic tensor.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    Tsvdm1,
    Tsvdm2,
}

#[derive(Args)]
struct CompressArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, default_value = "tsvdm2")]
    method: MethodArg,
    /// Truncation rank for tsvdm1.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    rank: Option<u64>,
    /// Relative error tolerance in (0, 1) for tsvdm2.
    #[arg(long, value_parser = parse_tol)]
    tol: Option<f64>,
    /// identity, dct, data or custom:PATH; a comma list sets one per mode.
    #[arg(long, default_value = "dct")]
    transform: String,
    /// tsvdm2 second-stage strategy.
    #[arg(long, default_value = "memory")]
    strategy: Tsvdm2Strategy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kernel {
    Ttm,
    Svd,
    Tsvdm1,
    Tsvdm2,
}

#[derive(Args)]
struct SourceArgs {
    /// Raw tensor to benchmark; a seeded Gaussian tensor is used otherwise.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Dims of the synthetic tensor.
    #[arg(long, value_delimiter = ',', default_value = "64,64,128")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    kernel: Kernel,
    #[command(flatten)]
    source: SourceArgs,
    /// Thread counts to sweep; defaults to --threads.
    #[arg(long, value_delimiter = ',')]
    thread_list: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    /// TTM variants to compare.
    #[arg(long, value_delimiter = ',', default_value = "batched,loop,parfor")]
    variants: Vec<TtmVariant>,
    /// SVD strategies to compare.
    #[arg(long, value_delimiter = ',', default_value = "slices,svd")]
    strategies: Vec<SvdStrategy>,
    /// tsvdm2 strategies to compare.
    #[arg(long, value_delimiter = ',', default_value = "truncate,compute,memory")]
    tsvdm2_strategies: Vec<Tsvdm2Strategy>,
    /// One-based modes for the TTM kernel; all transformed modes by default.
    #[arg(long, value_delimiter = ',')]
    modes: Vec<usize>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..), default_value_t = 1)]
    rank: u64,
    #[arg(long, value_parser = parse_tol, default_value_t = 0.1)]
    tol: f64,
    #[arg(long, default_value = "dct")]
    transform: String,
    /// Write rows here instead of stdout.
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Identity,
    Dct,
}

#[derive(Args)]
struct GenerateArgs {
    output: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    /// Facewise rank in the transform domain.
    #[arg(long, default_value_t = 3)]
    rank: usize,
    /// Signal-to-noise ratio in dB; noiseless when omitted.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value = "dct")]
    kind: SynthKind,
    /// Geometric decay of slice scale.
    #[arg(long, default_value_t = 1.0)]
    decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_tol(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("tolerance must lie in (0, 1), got {v}"))
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let usage = e.is_format_error()
            || matches!(
                e,
                Error::InvalidParameter(_)
                    | Error::DimensionMismatch(_)
                    | Error::NotSquare { .. }
                    | Error::NotOrthonormal { .. }
                    | Error::InvalidMode { .. }
                    | Error::InvalidShape(_)
            );
        if usage {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn dims_str(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

/// Six significant digits.
fn sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

fn transform_for(spec: &str, t: &DenseTensor, mode: usize) -> Result<Transform, Failure> {
    let n = t.dims()[mode];
    Ok(match spec {
        "identity" => Transform::identity(n)?,
        "dct" => Transform::dct(n)?,
        "data" => Transform::data_driven(t, mode)?,
        other => match other.strip_prefix("custom:") {
            Some(path) => {
                let m = read_matrix_file(path)?;
                if m.rows() != n {
                    return Err(Failure::Usage(format!(
                        "custom matrix {path} is {}x{}, mode {} has extent {n}",
                        m.rows(),
                        m.cols(),
                        mode + 1
                    )));
                }
                Transform::custom(m)?
            }
            None => return Err(Failure::Usage(format!("unknown transform {other:?}"))),
        },
    })
}

fn parse_transforms(spec: &str, t: &DenseTensor) -> Result<TransformSet, Failure> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let modes = t.ndim().saturating_sub(2);
    let per_mode: Vec<&str> = match parts.len() {
        1 => vec![parts[0]; modes],
        n if n == modes => parts,
        n => {
            return Err(Failure::Usage(format!("{n} transforms given for {modes} transformed modes")));
        }
    };
    let transforms = per_mode
        .iter()
        .enumerate()
        .map(|(k, s)| transform_for(s, t, k + 2))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TransformSet::new(t.dims(), transforms)?)
}

fn cmd_info(path: &Path, ctx: &Context) -> CmdResult {
    match detect_kind(path)? {
        FileKind::Tensor => {
            let t = read_tensor_file(path)?;
            println!("kind=tensor dims={} dtype=f64 norm={}", dims_str(t.dims()), sig(t.frobenius_norm()));
        }
        FileKind::Compressed => {
            let c = read_compressed_file(path)?;
            let norm = reconstruct(&c, ctx)?.frobenius_norm();
            println!("kind=compressed dims={} dtype=f64 norm={}", dims_str(c.dims()), sig(norm));
            println!("method={} param={}", c.method().name(), sig(c.method().param()));
            let kinds: Vec<String> = c.transforms().kinds().iter().map(ToString::to_string).collect();
            println!("transforms={}", kinds.join(","));
            let mut hist = BTreeMap::new();
            for &r in c.ranks() {
                *hist.entry(r).or_insert(0usize) += 1;
            }
            let hist: Vec<String> = hist.iter().map(|(r, n)| format!("{r}:{n}")).collect();
            println!("ranks={}", hist.join(" "));
            println!("ratio={}", sig(c.compression_ratio()));
        }
    }
    Ok(())
}

fn cmd_compress(args: &CompressArgs, ctx: &Context) -> CmdResult {
    let a = read_tensor_file(&args.input)?;
    let ts = parse_transforms(&args.transform, &a)?;
    let out = match (args.method, args.rank, args.tol) {
        (MethodArg::Tsvdm1, Some(r), None) => tsvdm_fixed_rank_detailed(&a, &ts, r as usize, ctx)?,
        (MethodArg::Tsvdm2, None, Some(eps)) => tsvdm_tolerance_detailed(&a, &ts, eps, args.strategy, ctx)?,
        (MethodArg::Tsvdm1, _, _) => return Err(Failure::Usage("tsvdm1 takes --rank and no --tol".into())),
        (MethodArg::Tsvdm2, _, _) => return Err(Failure::Usage("tsvdm2 takes --tol and no --rank".into())),
    };
    write_compressed_file(&args.output, &out.compressed)?;
    let norm = a.frobenius_norm();
    let err = if norm > 0.0 { out.discarded_energy.max(0.0).sqrt() / norm } else { 0.0 };
    println!("ratio={}", sig(out.compressed.compression_ratio()));
    println!("error={}", sig(err));
    Ok(())
}

fn cmd_decompress(input: &Path, output: &Path, ctx: &Context) -> CmdResult {
    let c = read_compressed_file(input)?;
    write_tensor_file(output, &reconstruct(&c, ctx)?)?;
    Ok(())
}

fn cmd_error(a: &Path, b: &Path) -> CmdResult {
    let a = read_tensor_file(a)?;
    let b = read_tensor_file(b)?;
    println!("{}", sig(relative_error(&a, &b)?));
    Ok(())
}

fn cmd_bench(args: &BenchArgs, threads: usize) -> CmdResult {
    let t = match &args.source.input {
        Some(p) => read_tensor_file(p)?,
        None => gaussian_tensor(args.source.dims.clone(), args.source.seed)?,
    };
    let thread_list = if args.thread_list.is_empty() { vec![threads] } else { args.thread_list.clone() };
    if thread_list.contains(&0) || args.trials == 0 {
        return Err(Failure::Usage("thread counts and trials must be >= 1".into()));
    }
    let rows = match args.kernel {
        Kernel::Ttm => {
            let modes: Vec<usize> = if args.modes.is_empty() {
                (2..t.ndim()).collect()
            } else {
                args.modes.iter().map(|m| m.wrapping_sub(1)).collect()
            };
            if let Some(&bad) = modes.iter().find(|&&k| k < 2 || k >= t.ndim()) {
                return Err(Failure::Usage(format!("mode {} is not a transformed mode", bad.wrapping_add(1))));
            }
            bench_ttm(&t, &args.variants, &modes, &thread_list, args.trials)?
        }
        Kernel::Svd => bench_svd(&t, &args.strategies, &thread_list, args.trials)?,
        Kernel::Tsvdm1 => {
            let ts = parse_transforms(&args.transform, &t)?;
            bench_tsvdm1(&t, &ts, args.rank as usize, &thread_list, args.trials)?
        }
        Kernel::Tsvdm2 => {
            let ts = parse_transforms(&args.transform, &t)?;
            let b = bench_tsvdm2(&t, &ts, args.tol, &args.tsvdm2_strategies, &thread_list, args.trials)?;
            eprintln!("ranks sum={} max={}", b.ranks.iter().sum::<usize>(), b.ranks.iter().max().unwrap_or(&0));
            b.rows
        }
    };
    emit_rows(&rows, args.csv_out.as_deref())
}

fn emit_rows(rows: &[BenchRow], path: Option<&Path>) -> CmdResult {
    match path {
        Some(p) => {
            write_bench_csv(BufWriter::new(File::create(p)?), rows)?;
            for (r, med) in summarize(rows) {
                let mode = r.mode.map(|m| format!(" mode={m}")).unwrap_or_default();
                println!("{} {}{} threads={} median={}s", r.kernel, r.variant, mode, r.threads, sig(med));
            }
        }
        None => write_bench_csv(io::stdout().lock(), rows)?,
    }
    Ok(())
}

fn cmd_generate(args: &GenerateArgs, ctx: &Context) -> CmdResult {
    let kind = match args.kind {
        SynthKind::Identity => TransformKind::Identity,
        SynthKind::Dct => TransformKind::Dct,
    };
    let mut spec = SynthSpec::new(args.dims.clone(), args.rank, args.seed).kind(kind).decay(args.decay);
    if let Some(snr) = args.snr {
        spec = spec.snr_db(snr);
    }
    let t = generate(&spec, ctx)?;
    write_tensor_file(&args.output, &t)?;
    println!("dims={} norm={}", dims_str(t.dims()), sig(t.frobenius_norm()));
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let threads = cli.threads as usize;
    let ctx = Context::new(threads)?
        .with_ttm_variant(cli.ttm_variant)
        .with_svd_strategy(cli.svd_strategy);
    match &cli.command {
        Command::Info { path } => cmd_info(path, &ctx),
        Command::Compress(args) => cmd_compress(args, &ctx),
        Command::Decompress { input, output } => cmd_decompress(input, output, &ctx),
        Command::Error { a, b } => cmd_error(a, b),
        Command::Bench(args) => cmd_bench(args, threads),
        Command::Generate(args) => cmd_generate(args, &ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(cli);
    let _ = io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
