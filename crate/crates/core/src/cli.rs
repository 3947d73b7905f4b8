//! The `beem` command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::external::{run_beem_tree, ExternalConfig, RunStats};
use crate::generate;
use crate::inmem::{brute_force_pe, BucketElimination, InferenceResult};
use crate::model::{parse_evidence, parse_uai, primal_graph, write_evidence, write_uai, Model};
use crate::ordering::{
    build_bucket_tree, min_fill_ordering, ordering_for_model, parse_ordering, BucketTree,
};
use crate::plan::{compute_block_sizes, compute_mpt, MemoryBudget};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_DISK_FULL: i32 = 4;
pub const EXIT_ORACLE_CAP: i32 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "beem",
    version,
    about = "Exact P(e) by bucket elimination with external memory"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute P(e) for a model in UAI format.
    Solve(SolveArgs),
    /// Print model size, induced width and the block plan without solving.
    Plan(PlanArgs),
    /// Write a synthetic model (and optionally evidence) in UAI format.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Brute,
    Inmem,
    External,
}

#[derive(Debug, clap::Args)]
pub struct ModelArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub evidence: Option<PathBuf>,
    /// File with one variable id per line, first eliminated last.
    #[arg(long)]
    pub ordering: Option<PathBuf>,
    /// Memory `M` in bytes; accepts K, M and G suffixes.
    #[arg(long, default_value = "1G", value_parser = parse_memory)]
    pub memory: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
    /// Min-fill restarts with random tie-breaking.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, clap::Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Mode::External)]
    pub mode: Mode,
    #[arg(long)]
    pub workdir: Option<PathBuf>,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub delete_blocks: bool,
    #[arg(long)]
    pub stats_json: Option<PathBuf>,
    /// Write the block plan as TSV (`-` for stdout).
    #[arg(long)]
    pub dump_plan: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Shape {
    Clique,
    Grid,
    Chain,
    Bayes,
    Markov,
}

#[derive(Debug, clap::Args)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub shape: Shape,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Variables (grid side length for `grid`).
    #[arg(long, default_value_t = 10)]
    pub vars: usize,
    #[arg(long, default_value_t = 2)]
    pub card: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write random evidence observing this fraction of the variables.
    #[arg(long)]
    pub evidence_fraction: Option<f64>,
}

/// Parses `123`, `64K`, `512M`, `1G` (binary multiples). Must be at least 1 MB.
pub fn parse_memory(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (digits, mult) = match s.char_indices().last() {
        Some((i, c)) if c.is_ascii_alphabetic() => {
            let mult = match c.to_ascii_uppercase() {
                'K' => 1u64 << 10,
                'M' => 1 << 20,
                'G' => 1 << 30,
                _ => return Err(format!("unknown memory suffix `{c}`")),
            };
            (&s[..i], mult)
        }
        _ => (s, 1),
    };
    let n: u64 = digits
        .parse()
        .map_err(|_| format!("invalid memory size `{s}`"))?;
    let bytes = n
        .checked_mul(mult)
        .ok_or_else(|| format!("memory size `{s}` overflows"))?;
    if bytes < 1 << 20 {
        return Err(format!("memory must be at least 1M, got {bytes} bytes"));
    }
    Ok(bytes)
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse { .. } | Error::Structure(_) | Error::Domain(_) | Error::Contract(_) => {
                EXIT_INPUT
            }
            Error::Budget(_) | Error::InfeasibleBudget { .. } | Error::MemoryExceeded { .. } => {
                EXIT_BUDGET
            }
            Error::DiskFull { .. } => EXIT_DISK_FULL,
            Error::OracleCap { .. } => EXIT_ORACLE_CAP,
            _ => EXIT_OTHER,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn input_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: format!("cannot read {}: {e}", path.display()),
    }
}

fn output_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_OTHER,
        message: format!("cannot write {}: {e}", path.display()),
    }
}

/// Model with evidence applied, its bucket tree and budget.
struct Prepared {
    model: Model,
    tree: BucketTree,
    budget: Result<MemoryBudget, Error>,
}

fn prepare(a: &ModelArgs) -> Result<Prepared, Failure> {
    let text = fs::read_to_string(&a.model).map_err(|e| input_failure(&a.model, e))?;
    let mut model = parse_uai(&text)?;
    if let Some(p) = &a.evidence {
        let text = fs::read_to_string(p).map_err(|e| input_failure(p, e))?;
        model = model.apply_evidence(&parse_evidence(&text)?)?;
    }
    let g = primal_graph(&model);
    let d = match &a.ordering {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| input_failure(p, e))?;
            ordering_for_model(&model, &g, &parse_ordering(&text)?)?
        }
        None => min_fill_ordering(&g, a.seed, a.restarts),
    };
    let tree = build_bucket_tree(&model, &d)?.order_scopes()?;
    let budget = compute_mpt(a.memory, model.table_bytes(), a.workers as usize, 8);
    Ok(Prepared {
        model,
        tree,
        budget,
    })
}

/// `x` in fixed point with at least `sig` significant digits.
pub fn format_sig(x: f64, sig: usize) -> String {
    if !x.is_finite() || x == 0.0 {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i64;
    let decimals = (sig as i64 - 1 - exp).clamp(0, 30) as usize;
    format!("{x:.decimals$}")
}

fn result_lines(r: &InferenceResult) -> String {
    format!(
        "log10(P(e)) = {}\nP(e) = {:.16e}\n",
        format_sig(r.log10_pe, 12),
        r.pe
    )
}

/// Bytes of every bucket output, the intermediate space bucket elimination needs.
pub fn message_bytes(tree: &BucketTree) -> Result<u64, Error> {
    tree.buckets().iter().try_fold(0u64, |acc, b| {
        Ok(acc.saturating_add(tree.out_size(b.var)?.saturating_mul(8)))
    })
}

pub fn report_plan(a: &PlanArgs) -> Result<String, Failure> {
    let p = prepare(&a.model)?;
    let mut out = String::new();
    let _ = writeln!(out, "n = {}", p.model.num_vars());
    let _ = writeln!(out, "max K = {}", p.model.max_card());
    let _ = writeln!(out, "w* = {}", p.tree.width());
    let _ = writeln!(out, "Space = {} bytes", message_bytes(&p.tree)?);
    let _ = writeln!(out, "original bytes = {}", p.model.table_bytes());
    let budget = p.budget?;
    let _ = writeln!(
        out,
        "Mpt = {} entries x {} workers",
        budget.mpt, budget.workers
    );
    let plan = compute_block_sizes(&p.tree, &budget)?;
    let _ = writeln!(out, "blocks = {}", plan.total_blocks());
    out.push_str(&plan.dump());
    Ok(out)
}

pub fn solve(a: &SolveArgs) -> Result<String, Failure> {
    let p = prepare(&a.model)?;
    let mut out = String::new();
    let (result, stats): (InferenceResult, Option<RunStats>) = match a.mode {
        Mode::Brute => (brute_force_pe(&p.model)?, None),
        Mode::Inmem => {
            let budget = p.budget?;
            let limit = budget.total_bytes - budget.original_bytes;
            let run = BucketElimination::new(&p.tree)
                .with_table_limit(limit)
                .run()?;
            (run.result, None)
        }
        Mode::External => {
            let workdir = a.workdir.clone().ok_or_else(|| Failure {
                code: EXIT_INPUT,
                message: "external mode needs --workdir".into(),
            })?;
            let mut cfg = ExternalConfig::new(p.budget?, workdir);
            cfg.delete_blocks = a.delete_blocks;
            let plan = compute_block_sizes(&p.tree, &cfg.budget)?;
            if let Some(path) = &a.dump_plan {
                if path.as_os_str() == "-" {
                    out.push_str(&plan.dump());
                } else {
                    fs::write(path, plan.dump()).map_err(|e| output_failure(path, e))?;
                }
            }
            let (r, s) = run_beem_tree(&p.tree, &plan, &cfg)?;
            (r, Some(s))
        }
    };
    out.push_str(&result_lines(&result));
    if let Some(s) = &stats {
        let _ = writeln!(
            out,
            "loads = {}, saves = {}, gap reloads = {}, peak resident = {} B, peak disk = {} B",
            s.loads, s.saves, s.gap_reloads, s.peak_resident_bytes, s.peak_disk_bytes
        );
        if let Some(path) = &a.stats_json {
            fs::write(path, s.to_json()).map_err(|e| output_failure(path, e))?;
        }
    }
    let _ = writeln!(out, "time = {:.3} s", result.elapsed.as_secs_f64());
    Ok(out)
}

pub fn generate(a: &GenerateArgs) -> Result<String, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let cards = [a.card];
    let model = match a.shape {
        Shape::Clique => generate::clique(&mut rng, a.vars, a.card),
        Shape::Grid => generate::grid(&mut rng, a.vars, a.vars, a.card),
        Shape::Chain => generate::chain(&mut rng, a.vars, a.card),
        Shape::Bayes => generate::random_bayes(&mut rng, a.vars, &cards, 3),
        Shape::Markov => generate::random_markov(&mut rng, a.vars, &cards, a.vars * 2, 3),
    }?;
    fs::write(&a.out, write_uai(&model)).map_err(|e| output_failure(&a.out, e))?;
    let mut msg = format!("wrote {}\n", a.out.display());
    if let Some(frac) = a.evidence_fraction {
        let e = generate::random_evidence(&mut rng, &model, frac.clamp(0.0, 1.0));
        let mut path = a.out.clone().into_os_string();
        path.push(".evid");
        let path = PathBuf::from(path);
        fs::write(&path, write_evidence(&e)).map_err(|e| output_failure(&path, e))?;
        let _ = writeln!(msg, "wrote {}", path.display());
    }
    Ok(msg)
}

pub fn run(cli: &Cli) -> Result<String, Failure> {
    match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Plan(a) => report_plan(a),
        Command::Generate(a) => generate(a),
    }
}
