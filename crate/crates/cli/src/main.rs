//! `memlb`: instance generation, optimization runs, game plays, sweeps and the
//! verification suite.
//!
//! Exit codes: 0 success or win, 1 benign negative result, 2 contract violation
//! or error.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use memlb_core::experiment::{self, ExperimentConfig, Mode, Status};
use memlb_core::instance::HardInstance;
use memlb_core::verify::{self, Fault, Profile};

#[derive(Parser, Debug)]
#[command(name = "memlb", version, about = "Memory-constrained convex optimization lab")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Sample a hard instance and write it as text
    Gen,
    /// Run one algorithm per seed and print summary lines
    Run,
    /// Play the orthogonal vector game
    Ovg,
    /// Run the (d, M, algorithm, seed) grid and write CSV
    Sweep,
    /// Run the property verification suites
    Verify,
}

/// Every flag maps to the config key of the same name (`-` becomes `_`).
#[derive(Args, Debug, Default)]
struct Opts {
    /// Config file of `key = value` lines, applied before the flags
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<String>,
    #[arg(short, long, global = true)]
    d: Option<String>,
    /// Depth N
    #[arg(long, global = true, visible_alias = "N")]
    depth: Option<String>,
    /// Round length
    #[arg(short, long, global = true)]
    k: Option<String>,
    /// Memory budget in bits: `state`, an integer, `c*d` or `c*d^p`
    #[arg(long, global = true, visible_alias = "M")]
    budget: Option<String>,
    /// Game query budget
    #[arg(short, long, global = true)]
    m: Option<String>,
    /// Seeds: a list, `a..b` or `a..=b` (overridden by MEMLB_SEED)
    #[arg(long, global = true, visible_alias = "seed", allow_hyphen_values = true)]
    seeds: Option<String>,
    /// sd, ellipsoid, nullspace, origin or reduction
    #[arg(long, global = true)]
    algorithm: Option<String>,
    /// store-null, query-rows, return-rows or reduction
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// Game oracle variant: subgradient or index
    #[arg(long, global = true)]
    variant: Option<String>,
    #[arg(short, long, global = true, value_name = "PATH")]
    output: Option<String>,
    /// asymptotic or cap
    #[arg(long, global = true)]
    gamma_rule: Option<String>,
    /// Fixed gamma, overriding the rule
    #[arg(long, global = true)]
    gamma: Option<String>,
    /// native, unit or lipschitz
    #[arg(long, global = true)]
    scaling: Option<String>,
    /// Permit depths above the cap
    #[arg(long, global = true)]
    allow_over_cap: bool,
    /// Accuracy override (unscaled)
    #[arg(long, global = true)]
    epsilon: Option<String>,
    #[arg(long, global = true)]
    max_queries: Option<String>,
    /// Initial step of the descent baselines
    #[arg(long, global = true)]
    step: Option<String>,
    /// Bits per coordinate for sd
    #[arg(long, global = true)]
    sd_bits: Option<String>,
    #[arg(long, global = true)]
    tolerance: Option<String>,
    /// Sweep dimensions
    #[arg(long, global = true)]
    dims: Option<String>,
    /// Sweep budgets
    #[arg(long, global = true)]
    budgets: Option<String>,
    /// Sweep algorithms
    #[arg(long, global = true)]
    algorithms: Option<String>,
    /// Sweep worker threads
    #[arg(long, global = true)]
    workers: Option<String>,
    #[arg(short, long, global = true)]
    verbose: bool,
    /// Verification profile: desk or quick
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// Flip sign (ROW,COL) of A in the stored instances checked by verify
    #[arg(long, global = true, value_name = "ROW,COL")]
    fault: Option<String>,
}

impl Opts {
    fn config(&self, command: Option<Command>) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            cfg.apply_text(&text).with_context(|| format!("in {path}"))?;
        }
        let flags = [
            ("d", &self.d),
            ("depth", &self.depth),
            ("k", &self.k),
            ("budget", &self.budget),
            ("m", &self.m),
            ("seeds", &self.seeds),
            ("algorithm", &self.algorithm),
            ("strategy", &self.strategy),
            ("variant", &self.variant),
            ("output", &self.output),
            ("gamma_rule", &self.gamma_rule),
            ("gamma", &self.gamma),
            ("scaling", &self.scaling),
            ("epsilon", &self.epsilon),
            ("max_queries", &self.max_queries),
            ("step", &self.step),
            ("sd_bits", &self.sd_bits),
            ("tolerance", &self.tolerance),
            ("dims", &self.dims),
            ("budgets", &self.budgets),
            ("algorithms", &self.algorithms),
            ("workers", &self.workers),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.allow_over_cap {
            cfg.allow_over_cap = true;
        }
        if self.verbose {
            cfg.verbose = true;
        }
        if let Some(c) = command {
            cfg.mode = match c {
                Command::Gen => Mode::Gen,
                Command::Run => Mode::Run,
                Command::Ovg => Mode::Ovg,
                Command::Sweep => Mode::Sweep,
                Command::Verify => Mode::Verify,
            };
        }
        let env = std::env::var("MEMLB_SEED").ok();
        Ok(cfg.with_seed_override(env.as_deref())?)
    }

    fn fault(&self) -> Result<Option<Fault>> {
        let Some(f) = &self.fault else { return Ok(None) };
        let (r, c) = f.split_once(',').context("--fault expects ROW,COL")?;
        Ok(Some(Fault::FlipSign {
            row: r.trim().parse()?,
            col: c.trim().parse()?,
        }))
    }
}

/// Writes to the configured output, or stdout when there is none.
fn emit(cfg: &ExperimentConfig, text: &str) -> Result<()> {
    match &cfg.output {
        Some(path) => write_file(path, text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn first_seed(cfg: &ExperimentConfig) -> Result<u64> {
    match cfg.seeds.first() {
        Some(&s) => Ok(s),
        None => bail!("no seed given"),
    }
}

fn worst(statuses: impl IntoIterator<Item = Status>) -> u8 {
    statuses.into_iter().map(|s| s.code() as u8).max().unwrap_or(0)
}

fn cmd_gen(cfg: &ExperimentConfig) -> Result<u8> {
    let p = cfg.instance_params(cfg.d)?;
    let inst = HardInstance::sample(p, first_seed(cfg)?)?;
    let text = inst.to_text();
    let back = HardInstance::from_text(&text).context("parsing the generated instance")?;
    if back.to_text() != text {
        bail!("instance text does not round-trip");
    }
    emit(cfg, &text)?;
    Ok(0)
}

fn cmd_run(cfg: &ExperimentConfig) -> Result<u8> {
    let mut jsonl = String::new();
    let mut statuses = Vec::new();
    for &seed in &cfg.seeds {
        let (summary, record) = experiment::run_once(cfg, cfg.algorithm, cfg.d, &cfg.budget, seed)?;
        if let Some(r) = record {
            jsonl.push_str(&r.to_jsonl());
        }
        println!("{summary}");
        statuses.push(summary.status);
    }
    if let Some(path) = &cfg.output {
        write_file(path, &jsonl)?;
    }
    Ok(worst(statuses))
}

fn cmd_ovg(cfg: &ExperimentConfig) -> Result<u8> {
    let mut text = String::new();
    let mut statuses = Vec::new();
    for &seed in &cfg.seeds {
        let t = experiment::play_once(cfg, cfg.strategy, cfg.d, seed)?;
        let status = experiment::transcript_status(&t);
        println!(
            "strategy={} d={} k={} m={} M={} seed={} outcome={} status={}",
            cfg.strategy,
            cfg.d,
            cfg.k,
            cfg.m,
            t.params.message_bits,
            seed,
            if t.won() { "win" } else { "loss" },
            status.as_str()
        );
        text.push_str(&t.to_text());
        statuses.push(status);
    }
    if let Some(path) = &cfg.output {
        write_file(path, &text)?;
    } else if cfg.verbose {
        print!("{text}");
    }
    Ok(worst(statuses))
}

fn cmd_sweep(cfg: &ExperimentConfig) -> Result<u8> {
    let rows = experiment::sweep(cfg)?;
    emit(cfg, &experiment::csv_string(&rows))?;
    Ok(0)
}

fn cmd_verify(cfg: &ExperimentConfig, opts: &Opts) -> Result<u8> {
    let profile = match opts.profile.as_str() {
        "desk" => Profile::desk(),
        "quick" => Profile::quick(),
        other => bail!("unknown profile `{other}` (expected desk or quick)"),
    };
    let report = verify::verify_all(&profile, opts.fault()?);
    emit(cfg, &report.to_text(cfg.verbose))?;
    Ok(if report.passed() { 0 } else { 2 })
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let cfg = cli.opts.config(cli.command)?;
    match cfg.mode {
        Mode::Gen => cmd_gen(&cfg),
        Mode::Run => cmd_run(&cfg),
        Mode::Ovg => cmd_ovg(&cfg),
        Mode::Sweep => cmd_sweep(&cfg),
        Mode::Verify => cmd_verify(&cfg, &cli.opts),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
