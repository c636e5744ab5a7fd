use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mote_core::config::{load_config, ExperimentConfig};
use mote_core::report::emit_report;
use mote_core::runner::run_config;
use mote_core::temporal_router::GatingMode;
use mote_core::MoteError;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "mote", version, about = "Mixture of temporal experts experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a key=value config file.
    Run {
        config: PathBuf,
        /// Comma-separated seeds replacing `experiment.seeds`.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
        /// Output directory replacing `experiment.out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the unnormalized gate mixture with the 1/K prefactor.
        #[arg(long)]
        raw_gating: bool,
        /// Worker threads for per-seed and per-cell parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn fail(code: u8, err: &dyn std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn exit_code(err: &MoteError) -> u8 {
    if err.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

fn apply_flags(
    cfg: &mut ExperimentConfig,
    seed_override: Option<Vec<u64>>,
    out: Option<PathBuf>,
    raw_softmax: bool,
) -> mote_core::Result<()> {
    if let Some(seeds) = seed_override {
        cfg.seeds = seeds;
    }
    if let Some(out) = out {
        cfg.out = out;
    }
    if raw_softmax {
        cfg.mote.mode = GatingMode::RawSoftmax;
    }
    cfg.validate()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Command::Run {
        config,
        seed_override,
        out,
        raw_gating,
        threads,
    } = cli.command;

    let mut cfg = match load_config(&config) {
        Ok(cfg) => cfg,
        Err(e) => return fail(EXIT_CONFIG, &e),
    };
    if let Err(e) = apply_flags(&mut cfg, seed_override, out, raw_gating) {
        return fail(EXIT_CONFIG, &e);
    }
    if let Some(n) = threads {
        if n == 0 {
            return fail(EXIT_CONFIG, &"--threads must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(EXIT_RUNTIME, &e);
        }
    }

    let report = match run_config(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(exit_code(&e), &e),
    };
    let files = match emit_report(&report, &cfg.out, cfg.checkpoints) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_RUNTIME, &e),
    };

    for (method, mean) in report.method_means() {
        let cells: Vec<String> = cfg
            .metrics
            .iter()
            .map(|&m| format!("{}={:.4}", m.name(), mean.get(m)))
            .collect();
        println!("{method:<20} {}", cells.join(" "));
    }
    for m in &report.matrices {
        println!(
            "{}: mean |delta| at gap 1 = {:.4}, at gap {} = {:.4}",
            m.metric.name(),
            m.mean_abs_delta_at_gap(1),
            m.domains() - 1,
            m.mean_abs_delta_at_gap(m.domains() - 1)
        );
    }
    println!("wrote {}", files.metrics.display());
    if let Some(p) = &files.temporal_matrix {
        println!("wrote {}", p.display());
    }
    if !files.checkpoints.is_empty() {
        println!("wrote {} checkpoints under {}", files.checkpoints.len(), cfg.out.join("checkpoints").display());
    }
    ExitCode::SUCCESS
}
