use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shadowforge_cli::config::parse_list;
use shadowforge_cli::{cmd_eval, cmd_gen, cmd_run, cmd_table, load_config, metrics_json, CliError, CliResult, EvalSplit};

/// Learn ground-state properties from simulated randomized-measurement data.
#[derive(Parser)]
#[command(name = "shadowforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground states and write a hybrid dataset.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file to write; defaults to `<out>/dataset.jsonl`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output directory; overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a baseline and run the engine once per seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds; overrides `seeds` in the config.
        #[arg(long)]
        seeds: Option<String>,
        /// Record wall-clock times in reports (makes them non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Score a model file on one split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Summarize report files matching a glob.
    Table {
        /// e.g. `runs/*/report_seed*.json`
        pattern: String,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen { config, dataset, out } => {
            let cfg = load_config(&config)?;
            let path = dataset.unwrap_or_else(|| out.unwrap_or(cfg.out.clone()).join("dataset.jsonl"));
            let s = cmd_gen(&cfg, &path)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{} N={} task={}: {} L / {} U / {} val / {} test -> {}",
                cfg.dataset.system,
                cfg.dataset.n_qubits,
                cfg.dataset.task,
                s.counts[0],
                s.counts[1],
                s.counts[2],
                s.counts[3],
                s.path.display()
            );
        }
        Command::Run { config, dataset, out, seeds, timing } => {
            let mut cfg = load_config(&config)?;
            if let Some(text) = seeds {
                cfg.seeds = parse_list(&text).map_err(|e| CliError::Usage(format!("bad --seeds: {e}")))?;
                if cfg.seeds.is_empty() {
                    return Err(CliError::Usage("--seeds is empty".into()));
                }
            }
            let out = out.unwrap_or(cfg.out.clone());
            let res = cmd_run(&cfg, &dataset, &out, timing)?;
            for r in &res.reports {
                println!(
                    "seed {}: baseline {:.4} engine {:.4} delta {:+.4} ({} iterations, {} admitted)",
                    r.seed, r.baseline_test_r2, r.engine_test_r2, r.delta, r.iterations, r.admitted
                );
            }
            if let Some(a) = &res.aggregate {
                println!(
                    "mean test R2: baseline {:.4} +- {:.4}, engine {:.4} +- {:.4}, delta {:+.4}",
                    a.baseline_test_r2.mean, a.baseline_test_r2.std, a.engine_test_r2.mean, a.engine_test_r2.std, a.delta.mean
                );
            }
            if !res.failures.is_empty() {
                let msg: Vec<String> = res.failures.iter().map(|(s, m)| format!("seed {s}: {m}")).collect();
                return Err(CliError::Engine(msg.join("; ")));
            }
        }
        Command::Eval { model, dataset, split } => {
            let split: EvalSplit = split.parse().map_err(CliError::Usage)?;
            print!("{}", metrics_json(&cmd_eval(&model, &dataset, split)?)?);
        }
        Command::Table { pattern } => print!("{}", cmd_table(&pattern)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| execute(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(3),
    }
}
