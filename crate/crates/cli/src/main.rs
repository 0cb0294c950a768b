use std::process::ExitCode;

use clap::{Parser, Subcommand};
use treat_cli::eval::EvalArgs;
use treat_cli::simulate::SimulateArgs;
use treat_cli::suites::VerifyArgs;
use treat_cli::train::TrainArgs;
use treat_cli::{eval, exit, output_dir, simulate, suites, train};

#[derive(Parser)]
#[command(name = "treat", version, about = "Graph neural ODEs with a time-reversal penalty")]
struct Cli {
    /// Worker threads for data generation, evaluation and verification.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (default: $TREAT_OUTDIR, else the working directory).
    #[arg(long, global = true)]
    outdir: Option<std::path::PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a physical system and write a trajectory dataset.
    Simulate(SimulateArgs),
    /// Train a model and write a checkpoint, loss history and summary.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run numerical checks of the method's assumptions.
    Verify(VerifyArgs),
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(exit::config("--workers must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let outdir = output_dir(cli.outdir.as_deref());
    match cli.command {
        Command::Simulate(args) => {
            let run = simulate::resolve(&args)?;
            let out = args.out.clone().unwrap_or_else(|| outdir.join("dataset.jsonl"));
            let meta = simulate::run(&run, &out)?;
            println!("wrote {} trajectories to {}", meta.n_records, out.display());
        }
        Command::Train(args) => {
            let run = train::resolve(&args)?;
            let s = train::run(&run, &outdir)?;
            match &s.test {
                Some(t) => println!(
                    "best epoch {}; test mse {:.6e} ({:.4} x1e-2), max_error_gt_rev {:.6e}",
                    s.best_epoch, t.mse, t.mse_e2, t.max_error_gt_rev
                ),
                None => println!("best epoch {}; no test trajectories", s.best_epoch),
            }
        }
        Command::Eval(args) => {
            let run = eval::resolve(&args)?;
            let out = args.out.clone().unwrap_or_else(|| outdir.join("metrics.json"));
            let r = eval::run(&run, &out)?;
            println!(
                "{} trajectories ({} skipped): mse {:.6e} ({:.4} x1e-2), max_error_gt_rev {:.6e}",
                r.n_trajectories, r.skipped, r.mse, r.mse_e2, r.max_error_gt_rev
            );
        }
        Command::Verify(args) => {
            let run = suites::resolve(&args)?;
            let report = suites::run(&run)?;
            for a in &report.assertions {
                let tag = if a.passed { "PASS" } else { "FAIL" };
                println!("{tag} {}: {} = {:.6e} (expect {})", a.suite, a.name, a.value, a.expect);
            }
            if let Some(p) = &args.json {
                treat_cli::write_json(&treat_cli::sidecar(p, "config.json"), &run)?;
                treat_cli::write_json(p, &report)?;
            }
            if let Some(p) = &args.csv {
                treat_cli::write_text(p, &report.to_csv())?;
            }
            if !report.passed {
                return Ok(exit::CHECK_FAILED);
            }
        }
    }
    Ok(exit::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::SUCCESS };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
