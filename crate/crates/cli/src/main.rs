use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use contrastkit_cli::pipeline::{run_pipeline, RunOptions, REPORT_FILE};
use contrastkit_cli::sweep::{parse_grid, run_sweep};
use contrastkit_cli::synth_cmd::{load_spec, run_synth};
use contrastkit_cli::{CliError, PipelineConfig};

#[derive(Parser)]
#[command(name = "contrastkit", version, about = "Contrastive dimension reduction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Background selection, contrastive-dimension test and method fit.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads for the bootstrap.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Write a long-format copy of the embedding for plotting.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Generate a synthetic dataset from a generator spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refit the configured method over a parameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "gamma")]
        param: String,
        /// `log:lo:hi:n`, `lin:lo:hi:n` or a comma-separated list.
        #[arg(long, default_value = "log:0.1:1000:15")]
        grid: String,
        #[arg(long)]
        emit_plot_data: bool,
    },
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run {
            config,
            threads,
            emit_plot_data,
        } => {
            if threads == 0 {
                return Err(CliError::Config("--threads must be at least 1".into()));
            }
            let cfg = PipelineConfig::load(&config)?;
            let report = run_pipeline(&cfg, &RunOptions { threads, emit_plot_data })?;
            match &report.message {
                Some(m) => eprintln!("{m}"),
                None => eprintln!(
                    "{} fitted with d = {}; report at {}",
                    report.method_used.as_deref().unwrap_or("?"),
                    report.d_used.unwrap_or(0),
                    cfg.output_dir.join(REPORT_FILE).display()
                ),
            }
            Ok(report.exit_code())
        }
        Command::Synth { spec, out } => {
            let spec = load_spec(&spec)?;
            for f in run_synth(&spec, &out)? {
                println!("{}", f.display());
            }
            Ok(0)
        }
        Command::Sweep {
            config,
            param,
            grid,
            emit_plot_data,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            let grid = parse_grid(&grid)?;
            let report = run_sweep(&cfg, &param, &grid, emit_plot_data)?;
            println!("gamma,objective");
            for pt in &report.points {
                match (pt.objective, &pt.error) {
                    (Some(v), _) => println!("{},{v}", pt.gamma),
                    (None, Some(e)) => println!("{},error: {e}", pt.gamma),
                    (None, None) => println!("{},", pt.gamma),
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    // clap's own usage-error code (2) would collide with the workflow stop
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
