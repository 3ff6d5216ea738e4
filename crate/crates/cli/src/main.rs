//! `netcompose` command-line scenario runner.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use netcompose::scenario::{
    dump_state, render_tables, run_scenario, ReportFormat, Scenario, Transport,
};

#[derive(Parser, Debug)]
#[command(name = "netcompose", version, about = "Run SDN module composition scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and print its report.
    Run(RunArgs),
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    composition: PathBuf,
    #[arg(long)]
    modules: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// inmem or socket
    #[arg(long, default_value = "inmem")]
    transport: String,
    /// Also write the final flow tables here.
    #[arg(long)]
    dump_tables: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    report: Option<PathBuf>,
    /// text or machine
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long, default_value = "warn")]
    log_level: String,
}

const EXIT_LOAD: u8 = 1;

fn run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let format: ReportFormat = args.format.parse()?;
    let transport: Transport = args.transport.parse().map_err(anyhow::Error::msg)?;
    let scenario = match Scenario::load(&args.topology, &args.composition, &args.modules, &args.trace) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_LOAD));
        }
    };
    let report = run_scenario(&scenario, transport)?;
    let rendered = dump_state(&report, format);
    match &args.report {
        Some(path) => std::fs::write(path, rendered)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{rendered}"),
    }
    if let Some(path) = &args.dump_tables {
        std::fs::write(path, render_tables(&report))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let code = report.exit_code();
    if code != 0 {
        eprintln!(
            "{} protocol errors during the run",
            report.metrics.protocol_errors
        );
    }
    Ok(ExitCode::from(code as u8))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_LOAD)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let Command::Run(args) = cli.command;
    env_logger::Builder::new()
        .parse_filters(&args.log_level)
        .init();
    match run(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_LOAD)
        }
    }
}
