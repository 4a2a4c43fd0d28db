use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use napd::acceptance::{verify, Suite};
use napd::config::parse_config;
use napd::report::{parse_csv, svg_for_rows, DEFAULT_PLOT_QUANTITIES};
use napd::runner::{parse_grid, run, sweep, OUTPUT_DIR_ENV};
use napd::{Error, Result};

/// Accelerated primal-dual dynamics: runs, sweeps, acceptance checks and plots.
#[derive(Parser)]
#[command(name = "napd", version)]
struct Cli {
    /// Directory for outputs with relative paths.
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write its outputs.
    Run { config: PathBuf },
    /// Run the Cartesian product of a grid over a base configuration.
    Sweep {
        config: PathBuf,
        /// JSON object mapping dotted field paths to value lists, or a file holding one.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 4)]
        parallelism: usize,
    },
    /// Run an acceptance suite: all, basic, strict, scaled or critical.
    Verify {
        suite: String,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Render SVG plots from a run summary and its CSV series.
    Report {
        summary: PathBuf,
        #[arg(long)]
        svg: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config {
        field: path.display().to_string(),
        line: None,
        message: e.to_string(),
    })
}

fn execute(cli: Cli) -> Result<i32> {
    let out_dir = cli.out_dir.as_deref();
    match cli.command {
        Command::Run { config } => {
            let cfg = parse_config(&read(&config)?)?;
            let summary = run(&cfg, out_dir)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(summary.exit_code)
        }
        Command::Sweep { config, grid, parallelism } => {
            let cfg = parse_config(&read(&config)?)?;
            let text = if grid.trim_start().starts_with('{') { grid } else { read(Path::new(&grid))? };
            let summaries = sweep(&cfg, &parse_grid(&text)?, parallelism, out_dir)?;
            println!("{}", serde_json::to_string_pretty(&summaries)?);
            Ok(summaries.iter().map(|s| s.exit_code).max().unwrap_or(0))
        }
        Command::Verify { suite, report } => {
            let suite: Suite = suite.parse()?;
            let result = verify(suite);
            for c in &result.criteria {
                println!("{}", c.line());
            }
            let json = serde_json::to_string_pretty(&result)?;
            match report.map(|p| match out_dir {
                Some(d) if p.is_relative() => d.join(p),
                _ => p,
            }) {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
            Ok(if result.pass { 0 } else { 5 })
        }
        Command::Report { summary, svg } => {
            let value: serde_json::Value = serde_json::from_str(&read(&summary)?)?;
            let csv = value
                .pointer("/csv_file")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Config {
                    field: "csv_file".into(),
                    line: None,
                    message: "summary does not reference a CSV series".into(),
                })?;
            let mut csv_path = PathBuf::from(csv);
            if csv_path.is_relative() && !csv_path.exists() {
                csv_path = summary.parent().unwrap_or(Path::new(".")).join(&csv_path);
            }
            let rows = parse_csv(&read(&csv_path)?).map_err(|message| Error::Config {
                field: csv_path.display().to_string(),
                line: None,
                message,
            })?;
            std::fs::create_dir_all(&svg)?;
            let stem = summary.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or("series".into());
            let title = value
                .pointer("/config/problem/catalog")
                .and_then(|v| v.as_str())
                .map_or_else(|| stem.clone(), str::to_string);
            let main = svg.join(format!("{stem}.svg"));
            std::fs::write(&main, svg_for_rows(&title, &rows, &DEFAULT_PLOT_QUANTITIES))?;
            let resid = svg.join(format!("{stem}-residuals.svg"));
            use napd::diagnostics::Quantity::*;
            std::fs::write(&resid, svg_for_rows(&title, &rows, &[StatResid, DualResid, GradResid, Bregman]))?;
            println!("{}\n{}", main.display(), resid.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
