use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use fedaa::config::parse_config;
use fedaa::output::{
    emit_results, plot_csv, render_svg, series_from_records, unix_now, Format, ResultRow, ResultTable,
    RunManifest,
};
use fedaa::{run_experiment, ExperimentConfig, FedError, Result};

#[derive(Parser)]
#[command(name = "fedaa", version, about = "Federated learning with adaptive aggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config in `key = value` form.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Also write SVG curves.
    #[arg(long)]
    plot: bool,
    /// Extra `key=value` config overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(Common),
    /// Run a parameter grid and write one summary table.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `key=v1,v2,...`; repeat for a cartesian product.
        #[arg(long = "grid", value_name = "KEY=V1,V2", required = true)]
        grid: Vec<String>,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Render curves from a round CSV to SVG.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Comma-separated columns; defaults to reward and mean_benign_acc.
        #[arg(long)]
        columns: Option<String>,
    },
    /// Run the fast invariant checks.
    Selftest,
}

fn split_kv(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| FedError::config(format!("expected KEY=VALUE, got {s:?}")))
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let base = match &common.config {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    let mut overrides: Vec<(String, String)> = common.set.iter().map(|s| split_kv(s)).collect::<Result<_>>()?;
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if overrides.is_empty() {
        Ok(base)
    } else {
        base.with_overrides(&overrides)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FedError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| FedError::io(path, e))
}

/// Runs one config into `dir`; returns the summary row.
fn run_into(cfg: &ExperimentConfig, dir: &Path, stem: &str, format: Format, plot: bool) -> Result<ResultRow> {
    let started = unix_now();
    let clock = Instant::now();
    let records = run_experiment(cfg)?;
    let runtime = clock.elapsed().as_secs_f64();
    let mut artifacts = Vec::new();
    let rounds = dir.join(format!("{stem}.{}", format.extension()));
    emit_results(&records, &rounds, format)?;
    artifacts.push(rounds);
    let config_path = dir.join(format!("{stem}.config"));
    write_text(&config_path, &cfg.to_text())?;
    artifacts.push(config_path);
    if plot {
        let svg = dir.join(format!("{stem}.svg"));
        write_text(&svg, &render_svg(stem, &series_from_records(&records)))?;
        artifacts.push(svg);
    }
    RunManifest::new(cfg, started, unix_now(), artifacts).write(&dir.join(format!("{stem}.manifest.json")))?;
    ResultRow::from_run(cfg, &records, runtime)
}

fn cmd_run(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    create_dir(&common.out)?;
    let row = run_into(&cfg, &common.out, "rounds", common.format.into(), common.plot)?;
    println!(
        "{} {} attack={} mean_acc={:.4} acc_std={:.4} runtime={:.1}s",
        row.method, row.dataset, row.attack, row.mean_acc, row.acc_std, row.runtime_seconds
    );
    Ok(())
}

fn cmd_sweep(common: &Common, grid: &[String], seeds: Option<&str>) -> Result<()> {
    let base = load(common)?;
    let axes: Vec<(String, Vec<String>)> = grid
        .iter()
        .map(|g| {
            let (k, vs) = split_kv(g)?;
            Ok((k, vs.split(',').map(|v| v.trim().to_string()).collect()))
        })
        .collect::<Result<_>>()?;
    let seeds: Vec<u64> = match seeds {
        None => vec![base.seed],
        Some(s) => s
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| FedError::config(format!("bad seed {v:?}"))))
            .collect::<Result<_>>()?,
    };
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    let mut jobs = Vec::new();
    for p in &points {
        for &s in &seeds {
            let variant: Vec<String> = p.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let variant = variant.join("_");
            let mut o = p.clone();
            o.push(("seed".into(), s.to_string()));
            jobs.push((base.with_overrides(&o)?, variant.clone(), format!("{variant}_seed={s}")));
        }
    }
    let runs = common.out.join("runs");
    create_dir(&runs)?;
    let format: Format = common.format.into();
    let rows: Vec<ResultRow> = jobs
        .par_iter()
        .map(|(cfg, variant, stem)| {
            let mut row = run_into(cfg, &runs, stem, format, common.plot)?;
            row.variant = variant.clone();
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let table = ResultTable { rows }.with_aggregates();
    let path = common.out.join(format!("table.{}", format.extension()));
    let file = std::fs::File::create(&path).map_err(|e| FedError::io(&path, e))?;
    match format {
        Format::Csv => table.write_csv(file)?,
        Format::Json => table.write_json(file)?,
    }
    println!("{} runs, table at {}", jobs.len(), path.display());
    Ok(())
}

fn cmd_report(input: &Path, output: Option<&Path>, columns: Option<&str>) -> Result<()> {
    let cols: Vec<&str> = match columns {
        Some(c) => c.split(',').map(str::trim).collect(),
        None => fedaa::output::DEFAULT_PLOT_COLUMNS.to_vec(),
    };
    let out = output.map_or_else(|| input.with_extension("svg"), Path::to_path_buf);
    plot_csv(input, &out, &cols)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let checks = fedaa::selftest::run_all();
    let mut failed = 0;
    for c in &checks {
        println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(FedError::Internal(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FEDAA_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| FedError::config(format!("FEDAA_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| FedError::Internal(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep { common, grid, seeds } => cmd_sweep(common, grid, seeds.as_deref()),
        Command::Report { input, output, columns } => cmd_report(input, output.as_deref(), columns.as_deref()),
        Command::Selftest => cmd_selftest(),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
