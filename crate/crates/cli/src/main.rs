//! `rscf` command-line front end.
//!
//! Resolution order, later wins: built-in defaults, `--config` file,
//! `--set` pairs in command-line order, then `--seed` and `--workers`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rscf::harness::{draw_realization, run_experiment, sweep, write_outputs, write_sweep_csv};
use rscf::verify::{verify, VerifyOptions};
use rscf::{Error, ExperimentConfig};

const EXIT_CONFIG: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "rscf",
    version,
    about = "Rate-splitting cell-free MIMO downlink simulator"
)]
struct Cli {
    /// Flat key=value configuration file ('#' starts a comment).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one key (repeatable, applied after the config file).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "results")]
    out: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores (overrides the config).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Print the fully resolved configuration before running.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write results.csv and trials.jsonl.
    Run,
    /// Run one experiment per value of a configuration key.
    Sweep {
        /// Key to vary.
        #[arg(long)]
        key: String,
        /// Values to take, in order (repeatable).
        #[arg(long = "value", required = true, value_name = "VALUE")]
        values: Vec<String>,
    },
    /// Run the verification suite.
    Verify {
        /// Randomized instances per check.
        #[arg(long, default_value_t = VerifyOptions::default().instances)]
        instances: usize,
        /// Perturb the ZF precoder so the orthogonality check must fail.
        #[arg(long, hide = true)]
        corrupt_zf: bool,
    },
    /// Print the clustering of one seeded realization as JSON.
    ClusterReport {
        /// Realization index.
        #[arg(long, default_value_t = 0)]
        realization: usize,
    },
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let mut cfg = ExperimentConfig::default();
            cfg.apply_pairs(text.lines())?;
            cfg
        }
        None => ExperimentConfig::default(),
    };
    let mut problems = Vec::new();
    for pair in &cli.overrides {
        match pair.split_once('=') {
            Some((k, v)) => {
                if let Err(e) = cfg.set(k, v) {
                    problems.push(message(e));
                }
            }
            None => problems.push(format!("--set expects KEY=VALUE, got '{pair}'")),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("\n")));
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn message(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn runtime(e: impl std::fmt::Display) -> (u8, String) {
    (EXIT_RUNTIME, e.to_string())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), (u8, String)> {
    let mut f = BufWriter::new(File::create(path).map_err(runtime)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(runtime)?;
    f.write_all(b"\n").map_err(runtime)?;
    f.flush().map_err(runtime)
}

fn dispatch(cli: &Cli, cfg: &ExperimentConfig, command: &Command) -> Result<(), (u8, String)> {
    match command {
        Command::Run => {
            let out = run_experiment(cfg).map_err(runtime)?;
            write_outputs(&out, &cli.out).map_err(runtime)?;
            println!(
                "wrote {} records to {} ({} redraws, {} dropped trials)",
                out.records.len(),
                cli.out.display(),
                out.redraws,
                out.dropped
            );
        }
        Command::Sweep { key, values } => {
            let runs = sweep(cfg, key, values).map_err(|e| match e {
                Error::Config(_) | Error::InvalidParameter(_) => (EXIT_CONFIG, message(e)),
                other => runtime(other),
            })?;
            for (value, out) in &runs {
                write_outputs(out, &cli.out.join(format!("{key}={value}"))).map_err(runtime)?;
            }
            std::fs::create_dir_all(&cli.out).map_err(runtime)?;
            let f = File::create(cli.out.join("sweep.csv")).map_err(runtime)?;
            write_sweep_csv(key, &runs, BufWriter::new(f)).map_err(runtime)?;
            println!("wrote {} sweep points to {}", runs.len(), cli.out.display());
        }
        Command::Verify {
            instances,
            corrupt_zf,
        } => {
            let opts = VerifyOptions {
                instances: *instances,
                corrupt_zf: *corrupt_zf,
            };
            let report = verify(cfg, &opts).map_err(runtime)?;
            print!("{}", report.to_text());
            if !report.passed() {
                return Err((EXIT_VERIFY, "verification failed".into()));
            }
        }
        Command::ClusterReport { realization } => {
            let real = draw_realization(cfg, *realization, 0).map_err(runtime)?;
            let value = serde_json::json!({
                "seed": cfg.seed,
                "realization": realization,
                "n_clusters": real.partition.n_clusters(),
                "clusters": real.partition.report(),
            });
            if cli.out.as_os_str() == "-" {
                println!("{}", serde_json::to_string_pretty(&value).map_err(runtime)?);
            } else {
                std::fs::create_dir_all(&cli.out).map_err(runtime)?;
                let path = cli.out.join("clusters.json");
                write_json(&path, &value)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            for line in message(e).lines() {
                eprintln!("error: {line}");
            }
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if cli.print_config {
        print!("{}", cfg.to_kv_string());
    }
    let Some(command) = &cli.command else {
        if cli.print_config {
            return ExitCode::SUCCESS;
        }
        eprintln!("error: a subcommand is required (run, sweep, verify, cluster-report)");
        return ExitCode::from(EXIT_CONFIG);
    };
    match dispatch(&cli, &cfg, command) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
