use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rlbus_bench::benchmark::Benchmark;
use rlbus_bench::config::{RunConfig, ScenarioId};
use rlbus_bench::export::{export_set_grid, write_value_grid};
use rlbus_bench::scenario::run_scenario;
use rlbus_bench::verify::{run_verify, VerifySettings};
use rlbus_bench::{BenchError, Result};
use rlbus_core::backup::BackupSuite;
use rlbus_core::dynamics::Vector;
use rlbus_core::nn::Mlp;
use rlbus_core::shield::{shield_control, ShieldBranch, ShieldState};

#[derive(Parser)]
#[command(name = "rlbus", about = "Safe exploration with learned backup policies on the inverted pendulum")]
struct Cli {
    /// TOML run configuration; every field defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for single-file commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    deterministic: Option<bool>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one scenario and write metrics, set exports, weights and a manifest.
    Train {
        #[arg(long, value_parser = parse_scenario)]
        scenario: Option<ScenarioId>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Add the reach-avoid oracle column to set exports.
        #[arg(long)]
        with_oracle: bool,
    },
    /// Apply the shield to rows `x1,x2,u_d` of a CSV, in order, carrying the
    /// switching state from row to row.
    ShieldEval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        backup_weights: Option<PathBuf>,
    },
    /// Solve the reach-avoid oracle and write `value_grid.csv` and `value_grid.json`.
    HjSolve,
    /// Export the set grid for the designed suite, plus a neural backup when given.
    ExportSets {
        #[arg(long)]
        backup_weights: Option<PathBuf>,
        #[arg(long)]
        with_oracle: bool,
    },
    /// Spot-check the safety properties; exits with code 3 on a failure.
    Verify {
        #[arg(long)]
        backup_weights: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
}

fn parse_scenario(s: &str) -> std::result::Result<ScenarioId, String> {
    match s {
        "sac" => Ok(ScenarioId::Sac),
        "sac_bcbf" => Ok(ScenarioId::SacBcbf),
        "sac_rlbus" => Ok(ScenarioId::SacRlbus),
        _ => Err(format!("unknown scenario {s:?}; expected sac, sac_bcbf or sac_rlbus")),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.deterministic {
        cfg.deterministic = d;
    }
    Ok(cfg)
}

fn suite_with_weights(bench: &Benchmark, weights: Option<&Path>) -> Result<BackupSuite<2, 1>> {
    let neural = match weights {
        Some(p) => {
            let (net, _) = Mlp::read_from(BufReader::new(File::open(p)?))?;
            Some(bench.neural_from_net(net)?)
        }
        None => None,
    };
    bench.suite(neural)
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::Train { scenario, episodes, with_oracle } => {
            if let Some(s) = scenario {
                cfg.scenario = *s;
            }
            if let Some(e) = episodes {
                cfg.episodes = *e;
            }
            let dir = out_path(cli, &format!("runs/{}_seed{}", cfg.scenario.name(), cfg.seed));
            let oracle = if *with_oracle { Some(Benchmark::new(cfg.clone())?.solve_hj()?.0) } else { None };
            let run = run_scenario(cfg, &dir, oracle.as_ref())?;
            let last = run.records.last();
            println!(
                "{}: {} episodes, {} violations, final return {:.3}, epsilon {:.6}, wrote {}",
                run.manifest.scenario,
                run.records.len(),
                run.total_violations(),
                last.map_or(f64::NAN, |r| r.ret),
                run.manifest.epsilon,
                dir.display()
            );
        }
        Command::ShieldEval { input, backup_weights } => {
            let bench = Benchmark::new(cfg)?;
            let suite = suite_with_weights(&bench, backup_weights.as_deref())?;
            let barrier = bench.barrier(&suite)?;
            let mut reader = csv::Reader::from_path(input)?;
            let headers = reader.headers()?.clone();
            let col = |name: &str| {
                headers.iter().position(|h| h == name).ok_or_else(|| BenchError::Input(format!("missing column {name}")))
            };
            let (c1, c2, cu) = (col("x1")?, col("x2")?, col("u_d")?);
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out_path(cli, "shield_eval.csv"))?));
            let mut header: Vec<String> =
                ["x1", "x2", "u_d", "u", "h", "gamma", "branch", "backup_index"].iter().map(|s| s.to_string()).collect();
            header.extend((1..=suite.len()).map(|j| format!("h_{j}")));
            w.write_record(&header)?;
            let mut state = ShieldState::new();
            for (row, rec) in reader.records().enumerate() {
                let rec = rec?;
                let num = |c: usize| -> Result<f64> {
                    rec.get(c)
                        .and_then(|v| v.trim().parse::<f64>().ok())
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| BenchError::Input(format!("row {}: bad number in column {c}", row + 1)))
                };
                let x = Vector::<2>::new(num(c1)?, num(c2)?);
                let u_d = Vector::<1>::new(num(cu)?);
                let out = shield_control(&barrier, &u_d, &x, state)?;
                state = out.state;
                let branch = match out.branch {
                    ShieldBranch::Blended => "blended",
                    ShieldBranch::Backup => "backup",
                };
                let mut row = vec![
                    format!("{:e}", x[0]),
                    format!("{:e}", x[1]),
                    format!("{:e}", u_d[0]),
                    format!("{:e}", out.u[0]),
                    format!("{:e}", out.eval.h),
                    format!("{:e}", out.eval.gamma),
                    branch.to_string(),
                    out.state.q.map(|q| q.to_string()).unwrap_or_default(),
                ];
                row.extend(out.eval.h_j.iter().map(|h| format!("{h:e}")));
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        Command::HjSolve => {
            let bench = Benchmark::new(cfg)?;
            let dir = out_path(cli, "hj");
            std::fs::create_dir_all(&dir)?;
            let (grid, report) = bench.solve_hj()?;
            let side = write_value_grid(&grid, &report, &dir.join("value_grid.csv"), &dir.join("value_grid.json"))?;
            println!("solved {} steps, area {:.4}, interpolation bound {:.3e}", side.steps, side.superlevel_area, side.delta_grid);
        }
        Command::ExportSets { backup_weights, with_oracle } => {
            let bench = Benchmark::new(cfg)?;
            let suite = suite_with_weights(&bench, backup_weights.as_deref())?;
            let oracle = if *with_oracle { Some(bench.solve_hj()?.0) } else { None };
            if oracle.is_none() {
                eprintln!("warning: no oracle grid requested; the V_hj column is omitted");
            }
            let file = BufWriter::new(File::create(out_path(cli, "sets.csv"))?);
            let summary = export_set_grid(&bench, &suite, oracle.as_ref(), bench.cfg.snapshots.per_dim, file)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Verify { backup_weights, samples } => {
            let bench = Benchmark::new(cfg)?;
            let suite = suite_with_weights(&bench, backup_weights.as_deref())?;
            let settings = VerifySettings { samples: *samples, seed: bench.cfg.seed, ..Default::default() };
            let report = run_verify(&bench, &suite, &settings)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if !report.passed() {
                return Err(BenchError::SafetyViolation("one or more checks failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
