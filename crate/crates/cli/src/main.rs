use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rgpdkf::harness::{self, io, HarnessConfig};
use rgpdkf::metrics::evaluate;
use rgpdkf::{EstimatorKind, ScenarioId};

#[derive(Parser)]
#[command(name = "rgpdkf", version, about = "RGP-dKF benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full scenario x estimator x seed matrix.
    Run {
        #[command(flatten)]
        common: Common,
        /// Print measured metrics next to the reference table.
        #[arg(long = "paper-compare")]
        compare: bool,
    },
    /// Run a single cell.
    Scenario {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "S2")]
        scenario: ScenarioId,
        #[arg(long, default_value = "rgp-dkf")]
        estimator: EstimatorKind,
    },
    /// Grid-search the baseline's sigma_y,GP on the tuning seed.
    SweepSigmaYgp {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "S1")]
        scenario: ScenarioId,
    },
    /// Export GP sweep tables at the configured snapshot times.
    Snapshot {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "S2")]
        scenario: ScenarioId,
        #[arg(long, default_value = "rgp-dkf")]
        estimator: EstimatorKind,
        /// Snapshot times in seconds (overrides the config).
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
    },
    /// Check a config file and print it with all defaults filled in.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single seed index.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed range, `N..M` (exclusive) or `N..=M`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate and print the plan without running anything.
    #[arg(long)]
    dry_run: bool,
}

impl Common {
    fn load(&self) -> Result<HarnessConfig> {
        let mut cfg = match &self.config {
            Some(p) => HarnessConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => HarnessConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.run.seeds = vec![s];
        }
        if let Some(r) = &self.seeds {
            cfg.run.seeds = harness::parse_seed_range(r)?;
        }
        if let Some(o) = &self.out {
            cfg.run.output_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { common, compare } => {
            let cfg = common.load()?;
            if common.dry_run {
                let pairs = cfg
                    .run
                    .scenarios
                    .iter()
                    .flat_map(|&s| cfg.run.estimators.iter().filter(move |e| e.applies_to(s)))
                    .count();
                let cells = pairs * cfg.run.seeds.len();
                println!("config ok: {cells} cells -> {}", cfg.run.output_dir.display());
                return Ok(());
            }
            let outcome = harness::run(&cfg)?;
            for row in &outcome.report.summary {
                println!(
                    "{} {:<15} rmse {:.4} ± {:.4}  nll {:.4} ± {:.4}  ({} seeds)",
                    row.scenario, row.estimator, row.rmse.mean, row.rmse.std, row.nll.mean, row.nll.std, row.seeds
                );
            }
            for (s, e) in &outcome.report.skipped {
                println!("{s} {e:<15} not applicable");
            }
            for f in &outcome.report.failures {
                eprintln!("failed: {} {} seed {}: {}", f.scenario, f.estimator, f.seed, f.error);
            }
            if compare {
                println!();
                print!("{}", harness::reference_comparison(&outcome.report));
            }
            println!("wrote {}", outcome.output_dir.join("report.json").display());
        }
        Command::Scenario {
            common,
            scenario,
            estimator,
        } => {
            let cfg = common.load()?;
            let seed = single_seed(&cfg)?;
            if common.dry_run {
                println!("config ok: {scenario} {estimator} seed {seed}");
                return Ok(());
            }
            let sigma = baseline_sigma(&cfg, scenario, estimator)?;
            let rec = harness::run_cell(&cfg, scenario, estimator, seed, sigma)?;
            let out = &cfg.run.output_dir;
            std::fs::create_dir_all(out)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
            let cell = harness::write_cell_artifacts(&cfg, &rec, seed, out)?;
            println!(
                "{scenario} {estimator} seed {seed}: rmse {:.4} nll {:.4} state_rmse {:.4}",
                cell.metrics.rmse, cell.metrics.nll, cell.metrics.state_rmse
            );
        }
        Command::SweepSigmaYgp { common, scenario } => {
            let mut cfg = common.load()?;
            if let Some(s) = common.seed {
                cfg.tuning.seed = s;
            }
            if common.dry_run {
                let n = cfg.tuning.candidates(cfg.estimator.kernel.signal_std).len();
                println!("config ok: {n} candidates on {scenario}");
                return Ok(());
            }
            let sweep = harness::tune_sigma_y_gp(&cfg, scenario)?;
            for (c, r) in sweep.candidates.iter().zip(&sweep.rmse) {
                println!("sigma_y_gp {c:>12.6}  rmse {r:.4}");
            }
            println!("best: {}", sweep.best);
            std::fs::create_dir_all(&cfg.run.output_dir)?;
            io::write_json(&sweep, &cfg.run.output_dir.join(format!("sigma_y_gp_{scenario}.json")))?;
        }
        Command::Snapshot {
            common,
            scenario,
            estimator,
            times,
        } => {
            let mut cfg = common.load()?;
            if !times.is_empty() {
                cfg.sim.snapshot_times = times;
            }
            let seed = single_seed(&cfg)?;
            if common.dry_run {
                println!("config ok: snapshots at {:?}", cfg.sim.snapshot_times);
                return Ok(());
            }
            let sigma = baseline_sigma(&cfg, scenario, estimator)?;
            let rec = harness::run_cell(&cfg, scenario, estimator, seed, sigma)?;
            let gp = cfg.estimator.gp_model()?;
            let dir = cfg.run.output_dir.join("plots");
            std::fs::create_dir_all(&dir)?;
            for snap in &rec.snapshots {
                let (ev, pts) = harness::evaluate_snapshot(&cfg, &gp, snap)?;
                let path = dir.join(format!("{scenario}_{estimator}_seed{seed}_t{}.csv", snap.time));
                io::write_sweep_csv(&pts, &path)?;
                print!(
                    "t = {:>6} s: coverage {:.3}, sweep rmse {:.4}",
                    ev.time, ev.coverage, ev.sweep_rmse
                );
                if let (Some((a, b)), Some(c), Some(r)) = (ev.visited, ev.visited_coverage, ev.visited_rmse) {
                    print!("; visited [{a:.3}, {b:.3}]: coverage {c:.3}, sweep rmse {r:.4}");
                }
                println!(" -> {}", path.display());
            }
            let m = evaluate(&rec, cfg.run.warmup)?;
            println!("run rmse {:.4} nll {:.4}", m.rmse, m.nll);
        }
        Command::Validate { config } => {
            let cfg = match &config {
                Some(p) => HarnessConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => HarnessConfig::default(),
            };
            print!("{}", cfg.to_toml()?);
            eprintln!("config ok");
        }
    }
    Ok(())
}

fn single_seed(cfg: &HarnessConfig) -> Result<u64> {
    match cfg.run.seeds.as_slice() {
        [s] => Ok(*s),
        [s, ..] => {
            eprintln!("using the first of {} seeds", cfg.run.seeds.len());
            Ok(*s)
        }
        [] => bail!("no seed given"),
    }
}

fn baseline_sigma(cfg: &HarnessConfig, scenario: ScenarioId, estimator: EstimatorKind) -> Result<Option<f64>> {
    if estimator != EstimatorKind::RgpB || cfg.estimator.sigma_y_gp.is_some() {
        return Ok(cfg.estimator.sigma_y_gp);
    }
    let sweep = harness::tune_sigma_y_gp(cfg, scenario)?;
    Ok(Some(sweep.best))
}
