//! Monte Carlo experiment runner and report assembly.

pub mod config;
pub mod io;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, RunMetrics, Spread};
use crate::rgp::{GpModel, RgpState};
use crate::sim::{
    hidden_z, run_scenario, EstimatorKind, EstimatorSettings, GpSnapshot, RunRecord, ScenarioConfig, ScenarioId,
};

pub use config::{derive_seed, parse_seed_range, HarnessConfig, RunSettings, TuningSettings};
pub use io::SweepPoint;

/// Dense sweep of the GP prediction over `[lo, hi]`, with the variance
/// inflated by `sigma_r^2`.
pub fn snapshot_gp(
    gp: &GpModel,
    state: &RgpState,
    residual_std: f64,
    lo: f64,
    hi: f64,
    resolution: usize,
) -> Result<Vec<SweepPoint>> {
    let n = resolution.max(2);
    (0..n)
        .map(|i| {
            let zeta = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let inf = gp.infer(state, &[zeta])?;
            Ok(SweepPoint {
                zeta,
                mean: inf.mean,
                std: (inf.var.max(0.0) + residual_std * residual_std).sqrt(),
                hidden: hidden_z(zeta),
            })
        })
        .collect()
}

/// Fraction of sweep points whose hidden value lies inside the 2-sigma band.
pub fn coverage(points: &[SweepPoint]) -> f64 {
    points.iter().filter(|p| p.covers_hidden()).count() as f64 / points.len().max(1) as f64
}

/// RMSE of the sweep mean against the hidden function.
pub fn sweep_rmse(points: &[SweepPoint]) -> f64 {
    let ss: f64 = points.iter().map(|p| (p.mean - p.hidden).powi(2)).sum();
    (ss / points.len().max(1) as f64).sqrt()
}

/// Sweep statistics of one GP snapshot, over the whole grid span and over
/// the `zeta` range visited up to the snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEval {
    pub time: f64,
    pub coverage: f64,
    pub sweep_rmse: f64,
    pub visited: Option<(f64, f64)>,
    pub visited_coverage: Option<f64>,
    pub visited_rmse: Option<f64>,
}

/// Sweeps a snapshot over the grid span and, if any input was seen, over the
/// visited range. Returns the grid-span table alongside the statistics.
pub fn evaluate_snapshot(
    cfg: &HarnessConfig,
    gp: &GpModel,
    snap: &GpSnapshot,
) -> Result<(SnapshotEval, Vec<SweepPoint>)> {
    let sigma_r = cfg.estimator.residual_std();
    let res = cfg.run.snapshot_resolution;
    let (lo, hi) = (cfg.estimator.grid.lower[0], cfg.estimator.grid.upper[0]);
    let pts = snapshot_gp(gp, &snap.state, sigma_r, lo, hi, res)?;
    let mut eval = SnapshotEval {
        time: snap.time,
        coverage: coverage(&pts),
        sweep_rmse: sweep_rmse(&pts),
        visited: snap.visited,
        visited_coverage: None,
        visited_rmse: None,
    };
    if let Some((a, b)) = snap.visited {
        let vis = snapshot_gp(gp, &snap.state, sigma_r, a, b, res)?;
        eval.visited_coverage = Some(coverage(&vis));
        eval.visited_rmse = Some(sweep_rmse(&vis));
    }
    Ok((eval, pts))
}

/// Outcome of the baseline `sigma_y,GP` grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSweep {
    pub scenario: ScenarioId,
    pub candidates: Vec<f64>,
    pub rmse: Vec<f64>,
    pub best: f64,
}

/// Grid search of the baseline design noise on the tuning seed.
pub fn tune_sigma_y_gp(cfg: &HarnessConfig, scenario: ScenarioId) -> Result<SigmaSweep> {
    let candidates = cfg.tuning.candidates(cfg.estimator.kernel.signal_std);
    let scen = ScenarioConfig {
        id: scenario,
        seed: cfg.run_seed(cfg.tuning.seed),
        sim: sim_without_snapshots(cfg),
    };
    let rmse: Vec<f64> = candidates
        .par_iter()
        .map(|&s| {
            let mut est = cfg.estimator.clone();
            est.sigma_y_gp = Some(s);
            let rec = run_scenario(&scen, EstimatorKind::RgpB, &est, None)?;
            Ok(evaluate(&rec, cfg.run.warmup)?.rmse)
        })
        .collect::<Result<_>>()?;
    let best_idx = rmse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(SigmaSweep {
        scenario,
        best: candidates[best_idx],
        candidates,
        rmse,
    })
}

fn sim_without_snapshots(cfg: &HarnessConfig) -> crate::sim::SimSettings {
    let mut sim = cfg.sim.clone();
    sim.snapshot_times.clear();
    sim
}

/// One evaluated `(scenario, estimator, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scenario: ScenarioId,
    pub estimator: EstimatorKind,
    pub seed: u64,
    pub run_seed: u64,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub scenario: ScenarioId,
    pub estimator: EstimatorKind,
    pub seed: u64,
    pub error: String,
}

/// Monte Carlo aggregate per scenario and estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: ScenarioId,
    pub estimator: EstimatorKind,
    pub rmse: Spread,
    pub nll: Spread,
    pub state_rmse: Spread,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub warmup: f64,
    pub sigma_y_gp: BTreeMap<ScenarioId, f64>,
    pub cells: Vec<CellResult>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
    /// Pairs left out because the estimator does not apply to the scenario.
    #[serde(default)]
    pub skipped: Vec<(ScenarioId, EstimatorKind)>,
}

impl MetricReport {
    pub fn from_cells(
        warmup: f64,
        sigma_y_gp: BTreeMap<ScenarioId, f64>,
        mut cells: Vec<CellResult>,
        failures: Vec<CellFailure>,
    ) -> Self {
        cells.sort_by_key(|c| (c.scenario, c.estimator, c.seed));
        let mut groups: BTreeMap<(ScenarioId, EstimatorKind), Vec<&CellResult>> = BTreeMap::new();
        for c in &cells {
            groups.entry((c.scenario, c.estimator)).or_default().push(c);
        }
        let summary = groups
            .into_iter()
            .map(|((scenario, estimator), cs)| {
                let pick = |f: fn(&RunMetrics) -> f64| cs.iter().map(|c| f(&c.metrics)).collect::<Vec<_>>();
                SummaryRow {
                    scenario,
                    estimator,
                    rmse: Spread::of(&pick(|m| m.rmse)),
                    nll: Spread::of(&pick(|m| m.nll)),
                    state_rmse: Spread::of(&pick(|m| m.state_rmse)),
                    seeds: cs.len(),
                }
            })
            .collect();
        Self {
            warmup,
            sigma_y_gp,
            cells,
            summary,
            failures,
            skipped: Vec::new(),
        }
    }

    pub fn row(&self, scenario: ScenarioId, estimator: EstimatorKind) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.scenario == scenario && r.estimator == estimator)
    }
}

/// Reference values of the comparison table: `(RMSE, NLL)` per scenario,
/// `None` where a method does not apply.
pub struct ReferenceRow {
    pub label: &'static str,
    pub estimator: Option<EstimatorKind>,
    pub values: [Option<(f64, f64)>; 3],
}

pub const REFERENCE_TABLE: [ReferenceRow; 3] = [
    ReferenceRow {
        label: "RGP-B",
        estimator: Some(EstimatorKind::RgpB),
        values: [Some((1.30, 2.5)), Some((0.14, -0.77)), None],
    },
    ReferenceRow {
        label: "RGP-KF",
        estimator: None,
        values: [Some((0.71, 1.87)), Some((0.12, -0.41)), Some((0.84, 2.49))],
    },
    ReferenceRow {
        label: "RGP-dKF",
        estimator: Some(EstimatorKind::RgpDkf),
        values: [Some((0.32, 1.19)), Some((0.10, 1.16)), Some((0.46, 1.18))],
    },
];

fn scenario_index(s: ScenarioId) -> usize {
    match s {
        ScenarioId::S1 => 0,
        ScenarioId::S2 => 1,
        ScenarioId::S3 => 2,
    }
}

pub fn reference_metrics(estimator: EstimatorKind, scenario: ScenarioId) -> Option<(f64, f64)> {
    REFERENCE_TABLE
        .iter()
        .find(|r| r.estimator == Some(estimator))
        .and_then(|r| r.values[scenario_index(scenario)])
}

/// Text table of measured metrics next to the reference values.
pub fn reference_comparison(report: &MetricReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:<4} {:>18} {:>8} {:>18} {:>8}", "method", "scen", "RMSE measured", "ref", "NLL measured", "ref");
    let fmt_ref = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
    for row in &REFERENCE_TABLE {
        for s in ScenarioId::ALL {
            let reference = row.values[scenario_index(s)];
            let measured = row.estimator.and_then(|e| report.row(s, e));
            let (rm, nl) = match measured {
                Some(m) => (
                    format!("{:.3} ± {:.3}", m.rmse.mean, m.rmse.std),
                    format!("{:.3} ± {:.3}", m.nll.mean, m.nll.std),
                ),
                None => ("-".to_string(), "-".to_string()),
            };
            let _ = writeln!(
                out,
                "{:<10} {:<4} {:>18} {:>8} {:>18} {:>8}",
                row.label,
                s,
                rm,
                fmt_ref(reference.map(|r| r.0)),
                nl,
                fmt_ref(reference.map(|r| r.1))
            );
        }
    }
    out
}

fn cell_stem(scenario: ScenarioId, estimator: EstimatorKind, seed: u64) -> String {
    format!("{scenario}_{estimator}_seed{seed}")
}

/// Runs one cell, using `sigma_y_gp` for the baseline.
pub fn run_cell(
    cfg: &HarnessConfig,
    scenario: ScenarioId,
    estimator: EstimatorKind,
    seed: u64,
    sigma_y_gp: Option<f64>,
) -> Result<RunRecord> {
    let scen = ScenarioConfig {
        id: scenario,
        seed: cfg.run_seed(seed),
        sim: cfg.sim.clone(),
    };
    let mut est: EstimatorSettings = cfg.estimator.clone();
    if sigma_y_gp.is_some() {
        est.sigma_y_gp = sigma_y_gp;
    }
    run_scenario(&scen, estimator, &est, None)
}

/// Writes a cell's CSV run record, JSON metrics and sweep tables.
pub fn write_cell_artifacts(cfg: &HarnessConfig, rec: &RunRecord, seed: u64, out: &Path) -> Result<CellResult> {
    let stem = cell_stem(rec.scenario, rec.estimator, seed);
    let runs = out.join("runs");
    let plots = out.join("plots");
    std::fs::create_dir_all(&runs)?;
    std::fs::create_dir_all(&plots)?;

    let metrics = evaluate(rec, cfg.run.warmup)?;
    let cell = CellResult {
        scenario: rec.scenario,
        estimator: rec.estimator,
        seed,
        run_seed: rec.seed,
        metrics,
    };
    io::write_run_csv(rec, &runs.join(format!("{stem}.csv")))?;
    io::write_json(&cell, &runs.join(format!("{stem}.json")))?;

    let gp = cfg.estimator.gp_model()?;
    for snap in &rec.snapshots {
        let (_, pts) = evaluate_snapshot(cfg, &gp, snap)?;
        io::write_sweep_csv(&pts, &plots.join(format!("{stem}_t{}.csv", snap.time)))?;
    }
    Ok(cell)
}

/// Artifacts of a full matrix run.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: MetricReport,
    pub output_dir: PathBuf,
}

/// Executes every `(scenario, estimator, seed)` cell in parallel. Failed
/// cells are recorded in the report and do not stop the run.
pub fn run(cfg: &HarnessConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = cfg.run.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;

    let mut sigma = BTreeMap::new();
    if cfg.run.estimators.contains(&EstimatorKind::RgpB) {
        for &s in &cfg.run.scenarios {
            if !EstimatorKind::RgpB.applies_to(s) {
                continue;
            }
            let chosen = match cfg.estimator.sigma_y_gp {
                Some(v) => v,
                None => {
                    let sweep = tune_sigma_y_gp(cfg, s)?;
                    io::write_json(&sweep, &out.join(format!("sigma_y_gp_{s}.json")))?;
                    sweep.best
                }
            };
            sigma.insert(s, chosen);
        }
    }

    let (mut jobs, mut skipped) = (Vec::new(), Vec::new());
    for &s in &cfg.run.scenarios {
        for &e in &cfg.run.estimators {
            if !e.applies_to(s) {
                skipped.push((s, e));
                continue;
            }
            for &seed in &cfg.run.seeds {
                jobs.push((s, e, seed));
            }
        }
    }

    let results: Vec<std::result::Result<CellResult, CellFailure>> = jobs
        .par_iter()
        .map(|&(s, e, seed)| {
            let attempt = run_cell(cfg, s, e, seed, sigma.get(&s).copied())
                .and_then(|rec| write_cell_artifacts(cfg, &rec, seed, &out));
            attempt.map_err(|err| CellFailure {
                scenario: s,
                estimator: e,
                seed,
                error: err.to_string(),
            })
        })
        .collect();

    let (mut cells, mut failures) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(c) => cells.push(c),
            Err(f) => failures.push(f),
        }
    }
    failures.sort_by_key(|f| (f.scenario, f.estimator, f.seed));
    let mut report = MetricReport::from_cells(cfg.run.warmup, sigma, cells, failures);
    report.skipped = skipped;
    io::write_json(&report, &out.join("report.json"))?;
    Ok(RunOutcome { report, output_dir: out })
}

/// Rebuilds the report from the CSV run records of a finished run.
pub fn report_from_disk(cfg: &HarnessConfig, out: &Path, previous: &MetricReport) -> Result<MetricReport> {
    let cells = previous
        .cells
        .iter()
        .map(|c| {
            let path = out.join("runs").join(format!("{}.csv", cell_stem(c.scenario, c.estimator, c.seed)));
            let metrics = io::metrics_from_csv(&path, c.scenario, c.estimator, cfg.run.warmup)?;
            Ok(CellResult { metrics, ..c.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricReport::from_cells(
        cfg.run.warmup,
        previous.sigma_y_gp.clone(),
        cells,
        previous.failures.clone(),
    );
    report.skipped = previous.skipped.clone();
    Ok(report)
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(Error::from)
}
