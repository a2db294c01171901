//! Subcommand implementations. Each writes its report to `out` and returns
//! structured results so the acceptance suite can inspect them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use stgf_core::check::{self, CheckConfig, SuiteReport};
use stgf_core::controller::{solve_equilibrium, EquilibriumResult};
use stgf_core::sim::{run_scenario, SimRecord};

use crate::config::{ControllerType, Resolved, RunConfig};
use crate::csvio;
use crate::CliError;

/// KKT tolerance used by the equilibrium command.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Emit the `# generated` line and real solve times. Without it the CSV
    /// depends on the configuration only.
    pub timestamp: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { timestamp: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub kind: ControllerType,
    pub record: SimRecord,
    pub max_current: f64,
    pub median_solve: Duration,
    pub max_solve: Duration,
    pub qp_infeasible_cycles: usize,
    pub limiter_cycles: usize,
}

impl RunSummary {
    pub fn new(kind: ControllerType, record: SimRecord) -> Self {
        let mut times = record.solve_times();
        times.sort_unstable();
        Self {
            kind,
            max_current: record.max_current(),
            median_solve: percentile(&times, 50.0),
            max_solve: times.last().copied().unwrap_or_default(),
            qp_infeasible_cycles: record.rows.iter().filter(|r| r.qp_infeasible).count(),
            limiter_cycles: record.rows.iter().filter(|r| r.limiter_active).count(),
            record,
        }
    }
}

fn kind_name(kind: ControllerType) -> &'static str {
    match kind {
        ControllerType::Stgf => "stgf",
        ControllerType::Droop => "droop",
        ControllerType::OpenLoop => "open_loop",
    }
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[Duration], pct: f64) -> Duration {
    if sorted.is_empty() {
        return Duration::ZERO;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn us(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

pub fn simulate(res: &Resolved, kind: ControllerType) -> Result<SimRecord, CliError> {
    Ok(run_scenario(
        &res.scenario,
        &res.controller(kind),
        &res.plant,
        &res.cost,
    )?)
}

fn write_summary<W: Write>(out: &mut W, s: &RunSummary) -> std::io::Result<()> {
    writeln!(out, "controller              {}", kind_name(s.kind))?;
    writeln!(out, "steps                   {}", s.record.rows.len())?;
    if let Some(last) = s.record.last() {
        writeln!(out, "final P (pu)            {:.6}", last.p)?;
        writeln!(out, "final Q (pu)            {:.6}", last.q)?;
        writeln!(out, "final V (pu)            {:.6}", last.input.v)?;
        writeln!(out, "final omega (rad/s)     {:.4}", last.input.omega)?;
        writeln!(out, "final stage cost        {:.6}", last.stage_cost)?;
    }
    writeln!(out, "max |I| (pu)            {:.6}", s.max_current)?;
    writeln!(out, "solve time median (us)  {:.1}", us(s.median_solve))?;
    writeln!(out, "solve time max (us)     {:.1}", us(s.max_solve))?;
    match s.record.first_feasible_cycle {
        Some(k) => writeln!(out, "first feasible cycle    {k}")?,
        None => writeln!(out, "first feasible cycle    none")?,
    }
    writeln!(out, "qp infeasible cycles    {}", s.qp_infeasible_cycles)?;
    writeln!(out, "limiter cycles          {}", s.limiter_cycles)
}

/// Run the configured scenario, write the CSV to `csv_path` and a summary to
/// `out`. `kind` overrides `ctrl.type`.
pub fn cmd_run<W: Write>(
    cfg: &RunConfig,
    kind: Option<ControllerType>,
    csv_path: &Path,
    opts: RunOptions,
    out: &mut W,
) -> Result<RunSummary, CliError> {
    let res = cfg.resolve()?;
    let kind = kind.unwrap_or(res.kind);
    let record = simulate(&res, kind)?;
    let file = File::create(csv_path)
        .map_err(|e| CliError::Failed(format!("cannot create {}: {e}", csv_path.display())))?;
    let stamp = opts.timestamp.then(|| {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        format!("unix {secs}")
    });
    csvio::write_record(
        BufWriter::new(file),
        &record,
        stamp.as_deref(),
        opts.timestamp,
    )?;
    let summary = RunSummary::new(kind, record);
    write_summary(out, &summary)?;
    writeln!(out, "csv                     {}", csv_path.display())?;
    Ok(summary)
}

/// Optimal steady state for the references of the last scheduled step.
pub fn cmd_equilibrium<W: Write>(
    cfg: &RunConfig,
    out: &mut W,
) -> Result<EquilibriumResult, CliError> {
    let res = cfg.resolve()?;
    let cost = res.final_cost();
    let eq = solve_equilibrium(&cost, &res.plant, &res.grid, EQUILIBRIUM_TOL)?;
    writeln!(
        out,
        "references              P* = {}, Q* = {}",
        cost.p_ref, cost.q_ref
    )?;
    writeln!(
        out,
        "state                   i_d = {:.9}, i_q = {:.9}, delta = {:.9}",
        eq.state.i_d, eq.state.i_q, eq.state.delta
    )?;
    writeln!(
        out,
        "input                   V = {:.9}, omega = {:.6}",
        eq.input.v, eq.input.omega
    )?;
    writeln!(out, "P achieved (pu)         {:.9}", eq.active_power)?;
    writeln!(out, "Q achieved (pu)         {:.9}", eq.reactive_power)?;
    writeln!(
        out,
        "|I| (pu)                {:.9}",
        eq.state.current_magnitude()
    )?;
    writeln!(out, "cost                    {:.9}", eq.cost)?;
    writeln!(out, "kkt residual            {:.3e}", eq.kkt_residual)?;
    writeln!(out, "limit value             {:.3e}", eq.limit_value)?;
    writeln!(out, "limit multiplier        {:.6e}", eq.limit_multiplier)?;
    writeln!(out, "iterations              {}", eq.iterations)?;
    writeln!(
        out,
        "constraint active       {}",
        if eq.constraint_active() { "yes" } else { "no" }
    )?;
    if !eq.converged {
        return Err(CliError::Failed(format!(
            "equilibrium did not converge: kkt residual {:.3e} > {EQUILIBRIUM_TOL:.0e} (best iterate above)",
            eq.kkt_residual
        )));
    }
    Ok(eq)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub samples: usize,
    pub min: Duration,
    pub median: Duration,
    pub p99: Duration,
    pub max: Duration,
}

impl TimingStats {
    pub fn from_samples(mut t: Vec<Duration>) -> Self {
        t.sort_unstable();
        Self {
            samples: t.len(),
            min: t.first().copied().unwrap_or_default(),
            median: percentile(&t, 50.0),
            p99: percentile(&t, 99.0),
            max: t.last().copied().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub stgf: TimingStats,
    pub stgf_cold: TimingStats,
    pub droop: TimingStats,
}

fn write_stats<W: Write>(out: &mut W, name: &str, s: &TimingStats) -> std::io::Result<()> {
    writeln!(
        out,
        "{name:<12} {:>7} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
        s.samples,
        us(s.min),
        us(s.median),
        us(s.p99),
        us(s.max)
    )
}

/// Per-cycle controller time over `repetitions` runs of the configured
/// scenario, for warm-started STGF, cold-started STGF and droop.
pub fn cmd_bench<W: Write>(
    cfg: &RunConfig,
    repetitions: usize,
    out: &mut W,
) -> Result<BenchReport, CliError> {
    if repetitions == 0 {
        return Err(CliError::Config("repetitions: must be at least 1".into()));
    }
    let mut res = cfg.resolve()?;
    let collect = |res: &Resolved, kind: ControllerType| -> Result<TimingStats, CliError> {
        let mut t = Vec::new();
        for _ in 0..repetitions {
            t.extend(simulate(res, kind)?.solve_times());
        }
        Ok(TimingStats::from_samples(t))
    };
    res.stgf.warm_start = true;
    let stgf = collect(&res, ControllerType::Stgf)?;
    res.stgf.warm_start = false;
    let stgf_cold = collect(&res, ControllerType::Stgf)?;
    let droop = collect(&res, ControllerType::Droop)?;
    let report = BenchReport {
        stgf,
        stgf_cold,
        droop,
    };
    writeln!(
        out,
        "{:<12} {:>7} {:>10} {:>10} {:>10} {:>10}",
        "controller", "samples", "min_us", "median_us", "p99_us", "max_us"
    )?;
    write_stats(out, "stgf", &report.stgf)?;
    write_stats(out, "stgf_cold", &report.stgf_cold)?;
    write_stats(out, "droop", &report.droop)?;
    writeln!(
        out,
        "droop median < stgf median: {}",
        if droop.median < stgf.median {
            "yes"
        } else {
            "no"
        }
    )?;
    writeln!(
        out,
        "warm median <= cold median: {}",
        if stgf.median <= stgf_cold.median {
            "yes"
        } else {
            "no"
        }
    )?;
    Ok(report)
}

/// Run the property suites and the literal-variant diagnostics.
pub fn cmd_check<W: Write>(cfg: &CheckConfig, out: &mut W) -> Result<Vec<SuiteReport>, CliError> {
    let plant = stgf_core::model::PlantParams::default();
    let reports = check::run_all(cfg)?;
    for r in &reports {
        writeln!(out, "{r}")?;
    }
    writeln!(out, "{}", check::literal_alpha_diagnostic(&plant)?)?;
    writeln!(out, "{}", check::literal_coupling_diagnostic(&plant)?)?;
    let failed: Vec<_> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name)
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Failed(format!(
            "failed suites: {}",
            failed.join(", ")
        )));
    }
    Ok(reports)
}
