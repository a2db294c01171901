//! Acceptance criteria. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits nonzero if any failed.

use std::process::ExitCode;
use std::time::Instant;

use stgf_core::check::{
    anytime_feasibility_suite, form_equivalence_suite, gradient_suite, qp_oracle_suite,
    CheckConfig, SuiteReport,
};
use stgf_core::model::{power_output, PlantParams};
use stgf_tool::commands::{cmd_bench, cmd_equilibrium, cmd_run, simulate, RunOptions};
use stgf_tool::config::{ControllerType, RunConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn from_suite(r: SuiteReport) -> Outcome {
    outcome(r.passed(), r.to_string().replace('\n', ";"))
}

fn c1_safety() -> Outcome {
    let res = RunConfig::default().resolve().unwrap();
    let t0 = Instant::now();
    let rec = simulate(&res, ControllerType::Stgf).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let max_i = rec.max_current();
    outcome(
        max_i <= 1.001 && secs <= 60.0,
        format!("max |I| = {max_i:.7} pu (limit 1.001), runtime {secs:.2} s (limit 60)"),
    )
}

fn c2_steady_state() -> Outcome {
    let cfg = RunConfig::default();
    let res = cfg.resolve().unwrap();
    let eq = cmd_equilibrium(&cfg, &mut Vec::new()).unwrap();
    let rec = simulate(&res, ControllerType::Stgf).unwrap();
    let last = rec.last().unwrap();
    let (p, q) = power_output(&rec.final_state, &res.grid, &res.plant);
    let w_scale = res.plant.omega_base;
    let dp = (p - eq.active_power).abs();
    let dq = (q - eq.reactive_power).abs();
    let dv = (last.input.v - eq.input.v).abs();
    let dw = (last.input.omega - eq.input.omega).abs() / w_scale;
    let worst = dp.max(dq).max(dv).max(dw);
    outcome(
        worst <= 0.02 && eq.kkt_residual <= 1e-6,
        format!(
            "|dP| {dp:.4}, |dQ| {dq:.4}, |dV| {dv:.4}, |dw|/w_base {dw:.5} (limit 0.02); \
             closed loop P {p:.4} Q {q:.4} vs optimum P {:.4} Q {:.4}; kkt {:.1e}",
            eq.active_power, eq.reactive_power, eq.kkt_residual
        ),
    )
}

fn c3_constraint_active() -> Outcome {
    let eq = cmd_equilibrium(&RunConfig::default(), &mut Vec::new()).unwrap();
    let g = eq.limit_value;
    outcome(
        (-1e-4..=0.0).contains(&g) && eq.limit_multiplier > 0.0,
        format!(
            "g = {g:.3e} (in [-1e-4, 0]), multiplier {:.4}",
            eq.limit_multiplier
        ),
    )
}

fn c4_derivatives() -> Outcome {
    let cfg = CheckConfig::default();
    from_suite(gradient_suite(&PlantParams::default(), 100, cfg.seed).unwrap())
}

fn c5_qp() -> Outcome {
    let cfg = CheckConfig::default();
    from_suite(qp_oracle_suite(500, cfg.seed).unwrap())
}

fn c6_form_equivalence() -> Outcome {
    let cfg = CheckConfig::default();
    from_suite(form_equivalence_suite(&PlantParams::default(), 100, cfg.seed).unwrap())
}

fn c7_anytime() -> Outcome {
    let cfg = CheckConfig::default();
    from_suite(anytime_feasibility_suite(&PlantParams::default(), 100, cfg.seed).unwrap())
}

fn c8_droop_ordering() -> Outcome {
    let res = RunConfig::default().resolve().unwrap();
    let stgf = simulate(&res, ControllerType::Stgf).unwrap();
    let droop = simulate(&res, ControllerType::Droop).unwrap();
    let cs = stgf.last().unwrap().stage_cost;
    let cd = droop.last().unwrap().stage_cost;
    let max_i = droop.max_current();
    outcome(
        cd >= 1.05 * cs && max_i <= 1.05,
        format!(
            "droop cost {cd:.4} vs stgf {cs:.4} (ratio {:.4}, need >= 1.05); droop max |I| {max_i:.4} (limit 1.05)",
            cd / cs
        ),
    )
}

fn c9_timing() -> Outcome {
    let mut out = Vec::new();
    let b = cmd_bench(&RunConfig::default(), 1, &mut out).unwrap();
    let us = |d: std::time::Duration| d.as_secs_f64() * 1e6;
    outcome(
        b.droop.median < b.stgf.median && b.stgf.samples == 300 && b.stgf.p99 >= b.stgf.median,
        format!(
            "droop median {:.2} us < stgf median {:.1} us; stgf p99 {:.1} us; warm {:.1} vs cold {:.1} us median",
            us(b.droop.median),
            us(b.stgf.median),
            us(b.stgf.p99),
            us(b.stgf.median),
            us(b.stgf_cold.median)
        ),
    )
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { timestamp: false };
    let mut bytes = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let path = dir.path().join(name);
        cmd_run(&RunConfig::default(), None, &path, opts, &mut Vec::new()).unwrap();
        bytes.push(std::fs::read(&path).unwrap());
    }
    let same = bytes[0] == bytes[1];
    outcome(
        same && !bytes[0].is_empty(),
        format!("{} bytes, identical: {same}", bytes[0].len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("1 safety under infeasible reference step", c1_safety),
        ("2 steady-state optimality", c2_steady_state),
        ("3 constraint activity at the optimum", c3_constraint_active),
        ("4 derivative correctness", c4_derivatives),
        ("5 QP correctness", c5_qp),
        ("6 SGF form equivalence", c6_form_equivalence),
        ("7 anytime feasibility", c7_anytime),
        ("8 baseline ordering", c8_droop_ordering),
        ("9 timing report", c9_timing),
        ("10 determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let o = run();
        if !o.passed {
            failed += 1;
        }
        println!(
            "[{}] criterion {name}: {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
