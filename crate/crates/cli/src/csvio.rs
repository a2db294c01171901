//! Time-series CSV export and import.

use std::io::{Read, Write};

use stgf_core::sim::{SimRecord, SimRow};

use crate::CliError;

pub const COLUMNS: [&str; 14] = [
    "t_s",
    "i_d_pu",
    "i_q_pu",
    "delta_rad",
    "v_pu",
    "omega_rad_s",
    "p_pu",
    "q_pu",
    "i_mag_pu",
    "g_val",
    "stage_cost",
    "solve_time_us",
    "qp_infeasible",
    "limiter_active",
];

/// One CSV line in numeric form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub values: [f64; 12],
    pub qp_infeasible: bool,
    pub limiter_active: bool,
}

impl CsvRow {
    pub fn from_sim(r: &SimRow, with_timing: bool) -> Self {
        let solve_us = if with_timing {
            r.solve_time.as_secs_f64() * 1e6
        } else {
            0.0
        };
        Self {
            values: [
                r.t,
                r.state.i_d,
                r.state.i_q,
                r.state.delta,
                r.input.v,
                r.input.omega,
                r.p,
                r.q,
                r.i_mag,
                r.g_val,
                r.stage_cost,
                solve_us,
            ],
            qp_infeasible: r.qp_infeasible,
            limiter_active: r.limiter_active,
        }
    }

    pub fn get(&self, column: &str) -> Option<f64> {
        let i = COLUMNS.iter().position(|c| *c == column)?;
        Some(match i {
            12 => f64::from(u8::from(self.qp_infeasible)),
            13 => f64::from(u8::from(self.limiter_active)),
            _ => self.values[i],
        })
    }
}

/// Write `record` as CSV. A `# generated ...` comment line precedes the
/// header unless `timestamp` is `None`.
pub fn write_record<W: Write>(
    out: W,
    record: &SimRecord,
    timestamp: Option<&str>,
    with_timing: bool,
) -> Result<(), CliError> {
    let mut out = out;
    if let Some(ts) = timestamp {
        writeln!(out, "# generated {ts}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in &record.rows {
        let row = CsvRow::from_sim(r, with_timing);
        let mut fields: Vec<String> = row.values.iter().map(|v| format!("{v:.16e}")).collect();
        fields.push(u8::from(row.qp_infeasible).to_string());
        fields.push(u8::from(row.limiter_active).to_string());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_flag(s: &str, line: u64) -> Result<bool, CliError> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(CliError::Config(format!("line {line}: bad flag `{s}`"))),
    }
}

/// Read a CSV written by [`write_record`]. Comment lines are skipped.
pub fn read_rows<R: Read>(input: R) -> Result<Vec<CsvRow>, CliError> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != COLUMNS {
        return Err(CliError::Config(format!(
            "unexpected CSV header {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut values = [0.0; 12];
        for (i, v) in values.iter_mut().enumerate() {
            *v = rec[i].parse().map_err(|e| {
                CliError::Config(format!("line {line}, column {}: {e}", COLUMNS[i]))
            })?;
        }
        rows.push(CsvRow {
            values,
            qp_infeasible: parse_flag(&rec[12], line)?,
            limiter_active: parse_flag(&rec[13], line)?,
        });
    }
    Ok(rows)
}
