use std::path::Path;
use std::process::Command;

use stgf_tool::commands::simulate;
use stgf_tool::config::{ControllerType, RunConfig};
use stgf_tool::csvio::{read_rows, CsvRow, COLUMNS};

fn stgf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_stgf"))
        .args(args)
        .output()
        .expect("spawn stgf")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn zero_steps_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "n0.toml",
        "[sim]\nn_steps = 0\n[scenario]\nsteps = []\n",
    );
    let csv = dir.path().join("out.csv");
    let o = stgf(&[
        "run",
        "-c",
        &cfg,
        "-o",
        csv.to_str().unwrap(),
        "--no-timestamp",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.trim_end(), COLUMNS.join(","));
}

#[test]
fn default_run_has_300_rows_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("run.csv");
    let o = stgf(&["run", "-o", csv.to_str().unwrap(), "--no-timestamp"]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    for key in [
        "final P",
        "final Q",
        "final V",
        "final omega",
        "max |I|",
        "solve time median",
        "solve time max",
    ] {
        assert!(stdout.contains(key), "missing {key} in\n{stdout}");
    }
    let rows = read_rows(std::fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 300);

    let rec = simulate(
        &RunConfig::default().resolve().unwrap(),
        ControllerType::Stgf,
    )
    .unwrap();
    for (r, parsed) in rec.rows.iter().zip(&rows) {
        let want = CsvRow::from_sim(r, false);
        for (a, b) in want.values.iter().zip(&parsed.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(want, *parsed);
    }
}

#[test]
fn timestamp_line_is_the_only_difference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[sim]\nn_steps = 30\n[scenario]\nsteps = [{ at = 10, p_ref = 1.0, q_ref = 0.2 }]\n[ctrl]\ntype = \"droop\"\n",
    );
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(stgf(&["run", "-c", &cfg, "-o", a.to_str().unwrap()])
        .status
        .success());
    assert!(stgf(&[
        "run",
        "-c",
        &cfg,
        "-o",
        b.to_str().unwrap(),
        "--no-timestamp"
    ])
    .status
    .success());
    let a = std::fs::read_to_string(a).unwrap();
    let b = std::fs::read_to_string(b).unwrap();
    let first = a.lines().next().unwrap();
    assert!(first.starts_with("# generated"));
    assert_eq!(read_rows(a.as_bytes()).unwrap().len(), 30);
    // droop timing differs run to run, so compare everything but solve times
    let strip = |s: &str| {
        read_rows(s.as_bytes())
            .unwrap()
            .into_iter()
            .map(|mut r| {
                r.values[11] = 0.0;
                r
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[cost]\nm_p = \"high\"\n");
    let o = stgf(&["equilibrium", "-c", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("m_p"));

    let o = stgf(&["equilibrium"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("constraint active       yes"));

    let feasible = write(
        dir.path(),
        "f.toml",
        "[scenario]\nsteps = [{ at = 0, p_ref = 0.2, q_ref = 0.0 }]\n",
    );
    let o = stgf(&["equilibrium", "-c", &feasible]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("constraint active       no"));
}

#[test]
fn bench_reports_all_controllers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "b.toml",
        "[sim]\nn_steps = 20\n[scenario]\nsteps = [{ at = 5, p_ref = 2.5, q_ref = -0.5 }]\n",
    );
    let o = stgf(&["bench", "-c", &cfg, "-r", "2"]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    for name in ["stgf ", "stgf_cold", "droop"] {
        let line = out
            .lines()
            .find(|l| l.starts_with(name))
            .unwrap_or_else(|| panic!("{out}"));
        assert_eq!(line.split_whitespace().nth(1), Some("40"), "{line}");
    }
}
