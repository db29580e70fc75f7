use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nlwave::harness::{case_c1, temporal_convergence, CONVERGENCE_CSV_HEADER};
use nlwave::monitors::ESTIMATES_CSV_HEADER;
use nlwave::stepper::RUN_CSV_HEADER;
use nlwave::SpaceKind;
use tempfile::TempDir;

struct Run {
    out: PathBuf,
    output: Output,
    _dir: TempDir,
}

impl Run {
    fn code(&self) -> i32 {
        self.output.status.code().expect("exit code")
    }

    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.output.stderr).into_owned()
    }

    fn file(&self, name: &str) -> String {
        fs::read_to_string(self.out.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }
}

fn nlwave(command: &str, config: &str, extra: &[&str]) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, config).unwrap();
    let out = dir.path().join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_nlwave"))
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    Run { out, output, _dir: dir }
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

const C1_LADDER: &str = "\
command = converge-time
[case]
name = c1
[space]
kind = spectral1d
m = 64
[time]
taus = 0.1, 0.05, 0.025, 0.0125
";

#[test]
fn verify_nfun_reports_delta2_constant_eight_for_cubic_power() {
    let r = nlwave("verify-nfun", "[spec]\nkind = power\np = 3\n", &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let summary = r.file("summary.txt");
    let k: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("delta2 constant: "))
        .expect("delta2 line")
        .parse()
        .unwrap();
    assert_eq!(k, 8.0);
    assert!(summary.contains("verdict: PASS"));
}

#[test]
fn verify_nfun_exponential_reports_failure_without_asserting() {
    let r = nlwave("verify-nfun", "[spec]\nkind = exp\n", &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let summary = r.file("summary.txt");
    assert!(summary.contains("delta2 constant: unbounded"), "{summary}");
    assert!(summary.contains("growth constant: diverges"), "{summary}");
}

#[test]
fn converge_time_on_c1_matches_library_ladder() {
    let r = nlwave("converge-time", C1_LADDER, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let csv = r.file("convergence.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CONVERGENCE_CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let rate: f64 = rows[0][6].parse().unwrap();
    assert!((0.85..=1.15).contains(&rate), "rate {rate}");

    let lib = temporal_convergence(&case_c1().unwrap(), SpaceKind::Spectral1D { modes: 64 }, &[0.1, 0.05, 0.025, 0.0125])
        .unwrap();
    assert_eq!(rate, lib.fitted_rate);
    for (row, lib_row) in rows.iter().zip(&lib.rows) {
        assert_eq!(row[4].parse::<f64>().unwrap(), lib_row.l2_error);
    }
    assert!(r.file("run_0.csv").starts_with(RUN_CSV_HEADER));
}

#[test]
fn converge_time_outside_requested_band_exits_one() {
    let cfg = format!("{C1_LADDER}[check]\nrate_min = 1.5\nrate_max = 2.5\n");
    let r = nlwave("converge-time", &cfg, &[]);
    assert_eq!(r.code(), 1);
    assert!(r.file("estimates.csv").contains("rate lower bound"));
    assert!(r.file("summary.txt").contains("verdict: FAIL"));
}

#[test]
fn probe_unique_negative_control_is_not_asserted() {
    let cfg = "[case]\nname = nonmonotone\n[space]\nkind = fem1d\ncells = 64\n[time]\ntau = 0.1\n";
    let r = nlwave("probe-unique", cfg, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let summary = r.file("summary.txt");
    assert!(summary.contains("not asserted"), "{summary}");
    assert!(r.file("probe.csv").starts_with("case,tau,max_difference,max_tolerance,worst_ratio\n"));
}

#[test]
fn probe_unique_monotone_case_is_asserted() {
    let cfg = "[case]\nname = c2\n[space]\nkind = fem1d\ncells = 64\n[time]\ntau = 0.1\n";
    let r = nlwave("probe-unique", cfg, &["--seed", "3"]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let est = r.file("estimates.csv");
    assert!(est.lines().any(|l| l.starts_with("probe difference / tol") && l.ends_with(",pass")), "{est}");
}

#[test]
fn solve_writes_headed_csvs() {
    let cfg = "[spec]\nkind = power\np = 4\n[space]\nkind = fem2d\nresolution = 6\n[time]\nT = 0.5\nN = 20\n[case]\nu0 = sine(1)\n";
    let r = nlwave("solve", cfg, &[]);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let run = r.file("run.csv");
    assert_eq!(run.lines().next(), Some(RUN_CSV_HEADER));
    assert_eq!(run.lines().count(), 22);
    assert_eq!(r.file("estimates.csv").lines().next(), Some(ESTIMATES_CSV_HEADER));
    assert_eq!(r.file("u_final.csv").lines().next(), Some("x,y,value"));
    assert_eq!(r.file("u_final_grid.txt").lines().filter(|l| !l.trim().is_empty()).count(), 49);
}

#[test]
fn identical_configs_give_identical_csvs() {
    let cases = [
        ("converge-time", C1_LADDER.to_string()),
        ("verify-orlicz", "[spec]\nkind = power\np = 3\ndim = 2\n".to_string()),
        ("verify-nfun", "[spec]\nkind = quadform\nmatrix = 2 -1 -1 2\n".to_string()),
        (
            "probe-unique",
            "[case]\nname = c1\n[space]\nkind = fem1d\ncells = 32\n[time]\ntau = 0.05\n".to_string(),
        ),
    ];
    for (cmd, cfg) in cases {
        let a = nlwave(cmd, &cfg, &[]);
        let b = nlwave(cmd, &cfg, &[]);
        assert_eq!(a.code(), 0, "{cmd}: {}", a.stderr());
        let fa = csv_files(&a.out);
        assert!(!fa.is_empty());
        assert_eq!(fa, csv_files(&b.out), "{cmd}");
    }
}

#[test]
fn seed_flag_overrides_config_seed() {
    let cfg = "seed = 5\n[spec]\nkind = power\np = 2.5\n";
    let a = nlwave("verify-orlicz", cfg, &[]);
    let b = nlwave("verify-orlicz", cfg, &["--seed", "5"]);
    let c = nlwave("verify-orlicz", cfg, &["--seed", "6"]);
    assert_eq!(a.file("young.csv"), b.file("young.csv"));
    assert_ne!(a.file("young.csv"), c.file("young.csv"));
}

#[test]
fn tau_n_mismatch_is_a_config_error() {
    let cfg = "[spec]\nkind = power\np = 2\n[space]\nkind = spectral1d\nm = 16\n[time]\nT = 1\nN = 100\ntau = 0.02\n";
    let r = nlwave("solve", cfg, &[]);
    assert_eq!(r.code(), 2);
    let err = r.stderr();
    assert!(err.contains("'time.tau'") && err.contains("'time.N'"), "{err}");
    assert!(!r.out.exists());
}

#[test]
fn non_spd_matrix_is_a_config_error() {
    let r = nlwave("verify-nfun", "[spec]\nkind = quadform\nmatrix = 1, 3, 3, 1\n", &[]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("SPD check failed"), "{}", r.stderr());
    assert!(r.stderr().contains("line 3"), "{}", r.stderr());
}

#[test]
fn command_mismatch_and_missing_blocks_are_config_errors() {
    let r = nlwave("solve", "command = verify-nfun\n[spec]\nkind = exp\n", &[]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("line 1"));
    let r = nlwave("converge-time", "[case]\nname = c1\n", &[]);
    assert_eq!(r.code(), 2);
    assert!(r.stderr().contains("time.taus"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_nlwave"))
        .args(["solve", "--config", "/nonexistent/run.cfg"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn newton_budget_exhaustion_is_a_solver_failure() {
    let cfg = "[case]\nname = c2\n[space]\nkind = fem1d\ncells = 64\n[time]\ntau = 0.1\n[solver]\nnewton_max_iter = 1\n";
    let r = nlwave("solve", cfg, &[]);
    assert_eq!(r.code(), 3, "{}", r.stderr());
    assert!(r.stderr().contains("newton did not converge"), "{}", r.stderr());
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let config = nlwave_cli::parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let command = config.command.expect("shipped configs name their command");
        config.require(command).unwrap();
        seen += 1;
    }
    assert!(seen >= 6);
}
