//! Command dispatch: runs the requested study and writes its artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlwave::harness::{
    builtin_case, negative_control, run_case_with, spatial_floor, ControlOutcome, ConvergenceRow, ConvergenceStudy,
    ManufacturedCase, rate_fit, uniqueness_probe,
};
use nlwave::monitors::{
    dissipation_line, energy_decay_line, estimate_one_check, estimate_one_line, estimate_two_check, estimate_two_line,
    ladder_variation, InequalityLine, Summary, Verdict,
};
use nlwave::orlicz::{holder_check, luxemburg_norm, modular, norm_modular_relation_check, CellField};
use nlwave::stepper::{SecondOrderMonitor, SourceSampler};
use nlwave::{build_space, run, EstimateMonitor, Error, SchemeConfig, SpaceKind};
use rayon::prelude::*;

use crate::config::{Command, RunConfig};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    AssertionFailure = 1,
    ConfigError = 2,
    SolverFailure = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Solver(#[from] Error),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone)]
pub struct Options {
    pub out: PathBuf,
    pub seed: u64,
}

/// What a command produced: its checks plus headline facts for the summary.
#[derive(Debug, Default)]
pub struct Outcome {
    pub summary: Summary,
    pub facts: Vec<(String, String)>,
    pub notes: Vec<String>,
}

impl Outcome {
    fn fact(&mut self, key: &str, value: impl std::fmt::Display) {
        self.facts.push((key.into(), value.to_string()));
    }

    fn line(&mut self, name: impl Into<String>, lhs: f64, rhs: f64, verdict: Verdict) {
        self.summary.push(InequalityLine {
            name: name.into(),
            lhs,
            rhs,
            slack: rhs - lhs,
            verdict,
        });
    }

    /// Asserts `lhs ≤ rhs`.
    fn le(&mut self, name: impl Into<String>, lhs: f64, rhs: f64) {
        self.line(name, lhs, rhs, Verdict::from_ok(lhs <= rhs));
    }

    pub fn status(&self) -> ExitStatus {
        if self.summary.all_pass() {
            ExitStatus::Success
        } else {
            ExitStatus::AssertionFailure
        }
    }

    pub fn summary_text(&self, command: Command) -> String {
        let mut out = format!("nlwave {command}\n");
        for (k, v) in &self.facts {
            let _ = writeln!(out, "{k}: {v}");
        }
        out.push('\n');
        out.push_str(&self.summary.to_text());
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        let verdict = if self.summary.all_pass() { "PASS" } else { "FAIL" };
        let asserted = self.summary.lines.iter().filter(|l| l.verdict != Verdict::NotAsserted).count();
        let _ = writeln!(out, "\nverdict: {verdict} ({asserted} asserted, {} reported)", self.summary.lines.len() - asserted);
        out
    }
}

struct Writer<'a> {
    dir: &'a Path,
}

impl Writer<'_> {
    fn put(&self, name: &str, contents: &str) -> Result<(), ExecError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| ExecError::Io { path, source })
    }
}

/// Runs `command` and writes `estimates.csv`, `summary.txt` and the
/// command's own CSV files into `opts.out`.
pub fn execute(command: Command, config: &RunConfig, opts: &Options) -> Result<Outcome, ExecError> {
    fs::create_dir_all(&opts.out).map_err(|source| ExecError::Io {
        path: opts.out.clone(),
        source,
    })?;
    let w = Writer { dir: &opts.out };
    let outcome = match command {
        Command::Solve => solve(config, &w)?,
        Command::ConvergeTime => converge_time(config, &w)?,
        Command::ConvergeSpace => converge_space(config, &w)?,
        Command::VerifyOrlicz => verify_orlicz(config, opts.seed, &w)?,
        Command::VerifyNfun => verify_nfun(config, opts.seed, &w)?,
        Command::ProbeUnique => probe_unique(config, opts.seed, &w)?,
    };
    w.put("estimates.csv", &outcome.summary.to_csv())?;
    w.put("summary.txt", &outcome.summary_text(command))?;
    Ok(outcome)
}

fn scheme_config(config: &RunConfig, tau: f64, steps: usize) -> Result<SchemeConfig, Error> {
    let mut cfg = SchemeConfig::with_tau(tau, steps, config.time.final_time)?;
    cfg.newton_rel_tol = config.solver.newton_rel_tol;
    cfg.newton_abs_tol = config.solver.newton_abs_tol;
    cfg.newton_max_iter = config.solver.newton_max_iter;
    Ok(cfg)
}

fn case_of(config: &RunConfig) -> Result<ManufacturedCase, Error> {
    builtin_case(config.case.as_deref().unwrap_or_default())
}

fn describe(kind: SpaceKind) -> String {
    match kind {
        SpaceKind::FemP1_2D { nx, ny } => format!("fem2d({nx}x{ny})"),
        k => format!("{}({})", k.label(), k.resolution()),
    }
}

fn solve(config: &RunConfig, w: &Writer) -> Result<Outcome, ExecError> {
    let kind = config.space.expect("validated");
    let space = build_space(kind)?;
    let (tau, steps) = config.time.single().expect("validated");
    let cfg = scheme_config(config, tau, steps)?;
    let mut out = Outcome::default();
    out.fact("space", describe(kind));
    out.fact("tau", tau);
    out.fact("steps", steps);

    let (spec, u0, v0, sampler, case) = match &config.case {
        Some(_) => {
            let case = case_of(config)?;
            let (u0, v0) = case.initial_data(&space)?;
            (case.spec.clone(), u0, v0, case.sampler(), Some(case))
        }
        None => {
            let (a, b) = (config.u0.clone(), config.v0.clone());
            let src = config.source.clone();
            let sampler = if src.is_zero() {
                SourceSampler::zero()
            } else {
                SourceSampler::new(move |x, _| src.eval(x))
            };
            (
                config.spec.clone().expect("validated"),
                space.l2_project(|x| a.eval(x))?,
                space.l2_project(|x| b.eval(x))?,
                sampler,
                None,
            )
        }
    };
    out.fact("nfunction", spec.name());
    let mut est = EstimateMonitor::new(2);
    let mut second = SecondOrderMonitor::new();
    let report = run(&spec, &space, &u0, &v0, &sampler, &cfg, &mut [&mut est, &mut second])?;
    w.put("run.csv", &report.to_csv())?;
    w.put("u_final.csv", &space.field_to_csv(report.final_state.u.coeffs())?)?;
    w.put("v_final.csv", &space.field_to_csv(report.final_state.v.coeffs())?)?;
    if space.dim() == 2 {
        w.put("u_final_grid.txt", &space.grid_dump(report.final_state.u.coeffs())?)?;
    }
    out.fact("max newton iterations", report.max_newton_iters());
    out.fact("final energy", format!("{:.10e}", report.records.last().map_or(0.0, |r| r.energy)));

    let mut decay = energy_decay_line(&report);
    if !sampler.is_zero() {
        decay.verdict = Verdict::NotAsserted;
        out.notes.push("energy decay is only asserted without forcing".into());
    }
    out.summary.push(decay);
    out.summary.push(dissipation_line(&report));
    out.summary.push(estimate_one_line(&estimate_one_check(&est.records)?));
    if let Ok(e2) = estimate_two_check(&est.records, None) {
        let mut l = estimate_two_line(&e2);
        l.verdict = Verdict::NotAsserted;
        out.summary.push(l);
        out.notes.push("estimate II needs a step ladder to be meaningful; see converge-time".into());
    }
    out.le("second-order residual / tol", second.worst_ratio(), 10.0);
    if let Some(case) = case {
        let t = case.final_time;
        let u = case.u.clone();
        let err = space.l2_error(report.final_state.u.coeffs(), |x| u(x, t))?;
        out.fact("case", &case.name);
        out.line("L2 error at T", err, f64::NAN, Verdict::NotAsserted);
    }
    Ok(out)
}

fn study_lines(out: &mut Outcome, study: &ConvergenceStudy) {
    for r in &study.rows {
        let tag = row_tag(r);
        out.summary.push(InequalityLine {
            name: format!("estimate I {tag}"),
            ..estimate_one_line(&r.diagnostics.estimate_one)
        });
        out.le(format!("second-order residual / tol {tag}"), r.diagnostics.second_order_ratio, 10.0);
    }
}

fn row_tag(r: &ConvergenceRow) -> String {
    format!("[{} tau={}]", describe(r.kind), r.tau)
}

fn rate_lines(out: &mut Outcome, rate: f64, lo: Option<f64>, hi: Option<f64>) {
    match lo {
        Some(lo) => out.le("rate lower bound", lo, rate),
        None => out.line("rate lower bound", f64::NAN, rate, Verdict::NotAsserted),
    }
    match hi {
        Some(hi) => out.le("rate upper bound", rate, hi),
        None => out.line("rate upper bound", rate, f64::NAN, Verdict::NotAsserted),
    }
}

fn write_runs(w: &Writer, study: &ConvergenceStudy) -> Result<(), ExecError> {
    for (i, r) in study.rows.iter().enumerate() {
        w.put(&format!("run_{i}.csv"), &r.report.to_csv())?;
    }
    Ok(())
}

fn converge_time(config: &RunConfig, w: &Writer) -> Result<Outcome, ExecError> {
    let case = case_of(config)?;
    let kind = config.space.expect("validated");
    let space = build_space(kind)?;
    let rows = config
        .time
        .taus
        .par_iter()
        .map(|&tau| {
            let steps = (config.time.final_time / tau).round() as usize;
            run_case_with(&case, &space, &scheme_config(config, tau, steps)?)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.tau, r.l2_error)).collect();
    let study = ConvergenceStudy {
        fitted_rate: rate_fit(&pairs)?.rate,
        rows,
    };
    w.put("convergence.csv", &study.to_csv())?;
    write_runs(w, &study)?;

    let mut out = Outcome::default();
    out.fact("case", &case.name);
    out.fact("space", describe(kind));
    out.fact("fitted rate", format!("{:.4}", study.fitted_rate));
    let lo = config.check.rate_min.or(Some(0.85));
    let hi = config.check.rate_max.or(Some(1.15));
    rate_lines(&mut out, study.fitted_rate, lo, hi);
    let floor = spatial_floor(&case, kind)?;
    let min_err = study.errors().into_iter().fold(f64::INFINITY, f64::min);
    out.fact("spatial floor", format!("{floor:.4e}"));
    out.le("10 x spatial floor", 10.0 * floor, min_err);
    study_lines(&mut out, &study);

    if space.kind().is_spectral() {
        let mut sums = Vec::new();
        let mut calibration = None;
        for r in &study.rows {
            let e = estimate_two_check(&r.estimate_records, calibration);
            let Ok(e) = e else { break };
            calibration.get_or_insert(e.constant);
            sums.push(e.lhs);
            out.summary.push(InequalityLine {
                name: format!("estimate II {}", row_tag(r)),
                ..estimate_two_line(&e)
            });
        }
        if sums.len() == study.rows.len() {
            let var = ladder_variation(&sums);
            out.fact("estimate II variation", format!("{:.2}%", 100.0 * var));
            match config.check.estimate_two_max_variation {
                Some(m) => out.le("estimate II variation", var, m),
                None => out.line("estimate II variation", var, f64::NAN, Verdict::NotAsserted),
            }
        }
    }
    Ok(out)
}

fn converge_space(config: &RunConfig, w: &Writer) -> Result<Outcome, ExecError> {
    let case = case_of(config)?;
    let (tau, steps) = config.time.single().expect("validated");
    let cfg = scheme_config(config, tau, steps)?;
    let rows = config
        .resolutions
        .par_iter()
        .map(|&n| run_case_with(&case, &build_space(config.space_at(n).expect("validated"))?, &cfg))
        .collect::<Result<Vec<_>, Error>>()?;
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (1.0 / r.kind.resolution() as f64, r.l2_error)).collect();
    let study = ConvergenceStudy {
        fitted_rate: rate_fit(&pairs)?.rate,
        rows,
    };
    w.put("convergence.csv", &study.to_csv())?;
    write_runs(w, &study)?;
    let mut out = Outcome::default();
    out.fact("case", &case.name);
    out.fact("tau", tau);
    out.fact("fitted rate", format!("{:.4}", study.fitted_rate));
    rate_lines(&mut out, study.fitted_rate, config.check.rate_min, config.check.rate_max);
    study_lines(&mut out, &study);
    Ok(out)
}

fn random_field(rng: &mut ChaCha8Rng, dim: usize, cells: usize, scale: f64) -> Result<CellField, Error> {
    let values = (0..cells * dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    let measures: Vec<f64> = (0..cells).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = measures.iter().sum();
    CellField::new(dim, values, measures.iter().map(|m| m / total).collect())
}

fn verify_orlicz(config: &RunConfig, seed: u64, w: &Writer) -> Result<Outcome, ExecError> {
    let spec = config.spec.clone().expect("validated");
    let d = spec.dim();
    let n = config.check.samples;
    let scale = config.check.radius.unwrap_or(3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Outcome::default();
    out.fact("nfunction", spec.name());
    out.fact("samples", n);

    let mut min_gap = f64::INFINITY;
    let mut eq_defect: f64 = 0.0;
    let mut csv = String::from("sample,young_gap,equality_defect\n");
    for i in 0..n {
        let xi: Vec<f64> = (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let eta: Vec<f64> = (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let gap = spec.young_gap(&xi, &eta)?;
        let defect = spec.young_gap(&xi, &spec.stress(&xi)?)?.abs() / (1.0 + spec.evaluate(&xi)?);
        min_gap = min_gap.min(gap);
        eq_defect = eq_defect.max(defect);
        let _ = writeln!(csv, "{i},{gap:e},{defect:e}");
    }
    w.put("young.csv", &csv)?;
    out.le("-(Young gap)", -min_gap, 1e-9);
    out.le("Young equality defect", eq_defect, 1e-8);

    let mut lux: f64 = 0.0;
    let mut sample_field = None;
    for _ in 0..n {
        let f = random_field(&mut rng, d, 8, scale)?;
        let norm = luxemburg_norm(&spec, &f, 1e-10)?;
        lux = lux.max((modular(&spec, &f.scaled(1.0 / norm))? - 1.0).abs());
        sample_field.get_or_insert(f);
    }
    if let Some(f) = sample_field {
        w.put("field.csv", &f.to_csv())?;
    }
    out.le("|modular(f/|f|) - 1|", lux, 1e-8);

    if spec.conjugate_spec().is_some() {
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            let a = random_field(&mut rng, d, 6, scale)?;
            let vals = (0..6 * d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let b = CellField::new(d, vals, a.measures().to_vec())?;
            let h = holder_check(&spec, &a, &b)?;
            worst = worst.max(if h.ok { h.lhs / h.rhs.max(f64::MIN_POSITIVE) } else { f64::INFINITY });
        }
        out.le("Holder lhs / rhs", worst, 1.0);
    } else {
        out.notes.push("Holder check skipped: no closed-form conjugate".into());
    }

    let mut failures = 0.0;
    for target in [0.5, 1.0, 2.0] {
        let f = random_field(&mut rng, d, 8, 1.0)?;
        let g = f.scaled(target / luxemburg_norm(&spec, &f, 1e-12)?);
        let got = luxemburg_norm(&spec, &g, 1e-12)?;
        if (got - target).abs() > 1e-8 || !norm_modular_relation_check(&spec, &g, 1e-9)? {
            failures += 1.0;
        }
    }
    out.le("norm-modular relation failures", failures, 0.0);
    Ok(out)
}

fn verify_nfun(config: &RunConfig, seed: u64, w: &Writer) -> Result<Outcome, ExecError> {
    let spec = config.spec.clone().expect("validated");
    let d = spec.dim();
    let samples = config.check.samples;
    let mut out = Outcome::default();
    out.fact("nfunction", spec.name());
    let (delta_radius, expected_k, expected_growth) = match spec.kind() {
        nlwave::nfunction::Kind::PowerIso { p } => (10.0, Some(2f64.powf(*p)), Some(p - 1.0)),
        nlwave::nfunction::Kind::QuadForm { .. } => (10.0, Some(4.0), Some(1.0)),
        _ => (50.0, None, None),
    };
    let radius = config.check.radius.unwrap_or(delta_radius);
    let dl = spec.delta2_check_seeded(radius, samples, seed)?;
    let gr = spec.growth_constant_estimate_seeded(config.check.radius.unwrap_or(50.0), samples, seed)?;
    let mut csv = String::from("diagnostic,scale,quotient\n");
    for (i, q) in dl.quotients.iter().enumerate() {
        let _ = writeln!(csv, "delta2,{},{q:e}", i);
    }
    for (i, q) in gr.quotients.iter().enumerate() {
        let _ = writeln!(csv, "growth,{},{q:e}", i);
    }
    w.put("diagnostics.csv", &csv)?;

    match (dl.constant, expected_k) {
        (Some(k), Some(e)) => {
            out.fact("delta2 constant", format!("{k:.4}"));
            out.le("|delta2 constant / expected - 1|", (k / e - 1.0).abs(), 0.01);
        }
        (Some(k), None) => {
            out.fact("delta2 constant", format!("{k:.4}"));
            out.line("delta2 constant", k, f64::NAN, Verdict::NotAsserted);
        }
        (None, _) => {
            out.fact("delta2 constant", "unbounded (condition fails)");
            let verdict = if expected_k.is_some() { Verdict::Fail } else { Verdict::NotAsserted };
            out.line("delta2 failure", dl.quotients[3], f64::NAN, verdict);
        }
    }
    match (gr.constant, expected_growth) {
        (Some(c), Some(e)) => {
            out.fact("growth constant", format!("{c:.6}"));
            out.le("growth constant", c, e + 1e-6);
        }
        (Some(c), None) => {
            out.fact("growth constant", format!("{c:.6}"));
            out.line("growth constant", c, f64::NAN, Verdict::NotAsserted);
        }
        (None, _) => {
            out.fact("growth constant", "diverges");
            let verdict = if expected_growth.is_some() { Verdict::Fail } else { Verdict::NotAsserted };
            out.line("growth divergence", gr.quotients[3], f64::NAN, verdict);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        pairs.push((a, b));
    }
    let mono = spec.monotonicity_probe(&pairs);
    out.le("-(min monotonicity product)", -mono, 0.0);

    if spec.conjugate_closed_form(&vec![1.0; d]).is_some() {
        let mut worst: f64 = 0.0;
        for (eta, _) in pairs.iter().take(20) {
            let closed = spec.conjugate_closed_form(eta).expect("closed form");
            let numeric = spec.conjugate_numeric(eta)?;
            worst = worst.max((closed - numeric).abs() / closed.abs().max(1e-300));
        }
        out.le("conjugate closed vs numeric", worst, 1e-8);
    }
    Ok(out)
}

fn probe_unique(config: &RunConfig, seed: u64, w: &Writer) -> Result<Outcome, ExecError> {
    let case = case_of(config)?;
    let kind = config.space.expect("validated");
    let space = build_space(kind)?;
    let (tau, _) = config.time.single().expect("validated");
    let scale = config.check.probe_scale;
    let mut out = Outcome::default();
    out.fact("case", &case.name);
    out.fact("space", describe(kind));
    out.fact("tau", tau);
    out.fact("perturbation scale", scale);
    let mut csv = String::from("case,tau,max_difference,max_tolerance,worst_ratio\n");
    if case.name == "nonmonotone" {
        match negative_control(&space, tau, scale, seed)? {
            ControlOutcome::Completed(r) => {
                let _ = writeln!(csv, "{},{},{:e},{:e},{:e}", case.name, tau, r.max_difference, r.max_tolerance, r.worst_ratio);
                out.line("probe difference / tol", r.worst_ratio, 100.0, Verdict::NotAsserted);
            }
            ControlOutcome::SolverFailed(msg) => {
                out.line("probe difference / tol", f64::NAN, 100.0, Verdict::NotAsserted);
                out.notes.push(format!("solver failed on the perturbed run: {msg}"));
            }
        }
        out.notes.push("non-monotone stress: uniqueness is not guaranteed, result not asserted".into());
    } else {
        let r = uniqueness_probe(&case, &space, tau, scale, seed)?;
        let _ = writeln!(csv, "{},{},{:e},{:e},{:e}", case.name, tau, r.max_difference, r.max_tolerance, r.worst_ratio);
        out.le("probe difference / tol", r.worst_ratio, 100.0);
    }
    w.put("probe.csv", &csv)?;
    Ok(out)
}
