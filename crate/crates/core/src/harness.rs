//! Manufactured-solution studies: temporal and spatial convergence ladders,
//! rate fits, and Newton-uniqueness probes.
//!
//! A [`ManufacturedCase`] carries `u`, `∂ₜu`, `∇u` and a hand-derived source
//! `f = ∂ₜₜu − Δ∂ₜu − ∇·σ(∇u)`. Construction samples the strong residual with
//! 8th-order central differences and rejects inconsistent sources.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::monitors::{estimate_one_check, estimate_two_check, EstimateMonitor, EstimateOneReport, EstimateRecord, EstimateTwoReport};
use crate::nfunction::NFunctionSpec;
use crate::space::{build_space, Field, SpaceHandle, SpaceKind};
use crate::stepper::{run, InitialGuess, RunReport, SchemeConfig, SecondOrderMonitor, SourceSampler, StepContext, StepMonitor};

pub type SpaceTimeFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// Largest admissible sampled strong residual.
pub const SELF_CHECK_TOL: f64 = 1e-8;
const FD_STEP: f64 = 2.5e-3;
const D1: [f64; 9] = [
    1.0 / 280.0,
    -4.0 / 105.0,
    1.0 / 5.0,
    -4.0 / 5.0,
    0.0,
    4.0 / 5.0,
    -1.0 / 5.0,
    4.0 / 105.0,
    -1.0 / 280.0,
];
const D2: [f64; 9] = [
    -1.0 / 560.0,
    8.0 / 315.0,
    -1.0 / 5.0,
    8.0 / 5.0,
    -205.0 / 72.0,
    8.0 / 5.0,
    -1.0 / 5.0,
    8.0 / 315.0,
    -1.0 / 560.0,
];

#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: String,
    pub spec: NFunctionSpec,
    pub dim: usize,
    pub final_time: f64,
    pub u: SpaceTimeFn,
    pub ut: SpaceTimeFn,
    pub grad_u: GradFn,
    pub source: SpaceTimeFn,
}

impl std::fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("name", &self.name)
            .field("spec", &self.spec)
            .field("dim", &self.dim)
            .field("final_time", &self.final_time)
            .finish_non_exhaustive()
    }
}

impl ManufacturedCase {
    /// Registers a case after checking `f` against the strong equation.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        spec: NFunctionSpec,
        final_time: f64,
        u: SpaceTimeFn,
        ut: SpaceTimeFn,
        grad_u: GradFn,
        source: SpaceTimeFn,
    ) -> Result<Self> {
        let dim = spec.dim();
        if !(1..=2).contains(&dim) {
            return Err(Error::Contract(format!("cases live in 1 or 2 dimensions, got {dim}")));
        }
        let case = Self {
            name: name.into(),
            spec,
            dim,
            final_time,
            u,
            ut,
            grad_u,
            source,
        };
        let worst = case.strong_residual_max();
        if !(worst <= SELF_CHECK_TOL) {
            return Err(Error::Contract(format!(
                "source of case '{}' is inconsistent with its solution (strong residual {worst:.3e})",
                case.name
            )));
        }
        Ok(case)
    }

    /// `∂ₜₜu − Δ∂ₜu − ∇·σ(∇u) − f` at `(x, t)` by finite differences.
    pub fn strong_residual(&self, x: &[f64], t: f64) -> f64 {
        let h = FD_STEP;
        let d = self.dim;
        let utt = stencil(&D1, h, |s| (self.ut)(x, t + s));
        let mut lap_ut = 0.0;
        let mut div_sigma = 0.0;
        let mut y = x.to_vec();
        let mut sig = [0.0; 2];
        for i in 0..d {
            lap_ut += stencil2(h, |s| {
                y[i] = x[i] + s;
                (self.ut)(&y, t)
            });
            y[i] = x[i];
            div_sigma += stencil(&D1, h, |s| {
                let mut z = x.to_vec();
                z[i] += s;
                let g = self.fd_gradient(&z, t);
                self.spec.stress_into(&g[..d], &mut sig[..d]);
                sig[i]
            });
        }
        utt - lap_ut - div_sigma - (self.source)(x, t)
    }

    fn fd_gradient(&self, x: &[f64], t: f64) -> [f64; 2] {
        let mut g = [0.0; 2];
        let mut y = x.to_vec();
        for i in 0..self.dim {
            g[i] = stencil(&D1, FD_STEP, |s| {
                y[i] = x[i] + s;
                (self.u)(&y, t)
            });
            y[i] = x[i];
        }
        g
    }

    /// Largest `|strong residual|` on a space-time sample grid.
    pub fn strong_residual_max(&self) -> f64 {
        let xs: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let ts: Vec<f64> = (0..=4).map(|i| 0.05 + (self.final_time - 0.05) * i as f64 / 4.0).collect();
        let mut worst: f64 = 0.0;
        for &t in &ts {
            if self.dim == 1 {
                for &x in &xs {
                    worst = worst.max(self.strong_residual(&[x], t).abs());
                }
            } else {
                for &x in &xs {
                    for &y in &xs {
                        worst = worst.max(self.strong_residual(&[x, y], t).abs());
                    }
                }
            }
        }
        worst
    }

    pub fn sampler(&self) -> SourceSampler {
        SourceSampler::from_arc(self.source.clone())
    }

    /// `u⁰ = P u(·,0)`, `v⁰ = P ∂ₜu(·,0)` by `L²` projection.
    pub fn initial_data(&self, space: &SpaceHandle) -> Result<(Field, Field)> {
        let u = self.u.clone();
        let ut = self.ut.clone();
        Ok((space.l2_project(|x| u(x, 0.0))?, space.l2_project(|x| ut(x, 0.0))?))
    }
}

fn stencil(coef: &[f64; 9], h: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
    (0..9)
        .filter(|&k| coef[k] != 0.0)
        .map(|k| coef[k] * g((k as f64 - 4.0) * h))
        .sum::<f64>()
        / h
}

fn stencil2(h: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
    (0..9).map(|k| D2[k] * g((k as f64 - 4.0) * h)).sum::<f64>() / (h * h)
}

fn sin_pi(x: f64) -> f64 {
    (PI * x).sin()
}

fn cos_pi(x: f64) -> f64 {
    (PI * x).cos()
}

/// 1D `u = sin(πx) sin t` with stress `σ`; `div_sigma(x, t)` is `∂ₓσ(∂ₓu)`.
fn sine_case_1d(
    name: &str,
    spec: NFunctionSpec,
    div_sigma: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
) -> Result<ManufacturedCase> {
    let pi2 = PI * PI;
    ManufacturedCase::new(
        name,
        spec,
        1.0,
        Arc::new(|x, t| sin_pi(x[0]) * t.sin()),
        Arc::new(|x, t| sin_pi(x[0]) * t.cos()),
        Arc::new(|x, t, g| g[0] = PI * cos_pi(x[0]) * t.sin()),
        Arc::new(move |x, t| {
            let s = sin_pi(x[0]);
            -s * t.sin() + pi2 * s * t.cos() - div_sigma(x[0], t)
        }),
    )
}

/// C1: 1D, `p = 2`, `u = sin(πx) sin t`.
pub fn case_c1() -> Result<ManufacturedCase> {
    let pi2 = PI * PI;
    sine_case_1d("C1", NFunctionSpec::power(2.0, 1)?, move |x, t| -pi2 * sin_pi(x) * t.sin())
}

/// C2: 1D, `p = 4`, `u = sin(πx) sin t`; `∂ₓ(uₓ³) = −3π⁴cos²(πx) sin(πx) sin³t`.
pub fn case_c2() -> Result<ManufacturedCase> {
    let pi4 = PI.powi(4);
    sine_case_1d("C2", NFunctionSpec::power(4.0, 1)?, move |x, t| {
        -3.0 * pi4 * cos_pi(x).powi(2) * sin_pi(x) * t.sin().powi(3)
    })
}

/// C3: 2D, `φ(ξ) = ξᵀAξ` with `A = [[2,−1],[−1,2]]`, `u = sin(πx) sin(πy) sin t`.
pub fn case_c3() -> Result<ManufacturedCase> {
    let pi2 = PI * PI;
    ManufacturedCase::new(
        "C3",
        NFunctionSpec::quad_form(2, &[2.0, -1.0, -1.0, 2.0])?,
        1.0,
        Arc::new(|x, t| sin_pi(x[0]) * sin_pi(x[1]) * t.sin()),
        Arc::new(|x, t| sin_pi(x[0]) * sin_pi(x[1]) * t.cos()),
        Arc::new(|x, t, g| {
            g[0] = PI * cos_pi(x[0]) * sin_pi(x[1]) * t.sin();
            g[1] = PI * sin_pi(x[0]) * cos_pi(x[1]) * t.sin();
        }),
        Arc::new(move |x, t| {
            let ss = sin_pi(x[0]) * sin_pi(x[1]);
            let cc = cos_pi(x[0]) * cos_pi(x[1]);
            -ss * t.sin() + 2.0 * pi2 * ss * t.cos() + 8.0 * pi2 * ss * t.sin() + 4.0 * pi2 * cc * t.sin()
        }),
    )
}

/// Non-monotone stress `σ(s) = s − 2s/(1+s²)`, `φ(s) = s²/2 − ln(1+s²)`.
pub fn nonmonotone_spec() -> Result<NFunctionSpec> {
    NFunctionSpec::custom(
        "nonmonotone",
        1,
        |x| 0.5 * x[0] * x[0] - (x[0] * x[0]).ln_1p(),
        |x, out| out[0] = x[0] - 2.0 * x[0] / (1.0 + x[0] * x[0]),
    )
}

/// Negative control: C1's solution under the non-monotone stress.
pub fn case_nonmonotone() -> Result<ManufacturedCase> {
    let dsig = |s: f64| 1.0 - 2.0 * (1.0 - s * s) / (1.0 + s * s).powi(2);
    sine_case_1d("nonmonotone", nonmonotone_spec()?, move |x, t| {
        let ux = PI * cos_pi(x) * t.sin();
        let uxx = -PI * PI * sin_pi(x) * t.sin();
        dsig(ux) * uxx
    })
}

pub fn builtin_case(name: &str) -> Result<ManufacturedCase> {
    match name.to_ascii_lowercase().as_str() {
        "c1" => case_c1(),
        "c2" => case_c2(),
        "c3" => case_c3(),
        "nonmonotone" | "negative" => case_nonmonotone(),
        other => Err(Error::Contract(format!("unknown case '{other}'"))),
    }
}

/// Per-run checks gathered alongside the error.
#[derive(Debug, Clone)]
pub struct RunDiagnostics {
    pub max_newton_iters: usize,
    /// Largest second-order residual over the step's Newton tolerance.
    pub second_order_ratio: f64,
    pub estimate_one: EstimateOneReport,
    /// Uncalibrated (sine basis with closed-form conjugate only).
    pub estimate_two: Option<EstimateTwoReport>,
    pub telescoping_error: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub case: String,
    pub kind: SpaceKind,
    pub tau: f64,
    pub steps: usize,
    pub l2_error: f64,
    pub v_error: f64,
    pub h1_error: f64,
    pub diagnostics: RunDiagnostics,
    pub report: RunReport,
    pub estimate_records: Vec<EstimateRecord>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    pub fitted_rate: f64,
}

pub const CONVERGENCE_CSV_HEADER: &str = "case,kind,resolution,tau,l2_error,v_error,fitted_rate";

impl ConvergenceStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CONVERGENCE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{:e},{:e},{:e}",
                r.case,
                r.kind.label(),
                r.kind.resolution(),
                r.tau,
                r.l2_error,
                r.v_error,
                self.fitted_rate
            );
        }
        out
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.l2_error).collect()
    }

    pub fn errors_decrease(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].l2_error < w[0].l2_error)
    }
}

/// One run of `case` on `space` with `steps` steps up to the case's final time.
pub fn run_case(case: &ManufacturedCase, space: &SpaceHandle, steps: usize) -> Result<ConvergenceRow> {
    let cfg = SchemeConfig::new(case.final_time, steps)?;
    run_case_with(case, space, &cfg)
}

pub fn run_case_with(case: &ManufacturedCase, space: &SpaceHandle, cfg: &SchemeConfig) -> Result<ConvergenceRow> {
    let (u0, v0) = case.initial_data(space)?;
    let mut est = EstimateMonitor::new(2);
    let mut second = SecondOrderMonitor::new();
    let report = run(&case.spec, space, &u0, &v0, &case.sampler(), cfg, &mut [&mut est, &mut second])?;
    let t = case.final_time;
    let (u, ut, gu) = (case.u.clone(), case.ut.clone(), case.grad_u.clone());
    let fin = &report.final_state;
    let l2_error = space.l2_error(fin.u.coeffs(), |x| u(x, t))?;
    let v_error = space.l2_error(fin.v.coeffs(), |x| ut(x, t))?;
    let h1_error = space.h1_semi_error(fin.u.coeffs(), |x, g| gu(x, t, g))?;
    let estimate_two = if space.kind().is_spectral() {
        estimate_two_check(&est.records, None).ok()
    } else {
        None
    };
    Ok(ConvergenceRow {
        case: case.name.clone(),
        kind: space.kind(),
        tau: cfg.tau,
        steps: cfg.steps,
        l2_error,
        v_error,
        h1_error,
        diagnostics: RunDiagnostics {
            max_newton_iters: report.max_newton_iters(),
            second_order_ratio: second.worst_ratio(),
            estimate_one: estimate_one_check(&est.records)?,
            estimate_two,
            telescoping_error: report.telescoping_error,
        },
        report,
        estimate_records: est.records,
    })
}

fn steps_for(final_time: f64, tau: f64) -> Result<usize> {
    let n = (final_time / tau).round();
    if n < 1.0 || (n * tau - final_time).abs() > 1e-12 {
        return Err(Error::Contract(format!("tau {tau} does not divide T = {final_time}")));
    }
    Ok(n as usize)
}

/// Runs a τ ladder on one fixed space, concurrently; rate fitted against τ.
pub fn temporal_convergence(case: &ManufacturedCase, kind: SpaceKind, taus: &[f64]) -> Result<ConvergenceStudy> {
    let space = build_space(kind)?;
    let rows = taus
        .par_iter()
        .map(|&tau| run_case(case, &space, steps_for(case.final_time, tau)?))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.tau, r.l2_error)).collect();
    Ok(ConvergenceStudy {
        fitted_rate: rate_fit(&pairs)?.rate,
        rows,
    })
}

/// Runs a resolution ladder at fixed `τ`, concurrently; rate fitted against `h`.
pub fn spatial_convergence(case: &ManufacturedCase, kinds: &[SpaceKind], tau: f64) -> Result<ConvergenceStudy> {
    let steps = steps_for(case.final_time, tau)?;
    let rows = kinds
        .par_iter()
        .map(|&k| run_case(case, &build_space(k)?, steps))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (1.0 / r.kind.resolution() as f64, r.l2_error))
        .collect();
    Ok(ConvergenceStudy {
        fitted_rate: rate_fit(&pairs)?.rate,
        rows,
    })
}

/// `‖u(·,T) − P u(·,T)‖_{L²}`: the best the fixed space can do at the final time.
pub fn spatial_floor(case: &ManufacturedCase, kind: SpaceKind) -> Result<f64> {
    let space = build_space(kind)?;
    let t = case.final_time;
    let u = case.u.clone();
    let p = space.l2_project(|x| u(x, t))?;
    space.l2_error(p.coeffs(), |x| u(x, t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub rate: f64,
    pub used: usize,
    /// Pairs dropped for a non-positive error or step.
    pub excluded: usize,
}

/// Least-squares slope of `log error` against `log step`.
pub fn rate_fit(pairs: &[(f64, f64)]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(s, e)| *s > 0.0 && *e > 0.0 && s.is_finite() && e.is_finite())
        .map(|(s, e)| (s.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Contract(format!(
            "rate fit needs at least 2 usable pairs, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Contract("rate fit needs distinct steps".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(RateFit {
        rate: sxy / sxx,
        used: pts.len(),
        excluded: pairs.len() - pts.len(),
    })
}

#[derive(Default)]
struct VelocityLog {
    v: Vec<Vec<f64>>,
    tol: Vec<f64>,
}

impl StepMonitor for VelocityLog {
    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        self.v.push(ctx.state.v.coeffs().to_vec());
        self.tol.push(ctx.tolerance);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    /// `maxₙ ‖vⁿ_A − vⁿ_B‖_{L²}`
    pub max_difference: f64,
    /// Largest Newton tolerance used by either run.
    pub max_tolerance: f64,
    /// `maxₙ ‖vⁿ_A − vⁿ_B‖ / tolₙ`
    pub worst_ratio: f64,
}

/// Runs the case twice on identical data: warm-started Newton, and Newton
/// started from `vⁿ⁻¹` plus uniform noise of amplitude `scale`.
pub fn uniqueness_probe(case: &ManufacturedCase, space: &SpaceHandle, tau: f64, scale: f64, seed: u64) -> Result<ProbeReport> {
    let steps = steps_for(case.final_time, tau)?;
    let (u0, v0) = case.initial_data(space)?;
    let cfg_a = SchemeConfig::new(case.final_time, steps)?;
    let mut cfg_b = cfg_a.clone();
    cfg_b.initial_guess = InitialGuess::Perturbed { scale, seed };
    let (la, lb) = rayon::join(
        || -> Result<VelocityLog> {
            let mut log = VelocityLog::default();
            run(&case.spec, space, &u0, &v0, &case.sampler(), &cfg_a, &mut [&mut log])?;
            Ok(log)
        },
        || -> Result<VelocityLog> {
            let mut log = VelocityLog::default();
            run(&case.spec, space, &u0, &v0, &case.sampler(), &cfg_b, &mut [&mut log])?;
            Ok(log)
        },
    );
    let (la, lb) = (la?, lb?);
    let mass = space.assemble_mass();
    let mut rep = ProbeReport {
        max_difference: 0.0,
        max_tolerance: 0.0,
        worst_ratio: 0.0,
    };
    for n in 0..la.v.len() {
        let d: Vec<f64> = la.v[n].iter().zip(&lb.v[n]).map(|(a, b)| a - b).collect();
        let diff = mass.quad_form(&d).max(0.0).sqrt();
        let tol = la.tol[n].max(lb.tol[n]);
        rep.max_difference = rep.max_difference.max(diff);
        rep.max_tolerance = rep.max_tolerance.max(tol);
        rep.worst_ratio = rep.worst_ratio.max(diff / tol);
    }
    Ok(rep)
}

/// Outcome of the non-monotone probe, which is reported and never asserted.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlOutcome {
    Completed(ProbeReport),
    SolverFailed(String),
}

pub fn negative_control(space: &SpaceHandle, tau: f64, scale: f64, seed: u64) -> Result<ControlOutcome> {
    let case = case_nonmonotone()?;
    match uniqueness_probe(&case, space, tau, scale, seed) {
        Ok(r) => Ok(ControlOutcome::Completed(r)),
        Err(e @ (Error::NonConvergence { .. } | Error::Numeric(_))) => Ok(ControlOutcome::SolverFailed(e.to_string())),
        Err(e) => Err(e),
    }
}
