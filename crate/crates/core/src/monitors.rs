//! Runtime checks of the discrete a priori estimates against a run.
//!
//! Estimate I, with `X = maxⱼ ‖vʲ‖` and `F = τ Σ ‖fʲ‖_{L²}`:
//!
//! ```text
//! ‖vⁿ‖² + Σ‖vʲ − vʲ⁻¹‖² + 2τ Σ‖∇vʲ‖² + 2Φ(uⁿ) ≤ ‖v⁰‖² + 2Φ(u⁰) + 2F·X,
//! X ≤ ‖v⁰‖ + √2 Φ(u⁰)^{1/2} + 2F.
//! ```
//!
//! Estimate II bounds `Σ ‖vⁿ − vⁿ⁻¹‖_{(Hʳ)*}` by a data functional times a
//! constant that is not explicit; it is calibrated once on the coarsest run
//! and the check is that the sum stays bounded under τ-refinement.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{norm2, SymBandMatrix};
use crate::nfunction::NFunctionSpec;
use crate::space::{SpaceHandle, Space};
use crate::stepper::{RunReport, SchemeState, StepContext, StepMonitor, Stepper};

/// Relative roundoff allowance on top of the solver slack.
const ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub step: usize,
    /// `‖vⁿ‖²`
    pub v_sq: f64,
    /// `Σⱼ≤ₙ ‖vʲ − vʲ⁻¹‖²`
    pub jump_sum: f64,
    /// `2τ Σⱼ≤ₙ ‖∇vʲ‖²`
    pub grad_sum: f64,
    /// `2Φ(uⁿ)`
    pub two_phi: f64,
    /// `‖v⁰‖²`
    pub v0_sq: f64,
    /// `Φ(u⁰)`
    pub phi0: f64,
    /// `τ Σⱼ≤ₙ ‖fʲ‖_{L²}`
    pub f_accum: f64,
    /// `Σⱼ≤ₙ ‖vʲ − vʲ⁻¹‖_{(Hʳ)*}` (sine basis only).
    pub dual_sum: Option<f64>,
    /// `ρ_{φ*}(σ(∇uⁿ))` (closed-form conjugates only).
    pub conj_modular: Option<f64>,
    /// `2τ Σⱼ≤ₙ ‖Rʲ‖₂ ‖vʲ‖₂`: what the Newton residuals can add to the left side.
    pub solver_slack: f64,
}

impl EstimateRecord {
    pub fn lhs(&self) -> f64 {
        self.v_sq + self.jump_sum + self.grad_sum + self.two_phi
    }
}

/// Collects an [`EstimateRecord`] per step.
#[derive(Debug, Clone)]
pub struct EstimateMonitor {
    r: usize,
    pub records: Vec<EstimateRecord>,
}

impl EstimateMonitor {
    /// `r` is the order of the dual norm used for estimate II.
    pub fn new(r: usize) -> Self {
        Self { r, records: Vec::new() }
    }
}

impl Default for EstimateMonitor {
    fn default() -> Self {
        Self::new(2)
    }
}

/// `ρ_{φ*}(σ(∇u))`, or `None` without a closed-form conjugate.
pub fn conjugate_stress_modular(space: &Space, spec: &NFunctionSpec, u: &[f64]) -> Result<Option<f64>> {
    let grads = space.gradient_sampled(u)?;
    let mut sig = vec![0.0; spec.dim()];
    let mut acc = 0.0;
    for (g, m) in grads.iter() {
        spec.stress_into(g, &mut sig);
        match spec.conjugate_closed_form(&sig) {
            Some(c) => acc += m * c,
            None => return Ok(None),
        }
    }
    Ok(Some(acc))
}

impl StepMonitor for EstimateMonitor {
    fn start(&mut self, stepper: &Stepper, initial: &SchemeState) -> Result<()> {
        let space = stepper.space();
        let (u, v) = (initial.u.coeffs(), initial.v.coeffs());
        let v_sq = stepper.mass().quad_form(v);
        let phi0 = space.potential(stepper.spec(), u)?;
        self.records = vec![EstimateRecord {
            step: 0,
            v_sq,
            jump_sum: 0.0,
            grad_sum: 0.0,
            two_phi: 2.0 * phi0,
            v0_sq: v_sq,
            phi0,
            f_accum: 0.0,
            dual_sum: space.kind().is_spectral().then_some(0.0),
            conj_modular: conjugate_stress_modular(space, stepper.spec(), u)?,
            solver_slack: 0.0,
        }];
        Ok(())
    }

    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        let prev = self
            .records
            .last()
            .cloned()
            .ok_or_else(|| Error::Contract("monitor was not started".into()))?;
        let st = ctx.stepper;
        let tau = st.config().tau;
        let space = st.space();
        let (u, v) = (ctx.state.u.coeffs(), ctx.state.v.coeffs());
        let dv: Vec<f64> = v.iter().zip(ctx.prev.v.coeffs()).map(|(a, b)| a - b).collect();
        let dual_sum = match prev.dual_sum {
            Some(s) => Some(s + space.hr_dual_norm(&dv, self.r)?),
            None => None,
        };
        self.records.push(EstimateRecord {
            step: ctx.state.n,
            v_sq: st.mass().quad_form(v),
            jump_sum: prev.jump_sum + st.mass().quad_form(&dv),
            grad_sum: prev.grad_sum + 2.0 * tau * st.stiffness().quad_form(v),
            two_phi: 2.0 * space.potential(st.spec(), u)?,
            v0_sq: prev.v0_sq,
            phi0: prev.phi0,
            f_accum: prev.f_accum + tau * ctx.load_l2,
            dual_sum,
            conj_modular: conjugate_stress_modular(space, st.spec(), u)?,
            solver_slack: prev.solver_slack + 2.0 * tau * ctx.residual_norm * norm2(v),
        });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOneReport {
    pub max_lhs: f64,
    pub rhs_bound: f64,
    /// Bound on `maxⱼ ‖vʲ‖` from the proof.
    pub constant_used: f64,
    /// Smallest `rhs + slack − lhs(n)` over `n`.
    pub margin: f64,
    pub ok: bool,
}

/// Estimate I with the proof's explicit constants.
pub fn estimate_one_check(records: &[EstimateRecord]) -> Result<EstimateOneReport> {
    let last = records
        .last()
        .ok_or_else(|| Error::Contract("no estimate records".into()))?;
    let f = last.f_accum;
    let x_bound = last.v0_sq.sqrt() + (2.0 * last.phi0).sqrt() + 2.0 * f;
    let rhs = last.v0_sq + 2.0 * last.phi0 + 2.0 * f * x_bound;
    let mut max_lhs: f64 = 0.0;
    let mut margin = f64::INFINITY;
    for r in records {
        let lhs = r.lhs();
        max_lhs = max_lhs.max(lhs);
        margin = margin.min(rhs + r.solver_slack + ROUNDOFF * (1.0 + rhs) - lhs);
    }
    Ok(EstimateOneReport {
        max_lhs,
        rhs_bound: rhs,
        constant_used: x_bound,
        margin,
        ok: margin >= 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTwoReport {
    /// `Σ ‖vⁿ − vⁿ⁻¹‖_{(Hʳ)*}`
    pub lhs: f64,
    /// `‖v⁰‖ + Φ(u⁰) + F + maxₙ ρ_{φ*}(σ(∇uⁿ)) + 1`
    pub data: f64,
    pub constant: f64,
    pub ok_bounded: bool,
}

/// Estimate II. Without a calibrated constant, `C` is set to twice the
/// observed ratio `lhs / data` (use this on the coarsest run of a ladder and
/// pass the result to the finer ones).
pub fn estimate_two_check(records: &[EstimateRecord], calibration: Option<f64>) -> Result<EstimateTwoReport> {
    let last = records
        .last()
        .ok_or_else(|| Error::Contract("no estimate records".into()))?;
    let lhs = last
        .dual_sum
        .ok_or_else(|| Error::Unsupported("estimate II needs a sine-basis run".into()))?;
    let mut max_conj: f64 = 0.0;
    for r in records {
        let c = r
            .conj_modular
            .ok_or_else(|| Error::Unsupported("estimate II needs a closed-form conjugate".into()))?;
        max_conj = max_conj.max(c);
    }
    let data = last.v0_sq.sqrt() + last.phi0 + last.f_accum + max_conj + 1.0;
    let constant = calibration.unwrap_or(2.0 * lhs / data);
    Ok(EstimateTwoReport {
        lhs,
        data,
        constant,
        ok_bounded: lhs <= constant * data,
    })
}

/// `(max − min) / min` of a sequence of positive values.
pub fn ladder_variation(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        (max - min) / min
    } else if max == min {
        0.0
    } else {
        f64::INFINITY
    }
}

/// `τ_l ‖P_{m_l} v₀‖²_{H¹₀}` for matched sequences of spaces and steps.
pub fn coupling_check(spaces: &[SpaceHandle], taus: &[f64], v0: impl Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
    if spaces.len() != taus.len() {
        return Err(Error::Contract("space and step sequences differ in length".into()));
    }
    spaces
        .iter()
        .zip(taus)
        .map(|(s, tau)| {
            let p = s.l2_project(&v0)?;
            Ok(tau * s.assemble_stiffness().quad_form(p.coeffs()))
        })
        .collect()
}

/// `½‖v‖² + Φ(u)`.
pub fn energy(state: &SchemeState, spec: &NFunctionSpec) -> Result<f64> {
    let space = state.space();
    energy_with_mass(state, spec, &space.assemble_mass())
}

pub fn energy_with_mass(state: &SchemeState, spec: &NFunctionSpec, mass: &SymBandMatrix) -> Result<f64> {
    Ok(0.5 * mass.quad_form(state.v.coeffs()) + state.space().potential(spec, state.u.coeffs())?)
}

/// One checked inequality for the summary report.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityLine {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    NotAsserted,
}

impl Verdict {
    pub fn from_ok(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::NotAsserted => "not asserted",
        }
    }
}

/// Worst step of `energy(n) − energy(n−1) ≤ 10·tol·(1 + ‖vⁿ‖)`.
pub fn energy_decay_line(report: &RunReport) -> InequalityLine {
    worst_step_line("energy decay", report, |prev, r| r.energy - prev.energy)
}

/// Worst step of the one-step dissipation inequality.
pub fn dissipation_line(report: &RunReport) -> InequalityLine {
    worst_step_line("dissipation", report, |_, r| r.dissipation_slack)
}

fn worst_step_line(
    name: &str,
    report: &RunReport,
    lhs: impl Fn(&crate::stepper::StepRecord, &crate::stepper::StepRecord) -> f64,
) -> InequalityLine {
    let mut worst = InequalityLine {
        name: name.into(),
        lhs: 0.0,
        rhs: 0.0,
        slack: 0.0,
        verdict: Verdict::Pass,
    };
    let mut worst_excess = f64::NEG_INFINITY;
    for w in report.records.windows(2) {
        let l = lhs(&w[0], &w[1]);
        let slack = 10.0 * w[1].tolerance * (1.0 + w[1].l2_v);
        if l - slack > worst_excess {
            worst_excess = l - slack;
            worst.lhs = l;
            worst.slack = slack;
        }
    }
    worst.verdict = Verdict::from_ok(worst_excess <= 0.0);
    worst
}

pub fn estimate_one_line(rep: &EstimateOneReport) -> InequalityLine {
    InequalityLine {
        name: "estimate I".into(),
        lhs: rep.max_lhs,
        rhs: rep.rhs_bound,
        slack: rep.margin - (rep.rhs_bound - rep.max_lhs),
        verdict: Verdict::from_ok(rep.ok),
    }
}

pub fn estimate_two_line(rep: &EstimateTwoReport) -> InequalityLine {
    InequalityLine {
        name: "estimate II".into(),
        lhs: rep.lhs,
        rhs: rep.constant * rep.data,
        slack: rep.constant * rep.data - rep.lhs,
        verdict: Verdict::from_ok(rep.ok_bounded),
    }
}

pub const ESTIMATES_CSV_HEADER: &str = "inequality,lhs,rhs,slack,verdict";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub lines: Vec<InequalityLine>,
}

impl Summary {
    pub fn push(&mut self, line: InequalityLine) {
        self.lines.push(line);
    }

    /// No asserted line failed.
    pub fn all_pass(&self) -> bool {
        self.lines.iter().all(|l| l.verdict != Verdict::Fail)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(ESTIMATES_CSV_HEADER);
        out.push('\n');
        for l in &self.lines {
            let _ = writeln!(out, "{},{:e},{:e},{:e},{}", l.name, l.lhs, l.rhs, l.slack, l.verdict.as_str());
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self.lines.iter().map(|l| l.name.chars().count()).max().unwrap_or(0);
        for l in &self.lines {
            let _ = writeln!(
                out,
                "{:<width$}  lhs={:<12.5e} rhs={:<12.5e} slack={:<12.5e} {}",
                l.name,
                l.lhs,
                l.rhs,
                l.slack,
                l.verdict.as_str()
            );
        }
        out
    }
}

/// `ρ_{φ*}(σ(∇uⁿ)) ≤ C·(|Ω| + Φ(uⁿ))` on every record that has a conjugate value.
pub fn growth_inequality_holds(records: &[EstimateRecord], c_growth: f64, domain_measure: f64) -> bool {
    records.iter().all(|r| match r.conj_modular {
        Some(c) => c <= c_growth * (domain_measure + 0.5 * r.two_phi) * (1.0 + 1e-9) + 1e-12,
        None => true,
    })
}
