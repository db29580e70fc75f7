//! Backward Euler / Galerkin two-field scheme
//!
//! ```text
//! M (vⁿ − vⁿ⁻¹)/τ + A vⁿ + B(uⁿ⁻¹ + τ vⁿ) = Fⁿ,     uⁿ = uⁿ⁻¹ + τ vⁿ,
//! ```
//!
//! where `Fⁿ` is the load of the time-averaged source. Each step solves for
//! `vⁿ` with damped Newton on the SPD matrix `M/τ + A + τ J(uⁿ⁻¹ + τ v)`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, SymBandMatrix};
use crate::nfunction::NFunctionSpec;
use crate::quadrature::GAUSS4_UNIT;
use crate::space::{Field, SpaceHandle};

pub const DEFAULT_NEWTON_REL_TOL: f64 = 1e-11;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 50;
pub const MAX_HALVINGS: usize = 30;

/// Newton starting point for `vⁿ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialGuess {
    /// `vⁿ⁻¹`
    Warm,
    Zero,
    /// `vⁿ⁻¹` plus a uniform random vector of the given amplitude.
    Perturbed { scale: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub tau: f64,
    pub steps: usize,
    pub final_time: f64,
    /// Residual tolerance is `newton_rel_tol · (1 + ‖Fⁿ‖₂)` unless
    /// `newton_abs_tol` overrides it.
    pub newton_rel_tol: f64,
    pub newton_abs_tol: Option<f64>,
    pub newton_max_iter: usize,
    pub initial_guess: InitialGuess,
}

impl SchemeConfig {
    /// `N` uniform steps on `[0, T]`.
    pub fn new(final_time: f64, steps: usize) -> Result<Self> {
        let tau = if steps == 0 { final_time } else { final_time / steps as f64 };
        Self::with_tau(tau, steps, final_time)
    }

    /// Explicit `τ`; requires `|τN − T| ≤ 1e−12`.
    pub fn with_tau(tau: f64, steps: usize, final_time: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() || !(final_time >= 0.0) {
            return Err(Error::Contract(format!(
                "need tau > 0 and T >= 0, got tau={tau}, T={final_time}"
            )));
        }
        if steps > 0 && (tau * steps as f64 - final_time).abs() > 1e-12 {
            return Err(Error::Contract(format!(
                "tau * N = {} does not match T = {final_time}",
                tau * steps as f64
            )));
        }
        Ok(Self {
            tau,
            steps,
            final_time,
            newton_rel_tol: DEFAULT_NEWTON_REL_TOL,
            newton_abs_tol: None,
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
            initial_guess: InitialGuess::Warm,
        })
    }

    pub fn tolerance(&self, load_norm: f64) -> f64 {
        self.newton_abs_tol
            .unwrap_or(self.newton_rel_tol * (1.0 + load_norm))
    }

    fn validate(&self) -> Result<()> {
        let tol_ok = self.newton_rel_tol > 0.0 && self.newton_abs_tol.is_none_or(|t| t > 0.0);
        if !tol_ok || self.newton_max_iter == 0 {
            return Err(Error::Contract("tolerances and iteration limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SchemeState {
    pub u: Field,
    pub v: Field,
    pub n: usize,
    pub t: f64,
    /// Rounding error of the running sum, so that `u + u_lo` carries
    /// `u⁰ + τ Σ vʲ` to about twice working precision.
    pub u_lo: Vec<f64>,
}

impl SchemeState {
    pub fn initial(u: Field, v: Field) -> Result<Self> {
        if !Arc::ptr_eq(u.space(), v.space()) {
            return Err(Error::Contract("u and v live on different spaces".into()));
        }
        let u_lo = vec![0.0; u.coeffs().len()];
        Ok(Self { u, v, n: 0, t: 0.0, u_lo })
    }

    pub fn space(&self) -> &SpaceHandle {
        self.u.space()
    }
}

pub type SourceFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Source `f(x, t)` and its restriction `fⁿ = τ⁻¹ ∫ f dt` over each step.
#[derive(Clone)]
pub struct SourceSampler {
    f: Option<SourceFn>,
}

impl std::fmt::Debug for SourceSampler {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.write_str(if self.f.is_some() { "SourceSampler(f)" } else { "SourceSampler(0)" })
    }
}

impl SourceSampler {
    pub fn new(f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Some(Arc::new(f)) }
    }

    pub fn from_arc(f: SourceFn) -> Self {
        Self { f: Some(f) }
    }

    pub fn zero() -> Self {
        Self { f: None }
    }

    pub fn is_zero(&self) -> bool {
        self.f.is_none()
    }

    /// 4-point Gauss average of `f(x, ·)` over `[t₀, t₁]`.
    pub fn time_average(&self, x: &[f64], t0: f64, t1: f64) -> f64 {
        match &self.f {
            None => 0.0,
            Some(f) => GAUSS4_UNIT
                .iter()
                .map(|&(s, w)| w * f(x, t0 + s * (t1 - t0)))
                .sum(),
        }
    }
}

/// Load vector of `fⁿ` and `‖fⁿ‖_{L²}`.
pub fn average_source(sampler: &SourceSampler, space: &SpaceHandle, n: usize, tau: f64) -> Result<(Vec<f64>, f64)> {
    if n == 0 {
        return Err(Error::Contract("source averages are defined for n >= 1".into()));
    }
    if sampler.is_zero() {
        return Ok((vec![0.0; space.ndofs()], 0.0));
    }
    let (t0, t1) = ((n - 1) as f64 * tau, n as f64 * tau);
    let g = |x: &[f64]| sampler.time_average(x, t0, t1);
    Ok((space.load_vector(g), space.l2_norm_of(g)))
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SchemeState,
    pub iterations: usize,
    pub residual_norm: f64,
    pub tolerance: f64,
}

/// Matrices and data shared by every step of one run.
#[derive(Debug, Clone)]
pub struct Stepper {
    space: SpaceHandle,
    spec: NFunctionSpec,
    mass: SymBandMatrix,
    stiffness: SymBandMatrix,
    /// `M/τ + A`
    base: SymBandMatrix,
    config: SchemeConfig,
}

impl Stepper {
    pub fn new(space: SpaceHandle, spec: NFunctionSpec, config: SchemeConfig) -> Result<Self> {
        config.validate()?;
        if spec.dim() != space.dim() {
            return Err(Error::Contract(format!(
                "potential dimension {} does not match space dimension {}",
                spec.dim(),
                space.dim()
            )));
        }
        let mass = space.assemble_mass();
        let stiffness = space.assemble_stiffness();
        let base = mass.linear_combination(1.0 / config.tau, &stiffness, 1.0);
        Ok(Self {
            space,
            spec,
            mass,
            stiffness,
            base,
            config,
        })
    }

    pub fn space(&self) -> &SpaceHandle {
        &self.space
    }

    pub fn spec(&self) -> &NFunctionSpec {
        &self.spec
    }

    pub fn mass(&self) -> &SymBandMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &SymBandMatrix {
        &self.stiffness
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    /// `R(v) = M(v − v_prev)/τ + A v + B(u_prev + τ v) − F`.
    pub fn residual(&self, u_prev: &[f64], v_prev: &[f64], v: &[f64], load: &[f64]) -> Result<Vec<f64>> {
        let tau = self.config.tau;
        let dv: Vec<f64> = v.iter().zip(v_prev).map(|(a, b)| (a - b) / tau).collect();
        let w = axpy(u_prev, tau, v);
        let mut r = self.mass.mul_vec(&dv);
        let av = self.stiffness.mul_vec(v);
        let bw = self.space.nonlinear_residual(&self.spec, &w)?;
        for i in 0..r.len() {
            r[i] += av[i] + bw[i] - load[i];
        }
        Ok(r)
    }

    fn guess(&self, prev: &SchemeState, n: usize) -> Vec<f64> {
        let v = prev.v.coeffs();
        match self.config.initial_guess {
            InitialGuess::Warm => v.to_vec(),
            InitialGuess::Zero => vec![0.0; v.len()],
            InitialGuess::Perturbed { scale, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(n as u64));
                v.iter().map(|x| x + scale * rng.random_range(-1.0..1.0)).collect()
            }
        }
    }

    /// One step from `prev` with load `Fⁿ`.
    pub fn step(&self, prev: &SchemeState, load: &[f64]) -> Result<StepOutcome> {
        let n = prev.n + 1;
        let tau = self.config.tau;
        let tol = self.config.tolerance(norm2(load));
        let (u_prev, v_prev) = (prev.u.coeffs(), prev.v.coeffs());
        let mut v = self.guess(prev, n);
        let mut r = self.residual(u_prev, v_prev, &v, load)?;
        let mut rn = norm2(&r);
        let mut iterations = 0;
        while rn > tol {
            if iterations == self.config.newton_max_iter {
                return Err(Error::NonConvergence {
                    step: n,
                    iterations,
                    residual: rn,
                });
            }
            iterations += 1;
            let w = axpy(u_prev, tau, &v);
            let jac = self.space.nonlinear_jacobian(&self.spec, &w)?;
            let k = self.base.linear_combination(1.0, &jac, tau);
            let chol = k
                .cholesky()
                .map_err(|e| Error::Numeric(format!("step {n}: {e}")))?;
            let delta = chol.solve(&r);
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let trial = axpy(&v, -lambda, &delta);
                let rt = self.residual(u_prev, v_prev, &trial, load)?;
                let rtn = norm2(&rt);
                if rtn < rn || rtn <= tol {
                    v = trial;
                    r = rt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Err(Error::NonConvergence {
                    step: n,
                    iterations,
                    residual: rn,
                });
            }
        }
        let (u, u_lo) = compensated_update(u_prev, &prev.u_lo, tau, &v);
        let space = prev.space().clone();
        Ok(StepOutcome {
            state: SchemeState {
                u: Field::new(space.clone(), u)?,
                v: Field::new(space, v)?,
                n,
                t: n as f64 * tau,
                u_lo,
            },
            iterations,
            residual_norm: rn,
            tolerance: tol,
        })
    }

    /// `½‖v‖² + Φ(u)` with the discrete `L²` norm.
    pub fn energy(&self, state: &SchemeState) -> Result<f64> {
        Ok(0.5 * self.mass.quad_form(state.v.coeffs()) + self.space.potential(&self.spec, state.u.coeffs())?)
    }
}

/// `u + s·v` with the previous rounding error folded in; returns the new
/// value and its rounding error (Knuth's two-sum).
fn compensated_update(u: &[f64], lo: &[f64], s: f64, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut hi = Vec::with_capacity(u.len());
    let mut err = Vec::with_capacity(u.len());
    for i in 0..u.len() {
        let a = u[i];
        let b = s.mul_add(v[i], lo[i]);
        let sum = a + b;
        let bb = sum - a;
        hi.push(sum);
        err.push((a - (sum - bb)) + (b - bb));
    }
    (hi, err)
}

/// Everything a [`StepMonitor`] sees after an accepted step.
#[derive(Debug)]
pub struct StepContext<'a> {
    pub stepper: &'a Stepper,
    pub prev: &'a SchemeState,
    pub state: &'a SchemeState,
    pub load: &'a [f64],
    /// `‖fⁿ‖_{L²}`
    pub load_l2: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    pub tolerance: f64,
}

/// Passive per-step observer.
pub trait StepMonitor {
    fn start(&mut self, _stepper: &Stepper, _initial: &SchemeState) -> Result<()> {
        Ok(())
    }

    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub l2_v: f64,
    pub h1semi_v: f64,
    pub potential: f64,
    pub energy: f64,
    /// Left minus right side of the one-step dissipation inequality.
    pub dissipation_slack: f64,
    pub newton_iters: usize,
    pub residual_norm: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub records: Vec<StepRecord>,
    pub initial: SchemeState,
    pub final_state: SchemeState,
    /// `maxᵢ |uᴺ − (u⁰ + τ Σ vʲ)|ᵢ`
    pub telescoping_error: f64,
    pub tau: f64,
}

pub const RUN_CSV_HEADER: &str =
    "step,t,l2_v,h1semi_v,potential,energy,dissipation_slack,newton_iters,residual_norm";

impl RunReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RUN_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e}",
                r.step, r.t, r.l2_v, r.h1semi_v, r.potential, r.energy, r.dissipation_slack, r.newton_iters, r.residual_norm
            );
        }
        out
    }

    pub fn max_newton_iters(&self) -> usize {
        self.records.iter().map(|r| r.newton_iters).max().unwrap_or(0)
    }
}

fn record(stepper: &Stepper, state: &SchemeState) -> Result<StepRecord> {
    let v = state.v.coeffs();
    let potential = stepper.space.potential(&stepper.spec, state.u.coeffs())?;
    let l2_sq = stepper.mass.quad_form(v);
    Ok(StepRecord {
        step: state.n,
        t: state.t,
        l2_v: l2_sq.max(0.0).sqrt(),
        h1semi_v: stepper.stiffness.quad_form(v).max(0.0).sqrt(),
        potential,
        energy: 0.5 * l2_sq + potential,
        dissipation_slack: 0.0,
        newton_iters: 0,
        residual_norm: 0.0,
        tolerance: 0.0,
    })
}

/// Runs `config.steps` steps from `(u0, v0)`.
pub fn run(
    spec: &NFunctionSpec,
    space: &SpaceHandle,
    u0: &Field,
    v0: &Field,
    sampler: &SourceSampler,
    config: &SchemeConfig,
    monitors: &mut [&mut dyn StepMonitor],
) -> Result<RunReport> {
    let stepper = Stepper::new(space.clone(), spec.clone(), config.clone())?;
    run_with(&stepper, u0, v0, sampler, monitors)
}

pub fn run_with(
    stepper: &Stepper,
    u0: &Field,
    v0: &Field,
    sampler: &SourceSampler,
    monitors: &mut [&mut dyn StepMonitor],
) -> Result<RunReport> {
    if !Arc::ptr_eq(u0.space(), stepper.space()) {
        return Err(Error::Contract("initial data must live on the run's space".into()));
    }
    let initial = SchemeState::initial(u0.clone(), v0.clone())?;
    for m in monitors.iter_mut() {
        m.start(stepper, &initial)?;
    }
    let tau = stepper.config.tau;
    let mut records = vec![record(stepper, &initial)?];
    let mut v_sum = vec![0.0; stepper.space.ndofs()];
    let mut state = initial.clone();
    for n in 1..=stepper.config.steps {
        let (load, load_l2) = average_source(sampler, stepper.space(), n, tau)?;
        let out = stepper.step(&state, &load)?;
        let prev_rec = records.last().expect("initial record");
        let mut rec = record(stepper, &out.state)?;
        let dv: Vec<f64> = out
            .state
            .v
            .coeffs()
            .iter()
            .zip(state.v.coeffs())
            .map(|(a, b)| a - b)
            .collect();
        let lhs = 0.5 * (rec.l2_v.powi(2) - prev_rec.l2_v.powi(2) + stepper.mass.quad_form(&dv))
            + tau * rec.h1semi_v.powi(2)
            + rec.potential
            - prev_rec.potential;
        rec.dissipation_slack = lhs - tau * dot(&load, out.state.v.coeffs());
        rec.newton_iters = out.iterations;
        rec.residual_norm = out.residual_norm;
        rec.tolerance = out.tolerance;
        let ctx = StepContext {
            stepper,
            prev: &state,
            state: &out.state,
            load: &load,
            load_l2,
            iterations: out.iterations,
            residual_norm: out.residual_norm,
            tolerance: out.tolerance,
        };
        for m in monitors.iter_mut() {
            m.observe(&ctx)?;
        }
        v_sum.iter_mut().zip(out.state.v.coeffs()).for_each(|(s, v)| *s += v);
        records.push(rec);
        state = out.state;
    }
    let telescoping_error = state
        .u
        .coeffs()
        .iter()
        .zip(u0.coeffs())
        .zip(&v_sum)
        .map(|((un, u0), s)| (un - (u0 + tau * s)).abs())
        .fold(0.0, f64::max);
    Ok(RunReport {
        records,
        initial,
        final_state: state,
        telescoping_error,
        tau,
    })
}

/// `‖M(uⁿ − 2uⁿ⁻¹ + uⁿ⁻²)/τ² + A(uⁿ − uⁿ⁻¹)/τ + B(uⁿ) − Fⁿ‖₂` for `n = 1..`,
/// with `u⁻¹ = u⁰ − τ v⁰`. `states[0]` is the initial state and `loads[n-1]`
/// the load of step `n`.
pub fn second_order_residual(stepper: &Stepper, states: &[SchemeState], loads: &[Vec<f64>]) -> Result<Vec<f64>> {
    if states.len() < 2 || loads.len() + 1 < states.len() {
        return Err(Error::Contract("need the initial state, one completed step and its load".into()));
    }
    let minus = u_minus_one(stepper, &states[0]);
    let mut out = Vec::with_capacity(states.len() - 1);
    for n in 1..states.len() {
        let un = (states[n].u.coeffs(), &states[n].u_lo[..]);
        let u1 = (states[n - 1].u.coeffs(), &states[n - 1].u_lo[..]);
        let u2 = if n >= 2 {
            (states[n - 2].u.coeffs(), &states[n - 2].u_lo[..])
        } else {
            (&minus.0[..], &minus.1[..])
        };
        out.push(second_order_norm(stepper, un, u1, u2, &loads[n - 1])?);
    }
    Ok(out)
}

/// `u⁻¹ = u⁰ − τ v⁰` as a compensated pair.
fn u_minus_one(stepper: &Stepper, initial: &SchemeState) -> (Vec<f64>, Vec<f64>) {
    compensated_update(initial.u.coeffs(), &initial.u_lo, -stepper.config.tau, initial.v.coeffs())
}

type Pair<'a> = (&'a [f64], &'a [f64]);

fn second_order_norm(stepper: &Stepper, un: Pair<'_>, u1: Pair<'_>, u2: Pair<'_>, load: &[f64]) -> Result<f64> {
    let tau = stepper.config.tau;
    let diff = |a: Pair<'_>, b: Pair<'_>, i: usize| (a.0[i] - b.0[i]) + (a.1[i] - b.1[i]);
    let n = un.0.len();
    let dd: Vec<f64> = (0..n)
        .map(|i| (diff(un, u1, i) - diff(u1, u2, i)) / (tau * tau))
        .collect();
    let d1: Vec<f64> = (0..n).map(|i| diff(un, u1, i) / tau).collect();
    let un = un.0;
    let mut r = stepper.mass.mul_vec(&dd);
    let a = stepper.stiffness.mul_vec(&d1);
    let b = stepper.space.nonlinear_residual(&stepper.spec, un)?;
    for i in 0..r.len() {
        r[i] += a[i] + b[i] - load[i];
    }
    Ok(norm2(&r))
}

/// Online form of [`second_order_residual`]: keeps the last two displacements.
#[derive(Debug, Default, Clone)]
pub struct SecondOrderMonitor {
    u_prev2: Option<(Vec<f64>, Vec<f64>)>,
    /// `(residual norm, Newton tolerance)` per step.
    pub entries: Vec<(f64, f64)>,
}

impl SecondOrderMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Largest `residual / tolerance` ratio seen.
    pub fn worst_ratio(&self) -> f64 {
        self.entries.iter().map(|(r, t)| r / t).fold(0.0, f64::max)
    }
}

impl StepMonitor for SecondOrderMonitor {
    fn start(&mut self, stepper: &Stepper, initial: &SchemeState) -> Result<()> {
        self.u_prev2 = Some(u_minus_one(stepper, initial));
        self.entries.clear();
        Ok(())
    }

    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        let u2 = self
            .u_prev2
            .take()
            .ok_or_else(|| Error::Contract("monitor was not started".into()))?;
        let r = second_order_norm(
            ctx.stepper,
            (ctx.state.u.coeffs(), &ctx.state.u_lo),
            (ctx.prev.u.coeffs(), &ctx.prev.u_lo),
            (&u2.0, &u2.1),
            ctx.load,
        )?;
        self.entries.push((r, ctx.tolerance));
        self.u_prev2 = Some((ctx.prev.u.coeffs().to_vec(), ctx.prev.u_lo.clone()));
        Ok(())
    }
}

/// Keeps every state and load, for offline checks.
#[derive(Debug, Default, Clone)]
pub struct HistoryMonitor {
    pub states: Vec<SchemeState>,
    pub loads: Vec<Vec<f64>>,
}

impl StepMonitor for HistoryMonitor {
    fn start(&mut self, _stepper: &Stepper, initial: &SchemeState) -> Result<()> {
        self.states = vec![initial.clone()];
        self.loads.clear();
        Ok(())
    }

    fn observe(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        self.states.push(ctx.state.clone());
        self.loads.push(ctx.load.to_vec());
        Ok(())
    }
}
