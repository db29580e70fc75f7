//! Catalog of N-functions `φ: ℝᵈ → ℝ`, their stresses `σ = ∇φ`, conjugates
//! `φ*`, and sampled diagnostics for the Δ2 and growth conditions.
//!
//! Catalog kinds:
//!
//! | kind       | `φ(ξ)`                  | `σ(ξ)`                        |
//! |------------|-------------------------|-------------------------------|
//! | `PowerIso` | `|ξ|ᵖ / p`              | `|ξ|^{p-2} ξ`                 |
//! | `ExpIso`   | `e^{|ξ|} - |ξ| - 1`     | `(e^{|ξ|} - 1) ξ / |ξ|`       |
//! | `QuadForm` | `ξᵀ A ξ`                | `2 A ξ`                       |
//!
//! plus `Custom` potentials given as callbacks.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::dot;

/// Scalar potential callback for [`NFunctionSpec::custom`].
pub type PotentialFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Gradient callback: writes `∇φ(ξ)` into the output slice.
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Quotient above which a sampled Δ2 ratio counts as blowing up.
pub const DELTA2_BLOWUP: f64 = 1e6;
/// Per-doubling growth factor that marks the growth quotient as divergent.
pub const GROWTH_DIVERGENCE_FACTOR: f64 = 1.25;

#[derive(Clone)]
pub enum Kind {
    PowerIso {
        p: f64,
    },
    ExpIso,
    QuadForm {
        a: DMatrix<f64>,
        a_inv: DMatrix<f64>,
    },
    Custom {
        name: String,
        value: PotentialFn,
        gradient: GradientFn,
    },
}

impl fmt::Debug for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::PowerIso { p } => f.debug_struct("PowerIso").field("p", p).finish(),
            Kind::ExpIso => f.write_str("ExpIso"),
            Kind::QuadForm { a, .. } => f.debug_struct("QuadForm").field("a", a).finish(),
            Kind::Custom { name, .. } => f.debug_struct("Custom").field("name", name).finish(),
        }
    }
}

/// An N-function together with its dimension. Immutable and cheap to clone.
#[derive(Debug, Clone)]
pub struct NFunctionSpec {
    kind: Kind,
    dim: usize,
}

/// Outcome of [`NFunctionSpec::delta2_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct Delta2Report {
    pub satisfied: bool,
    /// Sampled `sup φ(2ξ)/φ(ξ)` when the condition looks satisfied.
    pub constant: Option<f64>,
    /// Sampled sup at radius `R/8, R/4, R/2, R`.
    pub quotients: [f64; 4],
}

/// Outcome of [`NFunctionSpec::growth_constant_estimate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub finite: bool,
    /// Sampled least `C` with `φ*(σ(ξ)) ≤ C (1 + φ(ξ))`.
    pub constant: Option<f64>,
    /// Sampled `sup φ*(σ(ξ))/φ(ξ)` at radius `R/8, R/4, R/2, R`.
    pub quotients: [f64; 4],
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} has non-finite components")))
    }
}

/// `e^s - s - 1` without cancellation for small `s ≥ 0`.
fn exp_potential(s: f64) -> f64 {
    if s < 1e-3 {
        let s2 = s * s;
        s2 * (0.5 + s * (1.0 / 6.0 + s * (1.0 / 24.0 + s * (1.0 / 120.0 + s / 720.0))))
    } else {
        s.exp_m1() - s
    }
}

/// `(e^s - 1)/s`, continuous at 0.
fn expm1_over(s: f64) -> f64 {
    if s < 1e-8 {
        1.0 + 0.5 * s
    } else {
        s.exp_m1() / s
    }
}

impl NFunctionSpec {
    /// `φ(ξ) = |ξ|ᵖ/p`, requires `p > 1`.
    pub fn power(p: f64, dim: usize) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::Contract(format!("power exponent must be > 1, got {p}")));
        }
        Self::with_dim(Kind::PowerIso { p }, dim)
    }

    pub fn exp(dim: usize) -> Result<Self> {
        Self::with_dim(Kind::ExpIso, dim)
    }

    /// `φ(ξ) = ξᵀAξ` with `A` given row-major. `A` must be symmetric positive definite.
    pub fn quad_form(dim: usize, rows: &[f64]) -> Result<Self> {
        if dim == 0 || rows.len() != dim * dim {
            return Err(Error::Contract(format!(
                "quadratic form needs {} entries for dimension {dim}, got {}",
                dim * dim,
                rows.len()
            )));
        }
        check_finite(rows, "matrix")?;
        let a = DMatrix::from_row_slice(dim, dim, rows);
        let scale = a.amax().max(1.0);
        if (&a - a.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Contract("SPD check failed: matrix is not symmetric".into()));
        }
        let chol = a.clone().cholesky().ok_or_else(|| {
            Error::Contract("SPD check failed: Cholesky factorization broke down".into())
        })?;
        let a_inv = chol.inverse();
        Self::with_dim(Kind::QuadForm { a, a_inv }, dim)
    }

    /// A user-supplied potential. Only sampled checks of the N-function axioms
    /// are possible for these.
    pub fn custom(
        name: impl Into<String>,
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::with_dim(
            Kind::Custom {
                name: name.into(),
                value: Arc::new(value),
                gradient: Arc::new(gradient),
            },
            dim,
        )
    }

    fn with_dim(kind: Kind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Contract("dimension must be at least 1".into()));
        }
        Ok(Self { kind, dim })
    }

    pub fn kind(&self) -> &Kind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> String {
        match &self.kind {
            Kind::PowerIso { p } => format!("power(p={p})"),
            Kind::ExpIso => "exp".into(),
            Kind::QuadForm { .. } => "quadform".into(),
            Kind::Custom { name, .. } => format!("custom({name})"),
        }
    }

    /// `S` such that `σ(ξ) = S ξ`, when the stress is linear.
    pub fn linear_stress(&self) -> Option<DMatrix<f64>> {
        match &self.kind {
            Kind::PowerIso { p } if *p == 2.0 => Some(DMatrix::identity(self.dim, self.dim)),
            Kind::QuadForm { a, .. } => Some(a * 2.0),
            _ => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Contract(format!(
                "argument has dimension {}, potential has {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, xi: &[f64]) -> Result<f64> {
        self.check_dim(xi)?;
        check_finite(xi, "ξ")?;
        Ok(self.value(xi))
    }

    /// `φ(ξ)` without argument validation.
    pub fn value(&self, xi: &[f64]) -> f64 {
        match &self.kind {
            Kind::PowerIso { p } => norm(xi).powf(*p) / p,
            Kind::ExpIso => exp_potential(norm(xi)),
            Kind::QuadForm { a, .. } => quad(a, xi),
            Kind::Custom { value, .. } => value(xi),
        }
    }

    pub fn stress(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(xi)?;
        check_finite(xi, "ξ")?;
        let mut out = vec![0.0; self.dim];
        self.stress_into(xi, &mut out);
        Ok(out)
    }

    /// `σ(ξ)` written into `out`, without validation.
    pub fn stress_into(&self, xi: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::PowerIso { p } => {
                let s = norm(xi);
                let c = if s == 0.0 { 0.0 } else { s.powf(p - 2.0) };
                out.iter_mut().zip(xi).for_each(|(o, x)| *o = c * x);
            }
            Kind::ExpIso => {
                let c = expm1_over(norm(xi));
                out.iter_mut().zip(xi).for_each(|(o, x)| *o = c * x);
            }
            Kind::QuadForm { a, .. } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = 2.0 * (0..self.dim).map(|j| a[(i, j)] * xi[j]).sum::<f64>();
                }
            }
            Kind::Custom { gradient, .. } => gradient(xi, out),
        }
    }

    /// Row-major `Dσ(ξ)` (the Hessian of `φ`) written into `out` (length `d²`).
    /// Custom kinds use centered differences of the gradient callback.
    pub fn stress_jacobian_into(&self, xi: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.kind {
            Kind::PowerIso { p } => {
                let s = norm(xi);
                if s == 0.0 {
                    let diag = if *p == 2.0 {
                        1.0
                    } else if *p > 2.0 {
                        0.0
                    } else {
                        1e-12f64.powf(p - 2.0)
                    };
                    fill_scaled_identity(out, d, diag);
                    return;
                }
                let c = s.powf(p - 2.0);
                for i in 0..d {
                    for j in 0..d {
                        let id = if i == j { 1.0 } else { 0.0 };
                        out[i * d + j] = c * (id + (p - 2.0) * xi[i] * xi[j] / (s * s));
                    }
                }
            }
            Kind::ExpIso => {
                let s = norm(xi);
                if s == 0.0 {
                    fill_scaled_identity(out, d, 1.0);
                    return;
                }
                let tangential = expm1_over(s);
                let radial = s.exp();
                for i in 0..d {
                    for j in 0..d {
                        let id = if i == j { 1.0 } else { 0.0 };
                        let pr = xi[i] * xi[j] / (s * s);
                        out[i * d + j] = radial * pr + tangential * (id - pr);
                    }
                }
            }
            Kind::QuadForm { a, .. } => {
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = 2.0 * a[(i, j)];
                    }
                }
            }
            Kind::Custom { gradient, .. } => {
                let mut xp = xi.to_vec();
                let mut gp = vec![0.0; d];
                let mut gm = vec![0.0; d];
                for j in 0..d {
                    let h = 1e-6 * (1.0 + xi[j].abs());
                    xp[j] = xi[j] + h;
                    gradient(&xp, &mut gp);
                    xp[j] = xi[j] - h;
                    gradient(&xp, &mut gm);
                    xp[j] = xi[j];
                    for i in 0..d {
                        out[i * d + j] = (gp[i] - gm[i]) / (2.0 * h);
                    }
                }
                // symmetrize
                for i in 0..d {
                    for j in 0..i {
                        let m = 0.5 * (out[i * d + j] + out[j * d + i]);
                        out[i * d + j] = m;
                        out[j * d + i] = m;
                    }
                }
            }
        }
    }

    /// Closed-form `φ*` where one exists in the catalog.
    pub fn conjugate_closed_form(&self, eta: &[f64]) -> Option<f64> {
        match &self.kind {
            Kind::PowerIso { p } => {
                let q = p / (p - 1.0);
                Some(norm(eta).powf(q) / q)
            }
            Kind::QuadForm { a_inv, .. } => Some(0.25 * quad(a_inv, eta)),
            _ => None,
        }
    }

    /// The conjugate as an N-function in its own right (closed-form kinds only).
    pub fn conjugate_spec(&self) -> Option<NFunctionSpec> {
        match &self.kind {
            Kind::PowerIso { p } => Self::power(p / (p - 1.0), self.dim).ok(),
            Kind::QuadForm { a_inv, .. } => {
                let b = a_inv * 0.25;
                let rows: Vec<f64> = b.transpose().iter().copied().collect();
                Self::quad_form(self.dim, &rows).ok()
            }
            _ => None,
        }
    }

    /// `φ*(η) = sup_ξ (ξ·η − φ(ξ))`: closed form when available, numeric otherwise.
    pub fn conjugate_eval(&self, eta: &[f64]) -> Result<f64> {
        self.check_dim(eta)?;
        check_finite(eta, "η")?;
        match self.conjugate_closed_form(eta) {
            Some(v) => Ok(v),
            None => self.conjugate_numeric(eta),
        }
    }

    /// Numeric Legendre–Fenchel transform: coarse grid search over a box that
    /// grows until the best point is interior, then damped Newton ascent on
    /// `ξ·η − φ(ξ)`.
    pub fn conjugate_numeric(&self, eta: &[f64]) -> Result<f64> {
        self.check_dim(eta)?;
        check_finite(eta, "η")?;
        if eta.iter().all(|&e| e == 0.0) {
            return Ok(0.0);
        }
        let d = self.dim;
        let objective = |xi: &[f64]| dot(xi, eta) - self.value(xi);

        let mut radius = 1.0;
        let mut best = vec![0.0; d];
        let mut best_val = 0.0;
        let mut interior = false;
        for _ in 0..1100 {
            let (cand, val) = self.grid_search(eta, radius, &objective);
            if val > best_val {
                best_val = val;
                best = cand.clone();
            }
            let linf = cand.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if linf < 0.9 * radius {
                interior = true;
                break;
            }
            radius *= 2.0;
        }
        if !interior {
            return Err(Error::Numeric(format!(
                "conjugate maximizer not bracketed (radius {radius:e}, best value {best_val:e})"
            )));
        }

        let eta_scale = norm(eta).max(1.0);
        let mut xi = best;
        let mut val = best_val;
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        let mut grad_norm = f64::INFINITY;
        for _ in 0..200 {
            self.stress_into(&xi, &mut grad);
            grad.iter_mut().zip(eta).for_each(|(g, e)| *g = e - *g);
            grad_norm = norm(&grad);
            if grad_norm <= 1e-13 * eta_scale {
                break;
            }
            self.stress_jacobian_into(&xi, &mut hess);
            let h = DMatrix::from_row_slice(d, d, &hess);
            let g = DVector::from_column_slice(&grad);
            let dir: Vec<f64> = match h.cholesky() {
                Some(c) => c.solve(&g).iter().copied().collect(),
                None => grad.clone(),
            };
            let mut step = 1.0;
            let mut improved = false;
            for _ in 0..60 {
                let trial: Vec<f64> = xi.iter().zip(&dir).map(|(x, s)| x + step * s).collect();
                let tv = objective(&trial);
                if tv.is_finite() && tv >= val {
                    improved = tv > val || trial != xi;
                    xi = trial;
                    val = tv;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if grad_norm > 1e-6 * eta_scale {
            return Err(Error::Numeric(format!(
                "conjugate ascent stalled: |η − σ(ξ)| = {grad_norm:e} at ξ = {xi:?}"
            )));
        }
        Ok(val.max(0.0))
    }

    fn grid_search(
        &self,
        eta: &[f64],
        radius: f64,
        objective: &impl Fn(&[f64]) -> f64,
    ) -> (Vec<f64>, f64) {
        let d = self.dim;
        let mut best = vec![0.0; d];
        let mut best_val = 0.0;
        let mut consider = |p: Vec<f64>| {
            let v = objective(&p);
            if v.is_finite() && v > best_val {
                best_val = v;
                best = p;
            }
        };
        // ray along η, where isotropic maximizers live
        let en = norm(eta);
        for k in 1..=64 {
            let t = radius * k as f64 / 64.0;
            consider(eta.iter().map(|e| t * e / en).collect());
        }
        let per_axis: usize = match d {
            1 => 65,
            2 => 33,
            3 => 13,
            _ => 0,
        };
        if per_axis > 0 {
            let total = per_axis.pow(d as u32);
            for flat in 0..total {
                let mut rem = flat;
                let p = (0..d)
                    .map(|_| {
                        let k = rem % per_axis;
                        rem /= per_axis;
                        radius * (2.0 * k as f64 / (per_axis - 1) as f64 - 1.0)
                    })
                    .collect();
                consider(p);
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            for _ in 0..4096 {
                consider((0..d).map(|_| radius * rng.random_range(-1.0..1.0)).collect());
            }
        }
        (best, best_val)
    }

    /// `φ(ξ) + φ*(η) − ξ·η`, nonnegative by Fenchel–Young.
    pub fn young_gap(&self, xi: &[f64], eta: &[f64]) -> Result<f64> {
        let phi = self.evaluate(xi)?;
        let conj = self.conjugate_eval(eta)?;
        Ok(phi + conj - dot(xi, eta))
    }

    /// Sampled Δ2 detector with the default seed.
    pub fn delta2_check(&self, sample_radius: f64, samples: usize) -> Result<Delta2Report> {
        self.delta2_check_seeded(sample_radius, samples, 0)
    }

    /// Estimates `sup φ(2ξ)/φ(ξ)` on `0 < |ξ| ≤ R`. The condition is reported
    /// as failing when the sampled quotient exceeds [`DELTA2_BLOWUP`] and
    /// increases strictly over the radii `R/8, R/4, R/2, R`.
    pub fn delta2_check_seeded(
        &self,
        sample_radius: f64,
        samples: usize,
        seed: u64,
    ) -> Result<Delta2Report> {
        validate_sampling(sample_radius, samples)?;
        let quotients = self.shell_sups(sample_radius, samples, seed, |xi| {
            let doubled: Vec<f64> = xi.iter().map(|x| 2.0 * x).collect();
            Ok(self.value(&doubled) / self.value(xi))
        })?;
        let growing = quotients.windows(2).all(|w| w[1] > w[0]);
        let satisfied = !(quotients[3] > DELTA2_BLOWUP && growing);
        Ok(Delta2Report {
            satisfied,
            constant: satisfied.then_some(quotients[3]),
            quotients,
        })
    }

    /// Sampled growth-constant estimate with the default seed.
    pub fn growth_constant_estimate(
        &self,
        sample_radius: f64,
        samples: usize,
    ) -> Result<GrowthReport> {
        self.growth_constant_estimate_seeded(sample_radius, samples, 0)
    }

    /// Estimates the least `C` with `φ*(σ(ξ)) ≤ C(1 + φ(ξ))` on `|ξ| ≤ R`.
    ///
    /// Divergence is judged on the scale-free quotient `φ*(σ(ξ))/φ(ξ)`, which
    /// stays bounded exactly when Δ2 holds: the estimate is reported infinite
    /// when that quotient grows by at least [`GROWTH_DIVERGENCE_FACTOR`] over
    /// each of three radius doublings, or exceeds [`DELTA2_BLOWUP`] while growing.
    pub fn growth_constant_estimate_seeded(
        &self,
        sample_radius: f64,
        samples: usize,
        seed: u64,
    ) -> Result<GrowthReport> {
        validate_sampling(sample_radius, samples)?;
        let mut sigma = vec![0.0; self.dim];
        let quotients = self.shell_sups(sample_radius, samples, seed, |xi| {
            self.stress_into(xi, &mut sigma);
            Ok(self.conjugate_eval(&sigma)? / self.value(xi))
        })?;
        let mut constant = 0.0f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for xi in sample_points(self.dim, sample_radius, samples, &mut rng) {
            self.stress_into(&xi, &mut sigma);
            let c = self.conjugate_eval(&sigma)? / (1.0 + self.value(&xi));
            constant = constant.max(c);
        }
        let steady_growth = quotients
            .windows(2)
            .all(|w| w[1] >= GROWTH_DIVERGENCE_FACTOR * w[0]);
        let growing = quotients.windows(2).all(|w| w[1] > w[0]);
        let finite = !(steady_growth || (quotients[3] > DELTA2_BLOWUP && growing));
        Ok(GrowthReport {
            finite,
            constant: finite.then_some(constant),
            quotients,
        })
    }

    fn shell_sups(
        &self,
        radius: f64,
        samples: usize,
        seed: u64,
        mut quotient: impl FnMut(&[f64]) -> Result<f64>,
    ) -> Result<[f64; 4]> {
        let mut out = [0.0; 4];
        for (k, slot) in out.iter_mut().enumerate() {
            let r = radius / f64::powi(2.0, 3 - k as i32);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sup = 0.0f64;
            for xi in sample_points(self.dim, r, samples, &mut rng) {
                let q = quotient(&xi)?;
                if q.is_nan() {
                    return Err(Error::Numeric(format!("quotient undefined at ξ = {xi:?}")));
                }
                sup = sup.max(q);
            }
            *slot = sup;
        }
        Ok(out)
    }

    /// `min (σ(ξ) − σ(η))·(ξ − η)` over the given pairs.
    pub fn monotonicity_probe(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        let mut sa = vec![0.0; self.dim];
        let mut sb = vec![0.0; self.dim];
        pairs
            .iter()
            .map(|(a, b)| {
                self.stress_into(a, &mut sa);
                self.stress_into(b, &mut sb);
                (0..self.dim).map(|i| (sa[i] - sb[i]) * (a[i] - b[i])).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn validate_sampling(radius: f64, samples: usize) -> Result<()> {
    if !(radius > 0.0) || !radius.is_finite() || samples == 0 {
        return Err(Error::Contract(format!(
            "need sample_radius > 0 and samples ≥ 1 (got {radius}, {samples})"
        )));
    }
    Ok(())
}

/// Random directions with radii evenly spread over `(0, R]`; the last sample
/// sits on the sphere `|ξ| = R`.
fn sample_points(dim: usize, radius: f64, samples: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..samples)
        .map(|i| {
            let r = radius * (i + 1) as f64 / samples as f64;
            let dir = random_direction(dim, rng);
            dir.iter().map(|x| r * x).collect()
        })
        .collect()
}

pub(crate) fn random_direction(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > 1e-3 && n <= 1.0 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn fill_scaled_identity(out: &mut [f64], d: usize, c: f64) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..d {
        out[i * d + i] = c;
    }
}

fn quad(a: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = x.len();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += x[i] * a[(i, j)] * x[j];
        }
    }
    acc
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}
