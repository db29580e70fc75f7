//! Discrete Orlicz-space functionals on piecewise-constant vector fields.
//!
//! A [`CellField`] holds one `d`-vector per cell together with the cell
//! measure, so every modular below is an exact finite sum. Gradients of P1
//! functions are exactly of this form; for the sine basis the "cells" are
//! quadrature points and the measures their weights.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nfunction::NFunctionSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    dim: usize,
    values: Vec<f64>,
    measures: Vec<f64>,
}

impl CellField {
    /// `values` is row-major, `dim` components per cell.
    pub fn new(dim: usize, values: Vec<f64>, measures: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != dim * measures.len() {
            return Err(Error::Contract(format!(
                "cell field with {} cells of dimension {dim} needs {} values, got {}",
                measures.len(),
                dim * measures.len(),
                values.len()
            )));
        }
        if measures.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Contract("cell measures must be positive".into()));
        }
        Ok(Self {
            dim,
            values,
            measures,
        })
    }

    /// The same vector on every cell.
    pub fn constant(value: &[f64], measures: Vec<f64>) -> Result<Self> {
        let values = measures.iter().flat_map(|_| value.iter().copied()).collect();
        Self::new(value.len(), values, measures)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.values
            .chunks_exact(self.dim)
            .zip(self.measures.iter().copied())
    }

    pub fn total_measure(&self) -> f64 {
        self.measures.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| t * v).collect(),
            ..self.clone()
        }
    }

    /// Cellwise sum; both fields must share the cell layout.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_matching(other)?;
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
            ..self.clone()
        })
    }

    /// Applies `f` to each cell value, producing a field of the same layout.
    pub fn map(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for (src, dst) in self
            .values
            .chunks_exact(self.dim)
            .zip(values.chunks_exact_mut(self.dim))
        {
            f(src, dst);
        }
        Self {
            values,
            ..self.clone()
        }
    }

    fn check_matching(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.measures != other.measures {
            return Err(Error::Contract("cell fields have different layouts".into()));
        }
        Ok(())
    }

    /// `cell,measure,c0,c1,...` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell,measure");
        for k in 0..self.dim {
            let _ = write!(out, ",c{k}");
        }
        out.push('\n');
        for (i, (v, m)) in self.iter().enumerate() {
            let _ = write!(out, "{i},{m:e}");
            for x in v {
                let _ = write!(out, ",{x:e}");
            }
            out.push('\n');
        }
        out
    }
}

fn check_spec(spec: &NFunctionSpec, field: &CellField) -> Result<()> {
    if spec.dim() != field.dim() {
        return Err(Error::Contract(format!(
            "potential dimension {} does not match field dimension {}",
            spec.dim(),
            field.dim()
        )));
    }
    Ok(())
}

/// `ρ(ξ) = Σ |cell| φ(ξ_cell)`.
pub fn modular(spec: &NFunctionSpec, field: &CellField) -> Result<f64> {
    check_spec(spec, field)?;
    Ok(field.iter().map(|(v, m)| m * spec.value(v)).sum())
}

fn modular_scaled(spec: &NFunctionSpec, field: &CellField, lambda: f64, buf: &mut [f64]) -> f64 {
    field
        .iter()
        .map(|(v, m)| {
            buf.iter_mut().zip(v).for_each(|(b, x)| *b = x / lambda);
            m * spec.value(buf)
        })
        .sum()
}

/// Luxemburg norm `inf{λ > 0 : ρ(ξ/λ) ≤ 1}` by bisection.
///
/// The bracket starts at `λ = 1` and is halved (lower end) or doubled (upper
/// end) until `ρ(ξ/λ)` straddles one. For `ξ ≠ 0` the infimum is attained, so
/// the returned `λ` must satisfy `|ρ(ξ/λ) − 1| ≤ tol`; failure to get there
/// means the potential is not an N-function.
pub fn luxemburg_norm(spec: &NFunctionSpec, field: &CellField, tol: f64) -> Result<f64> {
    check_spec(spec, field)?;
    if !(tol > 0.0) {
        return Err(Error::Contract(format!("tolerance must be positive, got {tol}")));
    }
    if field.is_zero() {
        return Ok(0.0);
    }
    let mut buf = vec![0.0; field.dim()];
    let mut rho = |lambda: f64| modular_scaled(spec, field, lambda, &mut buf);

    let at_one = rho(1.0);
    let (mut lo, mut hi) = (1.0f64, 1.0f64);
    if at_one > 1.0 {
        let mut k = 0;
        while rho(hi) > 1.0 {
            hi *= 2.0;
            k += 1;
            if k > 2000 || !hi.is_finite() {
                return Err(Error::Numeric("Luxemburg bracket: upper bound not found".into()));
            }
        }
        lo = hi / 2.0;
    } else if at_one < 1.0 {
        let mut k = 0;
        while rho(lo) < 1.0 {
            lo /= 2.0;
            k += 1;
            if k > 2000 || lo == 0.0 {
                return Err(Error::Numeric("Luxemburg bracket: lower bound not found".into()));
            }
        }
        hi = lo * 2.0;
    } else {
        return Ok(1.0);
    }

    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if rho(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let at_hi = rho(hi);
    let at_lo = rho(lo);
    let (lambda, value) = if (at_lo - 1.0).abs() < (at_hi - 1.0).abs() {
        (lo, at_lo)
    } else {
        (hi, at_hi)
    };
    if (value - 1.0).abs() > tol {
        return Err(Error::Numeric(format!(
            "Luxemburg norm not attained: ρ(ξ/λ) = {value} at λ = {lambda}"
        )));
    }
    Ok(lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// `|∫ ξ·η| ≤ 2 ‖ξ‖_φ ‖η‖_{φ*}`, with `‖·‖_{φ*}` computed from the closed-form conjugate.
pub fn holder_check(spec: &NFunctionSpec, xi: &CellField, eta: &CellField) -> Result<HolderReport> {
    check_spec(spec, xi)?;
    xi.check_matching(eta)?;
    let conj = spec.conjugate_spec().ok_or_else(|| {
        Error::Unsupported(format!("no closed-form conjugate for {}", spec.name()))
    })?;
    let lhs = xi
        .iter()
        .zip(eta.iter())
        .map(|((a, m), (b, _))| m * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .sum::<f64>()
        .abs();
    let tol = 1e-10;
    let rhs = 2.0 * luxemburg_norm(spec, xi, tol)? * luxemburg_norm(&conj, eta, tol)?;
    Ok(HolderReport {
        lhs,
        rhs,
        ok: lhs <= rhs + 1e-9 * (1.0 + rhs),
    })
}

/// Checks `ρ ≤ ‖ξ‖` when `‖ξ‖ ≤ 1`, `ρ ≥ ‖ξ‖` when `‖ξ‖ > 1`, and `‖ξ‖ ≤ ρ + 1`.
pub fn norm_modular_relation_check(spec: &NFunctionSpec, field: &CellField, tol: f64) -> Result<bool> {
    let n = luxemburg_norm(spec, field, tol)?;
    let rho = modular(spec, field)?;
    let first = if n <= 1.0 { rho <= n + tol } else { rho >= n - tol };
    Ok(first && n <= rho + 1.0 + tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit() -> Vec<f64> {
        vec![1.0]
    }

    fn p(p: f64, d: usize) -> NFunctionSpec {
        NFunctionSpec::power(p, d).unwrap()
    }

    #[test]
    fn modular_examples() {
        let f = CellField::constant(&[1.0, 0.0], unit()).unwrap();
        assert_eq!(modular(&p(2.0, 2), &f).unwrap(), 0.5);
        assert_eq!(modular(&p(2.0, 2), &f.zeros_like()).unwrap(), 0.0);
        let two = CellField::new(2, vec![2.0, 0.0, 0.0, 0.0], vec![0.5, 0.5]).unwrap();
        assert_eq!(modular(&p(2.0, 2), &two).unwrap(), 1.0);
        assert!(modular(&p(2.0, 1), &f).is_err());
    }

    #[test]
    fn luxemburg_examples() {
        let c = CellField::constant(&[3.0, 0.0], unit()).unwrap();
        // φ = |ξ|²/2: ρ(c/λ) = 9/(2λ²) = 1
        let expect = (4.5f64).sqrt();
        assert_relative_eq!(luxemburg_norm(&p(2.0, 2), &c, 1e-12).unwrap(), expect, max_relative = 1e-14);
        assert_eq!(luxemburg_norm(&p(2.0, 2), &c.zeros_like(), 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn luxemburg_exp_against_scalar_root() {
        // Oracle: solve e^{s} − s − 1 = 1 for s = 1/λ with Newton in the scalar unknown.
        let mut s = 1.0f64;
        for _ in 0..50 {
            s -= (s.exp() - s - 2.0) / (s.exp() - 1.0);
        }
        let oracle = 1.0 / s;
        let f = CellField::constant(&[1.0, 0.0], unit()).unwrap();
        let got = luxemburg_norm(&NFunctionSpec::exp(2).unwrap(), &f, 1e-12).unwrap();
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
    }

    #[test]
    fn luxemburg_power_is_scaled_lp() {
        let spec = p(3.0, 1);
        let f = CellField::new(1, vec![1.0, -2.0, 0.5], vec![0.2, 0.3, 0.5]).unwrap();
        let lp: f64 = f.iter().map(|(v, m)| m * v[0].abs().powi(3)).sum::<f64>().cbrt();
        let expect = lp * 3f64.powf(-1.0 / 3.0);
        assert_relative_eq!(luxemburg_norm(&spec, &f, 1e-12).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn holder_examples() {
        let spec = p(2.0, 2);
        let z = CellField::constant(&[0.0, 0.0], unit()).unwrap();
        let r = holder_check(&spec, &z, &z).unwrap();
        assert!(r.ok && r.lhs == 0.0 && r.rhs == 0.0);
        let c = CellField::constant(&[1.0, 0.0], unit()).unwrap();
        let r = holder_check(&spec, &c, &c).unwrap();
        assert_eq!(r.lhs, 1.0);
        // ‖c‖_φ = ‖c‖_{φ*} = 1/√2, so 2·½ = 1
        assert_relative_eq!(r.rhs, 1.0, max_relative = 1e-12);
        assert!(r.ok);
        let e = NFunctionSpec::exp(2).unwrap();
        assert!(matches!(holder_check(&e, &c, &c), Err(Error::Unsupported(_))));
    }

    #[test]
    fn norm_modular_examples() {
        let z = CellField::constant(&[0.0], unit()).unwrap();
        assert!(norm_modular_relation_check(&p(3.0, 1), &z, 1e-9).unwrap());
        let base = CellField::new(1, vec![0.3, -1.2, 2.0, 0.1], vec![0.25; 4]).unwrap();
        let spec = p(3.0, 1);
        let n = luxemburg_norm(&spec, &base, 1e-12).unwrap();
        for target in [0.5, 1.0, 2.0] {
            let f = base.scaled(target / n);
            assert_relative_eq!(luxemburg_norm(&spec, &f, 1e-12).unwrap(), target, max_relative = 1e-10);
            assert!(norm_modular_relation_check(&spec, &f, 1e-9).unwrap());
        }
        let ef = CellField::constant(&[1.0, 0.0], unit()).unwrap();
        assert!(norm_modular_relation_check(&NFunctionSpec::exp(2).unwrap(), &ef, 1e-9).unwrap());
    }

    #[test]
    fn layout_errors() {
        assert!(CellField::new(2, vec![1.0], vec![1.0]).is_err());
        assert!(CellField::new(1, vec![1.0], vec![0.0]).is_err());
        let a = CellField::constant(&[1.0], vec![0.5, 0.5]).unwrap();
        let b = CellField::constant(&[1.0], vec![1.0]).unwrap();
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn csv_header() {
        let f = CellField::constant(&[1.0, 2.0], vec![0.5, 0.5]).unwrap();
        let csv = f.to_csv();
        assert!(csv.starts_with("cell,measure,c0,c1\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    fn field_strategy(d: usize) -> impl Strategy<Value = CellField> {
        (1usize..6).prop_flat_map(move |n| {
            (
                prop::collection::vec(-3.0f64..3.0, n * d),
                prop::collection::vec(0.05f64..1.0, n),
            )
                .prop_map(move |(v, m)| CellField::new(d, v, m).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn homogeneous(f in field_strategy(2), t in -4.0f64..4.0) {
            prop_assume!(!f.is_zero() && t.abs() > 1e-3);
            let spec = NFunctionSpec::exp(2).unwrap();
            let a = luxemburg_norm(&spec, &f.scaled(t), 1e-8).unwrap();
            let b = t.abs() * luxemburg_norm(&spec, &f, 1e-8).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * b);
        }

        #[test]
        fn triangle(seed in 0usize..3, a in field_strategy(2)) {
            let spec = [p(2.0, 2), p(4.0, 2), NFunctionSpec::exp(2).unwrap()][seed].clone();
            let b = a.map(|v, o| { o[0] = v[1] - 0.5; o[1] = v[0] * v[0] * 0.3; });
            let n = |f: &CellField| luxemburg_norm(&spec, f, 1e-8).unwrap();
            prop_assert!(n(&a.add(&b).unwrap()) <= n(&a) + n(&b) + 1e-10);
        }

        #[test]
        fn power_matches_lp(f in field_strategy(2), pw in 1.2f64..5.0) {
            prop_assume!(!f.is_zero());
            let spec = p(pw, 2);
            let lp = f.iter()
                .map(|(v, m)| m * (v[0] * v[0] + v[1] * v[1]).sqrt().powf(pw))
                .sum::<f64>()
                .powf(1.0 / pw);
            let expect = lp * pw.powf(-1.0 / pw);
            let got = luxemburg_norm(&spec, &f, 1e-8).unwrap();
            prop_assert!((got - expect).abs() <= 1e-8 * expect, "{} vs {}", got, expect);
        }

        #[test]
        fn modular_midpoint_convex(a in field_strategy(1), s in -2.0f64..2.0) {
            let spec = p(3.0, 1);
            let b = a.map(|v, o| o[0] = s - v[0]);
            let mid = a.add(&b).unwrap().scaled(0.5);
            let lhs = modular(&spec, &mid).unwrap();
            let rhs = 0.5 * (modular(&spec, &a).unwrap() + modular(&spec, &b).unwrap());
            prop_assert!(lhs <= rhs + 1e-12);
        }
    }
}
