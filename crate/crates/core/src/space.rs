//! Discrete spaces `V_m` on `Ω = (0,1)` or `(0,1)²` with homogeneous Dirichlet
//! conditions:
//!
//! * `FemP1_1D(n)`: piecewise-linear hats on `n` uniform cells;
//! * `FemP1_2D(nx, ny)`: piecewise-linear hats on a structured triangulation,
//!   every square split along its `(i,j)–(i+1,j+1)` diagonal;
//! * `Spectral1D(m)`: `√2 sin(kπx)`, `k = 1..m`, the `L²`-orthonormal
//!   eigenbasis of the Dirichlet Laplacian (and of every `Hʳ ∩ H¹₀` Riesz map).
//!
//! For P1 spaces gradients are cell-constant, so the stress term and the
//! discrete potential are integrated exactly with one point per cell. The
//! sine basis is integrated with composite 4-point Gauss on
//! [`SPECTRAL_SUBINTERVALS`] subintervals.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::SymBandMatrix;
use crate::nfunction::NFunctionSpec;
use crate::orlicz::CellField;
use crate::quadrature::{composite_gauss, GAUSS4_UNIT, TRIANGLE7};

pub const SPECTRAL_SUBINTERVALS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    FemP1_1D { cells: usize },
    FemP1_2D { nx: usize, ny: usize },
    Spectral1D { modes: usize },
}

impl SpaceKind {
    pub fn label(&self) -> &'static str {
        match self {
            SpaceKind::FemP1_1D { .. } => "fem1d",
            SpaceKind::FemP1_2D { .. } => "fem2d",
            SpaceKind::Spectral1D { .. } => "spectral1d",
        }
    }

    /// Cells per axis (FEM) or number of modes (spectral).
    pub fn resolution(&self) -> usize {
        match *self {
            SpaceKind::FemP1_1D { cells } => cells,
            SpaceKind::FemP1_2D { nx, .. } => nx,
            SpaceKind::Spectral1D { modes } => modes,
        }
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self, SpaceKind::Spectral1D { .. })
    }
}

/// A P1 simplex: 2 vertices in 1D, 3 in 2D. Boundary vertices carry no dof.
#[derive(Debug, Clone)]
pub struct Cell {
    pub vertices: Vec<[f64; 2]>,
    pub dofs: Vec<Option<usize>>,
    /// Gradient of each vertex's barycentric coordinate.
    pub grads: Vec<[f64; 2]>,
    pub measure: f64,
}

#[derive(Debug)]
struct SpectralTables {
    points: Vec<f64>,
    weights: Vec<f64>,
    /// `√2 sin(kπx_q)`, row-major `[q][k]`.
    values: Vec<f64>,
    /// `√2 kπ cos(kπx_q)`, row-major `[q][k]`.
    slopes: Vec<f64>,
}

/// Mesh/basis plus quadrature for one discrete space. Shared as [`SpaceHandle`].
#[derive(Debug)]
pub struct Space {
    kind: SpaceKind,
    dim: usize,
    ndofs: usize,
    cells: Vec<Cell>,
    dof_coords: Vec<[f64; 2]>,
    spectral: Option<SpectralTables>,
}

pub type SpaceHandle = Arc<Space>;

/// Coefficient vector over a space.
#[derive(Debug, Clone)]
pub struct Field {
    space: SpaceHandle,
    coeffs: Vec<f64>,
}

impl Field {
    pub fn new(space: SpaceHandle, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.ndofs() {
            return Err(Error::Contract(format!(
                "field has {} coefficients, space has {} dofs",
                coeffs.len(),
                space.ndofs()
            )));
        }
        Ok(Self { space, coeffs })
    }

    pub fn zeros(space: SpaceHandle) -> Self {
        let n = space.ndofs();
        Self {
            space,
            coeffs: vec![0.0; n],
        }
    }

    pub fn space(&self) -> &SpaceHandle {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }
}

pub fn build_space(kind: SpaceKind) -> Result<SpaceHandle> {
    Space::build(kind).map(Arc::new)
}

impl Space {
    pub fn build(kind: SpaceKind) -> Result<Self> {
        match kind {
            SpaceKind::FemP1_1D { cells } => {
                if cells == 0 {
                    return Err(Error::Contract("resolution must be at least 1".into()));
                }
                Ok(Self::fem_1d(cells))
            }
            SpaceKind::FemP1_2D { nx, ny } => {
                if nx == 0 || ny == 0 {
                    return Err(Error::Contract("resolution must be at least 1".into()));
                }
                Ok(Self::fem_2d(nx, ny))
            }
            SpaceKind::Spectral1D { modes } => {
                if modes == 0 {
                    return Err(Error::Contract("resolution must be at least 1".into()));
                }
                Ok(Self::spectral(modes))
            }
        }
    }

    fn fem_1d(n: usize) -> Self {
        let h = 1.0 / n as f64;
        let dof = |i: usize| (i > 0 && i < n).then(|| i - 1);
        let cells = (0..n)
            .map(|i| Cell {
                vertices: vec![[i as f64 * h, 0.0], [(i + 1) as f64 * h, 0.0]],
                dofs: vec![dof(i), dof(i + 1)],
                grads: vec![[-1.0 / h, 0.0], [1.0 / h, 0.0]],
                measure: h,
            })
            .collect();
        Self {
            kind: SpaceKind::FemP1_1D { cells: n },
            dim: 1,
            ndofs: n - 1,
            cells,
            dof_coords: (1..n).map(|i| [i as f64 * h, 0.0]).collect(),
            spectral: None,
        }
    }

    fn fem_2d(nx: usize, ny: usize) -> Self {
        let (hx, hy) = (1.0 / nx as f64, 1.0 / ny as f64);
        let node = |i: usize, j: usize| [i as f64 * hx, j as f64 * hy];
        let dof = |i: usize, j: usize| {
            (i > 0 && i < nx && j > 0 && j < ny).then(|| (i - 1) + (j - 1) * (nx - 1))
        };
        let mut cells = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                for tri in [
                    [(i, j), (i + 1, j), (i + 1, j + 1)],
                    [(i, j), (i + 1, j + 1), (i, j + 1)],
                ] {
                    let vertices: Vec<[f64; 2]> = tri.iter().map(|&(a, b)| node(a, b)).collect();
                    let dofs = tri.iter().map(|&(a, b)| dof(a, b)).collect();
                    let (grads, measure) = triangle_gradients(&vertices);
                    cells.push(Cell {
                        vertices,
                        dofs,
                        grads,
                        measure,
                    });
                }
            }
        }
        let mut dof_coords = Vec::with_capacity((nx - 1) * (ny - 1));
        for j in 1..ny {
            for i in 1..nx {
                dof_coords.push(node(i, j));
            }
        }
        Self {
            kind: SpaceKind::FemP1_2D { nx, ny },
            dim: 2,
            ndofs: (nx - 1) * (ny - 1),
            cells,
            dof_coords,
            spectral: None,
        }
    }

    fn spectral(m: usize) -> Self {
        let rule = composite_gauss(0.0, 1.0, SPECTRAL_SUBINTERVALS);
        let mut values = Vec::with_capacity(rule.len() * m);
        let mut slopes = Vec::with_capacity(rule.len() * m);
        for &(x, _) in &rule {
            for k in 1..=m {
                let w = k as f64 * PI;
                values.push(SQRT_2 * (w * x).sin());
                slopes.push(SQRT_2 * w * (w * x).cos());
            }
        }
        Self {
            kind: SpaceKind::Spectral1D { modes: m },
            dim: 1,
            ndofs: m,
            cells: Vec::new(),
            dof_coords: (1..=m).map(|i| [i as f64 / (m + 1) as f64, 0.0]).collect(),
            spectral: Some(SpectralTables {
                points: rule.iter().map(|p| p.0).collect(),
                weights: rule.iter().map(|p| p.1).collect(),
                values,
                slopes,
            }),
        }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    /// Spatial dimension `d` of `Ω`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ndofs(&self) -> usize {
        self.ndofs
    }

    /// P1 cells; empty for the sine basis.
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn domain_measure(&self) -> f64 {
        1.0
    }

    /// Wavenumbers `kπ`, `k = 1..m` (spectral only).
    pub fn wavenumbers(&self) -> Option<Vec<f64>> {
        match self.kind {
            SpaceKind::Spectral1D { modes } => Some((1..=modes).map(|k| k as f64 * PI).collect()),
            _ => None,
        }
    }

    /// Mesh width `h` (FEM) or `1/m` (spectral).
    pub fn mesh_size(&self) -> f64 {
        1.0 / self.kind.resolution() as f64
    }

    fn bandwidth(&self) -> usize {
        match self.kind {
            SpaceKind::FemP1_1D { .. } => 1,
            SpaceKind::FemP1_2D { nx, .. } => nx,
            SpaceKind::Spectral1D { modes } => modes - 1,
        }
    }

    fn tables(&self) -> Option<&SpectralTables> {
        self.spectral.as_ref()
    }

    fn check_len(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.ndofs {
            return Err(Error::Contract(format!(
                "coefficient vector has length {}, space has {} dofs",
                coeffs.len(),
                self.ndofs
            )));
        }
        Ok(())
    }

    fn check_spec(&self, spec: &NFunctionSpec) -> Result<()> {
        if spec.dim() != self.dim {
            return Err(Error::Contract(format!(
                "potential dimension {} does not match space dimension {}",
                spec.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `M_ij = ∫ φ_i φ_j`.
    pub fn assemble_mass(&self) -> SymBandMatrix {
        if self.kind.is_spectral() {
            return SymBandMatrix::identity(self.ndofs);
        }
        let mut m = SymBandMatrix::zeros(self.ndofs, self.bandwidth());
        let nv = self.dim + 1;
        let denom = ((self.dim + 1) * (self.dim + 2)) as f64;
        for cell in &self.cells {
            for a in 0..nv {
                let Some(i) = cell.dofs[a] else { continue };
                for b in 0..=a {
                    let Some(j) = cell.dofs[b] else { continue };
                    let factor = if a == b { 2.0 } else { 1.0 };
                    m.add(i, j, cell.measure * factor / denom);
                }
            }
        }
        m
    }

    /// `A_ij = ∫ ∇φ_i·∇φ_j`.
    pub fn assemble_stiffness(&self) -> SymBandMatrix {
        if let Some(k) = self.wavenumbers() {
            return SymBandMatrix::from_diagonal(&k.iter().map(|w| w * w).collect::<Vec<_>>());
        }
        self.weighted_stiffness(&|_cell, out: &mut [f64]| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for i in 0..self.dim {
                out[i * self.dim + i] = 1.0;
            }
        })
    }

    /// `∫ ∇φ_jᵀ K_cell ∇φ_i` for a cellwise `d×d` coefficient.
    fn weighted_stiffness(&self, coeff: &dyn Fn(usize, &mut [f64])) -> SymBandMatrix {
        let d = self.dim;
        let nv = d + 1;
        let mut k = vec![0.0; d * d];
        let mut mat = SymBandMatrix::zeros(self.ndofs, self.bandwidth());
        for (c, cell) in self.cells.iter().enumerate() {
            coeff(c, &mut k);
            for a in 0..nv {
                let Some(i) = cell.dofs[a] else { continue };
                for b in 0..=a {
                    let Some(j) = cell.dofs[b] else { continue };
                    let mut s = 0.0;
                    for r in 0..d {
                        for t in 0..d {
                            s += cell.grads[a][r] * k[r * d + t] * cell.grads[b][t];
                        }
                    }
                    mat.add(i, j, cell.measure * s);
                }
            }
        }
        mat
    }

    /// Exact cell-constant `∇u_h` (P1 spaces only).
    pub fn gradient_per_cell(&self, coeffs: &[f64]) -> Result<CellField> {
        if self.kind.is_spectral() {
            return Err(Error::Unsupported(
                "spectral gradients are not cell-constant; use gradient_sampled".into(),
            ));
        }
        self.check_len(coeffs)?;
        Ok(self.gradient_sampled_unchecked(coeffs))
    }

    /// `∇u_h` as a [`CellField`]: exact per cell for P1, point values with
    /// quadrature weights as measures for the sine basis.
    pub fn gradient_sampled(&self, coeffs: &[f64]) -> Result<CellField> {
        self.check_len(coeffs)?;
        Ok(self.gradient_sampled_unchecked(coeffs))
    }

    fn gradient_sampled_unchecked(&self, coeffs: &[f64]) -> CellField {
        let d = self.dim;
        if let Some(t) = self.tables() {
            let m = self.ndofs;
            let values = t
                .slopes
                .chunks_exact(m)
                .map(|row| row.iter().zip(coeffs).map(|(s, c)| s * c).sum())
                .collect();
            return CellField::new(1, values, t.weights.clone()).expect("valid layout");
        }
        let mut values = Vec::with_capacity(self.cells.len() * d);
        for cell in &self.cells {
            let g = cell_gradient(cell, coeffs, d);
            values.extend_from_slice(&g[..d]);
        }
        let measures = self.cells.iter().map(|c| c.measure).collect();
        CellField::new(d, values, measures).expect("valid layout")
    }

    /// Discrete potential `Φ(u) = ∫ φ(∇u_h)`.
    pub fn potential(&self, spec: &NFunctionSpec, coeffs: &[f64]) -> Result<f64> {
        self.check_spec(spec)?;
        crate::orlicz::modular(spec, &self.gradient_sampled(coeffs)?)
    }

    /// `B(u)_j = ∫ σ(∇u_h)·∇φ_j`.
    pub fn nonlinear_residual(&self, spec: &NFunctionSpec, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check_spec(spec)?;
        self.check_len(coeffs)?;
        let d = self.dim;
        if let Some(t) = self.tables() {
            if let Some(s) = spec.linear_stress() {
                let a = self.assemble_stiffness();
                return Ok(a.mul_vec(coeffs).iter().map(|x| s[(0, 0)] * x).collect());
            }
            let m = self.ndofs;
            let mut out = vec![0.0; m];
            let mut sig = [0.0];
            for (row, w) in t.slopes.chunks_exact(m).zip(&t.weights) {
                let g: f64 = row.iter().zip(coeffs).map(|(s, c)| s * c).sum();
                spec.stress_into(&[g], &mut sig);
                let ws = w * sig[0];
                out.iter_mut().zip(row).for_each(|(o, s)| *o += ws * s);
            }
            return Ok(out);
        }
        let mut out = vec![0.0; self.ndofs];
        let mut sig = [0.0; 2];
        for cell in &self.cells {
            let g = cell_gradient(cell, coeffs, d);
            spec.stress_into(&g[..d], &mut sig[..d]);
            for (a, dof) in cell.dofs.iter().enumerate() {
                if let Some(j) = *dof {
                    let dotp: f64 = (0..d).map(|r| sig[r] * cell.grads[a][r]).sum();
                    out[j] += cell.measure * dotp;
                }
            }
        }
        Ok(out)
    }

    /// `J(u)_ij = ∫ ∇φ_jᵀ Dσ(∇u_h) ∇φ_i`, the Jacobian of [`Self::nonlinear_residual`].
    pub fn nonlinear_jacobian(&self, spec: &NFunctionSpec, coeffs: &[f64]) -> Result<SymBandMatrix> {
        self.check_spec(spec)?;
        self.check_len(coeffs)?;
        if let Some(t) = self.tables() {
            let a = self.assemble_stiffness();
            if let Some(s) = spec.linear_stress() {
                return Ok(a.linear_combination(s[(0, 0)], &a, 0.0));
            }
            let m = self.ndofs;
            let mut dense = vec![0.0; m * m];
            let mut ds = [0.0];
            for (row, w) in t.slopes.chunks_exact(m).zip(&t.weights) {
                let g: f64 = row.iter().zip(coeffs).map(|(s, c)| s * c).sum();
                spec.stress_jacobian_into(&[g], &mut ds);
                let wd = w * ds[0];
                if wd == 0.0 {
                    continue;
                }
                for i in 0..m {
                    let ri = wd * row[i];
                    let dst = &mut dense[i * m..i * m + i + 1];
                    dst.iter_mut().zip(&row[..=i]).for_each(|(o, s)| *o += ri * s);
                }
            }
            let mut out = SymBandMatrix::zeros(m, m - 1);
            for i in 0..m {
                for j in 0..=i {
                    out.add(i, j, dense[i * m + j]);
                }
            }
            return Ok(out);
        }
        let grads = self.gradient_sampled_unchecked(coeffs);
        Ok(self.weighted_stiffness(&|c, out: &mut [f64]| {
            spec.stress_jacobian_into(grads.value(c), out);
        }))
    }

    /// Composite quadrature of `g(x, u_h(x))` over `Ω`.
    fn integrate_with_field(&self, coeffs: &[f64], mut g: impl FnMut(&[f64], f64) -> f64) -> f64 {
        if let Some(t) = self.tables() {
            let m = self.ndofs;
            return t
                .values
                .chunks_exact(m)
                .zip(t.points.iter().zip(&t.weights))
                .map(|(row, (&x, &w))| {
                    let u: f64 = row.iter().zip(coeffs).map(|(s, c)| s * c).sum();
                    w * g(&[x], u)
                })
                .sum();
        }
        let mut acc = 0.0;
        self.for_each_fem_point(|cell, lam, x, w| {
            let u: f64 = cell
                .dofs
                .iter()
                .zip(lam)
                .filter_map(|(d, l)| d.map(|i| l * coeffs[i]))
                .sum();
            acc += w * g(&x[..self.dim], u);
        });
        acc
    }

    fn for_each_fem_point(&self, mut visit: impl FnMut(&Cell, &[f64], [f64; 2], f64)) {
        for cell in &self.cells {
            if self.dim == 1 {
                for &(s, w) in &GAUSS4_UNIT {
                    let lam = [1.0 - s, s];
                    let x = [lam[0] * cell.vertices[0][0] + lam[1] * cell.vertices[1][0], 0.0];
                    visit(cell, &lam, x, w * cell.measure);
                }
            } else {
                for (lam, w) in &TRIANGLE7 {
                    let mut x = [0.0; 2];
                    for (l, v) in lam.iter().zip(&cell.vertices) {
                        x[0] += l * v[0];
                        x[1] += l * v[1];
                    }
                    visit(cell, lam, x, w * cell.measure);
                }
            }
        }
    }

    /// `b_j = ∫ f φ_j`.
    pub fn load_vector(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.ndofs];
        if let Some(t) = self.tables() {
            let m = self.ndofs;
            for (row, (&x, &w)) in t.values.chunks_exact(m).zip(t.points.iter().zip(&t.weights)) {
                let fw = w * f(&[x]);
                out.iter_mut().zip(row).for_each(|(o, s)| *o += fw * s);
            }
            return out;
        }
        self.for_each_fem_point(|cell, lam, x, w| {
            let fw = w * f(&x[..self.dim]);
            for (d, l) in cell.dofs.iter().zip(lam) {
                if let Some(i) = d {
                    out[*i] += fw * l;
                }
            }
        });
        out
    }

    /// `L²`-orthogonal projection: solves `M c = b`.
    pub fn l2_project(self: &Arc<Self>, f: impl Fn(&[f64]) -> f64) -> Result<Field> {
        let b = self.load_vector(f);
        let coeffs = if self.kind.is_spectral() {
            b
        } else {
            self.assemble_mass().cholesky()?.solve(&b)
        };
        Field::new(self.clone(), coeffs)
    }

    /// `‖u_h − g‖_{L²(Ω)}` by quadrature.
    pub fn l2_error(&self, coeffs: &[f64], exact: impl Fn(&[f64]) -> f64) -> Result<f64> {
        self.check_len(coeffs)?;
        Ok(self
            .integrate_with_field(coeffs, |x, u| (u - exact(x)).powi(2))
            .max(0.0)
            .sqrt())
    }

    /// `‖g‖_{L²(Ω)}` with the space's quadrature.
    pub fn l2_norm_of(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        let zeros = vec![0.0; self.ndofs];
        self.integrate_with_field(&zeros, |x, _| g(x).powi(2)).sqrt()
    }

    /// `‖∇u_h − ∇g‖_{L²(Ω)}`; `grad` writes `∇g(x)`.
    pub fn h1_semi_error(&self, coeffs: &[f64], grad: impl Fn(&[f64], &mut [f64])) -> Result<f64> {
        self.check_len(coeffs)?;
        let d = self.dim;
        let mut gx = [0.0; 2];
        let mut acc = 0.0;
        if let Some(t) = self.tables() {
            let m = self.ndofs;
            for (row, (&x, &w)) in t.slopes.chunks_exact(m).zip(t.points.iter().zip(&t.weights)) {
                let du: f64 = row.iter().zip(coeffs).map(|(s, c)| s * c).sum();
                grad(&[x], &mut gx[..1]);
                acc += w * (du - gx[0]).powi(2);
            }
            return Ok(acc.sqrt());
        }
        self.for_each_fem_point(|cell, _lam, x, w| {
            let g = cell_gradient(cell, coeffs, d);
            grad(&x[..d], &mut gx[..d]);
            acc += w * (0..d).map(|r| (g[r] - gx[r]).powi(2)).sum::<f64>();
        });
        Ok(acc.sqrt())
    }

    /// `(Σ c_k² / W_k)^{1/2}`, `W_k = Σ_{j=0}^{r} (kπ)^{2j}`: the dual norm of
    /// `w` against `Hʳ ∩ H¹₀` with its canonical inner product on the sine basis.
    pub fn hr_dual_norm(&self, coeffs: &[f64], r: usize) -> Result<f64> {
        let Some(k) = self.wavenumbers() else {
            return Err(Error::Unsupported("dual Hʳ norm needs the sine basis".into()));
        };
        if r < 2 {
            return Err(Error::Contract(format!("r must be at least 2, got {r}")));
        }
        self.check_len(coeffs)?;
        Ok(coeffs
            .iter()
            .zip(&k)
            .map(|(c, w)| c * c / hr_weight(*w, r))
            .sum::<f64>()
            .sqrt())
    }

    /// Coordinates where [`Self::field_to_csv`] reports values: interior
    /// vertices for P1, `i/(m+1)` for the sine basis.
    pub fn dof_coords(&self) -> &[[f64; 2]] {
        &self.dof_coords
    }

    /// Point evaluation of a spectral field.
    fn spectral_value(&self, coeffs: &[f64], x: f64) -> f64 {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * SQRT_2 * ((k + 1) as f64 * PI * x).sin())
            .sum()
    }

    /// `x,value` (1D) or `x,y,value` (2D) rows.
    pub fn field_to_csv(&self, coeffs: &[f64]) -> Result<String> {
        self.check_len(coeffs)?;
        let mut out = String::from(if self.dim == 1 { "x,value\n" } else { "x,y,value\n" });
        for (i, p) in self.dof_coords.iter().enumerate() {
            let v = if self.kind.is_spectral() {
                self.spectral_value(coeffs, p[0])
            } else {
                coeffs[i]
            };
            if self.dim == 1 {
                let _ = writeln!(out, "{:e},{v:e}", p[0]);
            } else {
                let _ = writeln!(out, "{:e},{:e},{v:e}", p[0], p[1]);
            }
        }
        Ok(out)
    }

    /// Whitespace-separated `x y value` rows over all vertices (boundary
    /// included), one blank line between grid rows.
    pub fn grid_dump(&self, coeffs: &[f64]) -> Result<String> {
        let SpaceKind::FemP1_2D { nx, ny } = self.kind else {
            return Err(Error::Unsupported("grid dump is for 2D P1 fields".into()));
        };
        self.check_len(coeffs)?;
        let mut out = String::new();
        for j in 0..=ny {
            for i in 0..=nx {
                let v = if i > 0 && i < nx && j > 0 && j < ny {
                    coeffs[(i - 1) + (j - 1) * (nx - 1)]
                } else {
                    0.0
                };
                let _ = writeln!(out, "{:e} {:e} {v:e}", i as f64 / nx as f64, j as f64 / ny as f64);
            }
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn hr_weight(wavenumber: f64, r: usize) -> f64 {
    let w2 = wavenumber * wavenumber;
    (0..=r).map(|j| w2.powi(j as i32)).sum()
}

fn cell_gradient(cell: &Cell, coeffs: &[f64], d: usize) -> [f64; 2] {
    let mut g = [0.0; 2];
    for (dof, grad) in cell.dofs.iter().zip(&cell.grads) {
        if let Some(i) = dof {
            for r in 0..d {
                g[r] += coeffs[*i] * grad[r];
            }
        }
    }
    g
}

fn triangle_gradients(v: &[[f64; 2]]) -> (Vec<[f64; 2]>, f64) {
    let [x0, y0] = v[0];
    let [x1, y1] = v[1];
    let [x2, y2] = v[2];
    let det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
    let grads = vec![
        [(y1 - y2) / det, (x2 - x1) / det],
        [(y2 - y0) / det, (x0 - x2) / det],
        [(y0 - y1) / det, (x1 - x0) / det],
    ];
    (grads, 0.5 * det.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fem1(n: usize) -> SpaceHandle {
        build_space(SpaceKind::FemP1_1D { cells: n }).unwrap()
    }

    fn fem2(n: usize) -> SpaceHandle {
        build_space(SpaceKind::FemP1_2D { nx: n, ny: n }).unwrap()
    }

    fn spec1(m: usize) -> SpaceHandle {
        build_space(SpaceKind::Spectral1D { modes: m }).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn build_examples() {
        let s = fem1(4);
        assert_eq!(s.ndofs(), 3);
        assert!(s.cells().iter().all(|c| c.measure == 0.25));
        let sp = spec1(3);
        let k = sp.wavenumbers().unwrap();
        assert_eq!(k, vec![PI, 2.0 * PI, 3.0 * PI]);
        let s2 = fem2(2);
        assert_eq!(s2.ndofs(), 1);
        assert_eq!(s2.cells().len(), 8);
        assert!(s2.cells().iter().all(|c| (c.measure - 0.125).abs() < 1e-15));
        assert!(matches!(
            build_space(SpaceKind::FemP1_1D { cells: 0 }),
            Err(Error::Contract(_))
        ));
        let total: f64 = fem2(5).cells().iter().map(|c| c.measure).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn matrix_examples() {
        let sp = spec1(2);
        assert_eq!(sp.assemble_mass().to_dense(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(sp.assemble_stiffness().get(1, 1), 4.0 * PI * PI);
        let s = fem1(2);
        // M₁₁ = 2h/3, A₁₁ = 2/h with h = ½
        assert_relative_eq!(s.assemble_mass().get(0, 0), 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(s.assemble_stiffness().get(0, 0), 4.0, max_relative = 1e-15);
        // interior rows of A annihilate constants
        let a = fem1(6).assemble_stiffness();
        let ones = vec![1.0; 5];
        let r = a.mul_vec(&ones);
        for v in &r[1..4] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn matrices_are_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in [fem1(9), fem2(5), spec1(7)] {
            for m in [s.assemble_mass(), s.assemble_stiffness()] {
                let d = m.to_dense();
                for i in 0..d.len() {
                    for j in 0..d.len() {
                        assert!((d[i][j] - d[j][i]).abs() <= 1e-14);
                    }
                }
                for _ in 0..10 {
                    let x = random_vec(s.ndofs(), &mut rng);
                    assert!(m.quad_form(&x) > 0.0);
                }
            }
        }
    }

    #[test]
    fn gradient_examples() {
        let s = fem1(2);
        let g = s.gradient_per_cell(&[1.0]).unwrap();
        assert_eq!(g.values(), &[2.0, -2.0]);
        assert!(s.gradient_per_cell(&[0.0]).unwrap().is_zero());
        let s2 = fem2(2);
        let g2 = s2.gradient_per_cell(&[1.0]).unwrap();
        let mut mean = [0.0; 2];
        for (v, m) in g2.iter() {
            mean[0] += m * v[0];
            mean[1] += m * v[1];
        }
        assert!(mean[0].abs() < 1e-14 && mean[1].abs() < 1e-14);
        assert!(matches!(spec1(3).gradient_per_cell(&[0.0; 3]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn residual_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p2_1 = NFunctionSpec::power(2.0, 1).unwrap();
        let p2_2 = NFunctionSpec::power(2.0, 2).unwrap();
        for (s, spec) in [(fem1(8), &p2_1), (fem2(4), &p2_2), (spec1(5), &p2_1)] {
            let u = random_vec(s.ndofs(), &mut rng);
            let b = s.nonlinear_residual(spec, &u).unwrap();
            let au = s.assemble_stiffness().mul_vec(&u);
            for (x, y) in b.iter().zip(&au) {
                assert!((x - y).abs() <= 1e-14 * (1.0 + y.abs()), "{x} vs {y}");
            }
            let zero = s.nonlinear_residual(spec, &vec![0.0; s.ndofs()]).unwrap();
            assert!(zero.iter().all(|&z| z == 0.0));
        }
        // FemP1_1D(2), p = 4: B₁ = 16c³
        let p4 = NFunctionSpec::power(4.0, 1).unwrap();
        let c = 0.7;
        let b = fem1(2).nonlinear_residual(&p4, &[c]).unwrap();
        assert_relative_eq!(b[0], 16.0 * c * c * c, max_relative = 1e-14);
        assert!(fem1(2).nonlinear_residual(&p2_2, &[c]).is_err());
    }

    #[test]
    fn residual_p4_against_quadrature_oracle() {
        // B_j = ∫ (u_h')³ φ_j' dx with a fine midpoint rule on the piecewise-linear u_h.
        let s = fem1(5);
        let p4 = NFunctionSpec::power(4.0, 1).unwrap();
        let u = [0.3, -0.2, 0.5, 0.1];
        let nodal = |x: f64, c: &[f64]| {
            let h = 0.2;
            let mut v = 0.0;
            for (i, ci) in c.iter().enumerate() {
                let xi = (i + 1) as f64 * h;
                v += ci * (1.0 - ((x - xi) / h).abs()).max(0.0);
            }
            v
        };
        let n = 20_000;
        for j in 0..4 {
            let mut e = [0.0; 4];
            e[j] = 1.0;
            let mut acc = 0.0;
            for q in 0..n {
                let x = (q as f64 + 0.5) / n as f64;
                let dx = 1e-7;
                let du = (nodal(x + dx, &u) - nodal(x - dx, &u)) / (2.0 * dx);
                let dphi = (nodal(x + dx, &e) - nodal(x - dx, &e)) / (2.0 * dx);
                acc += du.powi(3) * dphi / n as f64;
            }
            let b = s.nonlinear_residual(&p4, &u).unwrap();
            assert!((b[j] - acc).abs() < 1e-5, "{j}: {} vs {acc}", b[j]);
        }
    }

    #[test]
    fn jacobian_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = fem2(4);
        let p2 = NFunctionSpec::power(2.0, 2).unwrap();
        let u = random_vec(s.ndofs(), &mut rng);
        assert_eq!(
            s.nonlinear_jacobian(&p2, &u).unwrap().to_dense(),
            s.assemble_stiffness().to_dense()
        );
        let q = NFunctionSpec::quad_form(2, &[2.0, -1.0, -1.0, 2.0]).unwrap();
        let j1 = s.nonlinear_jacobian(&q, &u).unwrap();
        let j0 = s.nonlinear_jacobian(&q, &vec![0.0; s.ndofs()]).unwrap();
        assert_eq!(j1, j0);
    }

    #[test]
    fn jacobian_directional_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cases = [
            (fem1(10), NFunctionSpec::power(4.0, 1).unwrap()),
            (fem1(10), NFunctionSpec::exp(1).unwrap()),
            (fem2(5), NFunctionSpec::power(3.0, 2).unwrap()),
            (spec1(6), NFunctionSpec::power(4.0, 1).unwrap()),
        ];
        for (s, spec) in cases {
            let u = random_vec(s.ndofs(), &mut rng);
            let w = random_vec(s.ndofs(), &mut rng);
            let jw = s.nonlinear_jacobian(&spec, &u).unwrap().mul_vec(&w);
            let b0 = s.nonlinear_residual(&spec, &u).unwrap();
            let mut errs = Vec::new();
            for eps in [1e-3, 5e-4] {
                let up: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a + eps * b).collect();
                let b1 = s.nonlinear_residual(&spec, &up).unwrap();
                let e: f64 = b1
                    .iter()
                    .zip(&b0)
                    .zip(&jw)
                    .map(|((x, y), z)| ((x - y) / eps - z).powi(2))
                    .sum::<f64>()
                    .sqrt();
                errs.push(e);
            }
            // first-order difference: error shrinks linearly with ε
            assert!(errs[1] < 0.6 * errs[0] || errs[1] < 1e-9, "{errs:?}");
        }
    }

    #[test]
    fn residual_is_potential_gradient_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cases = [
            (fem1(12), NFunctionSpec::power(4.0, 1).unwrap()),
            (fem2(4), NFunctionSpec::exp(2).unwrap()),
            (spec1(5), NFunctionSpec::power(3.0, 1).unwrap()),
        ];
        for (s, spec) in cases {
            for _ in 0..5 {
                let u = random_vec(s.ndofs(), &mut rng);
                let w = random_vec(s.ndofs(), &mut rng);
                let eps = 1e-4;
                let up: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a + eps * b).collect();
                let um: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a - eps * b).collect();
                let fd = (s.potential(&spec, &up).unwrap() - s.potential(&spec, &um).unwrap()) / (2.0 * eps);
                let exact = dot(&w, &s.nonlinear_residual(&spec, &u).unwrap());
                assert!((fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "{fd} vs {exact}");

                let bu = s.nonlinear_residual(&spec, &u).unwrap();
                let bw = s.nonlinear_residual(&spec, &w).unwrap();
                let mono: f64 = bu.iter().zip(&bw).zip(u.iter().zip(&w)).map(|((a, b), (x, y))| (a - b) * (x - y)).sum();
                assert!(mono >= -1e-12);
            }
        }
    }

    #[test]
    fn spectral_basis_orthonormal() {
        let s = spec1(8);
        let t = s.tables().unwrap();
        let m = 8;
        for i in 0..m {
            for j in 0..m {
                let g: f64 = t
                    .values
                    .chunks_exact(m)
                    .zip(&t.weights)
                    .map(|(row, w)| w * row[i] * row[j])
                    .sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let s = spec1(3);
        let f = s.l2_project(|x| (PI * x[0]).sin()).unwrap();
        assert!((f.coeffs()[0] - 1.0 / SQRT_2).abs() < 1e-14);
        assert!(f.coeffs()[1].abs() < 1e-14 && f.coeffs()[2].abs() < 1e-14);

        // hat of dof 2 on FemP1_1D(5)
        let s = fem1(5);
        let hat = |x: &[f64]| (1.0 - ((x[0] - 0.6) / 0.2).abs()).max(0.0);
        let f = s.l2_project(hat).unwrap();
        let expect = [0.0, 0.0, 1.0, 0.0];
        for (a, b) in f.coeffs().iter().zip(expect) {
            assert!((a - b).abs() < 1e-13);
        }

        let errs: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&n| {
                let s = fem1(n);
                let f = s.l2_project(|x| (PI * x[0]).sin()).unwrap();
                s.l2_error(f.coeffs(), |x| (PI * x[0]).sin()).unwrap()
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
        }
    }

    #[test]
    fn projection_2d_rate() {
        let g = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin();
        let errs: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&n| {
                let s = fem2(n);
                let f = s.l2_project(g).unwrap();
                s.l2_error(f.coeffs(), g).unwrap()
            })
            .collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!((rate - 2.0).abs() < 0.15, "rate {rate}");
        }
    }

    #[test]
    fn dual_norm_examples() {
        let s = spec1(1);
        let v = s.hr_dual_norm(&[1.0], 2).unwrap();
        let pi2 = PI * PI;
        let expect = (1.0 + pi2 + pi2 * pi2).powf(-0.5);
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.096_10).abs() < 1e-5);
        assert_eq!(s.hr_dual_norm(&[0.0], 2).unwrap(), 0.0);
        assert!(matches!(fem1(3).hr_dual_norm(&[0.0; 2], 2), Err(Error::Unsupported(_))));
        assert!(s.hr_dual_norm(&[1.0], 1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = spec1(10);
        let w = random_vec(10, &mut rng);
        assert!(s.hr_dual_norm(&w, 3).unwrap() <= s.assemble_mass().quad_form(&w).sqrt());
    }

    #[test]
    fn dual_norm_against_sup_oracle() {
        // sup over v of ⟨w, v⟩ / ‖v‖_r, with ‖v‖_r² = Σ W_k v_k²: random search
        // plus the maximizer's direction must not exceed, and nearly attain, the formula.
        let s = spec1(4);
        let w = [0.4, -1.0, 0.25, 0.8];
        let r = 2;
        let weights: Vec<f64> = s.wavenumbers().unwrap().iter().map(|k| hr_weight(*k, r)).collect();
        let ratio = |v: &[f64]| {
            let num: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
            let den: f64 = v.iter().zip(&weights).map(|(a, b)| b * a * a).sum::<f64>().sqrt();
            num / den
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut best = 0.0f64;
        let mut v = random_vec(4, &mut rng);
        let mut step = 0.5;
        for _ in 0..20_000 {
            let cand: Vec<f64> = v.iter().map(|x| x + step * rng.random_range(-1.0..1.0)).collect();
            let rc = ratio(&cand);
            if rc > best {
                best = rc;
                v = cand;
            } else {
                step = (step * 0.999).max(1e-6);
            }
        }
        let formula = s.hr_dual_norm(&w, r).unwrap();
        assert!(best <= formula * (1.0 + 1e-12));
        assert!(best >= formula * (1.0 - 1e-6), "{best} vs {formula}");
    }

    #[test]
    fn exports() {
        let s = fem2(3);
        let f = s.l2_project(|x| x[0] * x[1]).unwrap();
        let csv = s.field_to_csv(f.coeffs()).unwrap();
        assert!(csv.starts_with("x,y,value\n"));
        assert_eq!(csv.lines().count(), 5);
        let dump = s.grid_dump(f.coeffs()).unwrap();
        assert_eq!(dump.lines().filter(|l| !l.is_empty()).count(), 16);
        assert!(fem1(3).grid_dump(&[0.0; 2]).is_err());
        assert!(spec1(2).field_to_csv(&[1.0, 0.0]).unwrap().starts_with("x,value\n"));
    }
}
