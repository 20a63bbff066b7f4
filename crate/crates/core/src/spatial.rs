//! Discrete spatial domain on `[0, 1]` with homogeneous Neumann boundaries.
//!
//! Both backends share the cell-centered grid `ζ_i = (i + 1/2) h`, `h = 1/N`,
//! and the orthonormal cosine transform that maps grid values to coefficients
//! in the basis `e_0 = 1`, `e_j = √2 cos(jπζ)`. They differ only in the
//! eigenvalues attached to each mode:
//!
//! * finite differences: `μ_j = (4/h²) sin²(jπ/(2N))`, the exact spectrum of
//!   the three-point Laplacian with reflecting ghost cells;
//! * spectral Galerkin: `μ_j = (jπ)²`, the continuous Neumann spectrum.
//!
//! Coefficients are normalized so that the transform is an isometry between
//! the grid `L²` quadrature `√(h Σ f_i²)` and the Euclidean norm of the
//! coefficient vector.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustdct::{Dct2, Dct3, DctPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[serde(rename = "fd")]
    FiniteDifference,
    Spectral,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Backend::FiniteDifference => f.write_str("fd"),
            Backend::Spectral => f.write_str("spectral"),
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fd" => Ok(Backend::FiniteDifference),
            "spectral" => Ok(Backend::Spectral),
            other => Err(Error::Config(format!(
                "unknown backend '{other}', expected fd or spectral"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    n_modes: usize,
    backend: Backend,
}

impl Grid {
    pub fn new(n_modes: usize, backend: Backend) -> Result<Self> {
        if n_modes < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2 modes, got {n_modes}"
            )));
        }
        Ok(Grid { n_modes, backend })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    /// Mesh width `1/N`.
    pub fn h(&self) -> f64 {
        1.0 / self.n_modes as f64
    }

    /// Cell-centered points `(i + 1/2) h`.
    pub fn points(&self) -> Vec<f64> {
        let h = self.h();
        (0..self.n_modes).map(|i| (i as f64 + 0.5) * h).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Representation {
    Grid,
    Eigen,
}

impl Representation {
    fn name(self) -> &'static str {
        match self {
            Representation::Grid => "grid",
            Representation::Eigen => "eigen",
        }
    }
}

/// One scalar component sampled on the grid or expanded in the eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
    repr: Representation,
}

impl Field {
    pub fn from_grid(values: Vec<f64>) -> Self {
        Field {
            values,
            repr: Representation::Grid,
        }
    }

    pub fn from_coefficients(coeffs: Vec<f64>) -> Self {
        Field {
            values: coeffs,
            repr: Representation::Eigen,
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Field::from_grid(vec![0.0; grid.n_modes()])
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Field::from_grid(vec![c; grid.n_modes()])
    }

    /// Samples `f` at the grid points.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Field::from_grid(grid.points().into_iter().map(f).collect())
    }

    /// The basis function `e_j` in eigen representation.
    pub fn basis(grid: &Grid, j: usize) -> Self {
        let mut c = vec![0.0; grid.n_modes()];
        c[j] = 1.0;
        Field::from_coefficients(c)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn repr(&self) -> Representation {
        self.repr
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn expect_repr(&self, expected: Representation) -> Result<()> {
        if self.repr == expected {
            Ok(())
        } else {
            Err(Error::Representation {
                expected: expected.name(),
                found: self.repr.name(),
            })
        }
    }

    /// `L²(0,1)` norm: midpoint quadrature on the grid, or the coefficient
    /// `ℓ²` norm in the eigenbasis. The two agree through the isometric
    /// transform.
    pub fn norm_h(&self) -> f64 {
        let ss: f64 = self.values.iter().map(|x| x * x).sum();
        match self.repr {
            Representation::Grid => (ss / self.values.len() as f64).sqrt(),
            Representation::Eigen => ss.sqrt(),
        }
    }

    /// Max norm over the grid points. Requires grid representation.
    pub fn norm_e(&self) -> Result<f64> {
        self.expect_repr(Representation::Grid)?;
        Ok(self.values.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }
}

/// The pair `x = (u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Field,
    pub v: Field,
}

impl State {
    pub fn new(u: Field, v: Field) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::Shape {
                expected: u.len(),
                found: v.len(),
            });
        }
        Ok(State { u, v })
    }

    pub fn zeros(grid: &Grid) -> Self {
        State {
            u: Field::zeros(grid),
            v: Field::zeros(grid),
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn norm_h(&self) -> f64 {
        self.u.norm_h().hypot(self.v.norm_h())
    }

    pub fn norm_e(&self) -> Result<f64> {
        Ok(self.u.norm_e()?.max(self.v.norm_e()?))
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Diagonalized Neumann Laplacian `-Δ` with its cosine transform pair.
///
/// Immutable after construction; share it freely between worker threads.
#[derive(Clone)]
pub struct SpatialOperator {
    grid: Grid,
    eigenvalues: Vec<f64>,
    dct2: Arc<dyn Dct2<f64>>,
    dct3: Arc<dyn Dct3<f64>>,
}

impl fmt::Debug for SpatialOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpatialOperator")
            .field("grid", &self.grid)
            .field("eigenvalues", &self.eigenvalues)
            .finish_non_exhaustive()
    }
}

impl SpatialOperator {
    pub fn new(grid: Grid) -> Result<Self> {
        let n = grid.n_modes();
        if n < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2 modes, got {n}"
            )));
        }
        let eigenvalues = match grid.backend() {
            Backend::FiniteDifference => {
                let h = grid.h();
                (0..n)
                    .map(|j| {
                        let s = (j as f64 * PI / (2.0 * n as f64)).sin();
                        4.0 / (h * h) * s * s
                    })
                    .collect()
            }
            Backend::Spectral => (0..n).map(|j| (j as f64 * PI).powi(2)).collect(),
        };
        let mut planner = DctPlanner::new();
        Ok(SpatialOperator {
            grid,
            eigenvalues,
            dct2: planner.plan_dct2(n),
            dct3: planner.plan_dct3(n),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_modes(&self) -> usize {
        self.grid.n_modes()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_modes() {
            return Err(Error::Shape {
                expected: self.n_modes(),
                found: len,
            });
        }
        Ok(())
    }

    /// In-place grid values -> eigen coefficients.
    pub fn forward_in_place(&self, buf: &mut [f64]) {
        let n = buf.len();
        self.dct2.process_dct2(buf);
        // coefficient_j = √h · w_j · DCT2_j, w_0 = √(1/N), w_j = √(2/N)
        let nf = n as f64;
        buf[0] /= nf;
        let scale = 2.0_f64.sqrt() / nf;
        for c in &mut buf[1..] {
            *c *= scale;
        }
    }

    /// In-place eigen coefficients -> grid values, `f_i = Σ_j c_j e_j(ζ_i)`.
    pub fn inverse_in_place(&self, buf: &mut [f64]) {
        // DCT3 yields x_0/2 + Σ_{k≥1} x_k cos(πk(i+½)/N)
        buf[0] *= 2.0;
        let s2 = 2.0_f64.sqrt();
        for c in &mut buf[1..] {
            *c *= s2;
        }
        self.dct3.process_dct3(buf);
    }

    pub fn to_eigen(&self, f: &Field) -> Result<Field> {
        self.check_len(f.len())?;
        match f.repr() {
            Representation::Eigen => Ok(f.clone()),
            Representation::Grid => {
                let mut buf = f.values.clone();
                self.forward_in_place(&mut buf);
                Ok(Field::from_coefficients(buf))
            }
        }
    }

    pub fn to_grid(&self, f: &Field) -> Result<Field> {
        self.check_len(f.len())?;
        match f.repr() {
            Representation::Grid => Ok(f.clone()),
            Representation::Eigen => {
                let mut buf = f.values.clone();
                self.inverse_in_place(&mut buf);
                Ok(Field::from_grid(buf))
            }
        }
    }

    /// Multiplies mode `j` by `factor(μ_j)`, returning the input representation.
    fn apply_diagonal(&self, f: &Field, factor: impl Fn(f64) -> f64) -> Result<Field> {
        let mut coeffs = self.to_eigen(f)?;
        for (c, &mu) in coeffs.values.iter_mut().zip(&self.eigenvalues) {
            *c *= factor(mu);
        }
        match f.repr() {
            Representation::Eigen => Ok(coeffs),
            Representation::Grid => self.to_grid(&coeffs),
        }
    }

    /// Per-mode factors `e^{-t μ_j}` of the heat semigroup.
    pub fn semigroup_factors(&self, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        Ok(self.eigenvalues.iter().map(|mu| (-t * mu).exp()).collect())
    }

    /// Per-mode factors `1/(1 + τ μ_j)` of the resolvent.
    pub fn resolvent_factors(&self, tau: f64) -> Result<Vec<f64>> {
        check_step(tau)?;
        Ok(self.eigenvalues.iter().map(|mu| 1.0 / (1.0 + tau * mu)).collect())
    }

    /// `e^{tΔ} f`.
    pub fn heat_semigroup(&self, t: f64, f: &Field) -> Result<Field> {
        check_time(t)?;
        if t == 0.0 {
            self.check_len(f.len())?;
            return Ok(f.clone());
        }
        self.apply_diagonal(f, |mu| (-t * mu).exp())
    }

    /// `(I - τΔ)^{-1} f`.
    pub fn resolvent(&self, tau: f64, f: &Field) -> Result<Field> {
        check_step(tau)?;
        self.apply_diagonal(f, |mu| 1.0 / (1.0 + tau * mu))
    }

    /// `(-Δ)^α f`.
    pub fn fractional_laplacian(&self, alpha: f64, f: &Field) -> Result<Field> {
        if !(alpha >= 0.0) {
            return Err(Error::Domain(format!("negative power {alpha}")));
        }
        self.apply_diagonal(f, |mu| if mu == 0.0 { 0.0 } else { mu.powf(alpha) })
    }

    /// `e^{-tΛ} x = (e^{tΔ} u, v)`.
    pub fn apply_lambda_semigroup(&self, t: f64, x: &State) -> Result<State> {
        self.check_len(x.v.len())?;
        Ok(State {
            u: self.heat_semigroup(t, &x.u)?,
            v: x.v.clone(),
        })
    }

    /// `(I + τΛ)^{-1} x = ((I - τΔ)^{-1} u, v)`.
    pub fn apply_lambda_resolvent(&self, tau: f64, x: &State) -> Result<State> {
        self.check_len(x.v.len())?;
        Ok(State {
            u: self.resolvent(tau, &x.u)?,
            v: x.v.clone(),
        })
    }
}

pub fn build_operator(grid: Grid) -> Result<SpatialOperator> {
    SpatialOperator::new(grid)
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("time must be finite and >= 0, got {t}")))
    }
}

fn check_step(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("step must be finite and > 0, got {tau}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(n: usize, backend: Backend) -> SpatialOperator {
        SpatialOperator::new(Grid::new(n, backend).unwrap()).unwrap()
    }

    #[test]
    fn fd_two_modes_closed_form() {
        let op = op(2, Backend::FiniteDifference);
        assert_eq!(op.eigenvalues()[0], 0.0);
        assert!((op.eigenvalues()[1] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_eigenvalues() {
        let op = op(3, Backend::Spectral);
        let pi2 = PI * PI;
        assert_eq!(op.eigenvalues(), &[0.0, pi2, 4.0 * pi2]);
    }

    #[test]
    fn eigenvalues_strictly_increasing() {
        for backend in [Backend::FiniteDifference, Backend::Spectral] {
            let op = op(65, backend);
            assert_eq!(op.eigenvalues()[0], 0.0);
            assert!(op.eigenvalues().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn too_few_modes_rejected() {
        assert!(matches!(
            Grid::new(1, Backend::Spectral),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn transform_matches_basis_functions() {
        let grid = Grid::new(16, Backend::Spectral).unwrap();
        let op = SpatialOperator::new(grid).unwrap();
        for j in [0, 1, 5, 15] {
            let g = op.to_grid(&Field::basis(&grid, j)).unwrap();
            for (gi, z) in g.values().iter().zip(grid.points()) {
                let expected = if j == 0 {
                    1.0
                } else {
                    2.0_f64.sqrt() * (j as f64 * PI * z).cos()
                };
                assert!((gi - expected).abs() < 1e-13);
            }
            assert!((g.norm_h() - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn constant_field_is_invariant() {
        let op = op(32, Backend::FiniteDifference);
        let c = Field::constant(op.grid(), 0.75);
        let s = op.heat_semigroup(0.3, &c).unwrap();
        let r = op.resolvent(0.3, &c).unwrap();
        for x in s.values().iter().chain(r.values()) {
            assert!((x - 0.75).abs() < 1e-14);
        }
        assert!((Field::constant(op.grid(), 1.0).norm_h() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_mode_one_decay() {
        let op = op(8, Backend::Spectral);
        let e1 = Field::basis(op.grid(), 1);
        let s = op.heat_semigroup(1.0, &e1).unwrap();
        assert!((s.values()[1] - (-PI * PI).exp()).abs() < 1e-16);
        let r = op.resolvent(1.0, &e1).unwrap();
        assert!((r.values()[1] - 1.0 / (1.0 + PI * PI)).abs() < 1e-16);
        assert_eq!(e1.norm_h(), 1.0);
    }

    #[test]
    fn negative_time_and_step_rejected() {
        let op = op(4, Backend::Spectral);
        let f = Field::zeros(op.grid());
        assert!(matches!(op.heat_semigroup(-0.1, &f), Err(Error::Domain(_))));
        assert!(matches!(op.resolvent(0.0, &f), Err(Error::Domain(_))));
        assert!(matches!(op.resolvent(-1.0, &f), Err(Error::Domain(_))));
    }

    #[test]
    fn lambda_operators_leave_v_alone() {
        let op = op(16, Backend::FiniteDifference);
        let grid = *op.grid();
        let v = Field::from_fn(&grid, |z| (3.0 * z).sin());
        let x = State::new(Field::zeros(&grid), v.clone()).unwrap();
        let a = op.apply_lambda_semigroup(0.2, &x).unwrap();
        let b = op.apply_lambda_resolvent(0.2, &x).unwrap();
        assert_eq!(a, x);
        assert_eq!(b, x);
        let y = State::new(Field::from_fn(&grid, |z| z * z), v).unwrap();
        assert_eq!(op.apply_lambda_semigroup(0.0, &y).unwrap(), y);
    }

    #[test]
    fn state_norms() {
        let grid = Grid::new(8, Backend::FiniteDifference).unwrap();
        let u = Field::from_fn(&grid, |z| z - 0.9);
        let x = State::new(u.clone(), Field::zeros(&grid)).unwrap();
        assert_eq!(x.norm_e().unwrap(), u.norm_e().unwrap());
        assert!((x.norm_h() - u.norm_h()).abs() < 1e-15);
        let eig = Field::from_coefficients(vec![1.0; 8]);
        assert!(matches!(eig.norm_e(), Err(Error::Representation { .. })));
    }

    #[test]
    fn shape_mismatch() {
        let op = op(8, Backend::Spectral);
        let f = Field::from_grid(vec![0.0; 5]);
        assert!(matches!(op.to_eigen(&f), Err(Error::Shape { .. })));
    }
}
