//! Pointwise flows of the two deterministic subsystems.
//!
//! The drift `F = F^NL + F^L` splits into the Allen–Cahn part
//! `F^NL(u, v) = (u - u³, β)` and the linear coupling `F^L(x) = B x` with
//! `B = [[0, -1], [γ₁, -γ₂]]`. Both subsystems are integrated exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{Representation, State};

/// Step-size ceiling used in every explicit constant.
pub const TAU0: f64 = 1.0;

pub type Matrix2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub u: f64,
    pub v: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { u: 0.0, v: 0.0 };

    pub fn new(u: f64, v: f64) -> Self {
        Point2 { u, v }
    }

    pub fn norm(self) -> f64 {
        self.u.hypot(self.v)
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.u * other.u + self.v * other.v
    }

    pub fn sub(self, other: Point2) -> Point2 {
        Point2::new(self.u - other.u, self.v - other.v)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.u * s, self.v * s)
    }
}

pub fn mat_vec(m: &Matrix2, x: Point2) -> Point2 {
    Point2::new(
        m[0][0] * x.u + m[0][1] * x.v,
        m[1][0] * x.u + m[1][1] * x.v,
    )
}

pub fn mat_mul(a: &Matrix2, b: &Matrix2) -> Matrix2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Largest singular value of a 2×2 matrix.
pub fn spectral_norm(m: &Matrix2) -> f64 {
    let fro2: f64 = m.iter().flatten().map(|x| x * x).sum();
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0);
    ((fro2 + disc.sqrt()) / 2.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta: f64,
}

impl ModelParams {
    pub fn new(gamma1: f64, gamma2: f64, beta: f64) -> Self {
        ModelParams {
            gamma1,
            gamma2,
            beta,
        }
    }

    /// Parameters of the evolution-plot experiment: `γ₁ = 0.08`, `γ₂ = 0.8γ₁`, `β = 0.7`.
    pub fn evolution_defaults() -> Self {
        ModelParams::new(0.08, 0.8 * 0.08, 0.7)
    }

    /// Parameters of the strong-error experiment: `γ₁ = γ₂ = β = 1`.
    pub fn error_study_defaults() -> Self {
        ModelParams::new(1.0, 1.0, 1.0)
    }

    pub fn b(&self) -> Matrix2 {
        [[0.0, -1.0], [self.gamma1, -self.gamma2]]
    }

    pub fn b_norm(&self) -> f64 {
        spectral_norm(&self.b())
    }
}

pub fn drift_fnl(p: &ModelParams, x: Point2) -> Point2 {
    Point2::new(x.u - x.u * x.u * x.u, p.beta)
}

pub fn drift_fl(p: &ModelParams, x: Point2) -> Point2 {
    mat_vec(&p.b(), x)
}

/// `F(u, v) = (u - u³ - v, γ₁u - γ₂v + β)`.
pub fn drift_f(p: &ModelParams, x: Point2) -> Point2 {
    Point2::new(
        x.u - x.u * x.u * x.u - x.v,
        p.gamma1 * x.u - p.gamma2 * x.v + p.beta,
    )
}

/// Exact flow of `u' = u - u³`, written in terms of `e^{-2t}`.
fn phi_ac_with_decay(decay: f64, u: f64) -> f64 {
    if u.abs() > 1e8 {
        let inv2 = 1.0 / (u * u);
        u.signum() / (1.0 + (inv2 - 1.0) * decay).sqrt()
    } else {
        let u2 = u * u;
        u / (u2 + (1.0 - u2) * decay).sqrt()
    }
}

/// `φ_t^AC(u) = u / √(u² + (1 - u²) e^{-2t})`.
pub fn phi_ac(t: f64, u: f64) -> f64 {
    phi_ac_with_decay((-2.0 * t).exp(), u)
}

/// `ψ_t^AC(u) = (φ_t^AC(u) - u) / t`.
pub fn psi_ac(t: f64, u: f64) -> Result<f64> {
    check_positive(t)?;
    Ok((phi_ac(t, u) - u) / t)
}

/// `φ_t^NL(u, v) = (φ_t^AC(u), v + βt)`.
pub fn phi_nl(p: &ModelParams, t: f64, x: Point2) -> Point2 {
    Point2::new(phi_ac(t, x.u), x.v + p.beta * t)
}

/// Even and odd parts of the exponential series in `d = q²t²`:
/// `C(d) = cosh √d` and `S(d) = sinh √d / √d`, continued to `d < 0`.
fn cosh_sinhc(d: f64) -> (f64, f64) {
    if d.abs() < 1e-2 {
        let mut c = 0.0;
        let mut s = 0.0;
        let mut term = 1.0;
        // term = d^k / (2k)!
        for k in 0..10 {
            c += term;
            s += term / (2 * k + 1) as f64;
            term *= d / ((2 * k + 1) * (2 * k + 2)) as f64;
        }
        (c, s)
    } else if d > 0.0 {
        let r = d.sqrt();
        (r.cosh(), r.sinh() / r)
    } else {
        let r = (-d).sqrt();
        (r.cos(), r.sin() / r)
    }
}

/// `e^{tB}` in closed form.
///
/// With `s = tr(B)/2 = -γ₂/2` and `q² = s² - det B = γ₂²/4 - γ₁`,
/// `e^{tB} = e^{st} (C I + t S (B - sI))` where `C, S` depend on `q²t²` only.
/// The sign of `q²` separates distinct real, complex and repeated eigenvalues;
/// near the repeated case the series form is used.
pub fn matrix_exp_b(p: &ModelParams, t: f64) -> Matrix2 {
    let s = -p.gamma2 / 2.0;
    let q2 = s * s - p.gamma1;
    let (c, sc) = cosh_sinhc(q2 * t * t);
    let e = (s * t).exp();
    let b = p.b();
    let ts = t * sc;
    [
        [e * (c + ts * (b[0][0] - s)), e * ts * b[0][1]],
        [e * ts * b[1][0], e * (c + ts * (b[1][1] - s))],
    ]
}

/// `φ_t^L(x) = e^{tB} x`.
pub fn phi_l(p: &ModelParams, t: f64, x: Point2) -> Point2 {
    mat_vec(&matrix_exp_b(p, t), x)
}

/// Composition order of the two deterministic flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    /// `φ_τ = φ_τ^L ∘ φ_τ^NL`
    LinearAfterNonlinear,
    /// `φ̂_τ = φ_τ^NL ∘ φ_τ^L`
    NonlinearAfterLinear,
}

/// `φ_τ` (or `φ̂_τ`) with its τ-dependent pieces precomputed.
#[derive(Debug, Clone, Copy)]
pub struct SplitFlow {
    exp_b: Matrix2,
    decay: f64,
    beta_tau: f64,
    order: Order,
}

impl SplitFlow {
    pub fn new(p: &ModelParams, tau: f64, order: Order) -> Self {
        SplitFlow {
            exp_b: matrix_exp_b(p, tau),
            decay: (-2.0 * tau).exp(),
            beta_tau: p.beta * tau,
            order,
        }
    }

    #[inline]
    fn nl(&self, x: Point2) -> Point2 {
        Point2::new(phi_ac_with_decay(self.decay, x.u), x.v + self.beta_tau)
    }

    #[inline]
    pub fn apply(&self, x: Point2) -> Point2 {
        match self.order {
            Order::LinearAfterNonlinear => mat_vec(&self.exp_b, self.nl(x)),
            Order::NonlinearAfterLinear => self.nl(mat_vec(&self.exp_b, x)),
        }
    }
}

pub fn phi_tau(p: &ModelParams, tau: f64, x: Point2) -> Point2 {
    phi_l(p, tau, phi_nl(p, tau, x))
}

pub fn phi_tau_hat(p: &ModelParams, tau: f64, x: Point2) -> Point2 {
    phi_nl(p, tau, phi_l(p, tau, x))
}

/// `ψ_τ(x) = (φ_τ(x) - x) / τ`.
pub fn psi_tau(p: &ModelParams, tau: f64, x: Point2) -> Result<Point2> {
    check_positive(tau)?;
    Ok(phi_tau(p, tau, x).sub(x).scale(1.0 / tau))
}

/// `ψ̂_τ(x) = (φ̂_τ(x) - x) / τ`.
pub fn psi_tau_hat(p: &ModelParams, tau: f64, x: Point2) -> Result<Point2> {
    check_positive(tau)?;
    Ok(phi_tau_hat(p, tau, x).sub(x).scale(1.0 / tau))
}

/// Lipschitz constant `e^{(1 + ⦀B⦀)τ}` of `φ_τ`.
pub fn phi_tau_lipschitz(p: &ModelParams, tau: f64) -> f64 {
    ((1.0 + p.b_norm()) * tau).exp()
}

/// One-sided Lipschitz constant of `ψ_τ`, uniform in `τ < τ₀`:
/// `((e^{τ₀⦀B⦀} - 1)/τ₀ + 1) e^{τ₀}`.
pub fn psi_tau_one_sided_constant(p: &ModelParams, tau0: f64) -> f64 {
    (((tau0 * p.b_norm()).exp() - 1.0) / tau0 + 1.0) * tau0.exp()
}

/// Bound `e^{τ₀⦀B⦀}|β|` on `‖ψ_τ(0)‖`.
pub fn psi_tau_zero_bound(p: &ModelParams, tau0: f64) -> f64 {
    (tau0 * p.b_norm()).exp() * p.beta.abs()
}

/// Applies a pointwise map at every grid point (Nemytskii operator).
pub fn apply_pointwise(map: impl Fn(Point2) -> Point2, x: &State) -> Result<State> {
    x.u.expect_repr(Representation::Grid)?;
    x.v.expect_repr(Representation::Grid)?;
    let (u, v): (Vec<f64>, Vec<f64>) = x
        .u
        .values()
        .iter()
        .zip(x.v.values())
        .map(|(&u, &v)| {
            let y = map(Point2::new(u, v));
            (y.u, y.v)
        })
        .unzip();
    State::new(
        crate::spatial::Field::from_grid(u),
        crate::spatial::Field::from_grid(v),
    )
}

fn check_positive(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("step must be finite and > 0, got {t}")))
    }
}
