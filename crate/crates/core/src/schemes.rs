//! Lie–Trotter splitting schemes and the explicit Euler–Maruyama baseline.
//!
//! Every splitting kind has the form
//!
//! ```text
//! X_{n+1} = A_τ φ_τ(X_n) + noise_n
//! ```
//!
//! | kind       | A_τ            | noise_n                      | flow |
//! |------------|----------------|------------------------------|------|
//! | LTexact    | e^{-τΛ}        | exact stochastic convolution | φ_τ  |
//! | LTexpo     | e^{-τΛ}        | e^{-τΛ} δW                   | φ_τ  |
//! | LTimp      | (I + τΛ)^{-1}  | (I + τΛ)^{-1} δW             | φ_τ  |
//! | *Hat       | as above       | as above                     | φ̂_τ  |
//!
//! and the baseline is `X_{n+1} = e^{-τΛ}(X_n + τF(X_n) + δW)`.
//! Linear operators and noise act on `u` only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{drift_f, ModelParams, Order, Point2, SplitFlow, TAU0};
use crate::noise::{trajectory_rng, JointSampler, NoiseIncrement, NoiseKind, PathTable};
use crate::spatial::{Field, Grid, Representation, SpatialOperator, State};

/// Trajectories whose `‖·‖_E` exceeds this are flagged as blown up.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// Default number of evenly spaced snapshots kept by a trajectory.
pub const DEFAULT_SNAPSHOTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SchemeKind {
    LTexact,
    LTexpo,
    LTimp,
    LTexactHat,
    LTexpoHat,
    LTimpHat,
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearPropagator {
    /// `e^{-τΛ}`
    Exponential,
    /// `(I + τΛ)^{-1}`
    Implicit,
}

impl SchemeKind {
    pub const SPLITTING: [SchemeKind; 6] = [
        SchemeKind::LTexact,
        SchemeKind::LTexpo,
        SchemeKind::LTimp,
        SchemeKind::LTexactHat,
        SchemeKind::LTexpoHat,
        SchemeKind::LTimpHat,
    ];

    pub const ALL: [SchemeKind; 7] = [
        SchemeKind::LTexact,
        SchemeKind::LTexpo,
        SchemeKind::LTimp,
        SchemeKind::LTexactHat,
        SchemeKind::LTexpoHat,
        SchemeKind::LTimpHat,
        SchemeKind::EulerMaruyama,
    ];

    /// The three schemes covered by the convergence theory.
    pub const PRIMARY: [SchemeKind; 3] = [SchemeKind::LTexact, SchemeKind::LTexpo, SchemeKind::LTimp];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::LTexact => "LTexact",
            SchemeKind::LTexpo => "LTexpo",
            SchemeKind::LTimp => "LTimp",
            SchemeKind::LTexactHat => "LTexactHat",
            SchemeKind::LTexpoHat => "LTexpoHat",
            SchemeKind::LTimpHat => "LTimpHat",
            SchemeKind::EulerMaruyama => "EM",
        }
    }

    pub fn is_splitting(self) -> bool {
        self != SchemeKind::EulerMaruyama
    }

    pub fn propagator(self) -> LinearPropagator {
        match self {
            SchemeKind::LTimp | SchemeKind::LTimpHat => LinearPropagator::Implicit,
            _ => LinearPropagator::Exponential,
        }
    }

    pub fn noise_kind(self) -> NoiseKind {
        match self {
            SchemeKind::LTexact | SchemeKind::LTexactHat => NoiseKind::ExactConvolution,
            _ => NoiseKind::Plain,
        }
    }

    /// Composition order of the deterministic flows; `None` for the baseline.
    pub fn order(self) -> Option<Order> {
        match self {
            SchemeKind::LTexact | SchemeKind::LTexpo | SchemeKind::LTimp => {
                Some(Order::LinearAfterNonlinear)
            }
            SchemeKind::LTexactHat | SchemeKind::LTexpoHat | SchemeKind::LTimpHat => {
                Some(Order::NonlinearAfterLinear)
            }
            SchemeKind::EulerMaruyama => None,
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<SchemeKind> for String {
    fn from(k: SchemeKind) -> String {
        k.name().to_string()
    }
}

impl TryFrom<String> for SchemeKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .or_else(|| s.eq_ignore_ascii_case("euler-maruyama").then_some(SchemeKind::EulerMaruyama))
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}'")))
    }
}

/// One-step map of a scheme at fixed `τ`, with all per-mode factors cached.
///
/// A step applies the pointwise map on the grid, transforms `u` to the
/// eigenbasis, applies `A_τ` and adds the weighted noise, then transforms
/// back: one forward and one inverse transform per step.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    kind: SchemeKind,
    op: &'a SpatialOperator,
    params: ModelParams,
    tau: f64,
    flow: Option<SplitFlow>,
    propagator: Vec<f64>,
    noise_weight: Vec<f64>,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < TAU0 {
        Ok(())
    } else {
        Err(Error::Config(format!("step size must lie in (0, {TAU0}), got {tau}")))
    }
}

fn linear_factors(op: &SpatialOperator, prop: LinearPropagator, tau: f64) -> Result<Vec<f64>> {
    match prop {
        LinearPropagator::Exponential => op.semigroup_factors(tau),
        LinearPropagator::Implicit => op.resolvent_factors(tau),
    }
}

impl<'a> Stepper<'a> {
    pub fn new(kind: SchemeKind, op: &'a SpatialOperator, params: ModelParams, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        let propagator = linear_factors(op, kind.propagator(), tau)?;
        let noise_weight = match kind.noise_kind() {
            NoiseKind::ExactConvolution => vec![1.0; op.n_modes()],
            NoiseKind::Plain => propagator.clone(),
        };
        Ok(Stepper {
            kind,
            op,
            params,
            tau,
            flow: kind.order().map(|o| SplitFlow::new(&params, tau, o)),
            propagator,
            noise_weight,
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn check_noise(&self, noise: &NoiseIncrement) -> Result<()> {
        if noise.kind != self.kind.noise_kind() {
            return Err(Error::Contract(format!(
                "{} expects {:?} noise, got {:?}",
                self.kind,
                self.kind.noise_kind(),
                noise.kind
            )));
        }
        if (noise.tau - self.tau).abs() > 1e-12 * self.tau {
            return Err(Error::Contract(format!(
                "noise increment spans {} but the step is {}",
                noise.tau, self.tau
            )));
        }
        if noise.coeffs.len() != self.op.n_modes() {
            return Err(Error::Shape {
                expected: self.op.n_modes(),
                found: noise.coeffs.len(),
            });
        }
        Ok(())
    }

    fn check_state(&self, x: &State) -> Result<()> {
        x.u.expect_repr(Representation::Grid)?;
        x.v.expect_repr(Representation::Grid)?;
        for len in [x.u.len(), x.v.len()] {
            if len != self.op.n_modes() {
                return Err(Error::Shape {
                    expected: self.op.n_modes(),
                    found: len,
                });
            }
        }
        Ok(())
    }

    /// Advances `x` in place; `noise` holds eigenbasis coefficients whose kind
    /// has already been checked.
    pub(crate) fn advance(&self, x: &mut State, noise: &[f64]) {
        let u = x.u.values_mut();
        let v = x.v.values_mut();
        match self.flow {
            Some(flow) => {
                for (ui, vi) in u.iter_mut().zip(v.iter_mut()) {
                    let y = flow.apply(Point2::new(*ui, *vi));
                    *ui = y.u;
                    *vi = y.v;
                }
            }
            None => {
                let tau = self.tau;
                for (ui, vi) in u.iter_mut().zip(v.iter_mut()) {
                    let p = Point2::new(*ui, *vi);
                    let f = drift_f(&self.params, p);
                    *ui = p.u + tau * f.u;
                    *vi = p.v + tau * f.v;
                }
            }
        }
        self.finish_linear(u, noise);
    }

    fn finish_linear(&self, u: &mut [f64], noise: &[f64]) {
        self.op.forward_in_place(u);
        for (((c, a), w), n) in u
            .iter_mut()
            .zip(&self.propagator)
            .zip(&self.noise_weight)
            .zip(noise)
        {
            *c = a * *c + w * n;
        }
        self.op.inverse_in_place(u);
    }

    pub fn step(&self, x: &State, noise: &NoiseIncrement) -> Result<State> {
        self.check_state(x)?;
        self.check_noise(noise)?;
        let mut y = x.clone();
        self.advance(&mut y, &noise.coeffs);
        Ok(y)
    }

    /// Same step with the pointwise flow replaced by `map`.
    pub fn step_with_map(
        &self,
        x: &State,
        noise: &NoiseIncrement,
        map: impl Fn(Point2) -> Point2,
    ) -> Result<State> {
        self.check_state(x)?;
        self.check_noise(noise)?;
        let mut y = x.clone();
        let u = y.u.values_mut();
        let v = y.v.values_mut();
        for (ui, vi) in u.iter_mut().zip(v.iter_mut()) {
            let p = map(Point2::new(*ui, *vi));
            *ui = p.u;
            *vi = p.v;
        }
        self.finish_linear(y.u.values_mut(), &noise.coeffs);
        Ok(y)
    }
}

pub fn step(
    kind: SchemeKind,
    op: &SpatialOperator,
    params: &ModelParams,
    tau: f64,
    x: &State,
    noise: &NoiseIncrement,
) -> Result<State> {
    Stepper::new(kind, op, *params, tau)?.step(x, noise)
}

pub fn step_euler_maruyama(
    op: &SpatialOperator,
    params: &ModelParams,
    tau: f64,
    x: &State,
    noise: &NoiseIncrement,
) -> Result<State> {
    step(SchemeKind::EulerMaruyama, op, params, tau, x, noise)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub params: ModelParams,
    pub tau: f64,
    pub n_steps: usize,
    pub grid: Grid,
    #[serde(skip)]
    pub initial: Option<State>,
    pub seed: u64,
    /// Trajectory index; selects the RNG substream.
    pub stream: u64,
    /// Number of evenly spaced snapshots to keep (endpoints always kept).
    pub snapshots: usize,
    /// Set to false to run the deterministic system.
    pub noise: bool,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, params: ModelParams, tau: f64, n_steps: usize, initial: State) -> Result<Self> {
        let grid = Grid::new(initial.len(), crate::spatial::Backend::Spectral)?;
        Ok(SchemeConfig {
            kind,
            params,
            tau,
            n_steps,
            grid,
            initial: Some(initial),
            seed: 0,
            stream: 0,
            snapshots: DEFAULT_SNAPSHOTS,
            noise: true,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.tau * self.n_steps as f64
    }

    pub fn validate(&self) -> Result<&State> {
        check_tau(self.tau)?;
        let initial = self
            .initial
            .as_ref()
            .ok_or_else(|| Error::Config("missing initial state".into()))?;
        if initial.len() != self.grid.n_modes() {
            return Err(Error::Shape {
                expected: self.grid.n_modes(),
                found: initial.len(),
            });
        }
        Ok(initial)
    }

    fn snapshot_stride(&self) -> usize {
        if self.snapshots <= 1 {
            return self.n_steps.max(1);
        }
        self.n_steps.div_ceil(self.snapshots - 1).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub state: State,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    /// `‖X_n‖_E` for every step reached, starting with `n = 0`.
    pub norms_e: Vec<f64>,
    /// Step index at which the trajectory blew up.
    pub blowup: Option<usize>,
    pub final_state: State,
}

impl Trajectory {
    pub fn blew_up(&self) -> bool {
        self.blowup.is_some()
    }
}

enum NoiseSource<'p> {
    Off,
    Fresh {
        rng: rand_chacha::ChaCha8Rng,
        sampler: JointSampler,
        plain: Vec<f64>,
        exact: Vec<f64>,
    },
    Path {
        table: &'p PathTable,
        factor: usize,
        buf: Vec<f64>,
    },
}

impl NoiseSource<'_> {
    fn next(&mut self, step: usize, kind: NoiseKind) -> Option<&[f64]> {
        match self {
            NoiseSource::Off => None,
            NoiseSource::Fresh {
                rng,
                sampler,
                plain,
                exact,
            } => {
                sampler.sample_into(rng, plain, exact);
                Some(match kind {
                    NoiseKind::Plain => plain,
                    NoiseKind::ExactConvolution => exact,
                })
            }
            NoiseSource::Path { table, factor, buf } => {
                table.coarse_increment_into(step, *factor, kind, buf);
                Some(buf)
            }
        }
    }
}

/// Dyadic ratio between `tau` and the table's fine step.
fn path_factor(table: &PathTable, tau: f64) -> Result<usize> {
    let ratio = tau / table.fine_tau;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio {
        return Err(Error::Config(format!(
            "step {tau} is not a multiple of the path step {}",
            table.fine_tau
        )));
    }
    let factor = factor as usize;
    if !factor.is_power_of_two() {
        return Err(Error::Config(format!(
            "step {tau} is not a dyadic multiple of the path step {}",
            table.fine_tau
        )));
    }
    Ok(factor)
}

/// Runs `config.n_steps` steps, driven by fresh draws from the
/// `(seed, stream)` substream or, when `path` is given, by coarsened
/// increments of that path.
pub fn run_trajectory(config: &SchemeConfig, path: Option<&PathTable>) -> Result<Trajectory> {
    let initial = config.validate()?;
    let op = SpatialOperator::new(config.grid)?;
    run_trajectory_with(&op, config, initial, path)
}

/// As [`run_trajectory`] with a prebuilt operator.
pub fn run_trajectory_with(
    op: &SpatialOperator,
    config: &SchemeConfig,
    initial: &State,
    path: Option<&PathTable>,
) -> Result<Trajectory> {
    let stride = config.snapshot_stride();
    let mut snapshots = Vec::new();
    let mut norms_e = Vec::with_capacity(config.n_steps + 1);
    let mut last = None;
    let blowup = run_observed(op, config, initial, path, |step, x, norm| {
        norms_e.push(norm);
        let blown = !norm.is_finite() || norm > BLOWUP_THRESHOLD;
        if step % stride == 0 || step == config.n_steps || blown {
            snapshots.push(Snapshot {
                step,
                time: step as f64 * config.tau,
                state: x.clone(),
            });
        }
        if step == config.n_steps || blown {
            last = Some(x.clone());
        }
    })?;
    let final_state = last.expect("the last step is always observed");
    Ok(Trajectory {
        snapshots,
        norms_e,
        blowup,
        final_state,
    })
}

/// Core stepping loop. `observe(step, state, ‖state‖_E)` sees the initial
/// state and every subsequent step, including the one that blows up.
/// Returns the blowup step, if any.
pub fn run_observed(
    op: &SpatialOperator,
    config: &SchemeConfig,
    initial: &State,
    path: Option<&PathTable>,
    mut observe: impl FnMut(usize, &State, f64),
) -> Result<Option<usize>> {
    check_tau(config.tau)?;
    if op.grid() != &config.grid {
        return Err(Error::Config("operator grid differs from configured grid".into()));
    }
    let stepper = Stepper::new(config.kind, op, config.params, config.tau)?;
    let mut x = State::new(op.to_grid(&initial.u)?, op.to_grid(&initial.v)?)?;
    stepper.check_state(&x)?;

    let n = op.n_modes();
    let mut source = match (config.noise, path) {
        (false, _) => NoiseSource::Off,
        (true, Some(table)) => {
            let factor = path_factor(table, config.tau)?;
            if table.n_modes() != n {
                return Err(Error::Shape {
                    expected: n,
                    found: table.n_modes(),
                });
            }
            if config.n_steps * factor > table.n_steps {
                return Err(Error::Config(format!(
                    "{} steps of size {} exceed the path horizon",
                    config.n_steps, config.tau
                )));
            }
            NoiseSource::Path {
                table,
                factor,
                buf: vec![0.0; n],
            }
        }
        (true, None) => NoiseSource::Fresh {
            rng: trajectory_rng(config.seed, config.stream),
            sampler: JointSampler::new(op, config.tau)?,
            plain: vec![0.0; n],
            exact: vec![0.0; n],
        },
    };
    let zeros = vec![0.0; n];
    let kind = config.kind.noise_kind();

    observe(0, &x, x.norm_e()?);
    for k in 0..config.n_steps {
        let noise = source.next(k, kind);
        stepper.advance(&mut x, noise.unwrap_or(&zeros));
        let norm = if x.is_finite() { x.norm_e()? } else { f64::INFINITY };
        observe(k + 1, &x, norm);
        if !norm.is_finite() || norm > BLOWUP_THRESHOLD {
            return Ok(Some(k + 1));
        }
    }
    Ok(None)
}

/// `u₀(ζ) = a cos(2πζ)`, `v₀(ζ) = a cos(2πζ)`.
pub fn cosine_initial(grid: &Grid, amplitude: f64) -> State {
    let f = Field::from_fn(grid, |z| amplitude * (2.0 * std::f64::consts::PI * z).cos());
    State {
        u: f.clone(),
        v: f,
    }
}
