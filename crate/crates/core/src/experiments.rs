//! Monte Carlo drivers: coupled strong-error study with rate fits, moment
//! study, evolution snapshots, temporal-increment and stochastic-convolution
//! sanity checks, and the resolvent/semigroup inequality scan.
//!
//! Sample `s` always draws from RNG substream `s` of the configured seed, and
//! per-sample results are reduced in sample order with compensated sums, so
//! every table is independent of the worker count.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::flows::ModelParams;
use crate::noise::{trajectory_rng, JointSampler, NoiseKind, PathTable};
use crate::schemes::{run_observed, run_trajectory_with, SchemeConfig, SchemeKind, Stepper};
use crate::spatial::{Backend, Field, Grid, SpatialOperator, State};

/// Initial condition shared by every trajectory of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum InitialData {
    /// `u₀ = v₀ = amplitude · cos(2πζ)`
    Cosine { amplitude: f64 },
    /// Spatially constant `u₀`, `v₀`.
    Constant { u: f64, v: f64 },
}

impl InitialData {
    pub fn build(&self, grid: &Grid) -> State {
        match *self {
            InitialData::Cosine { amplitude } => crate::schemes::cosine_initial(grid, amplitude),
            InitialData::Constant { u, v } => State {
                u: Field::constant(grid, u),
                v: Field::constant(grid, v),
            },
        }
    }
}

impl fmt::Display for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialData::Cosine { amplitude } => write!(f, "cosine:{amplitude}"),
            InitialData::Constant { u, v } => write!(f, "constant:{u},{v}"),
        }
    }
}

impl FromStr for InitialData {
    type Err = Error;

    /// `cosine:<a>` or `constant:<u>,<v>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad initial data '{s}', expected cosine:<a> or constant:<u>,<v>"));
        let (shape, args) = s.split_once(':').ok_or_else(bad)?;
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        match shape.trim() {
            "cosine" => Ok(InitialData::Cosine { amplitude: num(args)? }),
            "constant" => {
                let (u, v) = args.split_once(',').ok_or_else(bad)?;
                Ok(InitialData::Constant { u: num(u)?, v: num(v)? })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    /// Error at the terminal time only.
    #[default]
    Terminal,
    /// Maximum over the coarse time grid.
    Sup,
}

/// Statistical slack used by the table checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Allowed relative increase of the RMS error between adjacent levels.
    pub monotone: f64,
    /// Allowed relative spread `(max - min) / max` of moments across τ.
    pub moment_spread: f64,
    /// Relative tolerance on empirical noise variances.
    pub variance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            monotone: 0.10,
            moment_spread: 0.25,
            variance: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schemes: Vec<SchemeKind>,
    pub params: ModelParams,
    pub grid: Grid,
    /// Final time `T`.
    pub horizon: f64,
    /// Decreasing dyadic step sizes.
    pub tau_list: Vec<f64>,
    pub tau_ref: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Moment order.
    pub p: f64,
    /// Target strong-rate exponent, in `[0, 1/4)`.
    pub alpha: f64,
    pub initial: InitialData,
    pub error_mode: ErrorMode,
    pub tolerances: Tolerances,
    /// Worker threads; 0 uses all cores. Never affects results.
    pub jobs: usize,
}

pub fn dyadic(k: i32) -> f64 {
    2f64.powi(-k)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::strong_error_defaults()
    }
}

impl ExperimentConfig {
    /// Desk-scale strong-error study.
    pub fn strong_error_defaults() -> Self {
        ExperimentConfig {
            schemes: SchemeKind::PRIMARY.to_vec(),
            params: ModelParams::error_study_defaults(),
            grid: Grid::new(128, Backend::Spectral).expect("valid grid"),
            horizon: 0.5,
            tau_list: (5..=10).map(dyadic).collect(),
            tau_ref: dyadic(14),
            n_samples: 64,
            seed: 1,
            p: 2.0,
            alpha: 0.2,
            initial: InitialData::Cosine { amplitude: 1.0 },
            error_mode: ErrorMode::Terminal,
            tolerances: Tolerances::default(),
            jobs: 0,
        }
    }

    /// Moment study over all kinds, including the explicit baseline.
    pub fn moment_defaults() -> Self {
        ExperimentConfig {
            schemes: SchemeKind::ALL.to_vec(),
            horizon: 1.0,
            tau_list: vec![dyadic(4), dyadic(6), dyadic(8)],
            n_samples: 200,
            ..Self::strong_error_defaults()
        }
    }

    /// Single-trajectory evolution run with the excitable-regime parameters.
    pub fn evolution_defaults() -> Self {
        ExperimentConfig {
            schemes: vec![SchemeKind::LTexact],
            params: ModelParams::evolution_defaults(),
            horizon: 1.0,
            tau_list: vec![dyadic(10)],
            n_samples: 1,
            ..Self::strong_error_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes selected".into()));
        }
        if self.tau_list.is_empty() {
            return Err(Error::Config("tau_list is empty".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon T must be positive, got {}", self.horizon)));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if !(0.0..0.25).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1/4), got {}", self.alpha)));
        }
        if !(self.p > 0.0) {
            return Err(Error::Config(format!("moment order p must be positive, got {}", self.p)));
        }
        for &tau in self.tau_list.iter().chain(std::iter::once(&self.tau_ref)) {
            if !(tau > 0.0 && tau < crate::flows::TAU0) {
                return Err(Error::Config(format!("step size must lie in (0, 1), got {tau}")));
            }
            steps_for(self.horizon, tau)?;
        }
        for w in self.tau_list.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::Config("tau_list must be strictly decreasing".into()));
            }
            dyadic_ratio(w[0], w[1]).map_err(|_| {
                Error::Config(format!("tau_list is not dyadic: {} / {} is not a power of two", w[0], w[1]))
            })?;
        }
        let min_tau = *self.tau_list.last().expect("non-empty");
        if self.tau_ref >= min_tau {
            return Err(Error::Config(format!(
                "tau_ref {} must be smaller than every step in tau_list",
                self.tau_ref
            )));
        }
        dyadic_ratio(min_tau, self.tau_ref).map_err(|_| {
            Error::Config(format!("tau_ref {} does not divide {} dyadically", self.tau_ref, min_tau))
        })?;
        Ok(())
    }
}

/// `T / τ` as an integer step count.
pub fn steps_for(horizon: f64, tau: f64) -> Result<usize> {
    let r = horizon / tau;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-9 * r {
        return Err(Error::Config(format!("step {tau} does not divide the horizon {horizon}")));
    }
    Ok(n as usize)
}

/// `coarse / fine` when it is a power of two.
fn dyadic_ratio(coarse: f64, fine: f64) -> Result<usize> {
    let r = coarse / fine;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-9 * r || !(n as usize).is_power_of_two() {
        return Err(Error::Config(format!("{coarse} / {fine} is not a power of two")));
    }
    Ok(n as usize)
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = CompensatedSum::default();
    for x in xs {
        s.add(x);
    }
    s.value()
}

pub(crate) fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

fn sq_distance_h(a: &State, b: &State) -> f64 {
    let n = a.len() as f64;
    let du = a.u.values().iter().zip(b.u.values()).map(|(x, y)| (x - y) * (x - y));
    let dv = a.v.values().iter().zip(b.v.values()).map(|(x, y)| (x - y) * (x - y));
    compensated_sum(du.chain(dv)) / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub kind: SchemeKind,
    pub tau: f64,
    pub rms_error: f64,
    /// Delta-method standard error of `rms_error`.
    pub stderr: f64,
    /// Samples that reached `T`.
    pub n_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval for the slope.
    pub ci_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub fits: BTreeMap<SchemeKind, RateFit>,
}

impl ErrorTable {
    pub fn rows_for(&self, kind: SchemeKind) -> impl Iterator<Item = &ErrorRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    pub fn points(&self, kind: SchemeKind) -> Vec<(f64, f64)> {
        self.rows_for(kind).map(|r| (r.tau, r.rms_error)).collect()
    }

    /// RMS error never grows by more than `slack` when τ is refined.
    pub fn is_monotone(&self, kind: SchemeKind, slack: f64) -> bool {
        let mut pts = self.points(kind);
        pts.sort_by(|a, b| b.0.total_cmp(&a.0));
        pts.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + slack))
    }
}

/// Least squares fit of `log₂ error = slope · log₂ τ + intercept`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Domain(format!("rate fit needs at least 3 points, got {}", points.len())));
    }
    if let Some(&(t, e)) = points.iter().find(|&&(t, e)| !(t > 0.0 && e > 0.0 && e.is_finite())) {
        return Err(Error::Domain(format!("rate fit needs positive data, got ({t}, {e})")));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.log2()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.log2()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("rate fit needs at least two distinct step sizes".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let df = n - 2.0;
    let se = (sse / df / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Numerical(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RateFit {
        slope,
        intercept,
        ci_halfwidth: t * se,
    })
}

fn scheme_config(cfg: &ExperimentConfig, kind: SchemeKind, tau: f64, stream: u64, x0: &State) -> Result<SchemeConfig> {
    Ok(SchemeConfig {
        kind,
        params: cfg.params,
        tau,
        n_steps: steps_for(cfg.horizon, tau)?,
        grid: cfg.grid,
        initial: Some(x0.clone()),
        seed: cfg.seed,
        stream,
        snapshots: 2,
        noise: true,
    })
}

/// Squared errors of every (kind, τ) cell for one sample; `None` marks a
/// baseline blowup.
fn sample_errors(
    cfg: &ExperimentConfig,
    op: &SpatialOperator,
    x0: &State,
    cells: &[(SchemeKind, f64)],
    sample: usize,
) -> Result<Vec<Option<f64>>> {
    let stream = sample as u64;
    let n_ref = steps_for(cfg.horizon, cfg.tau_ref)?;
    let table = PathTable::build(cfg.seed, stream, cfg.tau_ref, n_ref, op)?;

    // reference states on the finest coarse grid (terminal mode keeps only T)
    let min_tau = *cfg.tau_list.last().expect("validated");
    let keep_every = match cfg.error_mode {
        ErrorMode::Terminal => n_ref,
        ErrorMode::Sup => dyadic_ratio(min_tau, cfg.tau_ref)?,
    };
    let mut reference = Vec::new();
    let ref_cfg = scheme_config(cfg, SchemeKind::LTexact, cfg.tau_ref, stream, x0)?;
    let blowup = run_observed(op, &ref_cfg, x0, Some(&table), |step, x, _| {
        if step % keep_every == 0 {
            reference.push(x.clone());
        }
    })?;
    if let Some(step) = blowup {
        return Err(Error::Numerical(format!(
            "reference LTexact blew up at step {step} (sample {sample})"
        )));
    }

    cells
        .iter()
        .map(|&(kind, tau)| {
            let run = scheme_config(cfg, kind, tau, stream, x0)?;
            let per_ref = dyadic_ratio(tau, cfg.tau_ref)?;
            let mut worst = 0.0_f64;
            let blowup = run_observed(op, &run, x0, Some(&table), |step, x, _| {
                let fine = step * per_ref;
                if fine % keep_every == 0 {
                    worst = worst.max(sq_distance_h(x, &reference[fine / keep_every]));
                }
            })?;
            match blowup {
                None => Ok(Some(worst)),
                Some(_) if !kind.is_splitting() => Ok(None),
                Some(step) => Err(Error::Numerical(format!(
                    "{kind} blew up at step {step} with tau = {tau} (sample {sample})"
                ))),
            }
        })
        .collect()
}

/// Coupled strong-error study: every sample drives the LTexact reference at
/// `tau_ref` and all (kind, τ) runs with increments of one Brownian path.
pub fn strong_error_study(cfg: &ExperimentConfig) -> Result<ErrorTable> {
    cfg.validate()?;
    let op = SpatialOperator::new(cfg.grid)?;
    let x0 = cfg.initial.build(&cfg.grid);
    let cells: Vec<(SchemeKind, f64)> = cfg
        .schemes
        .iter()
        .flat_map(|&k| cfg.tau_list.iter().map(move |&t| (k, t)))
        .collect();

    let per_sample: Vec<Vec<Option<f64>>> = with_pool(cfg.jobs, || {
        (0..cfg.n_samples)
            .into_par_iter()
            .map(|s| sample_errors(cfg, &op, &x0, &cells, s))
            .collect::<Result<Vec<_>>>()
    })??;

    let mut table = ErrorTable::default();
    for (c, &(kind, tau)) in cells.iter().enumerate() {
        let sq: Vec<f64> = per_sample.iter().filter_map(|s| s[c]).collect();
        let m = sq.len();
        let (rms_error, stderr) = if m == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = compensated_sum(sq.iter().copied()) / m as f64;
            let var = if m > 1 {
                compensated_sum(sq.iter().map(|e| (e - mean).powi(2))) / (m - 1) as f64
            } else {
                0.0
            };
            let rms = mean.sqrt();
            let se = if rms > 0.0 {
                var.sqrt() / (2.0 * rms * (m as f64).sqrt())
            } else {
                0.0
            };
            (rms, se)
        };
        table.rows.push(ErrorRow {
            kind,
            tau,
            rms_error,
            stderr,
            n_samples: m,
        });
    }
    for &kind in cfg.schemes.iter().filter(|k| k.is_splitting()) {
        let pts = table.points(kind);
        if pts.len() >= 3 {
            table.fits.insert(kind, fit_rate(&pts)?);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub kind: SchemeKind,
    pub tau: f64,
    pub p: f64,
    /// `max_n` of the sample mean of `‖X_n‖_E^p`; infinite if any sample blew up.
    pub sup_moment: f64,
    pub blowup_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentTable {
    pub rows: Vec<MomentRow>,
}

impl MomentTable {
    pub fn rows_for(&self, kind: SchemeKind) -> impl Iterator<Item = &MomentRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }

    /// `(max - min) / max` of the sup-moments of `kind` across τ.
    pub fn spread(&self, kind: SchemeKind) -> f64 {
        let (lo, hi) = self
            .rows_for(kind)
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), r| (lo.min(r.sup_moment), hi.max(r.sup_moment)));
        if hi.is_finite() && hi > 0.0 {
            (hi - lo) / hi
        } else {
            f64::INFINITY
        }
    }
}

/// Empirical `sup_n E‖X_n‖_E^p` and blowup fraction for each (kind, τ),
/// with fresh noise on substream `s` for sample `s`.
pub fn moment_study(cfg: &ExperimentConfig) -> Result<MomentTable> {
    cfg.validate()?;
    let op = SpatialOperator::new(cfg.grid)?;
    let x0 = cfg.initial.build(&cfg.grid);
    let cells: Vec<(SchemeKind, f64)> = cfg
        .schemes
        .iter()
        .flat_map(|&k| cfg.tau_list.iter().map(move |&t| (k, t)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.n_samples).map(move |s| (c, s)))
        .collect();

    // each sample yields ‖X_n‖_E^p for n = 0..=N, or None on blowup
    let runs: Vec<Option<Vec<f64>>> = with_pool(cfg.jobs, || {
        jobs.par_iter()
            .map(|&(c, s)| {
                let (kind, tau) = cells[c];
                let run = scheme_config(cfg, kind, tau, s as u64, &x0)?;
                let mut powers = Vec::with_capacity(run.n_steps + 1);
                let blowup = run_observed(&op, &run, &x0, None, |_, _, norm| powers.push(norm.powf(cfg.p)))?;
                Ok(blowup.is_none().then_some(powers))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut table = MomentTable::default();
    for (c, &(kind, tau)) in cells.iter().enumerate() {
        let samples = &runs[c * cfg.n_samples..(c + 1) * cfg.n_samples];
        let finished: Vec<&Vec<f64>> = samples.iter().flatten().collect();
        let blown = cfg.n_samples - finished.len();
        let sup_moment = if blown > 0 {
            f64::INFINITY
        } else {
            let steps = finished[0].len();
            (0..steps)
                .map(|n| compensated_sum(finished.iter().map(|p| p[n])) / cfg.n_samples as f64)
                .fold(0.0, f64::max)
        };
        table.rows.push(MomentRow {
            kind,
            tau,
            p: cfg.p,
            sup_moment,
            blowup_fraction: blown as f64 / cfg.n_samples as f64,
        });
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionRow {
    pub t: f64,
    pub zeta: f64,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evolution {
    pub rows: Vec<EvolutionRow>,
    pub blowup: Option<usize>,
}

/// Space-time samples of one trajectory at its snapshot times.
pub fn evolution_snapshot(config: &SchemeConfig) -> Result<Evolution> {
    let initial = config.validate()?;
    let op = SpatialOperator::new(config.grid)?;
    let tr = run_trajectory_with(&op, config, initial, None)?;
    let zeta = config.grid.points();
    let mut rows = Vec::with_capacity(tr.snapshots.len() * zeta.len());
    for snap in &tr.snapshots {
        for (i, &z) in zeta.iter().enumerate() {
            rows.push(EvolutionRow {
                t: snap.time,
                zeta: z,
                u: snap.state.u.values()[i],
                v: snap.state.v.values()[i],
            });
        }
    }
    Ok(Evolution {
        rows,
        blowup: tr.blowup,
    })
}

/// Mean `‖X(t₀+δ) − X(t₀)‖_H` of LTexact at step `tau` for each `δ = d·τ`
/// in `delta_steps`. Returns `(δ, mean)` pairs.
pub fn temporal_increment_study(
    cfg: &ExperimentConfig,
    tau: f64,
    t0: f64,
    delta_steps: &[usize],
) -> Result<Vec<(f64, f64)>> {
    let op = SpatialOperator::new(cfg.grid)?;
    let x0 = cfg.initial.build(&cfg.grid);
    let start = steps_for(t0, tau)?;
    let longest = delta_steps.iter().copied().max().unwrap_or(0);
    let run = SchemeConfig {
        n_steps: start + longest,
        ..scheme_config(cfg, SchemeKind::LTexact, tau, 0, &x0)?
    };

    let per_sample: Vec<Vec<f64>> = with_pool(cfg.jobs, || {
        (0..cfg.n_samples)
            .into_par_iter()
            .map(|s| {
                let mut at_start = None;
                let mut dist = vec![f64::NAN; delta_steps.len()];
                let blowup = run_observed(&op, &SchemeConfig { stream: s as u64, ..run.clone() }, &x0, None, |step, x, _| {
                    if step == start {
                        at_start = Some(x.clone());
                    }
                    if let Some(a) = &at_start {
                        for (i, &d) in delta_steps.iter().enumerate() {
                            if step == start + d {
                                dist[i] = sq_distance_h(x, a).sqrt();
                            }
                        }
                    }
                })?;
                match blowup {
                    Some(step) => Err(Error::Numerical(format!("LTexact blew up at step {step} (sample {s})"))),
                    None => Ok(dist),
                }
            })
            .collect::<Result<Vec<_>>>()
    })??;

    Ok(delta_steps
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let mean = compensated_sum(per_sample.iter().map(|v| v[i])) / cfg.n_samples as f64;
            (d as f64 * tau, mean)
        })
        .collect())
}

/// Sample mean of `‖Z_N‖_E` where `Z_{n+1} = e^{-τΛ} Z_n + (exact increment)`
/// and `Z_0 = 0`: LTexact with the pointwise flow replaced by the identity.
pub fn stochastic_convolution_mean_norm(
    grid: Grid,
    tau: f64,
    horizon: f64,
    n_samples: usize,
    seed: u64,
    jobs: usize,
) -> Result<f64> {
    let op = SpatialOperator::new(grid)?;
    let n_steps = steps_for(horizon, tau)?;
    let stepper = Stepper::new(SchemeKind::LTexact, &op, ModelParams::error_study_defaults(), tau)?;
    let sampler = JointSampler::new(&op, tau)?;
    let norms: Vec<f64> = with_pool(jobs, || {
        (0..n_samples)
            .into_par_iter()
            .map(|s| {
                let mut rng = trajectory_rng(seed, s as u64);
                let mut z = State::zeros(&grid);
                for _ in 0..n_steps {
                    let (_, exact) = sampler.sample(&mut rng);
                    debug_assert_eq!(exact.kind, NoiseKind::ExactConvolution);
                    z = stepper.step_with_map(&z, &exact, |p| p)?;
                }
                z.norm_e()
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(compensated_sum(norms) / n_samples as f64)
}

/// `count` points spaced evenly in log scale from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..count)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
                .collect()
        }
    }
}

/// Empirical suprema over the scan of `n·|d_n(z)|` and `|d_n(z)| / min(1, z)`
/// with `d_n(z) = (1+z)^{-n} − e^{-nz}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IneqConstants {
    pub c_n: f64,
    pub c_min: f64,
}

/// `(1+z)^{-n} − e^{-nz}` without cancellation at small `z`.
pub fn resolvent_semigroup_gap(n: usize, z: f64) -> f64 {
    // (1+z)^{-n} = e^{-nz} e^{n(z - ln(1+z))}
    let g = if z < 1e-3 {
        z * z * (0.5 - z * (1.0 / 3.0 - z * (0.25 - z / 5.0)))
    } else {
        z - z.ln_1p()
    };
    let n = n as f64;
    if n * g > 1.0 {
        (-n * z.ln_1p()).exp() - (-n * z).exp()
    } else {
        (-n * z).exp() * (n * g).exp_m1()
    }
}

pub fn verify_eq_ineq(n_max: usize, z_grid: &[f64]) -> Result<IneqConstants> {
    if n_max == 0 {
        return Err(Error::Config("n_max must be at least 1".into()));
    }
    if let Some(z) = z_grid.iter().find(|z| !(**z >= 0.0 && z.is_finite())) {
        return Err(Error::Config(format!("z must be finite and non-negative, got {z}")));
    }
    let (c_n, c_min) = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            z_grid.iter().fold((0.0_f64, 0.0_f64), |(a, b), &z| {
                let d = resolvent_semigroup_gap(n, z).abs();
                let normalized = if z == 0.0 { 0.0 } else { d / z.min(1.0) };
                (a.max(n as f64 * d), b.max(normalized))
            })
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0.max(y.0), x.1.max(y.1)));
    Ok(IneqConstants { c_n, c_min })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn fit_exact_lines() {
        for rate in [0.5, 0.25, 1.0] {
            let pts: Vec<(f64, f64)> = (3..9).map(|k| (dyadic(k), 3.0 * dyadic(k).powf(rate))).collect();
            let f = fit_rate(&pts).unwrap();
            assert!((f.slope - rate).abs() < 1e-12);
            assert!((f.intercept - 3f64.log2()).abs() < 1e-12);
            assert!(f.ci_halfwidth < 1e-10);
        }
    }

    #[test]
    fn fit_noisy_line() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<(f64, f64)> = (3..12)
            .map(|k| {
                let t = dyadic(k);
                (t, t.sqrt() * (1.0 + 0.05 * rng.random_range(-1.0..1.0)))
            })
            .collect();
        let f = fit_rate(&pts).unwrap();
        assert!((0.45..=0.55).contains(&f.slope), "{}", f.slope);
        assert!(f.ci_halfwidth > 0.0 && f.ci_halfwidth < 0.05);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(fit_rate(&[(0.1, 1.0), (0.05, 0.5)]), Err(Error::Domain(_))));
        assert!(matches!(
            fit_rate(&[(0.1, 1.0), (0.05, 0.0), (0.025, 0.2)]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            fit_rate(&[(0.1, 1.0), (0.05, -1.0), (0.025, 0.2)]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn student_t_quantile() {
        // two-sided 95% quantiles from standard tables
        for (df, q) in [(1.0, 12.706), (4.0, 2.776), (30.0, 2.042)] {
            let t = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(0.975);
            assert!((t - q).abs() < 1e-3);
        }
    }

    #[test]
    fn config_validation() {
        ExperimentConfig::strong_error_defaults().validate().unwrap();
        ExperimentConfig::moment_defaults().validate().unwrap();
        let base = ExperimentConfig::strong_error_defaults();
        let bad = [
            ExperimentConfig { tau_list: vec![dyadic(5), 0.02], ..base.clone() },
            ExperimentConfig { tau_list: vec![dyadic(6), dyadic(5)], ..base.clone() },
            ExperimentConfig { tau_ref: dyadic(10), ..base.clone() },
            ExperimentConfig { tau_ref: 3.0 * dyadic(14), ..base.clone() },
            ExperimentConfig { tau_list: vec![1.0, 0.5], ..base.clone() },
            ExperimentConfig { horizon: 0.3, ..base.clone() },
            ExperimentConfig { alpha: 0.25, ..base.clone() },
            ExperimentConfig { n_samples: 0, ..base.clone() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn initial_data_parsing() {
        for s in ["cosine:1", "constant:10,10", "constant:-2.5,0"] {
            let d: InitialData = s.parse().unwrap();
            assert_eq!(d.to_string().parse::<InitialData>().unwrap(), d);
        }
        assert!("sine:1".parse::<InitialData>().is_err());
        assert!("constant:1".parse::<InitialData>().is_err());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn gap_matches_direct_formula() {
        for n in [1, 2, 7, 100] {
            for z in [1e-2_f64, 0.3, 1.0, 17.0] {
                let direct = (1.0 + z).powi(-(n as i32)) - (-(n as f64) * z).exp();
                assert!((resolvent_semigroup_gap(n, z) - direct).abs() < 1e-14);
            }
        }
        assert_eq!(resolvent_semigroup_gap(1, 0.0), 0.0);
        // series branch agrees with the closed branch at the switch
        let z = 1e-3_f64;
        let closed = z - z.ln_1p();
        let series = z * z * (0.5 - z * (1.0 / 3.0 - z * (0.25 - z / 5.0)));
        assert!((closed - series).abs() < 1e-11 * closed);
    }

    #[test]
    fn ineq_small_scan() {
        let c = verify_eq_ineq(2, &logspace(1e-3, 1e2, 2000)).unwrap();
        // n = 2: sup_z 2|(1+z)^{-2} − e^{-2z}| by dense brute force
        let brute = (1..200_000)
            .map(|i| {
                let z = i as f64 * 5e-5;
                2.0 * ((1.0 + z).powi(-2) - (-2.0 * z).exp()).abs()
            })
            .fold(0.0, f64::max);
        assert!(c.c_n >= brute - 1e-4 && c.c_n.is_finite());
        assert!(verify_eq_ineq(0, &[1.0]).is_err());
        assert!(verify_eq_ineq(1, &[-1.0]).is_err());
    }

    #[test]
    fn logspace_endpoints() {
        let g = logspace(1e-6, 1e3, 10);
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-6).abs() < 1e-20);
        assert!((g[9] - 1e3).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig {
            grid: Grid::new(16, Backend::Spectral).unwrap(),
            horizon: 0.25,
            tau_list: vec![dyadic(3), dyadic(4), dyadic(5)],
            tau_ref: dyadic(7),
            n_samples: 6,
            ..ExperimentConfig::strong_error_defaults()
        }
    }

    #[test]
    fn strong_error_small_and_job_independent() {
        let cfg = small_cfg();
        let a = strong_error_study(&ExperimentConfig { jobs: 1, ..cfg.clone() }).unwrap();
        let b = strong_error_study(&ExperimentConfig { jobs: 3, ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 9);
        assert_eq!(a.fits.len(), 3);
        assert!(a.rows.iter().all(|r| r.rms_error > 0.0 && r.n_samples == 6));
    }

    #[test]
    fn reference_against_itself_is_exact() {
        let cfg = ExperimentConfig {
            schemes: vec![SchemeKind::LTexact],
            tau_list: vec![dyadic(5), dyadic(6), dyadic(7)],
            tau_ref: dyadic(8),
            ..small_cfg()
        };
        let op = SpatialOperator::new(cfg.grid).unwrap();
        let x0 = cfg.initial.build(&cfg.grid);
        let e = sample_errors(&cfg, &op, &x0, &[(SchemeKind::LTexact, dyadic(8))], 0).unwrap();
        assert_eq!(e, vec![Some(0.0)]);
    }

    #[test]
    fn sup_mode_dominates_terminal() {
        let cfg = small_cfg();
        let t = strong_error_study(&cfg).unwrap();
        let s = strong_error_study(&ExperimentConfig { error_mode: ErrorMode::Sup, ..cfg }).unwrap();
        for (a, b) in t.rows.iter().zip(&s.rows) {
            assert!(b.rms_error >= a.rms_error);
        }
    }

    #[test]
    fn moment_study_small() {
        let cfg = ExperimentConfig {
            schemes: vec![SchemeKind::LTexpo, SchemeKind::EulerMaruyama],
            initial: InitialData::Constant { u: 10.0, v: 10.0 },
            tau_list: vec![dyadic(4)],
            n_samples: 8,
            ..small_cfg()
        };
        let m = moment_study(&cfg).unwrap();
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.rows[0].blowup_fraction, 0.0);
        assert!(m.rows[0].sup_moment >= 100.0 && m.rows[0].sup_moment.is_finite());
        assert_eq!(m.rows[1].blowup_fraction, 1.0);
        assert!(m.rows[1].sup_moment.is_infinite());
    }

    #[test]
    fn evolution_rows_cover_snapshots() {
        let grid = Grid::new(8, Backend::FiniteDifference).unwrap();
        let mut c = SchemeConfig::new(
            SchemeKind::LTexact,
            ModelParams::evolution_defaults(),
            dyadic(6),
            64,
            crate::schemes::cosine_initial(&grid, 1.0),
        )
        .unwrap();
        c.grid = grid;
        c.snapshots = 5;
        let e = evolution_snapshot(&c).unwrap();
        assert_eq!(e.rows.len(), 5 * 8);
        assert_eq!(e.rows[0].t, 0.0);
        assert_eq!(e.rows.last().unwrap().t, 1.0);
        assert_eq!(evolution_snapshot(&c).unwrap(), e);
    }
}
