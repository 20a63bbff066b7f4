//! Cylindrical Wiener increments and exact stochastic-convolution increments
//! in the cosine eigenbasis.
//!
//! One Brownian motion drives each discrete eigenmode (truncation at the
//! spatial resolution). Over a step of length `τ`, mode `j` carries the pair
//!
//! ```text
//! δβ_j = β_j(t + τ) - β_j(t)                       variance τ
//! Z_j  = ∫_t^{t+τ} e^{-(t+τ-s) μ_j} dβ_j(s)        variance (1 - e^{-2τμ_j}) / (2μ_j)
//! ```
//!
//! which are jointly Gaussian with covariance `(1 - e^{-τμ_j}) / μ_j`. Both are
//! drawn together so that a single path drives the plain-increment schemes and
//! the exact-convolution scheme in a coupled strong-error study.
//!
//! # Streams
//!
//! Every trajectory owns a ChaCha8 stream keyed by `(seed, stream)`, where
//! `stream` is the trajectory (sample) index. Within a stream the draws are
//! consumed step by step, mode by mode, two standard normals per mode: the
//! first builds `δβ_j`, the second the part of `Z_j` orthogonal to it. The
//! ordering is fixed, so results do not depend on worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::SpatialOperator;

/// RNG for trajectory `stream` under a global `seed`.
pub fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    /// Brownian increments `δW`.
    Plain,
    /// Stochastic convolution over one step, `∫ e^{(t_{n+1}-s)Δ} dW(s)`.
    ExactConvolution,
}

/// Eigenbasis coefficients of the u-component noise over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    pub coeffs: Vec<f64>,
    pub tau: f64,
    pub kind: NoiseKind,
}

impl NoiseIncrement {
    pub fn zero(kind: NoiseKind, tau: f64, n_modes: usize) -> Self {
        NoiseIncrement {
            coeffs: vec![0.0; n_modes],
            tau,
            kind,
        }
    }
}

fn check_step(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("step must be finite and > 0, got {tau}")))
    }
}

pub fn sample_plain_increment<R: Rng + ?Sized>(rng: &mut R, tau: f64, n_modes: usize) -> Result<NoiseIncrement> {
    check_step(tau)?;
    let sd = tau.sqrt();
    let coeffs = (0..n_modes)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(NoiseIncrement {
        coeffs,
        tau,
        kind: NoiseKind::Plain,
    })
}

/// Itô-isometry variance `(1 - e^{-2τμ}) / (2μ)` of one mode of the
/// stochastic convolution over a step `τ`; equals `τ` at `μ = 0`.
pub fn exact_convolution_variance(mu: f64, tau: f64) -> f64 {
    let x = tau * mu;
    if x < 1e-8 {
        tau * (1.0 - x + 2.0 / 3.0 * x * x)
    } else {
        -(-2.0 * x).exp_m1() / (2.0 * mu)
    }
}

/// `∫_0^τ e^{-μs} ds`, the covariance between the Brownian increment and
/// the stochastic convolution of one mode.
pub fn exact_convolution_covariance(mu: f64, tau: f64) -> f64 {
    let x = tau * mu;
    if x < 1e-8 {
        tau * (1.0 - x / 2.0 + x * x / 6.0)
    } else {
        -(-x).exp_m1() / mu
    }
}

pub fn sample_exact_convolution_increment<R: Rng + ?Sized>(
    rng: &mut R,
    op: &SpatialOperator,
    tau: f64,
) -> Result<NoiseIncrement> {
    check_step(tau)?;
    let coeffs = op
        .eigenvalues()
        .iter()
        .map(|&mu| exact_convolution_variance(mu, tau).sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(NoiseIncrement {
        coeffs,
        tau,
        kind: NoiseKind::ExactConvolution,
    })
}

/// Draws the coupled pair (plain, exact convolution) for one step.
#[derive(Debug, Clone)]
pub struct JointSampler {
    tau: f64,
    sd: f64,
    // Z_j = regress_j · δβ_j + resid_j · ξ
    regress: Vec<f64>,
    resid: Vec<f64>,
}

impl JointSampler {
    pub fn new(op: &SpatialOperator, tau: f64) -> Result<Self> {
        check_step(tau)?;
        let (regress, resid) = op
            .eigenvalues()
            .iter()
            .map(|&mu| {
                let var = exact_convolution_variance(mu, tau);
                let cov = exact_convolution_covariance(mu, tau);
                let a = cov / tau;
                (a, (var - a * cov).max(0.0).sqrt())
            })
            .unzip();
        Ok(JointSampler {
            tau,
            sd: tau.sqrt(),
            regress,
            resid,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_modes(&self) -> usize {
        self.regress.len()
    }

    /// Fills `plain` and `exact` with one step of coupled draws.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, plain: &mut [f64], exact: &mut [f64]) {
        for j in 0..self.regress.len() {
            let xi: f64 = rng.sample(StandardNormal);
            let eta: f64 = rng.sample(StandardNormal);
            let db = self.sd * xi;
            plain[j] = db;
            exact[j] = self.regress[j] * db + self.resid[j] * eta;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (NoiseIncrement, NoiseIncrement) {
        let n = self.n_modes();
        let mut plain = NoiseIncrement::zero(NoiseKind::Plain, self.tau, n);
        let mut exact = NoiseIncrement::zero(NoiseKind::ExactConvolution, self.tau, n);
        self.sample_into(rng, &mut plain.coeffs, &mut exact.coeffs);
        (plain, exact)
    }
}

/// Fine-resolution increments of one Brownian path, both kinds, stored
/// row-major as `steps × modes`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    pub fine_tau: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub stream: u64,
    // e^{-fine_tau · μ_j}
    fine_decay: Vec<f64>,
    plain: Vec<f64>,
    exact: Vec<f64>,
}

pub fn build_path_table(
    seed: u64,
    stream: u64,
    fine_tau: f64,
    n_fine_steps: usize,
    op: &SpatialOperator,
) -> Result<PathTable> {
    PathTable::build(seed, stream, fine_tau, n_fine_steps, op)
}

impl PathTable {
    /// Draws the table from the `(seed, stream)` trajectory RNG, consuming it
    /// exactly as a fresh-sampling run at step `fine_tau` would.
    pub fn build(
        seed: u64,
        stream: u64,
        fine_tau: f64,
        n_fine_steps: usize,
        op: &SpatialOperator,
    ) -> Result<Self> {
        let sampler = JointSampler::new(op, fine_tau)?;
        let n = op.n_modes();
        let mut rng = trajectory_rng(seed, stream);
        let mut plain = vec![0.0; n * n_fine_steps];
        let mut exact = vec![0.0; n * n_fine_steps];
        for (p, e) in plain.chunks_exact_mut(n).zip(exact.chunks_exact_mut(n)) {
            sampler.sample_into(&mut rng, p, e);
        }
        Ok(PathTable {
            fine_tau,
            n_steps: n_fine_steps,
            seed,
            stream,
            fine_decay: op.eigenvalues().iter().map(|mu| (-fine_tau * mu).exp()).collect(),
            plain,
            exact,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.fine_decay.len()
    }

    fn fine_row(&self, kind: NoiseKind, step: usize) -> &[f64] {
        let n = self.n_modes();
        let data = match kind {
            NoiseKind::Plain => &self.plain,
            NoiseKind::ExactConvolution => &self.exact,
        };
        &data[step * n..(step + 1) * n]
    }

    fn check_factor(&self, factor: usize) -> Result<()> {
        if factor == 0 || !factor.is_power_of_two() {
            return Err(Error::Config(format!(
                "coarsening factor {factor} is not a power of two"
            )));
        }
        if self.n_steps % factor != 0 {
            return Err(Error::Config(format!(
                "coarsening factor {factor} does not divide {} fine steps",
                self.n_steps
            )));
        }
        Ok(())
    }

    /// Increment over coarse step `index` of size `factor · fine_tau`.
    ///
    /// Plain increments add up. Exact-convolution increments follow the
    /// recursion `Z ← e^{-δΛ} Z + z_fine`, so the coarse draw is the
    /// stochastic convolution over the coarse step driven by the same path.
    pub fn coarse_increment_into(&self, index: usize, factor: usize, kind: NoiseKind, out: &mut [f64]) {
        out.iter_mut().for_each(|c| *c = 0.0);
        let start = index * factor;
        match kind {
            NoiseKind::Plain => {
                for k in start..start + factor {
                    for (c, f) in out.iter_mut().zip(self.fine_row(kind, k)) {
                        *c += f;
                    }
                }
            }
            NoiseKind::ExactConvolution => {
                for k in start..start + factor {
                    let row = self.fine_row(kind, k);
                    for ((c, f), d) in out.iter_mut().zip(row).zip(&self.fine_decay) {
                        *c = d * *c + f;
                    }
                }
            }
        }
    }

    pub fn coarse_increment(&self, index: usize, factor: usize, kind: NoiseKind) -> Result<NoiseIncrement> {
        self.check_factor(factor)?;
        if (index + 1) * factor > self.n_steps {
            return Err(Error::Config(format!(
                "coarse step {index} at factor {factor} is past the end of the table"
            )));
        }
        let mut inc = NoiseIncrement::zero(kind, self.fine_tau * factor as f64, self.n_modes());
        self.coarse_increment_into(index, factor, kind, &mut inc.coeffs);
        Ok(inc)
    }

    /// Checks that `factor` is usable and returns the coarse step count.
    pub fn coarse_steps(&self, factor: usize) -> Result<usize> {
        self.check_factor(factor)?;
        Ok(self.n_steps / factor)
    }
}

pub fn coarsen(table: &PathTable, factor: usize, kind: NoiseKind) -> Result<Vec<NoiseIncrement>> {
    let steps = table.coarse_steps(factor)?;
    (0..steps)
        .map(|i| table.coarse_increment(i, factor, kind))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{Backend, Grid};

    fn op(n: usize) -> SpatialOperator {
        SpatialOperator::new(Grid::new(n, Backend::Spectral).unwrap()).unwrap()
    }

    #[test]
    fn variance_limits() {
        assert_eq!(exact_convolution_variance(0.0, 0.3), 0.3);
        let mu = 1e6;
        assert!((exact_convolution_variance(mu, 1.0) - 0.5 / mu).abs() < 1e-18);
        // continuity across the series switch
        for mu in [0.999e-8_f64, 1.001e-8] {
            let closed = -(-2.0 * mu).exp_m1() / (2.0 * mu);
            assert!((exact_convolution_variance(mu, 1.0) - closed).abs() < 1e-14);
        }
    }

    #[test]
    fn variance_matches_quadrature() {
        let mu = std::f64::consts::PI.powi(2);
        let tau = 0.01;
        let panels = 1_000_000;
        let h = tau / panels as f64;
        let f = |s: f64| (-2.0 * mu * s).exp();
        let mut sum = 0.5 * (f(0.0) + f(tau));
        for i in 1..panels {
            sum += f(i as f64 * h);
        }
        assert!((sum * h - exact_convolution_variance(mu, tau)).abs() < 1e-10);
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let mut a = trajectory_rng(7, 3);
        let mut b = trajectory_rng(7, 3);
        let mut c = trajectory_rng(7, 4);
        let x: Vec<u64> = (0..4).map(|_| a.random()).collect();
        let y: Vec<u64> = (0..4).map(|_| b.random()).collect();
        let z: Vec<u64> = (0..4).map(|_| c.random()).collect();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn exact_mode_zero_matches_plain() {
        let op = op(8);
        let s = JointSampler::new(&op, 0.25).unwrap();
        let (p, e) = s.sample(&mut trajectory_rng(1, 0));
        assert_eq!(p.coeffs[0], e.coeffs[0]);
    }

    #[test]
    fn path_table_is_reproducible() {
        let op = op(8);
        let a = PathTable::build(11, 2, 1.0 / 64.0, 32, &op).unwrap();
        let b = PathTable::build(11, 2, 1.0 / 64.0, 32, &op).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coarsen_identity_and_pairs() {
        let op = op(8);
        let t = PathTable::build(5, 0, 1.0 / 32.0, 16, &op).unwrap();
        let one = coarsen(&t, 1, NoiseKind::Plain).unwrap();
        assert_eq!(one.len(), 16);
        assert_eq!(one[3].coeffs, t.fine_row(NoiseKind::Plain, 3));
        let one_e = coarsen(&t, 1, NoiseKind::ExactConvolution).unwrap();
        assert_eq!(one_e[3].coeffs, t.fine_row(NoiseKind::ExactConvolution, 3));

        let two = coarsen(&t, 2, NoiseKind::Plain).unwrap();
        assert_eq!(two.len(), 8);
        for (i, inc) in two.iter().enumerate() {
            for j in 0..8 {
                let s = t.fine_row(NoiseKind::Plain, 2 * i)[j] + t.fine_row(NoiseKind::Plain, 2 * i + 1)[j];
                assert_eq!(inc.coeffs[j], s);
            }
            assert_eq!(inc.tau, 1.0 / 16.0);
        }

        let two_e = coarsen(&t, 2, NoiseKind::ExactConvolution).unwrap();
        for (i, inc) in two_e.iter().enumerate() {
            for (j, mu) in op.eigenvalues().iter().enumerate() {
                let first = t.fine_row(NoiseKind::ExactConvolution, 2 * i)[j];
                let second = t.fine_row(NoiseKind::ExactConvolution, 2 * i + 1)[j];
                let expected = (-mu / 32.0).exp() * first + second;
                assert!((inc.coeffs[j] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bad_factors_rejected() {
        let op = op(4);
        let t = PathTable::build(5, 0, 0.1, 12, &op).unwrap();
        assert!(matches!(coarsen(&t, 3, NoiseKind::Plain), Err(Error::Config(_))));
        assert!(matches!(coarsen(&t, 8, NoiseKind::Plain), Err(Error::Config(_))));
        assert!(matches!(coarsen(&t, 0, NoiseKind::Plain), Err(Error::Config(_))));
        assert!(coarsen(&t, 4, NoiseKind::Plain).is_ok());
    }

    #[test]
    fn nonpositive_step_rejected() {
        let mut rng = trajectory_rng(0, 0);
        assert!(sample_plain_increment(&mut rng, 0.0, 4).is_err());
        assert!(JointSampler::new(&op(4), -1.0).is_err());
    }
}
