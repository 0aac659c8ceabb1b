//! (μ/μ_w, λ)-CMA-ES.
//!
//! Log-rank recombination weights, rank-one and rank-μ covariance updates,
//! and cumulative step-size adaptation, with the usual default strategy
//! parameters. The search starts at the origin; there are no restarts and
//! no bounds. Candidates of one generation are evaluated in parallel and
//! reduced in candidate order, so a run is a pure function of the objective
//! and the config.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmaesError {
    #[error("invalid CMA-ES config: {0}")]
    InvalidConfig(String),
    #[error("objective returned {value} at {point:?}")]
    NonFiniteObjective { point: Vec<f64>, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesConfig {
    pub dimension: usize,
    pub population: usize,
    pub iterations: usize,
    pub sigma0: f64,
    pub seed: u64,
    pub mode: Mode,
}

impl CmaesConfig {
    pub const DEFAULT_POPULATION: usize = 64;
    pub const DEFAULT_ITERATIONS: usize = 20;
    pub const DEFAULT_SIGMA0: f64 = 0.5;

    /// Population 64, 20 iterations, σ0 = 0.5, minimizing.
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            population: Self::DEFAULT_POPULATION,
            iterations: Self::DEFAULT_ITERATIONS,
            sigma0: Self::DEFAULT_SIGMA0,
            seed: 0,
            mode: Mode::Minimize,
        }
    }

    pub fn validate(&self) -> Result<(), CmaesError> {
        if self.dimension < 1 {
            return Err(CmaesError::InvalidConfig("dimension must be >= 1".into()));
        }
        if self.population < 4 {
            return Err(CmaesError::InvalidConfig(format!(
                "population must be >= 4, got {}",
                self.population
            )));
        }
        if self.iterations < 1 {
            return Err(CmaesError::InvalidConfig("iterations must be >= 1".into()));
        }
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(CmaesError::InvalidConfig(format!(
                "sigma0 must be > 0, got {}",
                self.sigma0
            )));
        }
        Ok(())
    }
}

/// Derived strategy constants for a given dimension and population.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyParameters {
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl StrategyParameters {
    pub fn new(dimension: usize, population: usize) -> Self {
        let n = dimension as f64;
        let lambda = population as f64;
        let mu = population / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff))
            .min(1.0 - c_1);
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self {
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

impl fmt::Display for StrategyParameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mu = {}", self.mu)?;
        writeln!(f, "mu_eff = {:.6}", self.mu_eff)?;
        writeln!(f, "c_sigma = {:.6}", self.c_sigma)?;
        writeln!(f, "d_sigma = {:.6}", self.d_sigma)?;
        writeln!(f, "c_c = {:.6}", self.c_c)?;
        writeln!(f, "c_1 = {:.6}", self.c_1)?;
        writeln!(f, "c_mu = {:.6}", self.c_mu)?;
        write!(f, "chi_n = {:.6}", self.chi_n)
    }
}

/// Per-generation snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesResult {
    /// Best point evaluated over the whole run.
    pub best_point: Vec<f64>,
    pub best_value: f64,
    /// Best value of each generation, in the objective's own sign.
    pub history: Vec<f64>,
    pub trace: Vec<GenerationTrace>,
    pub evaluations: usize,
    pub strategy: StrategyParameters,
}

impl CmaesResult {
    /// Best-so-far value after each generation.
    pub fn running_best(&self, mode: Mode) -> Vec<f64> {
        let mut best = match mode {
            Mode::Minimize => f64::INFINITY,
            Mode::Maximize => f64::NEG_INFINITY,
        };
        self.history
            .iter()
            .map(|&v| {
                best = match mode {
                    Mode::Minimize => best.min(v),
                    Mode::Maximize => best.max(v),
                };
                best
            })
            .collect()
    }
}

/// Runs CMA-ES on `objective` from the origin.
pub fn cmaes_optimize<F>(objective: F, config: &CmaesConfig) -> Result<CmaesResult, CmaesError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let n = config.dimension;
    let lambda = config.population;
    let params = StrategyParameters::new(n, lambda);
    let sign = match config.mode {
        Mode::Minimize => 1.0,
        Mode::Maximize => -1.0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mean = DVector::<f64>::zeros(n);
    let mut sigma = config.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut path_sigma = DVector::<f64>::zeros(n);
    let mut path_c = DVector::<f64>::zeros(n);

    let mut best_point = mean.as_slice().to_vec();
    let mut best_cost = f64::INFINITY;
    let mut history = Vec::with_capacity(config.iterations);
    let mut trace = Vec::with_capacity(config.iterations);
    let mut evaluations = 0;

    for generation in 1..=config.iterations {
        let (basis, scales) = decompose(&cov);
        let transform = &basis * DMatrix::from_diagonal(&scales);

        let steps: Vec<DVector<f64>> = (0..lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                &transform * z
            })
            .collect();
        let points: Vec<Vec<f64>> = steps
            .iter()
            .map(|y| (&mean + sigma * y).as_slice().to_vec())
            .collect();
        let values: Vec<f64> = points.par_iter().map(|x| objective(x)).collect();
        evaluations += lambda;

        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CmaesError::NonFiniteObjective {
                point: points[i].clone(),
                value: values[i],
            });
        }

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| (sign * values[a]).total_cmp(&(sign * values[b])));

        let top = order[0];
        history.push(values[top]);
        trace.push(GenerationTrace {
            best_point: points[top].clone(),
            best_value: values[top],
            sigma,
        });
        if sign * values[top] < best_cost {
            best_cost = sign * values[top];
            best_point = points[top].clone();
        }

        let mut y_w = DVector::<f64>::zeros(n);
        for (w, &i) in params.weights.iter().zip(&order) {
            y_w.axpy(*w, &steps[i], 1.0);
        }
        mean.axpy(sigma, &y_w, 1.0);

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let whitened = &basis * DMatrix::from_diagonal(&scales.map(|d| 1.0 / d)) * basis.transpose() * &y_w;
        let cs = params.c_sigma;
        path_sigma = (1.0 - cs) * &path_sigma + (cs * (2.0 - cs) * params.mu_eff).sqrt() * whitened;

        let ps_norm = path_sigma.norm();
        let decay = 1.0 - (1.0 - cs).powi(2 * generation as i32);
        let h_sigma = if ps_norm / decay.sqrt() < (1.4 + 2.0 / (n as f64 + 1.0)) * params.chi_n {
            1.0
        } else {
            0.0
        };

        let cc = params.c_c;
        path_c = (1.0 - cc) * &path_c + h_sigma * (cc * (2.0 - cc) * params.mu_eff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, &i) in params.weights.iter().zip(&order) {
            rank_mu += *w * &steps[i] * steps[i].transpose();
        }
        let rank_one = &path_c * path_c.transpose();
        let stall_correction = (1.0 - h_sigma) * cc * (2.0 - cc);
        cov = (1.0 - params.c_1 - params.c_mu) * &cov
            + params.c_1 * (rank_one + stall_correction * &cov)
            + params.c_mu * rank_mu;
        cov = 0.5 * (&cov + cov.transpose());

        sigma *= ((cs / params.d_sigma) * (ps_norm / params.chi_n - 1.0)).exp();
    }

    Ok(CmaesResult {
        best_point,
        best_value: sign * best_cost,
        history,
        trace,
        evaluations,
        strategy: params,
    })
}

/// Eigenbasis `B` and axis lengths `D = sqrt(eig(C))` of a covariance.
fn decompose(cov: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eigen = SymmetricEigen::new(cov.clone());
    let scales = eigen.eigenvalues.map(|v| v.max(1e-300).sqrt());
    (eigen.eigenvectors, scales)
}
