//! Synthetic population generation for planning runs and validation.
//!
//! Features are multivariate normal: an informative block with structured
//! covariance and independent standard normal noise features. Labels follow
//! the linear logistic model, optionally with a three-level clinical
//! covariate. The informative coefficients are calibrated so the asymptotic
//! slope (the standard deviation of the true score) hits a requested value.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::logistic::sigmoid;
use crate::seeds;

/// Covariance structure of the informative feature block. Noise features are
/// always independent standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Identity,
    CompoundSymmetric,
    Ar1Blocks,
}

#[derive(Debug, Clone)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub n_informative: usize,
    pub block_size: usize,
    pub n_blocks: usize,
    pub rho: f64,
    pub p: usize,
}

impl CovarianceSpec {
    pub fn new(
        kind: CovarianceKind,
        n_informative: usize,
        block_size: usize,
        n_blocks: usize,
        rho: f64,
        p: usize,
    ) -> Result<Self> {
        let spec = CovarianceSpec {
            kind,
            n_informative,
            block_size,
            n_blocks,
            rho,
            p,
        };
        spec.check()?;
        Ok(spec)
    }

    /// Identity covariance with one informative feature, the simplest design.
    pub fn identity(p: usize) -> Result<Self> {
        Self::new(CovarianceKind::Identity, 1, 0, 0, 0.0, p)
    }

    /// Three AR(1) blocks of size three with the given correlation.
    pub fn ar1_3x3(rho: f64, p: usize) -> Result<Self> {
        Self::new(CovarianceKind::Ar1Blocks, 9, 3, 3, rho, p)
    }

    /// Nine exchangeable informative features with the given correlation.
    pub fn compound_symmetric_9(rho: f64, p: usize) -> Result<Self> {
        Self::new(CovarianceKind::CompoundSymmetric, 9, 0, 0, rho, p)
    }

    fn check(&self) -> Result<()> {
        if self.n_informative == 0 || self.n_informative > self.p {
            return Err(Error::InvalidConfig(format!(
                "n_informative = {} must lie in 1..={}",
                self.n_informative, self.p
            )));
        }
        if !(-1.0 < self.rho && self.rho < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rho = {} must lie in (-1, 1)",
                self.rho
            )));
        }
        if self.kind == CovarianceKind::Ar1Blocks
            && self.block_size * self.n_blocks != self.n_informative
        {
            return Err(Error::InvalidConfig(format!(
                "n_informative = {} but block_size * n_blocks = {}",
                self.n_informative,
                self.block_size * self.n_blocks
            )));
        }
        // Positive definiteness of the informative block.
        self.informative_cholesky()?;
        Ok(())
    }

    /// Dense covariance matrix of the informative block, row-major.
    pub fn informative_covariance(&self) -> Vec<f64> {
        let k = self.n_informative;
        let mut sigma = vec![0.0; k * k];
        match self.kind {
            CovarianceKind::Identity => {
                for i in 0..k {
                    sigma[i * k + i] = 1.0;
                }
            }
            CovarianceKind::CompoundSymmetric => {
                for i in 0..k {
                    for j in 0..k {
                        sigma[i * k + j] = if i == j { 1.0 } else { self.rho };
                    }
                }
            }
            CovarianceKind::Ar1Blocks => {
                for b in 0..self.n_blocks {
                    let off = b * self.block_size;
                    for i in 0..self.block_size {
                        for j in 0..self.block_size {
                            sigma[(off + i) * k + (off + j)] =
                                self.rho.powi((i as i32 - j as i32).abs());
                        }
                    }
                }
            }
        }
        sigma
    }

    fn informative_cholesky(&self) -> Result<Vec<f64>> {
        linalg::cholesky(&self.informative_covariance(), self.n_informative)
    }
}

/// Calibrates equal-magnitude coefficients on the informative features so
/// that `Var(gamma' g) = beta_infinity^2`. With entry value `c` the variance
/// is `c^2 * 1' Sigma_inf 1`, hence `c = beta_infinity / sqrt(sum(Sigma_inf))`.
pub fn calibrate_gamma(cov: &CovarianceSpec, beta_infinity: f64) -> Result<Vec<f64>> {
    calibrate_gamma_with_shift(cov, beta_infinity, 0.0)
}

fn calibrate_gamma_with_shift(
    cov: &CovarianceSpec,
    beta_infinity: f64,
    mixture_shift: f64,
) -> Result<Vec<f64>> {
    if !(beta_infinity > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "beta_infinity = {beta_infinity}, must be positive"
        )));
    }
    cov.informative_cholesky()?;
    let sigma = cov.informative_covariance();
    let total: f64 = sigma.iter().sum();
    let k = cov.n_informative as f64;
    // A symmetric two-component mean shift of +-s per informative coordinate
    // adds (c*s*k)^2 of between-component variance.
    let denom = total + mixture_shift * mixture_shift * k * k;
    if denom <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    let c = beta_infinity / denom.sqrt();
    let mut gamma = vec![0.0; cov.p];
    for g in gamma.iter_mut().take(cov.n_informative) {
        *g = c;
    }
    Ok(gamma)
}

/// Clinical covariate design: three levels in {-1, 0, 1} with equal
/// probability and an unpenalized slope in the label model.
#[derive(Debug, Clone, Copy)]
pub struct ClinicalSpec {
    pub delta: f64,
}

/// A complete synthetic population.
#[derive(Debug, Clone)]
pub struct PopulationSpec {
    pub cov: CovarianceSpec,
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub clinical: Option<ClinicalSpec>,
    pub beta_infinity: f64,
    /// Two-component equal-weight mean-shifted mixture toggle. When set, the
    /// informative block mean is shifted by +-`shift` per coordinate with
    /// equal probability; the calibration keeps `Var(gamma' g)` on target.
    pub mixture_shift: Option<f64>,
}

impl PopulationSpec {
    pub fn new(
        cov: CovarianceSpec,
        beta_infinity: f64,
        alpha: f64,
        clinical: Option<ClinicalSpec>,
        mixture: bool,
    ) -> Result<Self> {
        let shift = if mixture { 1.0 } else { 0.0 };
        let gamma = calibrate_gamma_with_shift(&cov, beta_infinity, shift)?;
        Ok(PopulationSpec {
            cov,
            gamma,
            alpha,
            clinical,
            beta_infinity,
            mixture_shift: mixture.then_some(1.0),
        })
    }
}

/// Draws `n` samples from the population. Deterministic given the seed.
pub fn generate(spec: &PopulationSpec, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let p = spec.cov.p;
    let k = spec.cov.n_informative;
    let chol = spec.cov.informative_cholesky()?;
    let mut rng = seeds::rng(seed, "simgen", 0);

    let mut features = Array2::zeros((n, p));
    let mut labels = Vec::with_capacity(n);
    let mut covariates = spec.clinical.map(|_| Array2::zeros((n, 1)));
    let mut u = vec![0.0; k];

    for i in 0..n {
        let shift = match spec.mixture_shift {
            Some(s) => {
                if rng.random::<bool>() {
                    s
                } else {
                    -s
                }
            }
            None => 0.0,
        };
        for uj in u.iter_mut() {
            *uj = rng.sample(StandardNormal);
        }
        for a in 0..k {
            let mut val = shift;
            for b in 0..=a {
                val += chol[a * k + b] * u[b];
            }
            features[(i, a)] = val;
        }
        for j in k..p {
            features[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
        let z = match (&spec.clinical, &mut covariates) {
            (Some(_), Some(zmat)) => {
                let level = f64::from(rng.random_range(-1..=1i32));
                zmat[(i, 0)] = level;
                level
            }
            _ => 0.0,
        };
        let score: f64 = spec
            .gamma
            .iter()
            .take(k)
            .enumerate()
            .map(|(j, g)| g * features[(i, j)])
            .sum();
        let eta = spec.alpha + spec.clinical.map_or(0.0, |c| c.delta * z) + score;
        labels.push(u8::from(rng.random::<f64>() < sigmoid(eta)));
    }
    LabeledDataset::new(labels, covariates, features, None, None)
}

/// Per-replicate generation under a fixed counter scheme, safe to run in
/// parallel across replicates.
pub fn generate_replicate(
    spec: &PopulationSpec,
    n: usize,
    master_seed: u64,
    replicate: u64,
) -> Result<LabeledDataset> {
    generate(spec, n, seeds::derive(master_seed, "replicate", replicate))
}
