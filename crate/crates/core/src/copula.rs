//! The Gaussian copula model: joint density, conditional laws, conditional
//! sampling and the conditional-independence readout of the precision matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginals::{MarginalSet, ScoreMap};
use crate::numkernel::{mvn_sample, schur_conditional, Cholesky, IndexPartition, SymMatrix};

/// Allowed deviation of a correlation matrix diagonal from one.
pub const UNIT_DIAG_TOL: f64 = 1e-10;

/// Default tolerance for [`CopulaModel::precision_zeros`].
pub const PRECISION_ZERO_TOL: f64 = 1e-8;

/// A positive-definite matrix with unit diagonal, with its Cholesky factor
/// and precision cached.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SymMatrix", into = "SymMatrix")]
pub struct CorrelationMatrix {
    matrix: SymMatrix,
    chol: Cholesky,
    precision: SymMatrix,
}

impl CorrelationMatrix {
    pub fn new(matrix: SymMatrix) -> Result<Self> {
        for (j, d) in matrix.diag().into_iter().enumerate() {
            if (d - 1.0).abs() > UNIT_DIAG_TOL {
                return Err(Error::Numerical(format!(
                    "correlation matrix diagonal entry {j} is {d}, expected 1"
                )));
            }
        }
        let chol = matrix.cholesky()?;
        let precision = chol.inverse();
        Ok(Self {
            matrix,
            chol,
            precision,
        })
    }

    pub fn identity(p: usize) -> Self {
        Self::new(SymMatrix::identity(p)).expect("identity is a correlation matrix")
    }

    /// The 2x2 matrix with off-diagonal `rho`.
    pub fn bivariate(rho: f64) -> Result<Self> {
        Self::new(SymMatrix::from_rows(vec![vec![1.0, rho], vec![rho, 1.0]])?)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    /// `K = Sigma^{-1}`.
    pub fn precision(&self) -> &SymMatrix {
        &self.precision
    }

    pub fn log_det(&self) -> f64 {
        self.chol.log_det()
    }
}

impl PartialEq for CorrelationMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix
    }
}

impl TryFrom<SymMatrix> for CorrelationMatrix {
    type Error = Error;

    fn try_from(m: SymMatrix) -> Result<Self> {
        Self::new(m)
    }
}

impl From<CorrelationMatrix> for SymMatrix {
    fn from(c: CorrelationMatrix) -> Self {
        c.matrix
    }
}

/// Law of the missing coordinates' normal scores given the observed ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLaw {
    pub mu: Vec<f64>,
    pub sigma_prime: SymMatrix,
    pub part: IndexPartition,
}

/// Correlation matrix plus one marginal per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    sigma: CorrelationMatrix,
    marginals: MarginalSet,
}

impl CopulaModel {
    pub fn new(sigma: CorrelationMatrix, marginals: MarginalSet) -> Result<Self> {
        if sigma.dim() != marginals.len() {
            return Err(Error::Config(format!(
                "correlation dimension {} does not match {} marginals",
                sigma.dim(),
                marginals.len()
            )));
        }
        Ok(Self { sigma, marginals })
    }

    pub fn p(&self) -> usize {
        self.sigma.dim()
    }

    pub fn sigma(&self) -> &CorrelationMatrix {
        &self.sigma
    }

    pub fn marginals(&self) -> &MarginalSet {
        &self.marginals
    }

    /// Log of the joint density at a fully observed point.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let z = self.marginals.gaussianize(x);
        let quad = self.sigma.precision().bilinear(&z, &z) - z.iter().map(|v| v * v).sum::<f64>();
        let marginal: f64 = self
            .marginals
            .iter()
            .zip(x)
            .map(|(m, &v)| m.ln_pdf(v))
            .sum();
        -0.5 * self.sigma.log_det() - 0.5 * quad + marginal
    }

    /// Conditional law of the missing scores given `x_obs` (values on `part.obs()`).
    pub fn conditional_law(&self, part: &IndexPartition, x_obs: &[f64]) -> Result<ConditionalLaw> {
        if part.p() != self.p() {
            return Err(Error::Config(format!(
                "partition has dimension {}, model has {}",
                part.p(),
                self.p()
            )));
        }
        if x_obs.len() != part.obs().len() {
            return Err(Error::Config(format!(
                "expected {} observed values, got {}",
                part.obs().len(),
                x_obs.len()
            )));
        }
        let z_obs: Vec<f64> = part
            .obs()
            .iter()
            .zip(x_obs)
            .map(|(&j, &x)| self.marginals[j].gaussianize(x))
            .collect();
        let (mu, sigma_prime) = schur_conditional(self.sigma.matrix(), part, &z_obs)?;
        Ok(ConditionalLaw {
            mu,
            sigma_prime,
            part: part.clone(),
        })
    }

    /// `m` draws of the normal scores of the missing coordinates.
    pub fn sample_conditional_scores<R: Rng + ?Sized>(
        &self,
        law: &ConditionalLaw,
        m: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        mvn_sample(&law.mu, &law.sigma_prime, m, rng)
    }

    /// `m` draws of `X_mis | X_obs`, each ordered like `law.part.mis()`.
    pub fn sample_conditional<R: Rng + ?Sized>(
        &self,
        law: &ConditionalLaw,
        m: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        let mis = law.part.mis();
        let mut draws = self.sample_conditional_scores(law, m, rng)?;
        for d in &mut draws {
            for (v, &j) in d.iter_mut().zip(mis) {
                *v = self.marginals[j].from_normal_score(*v);
            }
        }
        Ok(draws)
    }

    /// Like [`Self::sample_conditional`] but maps scores through prebuilt tables.
    pub fn sample_conditional_mapped<R: Rng + ?Sized>(
        &self,
        law: &ConditionalLaw,
        maps: &[ScoreMap],
        m: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        let mis = law.part.mis();
        let mut draws = self.sample_conditional_scores(law, m, rng)?;
        for d in &mut draws {
            for (v, &j) in d.iter_mut().zip(mis) {
                *v = maps[j].map(*v);
            }
        }
        Ok(draws)
    }

    pub fn score_maps(&self) -> Vec<ScoreMap> {
        self.marginals.iter().map(ScoreMap::new).collect()
    }

    /// Pairs `(j, k)`, `j < k`, with `|K_jk| <= tol`: conditionally independent
    /// coordinates given all others.
    pub fn precision_zeros(&self, tol: f64) -> Vec<(usize, usize)> {
        let k = self.sigma.precision();
        let p = self.p();
        (0..p)
            .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
            .filter(|&(i, j)| k.get(i, j).abs() <= tol)
            .collect()
    }
}
