//! Versioned JSON persistence of fitted models.

use serde::{Deserialize, Serialize};

use crate::copula::{CopulaModel, CorrelationMatrix};
use crate::error::{Error, Result};
use crate::marginals::{MarginalSet, MixtureMarginal};
use crate::numkernel::SymMatrix;

pub const FORMAT_VERSION: &str = "copula_em_model_v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalDocument {
    pub g: usize,
    pub centers: Vec<f64>,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMetadata {
    pub iterations: usize,
    pub final_eps: f64,
    pub converged: bool,
    pub seed: u64,
    pub n_rows: usize,
}

/// On-disk form of a [`CopulaModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format: String,
    pub p: usize,
    pub columns: Vec<String>,
    /// Full correlation matrix, row-major.
    pub sigma: Vec<f64>,
    pub marginals: Vec<MarginalDocument>,
    pub fit: FitMetadata,
}

impl ModelDocument {
    pub fn from_model(model: &CopulaModel, columns: Vec<String>, fit: FitMetadata) -> Self {
        Self {
            format: FORMAT_VERSION.to_string(),
            p: model.p(),
            columns,
            sigma: model.sigma().matrix().row_major().to_vec(),
            marginals: model
                .marginals()
                .iter()
                .map(|m| MarginalDocument {
                    g: m.g(),
                    centers: m.centers().to_vec(),
                    bandwidth: m.bandwidth(),
                })
                .collect(),
            fit,
        }
    }

    pub fn to_model(&self) -> Result<CopulaModel> {
        if self.format != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model format {:?}, expected {FORMAT_VERSION:?}",
                self.format
            )));
        }
        if self.p == 0 || self.columns.len() != self.p || self.marginals.len() != self.p {
            return Err(Error::Parse(format!(
                "model declares p = {} but has {} columns and {} marginals",
                self.p,
                self.columns.len(),
                self.marginals.len()
            )));
        }
        let sigma = SymMatrix::from_row_major(self.p, &self.sigma)
            .map_err(|e| Error::Parse(format!("sigma: {e}")))?;
        let sigma =
            CorrelationMatrix::new(sigma).map_err(|e| Error::Parse(format!("sigma: {e}")))?;
        let marginals = self
            .marginals
            .iter()
            .enumerate()
            .map(|(j, m)| {
                if m.centers.len() != m.g {
                    return Err(Error::Parse(format!(
                        "marginal {j}: g = {} but {} centers",
                        m.g,
                        m.centers.len()
                    )));
                }
                MixtureMarginal::new(m.centers.clone(), m.bandwidth)
                    .map_err(|e| Error::Parse(format!("marginal {j}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        CopulaModel::new(sigma, MarginalSet::new(marginals)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse(format!("model file: {e}")))
    }
}
