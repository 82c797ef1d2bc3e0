//! TOML run configuration and model construction.

use std::path::{Path, PathBuf};

use ghmm::inference::EmissionFamily;
use ghmm::models::{
    discrete_hmm, garch11, trbm_to_hmm, DiscreteHmmSpec, Emission, FiniteHmm, Garch11, Garch11Spec, InitialLaw,
    LssmModel, MeanSource, Sigma0, Transition, TrbmSpec,
};
use ghmm::GhmmError;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    pub data: Option<DataConfig>,
    pub aic: Option<AicConfig>,
}

type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Three uniform states, `P(Y=1|x) = (1, 0.5+δ, 0)`.
    ThreeState {
        #[serde(default)]
        delta: f64,
    },
    /// Fixed transitions, `P(Y=1|x) = base_x + slope_x δ`, symbols 1 and 2.
    Bernoulli {
        transition: Matrix,
        base: Vec<f64>,
        slope: Vec<f64>,
        #[serde(default)]
        delta: f64,
        initial: Option<Vec<f64>>,
    },
    /// Softmax-parametrized transition and emission matrices, symbols `0..m`.
    Categorical {
        transition: Matrix,
        emission: Matrix,
        initial: Option<Vec<f64>>,
    },
    /// Fixed transitions, `N(mean_x, sd²)` emissions with the means as parameters.
    GaussianHmm {
        transition: Matrix,
        means: Vec<f64>,
        sd: f64,
        initial: Option<Vec<f64>>,
    },
    Garch11 {
        delta: f64,
        alpha: f64,
        beta: f64,
        /// Initial variance; the stationary mean when absent.
        sigma0: Option<f64>,
    },
    Varma {
        sigma: Matrix,
        #[serde(default)]
        alphas: Vec<Matrix>,
        #[serde(default)]
        betas: Vec<Matrix>,
    },
    Trbm {
        w: Matrix,
        w_prime: Matrix,
        b_y: Vec<f64>,
        b_h: Vec<f64>,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub n: Option<usize>,
    pub burn_in: Option<usize>,
    pub stream: Option<u64>,
    /// Initial hidden state for finite models.
    pub x0: Option<usize>,
    pub replicates: Option<usize>,
    pub theta0: Option<Vec<f64>>,
    pub theta1: Option<Vec<f64>>,
    /// Values of `theta1[sweep_index]` for `kl-sweep`.
    pub grid: Option<Vec<f64>>,
    pub sweep_index: Option<usize>,
    pub eps_grid: Option<Vec<f64>>,
    pub direction: Option<Vec<f64>>,
    /// `hessian`, `score`, `steady-state` (varma) or `series` (garch11).
    pub method: Option<String>,
    pub crlb_n: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Observation CSV, relative to the config file.
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AicConfig {
    pub emission: EmissionFamily,
    /// Number of hidden states for order selection.
    pub states: Option<usize>,
    /// Largest order for order selection.
    pub k_max: Option<usize>,
    /// Chain order for state-count selection.
    pub order: Option<usize>,
    /// Inclusive `[min, max]` state counts for state-count selection.
    pub state_range: Option<[usize; 2]>,
    pub restarts: Option<usize>,
    pub max_iter: Option<usize>,
    pub grad_tol: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            let msg = e.message().to_string();
            CliError::Validation {
                path: field_path(&text, &e),
                message: msg,
            }
        })
    }

    pub fn model(&self) -> Result<&ModelConfig, CliError> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::validation("model", "missing [model] block"))
    }

    pub fn data_path(&self, config_path: &Path) -> Result<PathBuf, CliError> {
        let d = self
            .data
            .as_ref()
            .ok_or_else(|| CliError::validation("data.path", "missing [data] block"))?;
        Ok(match config_path.parent() {
            Some(dir) if d.path.is_relative() => dir.join(&d.path),
            _ => d.path.clone(),
        })
    }
}

/// Dotted key path of the table enclosing a parse error, best effort.
fn field_path(text: &str, e: &toml::de::Error) -> String {
    let Some(span) = e.span() else {
        return "config".into();
    };
    let before = &text[..span.start.min(text.len())];
    let table = before.lines().rev().find_map(|l| {
        l.trim()
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .map(str::to_string)
    });
    let line = text[span.start.min(text.len())..].lines().next().unwrap_or("");
    let key = line
        .split('=')
        .next()
        .map(str::trim)
        .filter(|k| !k.is_empty() && !k.starts_with('['));
    match (table, key) {
        (Some(t), Some(k)) => format!("{t}.{k}"),
        (Some(t), None) => t,
        (None, Some(k)) => k.to_string(),
        (None, None) => "config".into(),
    }
}

pub enum LoadedModel {
    Finite(FiniteHmm, Vec<f64>),
    Garch(Garch11, Garch11Spec, Vec<f64>),
    Lssm(LssmModel, Vec<f64>),
}

fn matrix(rows: &Matrix, field: &str) -> Result<DMatrix<f64>, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(CliError::validation(
            format!("model.{field}"),
            "rows must have equal length",
        ));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Attaches `model.` to validation errors raised while binding parameters.
pub fn model_error(e: GhmmError) -> CliError {
    let path = e.field().map(|f| format!("model.{f}"));
    CliError::from_ghmm(e, path.as_deref().unwrap_or("model"))
}

fn initial(v: &Option<Vec<f64>>) -> InitialLaw {
    v.clone().map_or(InitialLaw::Stationary, InitialLaw::Fixed)
}

impl ModelConfig {
    pub fn build(&self) -> Result<LoadedModel, CliError> {
        use ghmm::Ghmm;
        let finite = |m: FiniteHmm, theta: Vec<f64>| -> Result<LoadedModel, CliError> {
            m.bind(&theta, 0).map_err(model_error)?;
            Ok(LoadedModel::Finite(m, theta))
        };
        match self {
            ModelConfig::ThreeState { delta } => finite(FiniteHmm::three_state(), vec![*delta]),
            ModelConfig::Bernoulli {
                transition,
                base,
                slope,
                delta,
                initial: init,
            } => finite(
                FiniteHmm::affine_bernoulli(
                    matrix(transition, "transition")?,
                    base.clone(),
                    slope.clone(),
                    initial(init),
                )
                .map_err(model_error)?,
                vec![*delta],
            ),
            ModelConfig::Categorical {
                transition,
                emission,
                initial: init,
            } => {
                let (m, theta) = discrete_hmm(&DiscreteHmmSpec {
                    transition: matrix(transition, "transition")?,
                    emission: matrix(emission, "emission")?,
                    initial: init.clone(),
                })
                .map_err(model_error)?;
                finite(m, theta)
            }
            ModelConfig::GaussianHmm {
                transition,
                means,
                sd,
                initial: init,
            } => {
                let m = FiniteHmm::new(
                    means.len(),
                    means.len(),
                    Transition::Fixed(matrix(transition, "transition")?),
                    Emission::Gaussian {
                        means: (0..means.len()).map(MeanSource::Param).collect(),
                        sd: *sd,
                    },
                    initial(init),
                )
                .map_err(model_error)?;
                finite(m, means.clone())
            }
            ModelConfig::Garch11 {
                delta,
                alpha,
                beta,
                sigma0,
            } => {
                let spec = Garch11Spec {
                    delta: *delta,
                    alpha: *alpha,
                    beta: *beta,
                    sigma0: sigma0.map_or(Sigma0::StationaryMean, Sigma0::Fixed),
                };
                let (m, theta) = garch11(&spec).map_err(model_error)?;
                Ok(LoadedModel::Garch(m, spec, theta))
            }
            ModelConfig::Varma { sigma, alphas, betas } => {
                let sigma = matrix(sigma, "sigma")?;
                let a = alphas
                    .iter()
                    .map(|m| matrix(m, "alphas"))
                    .collect::<Result<Vec<_>, _>>()?;
                let b = betas
                    .iter()
                    .map(|m| matrix(m, "betas"))
                    .collect::<Result<Vec<_>, _>>()?;
                let model = LssmModel::varma(sigma.nrows(), a.len(), b.len(), &sigma).map_err(model_error)?;
                let theta = LssmModel::varma_theta(&a, &b);
                model.bind(&theta, 0).map_err(model_error)?;
                Ok(LoadedModel::Lssm(model, theta))
            }
            ModelConfig::Trbm { w, w_prime, b_y, b_h } => {
                let spec = TrbmSpec {
                    w: matrix(w, "w")?,
                    w_prime: matrix(w_prime, "w_prime")?,
                    b_y: nalgebra::DVector::from_vec(b_y.clone()),
                    b_h: nalgebra::DVector::from_vec(b_h.clone()),
                };
                let (m, theta) = trbm_to_hmm(&spec).map_err(model_error)?;
                finite(m, theta)
            }
        }
    }
}
