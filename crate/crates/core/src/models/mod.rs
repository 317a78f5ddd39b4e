//! Forecaster families behind one fit/predict interface.

pub mod forest;
pub mod linear;
pub mod mlp;
pub mod standardize;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use forest::{rf_fit, select_features, FeatureImportance, ForestConfig, RandomForest};
pub use linear::{ols_fit, LinearModel};
pub use mlp::{mlp_fit, Activation, MlpConfig, MlpModel, Network, Optimizer};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelConfig {
    Ols,
    RandomForest(ForestConfig),
    Mlp(MlpConfig),
}

impl ModelConfig {
    pub fn family(&self) -> &'static str {
        match self {
            ModelConfig::Ols => "ols",
            ModelConfig::RandomForest(_) => "random_forest",
            ModelConfig::Mlp(_) => "mlp",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Ols => Ok(()),
            ModelConfig::RandomForest(c) => c.validate(),
            ModelConfig::Mlp(c) => c.validate(),
        }
    }

    /// Compact one-line description used in tables.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelConfig::Ols => write!(f, "ols"),
            ModelConfig::RandomForest(c) => write!(
                f,
                "rf(trees={} ff={} min={})",
                c.n_trees, c.feature_fraction, c.min_node_fraction
            ),
            ModelConfig::Mlp(c) => {
                let layers = match c.layer_sizes.as_slice() {
                    [first, rest @ ..] if !rest.is_empty() && rest.iter().all(|s| s == first) => {
                        format!("[{first}]*{}", c.layer_sizes.len())
                    }
                    other => format!("{other:?}").replace(' ', ""),
                };
                write!(
                    f,
                    "mlp({layers} {} {} ep={} bs={}{})",
                    c.activation,
                    c.optimizer,
                    c.epochs,
                    c.batch_size,
                    if c.batch_norm { " bn" } else { "" }
                )
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Learned {
    Ols(LinearModel),
    RandomForest(RandomForest),
    Mlp(MlpModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub train_rmse: f64,
    pub n_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub config: ModelConfig,
    pub feature_names: Vec<String>,
    pub meta: TrainingMeta,
    pub learned: Learned,
}

/// Fits any family; `names` must have one entry per column of `x`.
pub fn fit(config: &ModelConfig, x: &[Vec<f64>], y: &[f64], names: &[String], seed: u64) -> Result<TrainedModel> {
    config.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyInput("no training rows"));
    }
    if let Some(row) = x.iter().find(|r| r.len() != names.len()) {
        return Err(Error::DimensionMismatch {
            expected: names.len(),
            actual: row.len(),
        });
    }
    let (learned, epochs_run) = match config {
        ModelConfig::Ols => (Learned::Ols(ols_fit(x, y)?), 0),
        ModelConfig::RandomForest(c) => (Learned::RandomForest(rf_fit(x, y, c, seed)?), 0),
        ModelConfig::Mlp(c) => {
            let m = mlp_fit(x, y, c, seed)?;
            let epochs = m.epochs_run;
            (Learned::Mlp(m), epochs)
        }
    };
    let mut model = TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        config: config.clone(),
        feature_names: names.to_vec(),
        meta: TrainingMeta {
            seed,
            epochs_run,
            train_rmse: f64::NAN,
            n_rows: x.len(),
        },
        learned,
    };
    let fitted = model.predict(x)?;
    let mse = fitted.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64;
    model.meta.train_rmse = mse.sqrt();
    Ok(model)
}

impl TrainedModel {
    pub fn family(&self) -> &'static str {
        self.config.family()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        if let Some(row) = x.iter().find(|r| r.len() != self.n_features()) {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                actual: row.len(),
            });
        }
        Ok(match &self.learned {
            Learned::Ols(m) => x.iter().map(|r| m.predict_row(r)).collect(),
            Learned::RandomForest(m) => x.iter().map(|r| m.predict_row(r)).collect(),
            Learned::Mlp(m) => m.predict(x),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TrainedModel = serde_json::from_str(text)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io_util::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Normalized split-gain importances of a trained forest.
pub fn rf_importance(model: &TrainedModel) -> Result<FeatureImportance> {
    match &model.learned {
        Learned::RandomForest(f) => Ok(FeatureImportance::from_gains(&model.feature_names, &f.split_gain)),
        _ => Err(Error::WrongFamily {
            expected: "random_forest",
            actual: model.family(),
        }),
    }
}
