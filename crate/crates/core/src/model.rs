//! The shared prediction contract and a serializable wrapper over every
//! trained model kind.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kan::KanNetwork;
use crate::mlp::MlpModel;
use crate::trees::{BoostedEnsemble, DecisionTree, Forest};

/// Version stamped into every serialized model document.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained regressor in normalized feature space.
pub trait Predictor: Sync {
    fn n_inputs(&self) -> usize;

    /// Predicts one row. `x.len()` must equal `n_inputs()`.
    fn predict_unchecked(&self, x: &[f64]) -> f64;

    fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch { expected: self.n_inputs(), got: x.len() });
        }
        Ok(self.predict_unchecked(x))
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn n_inputs(&self) -> usize {
        (**self).n_inputs()
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        (**self).predict_unchecked(x)
    }
}

/// `intercept + Σ coef_i x_i`. A reference model with closed-form
/// attributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl Predictor for LinearModel {
    fn n_inputs(&self) -> usize {
        self.coef.len()
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorModel {
    Tree(DecisionTree),
    Forest(Forest),
    Boosted(BoostedEnsemble),
    Mlp(MlpModel),
    Kan(KanNetwork),
}

impl RegressorModel {
    pub fn kind(&self) -> &'static str {
        match self {
            RegressorModel::Tree(_) => "tree",
            RegressorModel::Forest(_) => "forest",
            RegressorModel::Boosted(_) => "boosted",
            RegressorModel::Mlp(_) => "mlp",
            RegressorModel::Kan(_) => "kan",
        }
    }

    fn inner(&self) -> &dyn Predictor {
        match self {
            RegressorModel::Tree(m) => m,
            RegressorModel::Forest(m) => m,
            RegressorModel::Boosted(m) => m,
            RegressorModel::Mlp(m) => m,
            RegressorModel::Kan(m) => m,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument { format_version: MODEL_FORMAT_VERSION, model: self.clone() };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "model format version {} (expected {MODEL_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        Ok(doc.model)
    }
}

impl Predictor for RegressorModel {
    fn n_inputs(&self) -> usize {
        self.inner().n_inputs()
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        self.inner().predict_unchecked(x)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    model: RegressorModel,
}

/// Serde adapter writing `f64` as a decimal string with shortest round-trip
/// digits.
pub(crate) mod decimal_string {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let text = String::deserialize(d)?;
        text.parse::<f64>().map_err(D::Error::custom)
    }
}
