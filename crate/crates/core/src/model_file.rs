//! Versioned JSON persistence for every fitted model kind.

pub(crate) mod nonfinite {
    //! Serializes `f64` with infinities as the strings `"inf"` / `"-inf"`.
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }

    pub mod vec {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        struct Wrap(#[serde(with = "super")] f64);

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let w: Vec<Wrap> = v.iter().map(|&x| Wrap(x)).collect();
            w.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            let w: Vec<Wrap> = Vec::deserialize(d)?;
            Ok(w.into_iter().map(|x| x.0).collect())
        }
    }
}


use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::baselines::{GmmModel, KdeModel};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::zibt::ZibtModel;
use crate::zicar::ZicarModel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum FittedModel {
    Zicar(ZicarModel),
    Zibt(ZibtModel),
    Gmm(GmmModel),
    Kde(KdeModel),
}

impl FittedModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            FittedModel::Zicar(_) => "zicar",
            FittedModel::Zibt(_) => "zibt",
            FittedModel::Gmm(_) => "gmm",
            FittedModel::Kde(_) => "kde",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FittedModel::Zicar(m) => m.dim(),
            FittedModel::Zibt(m) => m.dim(),
            FittedModel::Gmm(m) => m.dim(),
            FittedModel::Kde(m) => m.dim(),
        }
    }

    pub fn loglik_rows(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.n_cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: data.n_cols(),
            });
        }
        match self {
            FittedModel::Zicar(m) => m.loglik_rows(data),
            FittedModel::Zibt(m) => m.loglik_rows(data),
            FittedModel::Gmm(m) => m.loglik_rows(data),
            FittedModel::Kde(m) => m.loglik_rows(data),
        }
    }

    /// Negative log-likelihood of every row, the anomaly score.
    pub fn nll_rows(&self, data: &Dataset) -> Result<Vec<f64>> {
        Ok(self.loglik_rows(data)?.into_iter().map(|l| -l).collect())
    }

    fn validate(&self) -> Result<()> {
        match self {
            FittedModel::Zicar(m) => {
                ZicarModel::from_parts(m.marginals().to_vec(), m.mask().clone(), m.sigma().clone())?;
            }
            FittedModel::Zibt(m) => m.validate()?,
            FittedModel::Gmm(_) | FittedModel::Kde(_) => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub model: FittedModel,
}

impl ModelFile {
    pub fn new(model: FittedModel) -> Self {
        ModelFile {
            schema_version: SCHEMA_VERSION,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        match v.get("schema_version").and_then(serde_json::Value::as_u64) {
            Some(x) if x == SCHEMA_VERSION as u64 => {}
            Some(x) => {
                return Err(Error::ModelFile(format!(
                    "unsupported schema_version {x} (this build reads {SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::ModelFile("missing schema_version".into())),
        }
        let f: ModelFile = serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
        f.model.validate()?;
        Ok(f)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
