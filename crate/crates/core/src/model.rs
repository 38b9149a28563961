//! Trained classifier bundles: parameters, architecture and provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{params_from_str, params_to_string, ParamSet};
use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::text::{
    featurize, FeatureVector, FeaturizerConfig, LabeledExample, Prediction, TextClassifier,
};

pub const PARAMS_FILE: &str = "model.params";
pub const META_FILE: &str = "model.json";

/// Featurizer plus classifier width; everything needed to rebuild the model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub featurizer: FeaturizerConfig,
    pub hidden: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            featurizer: FeaturizerConfig::default(),
            hidden: 64,
        }
    }
}

impl ModelSpec {
    pub fn classifier(&self) -> TextClassifier {
        TextClassifier::new(self.featurizer.dim, self.hidden)
    }

    pub fn validate(&self) -> Result<()> {
        self.featurizer.validate().map_err(Error::Config)?;
        if self.hidden == 0 {
            return Err(Error::Config("model.hidden must be >= 1".into()));
        }
        Ok(())
    }

    pub fn features(&self, text: &str) -> FeatureVector {
        featurize(text, &self.featurizer)
    }

    pub fn examples(&self, samples: &[Sample]) -> Vec<LabeledExample> {
        samples
            .iter()
            .map(|s| LabeledExample {
                id: s.id.clone(),
                features: self.features(&s.text),
                label: usize::from(s.label),
            })
            .collect()
    }
}

/// Where a set of parameters came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// `base`, `finetune`, `maml`, `hatemaml`, `xmaml` or `self-train`.
    pub variant: String,
    pub seed: u64,
    pub config_digest: String,
    pub data_digest: String,
    /// Parameter digest of the model training started from.
    pub parent: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub params: ParamSet<f64>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    spec: ModelSpec,
    provenance: Provenance,
    params_digest: String,
}

/// SHA-256 of a serializable value's JSON form.
pub fn digest_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    hex::encode(Sha256::digest(&bytes))
}

pub fn digest_params(params: &ParamSet<f64>) -> String {
    hex::encode(Sha256::digest(params_to_string(params).as_bytes()))
}

const PREDICT_CHUNK: usize = 512;

impl TrainedModel {
    pub fn classifier(&self) -> TextClassifier {
        self.spec.classifier()
    }

    pub fn params_digest(&self) -> String {
        digest_params(&self.params)
    }

    pub fn predict_features(&self, features: &[FeatureVector]) -> Result<Vec<Prediction>> {
        let clf = self.classifier();
        let mut out = Vec::with_capacity(features.len());
        for chunk in features.chunks(PREDICT_CHUNK) {
            out.extend(clf.predict(&self.params, chunk)?);
        }
        Ok(out)
    }

    pub fn predict_texts<'t>(
        &self,
        texts: impl IntoIterator<Item = &'t str>,
    ) -> Result<Vec<Prediction>> {
        let features: Vec<FeatureVector> =
            texts.into_iter().map(|t| self.spec.features(t)).collect();
        self.predict_features(&features)
    }

    /// Writes `model.params` and `model.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params_path = dir.join(PARAMS_FILE);
        std::fs::write(&params_path, params_to_string(&self.params))
            .map_err(|e| Error::io(&params_path, e))?;
        let meta = ModelMeta {
            spec: self.spec.clone(),
            provenance: self.provenance.clone(),
            params_digest: self.params_digest(),
        };
        let meta_path = dir.join(META_FILE);
        let mut body = serde_json::to_string_pretty(&meta)?;
        body.push('\n');
        std::fs::write(&meta_path, body).map_err(|e| Error::io(&meta_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta_text =
            std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ModelMeta = serde_json::from_str(&meta_text)?;
        let params_path = dir.join(PARAMS_FILE);
        let text = std::fs::read_to_string(&params_path).map_err(|e| Error::io(&params_path, e))?;
        let params = params_from_str(&text, &params_path)?;
        meta.spec.classifier().check_params(&params)?;
        let model = Self {
            spec: meta.spec,
            params,
            provenance: meta.provenance,
        };
        if model.params_digest() != meta.params_digest {
            return Err(Error::Numeric(format!(
                "{}: parameter digest does not match {}",
                params_path.display(),
                meta_path.display()
            )));
        }
        Ok(model)
    }
}
