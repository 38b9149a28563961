//! Text featurization and the classifier used as the meta-learned model.

mod classifier;
mod featurize;

pub use classifier::{
    prediction_from_logits, softmax2, LabeledExample, Prediction, TextClassifier, ENCODER_BIAS,
    ENCODER_WEIGHT, HEAD0_BIAS, HEAD0_WEIGHT, HEAD1_BIAS, HEAD1_WEIGHT, NUM_CLASSES,
};
pub use featurize::{bucket, featurize, hash_term, tokenize, FeatureVector, FeaturizerConfig};
