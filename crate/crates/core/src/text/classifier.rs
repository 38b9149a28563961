//! Hashed-feature projection followed by a two-layer feed-forward head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::featurize::FeatureVector;
use crate::autodiff::{grad, GradSet, Graph, ParamSet, SparseRows, Tensor, Var};
use crate::error::{Error, Result};
use crate::objective::{Identified, Objective};
use crate::scalar::Scalar;

pub const ENCODER_WEIGHT: &str = "encoder.weight";
pub const ENCODER_BIAS: &str = "encoder.bias";
pub const HEAD0_WEIGHT: &str = "head.0.weight";
pub const HEAD0_BIAS: &str = "head.0.bias";
pub const HEAD1_WEIGHT: &str = "head.1.weight";
pub const HEAD1_BIAS: &str = "head.1.bias";

pub const NUM_CLASSES: usize = 2;

/// Architecture of the classifier: `F -> H (tanh) -> H (relu) -> 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextClassifier {
    pub input_dim: usize,
    pub hidden: usize,
}

/// Featurized text with its gold label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub features: FeatureVector,
    pub label: usize,
}

impl Identified for LabeledExample {
    fn id(&self) -> &str {
        &self.id
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    /// Maximum softmax probability, in `[0.5, 1]`.
    pub confidence: f64,
}

impl TextClassifier {
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        Self { input_dim, hidden }
    }

    fn layer_shapes(&self) -> [(&'static str, Vec<usize>, usize); 6] {
        let (f, h) = (self.input_dim, self.hidden);
        [
            (ENCODER_WEIGHT, vec![f, h], f),
            (ENCODER_BIAS, vec![h], f),
            (HEAD0_WEIGHT, vec![h, h], h),
            (HEAD0_BIAS, vec![h], h),
            (HEAD1_WEIGHT, vec![h, NUM_CLASSES], h),
            (HEAD1_BIAS, vec![NUM_CLASSES], h),
        ]
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` per layer.
    pub fn init<S: Scalar>(&self, seed: u64) -> ParamSet<S> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape, fan_in) in self.layer_shapes() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let len = shape.iter().product();
            let data = (0..len)
                .map(|_| S::of(rng.gen_range(-bound..=bound)))
                .collect();
            params
                .insert(name, Tensor::new(shape, data).expect("consistent shape"))
                .expect("unique names");
        }
        params
    }

    /// All-zero parameters of the right structure.
    pub fn zeros<S: Scalar>(&self) -> ParamSet<S> {
        let mut params = ParamSet::new();
        for (name, shape, _) in self.layer_shapes() {
            params
                .insert(name, Tensor::zeros(&shape))
                .expect("unique names");
        }
        params
    }

    pub fn check_params<S: Scalar>(&self, params: &ParamSet<S>) -> Result<()> {
        params.check_compatible(&self.zeros::<S>())
    }

    pub fn sparse_batch<'f, S: Scalar>(
        &self,
        batch: impl IntoIterator<Item = &'f FeatureVector>,
    ) -> Result<SparseRows<S>> {
        let mut rows = Vec::new();
        for fv in batch {
            if fv.dim != self.input_dim {
                return Err(Error::shape(
                    ENCODER_WEIGHT,
                    format!(
                        "feature dimension {} does not match model input {}",
                        fv.dim, self.input_dim
                    ),
                ));
            }
            rows.push(fv.entries.iter().map(|&(i, v)| (i, S::of(v))).collect());
        }
        if rows.is_empty() {
            return Err(Error::shape("forward", "empty batch"));
        }
        SparseRows::new(self.input_dim, rows)
    }

    /// Records the forward pass on `graph` and returns the logits node.
    pub fn logits<'a, S: Scalar>(
        &self,
        graph: &mut Graph<'a, S>,
        input: &'a SparseRows<S>,
    ) -> Result<Var> {
        let w0 = graph.param(ENCODER_WEIGHT)?;
        let b0 = graph.param(ENCODER_BIAS)?;
        let w1 = graph.param(HEAD0_WEIGHT)?;
        let b1 = graph.param(HEAD0_BIAS)?;
        let w2 = graph.param(HEAD1_WEIGHT)?;
        let b2 = graph.param(HEAD1_BIAS)?;

        let projected = graph.sparse_matmul(input, w0)?;
        let projected = graph.add(projected, b0)?;
        let pooled = graph.tanh(projected);
        let hidden = graph.matmul(pooled, w1)?;
        let hidden = graph.add(hidden, b1)?;
        let hidden = graph.relu(hidden);
        let out = graph.matmul(hidden, w2)?;
        graph.add(out, b2)
    }

    /// Logits, shape `[batch, 2]`.
    pub fn forward<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        batch: &[FeatureVector],
    ) -> Result<Tensor<S>> {
        self.check_params(params)?;
        let input = self.sparse_batch(batch)?;
        let mut out = None;
        crate::autodiff::evaluate(
            |g| {
                let logits = self.logits(g, &input)?;
                out = Some(g.value(logits).clone());
                Ok(g.constant(Tensor::scalar(S::zero())))
            },
            params,
        )?;
        let logits = out.expect("forward ran");
        if !logits.is_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        Ok(logits)
    }

    pub fn predict<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        batch: &[FeatureVector],
    ) -> Result<Vec<Prediction>> {
        let logits = self.forward(params, batch)?;
        Ok(logits
            .data()
            .chunks(NUM_CLASSES)
            .map(|row| prediction_from_logits(row[0].as_f64(), row[1].as_f64()))
            .collect())
    }
}

/// Two-class softmax decision; equal logits resolve to label 0.
pub fn prediction_from_logits(l0: f64, l1: f64) -> Prediction {
    let label = usize::from(l1 > l0);
    let margin = (l1 - l0).abs();
    Prediction {
        label,
        confidence: 1.0 / (1.0 + (-margin).exp()),
    }
}

/// Numerically stable two-class softmax.
pub fn softmax2(l0: f64, l1: f64) -> [f64; 2] {
    let p1 = 1.0 / (1.0 + (l0 - l1).exp());
    [1.0 - p1, p1]
}

impl<S: Scalar> Objective<S> for TextClassifier {
    type Item = LabeledExample;

    fn loss_and_grad(
        &self,
        params: &ParamSet<S>,
        batch: &[LabeledExample],
    ) -> Result<(S, GradSet<S>)> {
        let input = self.sparse_batch(batch.iter().map(|e| &e.features))?;
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let (loss, grads) = grad(
            |g| {
                let logits = self.logits(g, &input)?;
                let per_row = g.softmax_cross_entropy(logits, &labels)?;
                Ok(g.mean(per_row))
            },
            params,
        )?;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite training loss".into()));
        }
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(dim: usize, entries: &[(usize, f64)]) -> FeatureVector {
        FeatureVector {
            dim,
            entries: entries.to_vec(),
        }
    }

    #[test]
    fn zero_network_is_indifferent() {
        let model = TextClassifier::new(16, 4);
        let params = model.zeros::<f64>();
        let batch = vec![fv(16, &[(1, 2.0), (5, -1.0)]), fv(16, &[])];
        let logits = model.forward(&params, &batch).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        for p in model.predict(&params, &batch).unwrap() {
            assert_eq!(p.label, 0);
            assert_eq!(p.confidence, 0.5);
        }
    }

    #[test]
    fn duplicated_rows_give_duplicated_logits() {
        let model = TextClassifier::new(32, 8);
        let params = model.init::<f64>(3);
        let x = fv(32, &[(0, 1.0), (7, 2.0), (31, -1.0)]);
        let logits = model.forward(&params, &[x.clone(), x]).unwrap();
        assert_eq!(&logits.data()[0..2], &logits.data()[2..4]);
    }

    #[test]
    fn closed_form_predictions() {
        let p = prediction_from_logits(2.0, 0.0);
        assert_eq!(p.label, 0);
        assert!((p.confidence - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((p.confidence - 0.8808).abs() < 1e-4);
        let tie = prediction_from_logits(0.0, 0.0);
        assert_eq!((tie.label, tie.confidence), (0, 0.5));
        assert_eq!(prediction_from_logits(-1.0, 3.0).label, 1);
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let model = TextClassifier::new(32, 8);
        let params = model.init::<f64>(0);
        let err = model.forward(&params, &[fv(16, &[(1, 1.0)])]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        assert!(model.forward(&params, &[]).is_err());
        let wrong = TextClassifier::new(16, 8).init::<f64>(0);
        assert!(model.forward(&wrong, &[fv(32, &[])]).is_err());
    }

    #[test]
    fn init_respects_fan_in_bounds_and_seed() {
        let model = TextClassifier::new(64, 4);
        let a = model.init::<f64>(11);
        assert_eq!(a, model.init::<f64>(11));
        assert_ne!(a, model.init::<f64>(12));
        let bound = 1.0 / 8.0;
        assert!(a
            .get(ENCODER_WEIGHT)
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() <= bound));
        let bound = 0.5;
        assert!(a
            .get(HEAD1_WEIGHT)
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() <= bound));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_rows_sum_to_one(l0 in -50.0f64..50.0, l1 in -50.0f64..50.0, shift in -100.0f64..100.0) {
                let p = softmax2(l0, l1);
                prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
                let a = prediction_from_logits(l0, l1);
                prop_assert!(a.confidence >= 0.5);
                let b = prediction_from_logits(l0 + shift, l1 + shift);
                prop_assert_eq!(a.label, b.label);
                prop_assert!((a.confidence - b.confidence).abs() < 1e-9);
            }
        }
    }
}
