//! Monte Carlo Bayes decision: average the per-sample predictives and decide.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::leaf_models::{Loss, PredictiveDistribution};
use crate::meta_tree::{MetaTreeState, Observations, TreeModel};

/// Decision under `loss`: the most probable label (smallest on ties) or the
/// predictive mean.
pub fn decide(p: &PredictiveDistribution, loss: Loss) -> f64 {
    match (loss, p) {
        (Loss::ZeroOne, PredictiveDistribution::Finite(probs)) => {
            let mut best = 0;
            for (i, &v) in probs.iter().enumerate() {
                if v > probs[best] {
                    best = i;
                }
            }
            best as f64
        }
        _ => p.mean(),
    }
}

/// Recorded chain states sharing one model.
#[derive(Debug, Clone)]
pub struct PosteriorEnsemble {
    samples: Vec<Arc<MetaTreeState>>,
    model: TreeModel,
}

impl PosteriorEnsemble {
    pub fn new(samples: Vec<Arc<MetaTreeState>>, model: TreeModel) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        Ok(Self { samples, model })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Arc<MetaTreeState>] {
        &self.samples
    }

    pub fn model(&self) -> &TreeModel {
        &self.model
    }

    /// Runs of the same state collapsed into (weight, state); rejected
    /// proposals repeat the previous sample, so this is usually much shorter.
    fn weighted(&self) -> Vec<(f64, &MetaTreeState)> {
        let unit = 1.0 / self.samples.len() as f64;
        let mut out: Vec<(f64, &MetaTreeState)> = Vec::new();
        let mut prev: Option<&Arc<MetaTreeState>> = None;
        for s in &self.samples {
            match (prev, out.last_mut()) {
                (Some(p), Some(last)) if Arc::ptr_eq(p, s) => last.0 += unit,
                _ => out.push((unit, s)),
            }
            prev = Some(s);
        }
        out
    }

    /// Sample average of the per-state predictives at `x`.
    pub fn predictive(&self, x: &[f64], loss: Loss) -> Result<PredictiveDistribution> {
        self.check_loss(loss)?;
        let parts = self
            .weighted()
            .into_iter()
            .map(|(w, m)| m.predictive(x, &self.model).map(|p| (w, p)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictiveDistribution::mix(parts))
    }

    pub fn predict(&self, x: &[f64], loss: Loss) -> Result<f64> {
        match loss {
            Loss::ZeroOne => Ok(decide(&self.predictive(x, loss)?, loss)),
            Loss::Squared => self
                .weighted()
                .into_iter()
                .map(|(w, m)| m.predictive(x, &self.model).map(|p| w * p.mean()))
                .sum(),
        }
    }

    fn check_loss(&self, loss: Loss) -> Result<()> {
        if loss == Loss::ZeroOne && self.model.leaf.n_classes().is_none() {
            return Err(Error::Unsupported(format!(
                "0-1 loss needs a finite label set; {} is not finite",
                self.model.leaf.spec().family_name()
            )));
        }
        Ok(())
    }

    /// Predictions and the test error (misclassification rate or MSE).
    pub fn evaluate(&self, test: &Observations, loss: Loss) -> Result<Evaluation> {
        if test.is_empty() {
            return Err(Error::InvalidConfig("test set is empty".into()));
        }
        self.check_loss(loss)?;
        let records = (0..test.len())
            .into_par_iter()
            .map(|i| {
                let (x, y) = (test.x(i), test.y(i));
                let (prediction, probabilities) = match loss {
                    Loss::ZeroOne => {
                        let p = self.predictive(x, loss)?;
                        (decide(&p, loss), p.probabilities().map(<[f64]>::to_vec))
                    }
                    Loss::Squared => (self.predict(x, loss)?, None),
                };
                Ok(PointRecord {
                    index: i,
                    y,
                    prediction,
                    probabilities,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let preds: Vec<f64> = records.iter().map(|r| r.prediction).collect();
        let error = match loss {
            Loss::ZeroOne => error_rate(&preds, test.ys()),
            Loss::Squared => mean_squared_error(&preds, test.ys()),
        };
        Ok(Evaluation { loss, error, records })
    }
}

/// One test point's decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRecord {
    pub index: usize,
    pub y: f64,
    pub prediction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: Loss,
    /// Misclassification rate under 0-1 loss, mean squared error otherwise.
    pub error: f64,
    pub records: Vec<PointRecord>,
}

pub fn error_rate(pred: &[f64], y: &[f64]) -> f64 {
    let wrong = pred.iter().zip(y).filter(|(p, y)| p != y).count();
    wrong as f64 / y.len() as f64
}

pub fn mean_squared_error(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / y.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leaf_models::{LeafModel, LeafModelSpec};
    use crate::subspace_router::{FeatureAssignment, FeatureSpaceConfig};
    use crate::tree_topology::{NodeId, TreeShapeConfig};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn model(q: usize, g: f64) -> TreeModel {
        TreeModel::new(
            TreeShapeConfig::uniform(2, g).unwrap(),
            FeatureSpaceConfig::binary(q).unwrap(),
            LeafModel::new(LeafModelSpec::BernoulliBeta { alpha: 0.5, beta: 0.5 }, 0).unwrap(),
        )
    }

    fn data() -> Observations {
        let rows = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
        ];
        Observations::from_rows(&rows, &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap()
    }

    fn states(m: &TreeModel) -> Vec<Arc<MetaTreeState>> {
        (0..8)
            .map(|i| Arc::new(MetaTreeState::build(&data(), FeatureAssignment::from_index(2, 2, i), m).unwrap()))
            .collect()
    }

    #[test]
    fn argmax_and_tie_break() {
        assert_eq!(decide(&PredictiveDistribution::Finite(vec![0.3, 0.7]), Loss::ZeroOne), 1.0);
        assert_eq!(decide(&PredictiveDistribution::Finite(vec![0.5, 0.5]), Loss::ZeroOne), 0.0);
        assert_eq!(decide(&PredictiveDistribution::Finite(vec![0.2, 0.4, 0.4]), Loss::ZeroOne), 1.0);
        assert!((decide(&PredictiveDistribution::Finite(vec![0.3, 0.7]), Loss::Squared) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn empty_ensemble_is_an_error() {
        assert!(matches!(
            PosteriorEnsemble::new(Vec::new(), model(2, 0.5)),
            Err(Error::EmptyEnsemble)
        ));
    }

    #[test]
    fn root_leaf_reduces_to_leaf_model() {
        let shape = TreeShapeConfig::from_fn(2, |s| if s.is_root() { 0.0 } else { 0.5 }).unwrap();
        let m = TreeModel::new(shape, FeatureSpaceConfig::binary(2).unwrap(), model(2, 0.5).leaf);
        let st = MetaTreeState::build(&data(), FeatureAssignment::from_index(2, 2, 3), &m).unwrap();
        let stats = st.node(NodeId::ROOT).unwrap().stats.clone();
        let ens = PosteriorEnsemble::new(vec![Arc::new(st)], m.clone()).unwrap();
        let leaf = m.leaf.predictive_summary(&stats, None, Loss::ZeroOne).unwrap();
        let p = ens.predictive(&[0.0, 0.0], Loss::ZeroOne).unwrap();
        assert!((p.probabilities().unwrap()[1] - leaf.probabilities().unwrap()[1]).abs() < 1e-14);
        assert_eq!(ens.predict(&[0.0, 0.0], Loss::ZeroOne).unwrap(), decide(&leaf, Loss::ZeroOne));
    }

    #[test]
    fn repeated_samples_weigh_like_copies() {
        let m = model(2, 0.5);
        let s = states(&m);
        let runs = vec![s[1].clone(), s[1].clone(), s[1].clone(), s[6].clone()];
        let copies = vec![
            s[1].clone(),
            Arc::new((*s[1]).clone()),
            Arc::new((*s[1]).clone()),
            s[6].clone(),
        ];
        let a = PosteriorEnsemble::new(runs, m.clone()).unwrap();
        let b = PosteriorEnsemble::new(copies, m).unwrap();
        for x in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] {
            let pa = a.predictive(&x, Loss::ZeroOne).unwrap();
            let pb = b.predictive(&x, Loss::ZeroOne).unwrap();
            assert!((pa.probabilities().unwrap()[0] - pb.probabilities().unwrap()[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn error_metrics() {
        assert_eq!(error_rate(&[0.0, 1.0, 1.0], &[0.0, 1.0, 1.0]), 0.0);
        assert_eq!(error_rate(&[0.0; 4], &[0.0, 1.0, 0.0, 1.0]), 0.5);
        assert!((mean_squared_error(&[1.0, 2.0], &[0.0, 4.0]) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn evaluate_reports_points() {
        let m = model(2, 0.5);
        let ens = PosteriorEnsemble::new(states(&m), m).unwrap();
        let ev = ens.evaluate(&data(), Loss::ZeroOne).unwrap();
        assert_eq!(ev.records.len(), 6);
        assert!((0.0..=1.0).contains(&ev.error));
        for r in &ev.records {
            let p = r.probabilities.as_ref().unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        assert!(ens.evaluate(&Observations::new(2), Loss::ZeroOne).is_err());
        let sq = ens.evaluate(&data(), Loss::Squared).unwrap();
        assert!(sq.records.iter().all(|r| r.probabilities.is_none()));
    }

    #[test]
    fn count_labels_refuse_zero_one() {
        let m = TreeModel::new(
            TreeShapeConfig::uniform(1, 0.5).unwrap(),
            FeatureSpaceConfig::binary(1).unwrap(),
            LeafModel::new(LeafModelSpec::PoissonGamma { shape: 2.0, rate: 1.0 }, 0).unwrap(),
        );
        let d = Observations::from_rows(&[vec![0.0], vec![1.0]], &[3.0, 4.0]).unwrap();
        let st = MetaTreeState::build(&d, FeatureAssignment::from_index(1, 1, 0), &m).unwrap();
        let ens = PosteriorEnsemble::new(vec![Arc::new(st)], m).unwrap();
        assert!(ens.predict(&[0.0], Loss::ZeroOne).is_err());
        let v = ens.predict(&[0.0], Loss::Squared).unwrap();
        assert!(v > 0.0 && v.fract() != 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn averaged_vector_normalized_and_order_free(picks in proptest::collection::vec(0usize..8, 1..30),
                                                     x0 in 0u8..2, x1 in 0u8..2) {
            let m = model(2, 0.6);
            let s = states(&m);
            let chosen: Vec<_> = picks.iter().map(|&i| s[i].clone()).collect();
            let mut reversed = chosen.clone();
            reversed.reverse();
            let x = [f64::from(x0), f64::from(x1)];
            let a = PosteriorEnsemble::new(chosen, m.clone()).unwrap().predictive(&x, Loss::ZeroOne).unwrap();
            let b = PosteriorEnsemble::new(reversed, m).unwrap().predictive(&x, Loss::ZeroOne).unwrap();
            let (a, b) = (a.probabilities().unwrap(), b.probabilities().unwrap());
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!((a[0] - b[0]).abs() < 1e-12);
        }
    }
}
