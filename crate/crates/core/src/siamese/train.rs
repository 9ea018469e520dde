use std::collections::HashMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{embedding_distance, loss_grad, LossKind};
use super::model::{EmbeddingModel, Params};
use super::ModelError;
use crate::dataset::Dataset;
use crate::perfspace::DistanceKind;
use crate::personas::Triplet;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd, adam)")),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub margin: f64,
    pub loss: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Shuffling seed; unset means 0, or a value derived from the run seed in a pipeline.
    pub seed: Option<u64>,
    pub distance: DistanceKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            loss: LossKind::Triplet,
            learning_rate: 5e-3,
            epochs: 60,
            batch_size: 32,
            optimizer: Optimizer::Adam,
            seed: None,
            distance: DistanceKind::Euclidean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |field, reason: &str| ModelError::InvalidConfig {
            field,
            reason: reason.to_string(),
        };
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(invalid("margin", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(invalid("learning_rate", "must be non-negative"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the triplets seen in each epoch, measured as they were visited.
    pub epoch_loss: Vec<f64>,
    /// Share of training triplets satisfied by the model at the end of each epoch.
    pub epoch_satisfaction: Vec<f64>,
    pub checksum: String,
}

fn resolve(triplets: &[Triplet], features: &Dataset) -> Result<Vec<[usize; 3]>, ModelError> {
    let idx = |id: &str| features.index_of(id).ok_or_else(|| ModelError::UnknownId(id.to_string()));
    triplets
        .iter()
        .map(|t| Ok([idx(&t.anchor)?, idx(&t.positive)?, idx(&t.negative)?]))
        .collect()
}

/// Share of triplets with `d(a, p) + margin <= d(a, n)` in the embedding space.
pub fn triplet_satisfaction(
    model: &EmbeddingModel,
    triplets: &[Triplet],
    features: &Dataset,
    margin: f64,
    distance: DistanceKind,
) -> Result<f64, ModelError> {
    if triplets.is_empty() {
        return Ok(0.0);
    }
    let resolved = resolve(triplets, features)?;
    satisfaction_of(model, &resolved, features, margin, distance)
}

fn satisfaction_of(
    model: &EmbeddingModel,
    resolved: &[[usize; 3]],
    features: &Dataset,
    margin: f64,
    distance: DistanceKind,
) -> Result<f64, ModelError> {
    let mut needed: Vec<usize> = resolved.iter().flatten().copied().collect();
    needed.sort_unstable();
    needed.dedup();
    let embedded: Vec<Vec<f64>> = needed
        .par_iter()
        .map(|&i| model.embed(&features.get(i).features))
        .collect::<Result<_, _>>()?;
    let at: HashMap<usize, &Vec<f64>> = needed.iter().copied().zip(&embedded).collect();
    let ok = resolved
        .iter()
        .filter(|[a, p, n]| {
            embedding_distance(at[a], at[p], distance) + margin <= embedding_distance(at[a], at[n], distance)
        })
        .count();
    Ok(ok as f64 / resolved.len() as f64)
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

/// Mini-batch training over seeded shuffles of `triplets`. All three
/// branches share the model's parameters; gradients are averaged per batch.
pub fn train(
    model: &EmbeddingModel,
    triplets: &[Triplet],
    features: &Dataset,
    config: &TrainConfig,
) -> Result<(EmbeddingModel, TrainReport), ModelError> {
    train_with_progress(model, triplets, features, config, |_, _, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean loss, satisfaction)`.
pub fn train_with_progress(
    model: &EmbeddingModel,
    triplets: &[Triplet],
    features: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, f64),
) -> Result<(EmbeddingModel, TrainReport), ModelError> {
    config.validate()?;
    if triplets.is_empty() {
        return Err(ModelError::EmptyTriplets);
    }
    if features.feature_dim() != model.input_dim() {
        return Err(ModelError::DimensionMismatch {
            expected: model.input_dim(),
            found: features.feature_dim(),
        });
    }
    let resolved = resolve(triplets, features)?;
    let mut model = model.clone();
    let mut rng = seed::rng(config.seed.unwrap_or_default());
    let mut order: Vec<usize> = (0..resolved.len()).collect();
    let mut adam = Adam {
        m: Params::zeros_like(&model),
        v: Params::zeros_like(&model),
        t: 0,
    };
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut epoch_satisfaction = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut grads = Params::zeros_like(&model);
            for &t in chunk {
                let [a, p, n] = resolved[t];
                let fa = model.forward(&features.get(a).features)?;
                let fp = model.forward(&features.get(p).features)?;
                let fn_ = model.forward(&features.get(n).features)?;
                let g = loss_grad(&fa.out, &fp.out, &fn_.out, config.margin, config.distance, config.loss);
                if !g.loss.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch, batch });
                }
                total += g.loss;
                if g.loss > 0.0 {
                    model.backward(&fa, &g.ga, &mut grads);
                    model.backward(&fp, &g.gp, &mut grads);
                    model.backward(&fn_, &g.gn, &mut grads);
                }
            }
            grads.scale(1.0 / chunk.len() as f64);
            step(&mut model, &grads, &mut adam, config);
        }
        let loss = total / resolved.len() as f64;
        let sat = satisfaction_of(&model, &resolved, features, config.margin, config.distance)?;
        on_epoch(epoch, loss, sat);
        epoch_loss.push(loss);
        epoch_satisfaction.push(sat);
    }

    let checksum = model.checksum();
    Ok((
        model,
        TrainReport {
            epoch_loss,
            epoch_satisfaction,
            checksum,
        },
    ))
}

fn step(model: &mut EmbeddingModel, grads: &Params, adam: &mut Adam, config: &TrainConfig) {
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => {
            for (w, g) in model.params_iter_mut().zip(grads.iter()) {
                *w -= lr * g;
            }
        }
        Optimizer::Adam => {
            adam.t += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(adam.t);
            let c2 = 1.0 - ADAM_BETA2.powi(adam.t);
            for (((w, g), m), v) in model
                .params_iter_mut()
                .zip(grads.iter())
                .zip(adam.m.iter_mut())
                .zip(adam.v.iter_mut())
            {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

const GRAD_CHECK_STEP: f64 = 1e-5;
const KINK_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this (times the loss, when the loss exceeds 1) are
/// compared in absolute rather than relative terms. The rounding noise of a
/// difference quotient grows with the loss value, so the floor does too.
const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest relative error between the analytic gradient of the loss on one
/// triplet and its central finite difference, over every parameter.
///
/// Fails when the loss is zero or the point lies within `1e-4` of a
/// non-differentiable point of the loss, where the difference quotient is
/// meaningless.
pub fn grad_check(
    model: &EmbeddingModel,
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    config: &TrainConfig,
) -> Result<f64, ModelError> {
    let loss_at = |m: &EmbeddingModel| -> Result<f64, ModelError> {
        let (a, p, n) = (m.embed(anchor)?, m.embed(positive)?, m.embed(negative)?);
        Ok(loss_grad(&a, &p, &n, config.margin, config.distance, config.loss).loss)
    };

    let fa = model.forward(anchor)?;
    let fp = model.forward(positive)?;
    let fn_ = model.forward(negative)?;
    let g = loss_grad(&fa.out, &fp.out, &fn_.out, config.margin, config.distance, config.loss);
    if g.loss <= 0.0 {
        return Err(ModelError::InactiveHinge);
    }
    let loss_kink = match config.loss {
        LossKind::Triplet => g.hinge.abs(),
        LossKind::Contrastive => {
            let dn = embedding_distance(&fa.out, &fn_.out, config.distance);
            (dn - config.margin).abs()
        }
    };
    let relu_kink = [&fa, &fp, &fn_]
        .iter()
        .map(|f| f.min_relu_margin(model.activation))
        .fold(f64::INFINITY, f64::min);
    // Euclidean distance is not differentiable where two embeddings coincide.
    let distance_kink = match config.distance {
        DistanceKind::Euclidean => embedding_distance(&fa.out, &fp.out, config.distance)
            .min(embedding_distance(&fa.out, &fn_.out, config.distance)),
        DistanceKind::Cosine => f64::INFINITY,
    };
    if loss_kink < KINK_TOLERANCE || relu_kink < KINK_TOLERANCE || distance_kink < KINK_TOLERANCE {
        return Err(ModelError::KinkAdjacent(KINK_TOLERANCE));
    }

    let mut analytic = Params::zeros_like(model);
    model.backward(&fa, &g.ga, &mut analytic);
    model.backward(&fp, &g.gp, &mut analytic);
    model.backward(&fn_, &g.gn, &mut analytic);
    let analytic: Vec<f64> = analytic.iter().copied().collect();

    let floor = GRAD_CHECK_FLOOR * g.loss.max(1.0);
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, a) in analytic.iter().enumerate() {
        let original = *probe.params_iter_mut().nth(k).expect("parameter index");
        *probe.params_iter_mut().nth(k).expect("parameter index") = original + GRAD_CHECK_STEP;
        let up = loss_at(&probe)?;
        *probe.params_iter_mut().nth(k).expect("parameter index") = original - GRAD_CHECK_STEP;
        let down = loss_at(&probe)?;
        *probe.params_iter_mut().nth(k).expect("parameter index") = original;
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let denom = a.abs().max(numeric.abs()).max(floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    debug_assert_eq!(probe.params(), model.params());
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Instance, TargetBounds};
    use crate::siamese::{init_model, Activation};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn grad_check_small_models() {
        let mut rng = seed::rng(42);
        let mut passed = 0;
        let mut s = 0;
        while passed < 20 {
            s += 1;
            let act = if s % 2 == 0 { Activation::Relu } else { Activation::Tanh };
            let model = init_model(&[4, 8, 3], act, s % 3 != 0, s).unwrap();
            let config = TrainConfig {
                margin: 0.5,
                distance: if s % 4 == 0 { DistanceKind::Cosine } else { DistanceKind::Euclidean },
                loss: if s % 5 == 0 { LossKind::Contrastive } else { LossKind::Triplet },
                ..TrainConfig::default()
            };
            let (a, p, n) = (random_vec(&mut rng, 4), random_vec(&mut rng, 4), random_vec(&mut rng, 4));
            match grad_check(&model, &a, &p, &n, &config) {
                Ok(err) => {
                    assert!(err < 1e-4, "seed {s}: {err}");
                    passed += 1;
                }
                Err(ModelError::InactiveHinge | ModelError::KinkAdjacent(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn zero_loss_triplet_is_rejected() {
        let mut model = init_model(&[2, 2], Activation::Relu, false, 0).unwrap();
        model.weights[0] = vec![1.0, 0.0, 0.0, 1.0];
        let config = TrainConfig {
            margin: 0.1,
            ..TrainConfig::default()
        };
        let r = grad_check(&model, &[0.0, 0.0], &[0.0, 0.1], &[5.0, 5.0], &config);
        assert!(matches!(r, Err(ModelError::InactiveHinge)));
    }

    fn line_dataset() -> (Dataset, Vec<Triplet>) {
        // Two groups on a line; positives come from the same group.
        let instances: Vec<Instance> = (0..20)
            .map(|i| Instance {
                id: format!("x{i:02}"),
                features: vec![i as f64 / 10.0, ((i * 7) % 5) as f64 / 5.0],
                target: 0.0,
            })
            .collect();
        let ds = Dataset::new(vec!["u".into(), "v".into()], instances, TargetBounds::new(0.0, 1.0).unwrap()).unwrap();
        let mut ts = Vec::new();
        for a in 0..20 {
            let group = a / 10;
            let p = group * 10 + (a + 3) % 10;
            let n = (1 - group) * 10 + (a * 3) % 10;
            ts.push(Triplet {
                anchor: format!("x{a:02}"),
                positive: format!("x{p:02}"),
                negative: format!("x{n:02}"),
                difficulty: crate::personas::Difficulty::SemiHard,
            });
        }
        (ds, ts)
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (ds, ts) = line_dataset();
        let model = init_model(&[2, 16, 4], Activation::Relu, true, 1).unwrap();
        let config = TrainConfig {
            epochs: 30,
            batch_size: 4,
            learning_rate: 1e-2,
            seed: Some(5),
            ..TrainConfig::default()
        };
        let (m1, r1) = train(&model, &ts, &ds, &config).unwrap();
        let (m2, r2) = train(&model, &ts, &ds, &config).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        assert_eq!(r1.epoch_loss.len(), 30);
        assert_eq!(r1.epoch_satisfaction.len(), 30);
        assert!(r1.epoch_loss.last().unwrap() < r1.epoch_loss.first().unwrap());
        assert_eq!(r1.checksum, m1.checksum());
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (ds, ts) = line_dataset();
        let model = init_model(&[2, 8, 3], Activation::Relu, true, 2).unwrap();
        for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
            let config = TrainConfig {
                epochs: 4,
                learning_rate: 0.0,
                optimizer,
                ..TrainConfig::default()
            };
            let (m, r) = train(&model, &ts, &ds, &config).unwrap();
            assert_eq!(m, model);
            assert!(r.epoch_loss.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
        }
    }

    #[test]
    fn unknown_ids_and_empty_input_fail() {
        let (ds, mut ts) = line_dataset();
        let model = init_model(&[2, 3], Activation::Relu, true, 0).unwrap();
        assert!(matches!(
            train(&model, &[], &ds, &TrainConfig::default()),
            Err(ModelError::EmptyTriplets)
        ));
        ts[0].negative = "nope".into();
        assert!(matches!(
            train(&model, &ts, &ds, &TrainConfig::default()),
            Err(ModelError::UnknownId(id)) if id == "nope"
        ));
    }

    #[test]
    fn exploding_learning_rate_reports_epoch() {
        let (ds, ts) = line_dataset();
        let model = init_model(&[2, 8, 3], Activation::Relu, false, 0).unwrap();
        let config = TrainConfig {
            learning_rate: 1e300,
            optimizer: Optimizer::Sgd,
            loss: LossKind::Contrastive,
            margin: 1e3,
            epochs: 50,
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&model, &ts, &ds, &config),
            Err(ModelError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn shared_weights_embed_identically() {
        let model = init_model(&[3, 6, 2], Activation::Tanh, true, 4).unwrap();
        let x = [0.3, -0.2, 1.0];
        assert_eq!(model.forward(&x).unwrap().out, model.embed(&x).unwrap());
    }
}
