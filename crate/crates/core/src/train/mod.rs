//! Optimisation of the supervised flow objective, evaluation and
//! checkpointing.

mod adam;
mod checkpoint;
mod metrics;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use metrics::{EpochRecord, MetricsLog, METRICS_HEADER};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngCore;

use crate::classifier::{classify_latent, dxann_loss, dxann_loss_graph, LatentHeads};
use crate::data::{preprocess, Dataset};
use crate::error::{Error, Result};
use crate::flow::{ConditionerSpec, FlowConfig, FlowModel, DEFAULT_ALPHA};
use crate::numeric::{Graph, ParamStore, Tensor};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Log-scale clamp of every coupling block.
    pub alpha: f64,
    /// Class means sit at `∓separation·1`.
    pub separation: f64,
    pub learnable_means: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `f64::INFINITY` disables it.
    pub clip_norm: f64,
    /// Fresh uniform dequantisation noise on image pixels every epoch.
    pub dequantize: bool,
    pub num_blocks: usize,
    pub conditioner: ConditionerSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 200,
            batch_size: 50,
            seed: 0,
            alpha: DEFAULT_ALPHA,
            separation: 1.0,
            learnable_means: false,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 100.0,
            dequantize: true,
            num_blocks: 4,
            conditioner: ConditionerSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Flow architecture for data of `dim` features, with checkerboard
    /// masks when an image shape is known.
    pub fn flow_config(&self, dim: usize, spatial: Option<(usize, usize)>) -> FlowConfig {
        let base = match spatial {
            Some((h, w)) => FlowConfig::image(h, w),
            None => FlowConfig::new(dim),
        };
        FlowConfig {
            num_blocks: self.num_blocks,
            conditioner: self.conditioner.clone(),
            alpha: self.alpha,
            seed: self.seed,
            ..base
        }
    }

    fn validate(&self, train_len: usize) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        positive("alpha", self.alpha)?;
        positive("mean separation", self.separation)?;
        positive("eps", self.eps)?;
        positive("clip norm", self.clip_norm)?;
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.batch_size > train_len {
            return Err(Error::Config(format!(
                "batch size {} must be between 1 and the training set size {train_len}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Accuracy, mean loss and confusion counts `confusion[true][predicted]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub confusion: [[usize; 2]; 2],
}

const EVAL_CHUNK: usize = 256;

/// Scores every sample of `dataset` with the likelihood-argmax rule.
pub fn evaluate(model: &FlowModel, heads: &LatentHeads, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty dataset".into()));
    }
    if dataset.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "model expects {} features, dataset has {}",
            model.dim(),
            dataset.dim()
        )));
    }
    let mut confusion = [[0usize; 2]; 2];
    let mut zs = Vec::with_capacity(dataset.len());
    let mut log_dets = Vec::with_capacity(dataset.len());
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (z, ld) = model.forward_batch(&dataset.feature_matrix(chunk))?;
        for (row, &i) in chunk.iter().enumerate() {
            let zi = Tensor::vector(z.row(row).to_vec());
            let pred = classify_latent(&zi, heads)?;
            let truth = dataset.samples()[i].label;
            confusion[usize::from(truth)][usize::from(pred.label)] += 1;
            zs.push(zi);
        }
        log_dets.extend(ld);
    }
    let labels = dataset.labels();
    let mean_loss = dxann_loss(&zs, &labels, &log_dets, heads)?;
    let correct = confusion[0][0] + confusion[1][1];
    Ok(Evaluation {
        accuracy: correct as f64 / dataset.len() as f64,
        mean_loss,
        confusion,
    })
}

/// Builds a fresh identity-initialised model and symmetric heads for
/// `train_set`, then optimises them with [`train_model`].
pub fn train(
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
) -> Result<(FlowModel, LatentHeads, MetricsLog)> {
    let flow_cfg = config.flow_config(train_set.dim(), train_set.spatial());
    let mut model = FlowModel::new(&flow_cfg)?;
    let mut heads = LatentHeads::symmetric(train_set.dim(), config.separation)?
        .learnable(config.learnable_means);
    let log = train_model(&mut model, &mut heads, train_set, test_set, config)?;
    Ok((model, heads, log))
}

/// Minibatch Adam on the mean supervised loss. Each epoch reshuffles with a
/// seed-derived stream, keeps the last partial batch and appends one
/// record to the returned log. Single-threaded and deterministic.
pub fn train_model(
    model: &mut FlowModel,
    heads: &mut LatentHeads,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
) -> Result<MetricsLog> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let counts = train_set.class_counts();
    if counts.contains(&0) {
        return Err(Error::Config(format!(
            "training set needs both classes, got {} of class 0 and {} of class 1",
            counts[0], counts[1]
        )));
    }
    if train_set.dim() != model.dim() || heads.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "model has {} features, heads {}, training data {}",
            model.dim(),
            heads.dim(),
            train_set.dim()
        )));
    }
    config.validate(train_set.len())?;

    let adam = config.adam();
    let mut flow_state = OptimizerState::new(model.params());
    // The means live in their own single-tensor store so Adam can treat
    // them like any other parameter.
    let mut mean_params = ParamStore::new();
    let means_id = mean_params.add("heads.means", heads.as_matrix())?;
    let mut mean_state = OptimizerState::new(&mean_params);

    let start = Instant::now();
    let mut log = MetricsLog::new();
    let n = train_set.len();
    for epoch in 1..=config.epochs {
        let epoch_data = if config.dequantize && train_set.spatial().is_some() {
            let noise_seed = rng::derived(config.seed, 2 * epoch as u64).next_u64();
            preprocess(train_set, true, noise_seed)
        } else {
            train_set.clone()
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::derived(config.seed, 2 * epoch as u64 + 1));

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = epoch_data.feature_matrix(batch);
            let labels: Vec<u8> = batch.iter().map(|&i| epoch_data.samples()[i].label).collect();

            let (grads, mean_grad) = {
                let mut g = Graph::new();
                let xv = g.input(x);
                let trace = model.forward_graph(&mut g, xv)?;
                // An input leaf, so flow parameter ids stay unambiguous.
                let means = g.input(heads.as_matrix());
                let loss = dxann_loss_graph(&mut g, trace.z, trace.log_det, &labels, means)?;
                loss_sum += g.value(loss).item()? * batch.len() as f64;
                let grads = g.backward(loss)?;
                let mean_grad = grads.wrt(means).cloned();
                (grads, mean_grad)
            };
            model.params_mut().accumulate(&grads)?;
            if heads.is_learnable() {
                if let Some(gm) = mean_grad {
                    mean_params.get_mut(means_id).grad = gm;
                }
            }

            clip_jointly(model.params_mut(), &mut mean_params, config.clip_norm);
            adam_step(model.params_mut(), &mut flow_state, &adam)?;
            model.params_mut().zero_grads();
            if heads.is_learnable() {
                adam_step(&mut mean_params, &mut mean_state, &adam)?;
                mean_params.zero_grads();
                heads.set_from_matrix(mean_params.value(means_id))?;
            }
        }

        let train_acc = evaluate(model, heads, train_set)?.accuracy;
        let test_acc = if test_set.is_empty() {
            f64::NAN
        } else {
            evaluate(model, heads, test_set)?.accuracy
        };
        log.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc,
            test_acc,
            seconds: start.elapsed().as_secs_f64(),
        })?;
    }
    Ok(log)
}

/// Clips the flow and mean gradients by their combined norm.
fn clip_jointly(flow: &mut ParamStore, means: &mut ParamStore, max_norm: f64) {
    let a = flow.grad_norm();
    let b = means.grad_norm();
    let norm = (a * a + b * b).sqrt();
    if norm > max_norm && norm.is_finite() {
        let target = |part: f64| part * max_norm / norm;
        flow.clip_grad_norm(target(a));
        means.clip_grad_norm(target(b));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_two_moons, Sample, SplitTag};

    fn clustered(n: usize, flip: bool) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let centre = if label == 0 { -1.0 } else { 1.0 };
                let jitter = (i as f64 * 0.37).sin() * 0.2;
                Sample {
                    id: format!("c{i}"),
                    features: Tensor::vector(vec![centre + jitter, centre - jitter]),
                    label: if flip { 1 - label } else { label },
                    truth_mask: None,
                }
            })
            .collect();
        Dataset::new(samples, 2, None, SplitTag::Full).unwrap()
    }

    #[test]
    fn evaluation_on_separable_clusters() {
        let model = FlowModel::new(&FlowConfig::new(2)).unwrap();
        let heads = LatentHeads::symmetric(2, 1.0).unwrap();
        let e = evaluate(&model, &heads, &clustered(20, false)).unwrap();
        assert_eq!(e.accuracy, 1.0);
        assert_eq!(e.confusion, [[10, 0], [0, 10]]);
        let e = evaluate(&model, &heads, &clustered(20, true)).unwrap();
        assert_eq!(e.accuracy, 0.0);
        let total: usize = e.confusion.iter().flatten().sum();
        assert_eq!(total, 20);
        assert_eq!(
            (e.confusion[0][0] + e.confusion[1][1]) as f64 / total as f64,
            e.accuracy
        );
    }

    #[test]
    fn evaluate_rejects_empty_and_mismatched() {
        let model = FlowModel::new(&FlowConfig::new(2)).unwrap();
        let heads = LatentHeads::symmetric(2, 1.0).unwrap();
        let empty = Dataset::new(vec![], 2, None, SplitTag::Full).unwrap();
        assert!(matches!(evaluate(&model, &heads, &empty), Err(Error::Contract(_))));
        let model3 = FlowModel::new(&FlowConfig::new(3)).unwrap();
        assert!(evaluate(&model3, &heads, &clustered(4, false)).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_initial_parameters() {
        let data = gen_two_moons(60, 0.1, 2).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 2,
            batch_size: 16,
            ..Default::default()
        };
        let (model, _, log) = train(&data, &data, &cfg).unwrap();
        let fresh = FlowModel::new(&cfg.flow_config(2, None)).unwrap();
        let same = model
            .params()
            .iter()
            .zip(fresh.params().iter())
            .all(|(a, b)| a.value == b.value);
        assert!(same);
        assert_eq!(log.records().len(), 2);
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let data = gen_two_moons(120, 0.1, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 32,
            seed: 9,
            conditioner: ConditionerSpec::Mlp { hidden: vec![16, 16] },
            ..Default::default()
        };
        let (m1, _, log1) = train(&data, &data, &cfg).unwrap();
        let (m2, _, log2) = train(&data, &data, &cfg).unwrap();
        assert_eq!(m1.params(), m2.params());
        assert_eq!(log1.to_csv(false), log2.to_csv(false));
        let first = log1.records()[0].train_loss;
        let last = log1.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn single_class_rejected() {
        let samples: Vec<Sample> = clustered(10, false)
            .samples()
            .iter()
            .filter(|s| s.label == 1)
            .cloned()
            .collect();
        let one = Dataset::new(samples, 2, None, SplitTag::Full).unwrap();
        let cfg = TrainConfig {
            batch_size: 2,
            ..Default::default()
        };
        assert!(matches!(train(&one, &one, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn batch_larger_than_data_rejected() {
        let data = clustered(10, false);
        let cfg = TrainConfig {
            batch_size: 11,
            ..Default::default()
        };
        assert!(matches!(train(&data, &data, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn learnable_means_move() {
        let data = gen_two_moons(40, 0.1, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 10,
            learnable_means: true,
            conditioner: ConditionerSpec::Mlp { hidden: vec![8] },
            ..Default::default()
        };
        let (_, heads, _) = train(&data, &data, &cfg).unwrap();
        assert!(heads.is_learnable());
        assert_ne!(heads.mean(1).data(), &[1.0, 1.0]);
    }
}
