//! Two class-conditional identity-covariance Gaussians in latent space,
//! the training objectives, likelihood-argmax prediction and per-feature
//! explanation scores.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::numeric::{Graph, Tensor, Var};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Means of the two latent class distributions `N(mu0, I)` and `N(mu1, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentHeads {
    mu0: Tensor,
    mu1: Tensor,
    separation: f64,
    learnable: bool,
}

impl LatentHeads {
    /// `mu0 = -c·1`, `mu1 = +c·1`, fixed during training.
    pub fn symmetric(dim: usize, separation: f64) -> Result<Self> {
        if !(separation > 0.0 && separation.is_finite()) {
            return Err(Error::Config(format!(
                "mean separation {separation} must be positive"
            )));
        }
        Self::new(
            Tensor::full(&[dim], -separation),
            Tensor::full(&[dim], separation),
            separation,
            false,
        )
    }

    pub fn new(mu0: Tensor, mu1: Tensor, separation: f64, learnable: bool) -> Result<Self> {
        if mu0.len() != mu1.len() {
            return Err(Error::Dimension(format!(
                "class means of lengths {} and {}",
                mu0.len(),
                mu1.len()
            )));
        }
        if mu0 == mu1 || mu0.is_empty() {
            return Err(Error::Config("class means must differ".into()));
        }
        Ok(Self {
            mu0: Tensor::vector(mu0.into_data()),
            mu1: Tensor::vector(mu1.into_data()),
            separation,
            learnable,
        })
    }

    pub fn learnable(mut self, on: bool) -> Self {
        self.learnable = on;
        self
    }

    pub fn is_learnable(&self) -> bool {
        self.learnable
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn mean(&self, label: u8) -> &Tensor {
        if label == 0 {
            &self.mu0
        } else {
            &self.mu1
        }
    }

    /// `[2, D]` matrix with `mu0` in row 0 and `mu1` in row 1.
    pub fn as_matrix(&self) -> Tensor {
        let mut data = self.mu0.data().to_vec();
        data.extend_from_slice(self.mu1.data());
        Tensor::new(&[2, self.dim()], data).expect("two rows of D")
    }

    /// Replaces both means from a `[2, D]` matrix.
    pub fn set_from_matrix(&mut self, m: &Tensor) -> Result<()> {
        if m.shape() != [2, self.dim()] {
            return Err(Error::Dimension(format!(
                "expected means of shape [2, {}], got {:?}",
                self.dim(),
                m.shape()
            )));
        }
        self.mu0 = Tensor::vector(m.row(0).to_vec());
        self.mu1 = Tensor::vector(m.row(1).to_vec());
        Ok(())
    }
}

fn same_len(z: &Tensor, mu: &Tensor) -> Result<()> {
    if z.len() != mu.len() {
        return Err(Error::Dimension(format!(
            "latent of length {} against mean of length {}",
            z.len(),
            mu.len()
        )));
    }
    Ok(())
}

fn check_label(label: u8) -> Result<()> {
    if label > 1 {
        return Err(Error::Contract(format!("label {label} is not 0 or 1")));
    }
    Ok(())
}

fn squared_distance(z: &Tensor, mu: &Tensor) -> f64 {
    z.data()
        .iter()
        .zip(mu.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// `log N(z; mu, I) = -(D/2)·ln(2π) - ½‖z - mu‖²`.
pub fn gaussian_logpdf(z: &Tensor, mu: &Tensor) -> Result<f64> {
    same_len(z, mu)?;
    Ok(logpdf_from_sq(squared_distance(z, mu), z.len()))
}

fn logpdf_from_sq(sq: f64, dim: usize) -> f64 {
    -0.5 * dim as f64 * (2.0 * PI).ln() - 0.5 * sq
}

/// Unsupervised flow objective for one sample: `-log q(z) - Σ log s`.
pub fn realnvp_loss(z: &Tensor, total_log_det: f64, mu: &Tensor) -> Result<f64> {
    Ok(-gaussian_logpdf(z, mu)? - total_log_det)
}

/// Supervised objective averaged over a batch: each sample is scored
/// against the Gaussian of its own label.
pub fn dxann_loss(
    zs: &[Tensor],
    labels: &[u8],
    log_dets: &[f64],
    heads: &LatentHeads,
) -> Result<f64> {
    if zs.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if zs.len() != labels.len() || zs.len() != log_dets.len() {
        return Err(Error::Contract(format!(
            "batch lengths differ: {} latents, {} labels, {} log-dets",
            zs.len(),
            labels.len(),
            log_dets.len()
        )));
    }
    let mut total = 0.0;
    for ((z, &y), &ld) in zs.iter().zip(labels).zip(log_dets) {
        check_label(y)?;
        total += realnvp_loss(z, ld, heads.mean(y))?;
    }
    Ok(total / zs.len() as f64)
}

/// Recorded version of [`dxann_loss`] for a latent batch `z[B, D]`,
/// log-determinants `log_det[B]` and class means `means[2, D]` (either a
/// constant or a parameter node).
pub fn dxann_loss_graph(
    g: &mut Graph<'_>,
    z: Var,
    log_det: Var,
    labels: &[u8],
    means: Var,
) -> Result<Var> {
    let shape = g.value(z).shape().to_vec();
    let (batch, dim) = (shape[0], shape[1]);
    if batch == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    if labels.len() != batch {
        return Err(Error::Contract(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let mut onehot = Tensor::zeros(&[batch, 2]);
    for (n, &y) in labels.iter().enumerate() {
        check_label(y)?;
        onehot.data_mut()[2 * n + usize::from(y)] = 1.0;
    }
    let onehot = g.input(onehot);
    let targets = g.matmul(onehot, means)?;
    let diff = g.sub(z, targets)?;
    let sq = g.square(diff);
    let per_sample = g.sum(sq, Some(&[1]))?;
    let half = g.mul_scalar(per_sample, 0.5);
    let nll = g.add_scalar(half, 0.5 * dim as f64 * LN_2PI);
    let per_sample = g.sub(nll, log_det)?;
    let total = g.sum(per_sample, None)?;
    Ok(g.mul_scalar(total, 1.0 / batch as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub logp0: f64,
    pub logp1: f64,
}

/// Nearest-mean decision on a latent vector; exact ties go to class 0.
/// With identity covariances this is the likelihood argmax.
pub fn classify_latent(z: &Tensor, heads: &LatentHeads) -> Result<Prediction> {
    same_len(z, heads.mean(0))?;
    let d0 = squared_distance(z, heads.mean(0));
    let d1 = squared_distance(z, heads.mean(1));
    Ok(Prediction {
        label: u8::from(d1 < d0),
        logp0: logpdf_from_sq(d0, z.len()),
        logp1: logpdf_from_sq(d1, z.len()),
    })
}

/// Embeds `x` and picks the class whose Gaussian gives the higher likelihood.
pub fn predict(x: &Tensor, model: &FlowModel, heads: &LatentHeads) -> Result<Prediction> {
    let (z, _) = model.forward(x)?;
    classify_latent(&z, heads)
}

/// Raw explanation scores `|z_m - mu_pred,m|` for every feature.
pub fn ecs_raw(z: &Tensor, heads: &LatentHeads, predicted: u8) -> Result<Tensor> {
    check_label(predicted)?;
    let mu = heads.mean(predicted);
    same_len(z, mu)?;
    z.zip_with(mu, |a, b| (a - b).abs())
}

/// Per-sample min-max scaling into `[0, 1]`; a constant input maps to zeros.
pub fn ecs_normalize(raw: &Tensor) -> Result<Tensor> {
    if let Some(bad) = raw.data().iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(Error::Contract(format!(
            "explanation scores must be finite and non-negative, found {bad}"
        )));
    }
    let (lo, hi) = raw
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if raw.is_empty() || hi == lo {
        return Ok(Tensor::zeros(raw.shape()));
    }
    let span = hi - lo;
    Ok(raw.map(|v| (v - lo) / span))
}

/// Explanation for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EcsMap {
    pub raw: Tensor,
    pub normalized: Tensor,
    pub spatial: Option<(usize, usize)>,
    pub prediction: Prediction,
}

impl EcsMap {
    pub fn label(&self) -> u8 {
        self.prediction.label
    }
}

/// Predicts `x` and scores every feature against the predicted class mean.
pub fn explain(x: &Tensor, model: &FlowModel, heads: &LatentHeads) -> Result<EcsMap> {
    let (z, _) = model.forward(x)?;
    let prediction = classify_latent(&z, heads)?;
    let raw = ecs_raw(&z, heads, prediction.label)?;
    let normalized = ecs_normalize(&raw)?;
    Ok(EcsMap {
        raw,
        normalized,
        spatial: model.spatial(),
        prediction,
    })
}
