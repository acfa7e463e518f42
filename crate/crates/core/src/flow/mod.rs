//! Affine coupling blocks and their composition into an invertible flow.
//!
//! A block with mask `m` keeps the masked coordinates and maps the others as
//!
//! ```text
//! (raw, t) = conditioner(m * x)
//! log s    = alpha * tanh(raw / alpha)          (restricted to 1 - m)
//! y        = x * exp(log s) + t * (1 - m)
//! log|det| = sum of log s over the unmasked coordinates
//! ```
//!
//! Consecutive blocks use complementary masks, so every coordinate is
//! transformed at least once in any flow with two or more blocks.

mod conditioner;
mod mask;

pub use conditioner::{Conditioner, ConditionerSpec};
pub use mask::{Mask, MaskKind};

use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamStore, Tensor, Var};
use crate::rng;

/// Default bound on the per-coordinate log-scale.
pub const DEFAULT_ALPHA: f64 = 3.0;

/// How block masks are laid out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskStyle {
    Alternating,
    /// Needs an image shape on the config.
    Checkerboard,
    HalfSplit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub dim: usize,
    pub num_blocks: usize,
    pub mask: MaskStyle,
    pub conditioner: ConditionerSpec,
    pub alpha: f64,
    pub spatial: Option<(usize, usize)>,
    pub seed: u64,
}

impl FlowConfig {
    /// Flat-vector flow: 4 blocks, alternating masks, MLP [64, 64], alpha 3.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            num_blocks: 4,
            mask: MaskStyle::Alternating,
            conditioner: ConditionerSpec::default(),
            alpha: DEFAULT_ALPHA,
            spatial: None,
            seed: 0,
        }
    }

    /// Image flow over `h x w` pixels with checkerboard masks.
    pub fn image(h: usize, w: usize) -> Self {
        Self {
            mask: MaskStyle::Checkerboard,
            spatial: Some((h, w)),
            ..Self::new(h * w)
        }
    }

    pub(crate) fn mask_kind(&self) -> Result<MaskKind> {
        Ok(match self.mask {
            MaskStyle::Alternating => MaskKind::Alternating,
            MaskStyle::HalfSplit => MaskKind::HalfSplit,
            MaskStyle::Checkerboard => {
                let (h, w) = self.spatial.ok_or_else(|| {
                    Error::Config("checkerboard masks need an image shape".into())
                })?;
                MaskKind::Checkerboard { h, w }
            }
        })
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("feature dimension {} < 2", self.dim)));
        }
        if self.num_blocks < 2 {
            return Err(Error::Config(format!(
                "need at least 2 coupling blocks, got {}",
                self.num_blocks
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("clamp alpha {} must be positive", self.alpha)));
        }
        if let Some((h, w)) = self.spatial {
            if h * w != self.dim {
                return Err(Error::Config(format!(
                    "image shape {h}x{w} does not match dimension {}",
                    self.dim
                )));
            }
        }
        Ok(())
    }
}

/// One affine coupling transformation.
#[derive(Clone, Debug)]
pub struct AffineCouplingBlock {
    mask: Mask,
    conditioner: Conditioner,
    alpha: f64,
}

struct BlockOutput {
    y: Var,
    log_det: Var,
    log_scale: Var,
}

impl AffineCouplingBlock {
    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn conditioner(&self) -> &Conditioner {
        &self.conditioner
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Log-scale and shift for a `[B, D]` input, both zeroed on masked
    /// coordinates. Only `m * x` is read, so forward and inverse see the
    /// same values.
    fn scale_shift<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        x: Var,
    ) -> Result<(Var, Var)> {
        let batch = g.value(x).shape()[0];
        let keep = g.input(self.mask.tiled(batch, false));
        let free = g.input(self.mask.tiled(batch, true));
        let xm = g.mul(x, keep)?;
        let (raw, shift) = self.conditioner.eval(g, store, xm)?;
        let squashed = g.mul_scalar(raw, 1.0 / self.alpha);
        let squashed = g.tanh(squashed);
        let log_scale = g.mul_scalar(squashed, self.alpha);
        let log_scale = g.mul(log_scale, free)?;
        let shift = g.mul(shift, free)?;
        Ok((log_scale, shift))
    }

    fn forward_graph<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        x: Var,
    ) -> Result<BlockOutput> {
        let (log_scale, shift) = self.scale_shift(g, store, x)?;
        let scale = g.exp(log_scale);
        let scaled = g.mul(x, scale)?;
        let y = g.add(scaled, shift)?;
        let log_det = g.sum(log_scale, Some(&[1]))?;
        Ok(BlockOutput {
            y,
            log_det,
            log_scale,
        })
    }

    fn inverse_graph<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        y: Var,
    ) -> Result<Var> {
        let (log_scale, shift) = self.scale_shift(g, store, y)?;
        let neg = g.neg(log_scale);
        let inv_scale = g.exp(neg);
        let centered = g.sub(y, shift)?;
        g.mul(centered, inv_scale)
    }
}

/// Handles into a recorded forward pass.
pub struct FlowTrace {
    /// Latent batch `[B, D]`.
    pub z: Var,
    /// Total log-determinant per sample, `[B]`.
    pub log_det: Var,
    /// Per-block log-determinants, each `[B]`.
    pub block_log_dets: Vec<Var>,
}

/// An ordered stack of coupling blocks over `D` features.
#[derive(Clone, Debug)]
pub struct FlowModel {
    config: FlowConfig,
    blocks: Vec<AffineCouplingBlock>,
    params: ParamStore,
}

impl FlowModel {
    /// Builds a flow that is exactly the identity: hidden layers are seeded
    /// random, every conditioner output layer is zero.
    pub fn new(config: &FlowConfig) -> Result<Self> {
        config.validate()?;
        let kind = config.mask_kind()?;
        let masks = (0..config.num_blocks)
            .map(|k| Mask::new(kind, config.dim, k % 2 == 1))
            .collect::<Result<Vec<_>>>()?;
        Self::with_masks(config, masks)
    }

    /// Builds a flow with explicit per-block masks.
    pub fn with_masks(config: &FlowConfig, masks: Vec<Mask>) -> Result<Self> {
        config.validate()?;
        if masks.len() != config.num_blocks {
            return Err(Error::Config(format!(
                "{} masks for {} blocks",
                masks.len(),
                config.num_blocks
            )));
        }
        if let Some(m) = masks.iter().find(|m| m.len() != config.dim) {
            return Err(Error::Config(format!(
                "mask of length {} for dimension {}",
                m.len(),
                config.dim
            )));
        }
        let mut rng = rng::seeded(config.seed);
        let mut params = ParamStore::new();
        let mut blocks = Vec::with_capacity(masks.len());
        for (k, mask) in masks.into_iter().enumerate() {
            let conditioner = Conditioner::build(
                &config.conditioner,
                config.dim,
                config.spatial,
                &format!("block{k}"),
                &mut params,
                &mut rng,
            )?;
            blocks.push(AffineCouplingBlock {
                mask,
                conditioner,
                alpha: config.alpha,
            });
        }
        Ok(Self {
            config: config.clone(),
            blocks,
            params,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn spatial(&self) -> Option<(usize, usize)> {
        self.config.spatial
    }

    pub fn blocks(&self) -> &[AffineCouplingBlock] {
        &self.blocks
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.dim() {
            return Err(Error::Dimension(format!(
                "flow over {} features given input of shape {:?}",
                self.dim(),
                x.shape()
            )));
        }
        Ok(())
    }

    fn as_row(&self, x: &Tensor) -> Result<Tensor> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "flow over {} features given {} values",
                self.dim(),
                x.len()
            )));
        }
        x.reshape(&[1, self.dim()])
    }

    /// Records the forward pass of a `[B, D]` batch on `g`.
    pub fn forward_graph<'a>(&'a self, g: &mut Graph<'a>, x: Var) -> Result<FlowTrace> {
        self.check_batch(g.value(x))?;
        let mut h = x;
        let mut block_log_dets = Vec::with_capacity(self.blocks.len());
        let mut total: Option<Var> = None;
        for block in &self.blocks {
            let out = block.forward_graph(g, &self.params, h)?;
            h = out.y;
            block_log_dets.push(out.log_det);
            total = Some(match total {
                None => out.log_det,
                Some(t) => g.add(t, out.log_det)?,
            });
        }
        Ok(FlowTrace {
            z: h,
            log_det: total.expect("at least two blocks"),
            block_log_dets,
        })
    }

    /// Maps a `[B, D]` batch to latent space; returns `z` and per-sample
    /// total log-determinants.
    pub fn forward_batch(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        self.check_batch(x)?;
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let trace = self.forward_graph(&mut g, xv)?;
        Ok((g.value(trace.z).clone(), g.value(trace.log_det).data().to_vec()))
    }

    /// Forward pass for one sample of length `D`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, f64)> {
        let (z, ld) = self.forward_batch(&self.as_row(x)?)?;
        Ok((Tensor::vector(z.into_data()), ld[0]))
    }

    /// Inverts a `[B, D]` latent batch, undoing blocks in reverse order.
    pub fn inverse_batch(&self, z: &Tensor) -> Result<Tensor> {
        self.check_batch(z)?;
        let mut g = Graph::new();
        let mut h = g.input(z.clone());
        for block in self.blocks.iter().rev() {
            h = block.inverse_graph(&mut g, &self.params, h)?;
        }
        Ok(g.value(h).clone())
    }

    pub fn inverse(&self, z: &Tensor) -> Result<Tensor> {
        let x = self.inverse_batch(&self.as_row(z)?)?;
        Ok(Tensor::vector(x.into_data()))
    }

    fn block(&self, k: usize) -> Result<&AffineCouplingBlock> {
        self.blocks.get(k).ok_or_else(|| {
            Error::Contract(format!("block {k} of a {}-block flow", self.blocks.len()))
        })
    }

    /// Applies block `k` alone to one sample.
    pub fn couple_forward(&self, k: usize, x: &Tensor) -> Result<(Tensor, f64)> {
        let block = self.block(k)?;
        let mut g = Graph::new();
        let xv = g.input(self.as_row(x)?);
        let out = block.forward_graph(&mut g, &self.params, xv)?;
        Ok((
            Tensor::vector(g.value(out.y).data().to_vec()),
            g.value(out.log_det).data()[0],
        ))
    }

    /// Exact inverse of [`couple_forward`](Self::couple_forward).
    pub fn couple_inverse(&self, k: usize, y: &Tensor) -> Result<Tensor> {
        let block = self.block(k)?;
        let mut g = Graph::new();
        let yv = g.input(self.as_row(y)?);
        let x = block.inverse_graph(&mut g, &self.params, yv)?;
        Ok(Tensor::vector(g.value(x).data().to_vec()))
    }

    /// Effective per-coordinate log-scale that block `k` applies to `x`
    /// (zero on the block's masked coordinates).
    pub fn log_scales(&self, k: usize, x: &Tensor) -> Result<Tensor> {
        let block = self.block(k)?;
        let mut g = Graph::new();
        let xv = g.input(self.as_row(x)?);
        let out = block.forward_graph(&mut g, &self.params, xv)?;
        Ok(Tensor::vector(g.value(out.log_scale).data().to_vec()))
    }

    /// Overwrites every parameter with values from `source`, matched by id.
    pub(crate) fn load_params(&mut self, source: &ParamStore) -> Result<()> {
        if source.len() != self.params.len() {
            return Err(Error::Load(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                source.len()
            )));
        }
        for p in self.params.iter_mut() {
            let id = source
                .find(&p.id)
                .ok_or_else(|| Error::Load(format!("missing parameter `{}`", p.id)))?;
            let value = &source.get(id).value;
            if value.shape() != p.value.shape() {
                return Err(Error::Load(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.id,
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forced_block_model() -> FlowModel {
        // D=2, block 0 keeps x0 and forces log s1 = ln 2, t1 = 3 through the
        // output-layer bias. Block 1 keeps x1 and stays the identity.
        let cfg = FlowConfig {
            num_blocks: 2,
            conditioner: ConditionerSpec::Mlp { hidden: vec![4] },
            ..FlowConfig::new(2)
        };
        let mut model = FlowModel::new(&cfg).unwrap();
        let (_, bias) = model.blocks[0].conditioner.output_layer();
        let alpha = cfg.alpha;
        let raw = alpha * (2f64.ln() / alpha).atanh();
        model.params.get_mut(bias).value = Tensor::vector(vec![0.7, raw, -1.0, 3.0]);
        model
    }

    #[test]
    fn forced_constant_block_matches_closed_form() {
        let model = forced_block_model();
        assert_eq!(model.blocks[0].mask.pattern(), &[1, 0]);
        let x = Tensor::vector(vec![5.0, 4.0]);
        let (y, ld) = model.couple_forward(0, &x).unwrap();
        assert_eq!(y.data()[0], 5.0);
        assert!((y.data()[1] - 11.0).abs() < 1e-12);
        assert!((ld - 2f64.ln()).abs() < 1e-12);

        let back = model.couple_inverse(0, &Tensor::vector(vec![5.0, 11.0])).unwrap();
        assert_eq!(back.data()[0], 5.0);
        assert!((back.data()[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fresh_model_is_identity() {
        for cfg in [FlowConfig::new(6), FlowConfig::image(4, 4)] {
            let model = FlowModel::new(&cfg).unwrap();
            let x = Tensor::vector((0..cfg.dim).map(|i| i as f64 * 0.3 - 1.0).collect());
            let (z, ld) = model.forward(&x).unwrap();
            assert_eq!(z, x);
            assert_eq!(ld, 0.0);
            assert_eq!(model.inverse(&x).unwrap(), x);
        }
    }

    #[test]
    fn three_blocks_alternate_masks() {
        let cfg = FlowConfig {
            num_blocks: 3,
            ..FlowConfig::new(5)
        };
        let model = FlowModel::new(&cfg).unwrap();
        let m: Vec<_> = model.blocks().iter().map(|b| b.mask().clone()).collect();
        assert_eq!(m[1], m[0].complement());
        assert_eq!(m[2], m[0]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = FlowConfig {
            seed: 11,
            ..FlowConfig::new(4)
        };
        let a = FlowModel::new(&cfg).unwrap();
        let b = FlowModel::new(&cfg).unwrap();
        assert_eq!(a.params(), b.params());
        let c = FlowModel::new(&FlowConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(FlowModel::new(&FlowConfig::new(1)), Err(Error::Config(_))));
        let k1 = FlowConfig {
            num_blocks: 1,
            ..FlowConfig::new(4)
        };
        assert!(matches!(FlowModel::new(&k1), Err(Error::Config(_))));
        let checker = FlowConfig {
            mask: MaskStyle::Checkerboard,
            ..FlowConfig::new(4)
        };
        assert!(FlowModel::new(&checker).is_err());
    }

    #[test]
    fn length_mismatch_is_dimension_error() {
        let model = FlowModel::new(&FlowConfig::new(3)).unwrap();
        let x = Tensor::vector(vec![1.0, 2.0]);
        assert!(matches!(model.forward(&x), Err(Error::Dimension(_))));
        assert!(matches!(model.couple_forward(0, &x), Err(Error::Dimension(_))));
        assert!(matches!(model.inverse(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn two_forced_blocks_add_log_dets() {
        let mut model = forced_block_model();
        let (_, bias1) = model.blocks[1].conditioner.output_layer();
        let raw = 3.0 * (0.5f64 / 3.0).atanh();
        model.params.get_mut(bias1).value = Tensor::vector(vec![raw, 9.0, -2.0, 1.0]);
        let x = Tensor::vector(vec![5.0, 4.0]);
        let (y0, ld0) = model.couple_forward(0, &x).unwrap();
        let (y1, ld1) = model.couple_forward(1, &y0).unwrap();
        let (z, total) = model.forward(&x).unwrap();
        assert_eq!(z, y1);
        assert_eq!(total, ld0 + ld1);
        let back = model.inverse(&z).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cnn_conditioner_starts_as_identity_and_inverts() {
        let cfg = FlowConfig {
            conditioner: ConditionerSpec::Cnn {
                channels: vec![2, 2],
                kernel: 3,
                hidden: 8,
            },
            num_blocks: 2,
            ..FlowConfig::image(4, 4)
        };
        let mut model = FlowModel::new(&cfg).unwrap();
        let x = Tensor::vector((0..16).map(|i| (i as f64 * 0.7).sin()).collect());
        assert_eq!(model.forward(&x).unwrap(), (x.clone(), 0.0));
        let mut rng = rng::seeded(3);
        use rand::Rng as _;
        for p in model.params_mut().iter_mut() {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
        let (z, _) = model.forward(&x).unwrap();
        let back = model.inverse(&z).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
