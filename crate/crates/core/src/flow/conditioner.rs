use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::rng::Rng;

/// Architecture of the network producing raw log-scales and translations.
#[derive(Clone, Debug, PartialEq)]
pub enum ConditionerSpec {
    /// Dense layers with tanh activations.
    Mlp { hidden: Vec<usize> },
    /// Same-padded tanh convolutions over the `h x w` image, then one dense
    /// hidden layer.
    Cnn {
        channels: Vec<usize>,
        kernel: usize,
        hidden: usize,
    },
}

impl Default for ConditionerSpec {
    fn default() -> Self {
        ConditionerSpec::Mlp {
            hidden: vec![64, 64],
        }
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Conv { kernels: ParamId, bias: ParamId },
    Dense { weight: ParamId, bias: ParamId },
}

/// Maps the masked input `[B, D]` to `(raw log-scale, translation)`, each `[B, D]`.
#[derive(Clone, Debug)]
pub struct Conditioner {
    spec: ConditionerSpec,
    dim: usize,
    spatial: Option<(usize, usize)>,
    layers: Vec<Layer>,
}

impl Conditioner {
    /// Registers parameters under `prefix` in `store`. Hidden layers get
    /// N(0, 1/fan_in) weights; the output layer is all zeros.
    pub(crate) fn build(
        spec: &ConditionerSpec,
        dim: usize,
        spatial: Option<(usize, usize)>,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let dense = |store: &mut ParamStore,
                         rng: &mut Rng,
                         name: String,
                         fan_in: usize,
                         fan_out: usize,
                         zero: bool|
         -> Result<Layer> {
            let weight = if zero {
                Tensor::zeros(&[fan_in, fan_out])
            } else {
                gaussian(rng, &[fan_in, fan_out], fan_in)
            };
            Ok(Layer::Dense {
                weight: store.add(format!("{name}.weight"), weight)?,
                bias: store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]))?,
            })
        };

        match spec {
            ConditionerSpec::Mlp { hidden } => {
                if hidden.contains(&0) {
                    return Err(Error::Config("hidden widths must be positive".into()));
                }
                let mut fan_in = dim;
                for (i, &width) in hidden.iter().enumerate() {
                    layers.push(dense(store, rng, format!("{prefix}.dense{i}"), fan_in, width, false)?);
                    fan_in = width;
                }
                let i = hidden.len();
                layers.push(dense(store, rng, format!("{prefix}.dense{i}"), fan_in, 2 * dim, true)?);
            }
            ConditionerSpec::Cnn {
                channels,
                kernel,
                hidden,
            } => {
                let (h, w) = spatial.ok_or_else(|| {
                    Error::Config("cnn conditioner needs an image shape".into())
                })?;
                if kernel % 2 == 0 {
                    return Err(Error::Unsupported(format!(
                        "conv kernel size {kernel} must be odd"
                    )));
                }
                if channels.is_empty() || channels.contains(&0) || *hidden == 0 {
                    return Err(Error::Config("cnn widths must be positive".into()));
                }
                let mut cin = 1;
                for (i, &cout) in channels.iter().enumerate() {
                    let fan_in = cin * kernel * kernel;
                    let kernels = gaussian(rng, &[cout, cin, *kernel, *kernel], fan_in);
                    layers.push(Layer::Conv {
                        kernels: store.add(format!("{prefix}.conv{i}.kernels"), kernels)?,
                        bias: store.add(format!("{prefix}.conv{i}.bias"), Tensor::zeros(&[cout]))?,
                    });
                    cin = cout;
                }
                let flat = cin * h * w;
                layers.push(dense(store, rng, format!("{prefix}.dense0"), flat, *hidden, false)?);
                layers.push(dense(store, rng, format!("{prefix}.dense1"), *hidden, 2 * dim, true)?);
            }
        }

        Ok(Self {
            spec: spec.clone(),
            dim,
            spatial,
            layers,
        })
    }

    pub fn spec(&self) -> &ConditionerSpec {
        &self.spec
    }

    /// Parameters of the final (zero-initialised) layer.
    pub fn output_layer(&self) -> (ParamId, ParamId) {
        match self.layers.last() {
            Some(Layer::Dense { weight, bias }) => (*weight, *bias),
            _ => unreachable!("conditioner always ends in a dense layer"),
        }
    }

    pub(crate) fn eval<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        x: Var,
    ) -> Result<(Var, Var)> {
        let batch = g.value(x).shape()[0];
        let mut h = x;
        let last = self.layers.len() - 1;
        let mut in_conv = false;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Conv { kernels, bias } => {
                    if !in_conv {
                        let (hh, ww) = self.spatial.expect("checked at build");
                        h = g.reshape(h, &[batch, 1, hh, ww])?;
                        in_conv = true;
                    }
                    let k = g.param(store, *kernels);
                    let b = g.param(store, *bias);
                    let c = g.conv2d(h, k, b)?;
                    h = g.tanh(c);
                }
                Layer::Dense { weight, bias } => {
                    if in_conv {
                        let flat = g.value(h).len() / batch;
                        h = g.reshape(h, &[batch, flat])?;
                        in_conv = false;
                    }
                    let w = g.param(store, *weight);
                    let b = g.param(store, *bias);
                    let a = g.matmul(h, w)?;
                    let a = g.add_row(a, b)?;
                    h = if i == last { a } else { g.tanh(a) };
                }
            }
        }
        let raw_log_scale = g.narrow(h, 1, 0, self.dim)?;
        let shift = g.narrow(h, 1, self.dim, self.dim)?;
        Ok((raw_log_scale, shift))
    }
}

fn gaussian(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches")
}
