#![allow(dead_code)]

use dxann::classifier::{dxann_loss, dxann_loss_graph, LatentHeads};
use dxann::flow::{ConditionerSpec, FlowConfig, FlowModel, MaskStyle};
use dxann::numeric::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `max(|a|, |b|, 1e-8)`-relative difference.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// A flow whose parameters, output layers included, are all random, so it
/// is far from the identity.
pub fn random_model(
    rng: &mut ChaCha8Rng,
    dim: usize,
    blocks: usize,
    mask: MaskStyle,
    conditioner: ConditionerSpec,
    scale: f64,
) -> FlowModel {
    let spatial = if mask == MaskStyle::Checkerboard {
        let w = (1..=dim).rev().find(|w| dim.is_multiple_of(*w) && w * w <= dim).unwrap_or(1);
        Some((dim / w, w))
    } else {
        None
    };
    let cfg = FlowConfig {
        dim,
        num_blocks: blocks,
        mask,
        conditioner,
        alpha: rng.random_range(0.5..4.0),
        spatial,
        seed: rng.random(),
    };
    let mut model = FlowModel::new(&cfg).unwrap();
    for p in model.params_mut().iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    model
}

pub fn random_mlp(rng: &mut ChaCha8Rng) -> ConditionerSpec {
    let depth = rng.random_range(1..=2);
    ConditionerSpec::Mlp {
        hidden: (0..depth).map(|_| rng.random_range(3..=12)).collect(),
    }
}

/// Jacobian of the flow at `x` by central differences, row-major `[D, D]`
/// with `J[i][j] = ∂z_i/∂x_j`.
pub fn fd_jacobian(model: &FlowModel, x: &[f64], step: f64) -> Vec<Vec<f64>> {
    let d = x.len();
    let mut jac = vec![vec![0.0; d]; d];
    for j in 0..d {
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[j] += step;
        minus[j] -= step;
        let (zp, _) = model.forward(&Tensor::vector(plus)).unwrap();
        let (zm, _) = model.forward(&Tensor::vector(minus)).unwrap();
        for (row, (a, b)) in jac.iter_mut().zip(zp.data().iter().zip(zm.data())) {
            row[j] = (a - b) / (2.0 * step);
        }
    }
    jac
}

/// `log|det A|` by Gaussian elimination with partial pivoting.
pub fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut total = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        total += p.abs().ln();
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for row in rest {
            let f = row[col] / p;
            for (x, y) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * y;
            }
        }
    }
    total
}

fn scalar_loss(model: &FlowModel, heads: &LatentHeads, x: &Tensor, labels: &[u8]) -> f64 {
    let (z, ld) = model.forward_batch(x).unwrap();
    let d = model.dim();
    let zs: Vec<Tensor> = (0..labels.len())
        .map(|r| Tensor::vector(z.data()[r * d..(r + 1) * d].to_vec()))
        .collect();
    dxann_loss(&zs, labels, &ld, heads).unwrap()
}

/// Largest relative error between the recorded gradient of the batch loss
/// and central differences of the scalar loss, over every parameter entry.
pub fn max_param_grad_error(
    model: &mut FlowModel,
    heads: &LatentHeads,
    x: &Tensor,
    labels: &[u8],
    step: f64,
) -> f64 {
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let trace = model.forward_graph(&mut g, xv).unwrap();
        let means = g.input(heads.as_matrix());
        let loss = dxann_loss_graph(&mut g, trace.z, trace.log_det, labels, means).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut per_param: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|p| vec![0.0; p.value.len()])
            .collect();
        for (id, t) in grads.params() {
            per_param[id.index()] = t.data().to_vec();
        }
        per_param
    };
    let ids: Vec<_> = model.params().ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        #[allow(clippy::needless_range_loop)]
        for i in 0..model.params().value(id).len() {
            let orig = model.params().value(id).data()[i];
            model.params_mut().get_mut(id).value.data_mut()[i] = orig + step;
            let up = scalar_loss(model, heads, x, labels);
            model.params_mut().get_mut(id).value.data_mut()[i] = orig - step;
            let down = scalar_loss(model, heads, x, labels);
            model.params_mut().get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(rel_err(analytic[id.index()][i], numeric));
        }
    }
    worst
}
