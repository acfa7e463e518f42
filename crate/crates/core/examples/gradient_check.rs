//! Compare recorded gradients of the supervised loss with central finite
//! differences on a small, randomly perturbed flow.

use dxann::classifier::{dxann_loss, dxann_loss_graph, LatentHeads};
use dxann::flow::{ConditionerSpec, FlowConfig, FlowModel};
use dxann::numeric::{Graph, Tensor};

fn loss(model: &FlowModel, heads: &LatentHeads, x: &Tensor, labels: &[u8]) -> dxann::Result<f64> {
    let (z, ld) = model.forward_batch(x)?;
    let zs: Vec<Tensor> = (0..labels.len()).map(|r| Tensor::vector(z.row(r).to_vec())).collect();
    dxann_loss(&zs, labels, &ld, heads)
}

fn main() -> dxann::Result<()> {
    let cfg = FlowConfig {
        conditioner: ConditionerSpec::Mlp { hidden: vec![6] },
        num_blocks: 2,
        seed: 3,
        ..FlowConfig::new(3)
    };
    let mut model = FlowModel::new(&cfg)?;
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        for (j, v) in p.value.data_mut().iter_mut().enumerate() {
            *v += 0.2 * ((i + 3 * j) as f64).sin();
        }
    }
    let heads = LatentHeads::symmetric(3, 1.0)?;
    let x = Tensor::from_rows(&[vec![0.3, -0.7, 1.1], vec![-1.2, 0.4, 0.0]])?;
    let labels = [0u8, 1];

    model.params_mut().zero_grads();
    let grads = {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let trace = model.forward_graph(&mut g, xv)?;
        let means = g.input(heads.as_matrix());
        let l = dxann_loss_graph(&mut g, trace.z, trace.log_det, &labels, means)?;
        g.backward(l)?
    };
    model.params_mut().accumulate(&grads)?;

    let step = 1e-5;
    let ids: Vec<_> = model.params().ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        let name = model.params().get(id).id.clone();
        let mut param_worst = 0.0f64;
        for i in 0..model.params().value(id).len() {
            let orig = model.params().value(id).data()[i];
            model.params_mut().get_mut(id).value.data_mut()[i] = orig + step;
            let up = loss(&model, &heads, &x, &labels)?;
            model.params_mut().get_mut(id).value.data_mut()[i] = orig - step;
            let down = loss(&model, &heads, &x, &labels)?;
            model.params_mut().get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = model.params().get(id).grad.data()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            param_worst = param_worst.max(rel);
        }
        println!("{name:<22} max relative error {param_worst:.2e}");
        worst = worst.max(param_worst);
    }
    println!("overall {worst:.2e}");
    Ok(())
}
