//! Push a vector through a randomly perturbed flow and back, printing the
//! per-block log-determinants and the reconstruction error.

use dxann::flow::{FlowConfig, FlowModel};
use dxann::numeric::Tensor;

fn main() -> dxann::Result<()> {
    let cfg = FlowConfig {
        num_blocks: 4,
        seed: 1,
        ..FlowConfig::new(6)
    };
    let mut model = FlowModel::new(&cfg)?;
    // A fresh flow is the identity; nudge every weight so it does something.
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        for (j, v) in p.value.data_mut().iter_mut().enumerate() {
            *v += 0.05 * (((i * 31 + j * 17) % 13) as f64 - 6.0) / 6.0;
        }
    }

    let x = Tensor::vector(vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.25]);
    let mut h = x.clone();
    for k in 0..cfg.num_blocks {
        let (next, ld) = model.couple_forward(k, &h)?;
        println!("block {k}: mask {:?} log_det {ld:+.6}", model.blocks()[k].mask().pattern());
        h = next;
    }
    let (z, total) = model.forward(&x)?;
    let back = model.inverse(&z)?;
    let err = back
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("x  = {:?}", x.data());
    println!("z  = {:?}", z.data());
    println!("total log_det {total:+.6}, max |inverse(z) - x| = {err:e}");
    Ok(())
}
