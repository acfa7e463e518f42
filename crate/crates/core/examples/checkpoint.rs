//! Train briefly, save a checkpoint, reload it and confirm the reloaded
//! model is bit-for-bit the same function.

use dxann::data::gen_two_moons;
use dxann::flow::ConditionerSpec;
use dxann::numeric::Tensor;
use dxann::train::{load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig};

fn main() -> dxann::Result<()> {
    let data = gen_two_moons(200, 0.1, 4)?;
    let cfg = TrainConfig {
        epochs: 10,
        conditioner: ConditionerSpec::Mlp { hidden: vec![32, 32] },
        ..TrainConfig::default()
    };
    let (model, heads, _) = train(&data, &data, &cfg)?;
    let ck = Checkpoint {
        model,
        heads,
        train_config: cfg,
    };

    let dir = std::env::temp_dir().join(format!("dxann-checkpoint-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| dxann::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("moons.dxann");
    save_checkpoint(&ck, &path)?;
    let back = load_checkpoint(&path)?;
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!(
        "{} bytes, {} tensors, {} scalars",
        size,
        back.model.params().len(),
        back.model.params().num_scalars()
    );

    let mut identical = true;
    for i in 0..100 {
        let t = i as f64 / 10.0;
        let x = Tensor::vector(vec![t.cos() * 1.5, t.sin()]);
        let (z1, l1) = ck.model.forward(&x)?;
        let (z2, l2) = back.model.forward(&x)?;
        identical &= z1 == z2 && l1.to_bits() == l2.to_bits();
    }
    println!("forward outputs identical after reload: {identical}");
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
