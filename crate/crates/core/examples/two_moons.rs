//! Train the classifier on two interleaving half-circles and report the
//! learning curve and final confusion matrix.
//!
//! `cargo run --release --example two_moons -- [epochs]`

use dxann::data::{gen_two_moons, split};
use dxann::train::{evaluate, train, TrainConfig};

fn main() -> dxann::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let data = gen_two_moons(1000, 0.1, 7)?;
    let (train_set, test_set) = split(&data, 0.8, 7)?;
    let cfg = TrainConfig {
        epochs,
        seed: 7,
        ..TrainConfig::default()
    };
    let (model, heads, log) = train(&train_set, &test_set, &cfg)?;
    for r in log.records().iter().filter(|r| r.epoch % 20 == 0 || r.epoch == 1) {
        println!(
            "epoch {:>3}  loss {:>8.4}  train {:.3}  test {:.3}  {:.1}s",
            r.epoch, r.train_loss, r.train_acc, r.test_acc, r.seconds
        );
    }
    let e = evaluate(&model, &heads, &test_set)?;
    println!("test accuracy {:.4}, confusion {:?}", e.accuracy, e.confusion);
    Ok(())
}
