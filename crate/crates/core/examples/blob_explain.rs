//! Train on planted-blob images, then explain one class-1 test image: the
//! heatmap and overlay are written as PPM files next to an ASCII preview.
//!
//! `cargo run --release --example blob_explain -- [out_dir]`

use std::fs;
use std::path::PathBuf;

use dxann::classifier::explain;
use dxann::cli::render::{heatmap, overlay, DEFAULT_OVERLAY_ALPHA};
use dxann::data::netpbm::GrayImage;
use dxann::data::{gen_blob_images, split, BlobConfig};
use dxann::train::{evaluate, train, TrainConfig};
use dxann::Error;

fn main() -> dxann::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "blob_explain_out".into()));
    fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;

    let data = gen_blob_images(&BlobConfig::default())?;
    let (train_set, test_set) = split(&data, 0.8, 7)?;
    // A tight log-scale clamp and a short schedule keep the bump pixels
    // poorly fitted, which is what makes the scores localise.
    let cfg = TrainConfig {
        alpha: 0.5,
        epochs: 40,
        seed: 7,
        ..TrainConfig::default()
    };
    let (model, heads, _) = train(&train_set, &test_set, &cfg)?;
    println!("test accuracy {:.4}", evaluate(&model, &heads, &test_set)?.accuracy);

    let sample = test_set.samples().iter().find(|s| s.label == 1).expect("a class-1 image");
    let map = explain(&sample.features, &model, &heads)?;
    let (h, w) = test_set.spatial().expect("image data");
    let truth = sample.truth_mask.as_ref().expect("generated with masks");
    println!("sample {} predicted {} (left: score x 9, right: truth mask)", sample.id, map.label());
    for y in 0..h {
        let row: String = (0..w)
            .map(|x| {
                let i = y * w + x;
                let level = (map.normalized.data()[i] * 9.0).round() as u32;
                char::from_digit(level, 10).unwrap()
            })
            .collect();
        let mask: String = (0..w)
            .map(|x| if truth.data()[y * w + x] > 0.0 { '#' } else { '.' })
            .collect();
        println!("{row}   {mask}");
    }

    let heat = heatmap(map.normalized.data(), w, h)?;
    let gray = GrayImage::new(
        w,
        h,
        sample.features.data().iter().map(|&v| (v * 255.0).round() as u8).collect(),
    )?;
    let blend = overlay(&heat, &gray, DEFAULT_OVERLAY_ALPHA)?;
    for (name, bytes) in [("heatmap.ppm", heat.encode()), ("overlay.ppm", blend.encode())] {
        let path = out.join(name);
        fs::write(&path, bytes).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
