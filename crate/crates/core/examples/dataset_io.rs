//! Generate both synthetic datasets, write them in the directory format and
//! read them back.
//!
//! `cargo run --example dataset_io -- [out_dir]`

use std::path::PathBuf;

use dxann::data::{gen_blob_images, gen_two_moons, load_dataset, save_dataset, BlobConfig};

fn main() -> dxann::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "dataset_io_out".into()));

    let moons = gen_two_moons(50, 0.1, 1)?;
    let blobs = gen_blob_images(&BlobConfig {
        n: 10,
        ..Default::default()
    })?;
    for (name, ds) in [("moons", &moons), ("blobs", &blobs)] {
        let dir = root.join(name);
        save_dataset(ds, &dir)?;
        let back = load_dataset(&dir)?;
        println!(
            "{name}: {} samples of {} features, spatial {:?}, classes {:?}, lossless {}",
            back.len(),
            back.dim(),
            back.spatial(),
            back.class_counts(),
            &back == ds
        );
        println!("  {}", dir.join("manifest.csv").display());
    }
    Ok(())
}
