//! Dataset directories.
//!
//! ```text
//! DIR/manifest.csv       id,label,path          (images)
//!                        id,label,f0,...,f{D-1}  (flat vectors)
//! DIR/images/<id>.pgm    P5, maxval 255
//! DIR/masks/<id>.pgm     optional binary truth masks (0 / 255)
//! ```

use std::fs;
use std::path::Path;

use super::netpbm::GrayImage;
use super::{Dataset, Sample, SplitTag};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

const MANIFEST: &str = "manifest.csv";

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Load(format!("{}: {other:?}", path.display())),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Error::Contract(format!("sample id `{id}` is not a valid file name")));
    }
    Ok(())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `dataset` under `dir` (created if needed). Image features are
/// stored as 8-bit PGM, vector features as shortest round-trip decimals.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let has_masks = dataset.samples().iter().any(|s| s.truth_mask.is_some());
    let (mask_h, mask_w) = dataset.spatial().unwrap_or((1, dataset.dim()));
    if has_masks {
        let masks = dir.join("masks");
        fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    }

    let manifest_path = dir.join(MANIFEST);
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&manifest_path)
        .map_err(|e| csv_err(&manifest_path, e))?;

    match dataset.spatial() {
        Some((h, w)) => {
            let images = dir.join("images");
            fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
            wtr.write_record(["id", "label", "path"])
                .map_err(|e| csv_err(&manifest_path, e))?;
            for s in dataset.samples() {
                check_id(&s.id)?;
                let rel = format!("images/{}.pgm", s.id);
                let pixels = s.features.data().iter().map(|&v| quantize(v)).collect();
                write_file(&dir.join(&rel), &GrayImage::new(w, h, pixels)?.encode())?;
                wtr.write_record([s.id.as_str(), &s.label.to_string(), &rel])
                    .map_err(|e| csv_err(&manifest_path, e))?;
            }
        }
        None => {
            let mut header = vec!["id".to_string(), "label".to_string()];
            header.extend((0..dataset.dim()).map(|i| format!("f{i}")));
            wtr.write_record(&header).map_err(|e| csv_err(&manifest_path, e))?;
            for s in dataset.samples() {
                check_id(&s.id)?;
                let mut row = vec![s.id.clone(), s.label.to_string()];
                row.extend(s.features.data().iter().map(|v| format!("{v}")));
                wtr.write_record(&row).map_err(|e| csv_err(&manifest_path, e))?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io(&manifest_path, e))?;

    for s in dataset.samples() {
        if let Some(mask) = &s.truth_mask {
            let pixels = mask.data().iter().map(|&m| if m > 0.0 { 255 } else { 0 }).collect();
            let img = GrayImage::new(mask_w, mask_h, pixels)?;
            write_file(&dir.join("masks").join(format!("{}.pgm", s.id)), &img.encode())?;
        }
    }
    Ok(())
}

fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Load(format!("missing file {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    GrayImage::decode(&bytes).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

fn parse_label(raw: &str, line: u64) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Load(format!(
            "manifest line {line}: label `{other}` is not 0 or 1"
        ))),
    }
}

/// Reads a directory written by [`save_dataset`]. The result is tagged
/// [`SplitTag::Full`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::Load(format!("missing manifest {}", manifest_path.display())));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&manifest_path)
        .map_err(|e| csv_err(&manifest_path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(&manifest_path, e))?
        .iter()
        .map(str::to_string)
        .collect();

    let is_image = header == ["id", "label", "path"];
    let feature_cols = header.len().saturating_sub(2);
    if !is_image {
        let valid = header.len() > 2
            && header[0] == "id"
            && header[1] == "label"
            && header[2..]
                .iter()
                .enumerate()
                .all(|(i, h)| *h == format!("f{i}"));
        if !valid {
            return Err(Error::Load(format!(
                "{}: header must be `id,label,path` or `id,label,f0..`",
                manifest_path.display()
            )));
        }
    }

    let mask_dir = dir.join("masks");
    let mut samples = Vec::new();
    let mut spatial: Option<(usize, usize)> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(&manifest_path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].to_string();
        check_id(&id).map_err(|_| Error::Load(format!("manifest line {line}: bad id `{id}`")))?;
        let label = parse_label(&rec[1], line)?;

        let features = if is_image {
            let path = dir.join(&rec[2]);
            let img = read_pgm(&path)?;
            match spatial {
                None => spatial = Some((img.height, img.width)),
                Some((h, w)) if (h, w) != (img.height, img.width) => {
                    return Err(Error::Load(format!(
                        "{}: image is {}x{}, earlier images are {h}x{w}",
                        path.display(),
                        img.height,
                        img.width
                    )));
                }
                Some(_) => {}
            }
            Tensor::vector(img.pixels.iter().map(|&p| f64::from(p) / 255.0).collect())
        } else {
            let values = rec
                .iter()
                .skip(2)
                .map(|v| {
                    v.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                        Error::Load(format!("manifest line {line}: bad feature value `{v}`"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Tensor::vector(values)
        };

        let mask_path = mask_dir.join(format!("{id}.pgm"));
        let truth_mask = if mask_path.is_file() {
            let img = read_pgm(&mask_path)?;
            if img.pixels.len() != features.len() {
                return Err(Error::Load(format!(
                    "{}: mask has {} pixels for {} features",
                    mask_path.display(),
                    img.pixels.len(),
                    features.len()
                )));
            }
            Some(Tensor::vector(
                img.pixels.iter().map(|&p| f64::from(u8::from(p > 0))).collect(),
            ))
        } else {
            None
        };

        samples.push(Sample {
            id,
            features,
            label,
            truth_mask,
        });
    }

    let dim = match spatial {
        Some((h, w)) => h * w,
        None if is_image => 0,
        None => feature_cols,
    };
    Dataset::new(samples, dim, spatial, SplitTag::Full)
        .map_err(|e| Error::Load(format!("{}: {e}", manifest_path.display())))
}
