//! Labelled datasets: synthetic generators with ground truth, the 80/20
//! split, pixel preprocessing and the on-disk directory format.

mod io;
pub mod netpbm;

pub use io::{load_dataset, save_dataset};

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Tensor,
    pub label: u8,
    /// Binary ground-truth relevance per feature, when known.
    pub truth_mask: Option<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Full,
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
    spatial: Option<(usize, usize)>,
    tag: SplitTag,
}

impl Dataset {
    /// Validates that every sample has `dim` finite features, a binary label
    /// and (if present) a binary truth mask of length `dim`.
    pub fn new(
        samples: Vec<Sample>,
        dim: usize,
        spatial: Option<(usize, usize)>,
        tag: SplitTag,
    ) -> Result<Self> {
        if let Some((h, w)) = spatial {
            if h * w != dim {
                return Err(Error::Dimension(format!(
                    "image shape {h}x{w} does not match dimension {dim}"
                )));
            }
        }
        for s in &samples {
            if s.features.len() != dim {
                return Err(Error::Dimension(format!(
                    "sample `{}` has {} features, expected {dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if !s.features.all_finite() {
                return Err(Error::Contract(format!("sample `{}` has non-finite features", s.id)));
            }
            if s.label > 1 {
                return Err(Error::Contract(format!(
                    "sample `{}` has label {}, expected 0 or 1",
                    s.id, s.label
                )));
            }
            if let Some(m) = &s.truth_mask {
                if m.len() != dim || m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Contract(format!(
                        "sample `{}` has a malformed truth mask",
                        s.id
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            dim,
            spatial,
            tag,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spatial(&self) -> Option<(usize, usize)> {
        self.spatial
    }

    pub fn tag(&self) -> SplitTag {
        self.tag
    }

    pub fn with_tag(mut self, tag: SplitTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.samples.iter().filter(|s| s.label == 1).count();
        [self.samples.len() - ones, ones]
    }

    /// Features of the selected samples as a `[n, D]` matrix.
    pub fn feature_matrix(&self, indices: &[usize]) -> Tensor {
        let rows: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].features).collect();
        Tensor::stack_rows(&rows).expect("samples share D")
    }

    fn derive(&self, samples: Vec<Sample>, tag: SplitTag) -> Self {
        Self {
            samples,
            dim: self.dim,
            spatial: self.spatial,
            tag,
        }
    }
}

/// Two interleaving half circles in the plane.
///
/// Class 0 lies on `(cos θ, sin θ)`, class 1 on `(1 - cos θ, ½ - sin θ)`,
/// `θ ~ U[0, π]`, plus isotropic N(0, σ²) noise. An odd extra sample goes to
/// class 0.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Contract(format!("two-moons needs n >= 2, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Contract(format!("noise {noise} must be >= 0")));
    }
    let mut rng = rng::seeded(seed);
    let normal = Normal::new(0.0, noise).expect("noise checked");
    let n0 = n - n / 2;
    let samples = (0..n)
        .map(|i| {
            let label = u8::from(i >= n0);
            let theta = rng.random_range(0.0..=PI);
            let (x, y) = if label == 0 {
                (theta.cos(), theta.sin())
            } else {
                (1.0 - theta.cos(), 0.5 - theta.sin())
            };
            let (ex, ey) = if noise > 0.0 {
                (normal.sample(&mut rng), normal.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            Sample {
                id: format!("s{i:05}"),
                features: Tensor::vector(vec![x + ex, y + ey]),
                label,
                truth_mask: None,
            }
        })
        .collect();
    Dataset::new(samples, 2, None, SplitTag::Full)
}

/// Parameters of the planted-blob image generator.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobConfig {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub radius: f64,
    pub amplitude: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            n: 400,
            height: 16,
            width: 16,
            radius: 2.0,
            amplitude: 0.8,
            noise: 0.1,
            seed: 7,
        }
    }
}

/// Grayscale images of uniform `[0, σ]` noise. Class-1 images also carry a
/// Gaussian bump `a·exp(-d²/(2r²))` centred at least `r` from every border;
/// the truth mask marks pixels within `2r` of that centre. Pixels are
/// clipped to `[0, 1]` and quantised to multiples of 1/255, so the images
/// survive an 8-bit round trip unchanged. Even indices are class 0.
pub fn gen_blob_images(cfg: &BlobConfig) -> Result<Dataset> {
    let (h, w, r) = (cfg.height, cfg.width, cfg.radius);
    if h < 8 || w < 8 {
        return Err(Error::Config(format!("images must be at least 8x8, got {h}x{w}")));
    }
    if !(r >= 1.0 && r <= h.min(w) as f64 / 4.0) {
        return Err(Error::Config(format!(
            "blob radius {r} does not fit a {h}x{w} image (need 1 <= r <= {})",
            h.min(w) as f64 / 4.0
        )));
    }
    if !(cfg.amplitude > 0.0 && cfg.amplitude.is_finite()) {
        return Err(Error::Config(format!("amplitude {} must be positive", cfg.amplitude)));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::Config(format!("noise {} must be >= 0", cfg.noise)));
    }
    if cfg.n < 2 {
        return Err(Error::Contract(format!("need n >= 2 images, got {}", cfg.n)));
    }

    let mut rng = rng::seeded(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let label = u8::from(i % 2 == 1);
        let mut pixels: Vec<f64> = (0..h * w)
            .map(|_| {
                if cfg.noise > 0.0 {
                    rng.random_range(0.0..=cfg.noise)
                } else {
                    0.0
                }
            })
            .collect();
        let mut mask = vec![0.0; h * w];
        if label == 1 {
            let cy = rng.random_range(r..=(h as f64 - 1.0 - r));
            let cx = rng.random_range(r..=(w as f64 - 1.0 - r));
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    pixels[y * w + x] += cfg.amplitude * (-d2 / (2.0 * r * r)).exp();
                    if d2 <= 4.0 * r * r {
                        mask[y * w + x] = 1.0;
                    }
                }
            }
        }
        let features = pixels
            .into_iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            .collect();
        samples.push(Sample {
            id: format!("s{i:05}"),
            features: Tensor::vector(features),
            label,
            truth_mask: Some(Tensor::vector(mask)),
        });
    }
    Dataset::new(samples, h * w, Some((h, w)), SplitTag::Full)
}

/// Seeded shuffle, then the first `round(n·fraction)` samples train.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!(
            "train fraction {fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::seeded(seed));
    let n_train = (dataset.len() as f64 * fraction).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset.samples[i].clone()).collect();
    Ok((
        dataset.derive(pick(&order[..n_train]), SplitTag::Train),
        dataset.derive(pick(&order[n_train..]), SplitTag::Test),
    ))
}

/// Image datasets are rescaled to `[0, 1]` when any pixel exceeds 1
/// (assumed `[0, 255]`). With `dequantize`, each pixel becomes
/// `(255·x + u) / 256`, `u ~ U[0, 1)`, which stays within 1/256 of `x` and
/// below 1. Vector datasets are returned unchanged.
pub fn preprocess(dataset: &Dataset, dequantize: bool, seed: u64) -> Dataset {
    if dataset.spatial.is_none() {
        return dataset.clone();
    }
    let needs_rescale = dataset
        .samples
        .iter()
        .any(|s| s.features.data().iter().any(|&v| v > 1.0));
    let mut rng = rng::seeded(seed);
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let mut f = s.features.clone();
            for v in f.data_mut() {
                if needs_rescale {
                    *v /= 255.0;
                }
                if dequantize {
                    let u: f64 = rng.random();
                    *v = (255.0 * *v + u) / 256.0;
                }
            }
            Sample {
                features: f,
                ..s.clone()
            }
        })
        .collect();
    dataset.derive(samples, dataset.tag)
}
