//! Binary model files.
//!
//! ```text
//! "DXAN"  u8 version (1)
//! u64 config_len, config block
//! u64 n_params
//! n_params × { u64 id_len, id (utf-8), u64 rank, rank × u64 dim, f64 data }
//! ```
//!
//! Every integer and float is little-endian. The config block holds the flow
//! architecture (including each block's mask), the class means and the
//! training hyperparameters. Encoding is a pure function of the model, so
//! save → load → save reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use super::TrainConfig;
use crate::classifier::LatentHeads;
use crate::error::{Error, Result};
use crate::flow::{ConditionerSpec, FlowConfig, FlowModel, Mask, MaskStyle};
use crate::numeric::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"DXAN";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Everything needed to rebuild a trained classifier.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: FlowModel,
    pub heads: LatentHeads,
    pub train_config: TrainConfig,
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }
    fn lens(&mut self, vs: &[usize]) {
        self.len(vs.len());
        vs.iter().for_each(|&v| self.len(v));
    }
    fn f64s(&mut self, vs: &[f64]) {
        vs.iter().for_each(|&v| self.f64(v));
    }
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Load(format!(
                "truncated checkpoint while reading {what} at byte {}",
                self.pos
            ))),
        }
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::Load(format!("{what} {v} does not fit in memory")))
    }
    /// A count of items that follow; anything larger than the input cannot
    /// be genuine.
    fn count(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        if v > self.bytes.len() as u64 {
            return Err(Error::Load(format!("{what} of {v} exceeds the file size")));
        }
        Ok(v as usize)
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
    fn bool(&mut self, what: &str) -> Result<bool> {
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Load(format!("{what} flag has value {v}"))),
        }
    }
    fn lens(&mut self, what: &str) -> Result<Vec<usize>> {
        let n = self.count(what)?;
        (0..n).map(|_| self.count(what)).collect()
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(what)).collect()
    }
    fn finished(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn mask_code(style: MaskStyle) -> u8 {
    match style {
        MaskStyle::Alternating => 0,
        MaskStyle::Checkerboard => 1,
        MaskStyle::HalfSplit => 2,
    }
}

fn encode_config(ck: &Checkpoint) -> Vec<u8> {
    let cfg = ck.model.config();
    let mut w = Writer::default();
    w.len(cfg.dim);
    w.len(cfg.num_blocks);
    w.u8(mask_code(cfg.mask));
    match cfg.spatial {
        Some((h, wd)) => {
            w.bool(true);
            w.len(h);
            w.len(wd);
        }
        None => w.bool(false),
    }
    for block in ck.model.blocks() {
        w.buf.extend_from_slice(block.mask().pattern());
    }
    match &cfg.conditioner {
        ConditionerSpec::Mlp { hidden } => {
            w.u8(0);
            w.lens(hidden);
        }
        ConditionerSpec::Cnn {
            channels,
            kernel,
            hidden,
        } => {
            w.u8(1);
            w.lens(channels);
            w.len(*kernel);
            w.len(*hidden);
        }
    }
    w.f64(cfg.alpha);
    w.u64(cfg.seed);

    let heads = &ck.heads;
    w.f64(heads.separation());
    w.bool(heads.is_learnable());
    w.f64s(heads.mean(0).data());
    w.f64s(heads.mean(1).data());

    let t = &ck.train_config;
    w.f64(t.lr);
    w.len(t.epochs);
    w.len(t.batch_size);
    w.u64(t.seed);
    w.f64(t.separation);
    w.bool(t.learnable_means);
    w.f64(t.beta1);
    w.f64(t.beta2);
    w.f64(t.eps);
    w.f64(t.clip_norm);
    w.bool(t.dequantize);
    w.buf
}

/// Serialises a checkpoint to bytes.
pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u8(CHECKPOINT_VERSION);
    let config = encode_config(ck);
    w.len(config.len());
    w.buf.extend_from_slice(&config);
    let params = ck.model.params();
    w.len(params.len());
    for p in params.iter() {
        w.len(p.id.len());
        w.buf.extend_from_slice(p.id.as_bytes());
        w.lens(p.value.shape());
        w.f64s(p.value.data());
    }
    w.buf
}

fn decode_config(r: &mut Reader) -> Result<(FlowConfig, Vec<Vec<u8>>, LatentHeads, TrainConfig)> {
    let dim = r.count("feature dimension")?;
    let num_blocks = r.count("block count")?;
    let mask = match r.u8("mask style")? {
        0 => MaskStyle::Alternating,
        1 => MaskStyle::Checkerboard,
        2 => MaskStyle::HalfSplit,
        v => return Err(Error::Load(format!("unknown mask style {v}"))),
    };
    let spatial = if r.bool("image shape")? {
        Some((r.count("image height")?, r.count("image width")?))
    } else {
        None
    };
    let patterns = (0..num_blocks)
        .map(|_| r.take(dim, "block mask").map(<[u8]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let conditioner = match r.u8("conditioner kind")? {
        0 => ConditionerSpec::Mlp {
            hidden: r.lens("hidden widths")?,
        },
        1 => ConditionerSpec::Cnn {
            channels: r.lens("channel counts")?,
            kernel: r.count("kernel size")?,
            hidden: r.count("hidden width")?,
        },
        v => return Err(Error::Load(format!("unknown conditioner kind {v}"))),
    };
    let alpha = r.f64("alpha")?;
    let flow_seed = r.u64("flow seed")?;
    let flow = FlowConfig {
        dim,
        num_blocks,
        mask,
        conditioner: conditioner.clone(),
        alpha,
        spatial,
        seed: flow_seed,
    };

    let separation = r.f64("mean separation")?;
    let learnable = r.bool("learnable means")?;
    let mu0 = Tensor::vector(r.f64s(dim, "class 0 mean")?);
    let mu1 = Tensor::vector(r.f64s(dim, "class 1 mean")?);
    let heads = LatentHeads::new(mu0, mu1, separation, learnable)
        .map_err(|e| Error::Load(format!("class means: {e}")))?;

    let train = TrainConfig {
        lr: r.f64("learning rate")?,
        epochs: r.len("epochs")?,
        batch_size: r.len("batch size")?,
        seed: r.u64("training seed")?,
        separation: r.f64("training separation")?,
        learnable_means: r.bool("training learnable means")?,
        beta1: r.f64("beta1")?,
        beta2: r.f64("beta2")?,
        eps: r.f64("eps")?,
        clip_norm: r.f64("clip norm")?,
        dequantize: r.bool("dequantize")?,
        alpha,
        num_blocks,
        conditioner,
    };
    Ok((flow, patterns, heads, train))
}

/// Parses bytes produced by [`encode_checkpoint`].
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Load("bad magic: not a DXAN checkpoint".into()));
    }
    let version = r.u8("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Load(format!("unsupported checkpoint version {version}")));
    }
    let config_len = r.count("config length")?;
    let mut cr = Reader {
        bytes: r.take(config_len, "config block")?,
        pos: 0,
    };
    let (flow_cfg, patterns, heads, train_config) = decode_config(&mut cr)?;
    if !cr.finished() {
        return Err(Error::Load("config block has trailing bytes".into()));
    }
    let kind = flow_cfg
        .mask_kind()
        .map_err(|e| Error::Load(format!("flow config: {e}")))?;
    let masks = patterns
        .into_iter()
        .map(|p| Mask::from_pattern(kind, p))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Load(format!("block mask: {e}")))?;
    let mut model = FlowModel::with_masks(&flow_cfg, masks)
        .map_err(|e| Error::Load(format!("flow config: {e}")))?;
    if heads.dim() != model.dim() {
        return Err(Error::Load(format!(
            "class means of length {} for a {}-feature flow",
            heads.dim(),
            model.dim()
        )));
    }

    let n_params = r.count("parameter count")?;
    let mut store = ParamStore::new();
    for _ in 0..n_params {
        let id_len = r.count("parameter id length")?;
        let id = std::str::from_utf8(r.take(id_len, "parameter id")?)
            .map_err(|_| Error::Load("parameter id is not utf-8".into()))?
            .to_string();
        let shape = r.lens("parameter shape")?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c <= bytes.len())
            .ok_or_else(|| Error::Load(format!("parameter `{id}` shape {shape:?} is too large")))?;
        let data = r.f64s(count, "parameter values")?;
        let value = Tensor::new(&shape, data)?;
        store
            .add(id.clone(), value)
            .map_err(|_| Error::Load(format!("duplicate parameter `{id}`")))?;
    }
    if !r.finished() {
        return Err(Error::Load(format!(
            "{} trailing bytes after the last parameter",
            bytes.len() - r.pos
        )));
    }
    model.load_params(&store)?;
    Ok(Checkpoint {
        model,
        heads,
        train_config,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = FlowConfig {
            seed: 4,
            conditioner: ConditionerSpec::Mlp { hidden: vec![5] },
            ..FlowConfig::new(3)
        };
        let mut model = FlowModel::new(&cfg).unwrap();
        for (i, p) in model.params_mut().iter_mut().enumerate() {
            for (j, v) in p.value.data_mut().iter_mut().enumerate() {
                *v += 0.01 * (i * 7 + j) as f64;
            }
        }
        Checkpoint {
            model,
            heads: LatentHeads::symmetric(3, 1.5).unwrap(),
            train_config: TrainConfig::default(),
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = sample();
        let bytes = encode_checkpoint(&ck);
        assert_eq!(&bytes[..4], b"DXAN");
        assert_eq!(bytes[4], 1);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&back), bytes);
        assert_eq!(back.model.params(), ck.model.params());
        assert_eq!(back.heads, ck.heads);
        let x = Tensor::vector(vec![0.3, -1.2, 2.0]);
        let (z1, l1) = ck.model.forward(&x).unwrap();
        let (z2, l2) = back.model.forward(&x).unwrap();
        assert_eq!(z1, z2);
        assert_eq!(l1.to_bits(), l2.to_bits());
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode_checkpoint(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("magic"));
        bad = bytes.clone();
        bad[4] = 2;
        assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("version"));
        bytes.push(0);
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("trailing"));
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = encode_checkpoint(&sample());
        for cut in 0..bytes.len() {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let ck = sample();
        let mut bytes = encode_checkpoint(&ck);
        // Locate the first parameter's leading dimension and bump it.
        let first = ck.model.params().iter().next().unwrap();
        let needle = {
            let mut w = Writer::default();
            w.len(first.id.len());
            w.buf.extend_from_slice(first.id.as_bytes());
            w.lens(first.value.shape());
            w.buf
        };
        let at = bytes
            .windows(needle.len())
            .position(|win| win == needle.as_slice())
            .unwrap();
        let dim_at = at + 8 + first.id.len() + 8;
        bytes[dim_at] += 1;
        assert!(decode_checkpoint(&bytes).is_err());
    }
}
