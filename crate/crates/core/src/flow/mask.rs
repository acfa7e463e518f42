use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// Even/odd flat indices.
    Alternating,
    /// `(i + j) mod 2` over an `h x w` grid.
    Checkerboard { h: usize, w: usize },
    /// First half / second half.
    HalfSplit,
}

/// Binary partition of the feature vector. Coordinates with a 1 pass through
/// a coupling block unchanged and condition the affine map of the rest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pattern: Vec<u8>,
    kind: MaskKind,
}

impl Mask {
    /// Builds the mask of `kind` over `dim` features. `parity` selects the
    /// pattern (false) or its complement (true).
    pub fn new(kind: MaskKind, dim: usize, parity: bool) -> Result<Self> {
        let bit = |on: bool| u8::from(on != parity);
        let pattern: Vec<u8> = match kind {
            MaskKind::Alternating => (0..dim).map(|i| bit(i % 2 == 0)).collect(),
            MaskKind::HalfSplit => (0..dim).map(|i| bit(i < dim / 2)).collect(),
            MaskKind::Checkerboard { h, w } => {
                if h * w != dim {
                    return Err(Error::Config(format!(
                        "checkerboard {h}x{w} does not cover {dim} features"
                    )));
                }
                (0..dim).map(|k| bit((k / w + k % w) % 2 == 0)).collect()
            }
        };
        Self::from_pattern(kind, pattern)
    }

    pub fn from_pattern(kind: MaskKind, pattern: Vec<u8>) -> Result<Self> {
        if pattern.iter().any(|&b| b > 1) {
            return Err(Error::Config("mask pattern must be binary".into()));
        }
        if !pattern.contains(&0) || !pattern.contains(&1) {
            return Err(Error::Config(
                "mask must contain at least one 0 and one 1".into(),
            ));
        }
        Ok(Self { pattern, kind })
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn pattern(&self) -> &[u8] {
        &self.pattern
    }

    pub fn len(&self) -> usize {
        self.pattern.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pattern.is_empty()
    }

    pub fn complement(&self) -> Self {
        Self {
            pattern: self.pattern.iter().map(|b| 1 - b).collect(),
            kind: self.kind,
        }
    }

    /// `[batch, D]` tensor with the mask in every row; `inverted` gives `1 - m`.
    pub(crate) fn tiled(&self, batch: usize, inverted: bool) -> Tensor {
        let row: Vec<f64> = self
            .pattern
            .iter()
            .map(|&b| f64::from(if inverted { 1 - b } else { b }))
            .collect();
        let data = row.repeat(batch);
        Tensor::new(&[batch, self.pattern.len()], data).expect("tiled mask shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_and_complement() {
        let m = Mask::new(MaskKind::Alternating, 5, false).unwrap();
        assert_eq!(m.pattern(), &[1, 0, 1, 0, 1]);
        assert_eq!(m.complement().pattern(), &[0, 1, 0, 1, 0]);
        assert_eq!(Mask::new(MaskKind::Alternating, 5, true).unwrap(), m.complement());
    }

    #[test]
    fn checkerboard_follows_grid_parity() {
        let (h, w) = (3, 4);
        let m = Mask::new(MaskKind::Checkerboard { h, w }, h * w, false).unwrap();
        for i in 0..h {
            for j in 0..w {
                assert_eq!(m.pattern()[i * w + j], u8::from((i + j) % 2 == 0));
            }
        }
        assert!(Mask::new(MaskKind::Checkerboard { h, w }, 11, false).is_err());
    }

    #[test]
    fn degenerate_masks_rejected() {
        assert!(Mask::new(MaskKind::Alternating, 1, false).is_err());
        assert!(Mask::from_pattern(MaskKind::HalfSplit, vec![1, 1]).is_err());
        assert!(Mask::from_pattern(MaskKind::HalfSplit, vec![0, 2]).is_err());
    }

    #[test]
    fn half_split() {
        let m = Mask::new(MaskKind::HalfSplit, 4, false).unwrap();
        assert_eq!(m.pattern(), &[1, 1, 0, 0]);
    }
}
