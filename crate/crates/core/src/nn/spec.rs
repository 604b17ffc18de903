use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Architecture of the count classifier: `widths.len()` blocks of
/// Conv(k x k, same) -> BatchNorm -> ReLU -> MaxPool(2x2), optional dropout
/// after a block, then Conv 1x1 -> ReLU -> global average pool -> FC ->
/// softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_hw: (usize, usize),
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub kernel: usize,
    /// `(block number starting at 1, rate)`.
    pub dropout: Vec<(usize, f64)>,
    pub head_width: usize,
    pub h_t: usize,
}

pub const FULL_WIDTHS: [usize; 6] = [16, 32, 64, 96, 128, 192];
pub const FULL_DROPOUT: [(usize, f64); 4] = [(3, 0.20), (4, 0.30), (5, 0.30), (6, 0.40)];

impl NetworkSpec {
    /// Six blocks on a 200x200 input, 12 classes.
    pub fn full(in_channels: usize) -> Self {
        Self {
            input_hw: (200, 200),
            in_channels,
            widths: FULL_WIDTHS.to_vec(),
            kernel: 5,
            dropout: FULL_DROPOUT.to_vec(),
            head_width: 64,
            h_t: 12,
        }
    }

    /// Scaled variant for 48x48 crops: the first five blocks, six classes.
    pub fn desk(in_channels: usize) -> Self {
        Self {
            input_hw: (48, 48),
            in_channels,
            widths: FULL_WIDTHS[..5].to_vec(),
            kernel: 5,
            dropout: FULL_DROPOUT[..3].to_vec(),
            head_width: 64,
            h_t: 6,
        }
    }

    pub fn blocks(&self) -> usize {
        self.widths.len()
    }

    pub fn dropout_after(&self, block: usize) -> Option<f64> {
        self.dropout.iter().find(|(b, _)| *b == block).map(|(_, r)| *r)
    }

    /// True for the exact six-block architecture on a 200x200 input.
    pub fn is_full_architecture(&self) -> bool {
        self.input_hw == (200, 200)
            && self.widths == FULL_WIDTHS
            && self.kernel == 5
            && self.dropout == FULL_DROPOUT
            && self.head_width == 64
    }

    /// `(channels, height, width)` entering each block, then the pre-head map.
    pub fn shape_chain(&self) -> Vec<(usize, usize, usize)> {
        let (mut h, mut w) = self.input_hw;
        let mut chain = vec![(self.in_channels, h, w)];
        for &c in &self.widths {
            h /= 2;
            w /= 2;
            chain.push((c, h, w));
        }
        chain
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(1..=2).contains(&self.in_channels) {
            errs.push(format!("network.in_channels: {} not in {{1, 2}}", self.in_channels));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            errs.push("network.widths: need at least one non-zero width".into());
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            errs.push(format!("network.kernel: {} must be odd", self.kernel));
        }
        for &(b, r) in &self.dropout {
            if b == 0 || b > self.widths.len() {
                errs.push(format!("network.dropout: block {b} does not exist"));
            }
            if !(0.0..1.0).contains(&r) {
                errs.push(format!("network.dropout: rate {r} not in [0, 1)"));
            }
        }
        if self.h_t < 2 {
            errs.push("network.h_t: need at least 2 classes".into());
        }
        if self.head_width == 0 {
            errs.push("network.head_width: must be >= 1".into());
        }
        let (_, h, w) = *self.shape_chain().last().unwrap();
        if h == 0 || w == 0 {
            errs.push(format!("network.widths: {} pools collapse a {:?} input", self.widths.len(), self.input_hw));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&json).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_shape_chain() {
        let s = NetworkSpec::full(2);
        s.validate().unwrap();
        assert!(s.is_full_architecture());
        let hw: Vec<usize> = s.shape_chain().iter().map(|c| c.1).collect();
        assert_eq!(hw, vec![200, 100, 50, 25, 12, 6, 3]);
        assert_eq!(*s.shape_chain().last().unwrap(), (192, 3, 3));
        assert_eq!(s.dropout_after(6), Some(0.4));
        assert_eq!(s.dropout_after(2), None);
    }

    #[test]
    fn desk_shape_chain() {
        let s = NetworkSpec::desk(1);
        s.validate().unwrap();
        assert!(!s.is_full_architecture());
        assert_eq!(*s.shape_chain().last().unwrap(), (128, 1, 1));
    }

    #[test]
    fn invalid_specs() {
        let mut s = NetworkSpec::desk(3);
        s.dropout.push((9, 0.5));
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("in_channels") && err.contains("block 9"), "{err}");
        let mut s = NetworkSpec::desk(1);
        s.widths.push(8);
        s.widths.push(8);
        assert!(s.validate().is_err());
    }
}
