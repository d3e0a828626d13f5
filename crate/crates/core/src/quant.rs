//! Group-wise symmetric uniform quantization (round-to-nearest).
//!
//! For every output channel the input dimension is split into contiguous
//! groups of `g` rows. Each (group, channel) pair gets its own scale
//! `max|w| / (2^(b-1) - 1)` and codes `clamp(round(w / s), -2^(b-1), 2^(b-1) - 1)`.
//! Ties round away from zero. Scales are held at `f32` precision, which is
//! what the container stores, so a layer survives a write/read cycle exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub bits: u8,
    pub group_size: usize,
}

impl QuantConfig {
    pub fn new(bits: u8, group_size: usize) -> Result<Self> {
        let cfg = Self { bits, group_size };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.bits) {
            return Err(Error::Config(format!(
                "bit width must be in [2, 8], got {}",
                self.bits
            )));
        }
        if self.group_size == 0 {
            return Err(Error::Config("group size must be at least 1".into()));
        }
        Ok(())
    }

    /// Largest positive code, `2^(b-1) - 1`.
    #[inline]
    pub fn qmax(&self) -> i32 {
        qmax(self.bits)
    }

    /// Smallest code, `-2^(b-1)`.
    #[inline]
    pub fn qmin(&self) -> i32 {
        -(1 << (self.bits - 1))
    }
}

#[inline]
pub(crate) fn qmax(bits: u8) -> i32 {
    (1 << (bits - 1)) - 1
}

/// Partition of `c_in` input channels into `num_groups` blocks of `group_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupScheme {
    c_in: usize,
    group_size: usize,
    num_groups: usize,
}

impl GroupScheme {
    pub fn new(c_in: usize, group_size: usize) -> Result<Self> {
        if group_size == 0 || c_in == 0 || !c_in.is_multiple_of(group_size) {
            return Err(Error::Config(format!(
                "group size {group_size} does not divide C_in = {c_in}"
            )));
        }
        Ok(Self {
            c_in,
            group_size,
            num_groups: c_in / group_size,
        })
    }

    #[inline]
    pub fn c_in(&self) -> usize {
        self.c_in
    }

    #[inline]
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    #[inline]
    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    /// Input-index range covered by group `k`.
    #[inline]
    pub fn range(&self, k: usize) -> std::ops::Range<usize> {
        k * self.group_size..(k + 1) * self.group_size
    }

    #[inline]
    pub fn group_of(&self, i: usize) -> usize {
        i / self.group_size
    }

    pub fn ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.num_groups).map(move |k| self.range(k))
    }
}

/// Integer codes plus per-(group, output channel) scales.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    c_in: usize,
    c_out: usize,
    /// `c_in x c_out`, row-major.
    codes: Vec<i8>,
    /// `num_groups x c_out`, row-major.
    scales: Vec<f32>,
    config: QuantConfig,
}

impl QuantizedLayer {
    pub fn new(
        c_in: usize,
        c_out: usize,
        codes: Vec<i8>,
        scales: Vec<f32>,
        config: QuantConfig,
    ) -> Result<Self> {
        config.validate()?;
        let scheme = GroupScheme::new(c_in, config.group_size)?;
        if codes.len() != c_in * c_out {
            return Err(Error::Shape(format!(
                "expected {} codes for {c_in}x{c_out}, got {}",
                c_in * c_out,
                codes.len()
            )));
        }
        if scales.len() != scheme.num_groups() * c_out {
            return Err(Error::Shape(format!(
                "expected {} scales, got {}",
                scheme.num_groups() * c_out,
                scales.len()
            )));
        }
        let (lo, hi) = (config.qmin(), config.qmax());
        if let Some(c) = codes.iter().find(|&&c| (c as i32) < lo || (c as i32) > hi) {
            return Err(Error::Argument(format!(
                "code {c} outside [{lo}, {hi}] for {} bits",
                config.bits
            )));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::Argument(format!("invalid scale {s}")));
        }
        Ok(Self {
            c_in,
            c_out,
            codes,
            scales,
            config,
        })
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn config(&self) -> QuantConfig {
        self.config
    }

    pub fn scheme(&self) -> GroupScheme {
        GroupScheme {
            c_in: self.c_in,
            group_size: self.config.group_size,
            num_groups: self.c_in / self.config.group_size,
        }
    }

    #[inline]
    pub fn code(&self, i: usize, j: usize) -> i8 {
        self.codes[i * self.c_out + j]
    }

    #[inline]
    pub fn scale(&self, k: usize, j: usize) -> f32 {
        self.scales[k * self.c_out + j]
    }
}

/// `max|w| / (2^(b-1) - 1)`; zero for an all-zero group.
pub fn group_scale(w: &[f64], bits: u8) -> f64 {
    let m = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    m / qmax(bits) as f64
}

/// Rounds the exact scale to the stored `f32` precision, never collapsing a
/// nonzero group to a zero scale.
pub(crate) fn storage_scale(exact: f64) -> f32 {
    if exact == 0.0 {
        return 0.0;
    }
    let s = exact as f32;
    if s == 0.0 {
        f32::from_bits(1)
    } else if s.is_infinite() {
        f32::MAX
    } else {
        s
    }
}

#[inline]
pub(crate) fn round_clamp(x: f64, lo: i32, hi: i32) -> i8 {
    x.round().clamp(lo as f64, hi as f64) as i8
}

/// Quantizes one group with the symmetric max-based scale.
pub fn quantize_group(w: &[f64], bits: u8) -> (Vec<i8>, f32) {
    let scale = storage_scale(group_scale(w, bits));
    (quantize_with_scale(w, scale, bits), scale)
}

/// Codes for `w` on a given grid.
pub fn quantize_with_scale(w: &[f64], scale: f32, bits: u8) -> Vec<i8> {
    if scale == 0.0 {
        return vec![0; w.len()];
    }
    let s = scale as f64;
    let (lo, hi) = (-(1 << (bits - 1)), qmax(bits));
    w.iter().map(|&v| round_clamp(v / s, lo, hi)).collect()
}

/// Round-to-nearest group-wise quantization of a `C_in x C_out` weight matrix.
pub fn rtn_quantize(w: &DenseMatrix, cfg: QuantConfig) -> Result<QuantizedLayer> {
    cfg.validate()?;
    let (c_in, c_out) = w.shape();
    let scheme = GroupScheme::new(c_in, cfg.group_size)?;
    let mut codes = vec![0i8; c_in * c_out];
    let mut scales = vec![0f32; scheme.num_groups() * c_out];
    let mut buf = vec![0.0; cfg.group_size];
    for j in 0..c_out {
        for (k, range) in scheme.ranges().enumerate() {
            for (b, i) in buf.iter_mut().zip(range.clone()) {
                *b = w[(i, j)];
            }
            let (c, s) = quantize_group(&buf, cfg.bits);
            scales[k * c_out + j] = s;
            for (ci, i) in c.into_iter().zip(range) {
                codes[i * c_out + j] = ci;
            }
        }
    }
    QuantizedLayer::new(c_in, c_out, codes, scales, cfg)
}

/// `codes[i][j] * scales[group_of(i)][j]`.
pub fn dequantize(q: &QuantizedLayer) -> DenseMatrix {
    let scheme = q.scheme();
    let mut data = Vec::with_capacity(q.c_in * q.c_out);
    for i in 0..q.c_in {
        let k = scheme.group_of(i);
        for j in 0..q.c_out {
            data.push(q.code(i, j) as f64 * q.scale(k, j) as f64);
        }
    }
    DenseMatrix::new(q.c_in, q.c_out, data).expect("shape checked at construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_examples() {
        assert!((group_scale(&[0.6, -0.9, 0.3], 3) - 0.3).abs() < 1e-15);
        assert_eq!(group_scale(&[0.0; 4], 3), 0.0);
        assert_eq!(group_scale(&[1.0], 2), 1.0);
    }

    #[test]
    fn quantize_group_examples() {
        let (codes, scale) = quantize_group(&[0.6, -0.9, 0.3], 3);
        assert_eq!(codes, vec![2, -3, 1]);
        assert_eq!(scale, 0.3f32);
        for (c, w) in codes.iter().zip([0.6, -0.9, 0.3]) {
            assert!((*c as f64 * scale as f64 - w).abs() < 1e-7);
        }

        let (codes, scale) = quantize_group(&[0.0, 0.0, 0.0], 4);
        assert_eq!(codes, vec![0, 0, 0]);
        assert_eq!(scale, 0.0);

        let (codes, scale) = quantize_group(&[-1.0, 1.0], 2);
        assert_eq!(scale, 1.0);
        assert_eq!(codes, vec![-1, 1]);
    }

    #[test]
    fn ties_round_away_from_zero() {
        // scale 1.0 (max 3, b = 3); 0.5 -> 1, -1.5 -> -2, 2.5 -> 3
        let (codes, scale) = quantize_group(&[0.5, -1.5, 2.5, 3.0], 3);
        assert_eq!(scale, 1.0);
        assert_eq!(codes, vec![1, -2, 3, 3]);
    }

    #[test]
    fn rtn_example_and_dequant() {
        let w = DenseMatrix::from_rows(&[[0.6], [-0.9]]).unwrap();
        let q = rtn_quantize(&w, QuantConfig::new(3, 2).unwrap()).unwrap();
        assert_eq!(q.codes(), &[2, -3]);
        assert_eq!(q.scales(), &[0.3f32]);
        let d = dequantize(&q);
        assert!((d[(0, 0)] - 0.6).abs() < 1e-7 && (d[(1, 0)] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn grid_representable_weights_roundtrip_exactly() {
        let w = DenseMatrix::identity(4).unwrap();
        let q = rtn_quantize(&w, QuantConfig::new(2, 2).unwrap()).unwrap();
        assert_eq!(dequantize(&q), w);
    }

    #[test]
    fn zero_codes_dequantize_to_zero() {
        let q = QuantizedLayer::new(
            2,
            2,
            vec![0; 4],
            vec![0.5, 0.25],
            QuantConfig::new(4, 2).unwrap(),
        )
        .unwrap();
        assert_eq!(dequantize(&q), DenseMatrix::zeros(2, 2).unwrap());
    }

    #[test]
    fn indivisible_group_is_a_config_error() {
        let w = DenseMatrix::zeros(6, 1).unwrap();
        let err = rtn_quantize(&w, QuantConfig::new(3, 4).unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains('6') && msg.contains('4'), "{msg}");
    }

    #[test]
    fn config_validation() {
        assert!(QuantConfig::new(1, 4).is_err());
        assert!(QuantConfig::new(9, 4).is_err());
        assert!(QuantConfig::new(3, 0).is_err());
        assert!(QuantConfig::new(8, 1).is_ok());
    }

    #[test]
    fn layer_rejects_out_of_range_codes() {
        let cfg = QuantConfig::new(2, 1).unwrap();
        assert!(QuantizedLayer::new(1, 1, vec![-2], vec![1.0], cfg).is_ok());
        assert!(QuantizedLayer::new(1, 1, vec![2], vec![1.0], cfg).is_err());
        assert!(QuantizedLayer::new(1, 1, vec![0], vec![-1.0], cfg).is_err());
    }
}
