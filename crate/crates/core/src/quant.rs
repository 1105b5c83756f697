//! Symmetric fixed-point quantization with a shared max-abs scale.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, McaError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedVector {
    pub codes: Vec<i32>,
    pub scale: f64,
    pub bits: u32,
}

impl QuantizedVector {
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes.iter().map(|&c| c as f64 * self.scale).collect()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Largest code magnitude for a signed `bits`-wide quantizer.
#[inline]
pub fn max_code(bits: u32) -> i32 {
    (1i32 << (bits - 1)) - 1
}

/// `scale = max|v| / (2^(bits-1) - 1)` (1 for the zero vector), codes rounded
/// half away from zero.
pub fn quantize_vector(v: &[f64], bits: u32) -> Result<QuantizedVector> {
    if !(2..=31).contains(&bits) {
        return Err(McaError::InvalidParams(format!(
            "quantizer width {bits} outside [2, 31]"
        )));
    }
    check_finite("quantizer input", v)?;
    let qmax = max_code(bits);
    let amax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if amax == 0.0 { 1.0 } else { amax / qmax as f64 };
    let codes = v
        .iter()
        .map(|&x| ((x / scale).round() as i32).clamp(-qmax, qmax))
        .collect();
    Ok(QuantizedVector { codes, scale, bits })
}

/// Quantize-dequantize in place; `None` leaves the vector untouched.
pub fn fake_quantize(v: &mut [f64], bits: Option<u32>) -> Result<()> {
    let Some(bits) = bits else { return Ok(()) };
    let q = quantize_vector(v, bits)?;
    for (x, &c) in v.iter_mut().zip(&q.codes) {
        *x = c as f64 * q.scale;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_vector() {
        let q = quantize_vector(&[0.0; 5], 8).unwrap();
        assert_eq!(q.scale, 1.0);
        assert!(q.codes.iter().all(|&c| c == 0));
        assert!(q.dequantize().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn three_bit_example() {
        let q = quantize_vector(&[1.0, -0.5, 0.25], 3).unwrap();
        assert!((q.scale - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(q.codes, vec![3, -2, 1]);
    }

    #[test]
    fn half_rounds_away_from_zero() {
        // 0.5 / (1/1) rounds to 1, -1.5 to -2 with 2-bit... use 3 bits, scale 1.
        let q = quantize_vector(&[3.0, 1.5, -1.5, 0.5, -0.5], 3).unwrap();
        assert_eq!(q.codes, vec![3, 2, -2, 1, -1]);
    }

    #[test]
    fn rejects_non_finite_and_bad_width() {
        assert!(quantize_vector(&[1.0, f64::NAN], 8).is_err());
        assert!(quantize_vector(&[1.0], 1).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_error_bounded(v in prop::collection::vec(-100.0f64..100.0, 1..40), bits in 2u32..16) {
            let q = quantize_vector(&v, bits).unwrap();
            let back = q.dequantize();
            let qmax = max_code(bits);
            for (a, b) in v.iter().zip(&back) {
                prop_assert!((a - b).abs() <= q.scale / 2.0 * (1.0 + 1e-12));
            }
            prop_assert!(q.codes.iter().all(|c| c.abs() <= qmax));
        }
    }
}
