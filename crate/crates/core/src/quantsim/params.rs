use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width added on each side of a degenerate (`min == max`) range.
pub const DEGENERATE_WIDEN: f64 = 1e-6;

/// Affine map between reals and unsigned 8-bit codes: `x ≈ scale · (code − zero_point)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: i32) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::arg(format!("scale must be positive and finite, got {scale}")));
        }
        if !(0..=255).contains(&zero_point) {
            return Err(Error::arg(format!("zero point {zero_point} outside [0, 255]")));
        }
        Ok(QuantParams { scale, zero_point })
    }

    /// Asymmetric parameters covering `[min, max] ∪ {0}`. The flag reports
    /// whether the range was degenerate and had to be widened.
    pub fn from_range(min: f64, max: f64) -> (Self, bool) {
        let (mut lo, mut hi) = (min.min(0.0), max.max(0.0));
        let degenerate = hi - lo <= 0.0;
        if degenerate {
            lo -= DEGENERATE_WIDEN;
            hi += DEGENERATE_WIDEN;
        }
        let scale = (hi - lo) / 255.0;
        let zero_point = (-lo / scale).round().clamp(0.0, 255.0) as i32;
        (QuantParams { scale, zero_point }, degenerate)
    }

    /// Symmetric parameters around code 128 for values in `[min, max]`.
    pub fn symmetric(min: f64, max: f64) -> (Self, bool) {
        let degenerate = max - min <= 0.0;
        let (lo, hi) = if degenerate {
            (min - DEGENERATE_WIDEN, max + DEGENERATE_WIDEN)
        } else {
            (min, max)
        };
        let m = lo.abs().max(hi.abs());
        (
            QuantParams {
                scale: m / 127.0,
                zero_point: 128,
            },
            degenerate,
        )
    }

    /// `clamp(round(x / s) + z, 0, 255)`, rounding half away from zero.
    #[inline]
    pub fn quantize(&self, x: f64) -> u8 {
        ((x / self.scale).round() + self.zero_point as f64).clamp(0.0, 255.0) as u8
    }

    #[inline]
    pub fn dequantize(&self, code: u8) -> f64 {
        self.scale * (code as i32 - self.zero_point) as f64
    }

    /// Real interval representable without saturation.
    pub fn range(&self) -> (f64, f64) {
        (self.dequantize(0), self.dequantize(255))
    }
}

/// Fixed-point real multiplier `m / 2^shift` used to rescale integer accumulators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Multiplier {
    pub m: i64,
    pub shift: u32,
}

impl Multiplier {
    pub fn new(real: f64) -> Result<Self> {
        if !(real >= 0.0 && real.is_finite()) {
            return Err(Error::Numeric(format!("invalid rescale factor {real}")));
        }
        if real == 0.0 {
            return Ok(Multiplier { m: 0, shift: 0 });
        }
        // keep m below 2^31 so products with 2^31-bounded values stay in i64
        let e = real.log2().ceil() as i32;
        let shift = (31 - e).clamp(0, 62) as u32;
        let m = (real * (1u64 << shift) as f64).round() as i64;
        if m >= 1i64 << 32 {
            return Err(Error::Numeric(format!("rescale factor {real} too large")));
        }
        Ok(Multiplier { m, shift })
    }

    /// `round(x · m / 2^shift)`, half away from zero.
    #[inline]
    pub fn apply(&self, x: i64) -> i64 {
        let p = x * self.m;
        if self.shift == 0 {
            return p;
        }
        let half = 1i64 << (self.shift - 1);
        if p >= 0 {
            (p + half) >> self.shift
        } else {
            -((-p + half) >> self.shift)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_grid() {
        let q = QuantParams::new(1.0, 0).unwrap();
        assert_eq!(q.quantize(5.0), 5);
        assert_eq!(q.dequantize(5), 5.0);
    }

    #[test]
    fn saturation_edge() {
        let q = QuantParams::new(0.5, 128).unwrap();
        assert_eq!(q.quantize(-64.0), 0);
        assert_eq!(q.quantize(1e9), 255);
    }

    #[test]
    fn half_away_from_zero() {
        let q = QuantParams::new(1.0, 128).unwrap();
        assert_eq!(q.quantize(0.5), 129);
        assert_eq!(q.quantize(-0.5), 127);
        assert_eq!(q.quantize(2.5), 131);
    }

    #[test]
    fn round_trip_error_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100_000 {
            let q = QuantParams::new(rng.random_range(1e-4..2.0), rng.random_range(0..=255)).unwrap();
            let (lo, hi) = q.range();
            let x = rng.random_range(lo..=hi);
            let err = (q.dequantize(q.quantize(x)) - x).abs();
            assert!(err <= q.scale / 2.0 * (1.0 + 1e-12), "{err} > {}", q.scale / 2.0);
        }
    }

    #[test]
    fn degenerate_ranges_widen() {
        let (q, d) = QuantParams::symmetric(0.0, 0.0);
        assert!(d && q.scale > 0.0);
        assert_eq!(q.quantize(0.0), 128);
        let (q, d) = QuantParams::from_range(0.0, 0.0);
        assert!(d && q.scale > 0.0);
        let (q, d) = QuantParams::from_range(1.0, 3.0);
        assert!(!d);
        assert_eq!(q.zero_point, 0);
        assert!((q.dequantize(255) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn multiplier_matches_real_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let r: f64 = 10f64.powf(rng.random_range(-6.0..2.0));
            let m = Multiplier::new(r).unwrap();
            let x: i64 = rng.random_range(-40_000_000..40_000_000);
            let exact = x as f64 * r;
            assert!((m.apply(x) as f64 - exact).abs() <= 0.5 + exact.abs() * 1e-8, "{r} {x}");
        }
        assert_eq!(Multiplier::new(0.5).unwrap().apply(3), 2);
        assert_eq!(Multiplier::new(0.5).unwrap().apply(-3), -2);
    }
}
