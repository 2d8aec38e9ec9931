//! 8-bit scalar quantizer: per-dimension affine map of `[min, max]` onto 0..=255.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqRange {
    pub min: f32,
    pub max: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarQuantizer {
    pub ranges: Vec<SqRange>,
}

impl ScalarQuantizer {
    /// Fits per-dimension ranges over `vectors`. All vectors must share `dim`.
    pub fn train(vectors: &[Vec<f32>], dim: usize) -> Self {
        let mut ranges = vec![SqRange { min: f32::INFINITY, max: f32::NEG_INFINITY }; dim];
        for v in vectors {
            for (r, &x) in ranges.iter_mut().zip(v) {
                r.min = r.min.min(x);
                r.max = r.max.max(x);
            }
        }
        for r in &mut ranges {
            if r.min > r.max {
                *r = SqRange { min: 0.0, max: 0.0 };
            }
        }
        ScalarQuantizer { ranges }
    }

    pub fn encode(&self, v: &[f32]) -> Vec<u8> {
        self.ranges
            .iter()
            .zip(v)
            .map(|(r, &x)| {
                let width = r.max - r.min;
                if width <= 0.0 {
                    0
                } else {
                    (((x - r.min) / width) * 255.0).round().clamp(0.0, 255.0) as u8
                }
            })
            .collect()
    }

    pub fn decode(&self, codes: &[u8]) -> Vec<f32> {
        self.ranges
            .iter()
            .zip(codes)
            .map(|(r, &c)| {
                let width = r.max - r.min;
                if width <= 0.0 {
                    r.min
                } else {
                    r.min + c as f32 * width / 255.0
                }
            })
            .collect()
    }
}
