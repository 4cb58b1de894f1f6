use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Dimensions whose variance falls below this are only mean-shifted.
pub const CMVN_VAR_FLOOR: f64 = 1e-10;

/// Per-utterance, per-dimension mean and (population) variance normalization.
pub fn apply_cmvn(features: &FeatureMatrix) -> Result<FeatureMatrix> {
    let t = features.num_frames();
    let d = features.dim();
    if t < 2 {
        return Err(Error::InsufficientFrames { need: 2, got: t });
    }
    let mut mean = vec![0.0; d];
    for i in 0..t {
        for (m, x) in mean.iter_mut().zip(features.frame(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut var = vec![0.0; d];
    for i in 0..t {
        for ((v, x), m) in var.iter_mut().zip(features.frame(i)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let v = v / t as f64;
            if v < CMVN_VAR_FLOOR {
                1.0
            } else {
                1.0 / v.sqrt()
            }
        })
        .collect();
    let mut data = Vec::with_capacity(t * d);
    for i in 0..t {
        for ((x, m), s) in features.frame(i).iter().zip(&mean).zip(&scale) {
            data.push((x - m) * s);
        }
    }
    FeatureMatrix::new(t, d, data)
}
