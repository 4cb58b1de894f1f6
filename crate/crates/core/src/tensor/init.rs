use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Training or inference behaviour for stochastic layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// i.i.d. uniform on `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor> {
    let [fan_in, fan_out] = shape else {
        return Err(Error::InvalidArgument(format!(
            "xavier_uniform needs a 2-D shape, got {shape:?}"
        )));
    };
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-a..=a))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1 / (1 - p)`. Returns `None` when the layer is the identity.
pub fn dropout_mask(n: usize, p: f64, mode: Mode, rng: &mut impl Rng) -> Result<Option<Vec<f64>>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 / (1.0 - p);
    Ok(Some(
        (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect(),
    ))
}

impl Graph<'_> {
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        match dropout_mask(self.value(x).len(), p, mode, rng)? {
            Some(mask) => self.mul_const(x, mask),
            None => Ok(x),
        }
    }
}
