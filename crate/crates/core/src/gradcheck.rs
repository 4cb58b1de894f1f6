//! Central finite-difference gradient checks, independent of the tape.
//!
//! Only compiled for tests and with the `testing` feature.

use crate::error::Result;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub const STEP: f64 = 1e-5;

/// Relative error with a small-magnitude guard.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Max relative error between the tape gradient of `f` w.r.t. `x` and central
/// differences of the scalar `f(x)`.
pub fn check_input<F>(x: &Tensor, f: F) -> Result<f64>
where
    F: Fn(&mut Graph<'static>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.input(x.clone())?;
    let y = f(&mut g, xv)?;
    let grads = g.backward(y)?;
    let analytic = grads
        .wrt(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.input(t)?;
        let y = f(&mut g, v)?;
        Ok(g.value(y).item())
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= STEP;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

/// Max relative error over parameter coordinates. At most `max_coords`
/// evenly strided coordinates are probed per parameter tensor.
pub fn check_params<F>(store: &ParamStore, max_coords: usize, f: F) -> Result<f64>
where
    F: for<'a> Fn(&mut Graph<'a>) -> Result<Var>,
{
    let mut g = Graph::with_params(store);
    let y = f(&mut g)?;
    let grads = g.backward(y)?;

    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let n = store.value(id).len();
        let analytic = grads
            .param(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; n]);
        let stride = (n / max_coords.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let mut s = store.clone();
            s.value_mut(id).data_mut()[i] += STEP;
            let plus = {
                let mut g = Graph::with_params(&s);
                let y = f(&mut g)?;
                g.value(y).item()
            };
            s.value_mut(id).data_mut()[i] -= 2.0 * STEP;
            let minus = {
                let mut g = Graph::with_params(&s);
                let y = f(&mut g)?;
                g.value(y).item()
            };
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    Ok(worst)
}
