//! Sequence-model building blocks expressed on the [`Graph`] tape.
//!
//! Layers only hold [`ParamId`]s; the tensors live in the caller's
//! [`ParamStore`]. Weight matrices are stored input-major (`in × out`) so a
//! forward pass is `x · W` without a transpose node.

use rand::Rng;

use crate::error::{Error, Result};
use crate::frontend::SadMask;
use crate::tensor::{xavier_uniform, Axis, Graph, Mode, ParamId, ParamStore, Tensor, Var};
use crate::ModelRng;

/// Dropout context: `None` means eval mode.
pub type Train<'r> = Option<&'r mut ModelRng>;

pub fn dropout(g: &mut Graph<'_>, x: Var, p: f64, train: &mut Train<'_>) -> Result<Var> {
    match train {
        Some(rng) => g.dropout(x, p, Mode::Train, *rng),
        None => Ok(x),
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(&[in_dim, out_dim], rng)?);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[1, out_dim]));
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    /// Re-attach to parameters already present in `store` (e.g. loaded from
    /// a checkpoint).
    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let weight = lookup(store, &format!("{name}.weight"))?;
        let bias = lookup(store, &format!("{name}.bias"))?;
        let (in_dim, out_dim) = store.value(weight).dims2();
        if store.value(bias).len() != out_dim {
            return Err(Error::Checkpoint(format!("{name}: bias does not match weight")));
        }
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Gate order along the `4H` axis is `[i, f, g, o]`.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

impl LstmLayer {
    pub fn new(store: &mut ParamStore, name: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Result<Self> {
        let h = hidden_size;
        let w_input = store.add(format!("{name}.w_input"), xavier_uniform(&[input_size, 4 * h], rng)?);
        let w_hidden = store.add(format!("{name}.w_hidden"), xavier_uniform(&[h, 4 * h], rng)?);
        let mut b = vec![0.0; 4 * h];
        b[h..2 * h].fill(FORGET_BIAS_INIT);
        let bias = store.add(format!("{name}.bias"), Tensor::row(b));
        Ok(Self { w_input, w_hidden, bias, input_size, hidden_size })
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let w_input = lookup(store, &format!("{name}.w_input"))?;
        let w_hidden = lookup(store, &format!("{name}.w_hidden"))?;
        let bias = lookup(store, &format!("{name}.bias"))?;
        let (input_size, four_h) = store.value(w_input).dims2();
        let hidden_size = four_h / 4;
        if four_h % 4 != 0
            || store.value(w_hidden).shape() != [hidden_size, four_h]
            || store.value(bias).len() != four_h
        {
            return Err(Error::Checkpoint(format!("{name}: inconsistent LSTM shapes")));
        }
        Ok(Self { w_input, w_hidden, bias, input_size, hidden_size })
    }
}

fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
}

/// Runs the recurrence over the rows of `x` (`T × D`) and returns `T × H`.
/// `state` is the initial `(h, c)` pair, each `1 × H`; zeros when absent.
pub fn lstm_forward(g: &mut Graph<'_>, layer: &LstmLayer, x: Var, state: Option<(Var, Var)>) -> Result<Var> {
    let (t_len, d) = g.value(x).dims2();
    let h_size = layer.hidden_size;
    if t_len == 0 {
        return Err(Error::EmptyInput("lstm input has no frames".into()));
    }
    if d != layer.input_size {
        return Err(Error::shape("lstm_forward", &[t_len, d], &[layer.input_size, 4 * h_size]));
    }
    let w_in = g.param(layer.w_input);
    let w_hid = g.param(layer.w_hidden);
    let bias = g.param(layer.bias);
    let xw = g.matmul(x, w_in)?;
    let pre = g.add_row(xw, bias)?;

    let (mut h, mut c, mut zero_state) = match state {
        Some((h, c)) => (h, c, false),
        None => {
            let z = g.constant(Tensor::zeros(&[1, h_size]))?;
            (z, z, true)
        }
    };
    let mut outs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let gx = g.narrow(pre, Axis::Rows, t, 1)?;
        let gates = if zero_state {
            gx
        } else {
            let gh = g.matmul(h, w_hid)?;
            g.add(gx, gh)?
        };
        let hc = g.lstm_cell(gates, c)?;
        h = g.narrow(hc, Axis::Cols, 0, h_size)?;
        c = g.narrow(hc, Axis::Cols, h_size, h_size)?;
        zero_state = false;
        outs.push(h);
    }
    g.concat(&outs, Axis::Rows)
}

#[derive(Clone, Debug)]
pub struct BlstmLayer {
    pub forward: LstmLayer,
    pub backward: LstmLayer,
}

impl BlstmLayer {
    pub fn new(store: &mut ParamStore, name: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            forward: LstmLayer::new(store, &format!("{name}.fwd"), input_size, hidden_size, rng)?,
            backward: LstmLayer::new(store, &format!("{name}.bwd"), input_size, hidden_size, rng)?,
        })
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let forward = LstmLayer::bind(store, &format!("{name}.fwd"))?;
        let backward = LstmLayer::bind(store, &format!("{name}.bwd"))?;
        if forward.hidden_size != backward.hidden_size || forward.input_size != backward.input_size {
            return Err(Error::Checkpoint(format!("{name}: directions disagree in size")));
        }
        Ok(Self { forward, backward })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden_size
    }
}

/// `T × 2H`: forward outputs, then backward outputs re-aligned to time.
pub fn blstm_forward(g: &mut Graph<'_>, layer: &BlstmLayer, x: Var) -> Result<Var> {
    let t_len = g.value(x).rows();
    let fwd = lstm_forward(g, &layer.forward, x, None)?;
    let rev: Vec<usize> = (0..t_len).rev().collect();
    let xr = g.rows(x, &rev)?;
    let bwd_r = lstm_forward(g, &layer.backward, xr, None)?;
    let bwd = g.rows(bwd_r, &rev)?;
    g.concat(&[fwd, bwd], Axis::Cols)
}

#[derive(Clone, Debug)]
pub struct PreNet {
    pub first: Linear,
    pub second: Linear,
    pub dropout: f64,
}

impl PreNet {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, out_dim: usize, dropout: f64, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            first: Linear::new(store, &format!("{name}.0"), in_dim, hidden, rng)?,
            second: Linear::new(store, &format!("{name}.1"), hidden, out_dim, rng)?,
            dropout,
        })
    }

    pub fn bind(store: &ParamStore, name: &str, dropout: f64) -> Result<Self> {
        let first = Linear::bind(store, &format!("{name}.0"))?;
        let second = Linear::bind(store, &format!("{name}.1"))?;
        if first.out_dim != second.in_dim {
            return Err(Error::Checkpoint(format!("{name}: layer sizes do not chain")));
        }
        Ok(Self { first, second, dropout })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, train: &mut Train<'_>) -> Result<Var> {
        let a = self.first.forward(g, x)?;
        let a = g.relu(a)?;
        let a = dropout(g, a, self.dropout, train)?;
        let b = self.second.forward(g, a)?;
        let b = g.relu(b)?;
        dropout(g, b, self.dropout, train)
    }
}

/// `[mean ; std]` over frames, `1 × 2D`.
pub fn stat_pool(g: &mut Graph<'_>, x: Var) -> Result<Var> {
    g.stat_pool(x)
}

/// Statistics over the frames flagged as speech only.
pub fn masked_stat_pool(g: &mut Graph<'_>, x: Var, mask: &SadMask) -> Result<Var> {
    let t_len = g.value(x).rows();
    if mask.len() != t_len {
        return Err(Error::shape("masked_stat_pool", &[t_len], &[mask.len()]));
    }
    let idx = mask.speech_indices();
    if idx.is_empty() {
        return Err(Error::NoSpeech);
    }
    let sel = g.rows(x, &idx)?;
    g.stat_pool(sel)
}

/// Residual LSTM stack: layer `k+1` sees `h_k + input_k`. Returns every
/// layer's hidden-state sequence.
pub fn residual_stack_forward(g: &mut Graph<'_>, layers: &[LstmLayer], x: Var) -> Result<Vec<Var>> {
    let mut input = x;
    let mut states = Vec::with_capacity(layers.len());
    for layer in layers {
        let d = g.value(input).cols();
        if d != layer.hidden_size {
            return Err(Error::shape(
                "residual_stack_forward",
                &[g.value(input).rows(), d],
                &[layer.hidden_size],
            ));
        }
        let h = lstm_forward(g, layer, input, None)?;
        states.push(h);
        input = g.add(h, input)?;
    }
    Ok(states)
}
