//! Autoregressive predictive coding encoder.
//!
//! A pre-net and a residual stack of unidirectional LSTMs read filterbank
//! frames; a linear projection predicts the frame `n` steps ahead. After
//! training the model is frozen and its per-layer hidden states become the
//! input representation of both decoders.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::nn::{residual_stack_forward, Linear, LstmLayer, PreNet, Train};
use crate::tensor::{Axis, Graph, OptimizerKind, ParamStore, Tensor, Var};
use crate::train::{evaluate, fit, EpochLog, Step, TrainConfig};
use crate::ModelRng;

/// How the per-layer hidden states are collapsed into one decoder input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LayerCombination {
    #[default]
    ConcatAll,
    LastLayer,
    /// Softmax-normalized learned scalar per layer, owned by the decoder.
    WeightedSum,
}

impl LayerCombination {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerCombination::ConcatAll => "concat_all",
            LayerCombination::LastLayer => "last_layer",
            LayerCombination::WeightedSum => "weighted_sum",
        }
    }

    /// Width of the combined view for `layers` states of `hidden` units.
    pub fn output_dim(self, layers: usize, hidden: usize) -> usize {
        match self {
            LayerCombination::ConcatAll => layers * hidden,
            LayerCombination::LastLayer | LayerCombination::WeightedSum => hidden,
        }
    }
}

impl fmt::Display for LayerCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerCombination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat_all" => Ok(Self::ConcatAll),
            "last_layer" => Ok(Self::LastLayer),
            "weighted_sum" => Ok(Self::WeightedSum),
            other => Err(Error::InvalidArgument(format!("unknown layer combination {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApcArch {
    pub input_dim: usize,
    pub prenet_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for ApcArch {
    fn default() -> Self {
        Self {
            input_dim: 40,
            prenet_dim: 512,
            hidden: 512,
            layers: 4,
            dropout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApcConfig {
    pub arch: ApcArch,
    pub shift_n: usize,
    pub train: TrainConfig,
    pub layer_combination: LayerCombination,
}

impl Default for ApcConfig {
    fn default() -> Self {
        Self {
            arch: ApcArch::default(),
            shift_n: 3,
            train: TrainConfig {
                epochs: 5,
                learning_rate: 2e-4,
                anneal: false,
                batch_size: 8,
                optimizer: OptimizerKind::Adam,
            },
            layer_combination: LayerCombination::ConcatAll,
        }
    }
}

impl ApcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shift_n == 0 {
            return Err(Error::InvalidArgument("apc shift must be at least 1".into()));
        }
        let a = &self.arch;
        if a.input_dim == 0 || a.prenet_dim == 0 || a.hidden == 0 || a.layers == 0 {
            return Err(Error::InvalidArgument("apc dimensions must be positive".into()));
        }
        self.train.validate()
    }
}

/// Parameter handles of the encoder.
#[derive(Clone, Debug)]
pub struct ApcNet {
    pub prenet: PreNet,
    pub layers: Vec<LstmLayer>,
    pub projection: Linear,
}

impl ApcNet {
    pub fn hidden(&self) -> usize {
        self.layers[0].hidden_size
    }

    pub fn input_dim(&self) -> usize {
        self.prenet.first.in_dim
    }
}

pub struct ApcModel {
    pub net: ApcNet,
    pub params: ParamStore,
}

const PREFIX: &str = "apc";

impl ApcModel {
    pub fn new(arch: &ApcArch, rng: &mut ModelRng) -> Result<Self> {
        let mut params = ParamStore::new();
        let prenet = PreNet::new(
            &mut params,
            &format!("{PREFIX}.prenet"),
            arch.input_dim,
            arch.prenet_dim,
            arch.hidden,
            arch.dropout,
            rng,
        )?;
        let layers = (0..arch.layers)
            .map(|k| LstmLayer::new(&mut params, &format!("{PREFIX}.lstm.{k}"), arch.hidden, arch.hidden, rng))
            .collect::<Result<Vec<_>>>()?;
        let projection = Linear::new(&mut params, &format!("{PREFIX}.proj"), arch.hidden, arch.input_dim, rng)?;
        Ok(Self {
            net: ApcNet { prenet, layers, projection },
            params,
        })
    }

    /// Rebuild from a checkpoint; sizes come from the stored shapes.
    pub fn from_params(params: ParamStore, dropout: f64) -> Result<Self> {
        let prenet = PreNet::bind(&params, &format!("{PREFIX}.prenet"), dropout)?;
        let mut layers = Vec::new();
        while params.get(&format!("{PREFIX}.lstm.{}.w_input", layers.len())).is_some() {
            layers.push(LstmLayer::bind(&params, &format!("{PREFIX}.lstm.{}", layers.len()))?);
        }
        if layers.is_empty() {
            return Err(Error::Checkpoint("encoder checkpoint has no LSTM layers".into()));
        }
        let projection = Linear::bind(&params, &format!("{PREFIX}.proj"))?;
        let hidden = layers[0].hidden_size;
        if prenet.second.out_dim != hidden
            || layers.iter().any(|l| l.input_size != hidden || l.hidden_size != hidden)
            || projection.in_dim != hidden
            || projection.out_dim != prenet.first.in_dim
        {
            return Err(Error::Checkpoint("encoder checkpoint shapes do not chain".into()));
        }
        let expected = 4 + 3 * layers.len() + 2;
        if params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "encoder checkpoint has {} tensors, expected {expected}",
                params.len()
            )));
        }
        Ok(Self {
            net: ApcNet { prenet, layers, projection },
            params,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_params(ParamStore::load(path)?, ApcArch::default().dropout)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn freeze(&mut self) {
        self.params.freeze();
    }

    pub fn num_layers(&self) -> usize {
        self.net.layers.len()
    }

    pub fn hidden(&self) -> usize {
        self.net.hidden()
    }
}

/// Pre-net and residual stack; returns every layer's states and the output
/// of the residual stream after the last layer.
fn encode(g: &mut Graph<'_>, net: &ApcNet, x: Var, train: &mut Train<'_>) -> Result<(Vec<Var>, Var)> {
    let d = g.value(x).cols();
    if d != net.input_dim() {
        return Err(Error::shape("apc_forward", g.value(x).shape(), &[net.input_dim()]));
    }
    let a = net.prenet.forward(g, x, train)?;
    let states = residual_stack_forward(g, &net.layers, a)?;
    // the stream entering a hypothetical next layer: h_L + input_L
    let mut stream = a;
    for h in &states {
        stream = g.add(*h, stream)?;
    }
    Ok((states, stream))
}

/// `T × D` prediction; row `t` depends on frames `1..=t` only.
pub fn apc_forward(g: &mut Graph<'_>, net: &ApcNet, x: Var, train: &mut Train<'_>) -> Result<Var> {
    let (_, stream) = encode(g, net, x, train)?;
    net.projection.forward(g, stream)
}

/// Sum over `t < T - n` of `|x_{t+n} - y_t|`, summed over dimensions.
pub fn apc_loss(g: &mut Graph<'_>, net: &ApcNet, features: &FeatureMatrix, shift_n: usize, train: &mut Train<'_>) -> Result<Var> {
    let t_len = features.num_frames();
    if t_len <= shift_n {
        return Err(Error::UtteranceTooShort { frames: t_len, shift: shift_n });
    }
    let x = g.constant(features.to_tensor())?;
    let y = apc_forward(g, net, x, train)?;
    let pred = g.narrow(y, Axis::Rows, 0, t_len - shift_n)?;
    let target = g.narrow(x, Axis::Rows, shift_n, t_len - shift_n)?;
    g.l1_loss(pred, target)
}

#[derive(Clone, Debug)]
pub struct ApcTrainLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch with the lowest dev loss (train loss without a dev set).
    pub best_epoch: usize,
    pub skipped_short: usize,
}

/// Trains from a fresh seeded initialization. Utterances with `T <= n` are
/// skipped and counted; the returned model is the final-epoch one.
pub fn train_apc(
    train: &[FeatureMatrix],
    dev: &[FeatureMatrix],
    cfg: &ApcConfig,
    rng: &mut ModelRng,
) -> Result<(ApcModel, ApcTrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyData("encoder training manifest".into()));
    }
    let usable: Vec<&FeatureMatrix> = train.iter().filter(|f| f.num_frames() > cfg.shift_n).collect();
    if usable.is_empty() {
        return Err(Error::EmptyData(format!(
            "every training utterance is at most {} frames",
            cfg.shift_n
        )));
    }
    let dev: Vec<&FeatureMatrix> = dev.iter().filter(|f| f.num_frames() > cfg.shift_n).collect();
    let mut model = ApcModel::new(&cfg.arch, rng)?;
    let net = model.net.clone();
    let n = cfg.shift_n;
    let lengths: Vec<usize> = usable.iter().map(|f| f.num_frames()).collect();

    let train_step = loss_step(&net, &usable, n);
    let dev_step = loss_step(&net, &dev, n);
    let epochs = fit(&mut model.params, &cfg.train, &lengths, rng, train_step, |store| {
        if dev.is_empty() {
            Ok(None)
        } else {
            evaluate(store, dev.len(), &dev_step).map(Some)
        }
    })?;
    let key = |e: &EpochLog| e.dev.as_ref().map_or(e.train_loss, |d| d.loss);
    let best_epoch = epochs
        .iter()
        .min_by(|a, b| key(a).total_cmp(&key(b)))
        .map_or(1, |e| e.epoch);
    Ok((
        model,
        ApcTrainLog {
            epochs,
            best_epoch,
            skipped_short: train.len() - usable.len(),
        },
    ))
}

fn loss_step<'s>(
    net: &'s ApcNet,
    set: &'s [&'s FeatureMatrix],
    n: usize,
) -> impl for<'a> Fn(&mut Graph<'a>, usize, &mut Train<'_>) -> Result<Step> + 's {
    move |g, i, t| {
        let f = set[i];
        Ok(Step {
            loss: apc_loss(g, net, f, n, t)?,
            units: (f.num_frames() - n) as f64,
            correct: None,
        })
    }
}

/// Per-layer hidden states of the frozen encoder for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationTensor {
    layers: Vec<Tensor>,
}

impl RepresentationTensor {
    pub fn new(layers: Vec<Tensor>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::EmptyInput("representation without layers".into()));
        };
        let shape = first.shape().to_vec();
        if layers.iter().any(|l| l.shape() != shape.as_slice() || !l.is_finite()) {
            return Err(Error::shape("representation", &shape, &[layers.len()]));
        }
        Ok(Self { layers })
    }

    /// Splits a `T × (L·H)` concatenated matrix back into layers.
    pub fn from_concat(concat: &Tensor, num_layers: usize) -> Result<Self> {
        let (t_len, width) = concat.dims2();
        if num_layers == 0 || width % num_layers != 0 {
            return Err(Error::shape("representation", &[t_len, width], &[num_layers]));
        }
        let h = width / num_layers;
        let layers = (0..num_layers)
            .map(|k| {
                let mut data = Vec::with_capacity(t_len * h);
                for t in 0..t_len {
                    data.extend_from_slice(&concat.row_slice(t)[k * h..(k + 1) * h]);
                }
                Tensor::matrix(t_len, h, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn frames(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].cols()
    }

    /// `(layers, T, H)`.
    pub fn shape(&self) -> [usize; 3] {
        [self.num_layers(), self.frames(), self.hidden()]
    }

    pub fn layer(&self, k: usize) -> &Tensor {
        &self.layers[k]
    }

    /// `T × (L·H)`, layers side by side.
    pub fn concat(&self) -> Tensor {
        let (t_len, h) = (self.frames(), self.hidden());
        let mut data = Vec::with_capacity(t_len * h * self.layers.len());
        for t in 0..t_len {
            for l in &self.layers {
                data.extend_from_slice(l.row_slice(t));
            }
        }
        Tensor::matrix(t_len, h * self.layers.len(), data).expect("consistent layers")
    }

    /// Combined view. `WeightedSum` without learned weights is the uniform
    /// average; decoders apply their own weights on the graph instead.
    pub fn combined(&self, how: LayerCombination) -> Tensor {
        match how {
            LayerCombination::ConcatAll => self.concat(),
            LayerCombination::LastLayer => self.layers[self.layers.len() - 1].clone(),
            LayerCombination::WeightedSum => {
                let mut out = Tensor::zeros(&[self.frames(), self.hidden()]);
                let w = 1.0 / self.layers.len() as f64;
                for l in &self.layers {
                    for (o, v) in out.data_mut().iter_mut().zip(l.data()) {
                        *o += w * v;
                    }
                }
                out
            }
        }
    }
}

/// Eval-mode hidden states of every layer. Reads the parameters only.
pub fn extract_representations(model: &ApcModel, features: &FeatureMatrix) -> Result<RepresentationTensor> {
    let mut g = Graph::frozen(&model.params);
    let x = g.constant(features.to_tensor())?;
    let (states, _) = encode(&mut g, &model.net, x, &mut None)?;
    RepresentationTensor::new(states.iter().map(|v| g.value(*v).clone()).collect())
}
