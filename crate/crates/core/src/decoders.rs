//! Task decoders on top of the frozen encoder.
//!
//! * Phrase decoder: BLSTM stack feeding a per-frame phoneme head (CTC) and a
//!   pooled phrase classifier; trained on `CTC + λ·CE`.
//! * Speaker decoder: BLSTM stack, statistics pooling, a dense bottleneck
//!   whose pre-activation output is the speaker embedding, and a speaker
//!   classifier used only for training.
//!
//! Decoders consume encoder representations stored as the `T × (L·H)`
//! concatenation of all layers and collapse them per [`LayerCombination`].

use crate::apc::{extract_representations, ApcModel, LayerCombination};
use crate::ctc::{ctc_loss, LabelSequence};
use crate::error::{Error, Result};
use crate::frontend::{energy_sad, extract_features, AudioBuffer, FeatureMatrix, FrontendConfig, SadMask};
use crate::nn::{blstm_forward, masked_stat_pool, stat_pool, BlstmLayer, Linear, Train};
use crate::tensor::{Axis, Graph, OptimizerKind, ParamId, ParamStore, Tensor, Var};
use crate::train::{evaluate, fit, EpochLog, Step, TrainConfig};
use crate::ModelRng;

/// Collapses the concatenated encoder layers into the decoder input.
#[derive(Clone, Debug)]
pub struct LayerMix {
    pub combination: LayerCombination,
    pub num_layers: usize,
    pub hidden: usize,
    /// Unnormalized per-layer weights (`1 × L`), weighted-sum only.
    pub weights: Option<ParamId>,
}

impl LayerMix {
    fn new(store: &mut ParamStore, prefix: &str, combination: LayerCombination, num_layers: usize, hidden: usize) -> Self {
        let weights = (combination == LayerCombination::WeightedSum)
            .then(|| store.add(format!("{prefix}.mix.weights"), Tensor::zeros(&[1, num_layers])));
        Self { combination, num_layers, hidden, weights }
    }

    fn bind(store: &ParamStore, prefix: &str, combination: LayerCombination, num_layers: usize, hidden: usize) -> Result<Self> {
        let name = format!("{prefix}.mix.weights");
        let weights = match (combination, store.get(&name)) {
            (LayerCombination::WeightedSum, Some(id)) if store.value(id).len() == num_layers => Some(id),
            (LayerCombination::WeightedSum, _) => {
                return Err(Error::Checkpoint(format!("{name} missing or not {num_layers} wide")))
            }
            (_, Some(_)) => return Err(Error::Checkpoint(format!("unexpected {name} for {combination}"))),
            (_, None) => None,
        };
        Ok(Self { combination, num_layers, hidden, weights })
    }

    pub fn output_dim(&self) -> usize {
        self.combination.output_dim(self.num_layers, self.hidden)
    }

    pub fn forward(&self, g: &mut Graph<'_>, reps: &Tensor) -> Result<Var> {
        let width = self.num_layers * self.hidden;
        if reps.cols() != width {
            return Err(Error::shape("layer_mix", reps.shape(), &[reps.rows(), width]));
        }
        let x = g.constant(reps.clone())?;
        match self.combination {
            LayerCombination::ConcatAll => Ok(x),
            LayerCombination::LastLayer => g.narrow(x, Axis::Cols, width - self.hidden, self.hidden),
            LayerCombination::WeightedSum => {
                let w = g.param(self.weights.expect("weighted mix has weights"));
                let w = g.softmax(w, Axis::Cols)?;
                let mut acc = None;
                for k in 0..self.num_layers {
                    let layer = g.narrow(x, Axis::Cols, k * self.hidden, self.hidden)?;
                    let wk = g.pick(w, k)?;
                    let term = g.scale_by(layer, wk)?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => g.add(a, term)?,
                    });
                }
                Ok(acc.expect("at least one layer"))
            }
        }
    }
}

/// Shape of the encoder output a decoder is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderShape {
    pub num_layers: usize,
    pub hidden: usize,
    pub combination: LayerCombination,
}

impl EncoderShape {
    pub fn of(encoder: &ApcModel, combination: LayerCombination) -> Self {
        Self {
            num_layers: encoder.num_layers(),
            hidden: encoder.hidden(),
            combination,
        }
    }
}

fn decoder_train_defaults() -> TrainConfig {
    TrainConfig {
        epochs: 5,
        learning_rate: 2e-4,
        anneal: true,
        batch_size: 8,
        optimizer: OptimizerKind::Adam,
    }
}

fn blstm_stack(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, layers: usize, rng: &mut ModelRng) -> Result<Vec<BlstmLayer>> {
    let mut out: Vec<BlstmLayer> = Vec::with_capacity(layers);
    for k in 0..layers {
        let d = if k == 0 { input } else { 2 * hidden };
        out.push(BlstmLayer::new(store, &format!("{prefix}.blstm.{k}"), d, hidden, rng)?);
    }
    Ok(out)
}

fn bind_blstm_stack(store: &ParamStore, prefix: &str, input: usize) -> Result<Vec<BlstmLayer>> {
    let mut out: Vec<BlstmLayer> = Vec::new();
    while store.get(&format!("{prefix}.blstm.{}.fwd.w_input", out.len())).is_some() {
        let layer = BlstmLayer::bind(store, &format!("{prefix}.blstm.{}", out.len()))?;
        let want = out.last().map_or(input, BlstmLayer::output_dim);
        if layer.forward.input_size != want {
            return Err(Error::Checkpoint(format!(
                "{prefix}.blstm.{} expects input {}, got {want}",
                out.len(),
                layer.forward.input_size
            )));
        }
        out.push(layer);
    }
    if out.is_empty() {
        return Err(Error::Checkpoint(format!("{prefix} checkpoint has no BLSTM layers")));
    }
    Ok(out)
}

fn run_stack(g: &mut Graph<'_>, stack: &[BlstmLayer], x: Var) -> Result<Var> {
    let mut h = x;
    for layer in stack {
        h = blstm_forward(g, layer, h)?;
    }
    Ok(h)
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, k| if v[k] > v[best] { k } else { best })
}

fn expect_params(store: &ParamStore, count: usize, what: &str) -> Result<()> {
    if store.len() != count {
        return Err(Error::Checkpoint(format!(
            "{what} checkpoint has {} tensors, expected {count}",
            store.len()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Phrase decoder

#[derive(Clone, Debug, PartialEq)]
pub struct PidArch {
    pub blstm_hidden: usize,
    pub blstm_layers: usize,
    /// Phoneme inventory size K; the head has K + 1 outputs.
    pub phonemes: usize,
    pub fc_dim: usize,
    /// In-domain phrases plus the no-match class.
    pub phrases: usize,
}

impl Default for PidArch {
    fn default() -> Self {
        Self {
            blstm_hidden: 512,
            blstm_layers: 3,
            phonemes: 39,
            fc_dim: 400,
            phrases: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PidConfig {
    pub arch: PidArch,
    pub lambda: f64,
    pub train: TrainConfig,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            arch: PidArch::default(),
            lambda: 0.2,
            train: decoder_train_defaults(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PidNet {
    pub mix: LayerMix,
    pub blstm: Vec<BlstmLayer>,
    pub phoneme_head: Linear,
    pub phrase_fc: Linear,
    pub phrase_head: Linear,
}

impl PidNet {
    pub fn phonemes(&self) -> usize {
        self.phoneme_head.out_dim - 1
    }

    pub fn phrases(&self) -> usize {
        self.phrase_head.out_dim
    }
}

pub struct PidModel {
    pub net: PidNet,
    pub params: ParamStore,
}

const PID: &str = "pid";

impl PidModel {
    pub fn new(arch: &PidArch, enc: EncoderShape, rng: &mut ModelRng) -> Result<Self> {
        if arch.phrases < 2 || arch.phonemes == 0 || arch.blstm_layers == 0 {
            return Err(Error::InvalidArgument(format!("phrase decoder sizes {arch:?}")));
        }
        let mut params = ParamStore::new();
        let mix = LayerMix::new(&mut params, PID, enc.combination, enc.num_layers, enc.hidden);
        let blstm = blstm_stack(&mut params, PID, mix.output_dim(), arch.blstm_hidden, arch.blstm_layers, rng)?;
        let top = 2 * arch.blstm_hidden;
        let phoneme_head = Linear::new(&mut params, &format!("{PID}.phoneme_head"), top, arch.phonemes + 1, rng)?;
        let phrase_fc = Linear::new(&mut params, &format!("{PID}.phrase_fc"), 2 * top, arch.fc_dim, rng)?;
        let phrase_head = Linear::new(&mut params, &format!("{PID}.phrase_head"), arch.fc_dim, arch.phrases, rng)?;
        Ok(Self {
            net: PidNet { mix, blstm, phoneme_head, phrase_fc, phrase_head },
            params,
        })
    }

    pub fn from_params(params: ParamStore, enc: EncoderShape) -> Result<Self> {
        let mix = LayerMix::bind(&params, PID, enc.combination, enc.num_layers, enc.hidden)?;
        let blstm = bind_blstm_stack(&params, PID, mix.output_dim())?;
        let top = blstm[blstm.len() - 1].output_dim();
        let phoneme_head = Linear::bind(&params, &format!("{PID}.phoneme_head"))?;
        let phrase_fc = Linear::bind(&params, &format!("{PID}.phrase_fc"))?;
        let phrase_head = Linear::bind(&params, &format!("{PID}.phrase_head"))?;
        if phoneme_head.in_dim != top || phrase_fc.in_dim != 2 * top || phrase_head.in_dim != phrase_fc.out_dim {
            return Err(Error::Checkpoint("phrase decoder shapes do not chain".into()));
        }
        expect_params(&params, mix.weights.is_some() as usize + 6 * blstm.len() + 6, "phrase decoder")?;
        Ok(Self {
            net: PidNet { mix, blstm, phoneme_head, phrase_fc, phrase_head },
            params,
        })
    }
}

/// Per-frame phoneme log-probabilities (`T × (K+1)`, blank last) and raw
/// phrase logits (`1 × phrases`).
pub fn pid_forward(g: &mut Graph<'_>, net: &PidNet, reps: &Tensor) -> Result<(Var, Var)> {
    if reps.rows() == 0 {
        return Err(Error::EmptyInput("phrase decoder input has no frames".into()));
    }
    let x = net.mix.forward(g, reps)?;
    let h = run_stack(g, &net.blstm, x)?;
    let ph = net.phoneme_head.forward(g, h)?;
    let log_probs = g.log_softmax(ph, Axis::Cols)?;
    let pooled = stat_pool(g, h)?;
    let fc = net.phrase_fc.forward(g, pooled)?;
    let fc = g.relu(fc)?;
    let logits = net.phrase_head.forward(g, fc)?;
    Ok((log_probs, logits))
}

/// `CTC + λ·CE`; without phoneme targets only `λ·CE`.
pub fn pid_loss(
    g: &mut Graph<'_>,
    net: &PidNet,
    reps: &Tensor,
    phonemes: Option<&LabelSequence>,
    phrase: usize,
    lambda: f64,
) -> Result<(Var, Var)> {
    if phrase >= net.phrases() {
        return Err(Error::LabelOutOfRange { label: phrase, classes: net.phrases() });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("phrase loss weight {lambda}")));
    }
    let (log_probs, logits) = pid_forward(g, net, reps)?;
    let ce = g.cross_entropy(logits, phrase)?;
    let weighted = g.scale(ce, lambda)?;
    let loss = match phonemes {
        Some(labels) => {
            if labels.alphabet() != net.phonemes() {
                return Err(Error::LabelOutOfRange {
                    label: labels.alphabet(),
                    classes: net.phonemes(),
                });
            }
            let ctc = ctc_loss(g, log_probs, labels)?;
            g.add(ctc, weighted)?
        }
        None => weighted,
    };
    Ok((loss, logits))
}

/// Log posterior of `phrase` for the test representation.
pub fn pid_score(model: &PidModel, reps: &Tensor, phrase: usize) -> Result<f64> {
    Ok(pid_log_posteriors(model, reps)?[checked_phrase(model, phrase)?])
}

fn checked_phrase(model: &PidModel, phrase: usize) -> Result<usize> {
    if phrase >= model.net.phrases() {
        return Err(Error::LabelOutOfRange { label: phrase, classes: model.net.phrases() });
    }
    Ok(phrase)
}

/// `log_softmax` of the phrase logits, one entry per class.
pub fn pid_log_posteriors(model: &PidModel, reps: &Tensor) -> Result<Vec<f64>> {
    let mut g = Graph::frozen(&model.params);
    let (_, logits) = pid_forward(&mut g, &model.net, reps)?;
    let ls = g.log_softmax(logits, Axis::Cols)?;
    Ok(g.value(ls).data().to_vec())
}

/// One phrase-decoder training item.
#[derive(Clone, Debug)]
pub struct PidExample {
    pub reps: Tensor,
    pub phonemes: Option<LabelSequence>,
    pub phrase: usize,
}

#[derive(Clone, Debug)]
pub struct DecoderTrainLog {
    pub epochs: Vec<EpochLog>,
}

fn validate_pid_examples(items: &[PidExample], arch: &PidArch) -> Result<()> {
    for it in items {
        if it.phrase >= arch.phrases {
            return Err(Error::LabelOutOfRange { label: it.phrase, classes: arch.phrases });
        }
        if let Some(l) = &it.phonemes {
            if l.alphabet() != arch.phonemes {
                return Err(Error::InvalidArgument(format!(
                    "phoneme inventory {} does not match decoder size {}",
                    l.alphabet(),
                    arch.phonemes
                )));
            }
            l.check_feasible(it.reps.rows())?;
        }
    }
    Ok(())
}

fn pid_step<'s>(
    net: &'s PidNet,
    items: &'s [PidExample],
    lambda: f64,
) -> impl for<'a> Fn(&mut Graph<'a>, usize, &mut Train<'_>) -> Result<Step> + 's {
    move |g, i, _| {
        let it = &items[i];
        let (loss, logits) = pid_loss(g, net, &it.reps, it.phonemes.as_ref(), it.phrase, lambda)?;
        Ok(Step {
            loss,
            units: 1.0,
            correct: Some(argmax(g.value(logits).data()) == it.phrase),
        })
    }
}

/// Trains on precomputed encoder representations.
pub fn train_pid(
    train: &[PidExample],
    dev: &[PidExample],
    enc: EncoderShape,
    cfg: &PidConfig,
    rng: &mut ModelRng,
) -> Result<(PidModel, DecoderTrainLog)> {
    if train.is_empty() {
        return Err(Error::EmptyData("phrase decoder training manifest".into()));
    }
    validate_pid_examples(train, &cfg.arch)?;
    validate_pid_examples(dev, &cfg.arch)?;
    let mut model = PidModel::new(&cfg.arch, enc, rng)?;
    let net = model.net.clone();
    let lengths: Vec<usize> = train.iter().map(|e| e.reps.rows()).collect();
    let train_step = pid_step(&net, train, cfg.lambda);
    let dev_step = pid_step(&net, dev, cfg.lambda);
    let epochs = fit(&mut model.params, &cfg.train, &lengths, rng, train_step, |store| {
        if dev.is_empty() {
            Ok(None)
        } else {
            evaluate(store, dev.len(), &dev_step).map(Some)
        }
    })?;
    Ok((model, DecoderTrainLog { epochs }))
}

/// Convenience path from features: extracts representations with the
/// frozen encoder, trains, and checks the encoder was not modified.
pub fn train_pid_with_encoder(
    encoder: &ApcModel,
    combination: LayerCombination,
    train: &[(FeatureMatrix, Option<LabelSequence>, usize)],
    cfg: &PidConfig,
    rng: &mut ModelRng,
) -> Result<(PidModel, DecoderTrainLog)> {
    let before = encoder.checksum();
    let items = train
        .iter()
        .map(|(f, phonemes, phrase)| {
            Ok(PidExample {
                reps: extract_representations(encoder, f)?.concat(),
                phonemes: phonemes.clone(),
                phrase: *phrase,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = train_pid(&items, &[], EncoderShape::of(encoder, combination), cfg, rng)?;
    verify_frozen(&before, encoder)?;
    Ok(out)
}

pub fn verify_frozen(before: &str, encoder: &ApcModel) -> Result<()> {
    let after = encoder.checksum();
    if after != before {
        return Err(Error::FreezeViolation { before: before.to_string(), after });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Speaker decoder

#[derive(Clone, Debug, PartialEq)]
pub struct SidArch {
    pub blstm_hidden: usize,
    pub blstm_layers: usize,
    pub embedding_dim: usize,
    pub speakers: usize,
}

impl Default for SidArch {
    fn default() -> Self {
        Self {
            blstm_hidden: 512,
            blstm_layers: 3,
            embedding_dim: 600,
            speakers: 7350,
        }
    }
}

pub const SEGMENT_FRAMES: usize = 300;
pub const MIN_TAIL_FRAMES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct SidConfig {
    pub arch: SidArch,
    pub train: TrainConfig,
    pub segment_frames: usize,
    pub min_tail_frames: usize,
}

impl Default for SidConfig {
    fn default() -> Self {
        Self {
            arch: SidArch::default(),
            train: decoder_train_defaults(),
            segment_frames: SEGMENT_FRAMES,
            min_tail_frames: MIN_TAIL_FRAMES,
        }
    }
}

/// `(start, len)` training segments: full `segment` windows, then the tail
/// if it has at least `min_tail` frames. An utterance shorter than one
/// segment is kept whole.
pub fn chunk_segments(frames: usize, segment: usize, min_tail: usize) -> Vec<(usize, usize)> {
    if frames == 0 {
        return Vec::new();
    }
    if frames <= segment {
        return vec![(0, frames)];
    }
    let mut out: Vec<(usize, usize)> = (0..frames / segment).map(|k| (k * segment, segment)).collect();
    let tail = frames % segment;
    if tail >= min_tail {
        out.push((frames - tail, tail));
    }
    out
}

#[derive(Clone, Debug)]
pub struct SidNet {
    pub mix: LayerMix,
    pub blstm: Vec<BlstmLayer>,
    pub dense: Linear,
    pub pred: Linear,
}

impl SidNet {
    pub fn embedding_dim(&self) -> usize {
        self.dense.out_dim
    }

    pub fn speakers(&self) -> usize {
        self.pred.out_dim
    }
}

pub struct SidModel {
    pub net: SidNet,
    pub params: ParamStore,
}

const SID: &str = "sid";

impl SidModel {
    pub fn new(arch: &SidArch, enc: EncoderShape, rng: &mut ModelRng) -> Result<Self> {
        if arch.speakers < 2 {
            return Err(Error::InvalidArgument(format!(
                "speaker decoder needs at least 2 speakers, got {}",
                arch.speakers
            )));
        }
        if arch.blstm_layers == 0 || arch.embedding_dim == 0 {
            return Err(Error::InvalidArgument(format!("speaker decoder sizes {arch:?}")));
        }
        let mut params = ParamStore::new();
        let mix = LayerMix::new(&mut params, SID, enc.combination, enc.num_layers, enc.hidden);
        let blstm = blstm_stack(&mut params, SID, mix.output_dim(), arch.blstm_hidden, arch.blstm_layers, rng)?;
        let dense = Linear::new(&mut params, &format!("{SID}.dense"), 4 * arch.blstm_hidden, arch.embedding_dim, rng)?;
        let pred = Linear::new(&mut params, &format!("{SID}.pred"), arch.embedding_dim, arch.speakers, rng)?;
        Ok(Self {
            net: SidNet { mix, blstm, dense, pred },
            params,
        })
    }

    pub fn from_params(params: ParamStore, enc: EncoderShape) -> Result<Self> {
        let mix = LayerMix::bind(&params, SID, enc.combination, enc.num_layers, enc.hidden)?;
        let blstm = bind_blstm_stack(&params, SID, mix.output_dim())?;
        let top = blstm[blstm.len() - 1].output_dim();
        let dense = Linear::bind(&params, &format!("{SID}.dense"))?;
        let pred = Linear::bind(&params, &format!("{SID}.pred"))?;
        if dense.in_dim != 2 * top || pred.in_dim != dense.out_dim {
            return Err(Error::Checkpoint("speaker decoder shapes do not chain".into()));
        }
        expect_params(&params, mix.weights.is_some() as usize + 6 * blstm.len() + 4, "speaker decoder")?;
        Ok(Self {
            net: SidNet { mix, blstm, dense, pred },
            params,
        })
    }
}

/// Embedding (dense pre-activation, `1 × E`) and speaker logits. With a SAD
/// mask only the flagged frames enter pooling; the BLSTMs see every frame.
pub fn sid_forward(g: &mut Graph<'_>, net: &SidNet, reps: &Tensor, sad: Option<&SadMask>) -> Result<(Var, Var)> {
    if reps.rows() == 0 {
        return Err(Error::EmptyInput("speaker decoder input has no frames".into()));
    }
    let x = net.mix.forward(g, reps)?;
    let h = run_stack(g, &net.blstm, x)?;
    let pooled = match sad {
        Some(mask) => masked_stat_pool(g, h, mask)?,
        None => stat_pool(g, h)?,
    };
    let emb = net.dense.forward(g, pooled)?;
    let logits = net.pred.forward(g, emb)?;
    Ok((emb, logits))
}

#[derive(Clone, Debug)]
pub struct SidExample {
    pub reps: Tensor,
    pub speaker: usize,
}

fn sid_step<'s>(net: &'s SidNet, items: &'s [SidExample]) -> impl for<'a> Fn(&mut Graph<'a>, usize, &mut Train<'_>) -> Result<Step> + 's {
    move |g, i, _| {
        let it = &items[i];
        let (_, logits) = sid_forward(g, net, &it.reps, None)?;
        let loss = g.cross_entropy(logits, it.speaker)?;
        Ok(Step {
            loss,
            units: 1.0,
            correct: Some(argmax(g.value(logits).data()) == it.speaker),
        })
    }
}

/// Trains on precomputed (already chunked) representations.
pub fn train_sid(
    train: &[SidExample],
    dev: &[SidExample],
    enc: EncoderShape,
    cfg: &SidConfig,
    rng: &mut ModelRng,
) -> Result<(SidModel, DecoderTrainLog)> {
    if train.is_empty() {
        return Err(Error::EmptyData("speaker decoder training manifest".into()));
    }
    for it in train.iter().chain(dev) {
        if it.speaker >= cfg.arch.speakers {
            return Err(Error::LabelOutOfRange { label: it.speaker, classes: cfg.arch.speakers });
        }
    }
    let mut model = SidModel::new(&cfg.arch, enc, rng)?;
    let net = model.net.clone();
    let lengths: Vec<usize> = train.iter().map(|e| e.reps.rows()).collect();
    let train_step = sid_step(&net, train);
    let dev_step = sid_step(&net, dev);
    let epochs = fit(&mut model.params, &cfg.train, &lengths, rng, train_step, |store| {
        if dev.is_empty() {
            Ok(None)
        } else {
            evaluate(store, dev.len(), &dev_step).map(Some)
        }
    })?;
    Ok((model, DecoderTrainLog { epochs }))
}

/// Eval-mode embedding of precomputed representations.
pub fn embed(model: &SidModel, reps: &Tensor, sad: Option<&SadMask>) -> Result<Vec<f64>> {
    let mut g = Graph::frozen(&model.params);
    let (emb, _) = sid_forward(&mut g, &model.net, reps, sad)?;
    Ok(g.value(emb).data().to_vec())
}

/// Audio to embedding: features, SAD, frozen encoder, masked pooling.
pub fn extract_embedding(
    sid: &SidModel,
    encoder: &ApcModel,
    audio: &AudioBuffer,
    frontend: &FrontendConfig,
) -> Result<Vec<f64>> {
    let feats = extract_features(audio, frontend)?;
    let mask = energy_sad(audio, frontend)?;
    if mask.num_speech() == 0 {
        return Err(Error::NoSpeech);
    }
    let reps = extract_representations(encoder, &feats)?.concat();
    embed(sid, &reps, Some(&mask))
}

#[cfg(test)]
mod tests;
