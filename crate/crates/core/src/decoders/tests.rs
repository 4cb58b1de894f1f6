use rand::Rng;

use super::*;
use crate::gradcheck::check_params;
use crate::seeded_rng;

const LAYERS: usize = 3;
const HIDDEN: usize = 4;

fn enc(combination: LayerCombination) -> EncoderShape {
    EncoderShape { num_layers: LAYERS, hidden: HIDDEN, combination }
}

fn reps(t_len: usize, seed: u64) -> Tensor {
    let mut rng = seeded_rng(seed);
    let w = LAYERS * HIDDEN;
    Tensor::matrix(t_len, w, (0..t_len * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn pid_arch() -> PidArch {
    PidArch { blstm_hidden: 3, blstm_layers: 2, phonemes: 39, fc_dim: 5, phrases: 11 }
}

fn sid_arch() -> SidArch {
    SidArch { blstm_hidden: 3, blstm_layers: 2, embedding_dim: 600, speakers: 7 }
}

fn zero(store: &mut ParamStore) {
    for id in store.ids().collect::<Vec<_>>() {
        store.value_mut(id).data_mut().fill(0.0);
    }
}

fn jitter(store: &mut ParamStore, seed: u64) {
    let mut rng = seeded_rng(seed);
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
}

fn pid_outputs(m: &PidModel, x: &Tensor) -> (Tensor, Tensor) {
    let mut g = Graph::frozen(&m.params);
    let (lp, logits) = pid_forward(&mut g, &m.net, x).unwrap();
    (g.value(lp).clone(), g.value(logits).clone())
}

#[test]
fn pid_output_shapes_and_determinism() {
    let m = PidModel::new(&pid_arch(), enc(LayerCombination::ConcatAll), &mut seeded_rng(1)).unwrap();
    let x = reps(7, 2);
    let (lp, logits) = pid_outputs(&m, &x);
    assert_eq!(lp.shape(), &[7, 40]);
    assert_eq!(logits.shape(), &[1, 11]);
    assert_eq!(pid_outputs(&m, &x), (lp, logits));
}

#[test]
fn zero_weight_pid_is_uniform() {
    let mut m = PidModel::new(&pid_arch(), enc(LayerCombination::ConcatAll), &mut seeded_rng(1)).unwrap();
    zero(&mut m.params);
    let (lp, logits) = pid_outputs(&m, &reps(4, 3));
    let u = -(40f64).ln();
    assert!(lp.data().iter().all(|v| (v - u).abs() < 1e-12));
    assert!(logits.data().iter().all(|v| *v == 0.0));
    let s = pid_score(&m, &reps(4, 3), 6).unwrap();
    assert!((s + (11f64).ln()).abs() < 1e-12);
    assert!((s + 2.3979).abs() < 1e-4);
}

#[test]
fn pid_score_with_dominant_logit() {
    let mut m = PidModel::new(&pid_arch(), enc(LayerCombination::ConcatAll), &mut seeded_rng(1)).unwrap();
    zero(&mut m.params);
    m.params.value_mut(m.net.phrase_head.bias).data_mut()[3] = 10.0;
    let s = pid_score(&m, &reps(4, 3), 3).unwrap();
    let want = -(1.0 + 10.0 * (-10f64).exp()).ln();
    assert!((s - want).abs() < 1e-12);
    assert!((s + 4.54e-4).abs() < 1e-6);
    // with a single competing class the same margin gives -4.54e-5
    let arch = PidArch { phrases: 2, ..pid_arch() };
    let mut two = PidModel::new(&arch, enc(LayerCombination::ConcatAll), &mut seeded_rng(1)).unwrap();
    zero(&mut two.params);
    two.params.value_mut(two.net.phrase_head.bias).data_mut()[0] = 10.0;
    assert!((pid_score(&two, &reps(4, 3), 0).unwrap() + 4.54e-5).abs() < 1e-7);
    assert!(matches!(pid_score(&m, &reps(4, 3), 11), Err(Error::LabelOutOfRange { .. })));
}

#[test]
fn pid_posteriors_are_normalized() {
    let m = PidModel::new(&pid_arch(), enc(LayerCombination::LastLayer), &mut seeded_rng(4)).unwrap();
    let lp = pid_log_posteriors(&m, &reps(6, 5)).unwrap();
    let total: f64 = lp.iter().map(|v| v.exp()).sum();
    assert!((total.ln()).abs() < 1e-9);
}

fn loss_value(m: &PidModel, x: &Tensor, ph: Option<&LabelSequence>, phrase: usize, lambda: f64) -> f64 {
    let mut g = Graph::frozen(&m.params);
    let (l, _) = pid_loss(&mut g, &m.net, x, ph, phrase, lambda).unwrap();
    g.value(l).item()
}

#[test]
fn pid_loss_combines_ctc_and_weighted_ce() {
    let m = PidModel::new(&pid_arch(), enc(LayerCombination::ConcatAll), &mut seeded_rng(6)).unwrap();
    let x = reps(8, 7);
    let labels = LabelSequence::new(vec![3, 17, 17, 5], 39).unwrap();
    let (ctc, ce) = {
        let mut g = Graph::frozen(&m.params);
        let (lp, logits) = pid_forward(&mut g, &m.net, &x).unwrap();
        let c = ctc_loss(&mut g, lp, &labels).unwrap();
        let e = g.cross_entropy(logits, 2).unwrap();
        (g.value(c).item(), g.value(e).item())
    };
    assert_eq!(loss_value(&m, &x, Some(&labels), 2, 0.0), ctc);
    assert!((loss_value(&m, &x, Some(&labels), 2, 0.2) - (ctc + 0.2 * ce)).abs() < 1e-12);
    assert!((loss_value(&m, &x, None, 2, 0.2) - 0.2 * ce).abs() < 1e-15);
}

#[test]
fn pid_loss_rejects_bad_labels() {
    let m = PidModel::new(&pid_arch(), enc(LayerCombination::ConcatAll), &mut seeded_rng(6)).unwrap();
    let x = reps(3, 7);
    let mut g = Graph::frozen(&m.params);
    assert!(matches!(pid_loss(&mut g, &m.net, &x, None, 11, 0.2), Err(Error::LabelOutOfRange { .. })));
    let long = LabelSequence::new(vec![1, 1, 2], 39).unwrap();
    assert!(matches!(
        pid_loss(&mut g, &m.net, &x, Some(&long), 0, 0.2),
        Err(Error::InfeasibleAlignment { .. })
    ));
}

#[test]
fn pid_loss_gradient_through_both_branches() {
    for combination in [LayerCombination::ConcatAll, LayerCombination::WeightedSum] {
        let arch = PidArch { blstm_hidden: 2, blstm_layers: 1, phonemes: 3, fc_dim: 3, phrases: 4 };
        let mut m = PidModel::new(&arch, enc(combination), &mut seeded_rng(8)).unwrap();
        jitter(&mut m.params, 9);
        let x = reps(4, 10);
        let labels = LabelSequence::new(vec![0, 2], 3).unwrap();
        let err = check_params(&m.params, 8, |g| Ok(pid_loss(g, &m.net, &x, Some(&labels), 1, 0.2)?.0)).unwrap();
        assert!(err < 1e-4, "{combination}: max rel err {err}");
    }
}

fn sid_outputs(m: &SidModel, x: &Tensor, sad: Option<&SadMask>) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::frozen(&m.params);
    let (e, l) = sid_forward(&mut g, &m.net, x, sad).unwrap();
    (g.value(e).data().to_vec(), g.value(l).data().to_vec())
}

#[test]
fn sid_shapes_zero_weights_and_determinism() {
    let mut m = SidModel::new(&sid_arch(), enc(LayerCombination::ConcatAll), &mut seeded_rng(11)).unwrap();
    let x = reps(9, 12);
    let (e, l) = sid_outputs(&m, &x, None);
    assert_eq!((e.len(), l.len()), (600, 7));
    assert_eq!(sid_outputs(&m, &x, None), (e, l));
    assert_eq!(embed(&m, &x, None).unwrap().len(), 600);
    zero(&mut m.params);
    assert!(sid_outputs(&m, &x, None).0.iter().all(|v| *v == 0.0));
}

#[test]
fn sid_requires_two_speakers() {
    let arch = SidArch { speakers: 1, ..sid_arch() };
    assert!(SidModel::new(&arch, enc(LayerCombination::ConcatAll), &mut seeded_rng(1)).is_err());
}

#[test]
fn masking_acts_at_pooling_only() {
    let m = SidModel::new(&sid_arch(), enc(LayerCombination::ConcatAll), &mut seeded_rng(13)).unwrap();
    let x = reps(10, 14);
    let mask = SadMask::new((0..10).map(|t| (2..8).contains(&t)).collect());
    let a = embed(&m, &x, Some(&mask)).unwrap();
    assert_eq!(a, embed(&m, &x, Some(&mask)).unwrap());
    assert_ne!(a, embed(&m, &x, None).unwrap());
    let mut edited = x.clone();
    for v in &mut edited.data_mut()[..LAYERS * HIDDEN] {
        *v += 1.0;
    }
    assert_ne!(a, embed(&m, &edited, Some(&mask)).unwrap());
    let silent = SadMask::new(vec![false; 10]);
    assert!(matches!(embed(&m, &x, Some(&silent)), Err(Error::NoSpeech)));
}

#[test]
fn sid_cross_entropy_gradient() {
    let arch = SidArch { blstm_hidden: 2, blstm_layers: 2, embedding_dim: 3, speakers: 3 };
    let mut m = SidModel::new(&arch, enc(LayerCombination::LastLayer), &mut seeded_rng(15)).unwrap();
    jitter(&mut m.params, 16);
    let x = reps(5, 17);
    let err = check_params(&m.params, 8, |g| {
        let (_, logits) = sid_forward(g, &m.net, &x, None)?;
        g.cross_entropy(logits, 2)
    })
    .unwrap();
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn chunking_rule() {
    assert_eq!(chunk_segments(750, 300, 100), vec![(0, 300), (300, 300), (600, 150)]);
    assert_eq!(chunk_segments(650, 300, 100), vec![(0, 300), (300, 300)]);
    assert_eq!(chunk_segments(700, 300, 100), vec![(0, 300), (300, 300), (600, 100)]);
    assert_eq!(chunk_segments(250, 300, 100), vec![(0, 250)]);
    assert_eq!(chunk_segments(40, 300, 100), vec![(0, 40)]);
    assert!(chunk_segments(0, 300, 100).is_empty());
}

#[test]
fn checkpoints_rebind_for_every_combination() {
    for c in [LayerCombination::ConcatAll, LayerCombination::LastLayer, LayerCombination::WeightedSum] {
        let p = PidModel::new(&pid_arch(), enc(c), &mut seeded_rng(18)).unwrap();
        let back = PidModel::from_params(ParamStore::from_bytes(&p.params.to_bytes()).unwrap(), enc(c)).unwrap();
        let x = reps(5, 19);
        assert_eq!(pid_outputs(&p, &x), pid_outputs(&back, &x));
        let s = SidModel::new(&sid_arch(), enc(c), &mut seeded_rng(20)).unwrap();
        let back = SidModel::from_params(ParamStore::from_bytes(&s.params.to_bytes()).unwrap(), enc(c)).unwrap();
        assert_eq!(sid_outputs(&s, &x, None), sid_outputs(&back, &x, None));
    }
    let p = PidModel::new(&pid_arch(), enc(LayerCombination::ConcatAll), &mut seeded_rng(18)).unwrap();
    assert!(PidModel::from_params(p.params.clone(), enc(LayerCombination::WeightedSum)).is_err());
    assert!(PidModel::from_params(p.params, enc(LayerCombination::LastLayer)).is_err());
}

#[test]
fn training_rejects_out_of_range_labels() {
    let cfg = PidConfig { arch: pid_arch(), ..PidConfig::default() };
    let bad = [PidExample { reps: reps(4, 1), phonemes: None, phrase: 11 }];
    assert!(train_pid(&bad, &[], enc(LayerCombination::ConcatAll), &cfg, &mut seeded_rng(1)).is_err());
    assert!(matches!(
        train_pid(&[], &[], enc(LayerCombination::ConcatAll), &cfg, &mut seeded_rng(1)),
        Err(Error::EmptyData(_))
    ));
    let scfg = SidConfig { arch: sid_arch(), ..SidConfig::default() };
    let bad = [SidExample { reps: reps(4, 1), speaker: 7 }];
    assert!(train_sid(&bad, &[], enc(LayerCombination::ConcatAll), &scfg, &mut seeded_rng(1)).is_err());
}

#[test]
fn small_decoders_learn_separable_classes() {
    // class k has frames centred on a class-specific pattern
    let make = |class: usize, seed: u64| {
        let mut rng = seeded_rng(seed);
        let w = LAYERS * HIDDEN;
        let data = (0..6 * w)
            .map(|j| if j % w == class { 1.0 } else { 0.0 } + rng.random_range(-0.1..0.1))
            .collect();
        Tensor::matrix(6, w, data).unwrap()
    };
    let train: Vec<SidExample> = (0..12).map(|i| SidExample { reps: make(i % 3, i as u64), speaker: i % 3 }).collect();
    let cfg = SidConfig {
        arch: SidArch { blstm_hidden: 4, blstm_layers: 1, embedding_dim: 6, speakers: 3 },
        train: TrainConfig { epochs: 25, learning_rate: 0.02, anneal: true, batch_size: 4, optimizer: OptimizerKind::Adam },
        ..SidConfig::default()
    };
    let (_, log) = train_sid(&train, &train[..3], enc(LayerCombination::ConcatAll), &cfg, &mut seeded_rng(2)).unwrap();
    let last = log.epochs.last().unwrap();
    assert_eq!(last.train_accuracy, Some(1.0), "{}", last.line());
    assert_eq!(last.lr, 0.01);
}
