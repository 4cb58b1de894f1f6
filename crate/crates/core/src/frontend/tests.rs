use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;
use crate::error::Error;

fn tone(freq: f64, n: usize, amp: f64) -> Vec<f64> {
    (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
        .collect()
}

fn audio(samples: Vec<f64>) -> AudioBuffer {
    AudioBuffer::new(samples, SAMPLE_RATE).unwrap()
}

fn write_raw_wav(path: &std::path::Path, rate: u32, samples: &[i16]) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for s in samples {
        w.write_sample(*s).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn read_wav_silence_and_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("zeros.wav");
    write_raw_wav(&p, 16_000, &vec![0i16; 16_000]);
    let a = read_wav(&p).unwrap();
    assert_eq!(a.len(), 16_000);
    assert!(a.samples().iter().all(|s| *s == 0.0));

    let p = dir.path().join("min.wav");
    write_raw_wav(&p, 16_000, &[-32768]);
    assert_eq!(read_wav(&p).unwrap().samples(), &[-1.0]);
}

#[test]
fn read_wav_rejects_other_rates_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("8k.wav");
    write_raw_wav(&p, 8_000, &[0; 800]);
    let err = read_wav(&p).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Format(_)));
    assert!(msg.contains("16000") && msg.contains("8000"), "{msg}");

    let p = dir.path().join("trunc.wav");
    write_raw_wav(&p, 16_000, &[1000; 1000]);
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
    assert!(matches!(read_wav(&p), Err(Error::Io { .. })));
}

#[test]
fn write_then_read_preserves_pcm() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("rt.wav");
    let a = audio(vec![0.5, -0.25, 0.0, -1.0]);
    write_wav(&p, &a).unwrap();
    assert_eq!(read_wav(&p).unwrap(), a);
}

#[test]
fn fbank_of_silence_sits_at_floor() {
    let cfg = FrontendConfig::default();
    let f = compute_fbank(&audio(vec![0.0; 16_000]), &cfg).unwrap();
    assert_eq!(f.num_frames(), 98);
    assert_eq!(f.dim(), 40);
    assert!(f.data().iter().all(|v| *v == cfg.log_floor()));
}

#[test]
fn fbank_sine_peaks_in_the_bin_containing_its_frequency() {
    let cfg = FrontendConfig::default();
    let f = compute_fbank(&audio(tone(1000.0, 16_000, 1.0)), &cfg).unwrap();
    // edges recomputed here from the mel formula, independent of the bank
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let (lo, hi) = (mel(20.0), mel(7600.0));
    let edges: Vec<f64> = (0..42).map(|i| inv(lo + (hi - lo) * i as f64 / 41.0)).collect();
    for t in 0..f.num_frames() {
        let row = f.frame(t);
        let arg = (0..40).max_by(|a, b| row[*a].total_cmp(&row[*b])).unwrap();
        assert!(
            edges[arg] <= 1000.0 && 1000.0 <= edges[arg + 2],
            "frame {t}: argmax bin {arg} spans {}..{}",
            edges[arg],
            edges[arg + 2]
        );
    }
    assert_eq!(mel_bin_edges_hz(&cfg).len(), 42);
}

#[test]
fn fbank_rejects_short_audio() {
    let cfg = FrontendConfig::default();
    assert!(matches!(
        compute_fbank(&audio(vec![0.0; 399]), &cfg),
        Err(Error::EmptyInput(_))
    ));
    assert_eq!(compute_fbank(&audio(vec![0.0; 400]), &cfg).unwrap().num_frames(), 1);
}

#[test]
fn fbank_is_deterministic() {
    let cfg = FrontendConfig::default();
    let a = audio(tone(440.0, 5000, 0.3));
    assert_eq!(compute_fbank(&a, &cfg).unwrap(), compute_fbank(&a, &cfg).unwrap());
}

#[test]
fn config_validation() {
    let mut c = FrontendConfig::default();
    c.mel_high_hz = 9000.0;
    assert!(c.validate().is_err());
    let mut c = FrontendConfig::default();
    c.fft_size = 256;
    assert!(c.validate().is_err());
    let mut c = FrontendConfig::default();
    c.mel_low_hz = 0.0;
    assert!(c.validate().is_err());
}

#[test]
fn cmvn_examples() {
    let f = FeatureMatrix::new(2, 2, vec![1.0, 5.0, 3.0, 5.0]).unwrap();
    let n = apply_cmvn(&f).unwrap();
    assert_eq!(n.data(), &[-1.0, 0.0, 1.0, 0.0]);
    let once = apply_cmvn(&FeatureMatrix::new(3, 1, vec![0.2, 7.0, -1.5]).unwrap()).unwrap();
    let twice = apply_cmvn(&once).unwrap();
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(matches!(
        apply_cmvn(&FeatureMatrix::new(1, 2, vec![1.0, 2.0]).unwrap()),
        Err(Error::InsufficientFrames { need: 2, got: 1 })
    ));
}

#[test]
fn sad_on_silence_and_constant_tone() {
    let cfg = FrontendConfig::default();
    let m = energy_sad(&audio(vec![0.0; 16_000]), &cfg).unwrap();
    assert_eq!(m.len(), 98);
    assert_eq!(m.num_speech(), 0);

    // a tone whose period divides the frame shift gives identical frame energies
    let period = tone(1000.0, 16, 1.0);
    let a = audio(period.iter().copied().cycle().take(16_000).collect());
    assert_eq!(energy_sad(&a, &cfg).unwrap().num_speech(), 98);
    let strict = FrontendConfig {
        sad_energy_offset: 0.0,
        ..cfg.clone()
    };
    let m = energy_sad(&a, &strict).unwrap();
    assert_eq!(m.num_speech(), 0, "equal energies never exceed their own mean");
}

#[test]
fn sad_on_tone_then_silence() {
    let cfg = FrontendConfig::default();
    let mut s = tone(1000.0, 8000, 1.0);
    s.extend(vec![0.0; 8000]);
    let m = energy_sad(&audio(s), &cfg).unwrap();
    let ctx = cfg.sad_context_frames;
    // frames fully inside the tone end at sample 8000: start + 400 <= 8000
    let last_tone = (8000 - 400) / 160;
    // first frame fully in silence starts at or after 8000
    let first_silence = 8000 / 160;
    for (t, f) in m.flags().iter().enumerate() {
        if t + ctx <= last_tone {
            assert!(*f, "frame {t} should be speech");
        } else if t >= first_silence + ctx {
            assert!(!*f, "frame {t} should be silence");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn frame_count_formula(n in 400usize..6000) {
        let cfg = FrontendConfig::default();
        let a = audio(tone(300.0, n, 0.1));
        let f = compute_fbank(&a, &cfg).unwrap();
        prop_assert_eq!(f.num_frames(), (n - 400) / 160 + 1);
        prop_assert_eq!(energy_sad(&a, &cfg).unwrap().len(), f.num_frames());
    }

    #[test]
    fn cmvn_statistics(vals in proptest::collection::vec(-50.0f64..50.0, 12..60)) {
        let t = vals.len() / 3;
        let f = FeatureMatrix::new(t, 3, vals[..t * 3].to_vec()).unwrap();
        let n = apply_cmvn(&f).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = (0..t).map(|i| n.frame(i)[j]).collect();
            let raw: Vec<f64> = (0..t).map(|i| f.frame(i)[j]).collect();
            let mean = col.iter().sum::<f64>() / t as f64;
            prop_assert!(mean.abs() < 1e-6);
            let rm = raw.iter().sum::<f64>() / t as f64;
            let rv = raw.iter().map(|x| (x - rm).powi(2)).sum::<f64>() / t as f64;
            if rv >= CMVN_VAR_FLOOR {
                let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t as f64;
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
        }
    }
}
