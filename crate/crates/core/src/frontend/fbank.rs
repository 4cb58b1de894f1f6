use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{
    check_framing, window, AudioBuffer, FeatureMatrix, FrontendConfig, FRAME_LENGTH_SAMPLES,
    FRAME_SHIFT_SAMPLES, SAMPLE_RATE,
};
use crate::error::Result;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// The `num_mel_bins + 2` triangle edge frequencies in Hz: bin `m` spans
/// `[edges[m], edges[m + 2]]` and peaks at `edges[m + 1]`.
pub fn mel_bin_edges_hz(config: &FrontendConfig) -> Vec<f64> {
    let lo = hz_to_mel(config.mel_low_hz);
    let hi = hz_to_mel(config.mel_high_hz);
    let n = config.num_mel_bins + 1;
    (0..=n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
        .collect()
}

/// Triangular filters evaluated on the mel axis over FFT bins `0..=fft/2`.
#[derive(Clone, Debug)]
pub struct MelBank {
    /// Per filter: first FFT bin with non-zero weight, then the weights.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelBank {
    pub fn new(config: &FrontendConfig) -> Self {
        let lo = hz_to_mel(config.mel_low_hz);
        let hi = hz_to_mel(config.mel_high_hz);
        let n = config.num_mel_bins + 1;
        let edge = |i: usize| lo + (hi - lo) * i as f64 / n as f64;
        let bins = config.fft_size / 2 + 1;
        let filters = (0..config.num_mel_bins)
            .map(|m| {
                let (left, center, right) = (edge(m), edge(m + 1), edge(m + 2));
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..bins {
                    let mel = hz_to_mel(k as f64 * SAMPLE_RATE as f64 / config.fft_size as f64);
                    let w = if mel > left && mel < center {
                        (mel - left) / (center - left)
                    } else if mel >= center && mel < right {
                        (right - mel) / (right - center)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first.get_or_insert(k);
                    }
                    if first.is_some() {
                        weights.push(w);
                    }
                }
                while weights.last() == Some(&0.0) {
                    weights.pop();
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        Self { filters }
    }

    pub fn num_bins(&self) -> usize {
        self.filters.len()
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (first, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&power[*first..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Pre-emphasis → window → |FFT|² → mel filters → log (floored).
pub fn compute_fbank(audio: &AudioBuffer, config: &FrontendConfig) -> Result<FeatureMatrix> {
    config.validate()?;
    let t = check_framing(audio)?;
    let bank = MelBank::new(config);
    let win = window(config.window, FRAME_LENGTH_SAMPLES);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(config.fft_size);
    let log_floor = config.log_floor();
    let d = config.num_mel_bins;

    let mut data = vec![0.0; t * d];
    let mut frame = vec![0.0; FRAME_LENGTH_SAMPLES];
    let mut buf = vec![Complex::new(0.0, 0.0); config.fft_size];
    let mut power = vec![0.0; config.fft_size / 2 + 1];
    let mut mel = vec![0.0; d];
    for i in 0..t {
        let start = i * FRAME_SHIFT_SAMPLES;
        frame.copy_from_slice(&audio.samples()[start..start + FRAME_LENGTH_SAMPLES]);
        for j in (1..frame.len()).rev() {
            frame[j] -= config.pre_emphasis * frame[j - 1];
        }
        frame[0] -= config.pre_emphasis * frame[0];
        for (b, (x, w)) in buf.iter_mut().zip(frame.iter().zip(&win)) {
            *b = Complex::new(x * w, 0.0);
        }
        buf[FRAME_LENGTH_SAMPLES..].fill(Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        bank.apply(&power, &mut mel);
        for (o, e) in data[i * d..(i + 1) * d].iter_mut().zip(&mel) {
            *o = e.ln().max(log_floor);
        }
    }
    FeatureMatrix::new(t, d, data)
}
