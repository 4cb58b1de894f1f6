//! Audio front end: WAV input, log-mel filterbanks, per-utterance CMVN and
//! an energy-based speech activity detector.

mod cmvn;
mod fbank;
mod sad;
mod wav;

pub use cmvn::{apply_cmvn, CMVN_VAR_FLOOR};
pub use fbank::{compute_fbank, hz_to_mel, mel_bin_edges_hz, mel_to_hz, MelBank};
pub use sad::energy_sad;
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LENGTH_MS: usize = 25;
pub const FRAME_SHIFT_MS: usize = 10;
pub const FRAME_LENGTH_SAMPLES: usize = SAMPLE_RATE as usize * FRAME_LENGTH_MS / 1000;
pub const FRAME_SHIFT_SAMPLES: usize = SAMPLE_RATE as usize * FRAME_SHIFT_MS / 1000;

/// Mono 16 kHz audio with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::Format(format!(
                "sample rate: expected {SAMPLE_RATE} Hz, got {sample_rate} Hz"
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Format("non-finite audio sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// `T × D` features, row per 10 ms frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    num_frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(num_frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if num_frames * dim != data.len() {
            return Err(Error::shape("feature_matrix", &[num_frames, dim], &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature_matrix"));
        }
        Ok(Self {
            num_frames,
            dim,
            data,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_shift_ms(&self) -> usize {
        FRAME_SHIFT_MS
    }

    pub fn frame_length_ms(&self) -> usize {
        FRAME_LENGTH_MS
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.num_frames, self.dim, self.data.clone()).expect("consistent shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (r, c) = t.dims2();
        Self::new(r, c, t.data().to_vec())
    }

    /// Frames `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            num_frames: len,
            dim: self.dim,
            data: self.data[start * self.dim..(start + len) * self.dim].to_vec(),
        }
    }
}

/// Per-frame speech flags aligned with a [`FeatureMatrix`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SadMask {
    flags: Vec<bool>,
}

impl SadMask {
    pub fn new(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    pub fn all(n: usize) -> Self {
        Self {
            flags: vec![true; n],
        }
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn num_speech(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn speech_indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.then_some(i))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowKind {
    Hamming,
    /// `(0.5 - 0.5 cos(2πn/(N-1)))^0.85`
    Povey,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontendConfig {
    pub num_mel_bins: usize,
    pub pre_emphasis: f64,
    pub window: WindowKind,
    pub fft_size: usize,
    pub mel_low_hz: f64,
    pub mel_high_hz: f64,
    /// Linear-energy floor; log outputs are at least `ln(energy_floor)`.
    pub energy_floor: f64,
    /// Added to the utterance-mean log energy to form the SAD threshold.
    pub sad_energy_offset: f64,
    /// Majority smoothing half-window in frames.
    pub sad_context_frames: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            num_mel_bins: 40,
            pre_emphasis: 0.97,
            window: WindowKind::Povey,
            fft_size: 512,
            mel_low_hz: 20.0,
            mel_high_hz: 7600.0,
            energy_floor: 1e-10,
            sad_energy_offset: -0.5,
            sad_context_frames: 5,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        if !(0.0 < self.mel_low_hz && self.mel_low_hz < self.mel_high_hz && self.mel_high_hz <= nyquist) {
            return Err(Error::InvalidArgument(format!(
                "mel band must satisfy 0 < low < high <= {nyquist}, got {}..{}",
                self.mel_low_hz, self.mel_high_hz
            )));
        }
        if self.fft_size < FRAME_LENGTH_SAMPLES {
            return Err(Error::InvalidArgument(format!(
                "fft_size {} smaller than frame length {FRAME_LENGTH_SAMPLES}",
                self.fft_size
            )));
        }
        if self.num_mel_bins == 0 {
            return Err(Error::InvalidArgument("num_mel_bins must be positive".into()));
        }
        if !(self.energy_floor > 0.0) {
            return Err(Error::InvalidArgument("energy_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn log_floor(&self) -> f64 {
        self.energy_floor.ln()
    }
}

/// `floor((n - 400) / 160) + 1`, or 0 when shorter than one frame.
pub fn num_frames(num_samples: usize) -> usize {
    if num_samples < FRAME_LENGTH_SAMPLES {
        0
    } else {
        (num_samples - FRAME_LENGTH_SAMPLES) / FRAME_SHIFT_SAMPLES + 1
    }
}

pub(crate) fn window(kind: WindowKind, n: usize) -> Vec<f64> {
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / denom;
            match kind {
                WindowKind::Hamming => 0.54 - 0.46 * a.cos(),
                WindowKind::Povey => (0.5 - 0.5 * a.cos()).powf(0.85),
            }
        })
        .collect()
}

pub(crate) fn check_framing(audio: &AudioBuffer) -> Result<usize> {
    let t = num_frames(audio.len());
    if t == 0 {
        return Err(Error::EmptyInput(format!(
            "{} samples is shorter than one {FRAME_LENGTH_SAMPLES}-sample frame",
            audio.len()
        )));
    }
    Ok(t)
}

/// fbank → CMVN for one utterance.
pub fn extract_features(audio: &AudioBuffer, config: &FrontendConfig) -> Result<FeatureMatrix> {
    apply_cmvn(&compute_fbank(audio, config)?)
}

#[cfg(test)]
mod tests;
