use super::{check_framing, window, AudioBuffer, FrontendConfig, SadMask, FRAME_LENGTH_SAMPLES, FRAME_SHIFT_SAMPLES};
use crate::error::Result;

/// Energy SAD on the windowed raw signal (no pre-emphasis).
///
/// A frame is speech iff its log energy is strictly above both the
/// utterance-mean log energy plus `sad_energy_offset` and the log energy
/// floor; the raw decisions are then majority-smoothed over
/// `±sad_context_frames` (strict majority of the frames inside the window).
pub fn energy_sad(audio: &AudioBuffer, config: &FrontendConfig) -> Result<SadMask> {
    config.validate()?;
    let t = check_framing(audio)?;
    let win = window(config.window, FRAME_LENGTH_SAMPLES);
    let log_floor = config.log_floor();
    let log_e: Vec<f64> = (0..t)
        .map(|i| {
            let start = i * FRAME_SHIFT_SAMPLES;
            let e: f64 = audio.samples()[start..start + FRAME_LENGTH_SAMPLES]
                .iter()
                .zip(&win)
                .map(|(x, w)| (x * w) * (x * w))
                .sum();
            e.ln().max(log_floor)
        })
        .collect();
    // shifted mean: exact when all energies are equal
    let base = log_e.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = base + log_e.iter().map(|e| e - base).sum::<f64>() / t as f64;
    let threshold = mean + config.sad_energy_offset;
    let raw: Vec<bool> = log_e
        .iter()
        .map(|e| *e > threshold && *e > log_floor)
        .collect();

    let ctx = config.sad_context_frames;
    let flags = (0..t)
        .map(|i| {
            let lo = i.saturating_sub(ctx);
            let hi = (i + ctx + 1).min(t);
            let speech = raw[lo..hi].iter().filter(|f| **f).count();
            2 * speech > hi - lo
        })
        .collect();
    Ok(SadMask::new(flags))
}
