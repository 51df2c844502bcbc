//! WAV input/output at the working sample rate.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::Waveform;

pub const TARGET_RATE: u32 = 16_000;

/// Reads a PCM or float WAV, downmixes to mono and resamples to 16 kHz.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
    };
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / frame.len() as f64)
        .collect();
    Ok(Waveform::new(resample_linear(&mono, spec.sample_rate, TARGET_RATE), TARGET_RATE))
}

/// Linear-interpolation resampling.
pub fn resample_linear(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let ratio = from as f64 / to as f64;
    let n_out = ((x.len() as f64) / ratio).floor().max(1.0) as usize;
    (0..n_out)
        .map(|i| {
            let t = i as f64 * ratio;
            let j = t.floor() as usize;
            let frac = t - j as f64;
            let a = x[j.min(x.len() - 1)];
            let b = x[(j + 1).min(x.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

/// Samples between `onset_s` and `offset_s`, clipped to the signal.
pub fn slice_seconds(w: &Waveform, onset_s: f64, offset_s: f64) -> Waveform {
    let sr = w.sample_rate as f64;
    let a = ((onset_s * sr).round() as usize).min(w.samples.len());
    let b = ((offset_s * sr).round() as usize).clamp(a, w.samples.len());
    Waveform::new(w.samples[a..b].to_vec(), w.sample_rate)
}

/// Writes 16-bit mono PCM, clipping to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut out = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        out.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    out.finalize()?;
    Ok(())
}
