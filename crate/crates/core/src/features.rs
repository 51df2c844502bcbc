//! Segment-level acoustic features.
//!
//! Each event is cut into overlapping windows. Per window we compute a
//! log-frequency filter bank, its first and second temporal derivatives
//! (taken across the segment sequence), and a handful of scalar descriptors:
//! zero-crossing rate, short-time energy, four sub-band energies, spectral
//! centroid and spectral bandwidth.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset added before taking the log of filter-bank energies.
pub const LOG_EPSILON: f64 = 1e-10;
/// Number of equal-width linear sub-bands.
pub const N_SUBBANDS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    pub values: Vec<f64>,
    pub segment_index: usize,
}

impl SegmentFeatures {
    pub fn zeros(dim: usize, segment_index: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            segment_index,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub win_ms: f64,
    pub overlap_ms: f64,
    pub n_bands: usize,
    /// Lowest filter-bank edge frequency in Hz.
    pub f_min: f64,
    /// Apply a Hamming window before the FFT.
    pub hamming: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            win_ms: 50.0,
            overlap_ms: 10.0,
            n_bands: 16,
            f_min: 64.0,
            hamming: true,
        }
    }
}

impl FeatureConfig {
    /// Filter bank, its two derivatives, and 8 scalars.
    pub fn dimension(&self) -> usize {
        3 * self.n_bands + 4 + N_SUBBANDS
    }

    pub fn hop_ms(&self) -> f64 {
        self.win_ms - self.overlap_ms
    }

    /// Window and hop lengths in samples.
    pub fn frame_geometry(&self, sample_rate: u32) -> Result<(usize, usize)> {
        frame_geometry(sample_rate, self.win_ms, self.overlap_ms)
    }
}

fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    (ms * sample_rate as f64 / 1000.0).round() as usize
}

fn frame_geometry(sample_rate: u32, win_ms: f64, overlap_ms: f64) -> Result<(usize, usize)> {
    if !(overlap_ms >= 0.0 && win_ms > overlap_ms) {
        return Err(Error::InvalidWindow { win_ms, overlap_ms });
    }
    let win = ms_to_samples(win_ms, sample_rate);
    let hop = ms_to_samples(win_ms - overlap_ms, sample_rate);
    if win < 2 || hop == 0 {
        return Err(Error::InvalidWindow { win_ms, overlap_ms });
    }
    Ok((win, hop))
}

/// Number of full windows that fit into `len` samples.
pub fn segment_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win {
        0
    } else {
        (len - win) / hop + 1
    }
}

/// Cuts the waveform into full windows; a trailing partial window is dropped.
pub fn segment_signal(w: &Waveform, win_ms: f64, overlap_ms: f64) -> Result<Vec<&[f64]>> {
    let (win, hop) = frame_geometry(w.sample_rate, win_ms, overlap_ms)?;
    let len = w.samples.len();
    if len < win {
        return Err(Error::WaveformTooShort { len, window: win });
    }
    Ok((0..segment_count(len, win, hop))
        .map(|i| &w.samples[i * hop..i * hop + win])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameScalars {
    pub zcr: f64,
    pub short_time_energy: f64,
    pub subband_energy: [f64; N_SUBBANDS],
    pub spectral_centroid: f64,
    pub spectral_bandwidth: f64,
}

/// Precomputed FFT plan, analysis window and filter-bank weights for one frame length.
pub struct SpectralAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    sample_rate: u32,
    /// Sparse triangular weights per band: (bin, weight).
    bands: Vec<Vec<(usize, f64)>>,
}

impl SpectralAnalyzer {
    pub fn new(frame_len: usize, sample_rate: u32, n_bands: usize, f_min: f64, hamming: bool) -> Self {
        assert!(frame_len >= 2, "frame must hold at least two samples");
        assert!(n_bands >= 1, "need at least one band");
        let fft = FftPlanner::new().plan_fft_forward(frame_len);
        let window = if hamming {
            let denom = (frame_len - 1) as f64;
            (0..frame_len)
                .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos())
                .collect()
        } else {
            vec![1.0; frame_len]
        };
        let bands = triangular_bands(frame_len, sample_rate, n_bands, f_min);
        Self {
            fft,
            window,
            sample_rate,
            bands,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.window.len()
    }

    fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.frame_len() as f64
    }

    /// One-sided power spectrum `|X_k|^2 / len`, `k = 0..=len/2`.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        assert_eq!(frame.len(), self.frame_len(), "frame length mismatch");
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(&s, &w)| Complex::new(s * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        let scale = 1.0 / frame.len() as f64;
        buf[..=frame.len() / 2]
            .iter()
            .map(|c| c.norm_sqr() * scale)
            .collect()
    }

    /// Filter-bank energies before the log.
    pub fn band_energies(&self, power: &[f64]) -> Vec<f64> {
        self.bands
            .iter()
            .map(|band| band.iter().map(|&(k, w)| w * power[k]).sum())
            .collect()
    }

    pub fn log_filter_bank(&self, frame: &[f64]) -> Vec<f64> {
        let power = self.power_spectrum(frame);
        self.band_energies(&power)
            .into_iter()
            .map(|e| (e + LOG_EPSILON).ln())
            .collect()
    }

    pub fn frame_scalars(&self, frame: &[f64]) -> FrameScalars {
        let power = self.power_spectrum(frame);
        self.scalars_from_power(frame, &power)
    }

    fn scalars_from_power(&self, frame: &[f64], power: &[f64]) -> FrameScalars {
        let crossings = frame
            .windows(2)
            .filter(|p| (p[0] >= 0.0) != (p[1] >= 0.0))
            .count();
        let zcr = crossings as f64 / (frame.len() - 1) as f64;
        let short_time_energy = frame.iter().map(|s| s * s).sum::<f64>() / frame.len() as f64;

        let nyquist = self.sample_rate as f64 / 2.0;
        let band_width = nyquist / N_SUBBANDS as f64;
        let mut subband_energy = [0.0; N_SUBBANDS];
        let mut total = 0.0;
        let mut weighted = 0.0;
        for (k, &p) in power.iter().enumerate() {
            let f = self.bin_frequency(k);
            let band = ((f / band_width) as usize).min(N_SUBBANDS - 1);
            subband_energy[band] += p;
            total += p;
            weighted += f * p;
        }
        let (spectral_centroid, spectral_bandwidth) = if total > 0.0 {
            let c = weighted / total;
            let var = power
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let d = self.bin_frequency(k) - c;
                    d * d * p
                })
                .sum::<f64>()
                / total;
            (c, var.sqrt())
        } else {
            (0.0, 0.0)
        };
        FrameScalars {
            zcr,
            short_time_energy,
            subband_energy,
            spectral_centroid,
            spectral_bandwidth,
        }
    }
}

/// Triangular filters with log-spaced edges over `[f_min, sample_rate / 2]`.
fn triangular_bands(frame_len: usize, sample_rate: u32, n_bands: usize, f_min: f64) -> Vec<Vec<(usize, f64)>> {
    let nyquist = sample_rate as f64 / 2.0;
    let lo = if f_min > 0.0 && f_min < nyquist { f_min } else { nyquist / 100.0 };
    let ratio = (nyquist / lo).ln() / (n_bands + 1) as f64;
    let edges: Vec<f64> = (0..n_bands + 2)
        .map(|i| lo * (ratio * i as f64).exp())
        .collect();
    let n_bins = frame_len / 2 + 1;
    let bin_hz = sample_rate as f64 / frame_len as f64;
    (0..n_bands)
        .map(|b| {
            let (left, center, right) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..n_bins)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f > left && f <= center {
                        (f - left) / (center - left)
                    } else if f > center && f < right {
                        (right - f) / (right - center)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect()
        })
        .collect()
}

/// Log filter-bank coefficients of one frame (Hamming window, default `f_min`).
pub fn log_filter_bank(frame: &[f64], n_bands: usize, sample_rate: u32) -> Vec<f64> {
    let cfg = FeatureConfig::default();
    SpectralAnalyzer::new(frame.len(), sample_rate, n_bands, cfg.f_min, cfg.hamming).log_filter_bank(frame)
}

pub fn frame_scalars(frame: &[f64], sample_rate: u32) -> FrameScalars {
    let cfg = FeatureConfig::default();
    SpectralAnalyzer::new(frame.len(), sample_rate, 1, cfg.f_min, cfg.hamming).frame_scalars(frame)
}

const DELTA_WINDOW: isize = 2;

/// Regression-window deltas (window +-2) across the sequence, edges replicated.
/// Order 2 applies the delta to the order-1 output.
pub fn temporal_derivatives(seq: &[Vec<f64>], order: u32) -> Vec<Vec<f64>> {
    assert!(!seq.is_empty(), "derivatives of an empty sequence");
    assert!(order == 1 || order == 2, "order must be 1 or 2");
    let first = delta(seq);
    if order == 1 {
        first
    } else {
        delta(&first)
    }
}

fn delta(seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = seq.len() as isize;
    let dim = seq[0].len();
    let norm: f64 = 2.0 * (1..=DELTA_WINDOW).map(|k| (k * k) as f64).sum::<f64>();
    let at = |i: isize| &seq[i.clamp(0, n - 1) as usize];
    (0..n)
        .map(|t| {
            (0..dim)
                .map(|j| {
                    (1..=DELTA_WINDOW)
                        .map(|k| k as f64 * (at(t + k)[j] - at(t - k)[j]))
                        .sum::<f64>()
                        / norm
                })
                .collect()
        })
        .collect()
}

/// Full per-segment feature vectors of an event.
pub fn extract_event_features(w: &Waveform, cfg: &FeatureConfig) -> Result<Vec<SegmentFeatures>> {
    let frames = segment_signal(w, cfg.win_ms, cfg.overlap_ms)?;
    let analyzer = SpectralAnalyzer::new(frames[0].len(), w.sample_rate, cfg.n_bands, cfg.f_min, cfg.hamming);

    let mut bank = Vec::with_capacity(frames.len());
    let mut scalars = Vec::with_capacity(frames.len());
    for frame in &frames {
        let power = analyzer.power_spectrum(frame);
        bank.push(
            analyzer
                .band_energies(&power)
                .into_iter()
                .map(|e| (e + LOG_EPSILON).ln())
                .collect::<Vec<_>>(),
        );
        scalars.push(analyzer.scalars_from_power(frame, &power));
    }
    let d1 = temporal_derivatives(&bank, 1);
    let d2 = delta(&d1);

    Ok(bank
        .into_iter()
        .zip(d1)
        .zip(d2)
        .zip(scalars)
        .enumerate()
        .map(|(i, (((fb, d1), d2), s))| {
            let mut values = Vec::with_capacity(cfg.dimension());
            values.extend(fb);
            values.extend(d1);
            values.extend(d2);
            values.push(s.zcr);
            values.push(s.short_time_energy);
            values.extend(s.subband_energy);
            values.push(s.spectral_centroid);
            values.push(s.spectral_bandwidth);
            SegmentFeatures {
                values,
                segment_index: i,
            }
        })
        .collect())
}
