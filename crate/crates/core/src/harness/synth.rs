//! Synthetic event classes built from ordered sound units.
//!
//! Each class is a fixed sequence of units separated by silences. Units are
//! either tonal (a short upward chirp) or noise-like (a dense random-phase
//! multitone with a decaying envelope). In shared-histogram mode every class
//! uses the same units, only in a different order, so a class can only be
//! told apart by where each unit occurs inside the event.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestEvent};
use super::wav::write_wav;
use crate::error::{Error, Result};
use crate::features::Waveform;
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub events_per_class: usize,
    pub units_per_class: usize,
    pub unit_ms: f64,
    /// Silence before, between and after units.
    pub gap_ms: f64,
    /// Standard deviation of the additive white noise.
    pub noise_sigma: f64,
    /// Relative jitter of every unit and gap duration (uniform in `±jitter`).
    pub duration_jitter: f64,
    pub shared_histogram: bool,
    /// Fraction of each class's events assigned to the training split.
    pub train_fraction: f64,
    pub sample_rate: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            events_per_class: 100,
            units_per_class: 5,
            unit_ms: 200.0,
            gap_ms: 240.0,
            noise_sigma: 0.01,
            duration_jitter: 0.1,
            shared_histogram: true,
            train_fraction: 0.5,
            sample_rate: 16_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum UnitKind {
    Chirp,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub kind: UnitKind,
    pub freq: f64,
    /// Phases of the multitone partials (noise units only).
    pub phases: Vec<f64>,
}

const PARTIALS: usize = 24;
const FADE_S: f64 = 0.005;

impl Unit {
    /// Renders `len` samples; the shape scales with the duration.
    pub fn render(&self, len: usize, sr: u32) -> Vec<f64> {
        let sr = sr as f64;
        let dur = len as f64 / sr;
        (0..len)
            .map(|i| {
                let t = i as f64 / sr;
                let u = if dur > 0.0 { t / dur } else { 0.0 };
                let fade = (t / FADE_S).min((dur - t) / FADE_S).clamp(0.0, 1.0);
                let v = match self.kind {
                    UnitKind::Chirp => {
                        // Linear sweep from f to 1.5 f over the unit.
                        let phase = 2.0 * PI * self.freq * (t + 0.25 * t * t / dur.max(1e-9));
                        0.5 * phase.sin()
                    }
                    UnitKind::Noise => {
                        let sum: f64 = self
                            .phases
                            .iter()
                            .enumerate()
                            .map(|(k, ph)| (2.0 * PI * self.freq * (1.0 + 0.6 * k as f64 / PARTIALS as f64) * t + ph).sin())
                            .sum();
                        0.5 * (1.0 - 0.7 * u) * sum / (PARTIALS as f64).sqrt()
                    }
                };
                v * fade
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEvent {
    pub class: usize,
    pub train: bool,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub class_names: Vec<String>,
    pub units: Vec<Unit>,
    /// Unit ids per class, in temporal order.
    pub orders: Vec<Vec<usize>>,
    pub events: Vec<SynthEvent>,
}

fn make_units(n: usize, seed: u64) -> Vec<Unit> {
    let mut rng = rng::stream(seed, tag::SYNTH, u64::MAX);
    (0..n)
        .map(|i| {
            // Log-spaced base frequencies between 300 Hz and 4 kHz.
            let freq = 300.0 * (4000.0f64 / 300.0).powf(i as f64 / (n.max(2) - 1) as f64);
            let kind = if i % 2 == 0 { UnitKind::Chirp } else { UnitKind::Noise };
            let phases = match kind {
                UnitKind::Chirp => Vec::new(),
                UnitKind::Noise => (0..PARTIALS).map(|_| rng.random_range(0.0..2.0 * PI)).collect(),
            };
            Unit { kind, freq, phases }
        })
        .collect()
}

fn class_orders(spec: &SynthSpec, seed: u64) -> Result<Vec<Vec<usize>>> {
    let (c, u) = (spec.classes, spec.units_per_class);
    if !spec.shared_histogram {
        return Ok((0..c).map(|k| (k * u..(k + 1) * u).collect()).collect());
    }
    let mut rng = rng::stream(seed, tag::SYNTH, u64::MAX - 1);
    let mut base: Vec<usize> = (0..u).collect();
    base.shuffle(&mut rng);
    if c <= u {
        // Rows of a Latin square: no unit shares a position across classes.
        return Ok((0..c).map(|k| (0..u).map(|p| base[(p + k) % u]).collect()).collect());
    }
    let limit: usize = (1..=u).try_fold(1usize, |acc, x| acc.checked_mul(x)).unwrap_or(usize::MAX);
    if c > limit {
        return Err(Error::InvalidConfig(format!("{u} units admit only {limit} distinct orders, need {c}")));
    }
    let mut orders: Vec<Vec<usize>> = Vec::new();
    while orders.len() < c {
        base.shuffle(&mut rng);
        if !orders.contains(&base) {
            orders.push(base.clone());
        }
    }
    Ok(orders)
}

fn ms_to_len(ms: f64, sr: u32) -> usize {
    (ms * sr as f64 / 1000.0).round() as usize
}

/// Concatenation of `gap, unit, gap, ..., unit, gap` with the given durations.
fn assemble(units: &[Unit], order: &[usize], unit_lens: &[usize], gap_lens: &[usize], sr: u32) -> Vec<f64> {
    let mut out = vec![0.0; gap_lens[0]];
    for (k, &u) in order.iter().enumerate() {
        out.extend(units[u].render(unit_lens[k], sr));
        out.extend(std::iter::repeat_n(0.0, gap_lens[k + 1]));
    }
    out
}

/// The noiseless, unjittered waveform of a class.
pub fn class_template(ds: &SynthDataset, class: usize) -> Waveform {
    let s = &ds.spec;
    let order = &ds.orders[class];
    let unit_lens = vec![ms_to_len(s.unit_ms, s.sample_rate); order.len()];
    let gap_lens = vec![ms_to_len(s.gap_ms, s.sample_rate); order.len() + 1];
    Waveform::new(assemble(&ds.units, order, &unit_lens, &gap_lens, s.sample_rate), s.sample_rate)
}

pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    if spec.classes < 2 {
        return Err(Error::InvalidConfig("synthetic data needs at least two classes".into()));
    }
    if spec.units_per_class == 0 || spec.unit_ms <= 0.0 || spec.gap_ms < 0.0 || spec.noise_sigma < 0.0 {
        return Err(Error::InvalidConfig("invalid synthetic unit layout".into()));
    }
    if !(0.0..1.0).contains(&spec.duration_jitter) {
        return Err(Error::InvalidConfig("duration jitter must lie in [0, 1)".into()));
    }
    let n_units = if spec.shared_histogram { spec.units_per_class } else { spec.classes * spec.units_per_class };
    let units = make_units(n_units, seed);
    let orders = class_orders(spec, seed)?;
    let sr = spec.sample_rate;
    let n_train = (spec.events_per_class as f64 * spec.train_fraction).round() as usize;
    let mut events = Vec::with_capacity(spec.classes * spec.events_per_class);
    for (class, order) in orders.iter().enumerate() {
        for j in 0..spec.events_per_class {
            let mut rng = rng::stream(seed, tag::SYNTH, (class * spec.events_per_class + j) as u64);
            let mut jitter = |ms: f64| {
                let f = if spec.duration_jitter > 0.0 {
                    1.0 + rng.random_range(-spec.duration_jitter..spec.duration_jitter)
                } else {
                    1.0
                };
                ms_to_len(ms * f, sr)
            };
            let unit_lens: Vec<usize> = order.iter().map(|_| jitter(spec.unit_ms)).collect();
            let gap_lens: Vec<usize> = (0..=order.len()).map(|_| jitter(spec.gap_ms)).collect();
            let mut samples = assemble(&units, order, &unit_lens, &gap_lens, sr);
            if spec.noise_sigma > 0.0 {
                let normal = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");
                samples.iter_mut().for_each(|s| *s += normal.sample(&mut rng));
            }
            events.push(SynthEvent {
                class,
                train: j < n_train,
                waveform: Waveform::new(samples, sr),
            });
        }
    }
    Ok(SynthDataset {
        spec: spec.clone(),
        class_names: (0..spec.classes).map(|c| format!("class{c}")).collect(),
        units,
        orders,
        events,
    })
}

/// Writes one WAV per event plus `manifest.csv` into `dir`.
pub fn write_dataset(ds: &SynthDataset, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut events = Vec::with_capacity(ds.events.len());
    for (i, e) in ds.events.iter().enumerate() {
        let name = format!("event_{i:05}.wav");
        write_wav(&dir.join(&name), &e.waveform)?;
        events.push(ManifestEvent {
            path: name,
            onset_s: 0.0,
            offset_s: e.waveform.duration_s(),
            class_name: ds.class_names[e.class].clone(),
            class: Some(e.class),
            split: Some(if e.train { "train" } else { "test" }.into()),
        });
    }
    let m = Manifest {
        root: dir.to_path_buf(),
        classes: ds.class_names.clone(),
        events,
    };
    m.write(&dir.join("manifest.csv"))?;
    Ok(m)
}
