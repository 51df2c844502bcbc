//! End-to-end training, description, classification and evaluation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::bundle::ModelBundle;
use super::config::{PipelineConfig, System};
use super::evaluate::{evaluate, EvaluationReport, Selection};
use super::manifest::Manifest;
use super::synth::SynthDataset;
use super::wav::{read_wav, slice_seconds};
use crate::baselines::{bow_encode, kmeans, max_vote, pbow_encode, FeatureScaler};
use crate::descriptor::{extract_descriptors, extract_training_descriptors, normalize, pad_before, ScoreCurves, ScoredEvent};
use crate::error::{Error, Result};
use crate::features::{extract_event_features, FeatureConfig, SegmentFeatures, Waveform};
use crate::matcher::{train_folded_matchers, train_matcher_on_events};
use crate::regforest::train_forest;
use crate::rng::{self, tag};
use crate::svm::{channel_scales, ovo_train, tune, Channel, Grid, KernelSpec, Sample, SmoParams};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioEvent {
    pub id: String,
    pub label: Option<usize>,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioDataset {
    pub classes: Vec<String>,
    pub train: Vec<AudioEvent>,
    pub test: Vec<AudioEvent>,
}

impl AudioDataset {
    pub fn from_synth(ds: &SynthDataset) -> Self {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, e) in ds.events.iter().enumerate() {
            let ev = AudioEvent {
                id: format!("event_{i:05}"),
                label: Some(e.class),
                waveform: e.waveform.clone(),
            };
            if e.train {
                train.push(ev);
            } else {
                test.push(ev);
            }
        }
        Self {
            classes: ds.class_names.clone(),
            train,
            test,
        }
    }

    /// Events whose split equals `test_split` form the test set; all others train.
    pub fn from_manifest(m: &Manifest, test_split: &str) -> Result<Self> {
        let events = load_events(m)?;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (ev, me) in events.into_iter().zip(&m.events) {
            if me.split.as_deref() == Some(test_split) {
                test.push(ev);
            } else {
                train.push(ev);
            }
        }
        Ok(Self {
            classes: m.classes.clone(),
            train,
            test,
        })
    }
}

/// Reads and cuts every manifest event; each file is decoded once.
pub fn load_events(m: &Manifest) -> Result<Vec<AudioEvent>> {
    let mut cache: HashMap<std::path::PathBuf, Waveform> = HashMap::new();
    let mut out = Vec::with_capacity(m.events.len());
    for (row, e) in m.events.iter().enumerate() {
        let path = m.resolve(e);
        if !cache.contains_key(&path) {
            cache.insert(path.clone(), read_wav(&path)?);
        }
        let w = &cache[&path];
        out.push(AudioEvent {
            id: format!("{}#{}", e.path, row + 2),
            label: e.class,
            waveform: slice_seconds(w, e.onset_s, e.offset_s),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventData {
    pub id: String,
    pub label: Option<usize>,
    pub features: Vec<SegmentFeatures>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub train: Vec<EventData>,
    pub test: Vec<EventData>,
}

pub fn featurize(events: &[AudioEvent], cfg: &FeatureConfig) -> Result<Vec<EventData>> {
    events
        .par_iter()
        .map(|e| {
            Ok(EventData {
                id: e.id.clone(),
                label: e.label,
                features: extract_event_features(&e.waveform, cfg)?,
            })
        })
        .collect()
}

impl Dataset {
    pub fn from_audio(a: &AudioDataset, cfg: &FeatureConfig) -> Result<Self> {
        Ok(Self {
            classes: a.classes.clone(),
            train: featurize(&a.train, cfg)?,
            test: featurize(&a.test, cfg)?,
        })
    }
}

/// Per-event descriptors; vectors a system does not use stay empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptorSet {
    pub ids: Vec<String>,
    pub labels: Vec<Option<usize>>,
    pub raw: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub phi_hat: Vec<Vec<f64>>,
    pub bow: Vec<Vec<f64>>,
    pub pbow: Vec<Vec<f64>>,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Delimited text. Bank descriptors use columns `raw_k, phi_k, phihat_k`;
    /// codebook descriptors use `bow_k` and `pbow_k`.
    pub fn to_text(&self, classes: &[String]) -> String {
        let width = |v: &[Vec<f64>]| v.first().map_or(0, Vec::len);
        let blocks: [(&str, &[Vec<f64>]); 5] = [
            ("raw", &self.raw),
            ("phi", &self.phi),
            ("phihat", &self.phi_hat),
            ("bow", &self.bow),
            ("pbow", &self.pbow),
        ];
        let mut s = String::from("id,class");
        for (name, rows) in blocks {
            for k in 0..width(rows) {
                let _ = write!(s, ",{name}_{k}");
            }
        }
        s.push('\n');
        for i in 0..self.len() {
            let class = self.labels[i].map_or("", |c| classes[c].as_str());
            let _ = write!(s, "{},{}", self.ids[i], class);
            for (_, rows) in blocks {
                if let Some(r) = rows.get(i) {
                    for v in r {
                        let _ = write!(s, ",{v}");
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, origin: &str, classes: &[String]) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.into(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty descriptor file".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "id" || cols[1] != "class" {
            return Err(err(1, "expected header starting with `id,class`".into()));
        }
        let block_of: Vec<&str> = cols[2..].iter().map(|c| c.rsplit_once('_').map_or(*c, |(b, _)| b)).collect();
        let mut out = DescriptorSet::default();
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(err(i + 1, format!("expected {} fields, found {}", cols.len(), fields.len())));
            }
            out.ids.push(fields[0].to_string());
            out.labels.push(classes.iter().position(|c| c == fields[1]));
            let mut rows: HashMap<&str, Vec<f64>> = HashMap::new();
            for (b, v) in block_of.iter().zip(&fields[2..]) {
                let v: f64 = v.parse().map_err(|_| err(i + 1, format!("bad number `{v}`")))?;
                rows.entry(b).or_default().push(v);
            }
            for (name, target) in [
                ("raw", &mut out.raw),
                ("phi", &mut out.phi),
                ("phihat", &mut out.phi_hat),
                ("bow", &mut out.bow),
                ("pbow", &mut out.pbow),
            ] {
                if let Some(r) = rows.remove(name) {
                    target.push(r);
                }
            }
        }
        Ok(out)
    }
}

type Timing = Vec<(String, f64)>;

fn timed<T>(timing: &mut Timing, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage))?;
    timing.push((stage.to_string(), start.elapsed().as_secs_f64()));
    log::info!("{stage}: {:.2}s", start.elapsed().as_secs_f64());
    Ok(out)
}

fn labelled<'a>(events: &'a [EventData], classes: usize) -> Result<(Vec<&'a EventData>, Vec<usize>)> {
    let kept: Vec<&EventData> = events.iter().filter(|e| e.label.is_some()).collect();
    if kept.len() < events.len() {
        log::warn!("ignoring {} unlabelled training events", events.len() - kept.len());
    }
    let labels: Vec<usize> = kept.iter().map(|e| e.label.unwrap()).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::DimensionMismatch { expected: classes, found: bad + 1 });
    }
    Ok((kept, labels))
}

fn scaled(scaler: &FeatureScaler, seq: &[SegmentFeatures]) -> Vec<SegmentFeatures> {
    seq.iter()
        .map(|s| SegmentFeatures {
            values: scaler.transform(&s.values),
            segment_index: s.segment_index,
        })
        .collect()
}

/// Fits every component except the final classifier and returns the training
/// descriptors the classifier is fitted on.
pub fn train_base(cfg: &PipelineConfig, classes: &[String], train: &[EventData], systems: &[System]) -> Result<(ModelBundle, DescriptorSet, Timing)> {
    let mut timing = Timing::new();
    let n_classes = classes.len();
    let (events, labels) = labelled(train, n_classes)?;
    let seqs: Vec<&[SegmentFeatures]> = events.iter().map(|e| e.features.as_slice()).collect();
    let mut bundle = ModelBundle {
        config: cfg.clone(),
        classes: classes.to_vec(),
        forests: Vec::new(),
        matcher: None,
        normalizer: None,
        scaler: None,
        codebook: None,
        svm: None,
        training_ids: events.iter().map(|e| e.id.clone()).collect(),
    };
    let mut desc = DescriptorSet {
        ids: bundle.training_ids.clone(),
        labels: labels.iter().map(|&l| Some(l)).collect(),
        ..Default::default()
    };

    if systems.iter().any(|s| s.uses_bank()) {
        let forests = timed(&mut timing, "forests", || {
            (0..n_classes)
                .map(|c| {
                    let own: Vec<Vec<SegmentFeatures>> =
                        events.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(e, _)| e.features.clone()).collect();
                    train_forest(&own, c, &cfg.forest, rng::derive_seed(cfg.seed, tag::CLASS, c as u64))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let matcher = timed(&mut timing, "matcher", || {
            train_matcher_on_events(&seqs, &labels, n_classes, &cfg.matcher, rng::derive_seed(cfg.seed, tag::MATCHER_TREE, u64::MAX))
        })?;
        let training = timed(&mut timing, "training descriptors", || {
            let folded = train_folded_matchers(&seqs, &labels, n_classes, cfg.matcher.folds, &cfg.matcher, cfg.seed)?;
            extract_training_descriptors(&forests, &folded, &seqs, cfg.pad_factor)
        })?;
        desc.phi = training.normalized.iter().map(|d| d.phi.clone()).collect();
        desc.raw = training.descriptors.raw;
        desc.phi_hat = training.descriptors.phi_hat;
        bundle.forests = forests;
        bundle.matcher = Some(matcher);
        bundle.normalizer = Some(training.stats);
    }

    if systems.iter().any(|s| !s.uses_bank()) {
        let (scaler, codebook) = timed(&mut timing, "codebook", || {
            let rows: Vec<&[f64]> = seqs.iter().flat_map(|s| s.iter().map(|f| f.values.as_slice())).collect();
            let scaler = FeatureScaler::fit(&rows)?;
            let mut pick: Vec<usize> = (0..rows.len()).collect();
            if cfg.bow.kmeans_points > 0 && rows.len() > cfg.bow.kmeans_points {
                let mut r = rng::stream(cfg.seed, tag::KMEANS, 1);
                pick = rand::seq::index::sample(&mut r, rows.len(), cfg.bow.kmeans_points).into_vec();
                pick.sort_unstable();
            }
            let points: Vec<Vec<f64>> = pick.iter().map(|&i| scaler.transform(rows[i])).collect();
            let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
            let codebook = kmeans(&refs, cfg.bow.codebook_size, cfg.seed, cfg.bow.kmeans_iters)?;
            Ok((scaler, codebook))
        })?;
        bundle.scaler = Some(scaler);
        bundle.codebook = Some(codebook);
        let (bow, pbow) = encode_codebook(&bundle, &seqs)?;
        desc.bow = bow;
        desc.pbow = pbow;
    }
    Ok((bundle, desc, timing))
}

type Histograms = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn encode_codebook(bundle: &ModelBundle, seqs: &[&[SegmentFeatures]]) -> Result<Histograms> {
    let (Some(scaler), Some(book)) = (&bundle.scaler, &bundle.codebook) else {
        return Ok((Vec::new(), Vec::new()));
    };
    let b = &bundle.config.bow;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = seqs
        .par_iter()
        .map(|s| {
            let z = scaled(scaler, s);
            Ok((bow_encode(&z, book)?, pbow_encode(&z, book, b.levels, b.weighting)?))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Test-time descriptors with the full-data matcher.
pub fn describe(bundle: &ModelBundle, events: &[EventData]) -> Result<DescriptorSet> {
    let seqs: Vec<&[SegmentFeatures]> = events.iter().map(|e| e.features.as_slice()).collect();
    let mut desc = DescriptorSet {
        ids: events.iter().map(|e| e.id.clone()).collect(),
        labels: events.iter().map(|e| e.label).collect(),
        ..Default::default()
    };
    if let (Some(matcher), Some(stats)) = (&bundle.matcher, &bundle.normalizer) {
        let d = extract_descriptors(&bundle.forests, matcher, &seqs, bundle.config.pad_factor)?;
        desc.phi = d.raw.iter().map(|r| normalize(r, stats).map(|n| n.phi)).collect::<Result<_>>()?;
        desc.raw = d.raw;
        desc.phi_hat = d.phi_hat;
    }
    let (bow, pbow) = encode_codebook(bundle, &seqs)?;
    desc.bow = bow;
    desc.pbow = pbow;
    Ok(desc)
}

fn missing(what: &str) -> Error {
    Error::InvalidConfig(format!("descriptors lack the `{what}` block required by the system"))
}

fn samples_for(system: System, d: &DescriptorSet) -> Result<Vec<Sample>> {
    let need = |v: &Vec<Vec<f64>>, what: &str| if v.len() == d.len() { Ok(()) } else { Err(missing(what)) };
    Ok(match system {
        System::BorLinear | System::BorChi2 => {
            need(&d.phi, "phi")?;
            d.phi.iter().cloned().map(Sample::new).collect()
        }
        System::PhiHat => {
            need(&d.phi_hat, "phihat")?;
            d.phi_hat.iter().cloned().map(Sample::new).collect()
        }
        System::BorPlus => {
            need(&d.phi, "phi")?;
            need(&d.phi_hat, "phihat")?;
            d.phi.iter().zip(&d.phi_hat).map(|(p, h)| Sample::with_aux(p.clone(), h.clone())).collect()
        }
        System::Bow => {
            need(&d.bow, "bow")?;
            d.bow.iter().cloned().map(Sample::new).collect()
        }
        System::Pbow => {
            need(&d.pbow, "pbow")?;
            d.pbow.iter().cloned().map(Sample::new).collect()
        }
        System::MaxVoting => Vec::new(),
    })
}

fn grid_for(system: System, cfg: &PipelineConfig, samples: &[Sample]) -> Result<Grid> {
    let gammas = &cfg.svm.gammas;
    let kernels = match system {
        System::BorLinear => vec![KernelSpec::Linear],
        System::BorChi2 | System::PhiHat => gammas.iter().map(|&gamma| KernelSpec::Chi2 { gamma }).collect(),
        System::BorPlus => {
            let scales = channel_scales(samples, &[Channel::Main, Channel::Aux])?;
            gammas
                .iter()
                .map(|&gamma| KernelSpec::ExtendedGaussian {
                    scales: scales.clone(),
                    gamma,
                })
                .collect()
        }
        System::Bow | System::Pbow => {
            let mut k = vec![KernelSpec::Linear, KernelSpec::Hist];
            k.extend(gammas.iter().map(|&gamma| KernelSpec::Chi2 { gamma }));
            k.extend(gammas.iter().map(|&gamma| KernelSpec::Rbf { gamma }));
            k
        }
        System::MaxVoting => Vec::new(),
    };
    Ok(Grid {
        c_values: cfg.svm.c_values.clone(),
        kernels,
    })
}

/// Fits the SVM of `bundle.config.system` on training descriptors. Max voting
/// has nothing to fit.
pub fn fit_classifier(bundle: &mut ModelBundle, train: &DescriptorSet) -> Result<Option<Selection>> {
    let system = bundle.config.system;
    if system == System::MaxVoting {
        bundle.svm = None;
        return Ok(None);
    }
    let samples = samples_for(system, train)?;
    let labels: Vec<usize> = train
        .labels
        .iter()
        .map(|l| l.ok_or_else(|| Error::InvalidConfig("training descriptors must be labelled".into())))
        .collect::<Result<_>>()?;
    let cfg = &bundle.config;
    let grid = grid_for(system, cfg, &samples)?;
    let base = SmoParams {
        c_reg: 1.0,
        tol: cfg.svm.tol,
        max_iter: cfg.svm.max_iter,
    };
    let best = tune(&samples, &labels, &grid, cfg.svm.cv, &base, rng::derive_seed(cfg.seed, tag::CV, 0))?;
    let params = SmoParams { c_reg: best.c_reg, ..base };
    let model = ovo_train(&samples, &labels, &best.kernel, &params)?;
    let selection = Selection {
        kernel: best.kernel.name().into(),
        param: best.kernel.param(),
        c_reg: best.c_reg,
        cv_accuracy: best.cv_accuracy,
    };
    bundle.svm = Some(model);
    Ok(Some(selection))
}

pub fn classify(bundle: &ModelBundle, desc: &DescriptorSet) -> Result<Vec<usize>> {
    let system = bundle.config.system;
    if system == System::MaxVoting {
        if desc.raw.len() != desc.len() {
            return Err(missing("raw"));
        }
        return Ok(desc.raw.iter().map(|r| max_vote(r)).collect());
    }
    let svm = bundle
        .svm
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("bundle has no classifier for `{}`", system.name())))?;
    let samples = samples_for(system, desc)?;
    samples.par_iter().map(|s| svm.predict(s)).collect()
}

pub fn predict(bundle: &ModelBundle, events: &[EventData]) -> Result<Vec<usize>> {
    classify(bundle, &describe(bundle, events)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub report: EvaluationReport,
    pub bundle: ModelBundle,
    pub predictions: Vec<usize>,
    /// Test-set descriptors the predictions were made from.
    pub descriptors: DescriptorSet,
}

fn report_for(cfg: &PipelineConfig, classes: &[String], desc: &DescriptorSet, predictions: &[usize]) -> Result<EvaluationReport> {
    let (p, t): (Vec<usize>, Vec<usize>) = predictions.iter().zip(&desc.labels).filter_map(|(&p, t)| t.map(|t| (p, t))).unzip();
    let mut report = evaluate(&p, &t, classes)?;
    report.system = cfg.system.name().into();
    report.config = cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    Ok(report)
}

/// Trains shared stages once, then fits and evaluates each system on the
/// test split.
pub fn run_systems(cfg: &PipelineConfig, data: &Dataset, systems: &[System]) -> Result<Vec<PipelineOutcome>> {
    with_workers(cfg.workers, || {
        let (base, train_desc, mut timing) = train_base(cfg, &data.classes, &data.train, systems)?;
        let test_desc = timed(&mut timing, "test descriptors", || describe(&base, &data.test))?;
        systems
            .iter()
            .map(|&system| {
                let mut t = timing.clone();
                let mut bundle = base.clone();
                bundle.config.system = system;
                let selection = timed(&mut t, "classifier", || fit_classifier(&mut bundle, &train_desc))?;
                let predictions = timed(&mut t, "predict", || classify(&bundle, &test_desc))?;
                let mut report = report_for(&bundle.config, &data.classes, &test_desc, &predictions).map_err(|e| e.in_stage("evaluate"))?;
                report.selection = selection;
                if cfg.record_timing {
                    report.timing = t;
                }
                Ok(PipelineOutcome {
                    report,
                    bundle,
                    predictions,
                    descriptors: test_desc.clone(),
                })
            })
            .collect()
    })
}

pub fn run_pipeline(cfg: &PipelineConfig, data: &Dataset) -> Result<PipelineOutcome> {
    Ok(run_systems(cfg, data, &[cfg.system])?.remove(0))
}

/// Runs `f` on a pool with `workers` threads (`0` keeps the global pool).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
        .install(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub win_ms: f64,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub error: Option<String>,
}

/// Reruns the pipeline once per segment length. A failing size is recorded
/// in its row and the sweep moves on.
pub fn sweep_segment_size(cfg: &PipelineConfig, audio: &AudioDataset, sizes: &[f64]) -> Vec<SweepRow> {
    sizes
        .iter()
        .map(|&win_ms| {
            let mut c = cfg.clone();
            c.features.win_ms = win_ms;
            let run = c
                .validate()
                .and_then(|_| Dataset::from_audio(audio, &c.features).map_err(|e| e.in_stage("features")))
                .and_then(|d| run_pipeline(&c, &d));
            match run {
                Ok(o) => SweepRow {
                    win_ms,
                    accuracy: Some(o.report.accuracy),
                    macro_f1: Some(o.report.macro_f1),
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep row {win_ms} ms failed: {e}");
                    SweepRow {
                        win_ms,
                        accuracy: None,
                        macro_f1: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect()
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("win_ms,status,accuracy,macro_f1,error\n");
    for r in rows {
        let num = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let status = if r.error.is_none() { "ok" } else { "failed" };
        let err = r.error.as_deref().unwrap_or("").replace(',', ";");
        let _ = writeln!(s, "{},{status},{},{},{err}", r.win_ms, num(r.accuracy), num(r.macro_f1));
    }
    s
}

pub const CURVE_HEADER: &str = "n,time_ms,f_plus,f_minus";

/// Score curves of `class` over the padded grid of `event`, written as
/// delimited text. `time_ms` is relative to the first event segment.
pub fn emit_curves(bundle: &ModelBundle, event: &[SegmentFeatures], class: usize, path: &Path) -> Result<ScoreCurves> {
    let matcher = bundle.matcher.as_ref().ok_or_else(|| Error::InvalidConfig("bundle has no matcher".into()))?;
    let forest = bundle
        .forests
        .get(class)
        .ok_or_else(|| Error::InvalidConfig(format!("bundle has no forest for class {class}")))?;
    let pad = bundle.config.pad_factor;
    let curves = ScoredEvent::new(matcher, event, pad)?.curves(forest)?;
    let before = pad_before(event.len(), pad) as f64;
    let hop = bundle.config.features.hop_ms();
    let mut s = format!("{CURVE_HEADER}\n");
    for (n, (fp, fm)) in curves.f_plus.iter().zip(&curves.f_minus).enumerate() {
        let _ = writeln!(s, "{n},{},{fp},{fm}", (n as f64 - before) * hop);
    }
    std::fs::write(path, s)?;
    Ok(curves)
}
