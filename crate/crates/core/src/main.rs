use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use regbank::harness::manifest::load_manifest_with_classes;
use regbank::harness::pipeline::{
    classify, describe, featurize, fit_classifier, load_events, sweep_table, train_base, DescriptorSet, EventData,
};
use regbank::harness::{
    emit_curves, evaluate, load_bundle, load_manifest, run_pipeline, save_bundle, sweep_segment_size, synth_dataset,
    AudioDataset, Dataset, Manifest, PipelineConfig, SynthSpec,
};
use regbank::{Error, Result};

#[derive(Parser)]
#[command(name = "regbank", version, about = "Regressor-bank audio event classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set forest.trees=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        PipelineConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Args, Clone)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    events_per_class: usize,
    #[arg(long, default_value_t = 5)]
    units: usize,
    #[arg(long, default_value_t = 200.0)]
    unit_ms: f64,
    #[arg(long, default_value_t = 240.0)]
    gap_ms: f64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0.1)]
    jitter: f64,
    /// Give every class its own units instead of reordering a shared set.
    #[arg(long)]
    distinct_units: bool,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
}

impl SynthArgs {
    fn spec(&self) -> SynthSpec {
        SynthSpec {
            classes: self.classes,
            events_per_class: self.events_per_class,
            units_per_class: self.units,
            unit_ms: self.unit_ms,
            gap_ms: self.gap_ms,
            noise_sigma: self.noise,
            duration_jitter: self.jitter,
            shared_histogram: !self.distinct_units,
            train_fraction: self.train_fraction,
            sample_rate: 16_000,
        }
    }
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Manifest with `path,onset_s,offset_s,class[,split]` rows.
    #[arg(long, conflicts_with = "synth")]
    manifest: Option<PathBuf>,
    /// Generate a synthetic dataset in memory instead of reading a manifest.
    #[arg(long)]
    synth: bool,
    /// Split name that marks test events.
    #[arg(long, default_value = "test")]
    test_split: String,
    #[command(flatten)]
    synth_args: SynthArgs,
}

impl DataArgs {
    fn audio(&self, cfg: &PipelineConfig) -> Result<AudioDataset> {
        match (&self.manifest, self.synth) {
            (Some(m), _) => AudioDataset::from_manifest(&load_manifest(m)?, &self.test_split),
            (None, true) => Ok(AudioDataset::from_synth(&synth_dataset(&self.synth_args.spec(), cfg.seed)?)),
            (None, false) => Err(Error::InvalidConfig("give --manifest or --synth".into())),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (WAV files plus manifest.csv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Write per-segment features of every manifest event.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fit forests, matchers, normalizer and codebook on the training split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        test_split: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the training descriptors used by `fit`.
        #[arg(long)]
        descriptors: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write test-time descriptors of every manifest event.
    Extract {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune and fit the classifier on training descriptors.
    Fit {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override configuration keys of the bundle (e.g. `system=bor_linear`).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Classify manifest events; writes `id,predicted,truth`.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Only classify events of this split.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predictions file.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Bundle supplying the class list (defaults to classes seen in the file).
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run training, description, classification and evaluation end to end.
    Pipeline {
        #[command(flatten)]
        data: DataArgs,
        /// Rotate the test role over every split named in the manifest.
        #[arg(long, requires = "manifest")]
        rotate: bool,
        /// Output directory for report.txt, predictions.csv and bundle.rgb.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rerun the pipeline for several segment lengths.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_value = "30,40,50,60,70,80,90,100")]
        sizes: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Write the onset/offset score curves of one event for one class.
    Curves {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Zero-based event row in the manifest.
        #[arg(long)]
        event: usize,
        /// Class name whose forest produces the curves.
        #[arg(long)]
        class: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn manifest_events(m: &Manifest, cfg: &PipelineConfig, split: Option<&str>) -> Result<Vec<EventData>> {
    let audio = load_events(m)?;
    let keep: Vec<_> = audio
        .into_iter()
        .zip(&m.events)
        .filter(|(_, e)| split.is_none() || e.split.as_deref() == split)
        .map(|(a, _)| a)
        .collect();
    featurize(&keep, &cfg.features)
}

fn predictions_text(events: &[EventData], predictions: &[usize], classes: &[String]) -> String {
    let mut s = String::from("id,predicted,truth\n");
    for (e, &p) in events.iter().zip(predictions) {
        let truth = e.label.map_or("", |t| classes[t].as_str());
        let _ = writeln!(s, "{},{},{truth}", e.id, classes[p]);
    }
    s
}

fn evaluate_file(path: &Path, classes: Option<Vec<String>>) -> Result<regbank::harness::EvaluationReport> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let origin = path.display().to_string();
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::Parse {
                path: origin.clone(),
                line: i + 1,
                message: "expected `id,predicted,truth`".into(),
            });
        }
        if !f[2].is_empty() {
            rows.push((f[1].to_string(), f[2].to_string()));
        }
    }
    let classes = classes.unwrap_or_else(|| {
        let mut c: Vec<String> = rows.iter().flat_map(|(p, t)| [p.clone(), t.clone()]).collect();
        c.sort();
        c.dedup();
        c
    });
    let id = |name: &str| {
        classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown class `{name}`")))
    };
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for (pn, tn) in &rows {
        p.push(id(pn)?);
        t.push(id(tn)?);
    }
    evaluate(&p, &t, &classes)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, seed, synth } => {
            let ds = synth_dataset(&synth.spec(), seed)?;
            let m = regbank::harness::synth::write_dataset(&ds, &out)?;
            println!("wrote {} events to {}", m.events.len(), out.join("manifest.csv").display());
        }
        Command::Features { manifest, out, cfg } => {
            let cfg = cfg.load()?;
            let m = load_manifest(&manifest)?;
            let events = manifest_events(&m, &cfg, None)?;
            let dim = cfg.features.dimension();
            let mut s = String::from("id,segment");
            for k in 0..dim {
                let _ = write!(s, ",x{k}");
            }
            s.push('\n');
            for e in &events {
                for seg in &e.features {
                    let _ = write!(s, "{},{}", e.id, seg.segment_index);
                    for v in &seg.values {
                        let _ = write!(s, ",{v}");
                    }
                    s.push('\n');
                }
            }
            write(&out, &s)?;
        }
        Command::Train {
            manifest,
            test_split,
            out,
            descriptors,
            cfg,
        } => {
            let cfg = cfg.load()?;
            let m = load_manifest(&manifest)?;
            let all = manifest_events(&m, &cfg, None)?;
            let train: Vec<EventData> = all
                .into_iter()
                .zip(&m.events)
                .filter(|(_, e)| e.split.as_deref() != Some(test_split.as_str()))
                .map(|(d, _)| d)
                .collect();
            let (bundle, desc, _) = regbank::harness::pipeline::with_workers(cfg.workers, || {
                train_base(&cfg, &m.classes, &train, &[cfg.system])
            })?;
            save_bundle(&bundle, &out)?;
            if let Some(d) = descriptors {
                write(&d, &desc.to_text(&bundle.classes))?;
            }
        }
        Command::Extract { bundle, manifest, out } => {
            let b = load_bundle(&bundle)?;
            let m = load_manifest_with_classes(&manifest, &b.classes)?;
            let events = manifest_events(&m, &b.config, None)?;
            let desc = regbank::harness::pipeline::with_workers(b.config.workers, || describe(&b, &events))?;
            write(&out, &desc.to_text(&b.classes))?;
        }
        Command::Fit {
            bundle,
            descriptors,
            out,
            overrides,
        } => {
            let mut b = load_bundle(&bundle)?;
            b.config.apply_overrides(&overrides)?;
            b.config.validate()?;
            let text = std::fs::read_to_string(&descriptors).map_err(|_| Error::MissingFile(descriptors.clone()))?;
            let desc = DescriptorSet::parse(&text, &descriptors.display().to_string(), &b.classes)?;
            let selection = fit_classifier(&mut b, &desc).map_err(|e| e.in_stage("classifier"))?;
            if let Some(s) = selection {
                println!("selected {} (param {}) with C = {}, cv accuracy {:.4}", s.kernel, s.param, s.c_reg, s.cv_accuracy);
            }
            save_bundle(&b, &out)?;
        }
        Command::Predict {
            bundle,
            manifest,
            split,
            out,
        } => {
            let b = load_bundle(&bundle)?;
            let m = load_manifest_with_classes(&manifest, &b.classes)?;
            let events = manifest_events(&m, &b.config, split.as_deref())?;
            let pred = regbank::harness::pipeline::with_workers(b.config.workers, || classify(&b, &describe(&b, &events)?))?;
            write(&out, &predictions_text(&events, &pred, &b.classes))?;
        }
        Command::Evaluate { predictions, bundle, out } => {
            let classes = bundle.map(|b| load_bundle(&b).map(|b| b.classes)).transpose()?;
            let report = evaluate_file(&predictions, classes)?;
            let text = report.to_text();
            match out {
                Some(o) => write(&o, &text)?,
                None => print!("{text}"),
            }
        }
        Command::Pipeline { data, rotate, out, cfg } => {
            let cfg = cfg.load()?;
            std::fs::create_dir_all(&out)?;
            if rotate {
                let m = load_manifest(data.manifest.as_deref().expect("clap enforces --manifest"))?;
                let (mut preds, mut truths) = (Vec::new(), Vec::new());
                for split in m.splits() {
                    let audio = AudioDataset::from_manifest(&m, &split)?;
                    let d = Dataset::from_audio(&audio, &cfg.features).map_err(|e| e.in_stage("features"))?;
                    let o = run_pipeline(&cfg, &d)?;
                    write(&out.join(format!("report_{split}.txt")), &o.report.to_text())?;
                    for (e, &p) in d.test.iter().zip(&o.predictions) {
                        if let Some(t) = e.label {
                            preds.push(p);
                            truths.push(t);
                        }
                    }
                }
                let mut pooled = evaluate(&preds, &truths, &m.classes)?;
                pooled.system = cfg.system.name().into();
                pooled.config = cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
                write(&out.join("report.txt"), &pooled.to_text())?;
                println!("pooled accuracy {:.4}", pooled.accuracy);
            } else {
                let audio = data.audio(&cfg)?;
                let d = Dataset::from_audio(&audio, &cfg.features).map_err(|e| e.in_stage("features"))?;
                let o = run_pipeline(&cfg, &d)?;
                write(&out.join("report.txt"), &o.report.to_text())?;
                write(&out.join("predictions.csv"), &predictions_text(&d.test, &o.predictions, &d.classes))?;
                save_bundle(&o.bundle, &out.join("bundle.rgb"))?;
                println!("{} accuracy {:.4}, macro-F1 {:.4}", o.report.system, o.report.accuracy, o.report.macro_f1);
            }
        }
        Command::Sweep { data, sizes, out, cfg } => {
            let cfg = cfg.load()?;
            let audio = data.audio(&cfg)?;
            let rows = sweep_segment_size(&cfg, &audio, &sizes);
            write(&out, &sweep_table(&rows))?;
        }
        Command::Curves {
            bundle,
            manifest,
            event,
            class,
            out,
        } => {
            let b = load_bundle(&bundle)?;
            let c = b
                .classes
                .iter()
                .position(|n| *n == class)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown class `{class}`")))?;
            let mut m = load_manifest_with_classes(&manifest, &b.classes)?;
            if event >= m.events.len() {
                return Err(Error::InvalidConfig(format!("manifest has {} events", m.events.len())));
            }
            m.events = vec![m.events[event].clone()];
            let e = manifest_events(&m, &b.config, None)?;
            emit_curves(&b, &e[0].features, c, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
