//! Flat `key = value` configuration with dotted keys.
//!
//! Lines starting with `#` are comments. Lists are comma separated. Values are
//! applied in order: defaults, then the config file, then `--set` overrides,
//! then the `REGBANK_SEED` environment variable.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::PyramidWeighting;
use crate::descriptor::DEFAULT_PAD_FACTOR;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::matcher::MatcherConfig;
use crate::regforest::ForestConfig;
use crate::svm::CvScheme;

pub const SEED_ENV: &str = "REGBANK_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum System {
    BorLinear,
    BorChi2,
    BorPlus,
    PhiHat,
    MaxVoting,
    Bow,
    Pbow,
}

impl System {
    pub const ALL: [System; 7] = [
        System::BorLinear,
        System::BorChi2,
        System::BorPlus,
        System::PhiHat,
        System::MaxVoting,
        System::Bow,
        System::Pbow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::BorLinear => "bor_linear",
            System::BorChi2 => "bor_chi2",
            System::BorPlus => "bor_plus",
            System::PhiHat => "phi_hat",
            System::MaxVoting => "max_voting",
            System::Bow => "bow",
            System::Pbow => "pbow",
        }
    }

    /// Whether the system needs the regressor bank and matchers.
    pub fn uses_bank(self) -> bool {
        !matches!(self, System::Bow | System::Pbow)
    }
}

impl FromStr for System {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        System::ALL
            .into_iter()
            .find(|sys| sys.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown system `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c_values: Vec<f64>,
    /// Kernel widths tried by the rbf, chi2 and extended Gaussian kernels.
    pub gammas: Vec<f64>,
    pub cv: CvScheme,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c_values: vec![0.1, 1.0, 10.0, 100.0],
            gammas: vec![0.5, 1.0, 2.0],
            cv: CvScheme::KFold(5),
            tol: 1e-3,
            max_iter: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowConfig {
    pub codebook_size: usize,
    pub levels: usize,
    pub weighting: PyramidWeighting,
    pub kmeans_iters: usize,
    /// Training segments sampled for k-means; `0` uses all of them.
    pub kmeans_points: usize,
}

impl Default for BowConfig {
    fn default() -> Self {
        Self {
            codebook_size: 100,
            levels: 2,
            weighting: PyramidWeighting::Flat,
            kmeans_iters: 100,
            kmeans_points: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads; `0` lets the thread pool decide.
    pub workers: usize,
    pub system: System,
    pub features: FeatureConfig,
    pub forest: ForestConfig,
    pub matcher: MatcherConfig,
    pub pad_factor: usize,
    pub svm: SvmConfig,
    pub bow: BowConfig,
    /// Adds wall-clock stage timings to reports (breaks byte-identical reruns).
    pub record_timing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            workers: 0,
            system: System::BorChi2,
            features: FeatureConfig::default(),
            forest: ForestConfig::default(),
            matcher: MatcherConfig::default(),
            pad_factor: DEFAULT_PAD_FACTOR,
            svm: SvmConfig::default(),
            bow: BowConfig::default(),
            record_timing: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value.split(',').map(|v| parse(key, v.trim())).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::InvalidConfig(format!("`{key}` needs at least one value")));
    }
    Ok(items)
}

fn parse_opt(key: &str, value: &str) -> Result<Option<usize>> {
    match value {
        "auto" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn show_opt(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".into(), |v| v.to_string())
}

fn show_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn parse_cv(value: &str) -> Result<CvScheme> {
    match value.split_once(':') {
        None if value == "loo" => Ok(CvScheme::LeaveOneOut),
        Some(("kfold", k)) => Ok(CvScheme::KFold(parse("svm.cv", k)?)),
        _ => Err(Error::InvalidConfig(format!("bad value `{value}` for `svm.cv` (use kfold:K or loo)"))),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("bad value `{value}` for `{key}`"))),
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "system" => self.system = v.parse()?,
            "record_timing" => self.record_timing = parse_bool(key, v)?,
            "features.win_ms" => self.features.win_ms = parse(key, v)?,
            "features.overlap_ms" => self.features.overlap_ms = parse(key, v)?,
            "features.n_bands" => self.features.n_bands = parse(key, v)?,
            "features.f_min" => self.features.f_min = parse(key, v)?,
            "features.hamming" => self.features.hamming = parse_bool(key, v)?,
            "forest.trees" => self.forest.n_trees = parse(key, v)?,
            "forest.max_depth" => self.forest.max_depth = parse(key, v)?,
            "forest.min_samples" => self.forest.min_samples = parse(key, v)?,
            "forest.tests_per_node" => self.forest.tests_per_node = parse(key, v)?,
            "forest.subsample" => self.forest.subsample = parse(key, v)?,
            "forest.var_floor" => self.forest.var_floor = parse(key, v)?,
            "matcher.trees" => self.matcher.n_trees = parse(key, v)?,
            "matcher.max_features" => self.matcher.max_features = parse_opt(key, v)?,
            "matcher.min_samples_leaf" => self.matcher.min_samples_leaf = parse(key, v)?,
            "matcher.max_depth" => self.matcher.max_depth = parse_opt(key, v)?,
            "matcher.folds" => self.matcher.folds = parse(key, v)?,
            "descriptor.pad_factor" => self.pad_factor = parse(key, v)?,
            "svm.c" => self.svm.c_values = parse_list(key, v)?,
            "svm.gamma" => self.svm.gammas = parse_list(key, v)?,
            "svm.cv" => self.svm.cv = parse_cv(v)?,
            "svm.tol" => self.svm.tol = parse(key, v)?,
            "svm.max_iter" => self.svm.max_iter = parse(key, v)?,
            "bow.codebook_size" => self.bow.codebook_size = parse(key, v)?,
            "bow.levels" => self.bow.levels = parse(key, v)?,
            "bow.weighting" => {
                self.bow.weighting = match v {
                    "flat" => PyramidWeighting::Flat,
                    "spm" => PyramidWeighting::Spm,
                    _ => return Err(Error::InvalidConfig(format!("bad value `{v}` for `{key}`"))),
                }
            }
            "bow.kmeans_iters" => self.bow.kmeans_iters = parse(key, v)?,
            "bow.kmeans_points" => self.bow.kmeans_points = parse(key, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = &self.features;
        let t = &self.forest;
        let m = &self.matcher;
        let s = &self.svm;
        let b = &self.bow;
        vec![
            ("seed", self.seed.to_string()),
            ("workers", self.workers.to_string()),
            ("system", self.system.name().into()),
            ("record_timing", self.record_timing.to_string()),
            ("features.win_ms", f.win_ms.to_string()),
            ("features.overlap_ms", f.overlap_ms.to_string()),
            ("features.n_bands", f.n_bands.to_string()),
            ("features.f_min", f.f_min.to_string()),
            ("features.hamming", f.hamming.to_string()),
            ("forest.trees", t.n_trees.to_string()),
            ("forest.max_depth", t.max_depth.to_string()),
            ("forest.min_samples", t.min_samples.to_string()),
            ("forest.tests_per_node", t.tests_per_node.to_string()),
            ("forest.subsample", t.subsample.to_string()),
            ("forest.var_floor", t.var_floor.to_string()),
            ("matcher.trees", m.n_trees.to_string()),
            ("matcher.max_features", show_opt(m.max_features)),
            ("matcher.min_samples_leaf", m.min_samples_leaf.to_string()),
            ("matcher.max_depth", show_opt(m.max_depth)),
            ("matcher.folds", m.folds.to_string()),
            ("descriptor.pad_factor", self.pad_factor.to_string()),
            ("svm.c", show_list(&s.c_values)),
            ("svm.gamma", show_list(&s.gammas)),
            (
                "svm.cv",
                match s.cv {
                    CvScheme::KFold(k) => format!("kfold:{k}"),
                    CvScheme::LeaveOneOut => "loo".into(),
                },
            ),
            ("svm.tol", s.tol.to_string()),
            ("svm.max_iter", s.max_iter.to_string()),
            ("bow.codebook_size", b.codebook_size.to_string()),
            ("bow.levels", b.levels.to_string()),
            (
                "bow.weighting",
                match b.weighting {
                    PyramidWeighting::Flat => "flat".into(),
                    PyramidWeighting::Spm => "spm".into(),
                },
            ),
            ("bow.kmeans_iters", b.kmeans_iters.to_string()),
            ("bow.kmeans_points", b.kmeans_points.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.into(),
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                path: origin.into(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides such as those given with `--set`.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    /// Defaults, then `path` (if any), then overrides, then the environment.
    pub fn load<S: AsRef<str>>(path: Option<&Path>, overrides: &[S]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            if !p.exists() {
                return Err(Error::MissingFile(p.to_path_buf()));
            }
            cfg.apply_text(&std::fs::read_to_string(p)?, &p.display().to_string())?;
        }
        cfg.apply_overrides(overrides)?;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.features.win_ms <= self.features.overlap_ms || self.features.overlap_ms < 0.0 {
            return Err(Error::InvalidWindow {
                win_ms: self.features.win_ms,
                overlap_ms: self.features.overlap_ms,
            });
        }
        if self.features.n_bands == 0 {
            return bad("features.n_bands must be positive");
        }
        if self.forest.n_trees == 0 || self.matcher.n_trees == 0 {
            return bad("forest.trees and matcher.trees must be positive");
        }
        if !(self.forest.subsample > 0.0 && self.forest.subsample <= 1.0) {
            return bad("forest.subsample must lie in (0, 1]");
        }
        if self.matcher.folds < 2 {
            return bad("matcher.folds must be at least 2");
        }
        if self.pad_factor == 0 {
            return bad("descriptor.pad_factor must be positive");
        }
        if self.svm.c_values.iter().chain(&self.svm.gammas).any(|&v| v <= 0.0 || !v.is_finite()) {
            return bad("svm.c and svm.gamma must be positive");
        }
        if self.bow.codebook_size == 0 || self.bow.levels == 0 {
            return bad("bow.codebook_size and bow.levels must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_overrides(&["forest.trees=3", "svm.c=0.5,2", "matcher.max_depth=9", "svm.cv=loo", "system=pbow"])
            .unwrap();
        let mut back = PipelineConfig::default();
        back.apply_text(&cfg.to_text(), "mem").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.svm.c_values, vec![0.5, 2.0]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut cfg = PipelineConfig::default();
        let err = cfg.apply_text("# c\nseed = 3\nforest.trees = many\n", "x.cfg").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(cfg.set("nope", "1").is_err());
    }

    #[test]
    fn invalid_window_is_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.set("features.overlap_ms", "60").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::InvalidWindow { .. })));
    }
}
