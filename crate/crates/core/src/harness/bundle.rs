//! Versioned, checksummed model bundles.
//!
//! Layout: a `REGBANK-BUNDLE <version>` line, a `sha256 <hex>` line covering
//! the body, then a JSON body. Floats are written in shortest round-trip form
//! and parsed exactly, so save -> load -> save reproduces the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use crate::baselines::{Codebook, FeatureScaler};
use crate::descriptor::NormalizationStats;
use crate::error::{Error, Result};
use crate::matcher::MatcherModel;
use crate::regforest::RegressorForest;
use crate::svm::SvmModel;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "REGBANK-BUNDLE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: PipelineConfig,
    pub classes: Vec<String>,
    pub forests: Vec<RegressorForest>,
    pub matcher: Option<MatcherModel>,
    pub normalizer: Option<NormalizationStats>,
    pub scaler: Option<FeatureScaler>,
    pub codebook: Option<Codebook>,
    pub svm: Option<SvmModel>,
    /// Ids of the events every component was fitted on.
    pub training_ids: Vec<String>,
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = serde_json::to_vec(self)?;
        let digest = hex::encode(Sha256::digest(&body));
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\nsha256 {digest}\n").into_bytes();
        out.extend(body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut parts = bytes.splitn(3, |&b| b == b'\n');
        let header = parts.next().unwrap_or_default();
        let header = std::str::from_utf8(header).map_err(|_| Error::CorruptBundle("unreadable header".into()))?;
        let version = header
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| Error::CorruptBundle("not a regbank bundle".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let sum_line = parts.next().ok_or_else(|| Error::CorruptBundle("missing checksum".into()))?;
        let expected = std::str::from_utf8(sum_line)
            .ok()
            .and_then(|l| l.strip_prefix("sha256 "))
            .ok_or_else(|| Error::CorruptBundle("malformed checksum line".into()))?;
        let body = parts.next().ok_or_else(|| Error::CorruptBundle("missing body".into()))?;
        if hex::encode(Sha256::digest(body)) != expected.trim() {
            return Err(Error::CorruptBundle("checksum mismatch".into()));
        }
        Ok(serde_json::from_slice(body)?)
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    std::fs::write(path, bundle.to_bytes()?)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    ModelBundle::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::NormalizationStats;

    fn sample() -> ModelBundle {
        ModelBundle {
            config: PipelineConfig::default(),
            classes: vec!["a".into(), "b".into()],
            forests: Vec::new(),
            matcher: None,
            normalizer: Some(NormalizationStats {
                class_maxima: vec![0.1 + 0.2, 1.0 / 3.0, f64::MIN_POSITIVE, 1e300],
            }),
            scaler: None,
            codebook: Some(Codebook {
                centroids: vec![vec![std::f64::consts::PI, -0.0, 5e-324]],
            }),
            svm: None,
            training_ids: vec!["e1".into()],
        }
    }

    #[test]
    fn save_load_save_is_identical() {
        let b = sample();
        let bytes = b.to_bytes().unwrap();
        let back = ModelBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 10];
        assert!(matches!(ModelBundle::from_bytes(cut), Err(Error::CorruptBundle(_))));
        assert!(matches!(ModelBundle::from_bytes(&bytes[..5]), Err(Error::CorruptBundle(_))));
    }

    #[test]
    fn other_versions_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let text = String::from_utf8(bytes).unwrap().replacen("BUNDLE 1", "BUNDLE 7", 1);
        assert!(matches!(
            ModelBundle::from_bytes(text.as_bytes()),
            Err(Error::VersionMismatch { found: 7, expected: 1 })
        ));
    }
}
