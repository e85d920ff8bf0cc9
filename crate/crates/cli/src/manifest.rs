//! Run manifests and the transform JSON format.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use pcnet::AffineParams;
use serde::{Deserialize, Serialize};

pub const MANIFEST_VERSION: &str = "pcnet-manifest-v1";

/// `{"affine": [a1, a2, a3, a4, a5, a6]}`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformFile {
    pub affine: [f64; 6],
}

impl TransformFile {
    pub fn params(&self) -> AffineParams {
        AffineParams::new(self.affine)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let t: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        ensure!(t.affine.iter().all(|v| v.is_finite()), "{}: non-finite transform", path.display());
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain arrays serialize") + "\n"
    }
}

impl From<AffineParams> for TransformFile {
    fn from(a: AffineParams) -> Self {
        Self { affine: a.params() }
    }
}

/// One registration job. Relative paths are resolved against the manifest's
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Job {
    pub id: String,
    pub reference: PathBuf,
    pub floating: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<TransformFile>,
    /// Overrides in the `--config` format, applied on top of the global ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    /// Used when `--out` is not given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub jobs: Vec<Job>,
}

impl RunManifest {
    pub fn new(jobs: Vec<Job>) -> Self {
        Self {
            version: MANIFEST_VERSION.to_string(),
            output_dir: None,
            jobs,
        }
    }

    /// Reads a manifest, resolves its paths and checks that every image
    /// exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let mut m: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        if m.version != MANIFEST_VERSION {
            bail!(
                "{}: unsupported manifest version {:?}, expected {MANIFEST_VERSION:?}",
                path.display(),
                m.version
            );
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let mut ids = HashSet::new();
        for job in &mut m.jobs {
            ensure!(ids.insert(job.id.clone()), "{}: duplicate job id {:?}", path.display(), job.id);
            for p in [&mut job.reference, &mut job.floating] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                ensure!(p.is_file(), "job {:?}: {} not found", job.id, p.display());
            }
        }
        if let Some(dir) = &mut m.output_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_json_shape() {
        let t = TransformFile::from(AffineParams::new([1.1, 0.1, -10.0, -0.1, 1.1, 10.0]));
        let text = t.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["affine"].as_array().unwrap().len(), 6);
        let back: TransformFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<TransformFile>("{\"affine\": [1, 2]}").is_err());
    }

    #[test]
    fn manifest_resolves_and_checks_paths() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.png"), b"x").unwrap();
        fs::write(dir.path().join("b.png"), b"x").unwrap();
        let job = Job {
            id: "one".into(),
            reference: "a.png".into(),
            floating: "b.png".into(),
            ground_truth: Some(TransformFile { affine: [1.0, 0.0, 2.0, 0.0, 1.0, 3.0] }),
            config: None,
        };
        let path = dir.path().join("m.json");
        RunManifest::new(vec![job.clone()]).save(&path).unwrap();
        let m = RunManifest::load(&path).unwrap();
        assert_eq!(m.jobs[0].reference, dir.path().join("a.png"));
        assert_eq!(m.jobs[0].ground_truth, job.ground_truth);

        let mut missing = job.clone();
        missing.floating = "nope.png".into();
        RunManifest::new(vec![missing]).save(&path).unwrap();
        assert!(RunManifest::load(&path).is_err());

        RunManifest::new(vec![job.clone(), job]).save(&path).unwrap();
        assert!(RunManifest::load(&path).is_err());
    }
}
