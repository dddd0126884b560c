//! On-disk layout, run manifests and the split file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vmrec::basemodels::BaseKind;
use vmrec::datastore::{DatasetSplit, SplitStats};

pub const MANIFEST: &str = "run.json";
const SPLIT_FORMAT: &str = "vmrec-split";
const SPLIT_VERSION: u32 = 1;

/// Directory layout under the output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn split_dir(&self) -> PathBuf {
        self.root.join("split")
    }

    pub fn base_dir(&self, kind: BaseKind) -> PathBuf {
        self.root.join("base").join(kind.to_string())
    }

    pub fn mapper_dir(&self, kind: BaseKind) -> PathBuf {
        self.root.join("mapper").join(kind.to_string())
    }

    pub fn eval_dir(&self, kind: BaseKind, method: &str, subset: &str) -> PathBuf {
        self.root.join("eval").join(kind.to_string()).join(method).join(subset)
    }

    pub fn ablate_dir(&self, kind: BaseKind, variant: &str) -> PathBuf {
        self.root.join("ablate").join(kind.to_string()).join(variant)
    }

    pub fn diagnose_dir(&self, kind: BaseKind) -> PathBuf {
        self.root.join("diagnose").join(kind.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Written last into every output directory; its presence marks a finished stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Digest of the configuration this stage depends on.
    pub config_digest: String,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Not covered by determinism checks.
    pub metadata: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(dir: &Path, files: &[PathBuf]) -> Result<Vec<FileDigest>> {
    files
        .iter()
        .map(|f| {
            let shown = f.strip_prefix(dir).unwrap_or(f).to_string_lossy().into_owned();
            Ok(FileDigest {
                path: shown,
                sha256: sha256_file(f)?,
            })
        })
        .collect()
}

pub fn write_manifest(
    dir: &Path,
    command: &str,
    config_digest: String,
    seed: u64,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> Result<()> {
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest,
        seed,
        inputs: inputs
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.to_string_lossy().into_owned(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?,
        outputs: digests(dir, outputs)?,
        metadata: BTreeMap::from([("finished_unix".to_string(), started.to_string())]),
    };
    write_text(&dir.join(MANIFEST), &serde_json::to_string_pretty(&manifest)?)
}

/// Checks that `dir` holds a finished, current and untouched output of `producer`.
pub fn require_stage(dir: &Path, producer: &str, expected_digest: &str) -> Result<RunManifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        bail!("missing artifact {}: run `vmrec {producer}` first", dir.display());
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a run manifest; rerun `vmrec {producer}`", path.display()))?;
    if manifest.command != producer {
        bail!(
            "{} was written by `vmrec {}`, expected `vmrec {producer}`",
            path.display(),
            manifest.command
        );
    }
    if manifest.config_digest != expected_digest {
        bail!(
            "stale artifact {}: produced with a different configuration or seed; rerun `vmrec {producer}`",
            dir.display()
        );
    }
    for f in &manifest.outputs {
        let file = dir.join(&f.path);
        let actual =
            sha256_file(&file).with_context(|| format!("artifact of `vmrec {producer}` is incomplete; rerun it"))?;
        if actual != f.sha256 {
            bail!(
                "{} changed since `vmrec {producer}` wrote it; rerun `vmrec {producer}`",
                file.display()
            );
        }
    }
    Ok(manifest)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Everything needed to rebuild a [`DatasetSplit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format: String,
    pub version: u32,
    pub stats: SplitStats,
    pub warm_users: Vec<u64>,
    pub val_users: Vec<u64>,
    pub test_users: Vec<u64>,
    pub first_times: BTreeMap<u64, i64>,
    pub sequences: BTreeMap<u64, Vec<u64>>,
}

impl SplitManifest {
    pub fn from_split(split: &DatasetSplit) -> Self {
        let users = split
            .warm_users()
            .iter()
            .chain(split.val_users())
            .chain(split.test_users());
        SplitManifest {
            format: SPLIT_FORMAT.into(),
            version: SPLIT_VERSION,
            stats: split.stats().clone(),
            warm_users: split.warm_users().to_vec(),
            val_users: split.val_users().to_vec(),
            test_users: split.test_users().to_vec(),
            first_times: users
                .clone()
                .filter_map(|&u| split.first_time(u).map(|t| (u, t)))
                .collect(),
            sequences: users
                .map(|&u| (u, split.sequence(u).expect("split user").to_vec()))
                .collect(),
        }
    }

    pub fn into_split(self) -> Result<DatasetSplit> {
        Ok(DatasetSplit::from_parts(
            self.warm_users,
            self.val_users,
            self.test_users,
            self.sequences,
            self.first_times,
        )?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: SplitManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing split manifest {}", path.display()))?;
        if m.format != SPLIT_FORMAT {
            bail!("{} is not a split manifest (format {:?})", path.display(), m.format);
        }
        if m.version != SPLIT_VERSION {
            bail!(
                "{} has split format version {}, expected {SPLIT_VERSION}; rerun `vmrec prepare`",
                path.display(),
                m.version
            );
        }
        Ok(m)
    }
}
