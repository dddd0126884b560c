//! The run configuration: one TOML file, one section per pipeline stage.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vmrec::basemodels::{BaseKind, BprConfig};
use vmrec::datastore::{FormatOptions, SplitRatios};
use vmrec::mapper::InferenceMode;
use vmrec::training::{default_l1_grid, DistributionKind, TrainConfig};

/// Seed used when neither the config, the flag nor `VMREC_SEED` gives one.
pub const DEFAULT_SEED: u64 = 0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub split: SplitSection,
    pub base: BaseSection,
    pub mapper: TrainConfig,
    pub eval: EvalSection,
    pub ablate: AblateSection,
    pub diagnose: DiagnoseSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Global seed. Falls back to `VMREC_SEED`, then 0.
    pub seed: Option<u64>,
    /// Output directory; relative paths are taken from the config file's directory.
    pub out: PathBuf,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: None,
            out: PathBuf::from("runs/default"),
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Tab-separated interaction file.
    pub path: PathBuf,
    pub header: bool,
    pub timestamp_column: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let f = FormatOptions::default();
        DataSection {
            path: PathBuf::from("data/ml-100k.tsv"),
            header: f.header,
            timestamp_column: f.timestamp_column,
        }
    }
}

impl DataSection {
    pub fn format(&self) -> FormatOptions {
        FormatOptions {
            header: self.header,
            timestamp_column: self.timestamp_column,
        }
    }
}

/// Relative sizes of the warm / validation / test user groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub warm: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitSection {
    fn default() -> Self {
        let r = SplitRatios::default();
        SplitSection {
            warm: r.warm,
            val: r.val,
            test: r.test,
        }
    }
}

impl SplitSection {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios {
            warm: self.warm,
            val: self.val,
            test: self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseSection {
    pub kind: BaseKind,
    pub train: BprConfig,
}

impl Default for BaseSection {
    fn default() -> Self {
        BaseSection {
            kind: BaseKind::Bpr,
            train: BprConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Vmrec,
    RmInit,
    RmCont,
    Random,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Vmrec => "vmrec",
            Method::RmInit => "rm_init",
            Method::RmCont => "rm_cont",
            Method::Random => "random",
        })
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "vmrec" => Method::Vmrec,
            "rm_init" => Method::RmInit,
            "rm_cont" => Method::RmCont,
            "random" => Method::Random,
            other => bail!("unknown method {other:?} (expected vmrec, rm_init, rm_cont or random)"),
        })
    }
}

/// Which test users to score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    #[default]
    All,
    /// Users whose first k items are some warm user's first k items.
    Easy,
    Hard,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::All => "all",
            Subset::Easy => "easy",
            Subset::Hard => "hard",
        })
    }
}

impl FromStr for Subset {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Subset::All,
            "easy" => Subset::Easy,
            "hard" => Subset::Hard,
            other => bail!("unknown subset {other:?} (expected all, easy or hard)"),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Shot counts.
    pub ks: Vec<usize>,
    /// Sampled negatives per held-out positive.
    pub negatives: usize,
    /// Metric cutoff; only 5 is supported.
    pub cutoff: usize,
    pub modes: Vec<InferenceMode>,
    pub method: Method,
    pub subset: Subset,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            ks: vec![1, 2, 3],
            negatives: vmrec::evaluation::NEGATIVES,
            cutoff: vmrec::evaluation::CUTOFF,
            modes: vec![InferenceMode::Deterministic],
            method: Method::Vmrec,
            subset: Subset::All,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    /// Distribution family compared against the trained spike-and-slab mapper.
    pub kind: DistributionKind,
    /// L1 penalties tried for `gaussian_l1`.
    pub l1_grid: Vec<f64>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            kind: DistributionKind::Gaussian,
            l1_grid: default_l1_grid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    /// Largest shot count for the cluster-distance statistic.
    pub max_shots: usize,
    /// KL weights for the sparsity sweep; empty skips it.
    pub betas: Vec<f64>,
    /// Warm-subset proportions for the subsampling sweep; empty skips it.
    pub proportions: Vec<f64>,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection {
            max_shots: 3,
            betas: vec![1e-12, 1e-10, 1e-6, 1e-2],
            proportions: vec![0.25, 0.5, 1.0],
        }
    }
}

impl RunConfig {
    /// Reads `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new(""));
        if cfg.data.path.is_relative() {
            cfg.data.path = dir.join(&cfg.data.path);
        }
        if cfg.run.out.is_relative() {
            cfg.run.out = dir.join(&cfg.run.out);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.split.warm == 0 || self.split.val == 0 || self.split.test == 0 {
            bail!("split ratios must all be positive");
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            bail!("eval.ks must be a nonempty list of positive shot counts");
        }
        if self.eval.negatives == 0 {
            bail!("eval.negatives must be positive");
        }
        if self.eval.cutoff != vmrec::evaluation::CUTOFF {
            bail!("eval.cutoff must be {}", vmrec::evaluation::CUTOFF);
        }
        if self.eval.modes.is_empty() {
            bail!("eval.modes must not be empty");
        }
        if self.base.train.dim == 0 {
            bail!("base.train.dim must be positive");
        }
        self.mapper.validate().context("invalid [mapper] section")?;
        if self.diagnose.proportions.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            bail!("diagnose.proportions must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.run.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Digest of the data and split settings.
    pub fn split_digest(&self) -> String {
        digest(&[&self.data.path.to_string_lossy(), &json(&self.data), &json(&self.split)])
    }

    /// Digest of everything that determines the base embeddings.
    pub fn base_digest(&self) -> String {
        digest(&[&self.split_digest(), &self.seed().to_string(), &json(&self.base)])
    }

    /// Digest of everything that determines the trained mapper.
    pub fn mapper_digest(&self) -> String {
        digest(&[&self.base_digest(), &json(&self.mapper)])
    }

    pub fn eval_digest(&self) -> String {
        digest(&[&self.mapper_digest(), &json(&self.eval)])
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serializes")
}

/// Hex SHA-256 over length-prefixed parts.
pub fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.eval.ks, vec![1, 2, 3]);
        assert_eq!(cfg.base.train.dim, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[mapper]\nbetaa = 1.0\n").is_err());
        assert!(toml::from_str::<RunConfig>("[nope]\n").is_err());
        assert!(toml::from_str::<RunConfig>("[base.train]\ndims = 3\n").is_err());
    }

    #[test]
    fn sections_parse() {
        let cfg: RunConfig = toml::from_str(
            "[run]\nseed = 7\n[base]\nkind = \"lightgcn\"\n[base.train]\ndim = 16\n\
             [mapper]\nlr_grid = [0.01]\nbeta = 0.5\n[eval]\nks = [1]\nmodes = [\"stochastic\"]\n\
             method = \"rm_init\"\nsubset = \"easy\"\n[ablate]\nkind = \"gaussian_l1\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed(), 7);
        assert_eq!(cfg.base.kind, BaseKind::LightGcn);
        assert_eq!(cfg.base.train.dim, 16);
        assert_eq!(cfg.mapper.beta, 0.5);
        assert_eq!(cfg.eval.method, Method::RmInit);
        assert_eq!(cfg.eval.subset, Subset::Easy);
        assert_eq!(cfg.ablate.kind, DistributionKind::GaussianL1);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn digests_track_their_stage() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.mapper.beta = 1e-3;
        assert_eq!(a.base_digest(), b.base_digest());
        assert_ne!(a.mapper_digest(), b.mapper_digest());
        let mut c = a.clone();
        c.run.out = PathBuf::from("elsewhere");
        c.run.threads = 3;
        assert_eq!(a.eval_digest(), c.eval_digest());
        assert_ne!(digest(&["ab", "c"]), digest(&["a", "bc"]));
    }

    #[test]
    fn bad_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.eval.cutoff = 10;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.eval.ks = vec![0];
        assert!(cfg.validate().is_err());
    }
}
