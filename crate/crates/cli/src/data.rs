//! Dataset selection flags and loading.

use std::fmt;
use std::fs::File;
use std::path::PathBuf;
use std::str::FromStr;

use andiff_core::selection::DEFAULT_POOL;
use andiff_core::{load_csv, load_idx, make_moons, DatasetStore};
use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum DatasetSpec {
    Moons,
    Csv(PathBuf),
    Idx { images: PathBuf, labels: Option<PathBuf> },
}

impl FromStr for DatasetSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "moons" {
            return Ok(DatasetSpec::Moons);
        }
        if let Some(path) = s.strip_prefix("csv:") {
            if path.is_empty() {
                return Err("csv: needs a path".into());
            }
            return Ok(DatasetSpec::Csv(path.into()));
        }
        if let Some(rest) = s.strip_prefix("idx:") {
            let (images, labels) = match rest.split_once(",labels:") {
                Some((i, l)) => (i, Some(PathBuf::from(l))),
                None => (rest, None),
            };
            if images.is_empty() || labels.as_ref().is_some_and(|l| l.as_os_str().is_empty()) {
                return Err("idx: needs an image path and an optional labels:PATH".into());
            }
            return Ok(DatasetSpec::Idx { images: images.into(), labels });
        }
        Err(format!("unknown dataset {s:?}; expected moons, csv:PATH or idx:PATH[,labels:PATH]"))
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Moons => write!(f, "moons"),
            DatasetSpec::Csv(p) => write!(f, "csv:{}", p.display()),
            DatasetSpec::Idx { images, labels: None } => write!(f, "idx:{}", images.display()),
            DatasetSpec::Idx { images, labels: Some(l) } => {
                write!(f, "idx:{},labels:{}", images.display(), l.display())
            }
        }
    }
}

impl From<DatasetSpec> for String {
    fn from(d: DatasetSpec) -> String {
        d.to_string()
    }
}

impl TryFrom<String> for DatasetSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct DataArgs {
    /// moons, csv:PATH or idx:PATH[,labels:PATH]
    #[arg(long, default_value = "moons")]
    pub dataset: DatasetSpec,
    /// Number of generated moons points
    #[arg(long, default_value_t = 2000)]
    pub moons_n: usize,
    /// Gaussian jitter of the generated moons points
    #[arg(long, default_value_t = 0.05)]
    pub moons_noise: f64,
    /// Seed of the generated moons points
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Keep only the first N samples of the dataset
    #[arg(long)]
    pub limit: Option<usize>,
    /// Restrict to one class label (conditional generation)
    #[arg(long)]
    pub class_id: Option<u32>,
    /// Proxy pooling block per spatial axis for image data
    #[arg(long, default_value_t = DEFAULT_POOL)]
    pub pool: usize,
}

pub struct Loaded {
    pub store: DatasetStore,
    pub fingerprint: String,
}

pub fn fingerprint(store: &DatasetStore) -> String {
    let mut h = Sha256::new();
    h.update((store.dim() as u64).to_le_bytes());
    h.update(store.content_bytes());
    if let Some(labels) = store.labels() {
        for l in labels {
            h.update(l.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load(args: &DataArgs) -> Result<Loaded> {
    let base = match &args.dataset {
        DatasetSpec::Moons => make_moons(args.moons_n, args.moons_noise, args.data_seed)?,
        DatasetSpec::Csv(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            load_csv(file).with_context(|| format!("reading {}", path.display()))?
        }
        DatasetSpec::Idx { images, labels } => load_idx(images, labels.as_deref())
            .with_context(|| format!("reading {}", images.display()))?,
    };
    let mut store = base.with_proxy(args.pool)?;
    if let Some(limit) = args.limit {
        if limit < store.len() {
            let rows: Vec<usize> = (0..limit).collect();
            store = store.select_rows(&rows)?;
        } else {
            eprintln!("warning: --limit {limit} is not below N = {}; using all samples", store.len());
        }
    }
    if let Some(c) = args.class_id {
        store = store.restrict_to_class(c)?;
    }
    let fingerprint = fingerprint(&store);
    Ok(Loaded { store, fingerprint })
}
