//! Binary weights plus a JSON sidecar.
//!
//! The weights file is the 8-byte magic `MPUNET01`, a little-endian `u32`
//! format version, a `u64` parameter count, then the parameters as
//! little-endian `f32`. The sidecar at `<path>.json` carries the network and
//! training configuration and the validation scores of the saved epoch.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, UnetError};
use crate::model::{UNet, UNetConfig};
use crate::train::TrainConfig;

const MAGIC: &[u8; 8] = b"MPUNET01";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub unet: UNetConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub val_accuracy: Option<f64>,
    #[serde(default)]
    pub val_f1: Option<f64>,
    #[serde(default)]
    pub val_iou: Option<f64>,
}

impl CheckpointMeta {
    pub fn untrained(unet: UNetConfig) -> Self {
        Self {
            unet,
            train: None,
            epoch: None,
            val_accuracy: None,
            val_f1: None,
            val_iou: None,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> UnetError + '_ {
    move |source| UnetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &UNet<f32>, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    if &meta.unet != model.config() {
        return Err(UnetError::Checkpoint("metadata config differs from the model".into()));
    }
    let mut bytes = Vec::with_capacity(20 + 4 * model.params.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io(path))?;
    let json = serde_json::to_vec_pretty(meta).map_err(|e| UnetError::Checkpoint(e.to_string()))?;
    let side = sidecar_path(path);
    fs::write(&side, json).map_err(io(&side))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(UNet<f32>, CheckpointMeta)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let meta: CheckpointMeta = serde_json::from_slice(&fs::read(&side).map_err(io(&side))?)
        .map_err(|e| UnetError::Checkpoint(format!("{}: {e}", side.display())))?;
    let bytes = fs::read(path).map_err(io(path))?;
    let corrupt = |m: &str| UnetError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a weights file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if body.len() != count.checked_mul(4).ok_or_else(|| corrupt("bad count"))? {
        return Err(corrupt("truncated weights"));
    }
    let params: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(corrupt("non-finite weights"));
    }
    let model = UNet::from_params(meta.unet.clone(), params)?;
    Ok((model, meta))
}
