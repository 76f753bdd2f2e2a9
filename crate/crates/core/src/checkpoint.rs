//! Self-describing binary checkpoints.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "MVHCKPT1"
//! 8       8     header length H, u64 little-endian
//! 16      H     UTF-8 JSON header (format tag, net config, resolved training
//!               config, epoch, optimizer scalars, tensor table)
//! 16+H    ...   tensors in table order, row-major f64 little-endian
//! ```
//!
//! Tensor names are `norm_w.<v>`, `norm_b.<v>`, `fusion_w`, `fusion_b`,
//! `hash_w`, `hash_b`, followed by `adam.m.<name>` and `adam.v.<name>` when
//! optimizer state is present. Loading reproduces every value bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{ModelParams, NetConfig, ParamSet};
use crate::optim::{AdamWConfig, OptimState};
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 8] = b"MVHCKPT1";
pub const FORMAT: &str = "mvhash-checkpoint/1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<OptimState>,
    pub train_config: Option<TrainConfig>,
    /// Number of completed epochs.
    pub epoch: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    net: NetConfig,
    train: Option<TrainConfig>,
    epoch: u64,
    optimizer: Option<OptimHeader>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct OptimHeader {
    step: u64,
    config: AdamWConfig,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

fn table(set: &ParamSet, prefix: &str) -> Vec<TensorEntry> {
    set.layout()
        .into_iter()
        .map(|(name, rows, cols)| TensorEntry {
            name: format!("{prefix}{name}"),
            rows,
            cols,
        })
        .collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = table(&self.params.weights, "");
        if let Some(opt) = &self.optimizer {
            tensors.extend(table(&opt.m, "adam.m."));
            tensors.extend(table(&opt.v, "adam.v."));
        }
        let header = Header {
            format: FORMAT.to_string(),
            net: self.params.config.clone(),
            train: self.train_config.clone(),
            epoch: self.epoch,
            optimizer: self.optimizer.as_ref().map(|o| OptimHeader {
                step: o.step,
                config: o.config.clone(),
            }),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.weights.num_values() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut sets = vec![&self.params.weights];
        if let Some(opt) = &self.optimizer {
            sets.push(&opt.m);
            sets.push(&opt.v);
        }
        for set in sets {
            for s in set.slices() {
                for x in s {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Format(format!("bad header: {e}")))?;
        if header.format != FORMAT {
            return Err(Error::Format(format!("unsupported format {:?}", header.format)));
        }
        let mut weights = ParamSet::zeros(&header.net);
        let mut expected = table(&weights, "");
        let mut moments = header.optimizer.as_ref().map(|_| (weights.zeros_like(), weights.zeros_like()));
        if moments.is_some() {
            expected.extend(table(&weights, "adam.m."));
            expected.extend(table(&weights, "adam.v."));
        }
        if expected != header.tensors {
            return Err(Error::Format("tensor table does not match the declared config".into()));
        }

        let mut payload = &bytes[16 + hlen..];
        let mut fill = |set: &mut ParamSet| -> Result<()> {
            for s in set.slices_mut() {
                let need = s.len() * 8;
                if payload.len() < need {
                    return Err(Error::Format("truncated tensor payload".into()));
                }
                for (x, chunk) in s.iter_mut().zip(payload[..need].chunks_exact(8)) {
                    *x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
                }
                payload = &payload[need..];
            }
            Ok(())
        };
        fill(&mut weights)?;
        if let Some((m, v)) = moments.as_mut() {
            fill(m)?;
            fill(v)?;
        }
        if !payload.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", payload.len())));
        }
        let params = ModelParams {
            config: header.net,
            weights,
        };
        params.validate()?;
        let optimizer = match (header.optimizer, moments) {
            (Some(h), Some((m, v))) => Some(OptimState {
                step: h.step,
                m,
                v,
                config: h.config,
            }),
            _ => None,
        };
        Ok(Checkpoint {
            params,
            optimizer,
            train_config: header.train,
            epoch: header.epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| Error::load(path, e.to_string()))
    }
}
