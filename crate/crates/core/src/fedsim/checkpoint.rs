//! JSON model snapshots.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::net::Network;

use super::config::Algorithm;

pub const CHECKPOINT_FORMAT: &str = "sparsefed-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Network (shapes, values, BN state), its mask, and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub algorithm: Option<Algorithm>,
    pub round: usize,
    pub network: Network,
    pub mask: Option<Mask>,
}

impl Checkpoint {
    pub fn new(network: Network, mask: Option<Mask>, algorithm: Option<Algorithm>, round: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            algorithm,
            round,
            network,
            mask,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_slice(&fs::read(path)?)
    }

    /// Parses and checks a snapshot: header, finite values, and a mask that
    /// fits the network with every masked-out weight at zero.
    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        if ck.network.params().iter().any(|t| !t.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        if let Some(mask) = &ck.mask {
            ck.network
                .check_mask(mask)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            for lm in mask.layers() {
                let w = &ck.network.linear(lm.layer).expect("checked").weight;
                if w.data().iter().zip(lm.bits()).any(|(v, &keep)| !keep && *v != 0.0) {
                    return Err(Error::Checkpoint(format!(
                        "layer {} has nonzero masked-out weights",
                        lm.layer
                    )));
                }
            }
        }
        Ok(ck)
    }
}
