//! Resumable training state on disk.
//!
//! A state directory holds 64-bit checkpoints for the current parameters,
//! the best parameters and both Adam moments, plus a small JSON file with
//! the counters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, TrainState};
use crate::encoder::{read_checkpoint, write_checkpoint, Precision, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Counters {
    epoch: usize,
    step: u64,
    best_epoch: usize,
    best_val_loss: f64,
    bad_epochs: usize,
}

pub fn save_state(dir: &Path, state: &TrainState, prov: Provenance) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_checkpoint(&dir.join("current.ckpt"), &state.dual, Precision::F64, prov)?;
    write_checkpoint(&dir.join("best.ckpt"), &state.best, Precision::F64, prov)?;
    write_checkpoint(&dir.join("adam_m.ckpt"), &state.adam.m, Precision::F64, prov)?;
    write_checkpoint(&dir.join("adam_v.ckpt"), &state.adam.v, Precision::F64, prov)?;
    let counters = Counters {
        epoch: state.epoch,
        step: state.adam.step,
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
        bad_epochs: state.bad_epochs,
    };
    fs::write(dir.join("state.json"), serde_json::to_string_pretty(&counters)?)?;
    Ok(())
}

pub fn load_state(dir: &Path) -> Result<(TrainState, Provenance)> {
    let counters: Counters = serde_json::from_str(&fs::read_to_string(dir.join("state.json"))?)?;
    let (dual, prov) = read_checkpoint(&dir.join("current.ckpt"))?;
    let (best, _) = read_checkpoint(&dir.join("best.ckpt"))?;
    let (m, _) = read_checkpoint(&dir.join("adam_m.ckpt"))?;
    let (v, _) = read_checkpoint(&dir.join("adam_v.ckpt"))?;
    if m.config != dual.config || v.config != dual.config || best.config != dual.config {
        return Err(Error::format("training state files disagree on the encoder shape"));
    }
    Ok((
        TrainState {
            dual,
            adam: Adam { m, v, step: counters.step },
            epoch: counters.epoch,
            best,
            best_epoch: counters.best_epoch,
            best_val_loss: counters.best_val_loss,
            bad_epochs: counters.bad_epochs,
        },
        prov,
    ))
}
