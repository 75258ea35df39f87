//! `FNCDS1` dataset files (little-endian):
//!
//! ```text
//! magic "FNCDS1"
//! input_dim u32 | exits u32 | train_rows u64 | val_rows u64
//! rows (train first): input f32 x input_dim | scores f32 x exits | attribute f32
//! crc32 u32 over everything after the magic
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{to_usize, Reader, Writer};
use crate::error::{Error, Result};
use crate::predictor::Labeled;

pub const DATASET_MAGIC: &[u8] = b"FNCDS1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub scores: Vec<f64>,
    pub attribute: f64,
}

impl Labeled for Sample {
    fn input(&self) -> &[f64] {
        &self.input
    }

    fn target(&self) -> &[f64] {
        &self.scores
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub input_dim: usize,
    pub exits: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn save_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let mut w = Writer::new(DATASET_MAGIC);
    w.u32(ds.input_dim as u32);
    w.u32(ds.exits as u32);
    w.u64(ds.train.len() as u64);
    w.u64(ds.val.len() as u64);
    for (i, s) in ds.train.iter().chain(&ds.val).enumerate() {
        if s.input.len() != ds.input_dim || s.scores.len() != ds.exits {
            return Err(Error::shape(format!(
                "row {i} does not match the dataset header"
            )));
        }
        w.f64s_as_f32(&s.input);
        w.f64s_as_f32(&s.scores);
        w.f32(s.attribute as f32);
    }
    Ok(w.finish(DATASET_MAGIC.len()))
}

pub fn load_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::open(bytes, DATASET_MAGIC)?;
    let at = r.offset();
    let input_dim = r.u32()? as usize;
    let exits = r.u32()? as usize;
    if input_dim == 0 || exits == 0 {
        return Err(Error::format(at, "zero input_dim or exit count"));
    }
    let at = r.offset();
    let n_train = to_usize(r.u64()?, at, "train rows")?;
    let n_val = to_usize(r.u64()?, at + 8, "val rows")?;
    let row_len = input_dim + exits + 1;
    let total = n_train
        .checked_add(n_val)
        .ok_or_else(|| Error::format(at, "row counts overflow"))?;
    r.ensure(total, 4 * row_len)?;
    let mut rows = Vec::with_capacity(total);
    for _ in 0..total {
        let input = r.f32s_as_f64(input_dim)?;
        let scores = r.f32s_as_f64(exits)?;
        let attribute = f64::from(r.f32()?);
        rows.push(Sample {
            input,
            scores,
            attribute,
        });
    }
    r.finish()?;
    let val = rows.split_off(n_train);
    Ok(Dataset {
        input_dim,
        exits,
        train: rows,
        val,
    })
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, save_dataset(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load_dataset(&fs::read(path)?)
}
