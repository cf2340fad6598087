//! JSON parameter checkpoints.
//!
//! ```json
//! {"format": "ecobasket-params", "version": 1,
//!  "params": [{"name": "w", "rows": 2, "cols": 3, "data": [...]}]}
//! ```
//! `data` is row-major.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::nn::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT: &str = "ecobasket-params";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct File {
    format: String,
    version: u32,
    params: Vec<Entry>,
}

pub fn save<W: Write>(store: &ParamStore, writer: W) -> Result<()> {
    let (names, values) = store.parts();
    let file = File {
        format: FORMAT.into(),
        version: VERSION,
        params: names
            .iter()
            .zip(values)
            .map(|(n, t)| Entry {
                name: n.clone(),
                rows: t.rows(),
                cols: t.cols(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    serde_json::to_writer(writer, &file)?;
    Ok(())
}

pub fn load<R: Read>(reader: R) -> Result<ParamStore> {
    let file: File = serde_json::from_reader(reader)?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::Contract(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    let mut store = ParamStore::new();
    for e in file.params {
        store.add(e.name, Tensor::new(e.rows, e.cols, e.data)?);
    }
    Ok(store)
}

/// Overwrites the values of `store` from a checkpoint with the same layout.
pub fn load_into<R: Read>(store: &mut ParamStore, reader: R) -> Result<()> {
    let loaded = load(reader)?;
    if loaded.len() != store.len() {
        return Err(Error::Dimension {
            expected: store.len(),
            got: loaded.len(),
        });
    }
    for i in 0..store.len() {
        if loaded.name(i) != store.name(i) || loaded.get(i).shape() != store.get(i).shape() {
            return Err(Error::Contract(format!("checkpoint entry {} does not match {}", loaded.name(i), store.name(i))));
        }
        *store.get_mut(i) = loaded.get(i).clone();
    }
    Ok(())
}
