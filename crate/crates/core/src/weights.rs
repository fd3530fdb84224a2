//! Named layer parameters stored as NPZ members.

use std::path::Path;

use marsdust_nn::{load_named, snapshot, Layer, Tensor};

use crate::error::{Error, Result};
use crate::npy::NpyArray;
use crate::npz::{NpzArchive, NpzBuilder};

/// One `f32` member per parameter and buffer, named by visit path.
pub fn to_npz(layer: &mut dyn Layer) -> Result<NpzBuilder> {
    let mut b = NpzBuilder::new();
    for (name, t) in snapshot(layer, "") {
        b.array(&name, &NpyArray::f32(t.shape().to_vec(), t.into_data())?);
    }
    Ok(b)
}

pub fn load_from(layer: &mut dyn Layer, archive: &NpzArchive) -> Result<()> {
    let lookup = |name: &str| -> Option<Tensor> {
        archive
            .array(name)
            .ok()
            .map(|a| Tensor::from_vec(&a.shape.clone(), a.to_f32_vec()))
    };
    load_named(layer, "", &lookup).map_err(Error::Model)
}

pub fn save(layer: &mut dyn Layer, path: &Path) -> Result<()> {
    to_npz(layer)?.write(path)
}

pub fn load(layer: &mut dyn Layer, path: &Path) -> Result<()> {
    load_from(layer, &NpzArchive::read(path)?)
}
