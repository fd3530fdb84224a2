//! NPZ archives: zip containers of `.npy` members plus arbitrary side files.
//! Member timestamps are pinned so equal contents give equal bytes.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::error::{Error, Result};
use crate::npy::NpyArray;

/// In-memory archive builder; members keep insertion order.
#[derive(Debug, Default)]
pub struct NpzBuilder {
    members: Vec<(String, Vec<u8>)>,
}

impl NpzBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add an array stored as `<name>.npy`.
    pub fn array(&mut self, name: &str, array: &NpyArray) -> &mut Self {
        self.members.push((format!("{name}.npy"), array.to_bytes()));
        self
    }

    /// Add a member under its literal file name.
    pub fn file(&mut self, name: &str, bytes: Vec<u8>) -> &mut Self {
        self.members.push((name.to_string(), bytes));
        self
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let opts = SimpleFileOptions::default()
            .compression_method(CompressionMethod::Deflated)
            .last_modified_time(DateTime::default())
            .unix_permissions(0o644);
        let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
        for (name, bytes) in &self.members {
            let wrap = |e: zip::result::ZipError| Error::Archive {
                member: name.clone(),
                msg: e.to_string(),
            };
            zip.start_file(name.as_str(), opts).map_err(wrap)?;
            zip.write_all(bytes).map_err(|e| Error::Archive {
                member: name.clone(),
                msg: e.to_string(),
            })?;
        }
        let cursor = zip.finish().map_err(|e| Error::Archive {
            member: String::new(),
            msg: e.to_string(),
        })?;
        Ok(cursor.into_inner())
    }

    /// Write atomically: the archive appears at `path` complete or not at all.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

/// A fully read archive, members keyed by file name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NpzArchive {
    members: BTreeMap<String, Vec<u8>>,
}

impl NpzArchive {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut zip = ZipArchive::new(Cursor::new(bytes)).map_err(|e| Error::Archive {
            member: String::new(),
            msg: format!("not a zip archive: {e}"),
        })?;
        let mut members = BTreeMap::new();
        for i in 0..zip.len() {
            let mut file = zip.by_index(i).map_err(|e| Error::Archive {
                member: format!("#{i}"),
                msg: e.to_string(),
            })?;
            let name = file
                .name()
                .map_err(|e| Error::Archive {
                    member: format!("#{i}"),
                    msg: e.to_string(),
                })?
                .into_owned();
            let mut buf = Vec::new();
            file.read_to_end(&mut buf).map_err(|e| Error::Archive {
                member: name.clone(),
                msg: e.to_string(),
            })?;
            members.insert(name, buf);
        }
        Ok(Self { members })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.members.keys().map(String::as_str)
    }

    pub fn file(&self, name: &str) -> Result<&[u8]> {
        self.members
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Archive {
                member: name.to_string(),
                msg: "member missing".into(),
            })
    }

    /// Decode the array stored as `<name>.npy`.
    pub fn array(&self, name: &str) -> Result<NpyArray> {
        let member = format!("{name}.npy");
        NpyArray::from_bytes(self.file(&member)?).map_err(|e| Error::Archive {
            member,
            msg: e.to_string(),
        })
    }

    pub fn json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T> {
        serde_json::from_slice(self.file(name)?).map_err(|e| Error::Archive {
            member: name.to_string(),
            msg: e.to_string(),
        })
    }
}

/// Write through a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path));
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::io(path, e))
}
