//! Folder-to-archive filtering: classify every patch in a folder and store
//! the two classes as stacked arrays in one NPZ archive.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::classifiers::TrainedClassifier;
use crate::dataset::{ImagePatch, Label, PatchLoader};
use crate::error::{Error, Result};
use crate::npy::NpyArray;
use crate::npz::{NpzArchive, NpzBuilder};

/// Side length of patches stored in the archive.
pub const PATCH_SIDE: usize = 100;

pub const DUSTY_MEMBER: &str = "dusty";
pub const NOT_DUSTY_MEMBER: &str = "not_dusty";
pub const DUSTY_NAMES: &str = "dusty_names.json";
pub const NOT_DUSTY_NAMES: &str = "not_dusty_names.json";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub filename: String,
    pub label: Label,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub filename: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub n_dusty: usize,
    pub n_not_dusty: usize,
    pub n_skipped: usize,
    pub source_folder: String,
    pub model_id: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    /// In processing (sorted filename) order.
    pub records: Vec<ImageRecord>,
    pub skipped: Vec<SkipRecord>,
}

#[derive(Clone, Debug)]
pub struct FilterOptions {
    pub batch: usize,
    /// Fixed timestamp for reproducible archives; the current time otherwise.
    pub created_at: Option<u64>,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            batch: 64,
            created_at: None,
        }
    }
}

/// Archive contents: `n x 100 x 100` u8 stacks with parallel filename lists.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifiedArchive {
    pub dusty: NpyArray,
    pub not_dusty: NpyArray,
    pub dusty_names: Vec<String>,
    pub not_dusty_names: Vec<String>,
    pub manifest: ArchiveManifest,
}

impl ClassifiedArchive {
    /// Patch `i` of a class as an `ImagePatch` named after its source file.
    pub fn patch(&self, label: Label, i: usize) -> Option<ImagePatch> {
        let (arr, names) = match label {
            Label::Dusty => (&self.dusty, &self.dusty_names),
            Label::NotDusty => (&self.not_dusty, &self.not_dusty_names),
        };
        let px = arr.as_u8()?;
        let n = PATCH_SIDE * PATCH_SIDE;
        let slice = px.get(i * n..(i + 1) * n)?;
        ImagePatch::new(
            names.get(i)?.clone(),
            PATCH_SIDE,
            PATCH_SIDE,
            slice.to_vec(),
        )
        .ok()
        .map(|p| p.with_label(label))
    }

    pub fn to_npz(&self) -> Result<NpzBuilder> {
        let mut b = NpzBuilder::new();
        b.array(DUSTY_MEMBER, &self.dusty)
            .array(NOT_DUSTY_MEMBER, &self.not_dusty)
            .file(DUSTY_NAMES, serde_json::to_vec(&self.dusty_names)?)
            .file(NOT_DUSTY_NAMES, serde_json::to_vec(&self.not_dusty_names)?)
            .file(MANIFEST, serde_json::to_vec_pretty(&self.manifest)?);
        Ok(b)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_npz()?.write(path)
    }
}

fn stack(patches: &[ImagePatch]) -> Result<NpyArray> {
    let data: Vec<u8> = patches
        .iter()
        .flat_map(|p| p.pixels.iter().copied())
        .collect();
    NpyArray::u8(vec![patches.len(), PATCH_SIDE, PATCH_SIDE], data)
}

/// Regular, non-hidden files of `folder`, sorted by file name.
pub fn list_inputs(folder: &Path) -> Result<Vec<PathBuf>> {
    if !folder.is_dir() {
        return Err(Error::io(
            folder,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input folder does not exist"),
        ));
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(folder).map_err(|e| Error::io(folder, e))? {
        let entry = entry.map_err(|e| Error::io(folder, e))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Classify every readable 100x100 patch in `folder` and build the archive.
/// Unreadable or wrongly sized files are skipped, logged and listed in the
/// manifest.
pub fn classify_folder(
    folder: &Path,
    model: &mut TrainedClassifier,
    model_id: &str,
    options: &FilterOptions,
) -> Result<ClassifiedArchive> {
    if options.batch == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let loader = PatchLoader::new();
    let mut patches = Vec::new();
    let mut names = Vec::new();
    let mut skipped = Vec::new();
    for path in list_inputs(folder)? {
        let filename = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match loader.load(&path) {
            Ok(p) if p.dims() == (PATCH_SIDE, PATCH_SIDE) => {
                patches.push(p);
                names.push(filename);
            }
            Ok(p) => {
                let reason = format!(
                    "{}x{} patch, expected {PATCH_SIDE}x{PATCH_SIDE}",
                    p.height, p.width
                );
                log::warn!("skipping {filename}: {reason}");
                skipped.push(SkipRecord { filename, reason });
            }
            Err(e) => {
                log::warn!("skipping {filename}: {e}");
                skipped.push(SkipRecord {
                    filename,
                    reason: e.to_string(),
                });
            }
        }
    }

    let mut probabilities = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(options.batch) {
        let refs: Vec<&ImagePatch> = chunk.iter().collect();
        probabilities.extend(model.predict_proba(&refs)?);
    }

    let mut dusty = Vec::new();
    let mut not_dusty = Vec::new();
    let mut dusty_names = Vec::new();
    let mut not_dusty_names = Vec::new();
    let mut records = Vec::with_capacity(patches.len());
    for ((patch, filename), probability) in patches.into_iter().zip(names).zip(probabilities) {
        let label = if probability >= 0.5 {
            Label::Dusty
        } else {
            Label::NotDusty
        };
        match label {
            Label::Dusty => {
                dusty.push(patch);
                dusty_names.push(filename.clone());
            }
            Label::NotDusty => {
                not_dusty.push(patch);
                not_dusty_names.push(filename.clone());
            }
        }
        records.push(ImageRecord {
            filename,
            label,
            probability: probability.clamp(0.0, 1.0),
        });
    }
    let manifest = ArchiveManifest {
        n_dusty: dusty.len(),
        n_not_dusty: not_dusty.len(),
        n_skipped: skipped.len(),
        source_folder: folder.display().to_string(),
        model_id: model_id.to_string(),
        created_at: options.created_at.unwrap_or_else(now),
        records,
        skipped,
    };
    Ok(ClassifiedArchive {
        dusty: stack(&dusty)?,
        not_dusty: stack(&not_dusty)?,
        dusty_names,
        not_dusty_names,
        manifest,
    })
}

/// Classify `folder` and write the archive to `out_path` atomically.
pub fn run_filter(
    folder: &Path,
    model: &mut TrainedClassifier,
    model_id: &str,
    out_path: &Path,
    options: &FilterOptions,
) -> Result<ArchiveManifest> {
    let archive = classify_folder(folder, model, model_id, options)?;
    archive.write(out_path)?;
    log::info!(
        "{}: {} dusty, {} not dusty, {} skipped",
        out_path.display(),
        archive.manifest.n_dusty,
        archive.manifest.n_not_dusty,
        archive.manifest.n_skipped
    );
    Ok(archive.manifest)
}

/// Same as [`run_filter`] with the classifier loaded from a model directory.
pub fn run_filter_dir(
    folder: &Path,
    model_dir: &Path,
    out_path: &Path,
    options: &FilterOptions,
) -> Result<ArchiveManifest> {
    let (mut model, meta) = TrainedClassifier::load(model_dir)?;
    let id = format!(
        "{}:{}",
        meta.architecture.as_str(),
        model_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    );
    run_filter(folder, &mut model, &id, out_path, options)
}

fn check_stack(member: &str, arr: &NpyArray, names: usize) -> Result<()> {
    let err = |msg: String| Error::Archive {
        member: format!("{member}.npy"),
        msg,
    };
    if arr.as_u8().is_none() {
        return Err(err("expected uint8 data".into()));
    }
    if arr.shape.len() != 3 || arr.shape[1..] != [PATCH_SIDE, PATCH_SIDE] {
        return Err(err(format!(
            "expected n x {PATCH_SIDE} x {PATCH_SIDE}, got {:?}",
            arr.shape
        )));
    }
    if arr.shape[0] != names {
        return Err(err(format!("{} patches but {names} names", arr.shape[0])));
    }
    Ok(())
}

pub fn parse_archive(archive: &NpzArchive) -> Result<ClassifiedArchive> {
    let dusty = archive.array(DUSTY_MEMBER)?;
    let not_dusty = archive.array(NOT_DUSTY_MEMBER)?;
    let dusty_names: Vec<String> = archive.json(DUSTY_NAMES)?;
    let not_dusty_names: Vec<String> = archive.json(NOT_DUSTY_NAMES)?;
    let manifest: ArchiveManifest = archive.json(MANIFEST)?;
    check_stack(DUSTY_MEMBER, &dusty, dusty_names.len())?;
    check_stack(NOT_DUSTY_MEMBER, &not_dusty, not_dusty_names.len())?;
    if manifest.n_dusty != dusty_names.len() || manifest.n_not_dusty != not_dusty_names.len() {
        return Err(Error::Archive {
            member: MANIFEST.into(),
            msg: format!(
                "counts {}/{} disagree with arrays {}/{}",
                manifest.n_dusty,
                manifest.n_not_dusty,
                dusty_names.len(),
                not_dusty_names.len()
            ),
        });
    }
    Ok(ClassifiedArchive {
        dusty,
        not_dusty,
        dusty_names,
        not_dusty_names,
        manifest,
    })
}

pub fn read_archive(path: &Path) -> Result<ClassifiedArchive> {
    parse_archive(&NpzArchive::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::ContrastStub;

    #[test]
    fn empty_folder_gives_empty_arrays() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = TrainedClassifier::Stub(ContrastStub::default());
        let a = classify_folder(dir.path(), &mut model, "stub", &FilterOptions::default()).unwrap();
        assert_eq!(a.dusty.shape, vec![0, PATCH_SIDE, PATCH_SIDE]);
        assert_eq!(a.not_dusty.shape, vec![0, PATCH_SIDE, PATCH_SIDE]);
        assert_eq!(a.manifest.n_dusty + a.manifest.n_not_dusty, 0);
    }
}
