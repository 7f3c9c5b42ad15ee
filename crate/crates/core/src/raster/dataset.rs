//! On-disk synthetic datasets.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.csv                      split,raster,mask,bodies_json
//! {split}/scene_NNNN.ppm            raster
//! {split}/scene_NNNN_mask.pgm       3-class mask
//! crops/{split}.csv                 crop,label   (0 natural, 1 dam)
//! crops/{split}/scene_NNNN_bK.ppm   x2-expanded body crop
//! ```
//!
//! All paths inside the CSV files are relative to the dataset root.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::synth::{generate_scene_with_bodies, BodyRecord, SceneSpec};
use super::{read_mask_with_arity, read_raster, write_mask, write_raster, LabelMask, Raster, DAM};
use crate::error::{Error, Result};
use crate::extract::expand_bbox;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DatasetCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub raster: PathBuf,
    pub mask: PathBuf,
    pub bodies: Vec<BodyRecord>,
}

/// One classification crop; `label` is 0 for natural water, 1 for a dam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClsEntry {
    pub crop: PathBuf,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    split: String,
    raster: String,
    mask: String,
    bodies_json: String,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn rel(path: &Path) -> String {
    // manifests always use forward slashes
    path.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

impl DatasetManifest {
    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn len(&self, split: Split) -> usize {
        self.entries(split).count()
    }

    pub fn save(&self) -> Result<()> {
        let path = self.root.join("manifest.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for e in &self.entries {
            w.serialize(ManifestRow {
                split: e.split.to_string(),
                raster: rel(&e.raster),
                mask: rel(&e.mask),
                bodies_json: serde_json::to_string(&e.bodies)?,
            })?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join("manifest.csv");
        if !path.exists() {
            return Err(Error::Data(format!("no manifest at {}", path.display())));
        }
        let mut reader = csv::Reader::from_path(&path)?;
        let mut entries = Vec::new();
        for row in reader.deserialize() {
            let row: ManifestRow = row?;
            let entry = ManifestEntry {
                split: row.split.parse()?,
                raster: PathBuf::from(row.raster),
                mask: PathBuf::from(row.mask),
                bodies: serde_json::from_str(&row.bodies_json)?,
            };
            for p in [&entry.raster, &entry.mask] {
                if !root.join(p).is_file() {
                    return Err(Error::Data(format!("manifest references missing {}", p.display())));
                }
            }
            entries.push(entry);
        }
        Ok(DatasetManifest { root, entries })
    }

    pub fn cls_entries(&self, split: Split) -> Result<Vec<ClsEntry>> {
        let path = self.root.join("crops").join(format!("{split}.csv"));
        let mut reader = csv::Reader::from_path(&path)?;
        reader
            .deserialize()
            .map(|row| row.map_err(Error::from))
            .collect()
    }
}

/// Generates scenes for every split, writes rasters, masks, classification
/// crops and the manifest. Deterministic in `(spec, counts, seed)`.
pub fn build_dataset(
    spec: &SceneSpec,
    counts: DatasetCounts,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    if counts.train == 0 || counts.val == 0 || counts.test == 0 {
        return Err(Error::Config(format!("every split needs at least one scene: {counts:?}")));
    }
    spec.validate()?;
    let root = out_dir.as_ref().to_path_buf();
    let mut entries = Vec::new();
    for split in Split::ALL {
        let scene_dir = PathBuf::from(split.as_str());
        let crop_dir = PathBuf::from("crops").join(split.as_str());
        create_dir(&root.join(&scene_dir))?;
        create_dir(&root.join(&crop_dir))?;
        let crops_csv = root.join("crops").join(format!("{split}.csv"));
        let mut crops = csv::Writer::from_path(&crops_csv)?;
        for idx in 0..counts.get(split) {
            let scene_seed = rng::derive_seed(seed, &format!("{}/{split}/{idx}", rng::DATA));
            let (raster, mask, bodies) = generate_scene_with_bodies(spec, scene_seed)?;
            let stem = format!("scene_{idx:04}");
            let raster_rel = scene_dir.join(format!("{stem}.ppm"));
            let mask_rel = scene_dir.join(format!("{stem}_mask.pgm"));
            write_raster(&raster, root.join(&raster_rel))?;
            write_mask(&mask, root.join(&mask_rel))?;
            for (k, body) in bodies.iter().enumerate() {
                let bbox = expand_bbox(&body.bbox, 2.0, raster.height(), raster.width());
                let crop = raster.crop(&bbox)?;
                let crop_rel = crop_dir.join(format!("{stem}_b{k}.ppm"));
                write_raster(&crop, root.join(&crop_rel))?;
                crops.serialize(ClsEntry {
                    crop: PathBuf::from(rel(&crop_rel)),
                    label: u8::from(body.class == DAM),
                })?;
            }
            entries.push(ManifestEntry {
                split,
                raster: raster_rel,
                mask: mask_rel,
                bodies,
            });
        }
        crops.flush().map_err(|e| Error::io(&crops_csv, e))?;
    }
    let manifest = DatasetManifest { root, entries };
    manifest.save()?;
    Ok(manifest)
}

/// Loads `(raster, 3-class mask)` pairs of one split.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<(Raster, LabelMask)>> {
    manifest
        .entries(split)
        .map(|e| {
            Ok((
                read_raster(manifest.root.join(&e.raster))?,
                read_mask_with_arity(manifest.root.join(&e.mask), 3)?,
            ))
        })
        .collect()
}

/// Loads `(crop, label)` pairs of one split.
pub fn load_cls_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<(Raster, u8)>> {
    manifest
        .cls_entries(split)?
        .into_iter()
        .map(|e| Ok((read_raster(manifest.root.join(&e.crop))?, e.label)))
        .collect()
}
